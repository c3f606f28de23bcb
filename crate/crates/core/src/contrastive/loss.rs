use std::collections::HashMap;

use crate::error::{Error, Result};

/// Loss value and its gradient with respect to every input embedding.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Supervised contrastive loss, positives averaged outside the log:
///
/// `L = sum_i -1/|P(i)| sum_{p in P(i)} log(exp(z_i.z_p/t) / sum_{a != i} exp(z_i.z_a/t))`
pub fn supcon_loss(z: &[Vec<f64>], class_ids: &[usize], tau: f64) -> Result<LossOutput> {
    if z.len() != class_ids.len() {
        return Err(Error::Shape(format!("{} embeddings, {} labels", z.len(), class_ids.len())));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = z.len();
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &c in class_ids {
        *counts.entry(c).or_default() += 1;
    }
    if let Some((c, _)) = counts.iter().find(|(_, &k)| k < 2) {
        return Err(Error::DegenerateBatch(format!("class {c} has a single member")));
    }
    let dim = z.first().map_or(0, Vec::len);
    if z.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("embeddings differ in length".into()));
    }

    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }

    // coeff[i][a] = dL/ds_ia
    let mut coeff = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let (mut top, mut top_at) = (f64::NEG_INFINITY, 0);
        for (a, &v) in row.iter().enumerate() {
            if a != i && v > top {
                top = v;
                top_at = a;
            }
        }
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != i && a != top_at)
            .map(|(_, &v)| (v - top).exp())
            .sum();
        let lse = top + rest.ln_1p();
        let positives = counts[&class_ids[i]] - 1;
        let mut pos_sum = 0.0;
        for a in (0..n).filter(|&a| a != i) {
            let soft = (row[a] - lse).exp();
            let is_pos = class_ids[a] == class_ids[i];
            if is_pos {
                pos_sum += row[a];
            }
            coeff[i * n + a] = soft - if is_pos { 1.0 / positives as f64 } else { 0.0 };
        }
        loss += lse - pos_sum / positives as f64;
    }

    let mut grads = vec![vec![0.0; dim]; n];
    for (k, g) in grads.iter_mut().enumerate() {
        for a in (0..n).filter(|&a| a != k) {
            let w = (coeff[k * n + a] + coeff[a * n + k]) / tau;
            if w != 0.0 {
                for (gv, zv) in g.iter_mut().zip(&z[a]) {
                    *gv += w * zv;
                }
            }
        }
    }
    Ok(LossOutput { loss, grads })
}
