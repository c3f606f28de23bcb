use rayon::prelude::*;

use crate::encoder::{dot32, Encoder, Embedding};
use crate::error::Result;
use crate::types::{GrayImage, LabeledCrop};

/// For every training crop, its nearest other classes, closest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborMap {
    k: usize,
    classes: Vec<Vec<usize>>,
}

impl NeighborMap {
    pub fn new(k: usize, classes: Vec<Vec<usize>>) -> Self {
        NeighborMap { k, classes }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self, crop: usize) -> &[usize] {
        &self.classes[crop]
    }
}

/// Embeds every crop and lists, per crop, the `k` classes owning its
/// nearest foreign crops by inner product.
pub fn mine_hard_negatives(encoder: &Encoder, dataset: &[LabeledCrop], k: usize) -> Result<NeighborMap> {
    let images: Vec<GrayImage> = dataset.iter().map(|c| c.image.clone()).collect();
    let embeddings = encoder.embed(&images)?;
    let class_ids: Vec<usize> = dataset.iter().map(|c| c.class_id).collect();
    Ok(nearest_classes(&embeddings, &class_ids, k))
}

/// Exact k-nearest foreign classes. A class's distance to a crop is the
/// best similarity among its members; ties go to the lower class id.
/// `k` is clamped to the number of other classes.
pub fn nearest_classes(embeddings: &[Embedding], class_ids: &[usize], k: usize) -> NeighborMap {
    let n_classes = class_ids.iter().max().map_or(0, |&c| c + 1);
    let classes = (0..embeddings.len())
        .into_par_iter()
        .map(|i| {
            let mut best = vec![f64::NEG_INFINITY; n_classes];
            let own = class_ids[i];
            let zi = embeddings[i].values();
            for (j, e) in embeddings.iter().enumerate() {
                let c = class_ids[j];
                if c != own {
                    let s = dot32(zi, e.values());
                    if s > best[c] {
                        best[c] = s;
                    }
                }
            }
            let mut ranked: Vec<usize> = (0..n_classes).filter(|&c| best[c] > f64::NEG_INFINITY).collect();
            ranked.sort_by(|&a, &b| best[b].total_cmp(&best[a]).then(a.cmp(&b)));
            ranked.truncate(k);
            ranked
        })
        .collect();
    NeighborMap { k, classes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(x: f64, y: f64) -> Embedding {
        Embedding::normalized(&[x, y]).unwrap()
    }

    #[test]
    fn two_classes_list_each_other() {
        let e = vec![emb(1.0, 0.0), emb(0.9, 0.1), emb(0.0, 1.0), emb(0.2, 1.0)];
        let nm = nearest_classes(&e, &[0, 0, 1, 1], 8);
        for i in 0..2 {
            assert_eq!(nm.classes(i), &[1]);
        }
        for i in 2..4 {
            assert_eq!(nm.classes(i), &[0]);
        }
    }

    #[test]
    fn matches_pairwise_oracle() {
        // Five crops on the unit circle at hand-picked angles.
        let angles = [0.0f64, 0.3, 1.2, 2.0, 3.0];
        let ids = [0usize, 1, 2, 1, 3];
        let e: Vec<Embedding> = angles.iter().map(|a| emb(a.cos(), a.sin())).collect();
        let nm = nearest_classes(&e, &ids, 2);
        for i in 0..5 {
            // Oracle: sort all foreign crops by angular distance, keep first
            // occurrence of each class.
            let mut others: Vec<(f64, usize)> = (0..5)
                .filter(|&j| ids[j] != ids[i])
                .map(|j| ((angles[i] - angles[j]).abs(), ids[j]))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut expected: Vec<usize> = Vec::new();
            for (_, c) in others {
                if !expected.contains(&c) {
                    expected.push(c);
                }
            }
            expected.truncate(2);
            assert_eq!(nm.classes(i), expected.as_slice(), "crop {i}");
            assert!(!nm.classes(i).contains(&ids[i]));
        }
    }

    #[test]
    fn k_clamps_to_available_classes() {
        let e = vec![emb(1.0, 0.0), emb(1.0, 0.1), emb(0.0, 1.0), emb(0.1, 1.0), emb(-1.0, 0.0), emb(-1.0, 0.2)];
        let nm = nearest_classes(&e, &[0, 0, 1, 1, 2, 2], 8);
        assert!((0..6).all(|i| nm.classes(i).len() == 2));
        assert_eq!(nm.k(), 8);
    }
}
