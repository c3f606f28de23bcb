use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use super::mining::NeighborMap;
use super::TrainerConfig;
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};
use crate::types::{GlyphCatalog, LabeledCrop};

/// One contrastive batch: `slots[s]` is a class id and
/// `items[s*m..(s+1)*m]` are the dataset indices drawn for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingBatch {
    pub m: usize,
    pub slots: Vec<usize>,
    pub items: Vec<usize>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Class of every item, aligned with `items`.
    pub fn class_ids(&self) -> Vec<usize> {
        self.slots
            .iter()
            .flat_map(|&c| std::iter::repeat(c).take(self.m))
            .collect()
    }

    pub fn slot_items(&self, slot: usize) -> &[usize] {
        &self.items[slot * self.m..(slot + 1) * self.m]
    }
}

/// Dataset indices of every catalog class.
pub(crate) fn class_pools(dataset: &[LabeledCrop], catalog: &GlyphCatalog) -> Result<Vec<Vec<usize>>> {
    let mut pools = vec![Vec::new(); catalog.len()];
    for (i, crop) in dataset.iter().enumerate() {
        let pool = pools.get_mut(crop.class_id).ok_or_else(|| {
            Error::Config(format!("crop {i} has class id {} outside the catalog", crop.class_id))
        })?;
        pool.push(i);
    }
    if let Some(c) = pools.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass {
            class_id: c,
            label: catalog.label(c).unwrap_or_default().to_string(),
        });
    }
    Ok(pools)
}

/// Variants of one class, handed out without replacement until exhausted.
struct VariantQueue<'a> {
    pool: &'a [usize],
    queue: VecDeque<usize>,
}

impl<'a> VariantQueue<'a> {
    fn new(pool: &'a [usize]) -> Self {
        VariantQueue {
            pool,
            queue: VecDeque::new(),
        }
    }

    fn draw(&mut self, m: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::with_capacity(m);
        while out.len() < m {
            if self.queue.is_empty() {
                let mut fresh = self.pool.to_vec();
                fresh.shuffle(rng);
                // Variants already in this slot go last so reuse stays balanced.
                fresh.sort_by_key(|v| out.iter().filter(|o| *o == v).count());
                self.queue.extend(fresh);
            }
            out.push(self.queue.pop_front().expect("refilled"));
        }
        out
    }
}

/// One epoch of m-per-class batches: `passes_per_epoch` passes over all
/// classes, each pass shuffled and cut into groups of `classes_per_batch`
/// (the last group of a pass may be smaller).
pub fn sample_epoch(
    dataset: &[LabeledCrop],
    catalog: &GlyphCatalog,
    cfg: &TrainerConfig,
    seed: u64,
) -> Result<Vec<TrainingBatch>> {
    cfg.validate()?;
    let pools = class_pools(dataset, catalog)?;
    let mut rng = seeded(seed);
    let mut queues: Vec<VariantQueue> = pools.iter().map(|p| VariantQueue::new(p)).collect();
    let mut batches = Vec::new();
    for _ in 0..cfg.passes_per_epoch {
        let mut order: Vec<usize> = (0..catalog.len()).collect();
        order.shuffle(&mut rng);
        for group in order.chunks(cfg.classes_per_batch) {
            let mut items = Vec::with_capacity(group.len() * cfg.m);
            for &c in group {
                items.extend(queues[c].draw(cfg.m, &mut rng));
            }
            batches.push(TrainingBatch {
                m: cfg.m,
                slots: group.to_vec(),
                items,
            });
        }
    }
    Ok(batches)
}

/// Replaces a contiguous run of class slots in `round(fraction * n)`
/// randomly chosen batches with a hard set: a random anchor class and the
/// neighbor classes of one of its crops, `m` variants each.
pub fn intersperse_hard_sets(
    batches: &[TrainingBatch],
    dataset: &[LabeledCrop],
    catalog: &GlyphCatalog,
    neighbors: &NeighborMap,
    cfg: &TrainerConfig,
    seed: u64,
) -> Result<Vec<TrainingBatch>> {
    cfg.validate()?;
    if neighbors.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "neighbor map covers {} crops, dataset has {}",
            neighbors.len(),
            dataset.len()
        )));
    }
    let pools = class_pools(dataset, catalog)?;
    let mut rng = seeded(seed);
    let chosen_count = (cfg.hard_negative_fraction * batches.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..batches.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen = vec![false; batches.len()];
    for &b in order.iter().take(chosen_count) {
        chosen[b] = true;
    }
    let mut out = Vec::with_capacity(batches.len());
    for (b, batch) in batches.iter().enumerate() {
        if !chosen[b] {
            out.push(batch.clone());
            continue;
        }
        let mut rng = seeded(derive(seed, &[b as u64]));
        let anchor = rng.gen_range(0..catalog.len());
        let crop = *pools[anchor].choose(&mut rng).expect("pools are non-empty");
        let mut block = vec![anchor];
        block.extend(neighbors.classes(crop).iter().copied().filter(|&c| c != anchor));
        block.truncate(batch.slots.len());
        out.push(replace_block(batch, &block, &pools, &mut rng));
    }
    Ok(out)
}

fn replace_block(batch: &TrainingBatch, block: &[usize], pools: &[Vec<usize>], rng: &mut impl Rng) -> TrainingBatch {
    let s = batch.slots.len();
    let offset = rng.gen_range(0..=s - block.len());
    let range = offset..offset + block.len();
    // Classes pushed out of the range refill outside slots that now clash.
    let mut displaced: Vec<usize> = range
        .clone()
        .filter(|&i| !block.contains(&batch.slots[i]))
        .collect();
    let mut slot_source: Vec<Option<usize>> = vec![None; s];
    let mut slots = vec![0; s];
    for i in 0..s {
        if range.contains(&i) {
            let class = block[i - offset];
            slots[i] = class;
            slot_source[i] = batch.slots.iter().position(|&c| c == class);
        } else if block.contains(&batch.slots[i]) {
            let from = displaced.pop().expect("enough displaced classes");
            slots[i] = batch.slots[from];
            slot_source[i] = Some(from);
        } else {
            slots[i] = batch.slots[i];
            slot_source[i] = Some(i);
        }
    }
    let mut items = Vec::with_capacity(batch.items.len());
    for (i, &class) in slots.iter().enumerate() {
        match slot_source[i] {
            Some(src) => items.extend_from_slice(batch.slot_items(src)),
            None => items.extend(VariantQueue::new(&pools[class]).draw(batch.m, rng)),
        }
    }
    TrainingBatch {
        m: batch.m,
        slots,
        items,
    }
}
