use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BagDataset;
use crate::error::{Error, Result};
use crate::model::SoftLabelCache;

fn rng_for(seed: u64, epoch: u64, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(2).wrapping_add(lane));
    rng
}

/// Seeded Fisher–Yates permutation of bag indices for one epoch.
pub fn bag_sampler(n_bags: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_bags).collect();
    order.shuffle(&mut rng_for(seed, epoch, 0));
    order
}

/// One instance in an instance-branch batch, with its bag's label and its
/// own cached raw attention score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceItem {
    pub bag: usize,
    pub instance: usize,
    pub attention: f64,
    pub bag_label: u8,
}

/// Shuffles the pooled instances of every bag and cuts them into batches of
/// at most `batch_size`. Every bag must already have a cache entry.
pub fn instance_sampler(
    ds: &BagDataset,
    cache: &SoftLabelCache,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<InstanceItem>>> {
    if batch_size == 0 {
        return Err(Error::config("instance batch size must be positive"));
    }
    let mut pool = Vec::with_capacity(ds.n_instances());
    for (bi, bag) in ds.bags.iter().enumerate() {
        let entry = cache.get(&bag.id).ok_or_else(|| {
            Error::Contract(format!(
                "bag {} has no cached attention; it must pass the bag branch before instance sampling",
                bag.id
            ))
        })?;
        if entry.raw.len() != bag.n {
            return Err(Error::Contract(format!(
                "cached attention for bag {} has {} scores for {} instances",
                bag.id,
                entry.raw.len(),
                bag.n
            )));
        }
        pool.extend(entry.raw.iter().enumerate().map(|(j, &a)| InstanceItem {
            bag: bi,
            instance: j,
            attention: a,
            bag_label: bag.label,
        }));
    }
    pool.shuffle(&mut rng_for(seed, epoch, 1));
    Ok(pool.chunks(batch_size).map(<[InstanceItem]>::to_vec).collect())
}
