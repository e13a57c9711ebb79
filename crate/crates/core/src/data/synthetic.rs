use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{KvFile, KvWriter};
use crate::data::{Bag, BagDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    /// Detection-like: a few positive "witness" instances in positive bags.
    Witness,
    /// Two-class subtyping: most instances carry the class signal.
    Subtype,
}

impl FromStr for SynthMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "witness" => Ok(SynthMode::Witness),
            "subtype" => Ok(SynthMode::Subtype),
            other => Err(format!("unknown mode `{other}` (expected witness or subtype)")),
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthMode::Witness => "witness",
            SynthMode::Subtype => "subtype",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_bags: usize,
    pub bag_size_min: usize,
    pub bag_size_max: usize,
    pub d_in: usize,
    /// Fraction of positive instances in a positive bag (ceiling, at least one).
    pub witness_rate: f64,
    pub mode: SynthMode,
    /// Distance between the positive and negative cluster means.
    pub separation: f64,
    /// Isotropic standard deviation of every cluster.
    pub noise: f64,
    pub positive_fraction: f64,
    /// Subtype mode: fraction of instances drawn from the class clusters.
    pub informative_fraction: f64,
    pub id_prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_bags: 1000,
            bag_size_min: 30,
            bag_size_max: 70,
            d_in: 32,
            witness_rate: 0.1,
            mode: SynthMode::Witness,
            separation: 2.5,
            noise: 1.0,
            positive_fraction: 0.5,
            informative_fraction: 0.6,
            id_prefix: "bag".into(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.n_bags == 0 {
            return fail("n_bags must be at least 1".into());
        }
        if self.bag_size_min == 0 || self.bag_size_min > self.bag_size_max {
            return fail(format!(
                "bag size range [{}, {}] is invalid",
                self.bag_size_min, self.bag_size_max
            ));
        }
        if self.d_in == 0 {
            return fail("d_in must be at least 1".into());
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return fail(format!("witness_rate {} outside (0, 1]", self.witness_rate));
        }
        if !(self.informative_fraction > 0.0 && self.informative_fraction <= 1.0) {
            return fail(format!(
                "informative_fraction {} outside (0, 1]",
                self.informative_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return fail(format!("positive_fraction {} outside [0, 1]", self.positive_fraction));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return fail(format!("separation {} must be finite and >= 0", self.separation));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return fail(format!("noise {} must be positive", self.noise));
        }
        if self.id_prefix.is_empty() || self.id_prefix.contains(['\t', '\n', '/', '\\']) {
            return fail("id_prefix must be a non-empty file-name-safe string".into());
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut c = SyntheticConfig::default();
        for entry in kv.entries() {
            let (k, line) = (entry.key.as_str(), entry.line);
            match k {
                "seed" => c.seed = entry.parse()?,
                "n_bags" => c.n_bags = entry.parse()?,
                "bag_size_min" => c.bag_size_min = entry.parse()?,
                "bag_size_max" => c.bag_size_max = entry.parse()?,
                "d_in" => c.d_in = entry.parse()?,
                "witness_rate" => c.witness_rate = entry.parse()?,
                "mode" => c.mode = entry.parse()?,
                "separation" => c.separation = entry.parse()?,
                "noise" => c.noise = entry.parse()?,
                "positive_fraction" => c.positive_fraction = entry.parse()?,
                "informative_fraction" => c.informative_fraction = entry.parse()?,
                "id_prefix" => c.id_prefix = entry.value.clone(),
                other => return Err(Error::config_at(line, format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::default();
        w.put("seed", self.seed)
            .put("n_bags", self.n_bags)
            .put("bag_size_min", self.bag_size_min)
            .put("bag_size_max", self.bag_size_max)
            .put("d_in", self.d_in)
            .put("witness_rate", self.witness_rate)
            .put("mode", self.mode)
            .put("separation", self.separation)
            .put("noise", self.noise)
            .put("positive_fraction", self.positive_fraction)
            .put("informative_fraction", self.informative_fraction)
            .put("id_prefix", &self.id_prefix);
        w.finish()
    }

    /// Label of bag `i`: positives are spread evenly through the index range.
    fn label_of(&self, i: usize) -> u8 {
        let pf = self.positive_fraction;
        let before = (i as f64 * pf).floor();
        let after = ((i + 1) as f64 * pf).floor();
        u8::from(after > before)
    }
}

/// Unit vector spread evenly over the coordinates `range`.
fn direction(d_in: usize, range: std::ops::Range<usize>) -> Vec<f64> {
    let width = range.len().max(1) as f64;
    let mut v = vec![0.0; d_in];
    for i in range {
        v[i] = 1.0 / width.sqrt();
    }
    v
}

fn draw_instance(rng: &mut ChaCha8Rng, mean: &[f64], noise: f64, out: &mut Vec<f64>) {
    for &m in mean {
        let z: f64 = rng.sample(StandardNormal);
        // Stored at f32 precision so that on-disk round trips are exact.
        out.push((m + noise * z) as f32 as f64);
    }
}

/// Generates bags that satisfy the standard MIL assumption by construction.
///
/// Each bag draws from its own ChaCha stream (seed, stream = bag index), so
/// bags are independent of generation order.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<BagDataset> {
    cfg.validate()?;
    let d = cfg.d_in;
    let c = cfg.separation;
    let zero = vec![0.0; d];
    let pos_mean: Vec<f64> = direction(d, 0..d).into_iter().map(|x| c * x).collect();
    // Subtype clusters: each class is a two-component mixture living on its
    // own half of the coordinates; background sits at the origin.
    let half = (d / 2).max(1);
    let class_means: [[Vec<f64>; 2]; 2] = {
        let axis = |r: std::ops::Range<usize>| -> Vec<f64> {
            direction(d, r).into_iter().map(|x| c * x).collect()
        };
        let a = axis(0..half);
        let b = if d > 1 { axis(half..d) } else { a.iter().map(|x| -x).collect() };
        let shifted = |base: &[f64], j: usize| -> Vec<f64> {
            let mut m = base.to_vec();
            m[j % d] += 0.5 * c;
            m
        };
        [
            [a.clone(), shifted(&a, half.saturating_sub(1))],
            [b.clone(), shifted(&b, d - 1)],
        ]
    };

    let mut bags = Vec::with_capacity(cfg.n_bags);
    for i in 0..cfg.n_bags {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let n = rng.random_range(cfg.bag_size_min..=cfg.bag_size_max);
        let label = cfg.label_of(i);
        let mut features = Vec::with_capacity(n * d);
        let mut inst = vec![0u8; n];
        match cfg.mode {
            SynthMode::Witness => {
                if label == 1 {
                    let k = ((cfg.witness_rate * n as f64).ceil() as usize).clamp(1, n);
                    for j in index::sample(&mut rng, n, k) {
                        inst[j] = 1;
                    }
                }
                for &y in &inst {
                    let mean = if y == 1 { &pos_mean } else { &zero };
                    draw_instance(&mut rng, mean, cfg.noise, &mut features);
                }
            }
            SynthMode::Subtype => {
                let k = ((cfg.informative_fraction * n as f64).ceil() as usize).clamp(1, n);
                let mut informative = vec![false; n];
                for j in index::sample(&mut rng, n, k) {
                    informative[j] = true;
                }
                for (j, &is_info) in informative.iter().enumerate() {
                    if is_info {
                        let comp = rng.random_range(0..2);
                        draw_instance(&mut rng, &class_means[label as usize][comp], cfg.noise, &mut features);
                        inst[j] = label;
                    } else {
                        draw_instance(&mut rng, &zero, cfg.noise, &mut features);
                    }
                }
            }
        }
        let id = format!("{}_{i:05}", cfg.id_prefix);
        bags.push(Bag::new(id, d, features, label, Some(inst))?);
    }
    BagDataset::new(bags)
}
