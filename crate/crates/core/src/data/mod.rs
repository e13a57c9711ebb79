//! Bags, synthetic generation, on-disk formats and samplers.

pub(crate) mod format;
mod sampler;
mod synthetic;

pub use format::{
    import_csv_features, load_dataset, read_features, read_instance_labels, save_dataset,
    write_features, write_instance_labels, FEATURE_MAGIC, FORMAT_VERSION, LABEL_MAGIC, MANIFEST_NAME,
};
pub use sampler::{bag_sampler, instance_sampler, InstanceItem};
pub use synthetic::{gen_synthetic, SynthMode, SyntheticConfig};

use std::collections::HashSet;

use crate::error::{Error, Result};

/// One bag: `n` instances of width `d_in`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub n: usize,
    pub d_in: usize,
    pub features: Vec<f64>,
    pub label: u8,
    /// Ground-truth instance labels; evaluation only.
    pub instance_labels: Option<Vec<u8>>,
}

impl Bag {
    pub fn new(
        id: impl Into<String>,
        d_in: usize,
        features: Vec<f64>,
        label: u8,
        instance_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let id = id.into();
        if d_in == 0 || features.is_empty() || !features.len().is_multiple_of(d_in) {
            return Err(Error::Validation(format!(
                "bag {id}: {} feature values do not form rows of width {d_in}",
                features.len()
            )));
        }
        let bag = Bag {
            n: features.len() / d_in,
            id,
            d_in,
            features,
            label,
            instance_labels,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn instance(&self, j: usize) -> &[f64] {
        &self.features[j * self.d_in..(j + 1) * self.d_in]
    }

    /// Checks `n ≥ 1`, binary labels, finite features and, when instance labels
    /// are present, that the bag label is their maximum.
    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if self.n == 0 {
            return Err(Error::Validation(format!("bag {id} is empty")));
        }
        if self.label > 1 {
            return Err(Error::Validation(format!("bag {id}: label {} is not 0/1", self.label)));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("bag {id}: non-finite feature")));
        }
        if let Some(labels) = &self.instance_labels {
            if labels.len() != self.n {
                return Err(Error::Validation(format!(
                    "bag {id}: {} instance labels for {} instances",
                    labels.len(),
                    self.n
                )));
            }
            if labels.iter().any(|&y| y > 1) {
                return Err(Error::Validation(format!("bag {id}: instance label not 0/1")));
            }
            let max = labels.iter().copied().max().unwrap_or(0);
            if max != self.label {
                return Err(Error::Validation(format!(
                    "bag {id}: label {} but max instance label {max}",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagDataset {
    pub d_in: usize,
    pub bags: Vec<Bag>,
}

impl BagDataset {
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let d_in = bags
            .first()
            .map(|b| b.d_in)
            .ok_or_else(|| Error::Validation("dataset has no bags".into()))?;
        let mut seen = HashSet::new();
        for b in &bags {
            if b.d_in != d_in {
                return Err(Error::Validation(format!(
                    "bag {} has width {} but dataset width is {d_in}",
                    b.id, b.d_in
                )));
            }
            if !seen.insert(b.id.as_str()) {
                return Err(Error::Validation(format!("duplicate bag id {}", b.id)));
            }
            b.validate()?;
        }
        Ok(BagDataset { d_in, bags })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn n_instances(&self) -> usize {
        self.bags.iter().map(|b| b.n).sum()
    }

    pub fn has_instance_labels(&self) -> bool {
        self.bags.iter().all(|b| b.instance_labels.is_some())
    }

    pub fn find(&self, id: &str) -> Option<&Bag> {
        self.bags.iter().find(|b| b.id == id)
    }

    /// Drops instance labels so downstream code treats the set as bag-label-only.
    pub fn without_instance_labels(mut self) -> Self {
        self.bags.iter_mut().for_each(|b| b.instance_labels = None);
        self
    }
}
