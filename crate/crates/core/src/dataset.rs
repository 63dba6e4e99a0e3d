//! Paired image-text instances and deterministic dataset splitting.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::label::LabelVector;
use crate::rng::DetRng;
use crate::text::TextSample;

/// One aligned image-text pair with its multi-hot label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedInstance {
    pub id: String,
    pub image: ImageSample,
    pub text: TextSample,
    pub label: LabelVector,
}

/// Role of a dataset slice in the retrieval protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Retrieval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Retrieval => "retrieval",
        }
    }
}

/// An in-memory dataset: instances plus the category universe size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<PairedInstance>,
    pub categories: usize,
    pub split: Option<Split>,
}

impl Dataset {
    /// Validates internal consistency: unique ids, uniform image dimensions,
    /// label width matching the category count, and non-empty labels.
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.instances.iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("duplicate instance id {:?}", dup[0])));
        }
        let dims = self
            .instances
            .first()
            .map(|i| (i.image.height(), i.image.width()));
        for inst in &self.instances {
            if Some((inst.image.height(), inst.image.width())) != dims {
                return Err(Error::Validation(format!(
                    "instance {:?} has image dimensions {}x{}, expected uniform dimensions",
                    inst.id,
                    inst.image.height(),
                    inst.image.width()
                )));
            }
            if inst.label.categories() != self.categories {
                return Err(Error::Validation(format!(
                    "instance {:?} label width {} does not match {} categories",
                    inst.id,
                    inst.label.categories(),
                    self.categories
                )));
            }
            if !inst.label.any() {
                return Err(Error::Validation(format!(
                    "instance {:?} has an empty label",
                    inst.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Index of an instance by id.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }
}

/// Fractions of the train / query / retrieval slices; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub query: f64,
    pub retrieval: f64,
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.query, self.retrieval];
        if parts.iter().any(|f| *f <= 0.0 || !f.is_finite()) {
            return Err(Error::Validation(format!(
                "split fractions must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if libm::fabs(sum - 1.0) > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            query: 0.1,
            retrieval: 0.1,
        }
    }
}

/// Index partition of `0..n` into the three splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub query: Vec<usize>,
    pub retrieval: Vec<usize>,
}

/// Partitions `0..n` deterministically.
///
/// Counts use largest-remainder rounding of the fractions (ties resolved in
/// train, query, retrieval order); membership comes from a seeded shuffle.
pub fn plan_split(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitPlan> {
    fractions.validate()?;
    let parts = [fractions.train, fractions.query, fractions.retrieval];
    let mut counts = [0usize; 3];
    let mut remainders = [0.0f64; 3];
    for (i, f) in parts.iter().enumerate() {
        let exact = f * n as f64;
        counts[i] = libm::floor(exact) as usize;
        remainders[i] = exact - libm::floor(exact);
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| remainders[b].total_cmp(&remainders[a]).then(a.cmp(&b)));
    for k in 0..n - assigned {
        counts[order[k % 3]] += 1;
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = DetRng::derive(seed, "dataset-split");
    rng.shuffle(&mut indices);

    let query_end = counts[0] + counts[1];
    Ok(SplitPlan {
        train: indices[..counts[0]].to_vec(),
        query: indices[counts[0]..query_end].to_vec(),
        retrieval: indices[query_end..].to_vec(),
    })
}

/// Splits a dataset into train / query / retrieval slices.
pub fn split_dataset(
    dataset: Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let plan = plan_split(dataset.len(), fractions, seed)?;
    let categories = dataset.categories;
    let mut slots: Vec<Option<PairedInstance>> =
        dataset.instances.into_iter().map(Some).collect();
    let mut take = |indices: &[usize], split: Split| -> Dataset {
        let instances = indices
            .iter()
            .map(|&i| slots[i].take().expect("split indices are disjoint"))
            .collect();
        Dataset {
            instances,
            categories,
            split: Some(split),
        }
    };
    let train = take(&plan.train, Split::Train);
    let query = take(&plan.query, Split::Query);
    let retrieval = take(&plan.retrieval, Split::Retrieval);
    Ok((train, query, retrieval))
}
