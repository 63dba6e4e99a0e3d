//! Multi-hot category labels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A multi-hot label over a fixed category universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    bits: Vec<bool>,
}

impl LabelVector {
    /// All-zero label over `categories` classes.
    pub fn zeros(categories: usize) -> Self {
        LabelVector {
            bits: vec![false; categories],
        }
    }

    /// Builds a label from category indices; indices must be `< categories`.
    pub fn from_indices(categories: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; categories];
        for &i in indices {
            if i >= categories {
                return Err(Error::Validation(format!(
                    "label index {i} out of range for {categories} categories"
                )));
            }
            bits[i] = true;
        }
        Ok(LabelVector { bits })
    }

    /// Single-bit label for one category.
    pub fn single(categories: usize, index: usize) -> Result<Self> {
        LabelVector::from_indices(categories, &[index])
    }

    /// Number of categories in the universe.
    pub fn categories(&self) -> usize {
        self.bits.len()
    }

    pub fn is_set(&self, index: usize) -> bool {
        self.bits.get(index).copied().unwrap_or(false)
    }

    /// Indices of set bits, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| if *b { Some(i) } else { None })
            .collect()
    }

    /// Number of set bits.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True when at least one bit is set.
    pub fn any(&self) -> bool {
        self.bits.iter().any(|b| *b)
    }

    /// True when the two labels share at least one category.
    pub fn intersects(&self, other: &LabelVector) -> bool {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .any(|(a, b)| *a && *b)
    }

    /// 1.0/0.0 rendering, used as a classification target.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_indices_validates_range() {
        assert!(LabelVector::from_indices(4, &[0, 3]).is_ok());
        assert!(LabelVector::from_indices(4, &[4]).is_err());
    }

    #[test]
    fn intersects_requires_shared_bit() {
        let a = LabelVector::from_indices(4, &[0, 2]).unwrap();
        let b = LabelVector::from_indices(4, &[2, 3]).unwrap();
        let c = LabelVector::from_indices(4, &[1]).unwrap();
        assert!(a.intersects(&b));
        assert!(!a.intersects(&c));
    }

    #[test]
    fn indices_round_trip() {
        let l = LabelVector::from_indices(6, &[5, 1]).unwrap();
        assert_eq!(l.indices(), vec![1, 5]);
        assert_eq!(l.count(), 2);
        assert!(l.any());
    }
}
