use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Which modality a network or feature set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    X,
    Y,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::X => "x",
            Modality::Y => "y",
        }
    }
}

/// Paired bimodal samples `(x, y; z)`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Split {
    pub fn new(x: Array2<f64>, y: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.nrows() != labels.len() || y.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} x rows, {} y rows, {} labels",
                x.nrows(),
                y.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} >= {n_classes} classes")));
        }
        Ok(Split {
            x,
            y,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self, modality: Modality) -> ArrayView2<'_, f64> {
        match modality {
            Modality::X => self.x.view(),
            Modality::Y => self.y.view(),
        }
    }

    /// Rows `idx` of both modalities plus their labels.
    pub(crate) fn gather(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
        (
            self.x.select(Axis(0), idx),
            self.y.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Train, validation and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}
