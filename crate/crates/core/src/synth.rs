//! Seeded synthetic bimodal dataset with a factored label `z = z_x·C_y + z_y`.
//!
//! `x` encodes only `z_x` and `y` encodes only `z_y`, so a classifier that
//! sees one modality can do no better than `1/C_other` at zero noise.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Modality, Split, Splits};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    #[serde(rename = "C_x")]
    pub c_x: usize,
    #[serde(rename = "C_y")]
    pub c_y: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub noise_sigma: f64,
    pub n_distractor: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            c_x: 4,
            c_y: 4,
            dim_x: 32,
            dim_y: 32,
            noise_sigma: 0.3,
            n_distractor: 8,
            n_train: 4000,
            n_val: 1000,
            n_test: 1000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_classes(&self) -> usize {
        self.c_x * self.c_y
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_x < 2 || self.c_y < 2 {
            return Err(Error::InvalidArgument("C_x and C_y must be at least 2".into()));
        }
        if self.dim_x < self.c_x + self.n_distractor || self.dim_y < self.c_y + self.n_distractor {
            return Err(Error::InvalidArgument(
                "modality dims must cover the label pattern plus distractor dims".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

fn fill_modality(row: &mut [f64], code: usize, n_distractor: usize, sigma: f64, rng: &mut ChaCha8Rng) {
    let signal_end = row.len() - n_distractor;
    for (d, v) in row.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *v = if d >= signal_end {
            z
        } else {
            let base = if d == code { 1.0 } else { 0.0 };
            base + sigma * z
        };
    }
}

fn sample_split(spec: &SynthSpec, n: usize, rng: &mut ChaCha8Rng) -> Split {
    let mut x = Array2::zeros((n, spec.dim_x));
    let mut y = Array2::zeros((n, spec.dim_y));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let zx = rng.gen_range(0..spec.c_x);
        let zy = rng.gen_range(0..spec.c_y);
        let mut xr = x.row_mut(i);
        fill_modality(
            xr.as_slice_mut().expect("row-major"),
            zx,
            spec.n_distractor,
            spec.noise_sigma,
            rng,
        );
        let mut yr = y.row_mut(i);
        fill_modality(
            yr.as_slice_mut().expect("row-major"),
            zy,
            spec.n_distractor,
            spec.noise_sigma,
            rng,
        );
        labels.push(zx * spec.c_y + zy);
    }
    Split {
        x,
        y,
        labels,
        n_classes: spec.n_classes(),
    }
}

/// Draws train, validation and test splits in that order from one seeded
/// stream.
pub fn generate(spec: &SynthSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = sample_split(spec, spec.n_train, &mut rng);
    let val = sample_split(spec, spec.n_val, &mut rng);
    let test = sample_split(spec, spec.n_test, &mut rng);
    Ok(Splits { train, val, test })
}

/// Bayes accuracy of a classifier that sees only `modality` at zero noise:
/// it knows its own sub-label and must guess the other one.
pub fn unimodal_ceiling(spec: &SynthSpec, modality: Modality) -> f64 {
    let other = match modality {
        Modality::X => spec.c_y,
        Modality::Y => spec.c_x,
    };
    1.0 / other as f64
}
