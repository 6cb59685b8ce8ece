//! Recurrent accuracy predictor over triplet sequences.
//!
//! Each triplet is embedded by concatenating one learned vector per slot
//! (`gm`, `gn`, `gp`); a gated recurrent cell reads the layers in order and
//! a sigmoid head maps the final state to a predicted accuracy in `(0, 1)`.

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Architecture, SpaceConfig};
use crate::tensor::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            embed_dim: 32,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    emb_m: Array2<f64>,
    emb_n: Array2<f64>,
    emb_p: Array2<f64>,
    /// Input weights for the update, reset and candidate gates, stacked.
    w: Array2<f64>,
    /// Recurrent weights, same stacking.
    u: Array2<f64>,
    b: Array1<f64>,
    head_w: Array1<f64>,
    head_b: f64,
}

impl Params {
    fn zeros_like(other: &Params) -> Params {
        Params {
            emb_m: Array2::zeros(other.emb_m.dim()),
            emb_n: Array2::zeros(other.emb_n.dim()),
            emb_p: Array2::zeros(other.emb_p.dim()),
            w: Array2::zeros(other.w.dim()),
            u: Array2::zeros(other.u.dim()),
            b: Array1::zeros(other.b.len()),
            head_w: Array1::zeros(other.head_w.len()),
            head_b: 0.0,
        }
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for m in [&self.emb_m, &self.emb_n, &self.emb_p, &self.w, &self.u] {
            v.extend(m.iter());
        }
        v.extend(self.b.iter());
        v.extend(self.head_w.iter());
        v.push(self.head_b);
        v
    }

    #[cfg(test)]
    fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for m in [
            &mut self.emb_m,
            &mut self.emb_n,
            &mut self.emb_p,
            &mut self.w,
            &mut self.u,
        ] {
            m.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        self.b.iter_mut().for_each(|x| *x = it.next().unwrap());
        self.head_w.iter_mut().for_each(|x| *x = it.next().unwrap());
        self.head_b = it.next().unwrap();
    }

    fn axpy(&mut self, scale: f64, g: &Params) {
        self.emb_m.scaled_add(scale, &g.emb_m);
        self.emb_n.scaled_add(scale, &g.emb_n);
        self.emb_p.scaled_add(scale, &g.emb_p);
        self.w.scaled_add(scale, &g.w);
        self.u.scaled_add(scale, &g.u);
        self.b.scaled_add(scale, &g.b);
        self.head_w.scaled_add(scale, &g.head_w);
        self.head_b += scale * g.head_b;
    }
}

/// Activations of one pass, reused across samples.
#[derive(Default)]
struct Trace {
    /// `L × 3E` layer inputs.
    inputs: Vec<f64>,
    /// `(L+1) × H` hidden states, starting from zero.
    hs: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    pre: Vec<f64>,
}

/// `out[j] += Σ_k m[j, k] x[k]` for a row-major `m` with `x.len()` columns.
fn matvec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[k] += Σ_j m[j, k] v[j]`.
fn matvec_t_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &vj) in m.chunks_exact(cols).zip(v) {
        if vj != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, a)| *o += a * vj);
        }
    }
}

/// `m[j, k] += v[j] x[k]`.
fn outer_add(m: &mut [f64], v: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &vj) in m.chunks_exact_mut(cols).zip(v) {
        if vj != 0.0 {
            row.iter_mut().zip(x).for_each(|(a, b)| *a += vj * b);
        }
    }
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are row-major")
}

fn flat_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are row-major")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    space: SpaceConfig,
    cfg: SurrogateConfig,
    params: Params,
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, a: f64, rng: &mut R) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-a, a);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl SurrogateModel {
    pub fn new(space: &SpaceConfig, cfg: SurrogateConfig, seed: u64) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.hidden_dim == 0 {
            return Err(Error::InvalidArgument("surrogate dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        let input = 3 * e;
        let a_in = (6.0 / (input + h) as f64).sqrt();
        let a_rec = (6.0 / (2 * h) as f64).sqrt();
        let params = Params {
            emb_m: uniform_matrix(space.m, e, 0.5, &mut rng),
            emb_n: uniform_matrix(space.n, e, 0.5, &mut rng),
            emb_p: uniform_matrix(space.p, e, 0.5, &mut rng),
            w: uniform_matrix(3 * h, input, a_in, &mut rng),
            u: uniform_matrix(3 * h, h, a_rec, &mut rng),
            b: Array1::zeros(3 * h),
            head_w: uniform_matrix(1, h, (6.0 / (h + 1) as f64).sqrt(), &mut rng).row(0).to_owned(),
            head_b: 0.0,
        };
        Ok(SurrogateModel {
            space: *space,
            cfg,
            params,
        })
    }

    pub fn config(&self) -> SurrogateConfig {
        self.cfg
    }

    fn check(&self, arch: &Architecture) -> Result<()> {
        let open = SpaceConfig {
            max_layers: usize::MAX,
            ..self.space
        };
        crate::space::validate(arch, &open).map_err(Error::from)
    }

    fn run(&self, arch: &Architecture, tr: &mut Trace) -> f64 {
        let (e, h) = (self.cfg.embed_dim, self.cfg.hidden_dim);
        let p = &self.params;
        let len = arch.len();
        tr.inputs.clear();
        for t in arch.triplets() {
            tr.inputs.extend(p.emb_m.row(t.x_tap()).iter());
            tr.inputs.extend(p.emb_n.row(t.y_tap()).iter());
            tr.inputs.extend(p.emb_p.row(t.activation()).iter());
        }
        tr.hs.clear();
        tr.hs.resize((len + 1) * h, 0.0);
        for v in [&mut tr.z, &mut tr.r, &mut tr.n, &mut tr.rh] {
            v.clear();
            v.resize(len * h, 0.0);
        }
        tr.pre.resize(3 * h, 0.0);
        let (w, u, bias) = (flat(&p.w), flat(&p.u), p.b.as_slice().expect("contiguous"));
        for l in 0..len {
            let x = &tr.inputs[l * 3 * e..(l + 1) * 3 * e];
            let (prev, next) = tr.hs.split_at_mut((l + 1) * h);
            let h_prev = &prev[l * h..];
            let pre = &mut tr.pre;
            pre.copy_from_slice(bias);
            matvec_add(w, x, pre);
            matvec_add(&u[..2 * h * h], h_prev, &mut pre[..2 * h]);
            let span = l * h..(l + 1) * h;
            let (z, r, n, rh) = (
                &mut tr.z[span.clone()],
                &mut tr.r[span.clone()],
                &mut tr.n[span.clone()],
                &mut tr.rh[span],
            );
            for i in 0..h {
                z[i] = sigmoid(pre[i]);
                r[i] = sigmoid(pre[h + i]);
                rh[i] = r[i] * h_prev[i];
            }
            matvec_add(&u[2 * h * h..], rh, &mut pre[2 * h..]);
            for i in 0..h {
                n[i] = pre[2 * h + i].tanh();
                next[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
            }
        }
        let last = &tr.hs[len * h..];
        let logit = p.head_w.iter().zip(last).map(|(a, b)| a * b).sum::<f64>() + p.head_b;
        sigmoid(logit)
    }

    /// Predicted accuracy per architecture, each strictly inside `(0, 1)`.
    pub fn predict(&self, archs: &[Architecture]) -> Result<Vec<f64>> {
        let mut tr = Trace::default();
        archs
            .iter()
            .map(|a| {
                self.check(a)?;
                Ok(self.run(a, &mut tr))
            })
            .collect()
    }

    /// Squared-error gradient for one `(arch, target)` pair, accumulated
    /// into `grads`. Returns the squared error.
    fn accumulate(&self, arch: &Architecture, target: f64, grads: &mut Params, tr: &mut Trace) -> f64 {
        let (e, h) = (self.cfg.embed_dim, self.cfg.hidden_dim);
        let p = &self.params;
        let out = self.run(arch, tr);
        let len = arch.len();
        let err = out - target;
        let d_logit = 2.0 * err * out * (1.0 - out);
        let last = &tr.hs[len * h..];
        grads.head_w.iter_mut().zip(last).for_each(|(g, v)| *g += d_logit * v);
        grads.head_b += d_logit;
        let mut dh: Vec<f64> = p.head_w.iter().map(|v| v * d_logit).collect();

        let (w, u) = (flat(&p.w), flat(&p.u));
        let (u_zr, u_n) = u.split_at(2 * h * h);
        let mut da = vec![0.0; 3 * h];
        let mut dh_prev = vec![0.0; h];
        let mut d_rh = vec![0.0; h];
        let mut dx = vec![0.0; 3 * e];
        for l in (0..len).rev() {
            let span = l * h..(l + 1) * h;
            let (z, r, n, rh) = (&tr.z[span.clone()], &tr.r[span.clone()], &tr.n[span.clone()], &tr.rh[span]);
            let h_prev = &tr.hs[l * h..(l + 1) * h];
            for i in 0..h {
                let dn = dh[i] * (1.0 - z[i]);
                let dz = dh[i] * (h_prev[i] - n[i]);
                dh_prev[i] = dh[i] * z[i];
                da[i] = dz * z[i] * (1.0 - z[i]);
                da[2 * h + i] = dn * (1.0 - n[i] * n[i]);
            }
            d_rh.fill(0.0);
            matvec_t_add(u_n, &da[2 * h..], &mut d_rh);
            for i in 0..h {
                da[h + i] = d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
                dh_prev[i] += d_rh[i] * r[i];
            }
            matvec_t_add(u_zr, &da[..2 * h], &mut dh_prev);

            let x = &tr.inputs[l * 3 * e..(l + 1) * 3 * e];
            outer_add(flat_mut(&mut grads.w), &da, x);
            let gu = flat_mut(&mut grads.u);
            outer_add(&mut gu[..2 * h * h], &da[..2 * h], h_prev);
            outer_add(&mut gu[2 * h * h..], &da[2 * h..], rh);
            grads.b.iter_mut().zip(&da).for_each(|(g, d)| *g += d);

            dx.fill(0.0);
            matvec_t_add(w, &da, &mut dx);
            let t = arch.triplets()[l];
            for (table, row, part) in [
                (&mut grads.emb_m, t.x_tap(), &dx[..e]),
                (&mut grads.emb_n, t.y_tap(), &dx[e..2 * e]),
                (&mut grads.emb_p, t.activation(), &dx[2 * e..]),
            ] {
                table.row_mut(row).iter_mut().zip(part).for_each(|(g, d)| *g += d);
            }
            std::mem::swap(&mut dh, &mut dh_prev);
        }
        err * err
    }

    /// Mean squared error of the current predictions.
    pub fn mse(&self, archs: &[Architecture], targets: &[f64]) -> Result<f64> {
        if archs.len() != targets.len() {
            return Err(Error::Shape(format!("{} archs, {} targets", archs.len(), targets.len())));
        }
        if archs.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict(archs)?;
        Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / archs.len() as f64)
    }

    /// Per-sample SGD on squared error, `epochs` shuffled passes.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        archs: &[Architecture],
        accuracies: &[f64],
        epochs: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<()> {
        if archs.len() != accuracies.len() {
            return Err(Error::Shape(format!(
                "{} archs, {} accuracies",
                archs.len(),
                accuracies.len()
            )));
        }
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidArgument(format!("accuracy {a} outside [0, 1]")));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        for a in archs {
            self.check(a)?;
        }
        let mut order: Vec<usize> = (0..archs.len()).collect();
        let mut grads = Params::zeros_like(&self.params);
        let mut tr = Trace::default();
        for _ in 0..epochs {
            order.shuffle(rng);
            for &i in &order {
                reset(&mut grads);
                self.accumulate(&archs[i], accuracies[i], &mut grads, &mut tr);
                self.params.axpy(-lr, &grads);
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.flat().len()
    }
}

fn reset(p: &mut Params) {
    p.emb_m.fill(0.0);
    p.emb_n.fill(0.0);
    p.emb_p.fill(0.0);
    p.w.fill(0.0);
    p.u.fill(0.0);
    p.b.fill(0.0);
    p.head_w.fill(0.0);
    p.head_b = 0.0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::enumerate_level1;
    use crate::tensor::finite_diff_check;

    fn space() -> SpaceConfig {
        SpaceConfig::new(3, 2, 2, 4).unwrap()
    }

    fn small() -> SurrogateConfig {
        SurrogateConfig {
            embed_dim: 4,
            hidden_dim: 5,
        }
    }

    #[test]
    fn predictions_are_deterministic_and_bounded() {
        let m = SurrogateModel::new(&space(), SurrogateConfig::default(), 1).unwrap();
        let a = Architecture::from_tuples(&[(1, 2, 1), (3, 1, 2)]);
        let p = m.predict(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(p[0], p[1]);
        assert!(p[0] > 0.0 && p[0] < 1.0);
        let again = SurrogateModel::new(&space(), SurrogateConfig::default(), 1).unwrap();
        assert_eq!(again.predict(&[a]).unwrap(), vec![p[0]]);
    }

    #[test]
    fn order_matters() {
        let m = SurrogateModel::new(&space(), SurrogateConfig::default(), 2).unwrap();
        let ab = Architecture::from_tuples(&[(1, 2, 1), (3, 1, 2)]);
        let ba = Architecture::from_tuples(&[(3, 1, 2), (1, 2, 1)]);
        let p = m.predict(&[ab, ba]).unwrap();
        assert_ne!(p[0], p[1]);
    }

    #[test]
    fn variable_lengths_and_range_errors() {
        let m = SurrogateModel::new(&space(), small(), 3).unwrap();
        for len in 1..=4 {
            let a = Architecture::from_tuples(&vec![(2, 2, 2); len]);
            assert_eq!(m.predict(&[a]).unwrap().len(), 1);
        }
        assert!(m.predict(&[Architecture::from_tuples(&[(4, 1, 1)])]).is_err());
        assert!(m.predict(&[Architecture::from_tuples(&[(1, 1, 3)])]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = SurrogateModel::new(&space(), small(), 4).unwrap();
        let arch = Architecture::from_tuples(&[(1, 2, 1), (3, 1, 2), (2, 2, 1)]);
        let target = 0.8;
        let mut grads = Params::zeros_like(&m.params);
        m.accumulate(&arch, target, &mut grads, &mut Trace::default());
        let err = finite_diff_check(
            |p| {
                let mut mm = m.clone();
                mm.params.set_flat(p);
                (mm.predict(std::slice::from_ref(&arch)).unwrap()[0] - target).powi(2)
            },
            &grads.flat(),
            &m.params.flat(),
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = SurrogateModel::new(&space(), small(), 5).unwrap();
        let before = m.clone();
        let archs = enumerate_level1(&space());
        let accs = vec![0.5; archs.len()];
        m.update(&archs, &accs, 0, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn update_errors() {
        let mut m = SurrogateModel::new(&space(), small(), 5).unwrap();
        let archs = enumerate_level1(&space());
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert!(m.update(&archs, &[0.5], 1, 0.1, &mut r).is_err());
        let mut bad = vec![0.5; archs.len()];
        bad[0] = 1.5;
        assert!(m.update(&archs, &bad, 1, 0.1, &mut r).is_err());
    }

    #[test]
    fn memorizes_a_single_pair() {
        let mut m = SurrogateModel::new(&space(), SurrogateConfig::default(), 6).unwrap();
        let a = Architecture::from_tuples(&[(2, 1, 2), (1, 1, 1)]);
        m.update(std::slice::from_ref(&a), &[0.7], 300, 0.1, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let p = m.predict(&[a]).unwrap()[0];
        assert!((p - 0.7).abs() < 0.05, "{p}");
    }

    #[test]
    fn preserves_rank_of_two_targets() {
        let mut m = SurrogateModel::new(&space(), SurrogateConfig::default(), 7).unwrap();
        let lo = Architecture::from_tuples(&[(1, 1, 1)]);
        let hi = Architecture::from_tuples(&[(3, 2, 2), (2, 1, 1)]);
        m.update(&[lo.clone(), hi.clone()], &[0.2, 0.9], 200, 0.1, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        let p = m.predict(&[lo, hi]).unwrap();
        assert!(p[0] < p[1], "{p:?}");
    }

    #[test]
    fn training_does_not_increase_mse() {
        let sp = space();
        for seed in 0..20u64 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let n = r.gen_range(1..=32);
            let archs: Vec<Architecture> = (0..n)
                .map(|_| {
                    let len = r.gen_range(1..=sp.max_layers);
                    Architecture::from_tuples(
                        &(0..len)
                            .map(|_| (r.gen_range(1..=sp.m), r.gen_range(1..=sp.n), r.gen_range(1..=sp.p)))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            let accs: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            let mut m = SurrogateModel::new(&sp, SurrogateConfig::default(), seed).unwrap();
            let before = m.mse(&archs, &accs).unwrap();
            m.update(&archs, &accs, 200, 0.05, &mut r).unwrap();
            let after = m.mse(&archs, &accs).unwrap();
            assert!(after <= before, "seed {seed}: {before} -> {after}");
        }
    }
}
