//! Fusion networks built from architecture descriptions.
//!
//! Layer `l` consumes `[x_{gm}; y_{gn}; h_{l-1}]` (no `h` for the first
//! layer) and emits `h_l = σ_{gp}(W_l · input + b_l)`; a fresh dense head on
//! `h_L` produces the fused class scores.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Modality, Split};
use crate::error::{Error, Result};
use crate::formats::FeatureFile;
use crate::modality::{FeatureTapSet, ModalityNetwork};
use crate::space::Architecture;
use crate::tensor::{
    self, argmax, softmax, softmax_cross_entropy_batch, Activation, Dense, DenseGrads, DenseTrace, Sgd,
};

/// Tap widths of both modalities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapShape {
    pub x_dims: Vec<usize>,
    pub y_dims: Vec<usize>,
}

impl TapShape {
    pub fn of(f: &ModalityNetwork, g: &ModalityNetwork) -> Self {
        TapShape {
            x_dims: f.tap_dims(),
            y_dims: g.tap_dims(),
        }
    }
}

/// Tap matrices of a whole split, computed once from frozen extractors or
/// ingested from feature files.
#[derive(Debug, Clone, PartialEq)]
pub struct TapData {
    pub x: Vec<Array2<f64>>,
    pub y: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl TapData {
    pub fn from_extractors(f: &ModalityNetwork, g: &ModalityNetwork, split: &Split) -> Result<Self> {
        if !f.is_frozen() || !g.is_frozen() {
            return Err(Error::UnfrozenExtractors);
        }
        Self::compute(f, g, split)
    }

    fn compute(f: &ModalityNetwork, g: &ModalityNetwork, split: &Split) -> Result<Self> {
        Ok(TapData {
            x: f.taps_batch(split.inputs(Modality::X))?,
            y: g.taps_batch(split.inputs(Modality::Y))?,
            labels: split.labels.clone(),
            n_classes: split.n_classes,
        })
    }

    pub fn from_features(x: &FeatureFile, y: &FeatureFile) -> Result<Self> {
        if x.labels != y.labels {
            return Err(Error::InvalidArgument(
                "feature files disagree on sample labels".into(),
            ));
        }
        if x.n_classes != y.n_classes {
            return Err(Error::InvalidArgument("feature files disagree on class count".into()));
        }
        Ok(TapData {
            x: x.tap_matrices(),
            y: y.tap_matrices(),
            labels: x.labels.clone(),
            n_classes: x.n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> TapShape {
        TapShape {
            x_dims: self.x.iter().map(|t| t.ncols()).collect(),
            y_dims: self.y.iter().map(|t| t.ncols()).collect(),
        }
    }

    fn rows(taps: &[Array2<f64>], idx: &[usize]) -> Vec<Array2<f64>> {
        taps.iter().map(|t| t.select(Axis(0), idx)).collect()
    }
}

/// Last trained parameters per `(layer position, weight shape)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SharedWeightStore {
    entries: BTreeMap<(usize, (usize, usize)), Dense>,
}

impl SharedWeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exact match on both the layer position and the `(out, in)` shape.
    pub fn get(&self, layer: usize, shape: (usize, usize)) -> Option<&Dense> {
        self.entries.get(&(layer, shape))
    }

    /// Overwrites the entry of every fusion layer of `net`.
    pub fn record(&mut self, net: &FusionNetwork) {
        for (l, layer) in net.layers.iter().enumerate() {
            self.entries.insert((l, layer.shape()), layer.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNetwork {
    arch: Architecture,
    layers: Vec<Dense>,
    classifier: Dense,
    hidden_dim: usize,
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    inputs: Vec<Array2<f64>>,
    layers: Vec<DenseTrace>,
    logits: DenseTrace,
}

impl FusionTrace {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits.out
    }
}

#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub layers: Vec<DenseGrads>,
    pub classifier: DenseGrads,
}

/// Gradients reaching the extractor taps, indexed by 0-based tap.
#[derive(Debug, Clone)]
pub struct TapGrads {
    pub x: Vec<Option<Array2<f64>>>,
    pub y: Vec<Option<Array2<f64>>>,
}

fn accumulate(slot: &mut Option<Array2<f64>>, grad: ArrayView2<'_, f64>) {
    match slot {
        Some(acc) => *acc += &grad,
        None => *slot = Some(grad.to_owned()),
    }
}

impl FusionNetwork {
    /// Builds the layer stack for `arch`. Each fusion layer starts from the
    /// store entry with the same position and shape when one exists, else
    /// from a fresh seeded init. The classifier head is always fresh.
    pub fn build<R: Rng + ?Sized>(
        arch: &Architecture,
        shape: &TapShape,
        n_classes: usize,
        hidden_dim: usize,
        store: &SharedWeightStore,
        rng: &mut R,
    ) -> Result<Self> {
        if arch.is_empty() {
            return Err(crate::space::SpaceError::Empty.into());
        }
        if hidden_dim == 0 || n_classes == 0 {
            return Err(Error::InvalidArgument("hidden_dim and n_classes must be positive".into()));
        }
        let mut layers = Vec::with_capacity(arch.len());
        for (l, t) in arch.triplets().iter().enumerate() {
            let x_dim = t
                .gm
                .checked_sub(1)
                .and_then(|i| shape.x_dims.get(i))
                .ok_or_else(|| mismatch(arch, l, "gm", t.gm, shape.x_dims.len()))?;
            let y_dim = t
                .gn
                .checked_sub(1)
                .and_then(|i| shape.y_dims.get(i))
                .ok_or_else(|| mismatch(arch, l, "gn", t.gn, shape.y_dims.len()))?;
            let activation = Activation::from_index(t.gp)
                .ok_or_else(|| mismatch(arch, l, "gp", t.gp, Activation::CHOICES.len()))?;
            let in_dim = x_dim + y_dim + if l > 0 { hidden_dim } else { 0 };
            let layer = match store.get(l, (hidden_dim, in_dim)) {
                Some(shared) => Dense {
                    activation,
                    ..shared.clone()
                },
                None => Dense::new(in_dim, hidden_dim, activation, rng),
            };
            layers.push(layer);
        }
        let classifier = Dense::new(hidden_dim, n_classes, Activation::Identity, rng);
        Ok(FusionNetwork {
            arch: arch.clone(),
            layers,
            classifier,
            hidden_dim,
        })
    }

    pub fn from_parts(arch: Architecture, layers: Vec<Dense>, classifier: Dense, shape: &TapShape) -> Result<Self> {
        if layers.len() != arch.len() || layers.is_empty() {
            return Err(Error::Shape("one dense layer per triplet required".into()));
        }
        let hidden_dim = layers[0].out_dim();
        for (l, (layer, t)) in layers.iter().zip(arch.triplets()).enumerate() {
            let x = shape.x_dims.get(t.gm.wrapping_sub(1));
            let y = shape.y_dims.get(t.gn.wrapping_sub(1));
            let (Some(x), Some(y)) = (x, y) else {
                return Err(mismatch(&arch, l, "gm/gn", t.gm, shape.x_dims.len()));
            };
            let expected = (hidden_dim, x + y + if l > 0 { hidden_dim } else { 0 });
            if layer.shape() != expected {
                return Err(Error::Shape(format!(
                    "fusion layer {} has shape {:?}, expected {expected:?}",
                    l + 1,
                    layer.shape()
                )));
            }
        }
        if classifier.in_dim() != hidden_dim {
            return Err(Error::Shape("classifier input differs from hidden_dim".into()));
        }
        Ok(FusionNetwork {
            arch,
            layers,
            classifier,
            hidden_dim,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn classifier(&self) -> &Dense {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Dense {
        &mut self.classifier
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn forward_batch(&self, x_taps: &[Array2<f64>], y_taps: &[Array2<f64>]) -> Result<FusionTrace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut traces: Vec<DenseTrace> = Vec::with_capacity(self.layers.len());
        for (layer, t) in self.layers.iter().zip(self.arch.triplets()) {
            let x = x_taps
                .get(t.x_tap())
                .ok_or_else(|| Error::Shape(format!("no x tap {}", t.gm)))?;
            let y = y_taps
                .get(t.y_tap())
                .ok_or_else(|| Error::Shape(format!("no y tap {}", t.gn)))?;
            if x.nrows() != y.nrows() {
                return Err(Error::Shape("tap batches differ in length".into()));
            }
            let input = match traces.last() {
                None => concatenate![Axis(1), x.view(), y.view()],
                Some(prev) => concatenate![Axis(1), x.view(), y.view(), prev.out.view()],
            };
            let trace = layer.forward(input.view())?;
            inputs.push(input);
            traces.push(trace);
        }
        let logits = self.classifier.forward(traces[traces.len() - 1].out.view())?;
        Ok(FusionTrace {
            inputs,
            layers: traces,
            logits,
        })
    }

    /// Parameter gradients, plus tap gradients when a tap shape is given.
    pub fn backward(
        &self,
        trace: &FusionTrace,
        d_logits: ArrayView2<'_, f64>,
        shape: Option<&TapShape>,
    ) -> (FusionGrads, Option<TapGrads>) {
        let last = self.layers.len() - 1;
        let (classifier, mut d_h) = self
            .classifier
            .backward(trace.layers[last].out.view(), &trace.logits, d_logits);
        let mut taps = shape.map(|s| TapGrads {
            x: vec![None; s.x_dims.len()],
            y: vec![None; s.y_dims.len()],
        });
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let t = self.arch.triplets()[l];
            let layer = &self.layers[l];
            if l == 0 && taps.is_none() {
                grads.push(layer.backward_params(trace.inputs[l].view(), &trace.layers[l], d_h.view()));
                break;
            }
            let (g, d_in) = layer.backward(trace.inputs[l].view(), &trace.layers[l], d_h.view());
            grads.push(g);
            if let (Some(tg), Some(s)) = (taps.as_mut(), shape) {
                let xw = s.x_dims[t.x_tap()];
                let yw = s.y_dims[t.y_tap()];
                accumulate(&mut tg.x[t.x_tap()], d_in.slice(s![.., ..xw]));
                accumulate(&mut tg.y[t.y_tap()], d_in.slice(s![.., xw..xw + yw]));
            }
            if l > 0 {
                let xw = layer.in_dim() - self.hidden_dim;
                d_h = d_in.slice(s![.., xw..]).to_owned();
            }
        }
        grads.reverse();
        (
            FusionGrads {
                layers: grads,
                classifier,
            },
            taps,
        )
    }

    pub fn apply_grads(&mut self, grads: &FusionGrads, lr: f64) -> Result<()> {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.sgd_step(g, lr)?;
        }
        self.classifier.sgd_step(&grads.classifier, lr)
    }

    /// Fused class probabilities for a single sample.
    pub fn fusion_forward(&self, x: &FeatureTapSet, y: &FeatureTapSet) -> Result<Vec<f64>> {
        let as_rows = |set: &FeatureTapSet| -> Vec<Array2<f64>> {
            set.taps
                .iter()
                .map(|t| Array2::from_shape_vec((1, t.len()), t.clone()).expect("row vector"))
                .collect()
        };
        let trace = self.forward_batch(&as_rows(x), &as_rows(y))?;
        Ok(softmax(&trace.logits().row(0).to_vec()))
    }

    /// Predicted class per row; ties go to the lowest class index.
    pub fn predict(&self, data: &TapData) -> Result<Vec<usize>> {
        let trace = self.forward_batch(&data.x, &data.y)?;
        Ok(trace
            .logits()
            .outer_iter()
            .map(|r| argmax(&r.to_vec()))
            .collect())
    }
}

fn mismatch(arch: &Architecture, layer: usize, field: &str, value: usize, bound: usize) -> Error {
    Error::Shape(format!(
        "{arch}: triplet {} {field}={value} has no counterpart (1..={bound})",
        layer + 1
    ))
}

/// Runs `epochs` of SGD on the fused cross-entropy only; the taps are
/// constants. Afterwards every fusion layer is written to `store`.
pub fn train_short<R: Rng + ?Sized>(
    net: &mut FusionNetwork,
    data: &TapData,
    epochs: usize,
    sgd: &Sgd,
    store: &mut SharedWeightStore,
    rng: &mut R,
) -> Result<()> {
    sgd.validate()?;
    if epochs == 0 {
        return Ok(());
    }
    for _ in 0..epochs {
        fusion_epoch(net, data, sgd, rng)?;
    }
    store.record(net);
    Ok(())
}

fn fusion_epoch<R: Rng + ?Sized>(net: &mut FusionNetwork, data: &TapData, sgd: &Sgd, rng: &mut R) -> Result<f64> {
    let mut total = 0.0;
    for batch in sgd.batches(data.len(), rng) {
        let x = TapData::rows(&data.x, &batch);
        let y = TapData::rows(&data.y, &batch);
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        let trace = net.forward_batch(&x, &y)?;
        let (loss, d_logits) = softmax_cross_entropy_batch(trace.logits().view(), &labels)?;
        total += loss * batch.len() as f64;
        let (grads, _) = net.backward(&trace, d_logits.view(), None);
        net.apply_grads(&grads, sgd.lr)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Top-1 accuracy of the fused prediction.
pub fn evaluate(net: &FusionNetwork, data: &TapData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation over an empty split".into()));
    }
    let predictions = net.predict(data)?;
    let hits = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Extractors plus the fusion network on top of them.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedModel {
    pub f: ModalityNetwork,
    pub g: ModalityNetwork,
    pub fusion: FusionNetwork,
}

impl FusedModel {
    pub fn accuracy(&self, split: &Split) -> Result<f64> {
        if split.is_empty() {
            return Err(Error::InvalidArgument("evaluation over an empty split".into()));
        }
        evaluate(&self.fusion, &TapData::compute(&self.f, &self.g, split)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalOptions {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// Weights of the `x`, `y` and fused cross-entropies in phase 2.
    pub loss_weights: [f64; 3],
    pub sgd: Sgd,
    pub seed: u64,
}

impl Default for FinalOptions {
    fn default() -> Self {
        FinalOptions {
            phase1_epochs: 4,
            phase2_epochs: 4,
            loss_weights: [1.0 / 3.0; 3],
            sgd: Sgd::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalEpoch {
    pub phase: u8,
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

/// Two-phase training of a found architecture: fused loss with frozen
/// extractors, then the weighted three-way loss with everything trainable.
/// Extractors end frozen.
pub fn final_train(model: &mut FusedModel, train: &Split, val: &Split, opts: &FinalOptions) -> Result<Vec<FinalEpoch>> {
    opts.sgd.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut curve = Vec::new();

    model.f.set_frozen(true);
    model.g.set_frozen(true);
    let taps = TapData::from_extractors(&model.f, &model.g, train)?;
    let val_taps = TapData::from_extractors(&model.f, &model.g, val)?;
    for epoch in 1..=opts.phase1_epochs {
        let loss = fusion_epoch(&mut model.fusion, &taps, &opts.sgd, &mut rng)?;
        curve.push(FinalEpoch {
            phase: 1,
            epoch,
            loss,
            val_accuracy: evaluate(&model.fusion, &val_taps)?,
        });
    }
    drop(taps);

    if opts.phase2_epochs > 0 {
        model.f.set_frozen(false);
        model.g.set_frozen(false);
        let shape = TapShape::of(&model.f, &model.g);
        let [wx, wy, wxy] = opts.loss_weights;
        for epoch in 1..=opts.phase2_epochs {
            let mut total = 0.0;
            for batch in opts.sgd.batches(train.len(), &mut rng) {
                let (xb, yb, labels) = train.gather(&batch);
                let ft = model.f.forward_batch(xb.view())?;
                let gt = model.g.forward_batch(yb.view())?;
                let x_taps: Vec<Array2<f64>> = ft.layers.iter().map(|t| t.out.clone()).collect();
                let y_taps: Vec<Array2<f64>> = gt.layers.iter().map(|t| t.out.clone()).collect();
                let trace = model.fusion.forward_batch(&x_taps, &y_taps)?;

                let (lx, dx) = softmax_cross_entropy_batch(ft.logits().view(), &labels)?;
                let (ly, dy) = softmax_cross_entropy_batch(gt.logits().view(), &labels)?;
                let (lxy, dxy) = softmax_cross_entropy_batch(trace.logits().view(), &labels)?;
                total += tensor::weighted_multi_loss(&[lx, ly, lxy], &opts.loss_weights)? * batch.len() as f64;

                let (fusion_grads, tap_grads) =
                    model.fusion.backward(&trace, (dxy * wxy).view(), Some(&shape));
                let tap_grads = tap_grads.expect("requested");
                let f_grads = model
                    .f
                    .backward(xb.view(), &ft, &tap_grads.x, Some((dx * wx).view()))
                    .expect("unfrozen");
                let g_grads = model
                    .g
                    .backward(yb.view(), &gt, &tap_grads.y, Some((dy * wy).view()))
                    .expect("unfrozen");
                model.fusion.apply_grads(&fusion_grads, opts.sgd.lr)?;
                model.f.apply_grads(&f_grads, opts.sgd.lr)?;
                model.g.apply_grads(&g_grads, opts.sgd.lr)?;
            }
            curve.push(FinalEpoch {
                phase: 2,
                epoch,
                loss: total / train.len().max(1) as f64,
                val_accuracy: model.accuracy(val)?,
            });
        }
        model.f.set_frozen(true);
        model.g.set_frozen(true);
    }
    Ok(curve)
}
