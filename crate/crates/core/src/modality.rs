//! Unimodal feature extractors. Each network is a stack of dense layers
//! whose pooled outputs are the taps offered to the fusion search, plus a
//! softmax head used for pretraining and the final multitask loss.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Modality, Split};
use crate::error::{Error, Result};
use crate::tensor::{self, argmax, global_pool, softmax, Activation, Dense, DenseGrads, DenseTrace, Sgd, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapSource {
    Computed,
    Ingested,
}

/// Pooled per-layer features of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTapSet {
    pub taps: Vec<Vec<f64>>,
    pub source: TapSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityNetwork {
    layers: Vec<Dense>,
    head: Dense,
    frozen: bool,
}

/// Batched forward pass with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ModalityTrace {
    pub layers: Vec<DenseTrace>,
    pub head: DenseTrace,
}

impl ModalityTrace {
    pub fn tap(&self, index: usize) -> &Array2<f64> {
        &self.layers[index].out
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.head.out
    }
}

#[derive(Debug, Clone)]
pub struct ModalityGrads {
    pub layers: Vec<DenseGrads>,
    pub head: DenseGrads,
}

impl ModalityGrads {
    pub fn norm_sq(&self) -> f64 {
        self.layers.iter().map(DenseGrads::norm_sq).sum::<f64>() + self.head.norm_sq()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

impl ModalityNetwork {
    pub fn new<R: rand::Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        n_classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || input_dim == 0 || n_classes == 0 {
            return Err(Error::InvalidArgument(
                "extractor needs at least one layer and non-zero widths".into(),
            ));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for &w in widths {
            layers.push(Dense::new(prev, w, activation, rng));
            prev = w;
        }
        let head = Dense::new(prev, n_classes, Activation::Identity, rng);
        Ok(ModalityNetwork {
            layers,
            head,
            frozen: false,
        })
    }

    pub fn from_parts(layers: Vec<Dense>, head: Dense) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("extractor needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer widths do not compose: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if head.in_dim() != layers[layers.len() - 1].out_dim() {
            return Err(Error::Shape("head input does not match last layer".into()));
        }
        Ok(ModalityNetwork {
            layers,
            head,
            frozen: false,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn num_taps(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn tap_dims(&self) -> Vec<usize> {
        self.layers.iter().map(Dense::out_dim).collect()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) -> &mut Self {
        self.frozen = frozen;
        self
    }

    /// Taps `x_1..x_M` of a single input and the head's class scores.
    pub fn forward_with_taps(&self, input: &Tensor) -> Result<(FeatureTapSet, Vec<f64>)> {
        let mut current = global_pool(input)?;
        let mut taps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out = layer.apply(&current)?;
            current = global_pool(&Tensor::vector(out)?)?;
            taps.push(current.clone());
        }
        let scores = softmax(&self.head.apply(&current)?);
        Ok((
            FeatureTapSet {
                taps,
                source: TapSource::Computed,
            },
            scores,
        ))
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<ModalityTrace> {
        let mut traces: Vec<DenseTrace> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let trace = match traces.last() {
                None => layer.forward(input)?,
                Some(prev) => layer.forward(prev.out.view())?,
            };
            traces.push(trace);
        }
        let head = self.head.forward(traces[traces.len() - 1].out.view())?;
        Ok(ModalityTrace { layers: traces, head })
    }

    /// Tap matrices for a batch, one `(batch, dim)` matrix per layer.
    pub fn taps_batch(&self, input: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        Ok(self.forward_batch(input)?.layers.into_iter().map(|t| t.out).collect())
    }

    /// Parameter gradients from upstream gradients on any subset of taps and
    /// on the head logits. `None` when the network is frozen.
    pub fn backward<'a>(
        &self,
        input: ArrayView2<'a, f64>,
        trace: &'a ModalityTrace,
        d_taps: &[Option<Array2<f64>>],
        d_logits: Option<ArrayView2<'_, f64>>,
    ) -> Option<ModalityGrads> {
        if self.frozen {
            return None;
        }
        let last = self.layers.len() - 1;
        let (head_grads, mut carry) = match d_logits {
            Some(d) => {
                let (g, d_in) = self.head.backward(trace.layers[last].out.view(), &trace.head, d);
                (g, Some(d_in))
            }
            None => (self.head.zero_grads(), None),
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let mut d_out = carry.take();
            if let Some(Some(extra)) = d_taps.get(i) {
                d_out = Some(match d_out {
                    Some(d) => d + extra,
                    None => extra.clone(),
                });
            }
            let layer_in = if i == 0 { input } else { trace.layers[i - 1].out.view() };
            match d_out {
                Some(d) => {
                    let (g, d_in) = self.layers[i].backward(layer_in, &trace.layers[i], d.view());
                    grads.push(g);
                    if i > 0 {
                        carry = Some(d_in);
                    }
                }
                None => grads.push(self.layers[i].zero_grads()),
            }
        }
        grads.reverse();
        Some(ModalityGrads {
            layers: grads,
            head: head_grads,
        })
    }

    pub fn apply_grads(&mut self, grads: &ModalityGrads, lr: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen("cannot update a frozen extractor".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.sgd_step(g, lr)?;
        }
        self.head.sgd_step(&grads.head, lr)
    }

    pub fn accuracy(&self, split: &Split, modality: Modality) -> Result<f64> {
        if split.is_empty() {
            return Err(Error::InvalidArgument("accuracy over an empty split".into()));
        }
        let trace = self.forward_batch(split.inputs(modality))?;
        let hits = trace
            .logits()
            .outer_iter()
            .zip(&split.labels)
            .filter(|(row, &label)| argmax(&row.to_vec()) == label)
            .count();
        Ok(hits as f64 / split.len() as f64)
    }
}

/// Consuming form of [`ModalityNetwork::set_frozen`].
pub fn set_frozen(mut net: ModalityNetwork, frozen: bool) -> ModalityNetwork {
    net.set_frozen(frozen);
    net
}

/// Trains the extractor and its head on the full label with cross-entropy.
/// Returns per-epoch mean training loss and validation accuracy.
pub fn pretrain(
    net: &mut ModalityNetwork,
    modality: Modality,
    train: &Split,
    val: &Split,
    epochs: usize,
    sgd: &Sgd,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    if net.frozen {
        return Err(Error::Frozen("pretraining a frozen extractor".into()));
    }
    sgd.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = train.inputs(modality);
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut total = 0.0;
        for batch in sgd.batches(train.len(), &mut rng) {
            let x = inputs.select(ndarray::Axis(0), &batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let trace = net.forward_batch(x.view())?;
            let (loss, d_logits) = tensor::softmax_cross_entropy_batch(trace.logits().view(), &labels)?;
            total += loss * batch.len() as f64;
            let grads = net
                .backward(x.view(), &trace, &[], Some(d_logits.view()))
                .expect("checked unfrozen");
            net.apply_grads(&grads, sgd.lr)?;
        }
        curve.push(EpochStats {
            epoch,
            loss: total / train.len().max(1) as f64,
            val_accuracy: net.accuracy(val, modality)?,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use ndarray::Array1;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn identity_layer_taps() {
        let layer = Dense::from_parts(Array2::eye(3), Array1::zeros(3), Activation::Relu).unwrap();
        let head = Dense::zeros(3, 2, Activation::Identity);
        let net = ModalityNetwork::from_parts(vec![layer], head).unwrap();
        let v = vec![0.5, 0.0, 2.0];
        let (taps, scores) = net.forward_with_taps(&Tensor::vector(v.clone()).unwrap()).unwrap();
        assert_eq!(taps.taps, vec![v]);
        assert_eq!(scores, vec![0.5, 0.5]);
    }

    #[test]
    fn tap_count_and_zero_sigmoid() {
        let mut net = ModalityNetwork::new(6, &[5, 4, 3, 2], 3, Activation::Sigmoid, &mut rng()).unwrap();
        let input = Tensor::vector(vec![0.3; 6]).unwrap();
        assert_eq!(net.forward_with_taps(&input).unwrap().0.taps.len(), 4);

        let zeroed: Vec<Dense> = net
            .layers
            .iter()
            .map(|l| Dense::zeros(l.in_dim(), l.out_dim(), Activation::Sigmoid))
            .collect();
        net.layers = zeroed;
        let (taps, _) = net.forward_with_taps(&input).unwrap();
        assert!(taps.taps.iter().flatten().all(|&v| v == 0.5));
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let net = ModalityNetwork::new(4, &[6, 5], 3, Activation::Relu, &mut rng()).unwrap();
        let input = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let taps = net.taps_batch(input.view()).unwrap();
        for i in 0..3 {
            let (single, _) = net
                .forward_with_taps(&Tensor::vector(input.row(i).to_vec()).unwrap())
                .unwrap();
            for (l, tap) in single.taps.iter().enumerate() {
                for (a, b) in tap.iter().zip(taps[l].row(i)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let net = ModalityNetwork::new(4, &[3], 2, Activation::Relu, &mut rng()).unwrap();
        assert!(net.forward_with_taps(&Tensor::vector(vec![1.0; 5]).unwrap()).is_err());
        let bad = vec![Dense::zeros(4, 3, Activation::Relu), Dense::zeros(2, 2, Activation::Relu)];
        assert!(ModalityNetwork::from_parts(bad, Dense::zeros(2, 2, Activation::Identity)).is_err());
    }

    fn tiny_splits() -> crate::data::Splits {
        generate(&SynthSpec {
            n_train: 200,
            n_val: 100,
            n_test: 10,
            dim_x: 16,
            dim_y: 16,
            n_distractor: 4,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let s = tiny_splits();
        let mut net = ModalityNetwork::new(16, &[8, 8], 16, Activation::Relu, &mut rng()).unwrap();
        let before = net.clone();
        let curve = pretrain(&mut net, Modality::X, &s.train, &s.val, 0, &Sgd::default(), 1).unwrap();
        assert!(curve.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn pretrain_is_deterministic() {
        let s = tiny_splits();
        let base = ModalityNetwork::new(16, &[8, 8], 16, Activation::Relu, &mut rng()).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        let ca = pretrain(&mut a, Modality::X, &s.train, &s.val, 2, &Sgd::default(), 9).unwrap();
        let cb = pretrain(&mut b, Modality::X, &s.train, &s.val, 2, &Sgd::default(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_ne!(a, base);
    }

    #[test]
    fn frozen_rejects_training() {
        let s = tiny_splits();
        let mut net = ModalityNetwork::new(16, &[8], 16, Activation::Relu, &mut rng()).unwrap();
        net.set_frozen(true).set_frozen(true);
        assert!(net.is_frozen());
        assert!(pretrain(&mut net, Modality::X, &s.train, &s.val, 1, &Sgd::default(), 1).is_err());
        let trace = net.forward_batch(s.train.x.view()).unwrap();
        assert!(net.backward(s.train.x.view(), &trace, &[], Some(trace.head.out.view())).is_none());
    }

    #[test]
    fn unfrozen_gradients_are_nonzero() {
        let s = tiny_splits();
        let net = set_frozen(
            set_frozen(
                ModalityNetwork::new(16, &[8, 8], 16, Activation::Relu, &mut rng()).unwrap(),
                true,
            ),
            false,
        );
        let x = s.train.x.view();
        let trace = net.forward_batch(x).unwrap();
        let (_, d) = tensor::softmax_cross_entropy_batch(trace.logits().view(), &s.train.labels).unwrap();
        let grads = net.backward(x, &trace, &[], Some(d.view())).unwrap();
        assert!(grads.layers.iter().all(|g| g.norm_sq() > 0.0));
    }

    #[test]
    fn backward_through_taps_matches_finite_differences() {
        let mut r = rng();
        let net = ModalityNetwork::new(3, &[4, 3], 2, Activation::Sigmoid, &mut r).unwrap();
        let x = Array2::from_shape_fn((2, 3), |(i, j)| 0.2 * i as f64 - 0.4 * j as f64 + 0.1);
        let w0 = Array2::from_shape_fn((2, 4), |(i, j)| 0.3 * (i + j) as f64 - 0.5);
        let w1 = Array2::from_shape_fn((2, 3), |(i, j)| 0.7 - 0.2 * (i * j) as f64);
        let loss = |n: &ModalityNetwork| {
            let t = n.forward_batch(x.view()).unwrap();
            (t.tap(0) * &w0).sum() + (t.tap(1) * &w1).sum() + t.logits().sum()
        };
        let trace = net.forward_batch(x.view()).unwrap();
        let ones = Array2::ones((2, 2));
        let grads = net
            .backward(x.view(), &trace, &[Some(w0.clone()), Some(w1.clone())], Some(ones.view()))
            .unwrap();
        let point = net.layers[0].flat_params();
        let mut analytic: Vec<f64> = grads.layers[0].weight.iter().copied().collect();
        analytic.extend(grads.layers[0].bias.iter());
        let err = tensor::finite_diff_check(
            |p| {
                let mut n = net.clone();
                n.layers[0].set_flat_params(p).unwrap();
                loss(&n)
            },
            &analytic,
            &point,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn noiseless_unimodal_accuracy_hits_ceiling() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            n_train: 2000,
            n_val: 1000,
            n_test: 10,
            ..SynthSpec::default()
        };
        let s = generate(&spec).unwrap();
        let mut net = ModalityNetwork::new(32, &[64, 64], 16, Activation::Relu, &mut rng()).unwrap();
        let curve = pretrain(&mut net, Modality::X, &s.train, &s.val, 8, &Sgd::default(), 3).unwrap();
        let acc = curve.last().unwrap().val_accuracy;
        assert!((acc - 0.25).abs() <= 0.03, "val accuracy {acc}");
    }
}
