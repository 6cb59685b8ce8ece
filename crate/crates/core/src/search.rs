//! Progressive search driver, random-search baseline and final selection.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    evaluate, final_train, train_short, FinalEpoch, FinalOptions, FusedModel, FusionNetwork, SharedWeightStore,
    TapData, TapShape,
};
use crate::data::Split;
use crate::modality::ModalityNetwork;
use crate::space::{self, Architecture, SpaceConfig, Triplet};
use crate::surrogate::{SurrogateConfig, SurrogateModel};
use crate::tensor::{sigmoid, Sgd};

fn default_cache() -> bool {
    true
}

fn default_surrogate_epochs() -> usize {
    20
}

fn default_surrogate_lr() -> f64 {
    1.0
}

/// Knobs of one search run. The number of fusion layers lives in
/// [`SpaceConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(rename = "E_search")]
    pub e_search: usize,
    #[serde(rename = "E_train")]
    pub e_train: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T_max")]
    pub t_max: f64,
    #[serde(rename = "T_min")]
    pub t_min: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    /// Reuse ledger accuracies for architectures met in earlier steps.
    #[serde(default = "default_cache")]
    pub cache: bool,
    #[serde(default = "default_surrogate_epochs")]
    pub surrogate_epochs: usize,
    #[serde(default = "default_surrogate_lr")]
    pub surrogate_lr: f64,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    /// Evaluation budget of the random baseline; `None` matches the
    /// uncached call count of the progressive search.
    #[serde(default)]
    pub budget: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            e_search: 3,
            e_train: 2,
            k: 10,
            t_max: 1.0,
            t_min: 0.001,
            seed: 0,
            hidden_dim: 32,
            cache: true,
            surrogate_epochs: default_surrogate_epochs(),
            surrogate_lr: default_surrogate_lr(),
            surrogate: SurrogateConfig::default(),
            budget: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.e_search == 0 || self.k == 0 || self.hidden_dim == 0 {
            return bad("E_search, K and hidden_dim must be at least 1");
        }
        if !(self.t_min > 0.0 && self.t_max > self.t_min && self.t_max.is_finite()) {
            return bad("temperatures must satisfy T_max > T_min > 0");
        }
        if !(self.surrogate_lr > 0.0 && self.surrogate_lr.is_finite()) {
            return bad("surrogate_lr must be positive");
        }
        if self.surrogate.embed_dim == 0 || self.surrogate.hidden_dim == 0 {
            return bad("surrogate dims must be at least 1");
        }
        if self.budget == Some(0) {
            return bad("budget must be at least 1");
        }
        Ok(())
    }

    /// Evaluator calls made by the progressive search without caching.
    pub fn uncached_calls(&self, space: &SpaceConfig) -> usize {
        self.e_search * (space.level_size() + (space.max_layers - 1) * self.k)
    }
}

/// Scores one architecture. Implementations may keep state (for instance
/// shared fusion weights) across calls; calls arrive in search order.
pub trait Evaluator {
    fn train_and_score(&mut self, arch: &Architecture) -> Result<f64>;
}

/// Builds, briefly trains and validates a fusion network on precomputed
/// taps, sharing fusion weights across calls.
#[derive(Debug, Clone)]
pub struct RealTrainer {
    train: TapData,
    val: TapData,
    shape: TapShape,
    n_classes: usize,
    hidden_dim: usize,
    e_train: usize,
    sgd: Sgd,
    store: SharedWeightStore,
    rng: ChaCha8Rng,
}

impl RealTrainer {
    pub fn new(train: TapData, val: TapData, hidden_dim: usize, e_train: usize, sgd: Sgd, seed: u64) -> Result<Self> {
        sgd.validate()?;
        if train.shape() != val.shape() || train.n_classes != val.n_classes {
            return Err(Error::Shape("train and validation taps differ in shape".into()));
        }
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument("empty training or validation split".into()));
        }
        Ok(RealTrainer {
            shape: train.shape(),
            n_classes: train.n_classes,
            train,
            val,
            hidden_dim,
            e_train,
            sgd,
            store: SharedWeightStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Taps from frozen extractors.
    pub fn from_extractors(
        f: &ModalityNetwork,
        g: &ModalityNetwork,
        train: &Split,
        val: &Split,
        cfg: &SearchConfig,
        sgd: Sgd,
    ) -> Result<Self> {
        let train = TapData::from_extractors(f, g, train)?;
        let val = TapData::from_extractors(f, g, val)?;
        RealTrainer::new(train, val, cfg.hidden_dim, cfg.e_train, sgd, cfg.seed)
    }

    pub fn tap_shape(&self) -> &TapShape {
        &self.shape
    }

    pub fn store(&self) -> &SharedWeightStore {
        &self.store
    }
}

impl Evaluator for RealTrainer {
    fn train_and_score(&mut self, arch: &Architecture) -> Result<f64> {
        let mut net = FusionNetwork::build(arch, &self.shape, self.n_classes, self.hidden_dim, &self.store, &mut self.rng)?;
        train_short(&mut net, &self.train, self.e_train, &self.sgd, &mut self.store, &mut self.rng)?;
        evaluate(&net, &self.val)
    }
}

/// Fixed pseudo-random map from architectures to scores in `(0, 1)`.
///
/// Each triplet carries a seeded utility and layer `l` contributes it with
/// weight `0.7^(l-1)`; a small per-architecture term breaks the additive
/// structure. Pure and repeatable.
#[derive(Debug, Clone)]
pub struct DeterministicOracle {
    space: SpaceConfig,
    seed: u64,
    calls: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[-1, 1)`.
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl DeterministicOracle {
    pub fn new(space: SpaceConfig, seed: u64) -> Self {
        DeterministicOracle { space, seed, calls: 0 }
    }

    fn utility(&self, t: &Triplet) -> f64 {
        let key = ((t.gm as u64) << 42) ^ ((t.gn as u64) << 21) ^ t.gp as u64;
        unit(splitmix64(self.seed ^ splitmix64(key)))
    }

    fn noise(&self, arch: &Architecture) -> f64 {
        let h = arch.triplets().iter().fold(splitmix64(self.seed.rotate_left(17)), |h, t| {
            let key = ((t.gm as u64) << 42) ^ ((t.gn as u64) << 21) ^ t.gp as u64;
            splitmix64(h ^ key)
        });
        unit(h)
    }

    pub fn score(&self, arch: &Architecture) -> Result<f64> {
        space::validate(arch, &self.space)?;
        let mut total = 0.0;
        let mut weight = 1.0;
        for t in arch.triplets() {
            total += weight * self.utility(t);
            weight *= 0.7;
        }
        Ok(sigmoid(total + 0.1 * self.noise(arch)))
    }

    /// Evaluator calls answered so far.
    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Evaluator for DeterministicOracle {
    fn train_and_score(&mut self, arch: &Architecture) -> Result<f64> {
        self.calls += 1;
        self.score(arch)
    }
}

/// `exp(s/T)` normalized; shifted by the maximum for stability.
pub fn compute_probs(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to normalize".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Draws up to `k` distinct items without replacement, renormalizing the
/// remaining mass after each draw. Once the remaining mass is zero the
/// earliest remaining item is taken.
pub fn sample_k<T: Clone, R: Rng + ?Sized>(items: &[T], probs: &[f64], k: usize, rng: &mut R) -> Result<Vec<T>> {
    if items.len() != probs.len() {
        return Err(Error::Shape(format!("{} items, {} probabilities", items.len(), probs.len())));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
    }
    if k >= items.len() {
        return Ok(items.to_vec());
    }
    let mut remaining: Vec<usize> = (0..items.len()).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mass: f64 = remaining.iter().map(|&i| probs[i]).sum();
        let pos = if mass > 0.0 {
            let u = rng.gen::<f64>() * mass;
            let mut acc = 0.0;
            let mut pos = None;
            for (j, &i) in remaining.iter().enumerate() {
                acc += probs[i];
                if u < acc && probs[i] > 0.0 {
                    pos = Some(j);
                    break;
                }
            }
            // rounding can leave `u` just above the accumulated mass
            pos.unwrap_or_else(|| remaining.iter().rposition(|&i| probs[i] > 0.0).unwrap_or(0))
        } else {
            0
        };
        picked.push(items[remaining.remove(pos)].clone());
    }
    Ok(picked)
}

/// `T(t) = T_max (T_min/T_max)^(t/(S-1))`; a single-step schedule stays at
/// `T_max`.
pub fn update_temperature(t_max: f64, t_min: f64, step: usize, total_steps: usize) -> Result<f64> {
    if !(t_min > 0.0 && t_max > t_min) {
        return Err(Error::InvalidArgument(format!("need T_max > T_min > 0, got {t_max}, {t_min}")));
    }
    if total_steps == 0 || step >= total_steps {
        return Err(Error::InvalidArgument(format!("step {step} outside 0..{total_steps}")));
    }
    if total_steps == 1 {
        return Ok(t_max);
    }
    if step == total_steps - 1 {
        return Ok(t_min);
    }
    let frac = step as f64 / (total_steps - 1) as f64;
    Ok((t_max * (t_min / t_max).powf(frac)).clamp(t_min, t_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub arch: Architecture,
    pub accuracy: f64,
    /// Position in discovery order.
    pub discovered: usize,
}

/// One evaluator call.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogRow {
    pub step: usize,
    pub iteration: usize,
    pub level: usize,
    pub arch: Architecture,
    pub predicted: Option<f64>,
    pub accuracy: f64,
    pub temperature: Option<f64>,
}

/// Deduplicated record of every evaluated architecture.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    records: Vec<EvaluationRecord>,
    index: HashMap<Architecture, usize>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    /// Inserts or raises the stored accuracy to the maximum observed.
    pub fn record(&mut self, arch: &Architecture, accuracy: f64) {
        match self.index.get(arch) {
            Some(&i) => {
                let r = &mut self.records[i];
                r.accuracy = r.accuracy.max(accuracy);
            }
            None => {
                self.index.insert(arch.clone(), self.records.len());
                self.records.push(EvaluationRecord {
                    arch: arch.clone(),
                    accuracy,
                    discovered: self.records.len(),
                });
            }
        }
    }

    pub fn get(&self, arch: &Architecture) -> Option<f64> {
        self.index.get(arch).map(|&i| self.records[i].accuracy)
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn best(&self) -> Option<f64> {
        self.records.iter().map(|r| r.accuracy).fold(None, |m, a| Some(m.map_or(a, |m: f64| m.max(a))))
    }

    /// Best `k` by accuracy; ties go to earlier discovery, then to the
    /// lexicographically smaller architecture.
    pub fn top_k(&self, k: usize) -> Vec<EvaluationRecord> {
        let mut sorted = self.records.clone();
        sorted.sort_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then(a.discovered.cmp(&b.discovered))
                .then_with(|| a.arch.cmp(&b.arch))
        });
        sorted.truncate(k);
        sorted
    }

    fn split(&self) -> (Vec<Architecture>, Vec<f64>) {
        self.records.iter().map(|r| (r.arch.clone(), r.accuracy)).unzip()
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub top_k: Vec<EvaluationRecord>,
    pub log: Vec<StepLogRow>,
    pub ledger: Ledger,
    /// Number of evaluator calls.
    pub evaluations: usize,
}

struct Driver<'a, E: Evaluator> {
    evaluator: &'a mut E,
    ledger: Ledger,
    log: Vec<StepLogRow>,
    cache: bool,
    evaluations: usize,
}

impl<E: Evaluator> Driver<'_, E> {
    /// Scores `archs`, logging one row per evaluator call.
    fn score(
        &mut self,
        archs: &[Architecture],
        predicted: Option<&[f64]>,
        at: (usize, usize, usize),
        temperature: Option<f64>,
    ) -> Result<Vec<f64>> {
        let (step, iteration, level) = at;
        let mut seen = HashSet::new();
        let mut accs = Vec::with_capacity(archs.len());
        for (i, arch) in archs.iter().enumerate() {
            if !seen.insert(arch) || (self.cache && self.ledger.get(arch).is_some()) {
                accs.push(self.ledger.get(arch).expect("scored earlier"));
                continue;
            }
            let acc = self
                .evaluator
                .train_and_score(arch)
                .map_err(|e| Error::Evaluation {
                    arch: arch.clone(),
                    source: Box::new(e),
                })?;
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Evaluation {
                    arch: arch.clone(),
                    source: Box::new(Error::InvalidArgument(format!("accuracy {acc} outside [0, 1]"))),
                });
            }
            self.evaluations += 1;
            self.ledger.record(arch, acc);
            self.log.push(StepLogRow {
                step,
                iteration,
                level,
                arch: arch.clone(),
                predicted: predicted.map(|p| p[i]),
                accuracy: acc,
                temperature,
            });
            accs.push(acc);
        }
        Ok(accs)
    }
}

/// Progressive search: each iteration scores every single-layer
/// architecture, then unfolds one layer at a time, sampling `K` children
/// of the previous level from surrogate predictions at the current
/// temperature. The surrogate is refit on the whole ledger after each step.
pub fn mfas_search<E: Evaluator>(
    space: &SpaceConfig,
    cfg: &SearchConfig,
    evaluator: &mut E,
    surrogate: &mut SurrogateModel,
) -> Result<SearchOutcome> {
    space.check()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fit_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_df17);
    let levels = space.max_layers;
    let total_steps = cfg.e_search * (levels - 1);
    let mut t = 0;
    let mut driver = Driver {
        evaluator,
        ledger: Ledger::new(),
        log: Vec::new(),
        cache: cfg.cache,
        evaluations: 0,
    };
    let mut refit = |driver: &Driver<'_, E>, surrogate: &mut SurrogateModel| -> Result<()> {
        let (archs, accs) = driver.ledger.split();
        surrogate.update(&archs, &accs, cfg.surrogate_epochs, cfg.surrogate_lr, &mut fit_rng)
    };

    let level1 = space::enumerate_level1(space);
    for e in 1..=cfg.e_search {
        let base = (e - 1) * levels;
        driver.score(&level1, None, (base, e, 1), None)?;
        refit(&driver, surrogate)?;
        let mut sampled = level1.clone();
        for l in 2..=levels {
            let candidates = space::add_layer(&sampled, space)?;
            let predicted = surrogate.predict(&candidates)?;
            let temperature = update_temperature(cfg.t_max, cfg.t_min, t, total_steps)?;
            let probs = compute_probs(&predicted, temperature)?;
            let picked_idx = sample_k(&(0..candidates.len()).collect::<Vec<_>>(), &probs, cfg.k, &mut rng)?;
            sampled = picked_idx.iter().map(|&i| candidates[i].clone()).collect();
            let preds: Vec<f64> = picked_idx.iter().map(|&i| predicted[i]).collect();
            driver.score(&sampled, Some(&preds), (base + l - 1, e, l), Some(temperature))?;
            refit(&driver, surrogate)?;
            t += 1;
        }
    }
    Ok(SearchOutcome {
        top_k: driver.ledger.top_k(cfg.k),
        log: driver.log,
        evaluations: driver.evaluations,
        ledger: driver.ledger,
    })
}

fn random_arch<R: Rng + ?Sized>(space: &SpaceConfig, rng: &mut R) -> Architecture {
    let len = rng.gen_range(1..=space.max_layers);
    Architecture::new(
        (0..len)
            .map(|_| Triplet {
                gm: rng.gen_range(1..=space.m),
                gn: rng.gen_range(1..=space.n),
                gp: rng.gen_range(1..=space.p),
            })
            .collect(),
    )
}

fn all_archs(space: &SpaceConfig) -> Result<Vec<Architecture>> {
    let mut level = space::enumerate_level1(space);
    let mut all = level.clone();
    for _ in 1..space.max_layers {
        level = space::add_layer(&level, space)?;
        all.extend(level.iter().cloned());
    }
    Ok(all)
}

/// Baseline: `budget` distinct architectures, each drawn by picking a
/// length uniformly in `1..=L` and then every triplet uniformly. A budget
/// covering the whole space evaluates all of it.
pub fn random_search<E: Evaluator>(
    space: &SpaceConfig,
    k: usize,
    evaluator: &mut E,
    budget: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    space.check()?;
    if budget == 0 || k == 0 {
        return Err(Error::InvalidArgument("budget and K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let archs = if budget as u128 >= space::total_space_size(space) {
        all_archs(space)?
    } else {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(budget);
        while out.len() < budget {
            let a = random_arch(space, &mut rng);
            if seen.insert(a.clone()) {
                out.push(a);
            }
        }
        out
    };
    let mut driver = Driver {
        evaluator,
        ledger: Ledger::new(),
        log: Vec::new(),
        cache: true,
        evaluations: 0,
    };
    for (i, arch) in archs.iter().enumerate() {
        driver.score(std::slice::from_ref(arch), None, (i, 1, arch.len()), None)?;
    }
    Ok(SearchOutcome {
        top_k: driver.ledger.top_k(k),
        log: driver.log,
        evaluations: driver.evaluations,
        ledger: driver.ledger,
    })
}

/// Trains one architecture to completion for the final pick.
pub trait FinalTrainer {
    type Model;
    /// Returns the trained model and its validation accuracy.
    fn train_final(&mut self, arch: &Architecture) -> Result<(Self::Model, f64)>;
}

#[derive(Debug, Clone)]
pub struct FinalCandidate {
    pub arch: Architecture,
    pub search_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FinalSelection<M> {
    /// Index into `candidates` of the winner.
    pub winner: usize,
    pub model: M,
    pub candidates: Vec<FinalCandidate>,
}

/// Number of search results trained to completion.
pub const FINAL_CANDIDATES: usize = 5;

/// Trains the best (up to) five records by search accuracy and keeps the
/// highest validation accuracy; ties go to the lower index.
pub fn select_final<T: FinalTrainer>(records: &[EvaluationRecord], trainer: &mut T) -> Result<FinalSelection<T::Model>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to select from".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].accuracy.total_cmp(&records[a].accuracy).then(a.cmp(&b)));
    order.truncate(FINAL_CANDIDATES);
    let mut best: Option<(usize, T::Model, f64)> = None;
    let mut candidates = Vec::with_capacity(order.len());
    for (pos, &i) in order.iter().enumerate() {
        let arch = &records[i].arch;
        let (model, val) = trainer.train_final(arch).map_err(|e| Error::Evaluation {
            arch: arch.clone(),
            source: Box::new(e),
        })?;
        candidates.push(FinalCandidate {
            arch: arch.clone(),
            search_accuracy: records[i].accuracy,
            val_accuracy: val,
        });
        if best.as_ref().is_none_or(|(_, _, b)| val > *b) {
            best = Some((pos, model, val));
        }
    }
    let (winner, model, _) = best.expect("at least one candidate");
    Ok(FinalSelection {
        winner,
        model,
        candidates,
    })
}

/// Final trainer over real extractors and splits.
#[derive(Debug, Clone)]
pub struct RealFinalTrainer<'a> {
    pub f: &'a ModalityNetwork,
    pub g: &'a ModalityNetwork,
    pub train: &'a Split,
    pub val: &'a Split,
    pub hidden_dim: usize,
    pub options: FinalOptions,
}

/// A fully trained candidate with its training curve.
#[derive(Debug, Clone)]
pub struct TrainedCandidate {
    pub model: FusedModel,
    pub curve: Vec<FinalEpoch>,
}

impl FinalTrainer for RealFinalTrainer<'_> {
    type Model = TrainedCandidate;

    fn train_final(&mut self, arch: &Architecture) -> Result<(TrainedCandidate, f64)> {
        let shape = TapShape::of(self.f, self.g);
        let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed);
        let fusion = FusionNetwork::build(
            arch,
            &shape,
            self.f.n_classes(),
            self.hidden_dim,
            &SharedWeightStore::new(),
            &mut rng,
        )?;
        let mut model = FusedModel {
            f: self.f.clone(),
            g: self.g.clone(),
            fusion,
        };
        let curve = final_train(&mut model, self.train, self.val, &self.options)?;
        let val = model.accuracy(self.val)?;
        Ok((TrainedCandidate { model, curve }, val))
    }
}

pub const STEP_LOG_HEADER: [&str; 7] = [
    "step",
    "iteration",
    "level",
    "arch",
    "predicted_acc",
    "val_acc",
    "temperature",
];

/// Writes the step log as CSV; architectures use the wire format.
pub fn write_step_log<W: Write>(rows: &[StepLogRow], space: &SpaceConfig, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STEP_LOG_HEADER)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.iteration.to_string(),
            r.level.to_string(),
            space::serialize(&r.arch, space),
            opt(r.predicted),
            r.accuracy.to_string(),
            opt(r.temperature),
        ])?;
    }
    w.flush().map_err(|e| Error::io("step log", e))?;
    Ok(())
}

/// Parses a step log written by [`write_step_log`].
pub fn read_step_log<R: std::io::Read>(input: R, space: &SpaceConfig) -> Result<Vec<StepLogRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(STEP_LOG_HEADER) {
        return Err(Error::Config(format!("unexpected step log header {header:?}")));
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Config(format!("bad {what} value {s:?} in step log")))
    };
    let int = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad {what} value {s:?} in step log")))
    };
    let opt = |s: &str, what: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, what).map(Some)
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(StepLogRow {
            step: int(&rec[0], "step")?,
            iteration: int(&rec[1], "iteration")?,
            level: int(&rec[2], "level")?,
            arch: space::deserialize(&rec[3], space)?,
            predicted: opt(&rec[4], "predicted_acc")?,
            accuracy: num(&rec[5], "val_acc")?,
            temperature: opt(&rec[6], "temperature")?,
        });
    }
    Ok(rows)
}

/// Ledger rebuilt from a step log, in log order.
pub fn records_from_log(rows: &[StepLogRow]) -> Ledger {
    let mut ledger = Ledger::new();
    for r in rows {
        ledger.record(&r.arch, r.accuracy);
    }
    ledger
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs two equal-length series of length >= 2".into()));
    }
    let ranks = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() - 1) as f64 / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Fresh surrogate seeded from the search seed.
pub fn new_surrogate(space: &SpaceConfig, cfg: &SearchConfig) -> Result<SurrogateModel> {
    SurrogateModel::new(space, cfg.surrogate, cfg.seed.wrapping_add(1))
}
