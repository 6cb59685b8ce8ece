//! End-to-end steps shared by the command line and the acceptance suite:
//! data loading, extractor pretraining, both searches and the final pick.

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataConfig, RunConfig};
use crate::data::{Modality, Splits};
use crate::error::{Error, Result};
use crate::formats::{read_mfds, read_mfft};
use crate::fusion::TapData;
use crate::modality::{pretrain, EpochStats, ModalityNetwork};
use crate::search::{
    mfas_search, new_surrogate, random_search, select_final, EvaluationRecord, FinalSelection, RealFinalTrainer,
    RealTrainer, SearchOutcome, TrainedCandidate,
};
use crate::surrogate::SurrogateModel;
use crate::synth;
use crate::tensor::Activation;

/// Pretrained extractors with their curves.
#[derive(Debug, Clone)]
pub struct Extractors {
    pub f: ModalityNetwork,
    pub g: ModalityNetwork,
    pub curve_f: Vec<EpochStats>,
    pub curve_g: Vec<EpochStats>,
}

/// Sample files when configured, otherwise the synthetic generator.
pub fn load_splits(data: &DataConfig) -> Result<Splits> {
    let Some(files) = &data.mfds else {
        return synth::generate(&data.synth);
    };
    let read = |path: &std::path::Path| -> Result<_> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(read_mfds(&bytes)?)
    };
    Ok(Splits {
        train: read(&files.train)?,
        val: read(&files.val)?,
        test: read(&files.test)?,
    })
}

/// Taps for training and validation read from feature files.
pub fn load_taps(data: &DataConfig) -> Result<Option<(TapData, TapData)>> {
    let Some(files) = &data.mfft else {
        return Ok(None);
    };
    let read = |path: &std::path::Path| -> Result<_> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(read_mfft(&bytes)?)
    };
    let train = TapData::from_features(&read(&files.train_x)?, &read(&files.train_y)?)?;
    let val = TapData::from_features(&read(&files.val_x)?, &read(&files.val_y)?)?;
    Ok(Some((train, val)))
}

/// Builds `M` and `N` layer extractors (one tap per layer), trains each on
/// the full label and returns them frozen.
pub fn pretrain_extractors(cfg: &RunConfig, splits: &Splits) -> Result<Extractors> {
    let width = cfg.train.extractor_width;
    let classes = splits.train.n_classes;
    let sgd = cfg.train.sgd();
    let seed = cfg.search.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let mut f = ModalityNetwork::new(
        splits.train.x.ncols(),
        &vec![width; cfg.space.m],
        classes,
        Activation::Relu,
        &mut rng,
    )?;
    let mut g = ModalityNetwork::new(
        splits.train.y.ncols(),
        &vec![width; cfg.space.n],
        classes,
        Activation::Relu,
        &mut rng,
    )?;
    let epochs = cfg.train.pretrain_epochs;
    let curve_f = pretrain(&mut f, Modality::X, &splits.train, &splits.val, epochs, &sgd, seed.wrapping_add(11))?;
    let curve_g = pretrain(&mut g, Modality::Y, &splits.train, &splits.val, epochs, &sgd, seed.wrapping_add(12))?;
    f.set_frozen(true);
    g.set_frozen(true);
    Ok(Extractors { f, g, curve_f, curve_g })
}

/// The search-time evaluator, over ingested taps when feature files are
/// configured and over the extractors otherwise.
pub fn search_trainer(cfg: &RunConfig, extractors: Option<&Extractors>, splits: Option<&Splits>) -> Result<RealTrainer> {
    let s = &cfg.search;
    if let Some((train, val)) = load_taps(&cfg.data)? {
        return RealTrainer::new(train, val, s.hidden_dim, s.e_train, cfg.train.sgd(), s.seed);
    }
    match (extractors, splits) {
        (Some(e), Some(sp)) => RealTrainer::from_extractors(&e.f, &e.g, &sp.train, &sp.val, s, cfg.train.sgd()),
        _ => Err(Error::InvalidArgument("searching needs feature files or extractors and data".into())),
    }
}

/// Progressive search; also returns the fitted surrogate.
pub fn run_mfas(cfg: &RunConfig, trainer: &mut RealTrainer) -> Result<(SearchOutcome, SurrogateModel)> {
    let mut surrogate = new_surrogate(&cfg.space, &cfg.search)?;
    let outcome = mfas_search(&cfg.space, &cfg.search, trainer, &mut surrogate)?;
    Ok((outcome, surrogate))
}

/// Evaluation budget of the random baseline.
pub fn random_budget(cfg: &RunConfig) -> usize {
    cfg.search
        .budget
        .unwrap_or_else(|| cfg.search.uncached_calls(&cfg.space))
}

pub fn run_random(cfg: &RunConfig, trainer: &mut RealTrainer) -> Result<SearchOutcome> {
    random_search(&cfg.space, cfg.search.k, trainer, random_budget(cfg), cfg.search.seed)
}

/// Fully trains the best search records and keeps the one with the best
/// validation accuracy.
pub fn train_final(
    cfg: &RunConfig,
    extractors: &Extractors,
    splits: &Splits,
    records: &[EvaluationRecord],
) -> Result<FinalSelection<TrainedCandidate>> {
    let mut trainer = RealFinalTrainer {
        f: &extractors.f,
        g: &extractors.g,
        train: &splits.train,
        val: &splits.val,
        hidden_dim: cfg.final_.hidden_dim,
        options: cfg.final_options(),
    };
    select_final(records, &mut trainer)
}
