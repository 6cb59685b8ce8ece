//! `mfas`: data generation, extractor pretraining, architecture search,
//! final training and evaluation from one TOML config.
//!
//! ```text
//! mfas --config run.toml --out runs/a search
//! mfas --config run.toml --out runs/a random-search
//! mfas --config run.toml --out runs/a train-final
//! mfas --config run.toml --out runs/a report
//! ```

mod run_dir;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use mfas_core::checkpoint;
use mfas_core::config::{parse_space, RunConfig};
use mfas_core::formats::{read_mfds, write_mfds};
use mfas_core::modality::{EpochStats, ModalityNetwork};
use mfas_core::pipeline::{self, Extractors};
use mfas_core::report::{emit_report, MFAS_LOG, RANDOM_LOG};
use mfas_core::search::{read_step_log, records_from_log, write_step_log, SearchOutcome};
use mfas_core::space::{self, SpaceConfig};

use run_dir::RunDir;

#[derive(Parser)]
#[command(name = "mfas", version, about = "Multimodal fusion architecture search")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set search.K=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; defaults to `output.dir` or `runs/<time>-seed<seed>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/val/test splits as MFDS files.
    GenData,
    /// Train both extractors and save them with their curves.
    Pretrain,
    /// Progressive search; writes the step log and the top-K list.
    Search,
    /// Random baseline with the same outputs as `search`.
    RandomSearch,
    /// Fully train the best searched architectures and keep the winner.
    TrainFinal {
        /// Step log to take candidates from; defaults to the run's own.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print the accuracy of a fused checkpoint on an MFDS file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the number of architectures with exactly L layers.
    SpaceSize,
    /// Print an architecture in wire format.
    ExportArch {
        /// `[(1,2,3),(2,1,1)]`, `[[1,2,3]]` or a wire object.
        arch: String,
    },
    /// Top-5 tables of both searches in a run directory.
    Report,
}

const TOPK: &str = "topk.json";
const RANDOM_TOPK: &str = "random_topk.json";
const RESOLVED: &str = "config.resolved";
const PRETRAIN_CURVE: &str = "pretrain_curve.csv";
const FINAL_CURVE: &str = "final_curve.csv";
const FINAL_REPORT: &str = "final_report.txt";
const MODEL: &str = "model";
const EXTRACTORS: [&str; 2] = ["f", "g"];

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("error: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "));
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Eval { checkpoint, data } => return eval(checkpoint, data),
        Command::SpaceSize => {
            let space = space_only(cli)?;
            println!("{}", space::space_size(&space, space.max_layers as u32));
            return Ok(());
        }
        Command::ExportArch { arch } => {
            let space = space_only(cli)?;
            let arch = space::deserialize(arch, &space)?;
            println!("{}", space::serialize(&arch, &space));
            return Ok(());
        }
        _ => {}
    }

    let cfg = load_config(cli)?;
    if let Command::Report = cli.command {
        let dir = output_path(cli, &cfg);
        print!("{}", emit_report(&dir, &cfg.space)?);
        return Ok(());
    }

    let mut dir = RunDir::open(output_path(cli, &cfg))?;
    let result = (|| {
        let mut resolved = cfg.clone();
        resolved.output.dir = Some(dir.path().to_path_buf());
        dir.write(RESOLVED, resolved.resolved())?;
        match &cli.command {
            Command::GenData => gen_data(&cfg, &mut dir),
            Command::Pretrain => extractors(&cfg, &pipeline::load_splits(&cfg.data)?, &mut dir).map(|_| ()),
            Command::Search => search(&cfg, &mut dir, false),
            Command::RandomSearch => search(&cfg, &mut dir, true),
            Command::TrainFinal { log } => train_final(&cfg, &mut dir, log.as_deref()),
            _ => unreachable!("handled above"),
        }
    })();
    match result {
        Ok(()) => {
            eprintln!("outputs in {}", dir.path().display());
            Ok(())
        }
        Err(e) => {
            dir.rollback();
            Err(e)
        }
    }
}

fn config_text(cli: &Cli) -> Result<String> {
    match &cli.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(String::new()),
    }
}

fn space_only(cli: &Cli) -> Result<SpaceConfig> {
    Ok(parse_space(&config_text(cli)?, &cli.overrides)?)
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    if cli.config.is_none() && cli.overrides.is_empty() {
        bail!("--config is required for this command");
    }
    Ok(RunConfig::parse(&config_text(cli)?, &cli.overrides)?)
}

fn output_path(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = cli.out.clone().or_else(|| cfg.output.dir.clone()) {
        return p;
    }
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    PathBuf::from("runs").join(format!("{stamp}-seed{}", cfg.search.seed))
}

fn gen_data(cfg: &RunConfig, dir: &mut RunDir) -> Result<()> {
    let splits = mfas_core::synth::generate(&cfg.data.synth)?;
    for (name, split) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        dir.write(&format!("{name}.mfds"), write_mfds(split)?)?;
    }
    Ok(())
}

/// Checkpoint values are `f32`; every extractor goes through that
/// rounding so fresh and reloaded runs see the same taps.
fn rounded(net: &ModalityNetwork) -> Result<ModalityNetwork> {
    let mut net = checkpoint::modality_from_checkpoint(&checkpoint::modality_to_checkpoint(net))?;
    net.set_frozen(true);
    Ok(net)
}

/// Extractors saved in the run directory, or freshly pretrained and saved.
fn extractors(cfg: &RunConfig, splits: &mfas_core::data::Splits, dir: &mut RunDir) -> Result<Extractors> {
    let stems = EXTRACTORS.map(|s| dir.join(s));
    if stems.iter().all(|s| checkpoint::paths(s).0.exists()) {
        let load = |stem: &Path| -> Result<ModalityNetwork> {
            let mut net = checkpoint::modality_from_checkpoint(&checkpoint::load(stem)?)?;
            net.set_frozen(true);
            Ok(net)
        };
        eprintln!("reusing extractors in {}", dir.path().display());
        return Ok(Extractors {
            f: load(&stems[0])?,
            g: load(&stems[1])?,
            curve_f: Vec::new(),
            curve_g: Vec::new(),
        });
    }
    eprintln!("pretraining extractors");
    let ex = pipeline::pretrain_extractors(cfg, splits)?;
    let ex = Extractors {
        f: rounded(&ex.f)?,
        g: rounded(&ex.g)?,
        ..ex
    };
    for (stem, net) in stems.iter().zip([&ex.f, &ex.g]) {
        let (manifest, blob) = checkpoint::paths(stem);
        dir.track(manifest);
        dir.track(blob);
        checkpoint::save(&checkpoint::modality_to_checkpoint(net), stem)?;
    }
    dir.write(PRETRAIN_CURVE, curve_csv(&ex.curve_f, &ex.curve_g))?;
    Ok(ex)
}

fn curve_csv(f: &[EpochStats], g: &[EpochStats]) -> String {
    let mut out = String::from("modality,epoch,loss,val_acc\n");
    for (name, curve) in [("x", f), ("y", g)] {
        for e in curve {
            out.push_str(&format!("{name},{},{},{}\n", e.epoch, e.loss, e.val_accuracy));
        }
    }
    out
}

fn topk_json(outcome: &SearchOutcome, space: &SpaceConfig) -> Result<String> {
    let rows = outcome
        .top_k
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let wire: serde_json::Value = serde_json::from_str(&space::serialize(&r.arch, space))?;
            Ok(json!({ "rank": i + 1, "val_acc": r.accuracy, "arch": wire }))
        })
        .collect::<Result<Vec<_>>>()?;
    let lines: Vec<String> = rows.iter().map(|r| format!("  {r}")).collect();
    Ok(format!("[\n{}\n]\n", lines.join(",\n")))
}

/// Random-search budget: the configured one, else the real evaluation
/// count of a progressive search in the same directory, else its upper
/// bound.
fn random_budget(cfg: &RunConfig, dir: &RunDir) -> Result<usize> {
    if let Some(b) = cfg.search.budget {
        return Ok(b);
    }
    let log = dir.join(MFAS_LOG);
    if log.exists() {
        let file = fs::File::open(&log).with_context(|| format!("reading {}", log.display()))?;
        let rows = read_step_log(file, &cfg.space)?;
        if !rows.is_empty() {
            return Ok(rows.len());
        }
    }
    Ok(pipeline::random_budget(cfg))
}

fn search(cfg: &RunConfig, dir: &mut RunDir, random: bool) -> Result<()> {
    let mut trainer = if cfg.data.mfft.is_some() {
        pipeline::search_trainer(cfg, None, None)?
    } else {
        let splits = pipeline::load_splits(&cfg.data)?;
        let ex = extractors(cfg, &splits, dir)?;
        pipeline::search_trainer(cfg, Some(&ex), Some(&splits))?
    };
    let (outcome, log_name, topk_name) = if random {
        let mut c = cfg.clone();
        c.search.budget = Some(random_budget(cfg, dir)?);
        eprintln!("random search over {} architectures", c.search.budget.unwrap_or(0));
        (pipeline::run_random(&c, &mut trainer)?, RANDOM_LOG, RANDOM_TOPK)
    } else {
        eprintln!("progressive search");
        (pipeline::run_mfas(cfg, &mut trainer)?.0, MFAS_LOG, TOPK)
    };
    let mut log = Vec::new();
    write_step_log(&outcome.log, &cfg.space, &mut log)?;
    dir.write(log_name, log)?;
    dir.write(topk_name, topk_json(&outcome, &cfg.space)?)?;
    if let Some(best) = outcome.top_k.first() {
        println!("{:.4} {}", best.accuracy, best.arch);
    }
    Ok(())
}

fn train_final(cfg: &RunConfig, dir: &mut RunDir, log: Option<&Path>) -> Result<()> {
    let log = log.map(Path::to_path_buf).unwrap_or_else(|| dir.join(MFAS_LOG));
    let file = fs::File::open(&log).with_context(|| format!("reading {}; run `search` first", log.display()))?;
    let ledger = records_from_log(&read_step_log(file, &cfg.space)?);
    let splits = pipeline::load_splits(&cfg.data)?;
    let ex = extractors(cfg, &splits, dir)?;
    eprintln!("training {} candidates", ledger.len().min(mfas_core::search::FINAL_CANDIDATES));
    let sel = pipeline::train_final(cfg, &ex, &splits, ledger.records())?;
    let model = &sel.model.model;
    let stem = dir.join(MODEL);
    let (manifest, blob) = checkpoint::paths(&stem);
    dir.track(manifest);
    dir.track(blob);
    checkpoint::save(&checkpoint::fused_to_checkpoint(model), &stem)?;

    let mut curve = String::from("phase,epoch,loss,val_acc\n");
    for e in &sel.model.curve {
        curve.push_str(&format!("{},{},{},{}\n", e.phase, e.epoch, e.loss, e.val_accuracy));
    }
    dir.write(FINAL_CURVE, curve)?;

    let test = model.accuracy(&splits.test)?;
    let mut report = format!("{:<6}{:<12}{:<10}{}\n", "rank", "search_acc", "val_acc", "architecture");
    for (i, c) in sel.candidates.iter().enumerate() {
        let mark = if i == sel.winner { " *" } else { "" };
        report.push_str(&format!(
            "{:<6}{:<12.4}{:<10.4}{}{mark}\n",
            i + 1,
            c.search_accuracy,
            c.val_accuracy,
            c.arch
        ));
    }
    let winner = &sel.candidates[sel.winner];
    report.push_str(&format!(
        "\nwinner {}\nval_acc {:.4}\ntest_acc {test:.4}\nwire {}\n",
        winner.arch,
        winner.val_accuracy,
        space::serialize(&winner.arch, &cfg.space)
    ));
    dir.write(FINAL_REPORT, &report)?;
    print!("{report}");
    Ok(())
}

fn eval(ck: &Path, data: &Path) -> Result<()> {
    let model = checkpoint::fused_from_checkpoint(&checkpoint::load(ck)?)?;
    let bytes = fs::read(data).with_context(|| format!("reading {}", data.display()))?;
    let split = read_mfds(&bytes).with_context(|| format!("decoding {}", data.display()))?;
    println!("{:.4}", model.accuracy(&split)?);
    Ok(())
}
