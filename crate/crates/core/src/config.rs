//! Run configuration: a TOML tree with `space`, `search`, `final`, `train`,
//! `data` and `output` sections, plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FinalOptions;
use crate::search::SearchConfig;
use crate::space::SpaceConfig;
use crate::synth::SynthSpec;
use crate::tensor::{Activation, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinalConfig {
    pub hidden_dim: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub loss_weights: [f64; 3],
}

impl Default for FinalConfig {
    fn default() -> Self {
        FinalConfig {
            hidden_dim: 128,
            phase1_epochs: 4,
            phase2_epochs: 4,
            loss_weights: [1.0 / 3.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Width of every extractor layer; each extractor has one layer per tap.
    pub extractor_width: usize,
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            batch_size: 32,
            extractor_width: 64,
            pretrain_epochs: 8,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> Sgd {
        Sgd {
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }
}

/// Dataset files in the sample format, one per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

/// Precomputed feature taps, one file per modality and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFiles {
    pub train_x: PathBuf,
    pub train_y: PathBuf,
    pub val_x: PathBuf,
    pub val_y: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Generator settings; used when no sample files are given.
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfds: Option<SampleFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfft: Option<FeatureFiles>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceConfig,
    pub search: SearchConfig,
    #[serde(rename = "final", default)]
    pub final_: FinalConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check_space(&self.space)?;
        self.search.validate()?;
        self.train.sgd().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train.extractor_width == 0 {
            return Err(Error::Config("train.extractor_width must be at least 1".into()));
        }
        if self.final_.hidden_dim == 0 {
            return Err(Error::Config("final.hidden_dim must be at least 1".into()));
        }
        if self.final_.loss_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("final.loss_weights must be finite and non-negative".into()));
        }
        if self.data.mfds.is_none() {
            self.data.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Value = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, overrides)
    }

    /// Every effective value, defaults included.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn final_options(&self) -> FinalOptions {
        FinalOptions {
            phase1_epochs: self.final_.phase1_epochs,
            phase2_epochs: self.final_.phase2_epochs,
            loss_weights: self.final_.loss_weights,
            sgd: self.train.sgd(),
            seed: self.search.seed,
        }
    }
}

fn check_space(space: &SpaceConfig) -> Result<()> {
    space.check()?;
    if space.p > Activation::CHOICES.len() {
        return Err(Error::Config(format!(
            "space.P = {} but only {} activations exist",
            space.p,
            Activation::CHOICES.len()
        )));
    }
    Ok(())
}

/// Reads only the `space` table, for commands that need nothing else.
pub fn parse_space(text: &str, overrides: &[String]) -> Result<SpaceConfig> {
    let mut tree: toml::Value = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let space = tree
        .get("space")
        .cloned()
        .ok_or_else(|| Error::Config("missing [space] table".into()))?;
    let space: SpaceConfig = space
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
    check_space(&space)?;
    Ok(space)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Applies `a.b.c=value`. The value is read as a TOML literal when it
/// parses as one and as a bare string otherwise. Missing tables are
/// created.
pub fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut node = tree;
    for part in &path[..path.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` walks into a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` walks into a non-table")))?
        .insert(path[path.len() - 1].to_owned(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[space]
M = 2
N = 2
P = 3
L = 3

[search]
E_search = 3
E_train = 2
K = 5
T_max = 1.0
T_min = 0.001
seed = 7
hidden_dim = 32
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.space, SpaceConfig::new(2, 2, 3, 3).unwrap());
        assert_eq!(cfg.search.k, 5);
        assert_eq!(cfg.final_, FinalConfig::default());
        assert_eq!(cfg.data.synth, SynthSpec::default());
        assert!(cfg.search.cache);
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = RunConfig::parse(MINIMAL, &["output.dir=\"runs/x\"".into()]).unwrap();
        let text = cfg.resolved();
        assert!(text.contains("[final]"));
        assert_eq!(RunConfig::parse(&text, &[]).unwrap(), cfg);
        assert_eq!(cfg.output.dir, Some(PathBuf::from("runs/x")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(RunConfig::parse(&text, &[]), Err(Error::Config(_))));
        assert!(RunConfig::parse(MINIMAL, &["search.KK=3".into()]).is_err());
        assert!(RunConfig::parse(MINIMAL, &["data.synth.colour=3".into()]).is_err());
        assert!(RunConfig::parse(MINIMAL, &["search.surrogate.depth=3".into()]).is_err());
        let cfg = RunConfig::parse(MINIMAL, &["search.surrogate.embed_dim=4".into()]).unwrap();
        assert_eq!((cfg.search.surrogate.embed_dim, cfg.search.surrogate.hidden_dim), (4, 64));
    }

    #[test]
    fn missing_required_keys_are_rejected() {
        let text = MINIMAL.replace("K = 5\n", "");
        assert!(RunConfig::parse(&text, &[]).is_err());
        assert!(RunConfig::parse("[space]\nM=1\nN=1\nP=1\nL=1\n", &[]).is_err());
    }

    #[test]
    fn overrides_apply_before_validation() {
        let cfg = RunConfig::parse(
            MINIMAL,
            &[
                "search.K=9".into(),
                "space.M = 4".into(),
                "final.loss_weights=[0.0, 0.0, 1.0]".into(),
                "data.synth.noise_sigma=0.0".into(),
                "output.dir=runs/plain".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.search.k, 9);
        assert_eq!(cfg.space.m, 4);
        assert_eq!(cfg.final_.loss_weights, [0.0, 0.0, 1.0]);
        assert_eq!(cfg.data.synth.noise_sigma, 0.0);
        assert_eq!(cfg.output.dir, Some(PathBuf::from("runs/plain")));
        assert!(RunConfig::parse(MINIMAL, &["search".into()]).is_err());
        assert!(RunConfig::parse(MINIMAL, &["search.K.x=1".into()]).is_err());
    }

    #[test]
    fn space_alone_parses_from_overrides() {
        let overrides: Vec<String> = ["space.M=8", "space.N=2", "space.P=3", "space.L=3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(parse_space("", &overrides).unwrap(), SpaceConfig::new(8, 2, 3, 3).unwrap());
        assert!(parse_space("", &[]).is_err());
        assert!(parse_space(MINIMAL, &["space.P=4".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for o in ["space.P=4", "search.T_min=2.0", "search.K=0", "train.lr=0.0", "data.synth.C_x=1"] {
            assert!(RunConfig::parse(MINIMAL, &[o.into()]).is_err(), "{o}");
        }
    }
}
