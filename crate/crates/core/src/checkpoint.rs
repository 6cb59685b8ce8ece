//! Conversions between networks and checkpoints, and their on-disk pair
//! `<stem>.manifest` + `<stem>.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::formats::{Checkpoint, FormatError};
use crate::fusion::{FusedModel, FusionNetwork, TapShape};
use crate::modality::ModalityNetwork;
use crate::space::Architecture;
use crate::tensor::{Activation, Dense};

fn push_dense(ck: &mut Checkpoint, prefix: &str, d: &Dense) {
    ck.set_meta(&format!("{prefix}.activation"), d.activation.name());
    let (out, inp) = d.shape();
    ck.push(format!("{prefix}.weight"), &[out, inp], d.weight.iter().copied());
    ck.push(format!("{prefix}.bias"), &[out], d.bias.iter().copied());
}

fn read_dense(ck: &Checkpoint, prefix: &str) -> Result<Dense> {
    let act_name = ck.meta(&format!("{prefix}.activation"))?;
    let activation = Activation::from_name(act_name)
        .ok_or_else(|| Error::Format(FormatError::Manifest {
            line: 0,
            reason: format!("unknown activation `{act_name}`"),
        }))?;
    let (we, w) = ck.get(&format!("{prefix}.weight"))?;
    let (be, b) = ck.get(&format!("{prefix}.bias"))?;
    if we.shape.len() != 2 || be.shape.len() != 1 {
        return Err(Error::Shape(format!("{prefix}: weight must be 2-d and bias 1-d")));
    }
    let weight = Array2::from_shape_vec((we.shape[0], we.shape[1]), w.iter().map(|&v| v as f64).collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let bias = Array1::from_iter(b.iter().map(|&v| v as f64));
    Dense::from_parts(weight, bias, activation)
}

fn count(ck: &Checkpoint, key: &str) -> Result<usize> {
    let v = ck.meta(key)?;
    v.parse().map_err(|_| {
        Error::Format(FormatError::Manifest {
            line: 0,
            reason: format!("`{key}` is not a count: {v}"),
        })
    })
}

fn push_modality(ck: &mut Checkpoint, prefix: &str, net: &ModalityNetwork) {
    ck.set_meta(&format!("{prefix}.layers"), net.layers().len().to_string());
    for (i, layer) in net.layers().iter().enumerate() {
        push_dense(ck, &format!("{prefix}.layer{i}"), layer);
    }
    push_dense(ck, &format!("{prefix}.head"), net.head());
}

fn read_modality(ck: &Checkpoint, prefix: &str) -> Result<ModalityNetwork> {
    let n = count(ck, &format!("{prefix}.layers"))?;
    let layers = (0..n)
        .map(|i| read_dense(ck, &format!("{prefix}.layer{i}")))
        .collect::<Result<Vec<_>>>()?;
    let head = read_dense(ck, &format!("{prefix}.head"))?;
    ModalityNetwork::from_parts(layers, head)
}

/// Extractor checkpoint. The frozen flag is not stored.
pub fn modality_to_checkpoint(net: &ModalityNetwork) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.set_meta("kind", "extractor");
    push_modality(&mut ck, "net", net);
    ck
}

pub fn modality_from_checkpoint(ck: &Checkpoint) -> Result<ModalityNetwork> {
    expect_kind(ck, "extractor")?;
    read_modality(ck, "net")
}

/// Both extractors and the fusion network.
pub fn fused_to_checkpoint(model: &FusedModel) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.set_meta("kind", "fused");
    ck.set_meta("arch", model.fusion.arch().to_string());
    push_modality(&mut ck, "f", &model.f);
    push_modality(&mut ck, "g", &model.g);
    for (l, layer) in model.fusion.layers().iter().enumerate() {
        push_dense(&mut ck, &format!("fusion.layer{l}"), layer);
    }
    push_dense(&mut ck, "fusion.classifier", model.fusion.classifier());
    ck
}

/// Rebuilds a fused model; extractors come back frozen.
pub fn fused_from_checkpoint(ck: &Checkpoint) -> Result<FusedModel> {
    expect_kind(ck, "fused")?;
    let arch: Architecture = parse_arch(ck.meta("arch")?)?;
    let mut f = read_modality(ck, "f")?;
    let mut g = read_modality(ck, "g")?;
    f.set_frozen(true);
    g.set_frozen(true);
    let layers = (0..arch.len())
        .map(|l| read_dense(ck, &format!("fusion.layer{l}")))
        .collect::<Result<Vec<_>>>()?;
    let classifier = read_dense(ck, "fusion.classifier")?;
    let fusion = FusionNetwork::from_parts(arch, layers, classifier, &TapShape::of(&f, &g))?;
    Ok(FusedModel { f, g, fusion })
}

fn parse_arch(text: &str) -> Result<Architecture> {
    let cfg = crate::space::SpaceConfig {
        m: usize::MAX,
        n: usize::MAX,
        p: Activation::CHOICES.len(),
        max_layers: usize::MAX,
    };
    Ok(crate::space::deserialize(text, &cfg)?)
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    let found = ck.meta("kind")?;
    if found != kind {
        return Err(Error::Format(FormatError::Manifest {
            line: 0,
            reason: format!("expected a {kind} checkpoint, found {found}"),
        }));
    }
    Ok(())
}

/// `<stem>.manifest` and `<stem>.bin`.
pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("manifest"), stem.with_extension("bin"))
}

pub fn save(ck: &Checkpoint, stem: &Path) -> Result<()> {
    let (manifest, blob) = paths(stem);
    fs::write(&manifest, ck.manifest()).map_err(|e| Error::io(&manifest, e))?;
    fs::write(&blob, ck.blob_bytes()).map_err(|e| Error::io(&blob, e))?;
    Ok(())
}

/// Accepts the stem or either file of the pair.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("manifest") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let (manifest, blob) = paths(&stem);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    Ok(Checkpoint::parse(&text, &bytes)?)
}
