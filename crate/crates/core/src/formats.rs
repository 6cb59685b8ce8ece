//! On-disk formats.
//!
//! * MFDS: bimodal dataset. Little-endian header `"MFDS" u32 version=1
//!   u32 n_samples u32 dim_x u32 dim_y u32 n_classes`, then per sample
//!   `f32 x[dim_x] f32 y[dim_y] u32 label`.
//! * MFFT: precomputed feature taps of one modality. Header `"MFFT" u32
//!   version=1 u32 n_samples u32 n_taps u32 tap_dim[n_taps] u32 n_classes`,
//!   then per sample the concatenated `f32` tap vectors and a `u32` label.
//! * Checkpoint: a flat little-endian `f32` blob plus a text manifest listing
//!   metadata and `(name, shape, offset)` for every parameter.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::data::Split;
use crate::modality::{FeatureTapSet, TapSource};

pub const MFDS_MAGIC: &[u8; 4] = b"MFDS";
pub const MFFT_MAGIC: &[u8; 4] = b"MFFT";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_HEADER: &str = "# mfas checkpoint v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("sample {sample}: label {label} >= {n_classes} classes")]
    Label { sample: usize, label: u32, n_classes: u32 },
    #[error("sample {0}: non-finite value")]
    NonFinite(usize),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}

type FResult<T> = std::result::Result<T, FormatError>;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> FResult<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> FResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> FResult<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: &'static [u8; 4]) -> FResult<()> {
        let got = self.take(4).map_err(|_| FormatError::BadMagic {
            expected: magic_str(expected),
        })?;
        if got != expected {
            return Err(FormatError::BadMagic {
                expected: magic_str(expected),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> FResult<()> {
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::Version(v)),
        }
    }

    /// Fails early, before allocating, when the body cannot fit.
    fn expect_body(&self, records: usize, record_bytes: usize) -> FResult<()> {
        let needed = records
            .checked_mul(record_bytes)
            .ok_or_else(|| FormatError::Dimension("body size overflows".into()))?;
        let remaining = self.bytes.len() - self.pos;
        if needed > remaining {
            return Err(FormatError::Truncated {
                offset: self.bytes.len(),
                needed: needed - remaining,
            });
        }
        Ok(())
    }

    fn finish(&self) -> FResult<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn magic_str(m: &'static [u8; 4]) -> &'static str {
    if m == MFDS_MAGIC {
        "MFDS"
    } else {
        "MFFT"
    }
}

fn label(r: &mut Reader<'_>, sample: usize, n_classes: u32) -> FResult<usize> {
    let label = r.u32()?;
    if label >= n_classes {
        return Err(FormatError::Label {
            sample,
            label,
            n_classes,
        });
    }
    Ok(label as usize)
}

fn finite(v: f32, sample: usize) -> FResult<f64> {
    if v.is_finite() {
        Ok(v as f64)
    } else {
        Err(FormatError::NonFinite(sample))
    }
}

fn dim_to_u32(what: &str, v: usize) -> FResult<u32> {
    u32::try_from(v).map_err(|_| FormatError::Dimension(format!("{what}={v} exceeds u32")))
}

/// Encodes a split; values are narrowed to `f32`.
pub fn write_mfds(split: &Split) -> FResult<Vec<u8>> {
    let n = split.len();
    let (dx, dy) = (split.x.ncols(), split.y.ncols());
    let mut out = Vec::with_capacity(24 + n * (4 * (dx + dy) + 4));
    out.extend_from_slice(MFDS_MAGIC);
    for v in [
        FORMAT_VERSION,
        dim_to_u32("n_samples", n)?,
        dim_to_u32("dim_x", dx)?,
        dim_to_u32("dim_y", dy)?,
        dim_to_u32("n_classes", split.n_classes)?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..n {
        for &v in split.x.row(i).iter().chain(split.y.row(i).iter()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&dim_to_u32("label", split.labels[i])?.to_le_bytes());
    }
    Ok(out)
}

pub fn read_mfds(bytes: &[u8]) -> FResult<Split> {
    let mut r = Reader::new(bytes);
    r.magic(MFDS_MAGIC)?;
    r.version()?;
    let n = r.u32()? as usize;
    let dx = r.u32()? as usize;
    let dy = r.u32()? as usize;
    let n_classes = r.u32()?;
    if dx == 0 || dy == 0 || n_classes == 0 {
        return Err(FormatError::Dimension("zero-sized header field".into()));
    }
    let record = dx
        .checked_add(dy)
        .and_then(|d| d.checked_add(1))
        .and_then(|d| d.checked_mul(4))
        .ok_or_else(|| FormatError::Dimension("record size overflows".into()))?;
    r.expect_body(n, record)?;
    let mut x = Vec::with_capacity(n * dx);
    let mut y = Vec::with_capacity(n * dy);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for _ in 0..dx {
            x.push(finite(r.f32()?, i)?);
        }
        for _ in 0..dy {
            y.push(finite(r.f32()?, i)?);
        }
        labels.push(label(&mut r, i, n_classes)?);
    }
    r.finish()?;
    Ok(Split {
        x: Array2::from_shape_vec((n, dx), x).expect("sized above"),
        y: Array2::from_shape_vec((n, dy), y).expect("sized above"),
        labels,
        n_classes: n_classes as usize,
    })
}

/// Feature taps of one modality for a whole split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub tap_dims: Vec<usize>,
    pub n_classes: usize,
    pub samples: Vec<FeatureTapSet>,
    pub labels: Vec<usize>,
}

impl FeatureFile {
    /// One `(n_samples, tap_dim)` matrix per tap.
    pub fn tap_matrices(&self) -> Vec<Array2<f64>> {
        let n = self.samples.len();
        self.tap_dims
            .iter()
            .enumerate()
            .map(|(t, &d)| Array2::from_shape_fn((n, d), |(i, j)| self.samples[i].taps[t][j]))
            .collect()
    }

    pub fn from_matrices(taps: &[Array2<f64>], labels: &[usize], n_classes: usize) -> FResult<Self> {
        let n = labels.len();
        if taps.is_empty() || taps.iter().any(|t| t.nrows() != n) {
            return Err(FormatError::Dimension("tap matrices disagree on sample count".into()));
        }
        let samples = (0..n)
            .map(|i| FeatureTapSet {
                taps: taps.iter().map(|t| t.row(i).to_vec()).collect(),
                source: TapSource::Computed,
            })
            .collect();
        Ok(FeatureFile {
            tap_dims: taps.iter().map(|t| t.ncols()).collect(),
            n_classes,
            samples,
            labels: labels.to_vec(),
        })
    }
}

pub fn write_mfft(file: &FeatureFile) -> FResult<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MFFT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_to_u32("n_samples", file.samples.len())?.to_le_bytes());
    out.extend_from_slice(&dim_to_u32("n_taps", file.tap_dims.len())?.to_le_bytes());
    for &d in &file.tap_dims {
        out.extend_from_slice(&dim_to_u32("tap_dim", d)?.to_le_bytes());
    }
    out.extend_from_slice(&dim_to_u32("n_classes", file.n_classes)?.to_le_bytes());
    if file.labels.len() != file.samples.len() {
        return Err(FormatError::Dimension("label count differs from sample count".into()));
    }
    for (i, (s, &l)) in file.samples.iter().zip(&file.labels).enumerate() {
        if s.taps.len() != file.tap_dims.len() {
            return Err(FormatError::Dimension(format!("sample {i} has {} taps", s.taps.len())));
        }
        for (tap, &d) in s.taps.iter().zip(&file.tap_dims) {
            if tap.len() != d {
                return Err(FormatError::Dimension(format!("sample {i}: tap of length {} != {d}", tap.len())));
            }
            for &v in tap {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&dim_to_u32("label", l)?.to_le_bytes());
    }
    Ok(out)
}

pub fn read_mfft(bytes: &[u8]) -> FResult<FeatureFile> {
    let mut r = Reader::new(bytes);
    r.magic(MFFT_MAGIC)?;
    r.version()?;
    let n = r.u32()? as usize;
    let n_taps = r.u32()? as usize;
    if n_taps == 0 {
        return Err(FormatError::Dimension("zero taps".into()));
    }
    r.expect_body(n_taps, 4)?;
    let mut tap_dims = Vec::with_capacity(n_taps);
    for _ in 0..n_taps {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(FormatError::Dimension("zero-width tap".into()));
        }
        tap_dims.push(d);
    }
    let n_classes = r.u32()?;
    if n_classes == 0 {
        return Err(FormatError::Dimension("zero classes".into()));
    }
    let record = tap_dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_add(d))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| FormatError::Dimension("record size overflows".into()))?;
    r.expect_body(n, record)?;
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut taps = Vec::with_capacity(n_taps);
        for &d in &tap_dims {
            let mut tap = Vec::with_capacity(d);
            for _ in 0..d {
                tap.push(finite(r.f32()?, i)?);
            }
            taps.push(tap);
        }
        samples.push(FeatureTapSet {
            taps,
            source: TapSource::Ingested,
        });
        labels.push(label(&mut r, i, n_classes)?);
    }
    r.finish()?;
    Ok(FeatureFile {
        tap_dims,
        n_classes: n_classes as usize,
        samples,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, counted in `f32` elements.
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameters as a flat `f32` blob plus a manifest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Vec<ParamEntry>,
    pub blob: Vec<f32>,
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.insert(key.to_owned(), value.into());
    }

    pub fn meta(&self, key: &str) -> FResult<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| FormatError::Manifest {
                line: 0,
                reason: format!("missing meta key `{key}`"),
            })
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: impl IntoIterator<Item = f64>) {
        let offset = self.blob.len();
        self.blob.extend(values.into_iter().map(|v| v as f32));
        self.params.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        });
    }

    pub fn get(&self, name: &str) -> FResult<(&ParamEntry, &[f32])> {
        let entry = self
            .params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| FormatError::MissingParam(name.to_owned()))?;
        Ok((entry, &self.blob[entry.offset..entry.offset + entry.len()]))
    }

    pub fn manifest(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MANIFEST_HEADER}").unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        for p in &self.params {
            let shape: Vec<String> = p.shape.iter().map(usize::to_string).collect();
            writeln!(s, "param {} {} {}", p.name, shape.join("x"), p.offset).unwrap();
        }
        s
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        self.blob.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Parses a manifest and attaches the blob, checking that every entry
    /// lies inside the blob and that entries do not overlap.
    pub fn parse(manifest: &str, blob: &[u8]) -> FResult<Self> {
        if !blob.len().is_multiple_of(4) {
            return Err(FormatError::Truncated {
                offset: blob.len(),
                needed: 4 - blob.len() % 4,
            });
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut ck = Checkpoint {
            blob: floats,
            ..Checkpoint::default()
        };
        let mut lines = manifest.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == MANIFEST_HEADER => {}
            _ => {
                return Err(FormatError::Manifest {
                    line: 1,
                    reason: "missing checkpoint header".into(),
                })
            }
        }
        let bad = |line: usize, reason: &str| FormatError::Manifest {
            line: line + 1,
            reason: reason.to_owned(),
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().filter(|k| !k.is_empty()).ok_or_else(|| bad(i, "meta without key"))?;
                    let value = parts.next().unwrap_or("");
                    if ck.meta.insert(key.to_owned(), value.to_owned()).is_some() {
                        return Err(bad(i, "duplicate meta key"));
                    }
                }
                Some("param") => {
                    let fields: Vec<&str> = line.split(' ').collect();
                    if fields.len() != 4 || fields[1].is_empty() {
                        return Err(bad(i, "expected `param <name> <shape> <offset>`"));
                    }
                    let shape = fields[2]
                        .split('x')
                        .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad(i, "invalid shape"))?;
                    let offset: usize = fields[3].parse().map_err(|_| bad(i, "invalid offset"))?;
                    let len = shape
                        .iter()
                        .try_fold(1usize, |a, &d| a.checked_mul(d))
                        .ok_or_else(|| bad(i, "shape overflows"))?;
                    let end = offset.checked_add(len).ok_or_else(|| bad(i, "offset overflows"))?;
                    if end > ck.blob.len() {
                        return Err(bad(i, "parameter extends past the blob"));
                    }
                    if ck.params.iter().any(|p| p.name == fields[1]) {
                        return Err(bad(i, "duplicate parameter"));
                    }
                    ck.params.push(ParamEntry {
                        name: fields[1].to_owned(),
                        shape,
                        offset,
                    });
                }
                _ => return Err(bad(i, "unknown record")),
            }
        }
        let mut spans: Vec<(usize, usize)> = ck.params.iter().map(|p| (p.offset, p.offset + p.len())).collect();
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(FormatError::Manifest {
                line: 0,
                reason: "overlapping parameters".into(),
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use proptest::prelude::*;

    fn small_split() -> Split {
        let s = generate(&SynthSpec {
            n_train: 20,
            n_val: 1,
            n_test: 1,
            ..SynthSpec::default()
        })
        .unwrap();
        s.train
    }

    fn narrowed(split: &Split) -> Split {
        Split {
            x: split.x.mapv(|v| v as f32 as f64),
            y: split.y.mapv(|v| v as f32 as f64),
            ..split.clone()
        }
    }

    #[test]
    fn mfds_round_trip_is_bitwise() {
        let split = narrowed(&small_split());
        let bytes = write_mfds(&split).unwrap();
        assert_eq!(&bytes[..4], b"MFDS");
        assert_eq!(bytes.len(), 24 + 20 * (4 * 64 + 4));
        let back = read_mfds(&bytes).unwrap();
        assert_eq!(back, split);
        assert_eq!(write_mfds(&back).unwrap(), bytes);
    }

    #[test]
    fn mfds_errors() {
        let bytes = write_mfds(&small_split()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_mfds(&bad), Err(FormatError::BadMagic { .. })));
        assert!(matches!(read_mfds(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(read_mfds(&extra), Err(FormatError::Trailing(1)));
        let mut version = bytes.clone();
        version[4] = 2;
        assert_eq!(read_mfds(&version), Err(FormatError::Version(2)));
        let mut label = bytes.clone();
        let at = 24 + 4 * 64;
        label[at..at + 4].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(read_mfds(&label), Err(FormatError::Label { sample: 0, .. })));
        assert!(read_mfds(b"MF").is_err());
    }

    fn feature_file() -> FeatureFile {
        let taps = vec![
            Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.25),
            Array2::from_shape_fn((5, 2), |(i, j)| -((i + j) as f64) / 3.0),
            Array2::from_shape_fn((5, 4), |(i, j)| (i as f64).sin() + j as f64),
        ];
        let taps: Vec<_> = taps.into_iter().map(|t| t.mapv(|v| v as f32 as f64)).collect();
        FeatureFile::from_matrices(&taps, &[0, 1, 2, 3, 0], 4).unwrap()
    }

    #[test]
    fn mfft_round_trip_is_bitwise() {
        let file = feature_file();
        let bytes = write_mfft(&file).unwrap();
        let back = read_mfft(&bytes).unwrap();
        assert_eq!(back.tap_dims, file.tap_dims);
        assert_eq!(back.labels, file.labels);
        assert_eq!(back.tap_matrices(), file.tap_matrices());
        assert!(back.samples.iter().all(|s| s.source == TapSource::Ingested));
        assert_eq!(write_mfft(&back).unwrap(), bytes);
    }

    #[test]
    fn mfft_header_with_missing_tap_is_truncated() {
        let file = feature_file();
        let mut two = file.clone();
        two.tap_dims.truncate(2);
        for s in &mut two.samples {
            s.taps.truncate(2);
        }
        let mut bytes = write_mfft(&two).unwrap();
        // header announces a third tap the body never carries
        bytes[12..16].copy_from_slice(&3u32.to_le_bytes());
        bytes.splice(24..24, 4u32.to_le_bytes());
        assert!(matches!(read_mfft(&bytes), Err(FormatError::Truncated { .. })));
        let mut magic = write_mfft(&file).unwrap();
        magic[3] = b'S';
        assert!(matches!(read_mfft(&magic), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn mfft_writer_checks_dims() {
        let mut file = feature_file();
        file.samples[2].taps[1].push(0.0);
        assert!(matches!(write_mfft(&file), Err(FormatError::Dimension(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut ck = Checkpoint::default();
        ck.set_meta("kind", "extractor");
        ck.set_meta("arch", r#"{"triplets":[[1,2,1]],"M":2,"N":2,"P":1}"#);
        ck.push("layer0.weight", &[2, 3], (0..6).map(|v| v as f64 * 0.5));
        ck.push("layer0.bias", &[2], [1.0, -1.0]);
        let manifest = ck.manifest();
        assert!(manifest.contains("param layer0.weight 2x3 0\n"));
        assert!(manifest.contains("param layer0.bias 2 6\n"));
        let back = Checkpoint::parse(&manifest, &ck.blob_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("layer0.bias").unwrap().1, &[1.0f32, -1.0]);
    }

    #[test]
    fn checkpoint_rejects_bad_manifests() {
        let blob = vec![0u8; 16];
        for bad in [
            "",
            "param a 2 0\n",
            "# mfas checkpoint v1\nparam a 5 0\n",
            "# mfas checkpoint v1\nparam a 2 3\n",
            "# mfas checkpoint v1\nparam a 0 0\n",
            "# mfas checkpoint v1\nparam a 2 0\nparam a 2 2\n",
            "# mfas checkpoint v1\nparam a 3 0\nparam b 2 1\n",
            "# mfas checkpoint v1\nwhat\n",
        ] {
            assert!(Checkpoint::parse(bad, &blob).is_err(), "accepted {bad:?}");
        }
        assert!(Checkpoint::parse(MANIFEST_HEADER, &[0u8; 3]).is_err());
    }

    proptest! {
        #[test]
        fn readers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = read_mfds(&bytes);
            let _ = read_mfft(&bytes);
            let _ = Checkpoint::parse(&String::from_utf8_lossy(&bytes), &bytes);
        }
    }
}
