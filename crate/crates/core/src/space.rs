//! Fusion architecture descriptions and the search space they live in.
//!
//! An architecture is an ordered list of triplets `(gm, gn, gp)`: layer `l`
//! fuses tap `gm` of the first modality with tap `gn` of the second and
//! applies activation `gp`. Indices are 1-based everywhere they are visible
//! (fields, text formats, `Display`), so literals like `[(5,3,1),(4,2,1)]`
//! can be pasted as-is.

use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpaceError {
    #[error("invalid search space: {0}")]
    InvalidConfig(String),
    #[error("architecture has no fusion layers")]
    Empty,
    #[error("architecture has {len} layers, maximum is {max}")]
    TooLong { len: usize, max: usize },
    #[error("triplet {position}: {field}={value} out of range 1..={bound}")]
    OutOfRange {
        /// 1-based triplet position.
        position: usize,
        field: &'static str,
        value: i64,
        bound: usize,
    },
    #[error("parents have mixed lengths ({0} and {1})")]
    MixedLengths(usize, usize),
    #[error("wire header {field}={found} does not match space ({expected})")]
    HeaderMismatch {
        field: &'static str,
        found: i64,
        expected: usize,
    },
    #[error("malformed architecture text: {0}")]
    Malformed(String),
}

/// Shape of the search space: tap counts of both modalities, number of
/// activation choices and the maximum number of fusion layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "L")]
    pub max_layers: usize,
}

impl SpaceConfig {
    pub fn new(m: usize, n: usize, p: usize, max_layers: usize) -> Result<Self, SpaceError> {
        let cfg = SpaceConfig {
            m,
            n,
            p,
            max_layers,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), SpaceError> {
        for (name, v) in [
            ("M", self.m),
            ("N", self.n),
            ("P", self.p),
            ("L", self.max_layers),
        ] {
            if v == 0 {
                return Err(SpaceError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Number of distinct triplets, `M·N·P`.
    pub fn level_size(&self) -> usize {
        self.m * self.n * self.p
    }
}

/// One fusion layer: first-modality tap, second-modality tap, activation.
/// All three indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub gm: usize,
    pub gn: usize,
    pub gp: usize,
}

impl Triplet {
    pub const fn new(gm: usize, gn: usize, gp: usize) -> Self {
        Triplet { gm, gn, gp }
    }

    pub(crate) fn x_tap(&self) -> usize {
        self.gm - 1
    }

    pub(crate) fn y_tap(&self) -> usize {
        self.gn - 1
    }

    pub(crate) fn activation(&self) -> usize {
        self.gp - 1
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.gm, self.gn, self.gp)
    }
}

/// Ordered triplet sequence. Equality and ordering are plain sequence
/// equality and lexicographic order; layer order is significant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Architecture(Vec<Triplet>);

impl Architecture {
    /// Builds an architecture without bound checks; see [`validate`].
    pub fn new(triplets: Vec<Triplet>) -> Self {
        Architecture(triplets)
    }

    pub fn from_tuples(tuples: &[(usize, usize, usize)]) -> Self {
        Architecture(tuples.iter().map(|&(m, n, p)| Triplet::new(m, n, p)).collect())
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn extended(&self, t: Triplet) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(t);
        Architecture(v)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}

/// Checks index bounds and length. Reports the first violation found,
/// scanning triplets in order and fields in `gm, gn, gp` order.
pub fn validate(arch: &Architecture, cfg: &SpaceConfig) -> Result<(), SpaceError> {
    if arch.is_empty() {
        return Err(SpaceError::Empty);
    }
    if arch.len() > cfg.max_layers {
        return Err(SpaceError::TooLong {
            len: arch.len(),
            max: cfg.max_layers,
        });
    }
    for (i, t) in arch.triplets().iter().enumerate() {
        check_index(i + 1, "gm", t.gm as i64, cfg.m)?;
        check_index(i + 1, "gn", t.gn as i64, cfg.n)?;
        check_index(i + 1, "gp", t.gp as i64, cfg.p)?;
    }
    Ok(())
}

fn check_index(position: usize, field: &'static str, value: i64, bound: usize) -> Result<(), SpaceError> {
    if value < 1 || value as u64 > bound as u64 {
        return Err(SpaceError::OutOfRange {
            position,
            field,
            value,
            bound,
        });
    }
    Ok(())
}

/// All triplets of the space in lexicographic `(gm, gn, gp)` order.
pub fn triplets(cfg: &SpaceConfig) -> impl Iterator<Item = Triplet> + '_ {
    (1..=cfg.m).flat_map(move |gm| {
        (1..=cfg.n).flat_map(move |gn| (1..=cfg.p).map(move |gp| Triplet::new(gm, gn, gp)))
    })
}

/// Every single-layer architecture, `M·N·P` of them, lexicographic.
pub fn enumerate_level1(cfg: &SpaceConfig) -> Vec<Architecture> {
    triplets(cfg).map(|t| Architecture(vec![t])).collect()
}

/// Extends every parent by one more fusion layer with every triplet.
/// Output order is parent-major, then triplet order.
pub fn add_layer(parents: &[Architecture], cfg: &SpaceConfig) -> Result<Vec<Architecture>, SpaceError> {
    let Some(first) = parents.first() else {
        return Ok(Vec::new());
    };
    let depth = first.len();
    if depth == 0 {
        return Err(SpaceError::Empty);
    }
    if let Some(other) = parents.iter().find(|a| a.len() != depth) {
        return Err(SpaceError::MixedLengths(depth, other.len()));
    }
    if depth + 1 > cfg.max_layers {
        return Err(SpaceError::TooLong {
            len: depth + 1,
            max: cfg.max_layers,
        });
    }
    let level: Vec<Triplet> = triplets(cfg).collect();
    let mut out = Vec::with_capacity(parents.len() * level.len());
    for parent in parents {
        out.extend(level.iter().map(|&t| parent.extended(t)));
    }
    Ok(out)
}

/// Exact count of architectures with exactly `layers` fusion layers,
/// `(M·N·P)^layers`.
pub fn space_size(cfg: &SpaceConfig, layers: u32) -> BigUint {
    let base = BigUint::from(cfg.m) * BigUint::from(cfg.n) * BigUint::from(cfg.p);
    base.pow(layers)
}

/// Number of architectures with 1..=L layers, saturating at `u128::MAX`.
pub(crate) fn total_space_size(cfg: &SpaceConfig) -> u128 {
    let base = cfg.level_size() as u128;
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..cfg.max_layers {
        level = level.saturating_mul(base);
        total = total.saturating_add(level);
    }
    total
}

#[derive(Serialize)]
struct Wire {
    triplets: Vec<[usize; 3]>,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "P")]
    p: usize,
}

/// Wire form: `{"triplets":[[5,3,1],[4,2,1]],"M":5,"N":3,"P":2}`.
pub fn serialize(arch: &Architecture, cfg: &SpaceConfig) -> String {
    let wire = Wire {
        triplets: arch.triplets().iter().map(|t| [t.gm, t.gn, t.gp]).collect(),
        m: cfg.m,
        n: cfg.n,
        p: cfg.p,
    };
    serde_json::to_string(&wire).expect("wire struct serializes")
}

/// Parses an architecture and validates it against `cfg`.
///
/// Accepts the wire object, a bare triplet array (`[[5,3,1],[4,2,1]]`) or
/// tuple notation (`[(5,3,1),(4,2,1)]`). When the wire object carries
/// `M`/`N`/`P` they must match `cfg`.
pub fn deserialize(text: &str, cfg: &SpaceConfig) -> Result<Architecture, SpaceError> {
    let trimmed = text.trim();
    let json = if trimmed.starts_with('[') && trimmed.contains('(') {
        trimmed.replace('(', "[").replace(')', "]")
    } else {
        trimmed.to_owned()
    };
    let value: Value = serde_json::from_str(&json).map_err(|e| SpaceError::Malformed(e.to_string()))?;
    let list = match &value {
        Value::Array(items) => items,
        Value::Object(obj) => {
            for key in obj.keys() {
                if !matches!(key.as_str(), "triplets" | "M" | "N" | "P") {
                    return Err(SpaceError::Malformed(format!("unknown field `{key}`")));
                }
            }
            for (field, expected) in [("M", cfg.m), ("N", cfg.n), ("P", cfg.p)] {
                if let Some(v) = obj.get(field) {
                    let found = v
                        .as_i64()
                        .ok_or_else(|| SpaceError::Malformed(format!("`{field}` is not an integer")))?;
                    if found != expected as i64 {
                        return Err(SpaceError::HeaderMismatch {
                            field,
                            found,
                            expected,
                        });
                    }
                }
            }
            match obj.get("triplets") {
                Some(Value::Array(items)) => items,
                _ => return Err(SpaceError::Malformed("missing `triplets` array".into())),
            }
        }
        _ => return Err(SpaceError::Malformed("expected an array or object".into())),
    };

    let mut raw = Vec::with_capacity(list.len());
    for (i, item) in list.iter().enumerate() {
        let triple = item
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| SpaceError::Malformed(format!("triplet {} is not a 3-element array", i + 1)))?;
        let mut idx = [0i64; 3];
        for (slot, v) in idx.iter_mut().zip(triple) {
            *slot = v
                .as_i64()
                .ok_or_else(|| SpaceError::Malformed(format!("triplet {} has a non-integer entry", i + 1)))?;
        }
        raw.push(idx);
    }

    if raw.is_empty() {
        return Err(SpaceError::Empty);
    }
    if raw.len() > cfg.max_layers {
        return Err(SpaceError::TooLong {
            len: raw.len(),
            max: cfg.max_layers,
        });
    }
    let mut triplets = Vec::with_capacity(raw.len());
    for (i, [gm, gn, gp]) in raw.into_iter().enumerate() {
        check_index(i + 1, "gm", gm, cfg.m)?;
        check_index(i + 1, "gn", gn, cfg.n)?;
        check_index(i + 1, "gp", gp, cfg.p)?;
        triplets.push(Triplet::new(gm as usize, gn as usize, gp as usize));
    }
    Ok(Architecture(triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn cfg(m: usize, n: usize, p: usize, l: usize) -> SpaceConfig {
        SpaceConfig::new(m, n, p, l).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(validate(&Architecture::from_tuples(&[(1, 1, 1)]), &cfg(1, 1, 1, 1)).is_ok());
        assert!(validate(&Architecture::from_tuples(&[(5, 3, 1)]), &cfg(5, 3, 2, 1)).is_ok());
        let err = validate(&Architecture::from_tuples(&[(3, 3, 2)]), &cfg(2, 3, 2, 1)).unwrap_err();
        assert_eq!(
            err,
            SpaceError::OutOfRange {
                position: 1,
                field: "gm",
                value: 3,
                bound: 2
            }
        );
    }

    #[test]
    fn validate_length() {
        let c = cfg(2, 2, 2, 2);
        assert_eq!(validate(&Architecture::new(vec![]), &c), Err(SpaceError::Empty));
        let long = Architecture::from_tuples(&[(1, 1, 1); 3]);
        assert_eq!(validate(&long, &c), Err(SpaceError::TooLong { len: 3, max: 2 }));
    }

    #[test]
    fn zero_sized_config_rejected() {
        assert!(SpaceConfig::new(0, 1, 1, 1).is_err());
        assert!(SpaceConfig::new(1, 1, 1, 0).is_err());
    }

    #[test]
    fn level1_examples() {
        assert_eq!(enumerate_level1(&cfg(1, 1, 1, 1)), vec![Architecture::from_tuples(&[(1, 1, 1)])]);
        let got = enumerate_level1(&cfg(2, 2, 1, 1));
        let want: Vec<_> = [(1, 1, 1), (1, 2, 1), (2, 1, 1), (2, 2, 1)]
            .iter()
            .map(|t| Architecture::from_tuples(&[*t]))
            .collect();
        assert_eq!(got, want);
        assert_eq!(enumerate_level1(&cfg(3, 5, 2, 1)).len(), 30);
    }

    #[test]
    fn level1_cardinality_exhaustive() {
        for m in 1..=8 {
            for n in 1..=8 {
                for p in 1..=8 {
                    let c = cfg(m, n, p, 1);
                    let level = enumerate_level1(&c);
                    assert_eq!(level.len(), m * n * p);
                    assert!(level.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }

    #[test]
    fn add_layer_examples() {
        let c = cfg(1, 1, 1, 2);
        let out = add_layer(&[Architecture::from_tuples(&[(1, 1, 1)])], &c).unwrap();
        assert_eq!(out, vec![Architecture::from_tuples(&[(1, 1, 1), (1, 1, 1)])]);

        let c = cfg(3, 5, 2, 2);
        let parents: Vec<_> = enumerate_level1(&c).into_iter().take(5).collect();
        assert_eq!(add_layer(&parents, &c).unwrap().len(), 150);

        let c = cfg(2, 1, 1, 2);
        let parents = enumerate_level1(&c);
        let kids = add_layer(&parents, &c).unwrap();
        assert_eq!(kids.len(), 4);
        assert_eq!(kids.iter().collect::<HashSet<_>>().len(), 4);
    }

    #[test]
    fn add_layer_errors() {
        let c = cfg(2, 2, 1, 3);
        let mixed = vec![
            Architecture::from_tuples(&[(1, 1, 1)]),
            Architecture::from_tuples(&[(1, 1, 1), (2, 2, 1)]),
        ];
        assert_eq!(add_layer(&mixed, &c), Err(SpaceError::MixedLengths(1, 2)));
        let c = cfg(2, 2, 1, 1);
        assert!(matches!(
            add_layer(&enumerate_level1(&c), &c),
            Err(SpaceError::TooLong { len: 2, max: 1 })
        ));
    }

    #[test]
    fn space_size_values() {
        assert_eq!(space_size(&cfg(8, 2, 3, 3), 3), BigUint::from(110_592u32));
        assert_eq!(space_size(&cfg(4, 4, 3, 4), 4), BigUint::from(5_308_416u32));
        assert_eq!(space_size(&cfg(16, 16, 2, 5), 5), BigUint::from(35_184_372_088_832u64));
        assert_eq!(space_size(&cfg(1, 1, 1, 1), 1), BigUint::from(1u32));
    }

    #[test]
    fn space_size_matches_brute_force() {
        for m in 1..=4 {
            for n in 1..=4 {
                for p in 1..=3 {
                    let base: usize = m * n * p;
                    for l in 1..=6u32 {
                        if base.pow(l) > 10_000 {
                            break;
                        }
                        let c = cfg(m, n, p, l as usize);
                        let mut level = enumerate_level1(&c);
                        for _ in 1..l {
                            level = add_layer(&level, &c).unwrap();
                        }
                        assert_eq!(space_size(&c, l), BigUint::from(level.len()));
                    }
                }
            }
        }
    }

    #[test]
    fn wire_examples() {
        let c = cfg(5, 3, 2, 3);
        let arch = Architecture::from_tuples(&[(5, 3, 1), (4, 2, 1), (5, 3, 1)]);
        let text = serialize(&arch, &c);
        assert_eq!(text, r#"{"triplets":[[5,3,1],[4,2,1],[5,3,1]],"M":5,"N":3,"P":2}"#);
        assert_eq!(deserialize(&text, &c).unwrap(), arch);
        assert_eq!(deserialize("[(5, 3, 1), (4, 2, 1), (5, 3, 1)]", &c).unwrap(), arch);
        assert_eq!(arch.to_string(), "[(5,3,1),(4,2,1),(5,3,1)]");

        let one = cfg(1, 1, 1, 1);
        let a = Architecture::from_tuples(&[(1, 1, 1)]);
        assert_eq!(deserialize(&serialize(&a, &one), &one).unwrap(), a);

        assert!(matches!(
            deserialize("[[0,1,1]]", &one),
            Err(SpaceError::OutOfRange { position: 1, field: "gm", value: 0, .. })
        ));
    }

    #[test]
    fn wire_errors() {
        let c = cfg(5, 3, 2, 3);
        for bad in ["", "{", "[[1,1]]", "[[1,1,\"a\"]]", "42", r#"{"triplets":[[1,1,1]],"X":1}"#, "[]"] {
            assert!(deserialize(bad, &c).is_err(), "accepted {bad:?}");
        }
        assert!(matches!(
            deserialize(r#"{"triplets":[[1,1,1]],"M":4}"#, &c),
            Err(SpaceError::HeaderMismatch { field: "M", .. })
        ));
        assert!(matches!(
            deserialize("[[1,1,1],[1,1,1],[1,1,1],[1,1,1]]", &c),
            Err(SpaceError::TooLong { .. })
        ));
    }

    fn arb_space_and_arch() -> impl Strategy<Value = (SpaceConfig, Architecture)> {
        (1usize..6, 1usize..6, 1usize..4, 1usize..5).prop_flat_map(|(m, n, p, l)| {
            let c = SpaceConfig::new(m, n, p, l).unwrap();
            prop::collection::vec((1..=m, 1..=n, 1..=p), 1..=l)
                .prop_map(move |ts| (c, Architecture::from_tuples(&ts)))
        })
    }

    proptest! {
        #[test]
        fn wire_round_trip((c, arch) in arb_space_and_arch()) {
            prop_assert!(validate(&arch, &c).is_ok());
            let text = serialize(&arch, &c);
            let back = deserialize(&text, &c).unwrap();
            prop_assert_eq!(&back, &arch);
            prop_assert_eq!(serialize(&back, &c), text);
        }

        #[test]
        fn add_layer_is_distinct_product(
            (m, n, p) in (1usize..4, 1usize..4, 1usize..3),
            picks in prop::collection::btree_set(0usize..27, 1..8),
        ) {
            let c = SpaceConfig::new(m, n, p, 3).unwrap();
            let level = enumerate_level1(&c);
            let parents: Vec<_> = picks.iter().filter_map(|&i| level.get(i).cloned()).collect();
            prop_assume!(!parents.is_empty());
            let kids = add_layer(&parents, &c).unwrap();
            prop_assert_eq!(kids.len(), parents.len() * m * n * p);
            prop_assert_eq!(kids.iter().collect::<HashSet<_>>().len(), kids.len());
        }
    }
}
