//! The 27-dimensional multi-resolution coding space.
//!
//! A network is described by stem widths `i1, i2`, four stages where stage
//! `s` holds a block count `b_s` plus `s` unit counts and `s` channel widths,
//! and an output width `o1`. Codes live in two coordinate systems:
//!
//! * raw units: integers on the sampling grid (counts 1..=4, widths 8..=128
//!   in steps of 8), see [`RawCode`];
//! * normalized: each dimension mapped affinely onto `[0, 1]`, see [`ArchCode`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of dimensions in a multi-resolution code.
pub const CODE_DIM: usize = 27;
/// Number of stages in the multi-resolution family.
pub const NUM_STAGES: usize = 4;

pub const MIN_CHANNELS: u32 = 8;
pub const MAX_CHANNELS: u32 = 128;
pub const CHANNEL_STEP: u32 = 8;
pub const MIN_COUNT: u32 = 1;
pub const MAX_COUNT: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DimKind {
    /// Convolution width (`i`, `c`, `o` dimensions).
    Channel,
    /// Block or residual-unit count (`b`, `n` dimensions).
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
    /// Grid spacing; also the single-step edit size used by winner-takes-all.
    pub unit: f64,
}

impl Bounds {
    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Number of grid points in this dimension.
    pub fn levels(&self) -> u32 {
        (self.span() / self.unit) as u32 + 1
    }
}

impl DimKind {
    pub fn bounds(self) -> Bounds {
        match self {
            DimKind::Channel => Bounds {
                min: MIN_CHANNELS as f64,
                max: MAX_CHANNELS as f64,
                unit: CHANNEL_STEP as f64,
            },
            DimKind::Count => Bounds {
                min: MIN_COUNT as f64,
                max: MAX_COUNT as f64,
                unit: 1.0,
            },
        }
    }
}

use DimKind::{Channel as C, Count as N};

/// Dimension kinds in canonical order:
/// `i1, i2, b1, n1, c1, b2, n2(2), c2(2), b3, n3(3), c3(3), b4, n4(4), c4(4), o1`.
pub const DIM_KINDS: [DimKind; CODE_DIM] = [
    C, C, // stem
    N, N, C, // stage 1
    N, N, N, C, C, // stage 2
    N, N, N, N, C, C, C, // stage 3
    N, N, N, N, N, C, C, C, C, // stage 4
    C, // output
];

/// Human-readable labels for each dimension, matching [`DIM_KINDS`].
pub const DIM_LABELS: [&str; CODE_DIM] = [
    "i1", "i2", //
    "b1", "n1_1", "c1_1", //
    "b2", "n2_1", "n2_2", "c2_1", "c2_2", //
    "b3", "n3_1", "n3_2", "n3_3", "c3_1", "c3_2", "c3_3", //
    "b4", "n4_1", "n4_2", "n4_3", "n4_4", "c4_1", "c4_2", "c4_3", "c4_4", //
    "o1",
];

/// Offset of stage `s` (1-based) in the canonical order: its `b_s` entry.
pub const fn stage_offset(stage: usize) -> usize {
    // 2 stem dims, then stage t occupies 1 + 2t dims.
    let mut off = 2;
    let mut t = 1;
    while t < stage {
        off += 1 + 2 * t;
        t += 1;
    }
    off
}

pub fn bounds(dim: usize) -> Result<Bounds> {
    DIM_KINDS
        .get(dim)
        .map(|k| k.bounds())
        .ok_or_else(|| Error::Usage(format!("dimension index {dim} out of range 0..{CODE_DIM}")))
}

/// A point of the coding space in normalized coordinates, each value in `[0, 1]`.
///
/// Values need not sit on the grid; propagation moves codes continuously and
/// only [`round_code`] snaps them back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchCode([f64; CODE_DIM]);

impl ArchCode {
    /// Builds a code from normalized values, clamping each into `[0, 1]`.
    /// NaN is treated as 0.
    pub fn from_normalized(values: [f64; CODE_DIM]) -> Self {
        ArchCode(values.map(clamp_unit))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; CODE_DIM] = values.try_into().map_err(|_| {
            Error::Validation(format!(
                "code has {} entries, expected {CODE_DIM}",
                values.len()
            ))
        })?;
        Ok(Self::from_normalized(arr))
    }

    pub fn values(&self) -> &[f64; CODE_DIM] {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Continuous values in raw units (not snapped to the grid).
    pub fn to_raw_units(&self) -> [f64; CODE_DIM] {
        let mut out = [0.0; CODE_DIM];
        for (i, (o, &v)) in out.iter_mut().zip(self.0.iter()).enumerate() {
            let b = DIM_KINDS[i].bounds();
            *o = b.min + v * b.span();
        }
        out
    }

    /// The `{b,n=2; c,i,o=64}` starting point used by default for propagation.
    pub fn default_init() -> Self {
        RawCode::default_init().normalize()
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// A code in raw units, on the sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawCode([u32; CODE_DIM]);

impl RawCode {
    /// Validates that every entry lies on its dimension's grid.
    pub fn new(values: [u32; CODE_DIM]) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            check_on_grid(i, v)?;
        }
        Ok(RawCode(values))
    }

    pub fn from_slice(values: &[i64]) -> Result<Self> {
        if values.len() != CODE_DIM {
            return Err(Error::Validation(format!(
                "code has {} entries, expected {CODE_DIM}",
                values.len()
            )));
        }
        let mut out = [0u32; CODE_DIM];
        for (i, &v) in values.iter().enumerate() {
            let v = u32::try_from(v).map_err(|_| {
                Error::Validation(format!(
                    "dimension {} ({}) = {v} is out of range",
                    i, DIM_LABELS[i]
                ))
            })?;
            out[i] = v;
        }
        Self::new(out)
    }

    pub fn default_init() -> Self {
        let mut v = [0u32; CODE_DIM];
        for (i, k) in DIM_KINDS.iter().enumerate() {
            v[i] = match k {
                DimKind::Channel => 64,
                DimKind::Count => 2,
            };
        }
        RawCode(v)
    }

    pub fn values(&self) -> &[u32; CODE_DIM] {
        &self.0
    }

    pub fn get(&self, dim: usize) -> u32 {
        self.0[dim]
    }

    /// Returns a copy with `dim` moved by `steps` grid units, or `None` if
    /// that leaves the bounds.
    pub fn stepped(&self, dim: usize, steps: i32) -> Option<RawCode> {
        let b = DIM_KINDS[dim].bounds();
        let next = self.0[dim] as i64 + steps as i64 * b.unit as i64;
        if next < b.min as i64 || next > b.max as i64 {
            return None;
        }
        let mut out = *self;
        out.0[dim] = next as u32;
        Some(out)
    }

    pub fn normalize(&self) -> ArchCode {
        let mut out = [0.0; CODE_DIM];
        for (i, (o, &v)) in out.iter_mut().zip(self.0.iter()).enumerate() {
            let b = DIM_KINDS[i].bounds();
            *o = (v as f64 - b.min) / b.span();
        }
        ArchCode(out)
    }
}

fn check_on_grid(dim: usize, v: u32) -> Result<()> {
    let b = DIM_KINDS[dim].bounds();
    let ok = (v as f64) >= b.min && (v as f64) <= b.max && (v as f64 - b.min) % b.unit == 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "dimension {dim} ({}) = {v} is not on the grid {}..={} step {}",
            DIM_LABELS[dim], b.min, b.max, b.unit
        )))
    }
}

impl serde::Serialize for RawCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for RawCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(d)?;
        RawCode::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for RawCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for RawCode {
    type Err = Error;

    /// Parses the canonical textual form: 27 comma-separated integers.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<i64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Validation(format!("bad code entry {p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        RawCode::from_slice(&parts)
    }
}

/// Maps raw values (within bounds, not necessarily on the grid) to `[0, 1]`.
pub fn normalize(raw: &[f64]) -> Result<ArchCode> {
    if raw.len() != CODE_DIM {
        return Err(Error::Validation(format!(
            "code has {} entries, expected {CODE_DIM}",
            raw.len()
        )));
    }
    let mut out = [0.0; CODE_DIM];
    for (i, &v) in raw.iter().enumerate() {
        let b = DIM_KINDS[i].bounds();
        if !v.is_finite() || v < b.min || v > b.max {
            return Err(Error::Validation(format!(
                "dimension {i} ({}) = {v} is outside [{}, {}]",
                DIM_LABELS[i], b.min, b.max
            )));
        }
        out[i] = (v - b.min) / b.span();
    }
    Ok(ArchCode(out))
}

/// Snaps one raw-unit value onto the grid of `kind`: nearest grid point,
/// ties away from zero, then clamped to the bounds.
pub fn round_value(kind: DimKind, raw: f64) -> u32 {
    let b = kind.bounds();
    let raw = if raw.is_nan() { b.min } else { raw };
    let snapped = (raw / b.unit).round() * b.unit;
    snapped.clamp(b.min, b.max) as u32
}

/// Rounds a continuous code to the nearest grid point in raw units.
pub fn round_code(code: &ArchCode) -> RawCode {
    let raw = code.to_raw_units();
    let mut out = [0u32; CODE_DIM];
    for i in 0..CODE_DIM {
        out[i] = round_value(DIM_KINDS[i], raw[i]);
    }
    RawCode(out)
}

/// Task head attached after the last stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    #[serde(alias = "cls")]
    Classification,
    #[serde(alias = "seg")]
    Segmentation,
}

impl FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cls" | "classification" => Ok(Head::Classification),
            "seg" | "segmentation" => Ok(Head::Segmentation),
            other => Err(Error::Usage(format!(
                "unknown head {other:?} (expected cls or seg)"
            ))),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Classification => "cls",
            Head::Segmentation => "seg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct InputGeometry {
    pub height: u32,
    pub width: u32,
    pub in_channels: u32,
    pub num_classes: u32,
}

impl InputGeometry {
    pub fn new(height: u32, width: u32) -> Self {
        InputGeometry {
            height,
            width,
            in_channels: 3,
            num_classes: 19,
        }
    }

    /// Parses `HxW`, e.g. `512x1024`.
    pub fn parse_size(s: &str) -> Result<(u32, u32)> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Usage(format!("input size {s:?} is not of the form HxW")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|e| Error::Usage(format!("input size {s:?}: {e}")))
        };
        Ok((parse(h)?, parse(w)?))
    }
}

impl Default for InputGeometry {
    /// 128x128 RGB, 19 classes (segmentation reporting default).
    fn default() -> Self {
        InputGeometry::new(128, 128)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Stage {
    pub blocks: u32,
    pub units: Vec<u32>,
    pub channels: Vec<u32>,
}

/// A decoded discrete architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    /// Widths of the two stride-2 stem convolutions `(i1, i2)`.
    pub stem: (u32, u32),
    pub stages: Vec<Stage>,
    pub output_width: u32,
    pub head: Head,
    pub input: InputGeometry,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        self.raw_code().map(|_| ())
    }

    /// Flattens the spec into canonical order, checking every invariant.
    pub fn raw_code(&self) -> Result<RawCode> {
        if self.stages.len() != NUM_STAGES {
            return Err(Error::Validation(format!(
                "network has {} stages, expected {NUM_STAGES}",
                self.stages.len()
            )));
        }
        let mut v = Vec::with_capacity(CODE_DIM);
        v.push(self.stem.0);
        v.push(self.stem.1);
        for (idx, st) in self.stages.iter().enumerate() {
            let s = idx + 1;
            if st.units.len() != s || st.channels.len() != s {
                return Err(Error::Validation(format!(
                    "stage {s} must have {s} unit and channel entries (got {} and {})",
                    st.units.len(),
                    st.channels.len()
                )));
            }
            v.push(st.blocks);
            v.extend_from_slice(&st.units);
            v.extend_from_slice(&st.channels);
        }
        v.push(self.output_width);
        let arr: [u32; CODE_DIM] = v.try_into().expect("layout yields 27 entries");
        RawCode::new(arr)
    }
}

/// Decodes a raw grid code into a network.
pub fn decode_raw(raw: &RawCode, head: Head, input: InputGeometry) -> NetworkSpec {
    let v = raw.values();
    let stages = (1..=NUM_STAGES)
        .map(|s| {
            let off = stage_offset(s);
            Stage {
                blocks: v[off],
                units: v[off + 1..off + 1 + s].to_vec(),
                channels: v[off + 1 + s..off + 1 + 2 * s].to_vec(),
            }
        })
        .collect();
    NetworkSpec {
        stem: (v[0], v[1]),
        stages,
        output_width: v[CODE_DIM - 1],
        head,
        input,
    }
}

/// Rounds `code` and maps it onto the stem/stage/output structure.
pub fn decode(code: &ArchCode, head: Head, input: InputGeometry) -> NetworkSpec {
    decode_raw(&round_code(code), head, input)
}

pub fn encode(spec: &NetworkSpec) -> Result<ArchCode> {
    Ok(spec.raw_code()?.normalize())
}

/// Draws one code uniformly from the grid.
pub fn sample_raw<R: Rng + ?Sized>(rng: &mut R) -> RawCode {
    let mut out = [0u32; CODE_DIM];
    for (i, k) in DIM_KINDS.iter().enumerate() {
        let b = k.bounds();
        let level = rng.gen_range(0..b.levels());
        out[i] = b.min as u32 + level * b.unit as u32;
    }
    RawCode(out)
}

/// Uniform grid sample for a given seed, in normalized coordinates.
pub fn sample(seed: u64) -> ArchCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_raw(&mut rng).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bounds_by_kind() {
        assert_eq!(
            bounds(0).unwrap(),
            Bounds {
                min: 8.0,
                max: 128.0,
                unit: 8.0
            }
        );
        assert_eq!(
            bounds(2).unwrap(),
            Bounds {
                min: 1.0,
                max: 4.0,
                unit: 1.0
            }
        );
        assert_eq!(
            bounds(26).unwrap(),
            Bounds {
                min: 8.0,
                max: 128.0,
                unit: 8.0
            }
        );
        assert!(matches!(bounds(27), Err(Error::Usage(_))));
    }

    #[test]
    fn layout_offsets() {
        assert_eq!(stage_offset(1), 2);
        assert_eq!(stage_offset(2), 5);
        assert_eq!(stage_offset(3), 10);
        assert_eq!(stage_offset(4), 17);
        assert_eq!(DIM_LABELS[stage_offset(4)], "b4");
        let channels = DIM_KINDS.iter().filter(|k| **k == DimKind::Channel).count();
        assert_eq!(channels, 2 + 1 + 2 + 3 + 4 + 1);
    }

    #[test]
    fn normalize_affine() {
        let mut raw = RawCode::default_init().values().map(|v| v as f64);
        raw[0] = 64.0;
        raw[2] = 2.0;
        raw[1] = 8.0;
        let code = normalize(&raw).unwrap();
        assert_abs_diff_eq!(code.values()[0], 56.0 / 120.0, epsilon = 1e-15);
        assert_abs_diff_eq!(code.values()[2], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(code.values()[1], 0.0);
    }

    #[test]
    fn normalize_rejects_out_of_bounds() {
        let mut raw = RawCode::default_init().values().map(|v| v as f64);
        raw[5] = 5.0;
        let err = normalize(&raw).unwrap_err().to_string();
        assert!(err.contains("b2"), "{err}");
        assert!(normalize(&raw[..26]).is_err());
    }

    #[test]
    fn rounding_rules() {
        assert_eq!(round_value(DimKind::Channel, 61.2), 64);
        assert_eq!(round_value(DimKind::Channel, 59.9), 56);
        assert_eq!(round_value(DimKind::Count, 2.5), 3);
        assert_eq!(round_value(DimKind::Count, 1.5), 2);
        assert_eq!(round_value(DimKind::Channel, 500.0), 128);
        assert_eq!(round_value(DimKind::Channel, -3.0), 8);
        assert_eq!(round_value(DimKind::Count, 0.2), 1);
    }

    #[test]
    fn decode_default_init() {
        let spec = decode(
            &ArchCode::default_init(),
            Head::Segmentation,
            InputGeometry::default(),
        );
        assert_eq!(spec.stem, (64, 64));
        assert_eq!(spec.output_width, 64);
        for (i, st) in spec.stages.iter().enumerate() {
            assert_eq!(st.blocks, 2);
            assert_eq!(st.units, vec![2; i + 1]);
            assert_eq!(st.channels, vec![64; i + 1]);
        }
    }

    #[test]
    fn extreme_codes() {
        let min = decode(
            &ArchCode::from_normalized([0.0; CODE_DIM]),
            Head::Classification,
            InputGeometry::default(),
        );
        assert_eq!(min.stem, (8, 8));
        assert!(min
            .stages
            .iter()
            .all(|s| s.blocks == 1 && s.units.iter().all(|&n| n == 1)));
        assert!(min
            .stages
            .iter()
            .all(|s| s.channels.iter().all(|&c| c == 8)));
        assert_eq!(encode(&min).unwrap().values(), &[0.0; CODE_DIM]);

        let mut max = min.clone();
        max.stem = (128, 128);
        max.output_width = 128;
        for st in &mut max.stages {
            st.blocks = 4;
            st.units.iter_mut().for_each(|n| *n = 4);
            st.channels.iter_mut().for_each(|c| *c = 128);
        }
        assert_eq!(encode(&max).unwrap().values(), &[1.0; CODE_DIM]);
    }

    #[test]
    fn encode_rejects_invalid_spec() {
        let mut spec = decode(
            &ArchCode::default_init(),
            Head::Segmentation,
            InputGeometry::default(),
        );
        spec.stages[2].channels[1] = 60;
        assert!(encode(&spec).is_err());
        spec.stages[2].channels[1] = 64;
        spec.stages[1].units.push(2);
        assert!(encode(&spec).is_err());
    }

    #[test]
    fn encode_matches_normalize_of_raw() {
        let spec = decode(
            &ArchCode::default_init(),
            Head::Segmentation,
            InputGeometry::default(),
        );
        let raw: Vec<f64> = RawCode::default_init()
            .values()
            .iter()
            .map(|&v| v as f64)
            .collect();
        assert_eq!(encode(&spec).unwrap(), normalize(&raw).unwrap());
    }

    #[test]
    fn sampling_deterministic_and_covering() {
        assert_eq!(sample(7), sample(7));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen: Vec<std::collections::HashSet<u32>> = vec![Default::default(); CODE_DIM];
        for _ in 0..10_000 {
            let raw = sample_raw(&mut rng);
            for (i, &v) in raw.values().iter().enumerate() {
                seen[i].insert(v);
            }
        }
        for (i, s) in seen.iter().enumerate() {
            assert_eq!(s.len() as u32, DIM_KINDS[i].bounds().levels(), "dim {i}");
        }
    }

    #[test]
    fn text_form() {
        let raw = RawCode::default_init();
        let text = raw.to_string();
        assert_eq!(text.split(',').count(), CODE_DIM);
        assert_eq!(text.parse::<RawCode>().unwrap(), raw);
        assert!("1,2,3".parse::<RawCode>().is_err());
        let bad = text.replacen("64", "65", 1);
        assert!(bad.parse::<RawCode>().is_err());
    }

    #[test]
    fn decode_encode_roundtrip_1000_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let raw = sample_raw(&mut rng);
            let spec = decode_raw(&raw, Head::Segmentation, InputGeometry::default());
            let code = encode(&spec).unwrap();
            assert_eq!(round_code(&code), raw);
            assert_eq!(
                decode(&code, Head::Segmentation, InputGeometry::default()),
                spec
            );
        }
    }

    proptest! {
        #[test]
        fn round_is_idempotent_and_total(values in proptest::array::uniform27(-2.0f64..3.0)) {
            let code = ArchCode::from_normalized(values);
            prop_assert!(code.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let raw = round_code(&code);
            prop_assert!(RawCode::new(*raw.values()).is_ok());
            prop_assert_eq!(round_code(&raw.normalize()), raw);
        }
    }
}
