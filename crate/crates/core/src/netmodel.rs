//! Analytic FLOPs and parameter model of decoded networks.
//!
//! Counting conventions: one FLOP is one multiply-accumulate; a convolution
//! costs `K*K*C_in*C_out*H_out*W_out`; normalization, activations, resizing
//! and element-wise additions are free. Convolutions carry no bias (they are
//! followed by normalization); the final classifier carries one.
//!
//! Layer model:
//! * stem: 3x3 s2 `in -> i1`, 3x3 s2 `i1 -> i2`;
//! * branch `j` (1-based) runs at `1/2^(j+1)` of the input resolution;
//! * residual unit: 3x3 conv `C_in -> C_out` (with the unit's stride), 3x3 conv
//!   `C_out -> C_out`, plus a 1x1 projection on the skip when `C_in != C_out`
//!   or the stride is 2;
//! * every block is a fusion module followed by a parallel module. Output
//!   branch `j` of a fusion gathers branches `j-1` (down, stride 2), `j`
//!   (same) and `j+1` (up: unit at the lower resolution, then free nearest
//!   upsampling), each through one residual unit mapping to `c_s^j`. The first
//!   block of stage `s` creates branch `s` from branch `s-1` only. A fusion
//!   with a single branch is the identity;
//! * parallel module: `n_s^j` units of width `c_s^j` on branch `j`; the first
//!   unit of stage 1 maps `i2 -> c_1^1` and always carries the projection, so
//!   the cost stays monotone in `i2` when it crosses `c_1^1`;
//! * classification head: branches resized to the 32x resolution,
//!   concatenated, 1x1 conv to `o1`, global pooling, linear to the classes;
//! * segmentation head: branches resized to the 4x resolution, concatenated,
//!   1x1 conv to `o1`, 1x1 conv (with bias) to the classes.

use std::collections::HashMap;
use std::io::Write;
use std::sync::RwLock;

use crate::coding::{
    self, ArchCode, Head, InputGeometry, NetworkSpec, RawCode, CODE_DIM, DIM_KINDS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub label: String,
    /// 0 for stem and head layers.
    pub stage: u32,
    /// 0 when the layer does not belong to a branch.
    pub branch: u32,
    pub kind: LayerKind,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// GFLOPs (multiply-accumulates / 1e9).
    pub flops: f64,
    /// Millions of parameters.
    pub params: f64,
    pub total_macs: u64,
    pub total_params: u64,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    fn from_layers(per_layer: Vec<LayerCost>) -> Self {
        let total_macs = per_layer.iter().map(|l| l.macs).sum();
        let total_params = per_layer.iter().map(|l| l.params).sum();
        CostReport {
            flops: total_macs as f64 / 1e9,
            params: total_params as f64 / 1e6,
            total_macs,
            total_params,
            per_layer,
        }
    }

    /// Writes `layer,stage,branch,flops_mac,params` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,stage,branch,flops_mac,params")?;
        for l in &self.per_layer {
            writeln!(
                w,
                "{},{},{},{},{}",
                l.label, l.stage, l.branch, l.macs, l.params
            )?;
        }
        Ok(())
    }
}

struct Builder {
    layers: Vec<LayerCost>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        label: String,
        stage: u32,
        branch: u32,
        k: u64,
        cin: u32,
        cout: u32,
        hw: (u64, u64),
    ) {
        let params = k * k * cin as u64 * cout as u64;
        self.layers.push(LayerCost {
            label,
            stage,
            branch,
            kind: LayerKind::Conv,
            macs: params * hw.0 * hw.1,
            params,
        });
    }

    /// Residual unit producing `cout` channels at output resolution `hw`.
    #[allow(clippy::too_many_arguments)]
    fn unit(
        &mut self,
        label: &str,
        stage: u32,
        branch: u32,
        cin: u32,
        cout: u32,
        stride: u32,
        hw: (u64, u64),
        project: bool,
    ) {
        self.conv(format!("{label}.conv1"), stage, branch, 3, cin, cout, hw);
        self.conv(format!("{label}.conv2"), stage, branch, 3, cout, cout, hw);
        if project || cin != cout || stride != 1 {
            self.conv(format!("{label}.proj"), stage, branch, 1, cin, cout, hw);
        }
    }
}

fn check_geometry(input: &InputGeometry) -> Result<()> {
    if input.height == 0
        || input.width == 0
        || !input.height.is_multiple_of(32)
        || !input.width.is_multiple_of(32)
    {
        return Err(Error::Validation(format!(
            "input {}x{} must be positive and divisible by 32",
            input.height, input.width
        )));
    }
    if input.in_channels == 0 || input.num_classes == 0 {
        return Err(Error::Validation(
            "input channels and classes must be positive".into(),
        ));
    }
    Ok(())
}

/// Full per-layer cost of a network.
pub fn cost(spec: &NetworkSpec) -> Result<CostReport> {
    spec.validate()?;
    check_geometry(&spec.input)?;
    let (h, w) = (spec.input.height as u64, spec.input.width as u64);
    let res = |branch: u32| (h >> (branch + 1), w >> (branch + 1));
    let mut b = Builder { layers: Vec::new() };

    b.conv(
        "stem.conv1".into(),
        0,
        0,
        3,
        spec.input.in_channels,
        spec.stem.0,
        (h / 2, w / 2),
    );
    b.conv(
        "stem.conv2".into(),
        0,
        0,
        3,
        spec.stem.0,
        spec.stem.1,
        (h / 4, w / 4),
    );

    let mut prev: Vec<u32> = vec![spec.stem.1];
    for (idx, st) in spec.stages.iter().enumerate() {
        let s = idx as u32 + 1;
        for blk in 1..=st.blocks {
            // Fusion module. Branch widths entering this block are `prev`.
            if st.channels.len() > 1 {
                for j in 1..=s {
                    let out_c = st.channels[j as usize - 1];
                    let tag = format!("s{s}.b{blk}.fuse{j}");
                    if j >= 2 && (j - 1) as usize <= prev.len() {
                        let cin = prev[j as usize - 2];
                        b.unit(
                            &format!("{tag}.down{}", j - 1),
                            s,
                            j,
                            cin,
                            out_c,
                            2,
                            res(j),
                            false,
                        );
                    }
                    if (j as usize) <= prev.len() {
                        b.unit(
                            &format!("{tag}.same"),
                            s,
                            j,
                            prev[j as usize - 1],
                            out_c,
                            1,
                            res(j),
                            false,
                        );
                    }
                    if (j as usize) < prev.len() {
                        let cin = prev[j as usize];
                        b.unit(
                            &format!("{tag}.up{}", j + 1),
                            s,
                            j,
                            cin,
                            out_c,
                            1,
                            res(j + 1),
                            false,
                        );
                    }
                }
                prev = st.channels.clone();
            }
            // Parallel module.
            for j in 1..=s {
                let c = st.channels[j as usize - 1];
                for u in 1..=st.units[j as usize - 1] {
                    let entry = s == 1 && blk == 1 && u == 1;
                    let cin = if entry { prev[0] } else { c };
                    b.unit(
                        &format!("s{s}.b{blk}.branch{j}.unit{u}"),
                        s,
                        j,
                        cin,
                        c,
                        1,
                        res(j),
                        entry,
                    );
                }
            }
            prev = st.channels.clone();
        }
    }

    let concat: u32 = spec.stages[coding::NUM_STAGES - 1].channels.iter().sum();
    let o1 = spec.output_width;
    let classes = spec.input.num_classes;
    match spec.head {
        Head::Classification => {
            b.conv("head.fuse".into(), 0, 0, 1, concat, o1, res(4));
            let params = o1 as u64 * classes as u64 + classes as u64;
            b.layers.push(LayerCost {
                label: "head.classifier".into(),
                stage: 0,
                branch: 0,
                kind: LayerKind::Linear,
                macs: o1 as u64 * classes as u64,
                params,
            });
        }
        Head::Segmentation => {
            b.conv("head.fuse".into(), 0, 0, 1, concat, o1, res(1));
            b.conv("head.classifier".into(), 0, 0, 1, o1, classes, res(1));
            // classifier bias
            if let Some(last) = b.layers.last_mut() {
                last.params += classes as u64;
            }
        }
    }
    Ok(CostReport::from_layers(b.layers))
}

/// Memoized map from rounded codes to GFLOPs for one head and input geometry.
///
/// Safe to share across threads; the cache only stores results of [`cost`].
#[derive(Debug)]
pub struct FlopsTable {
    head: Head,
    input: InputGeometry,
    cache: RwLock<HashMap<RawCode, f64>>,
}

impl FlopsTable {
    pub fn new(head: Head, input: InputGeometry) -> Result<Self> {
        check_geometry(&input)?;
        Ok(FlopsTable {
            head,
            input,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input(&self) -> InputGeometry {
        self.input
    }

    pub fn lookup_raw(&self, raw: &RawCode) -> f64 {
        if let Some(v) = self.cache.read().expect("flops cache poisoned").get(raw) {
            return *v;
        }
        let spec = coding::decode_raw(raw, self.head, self.input);
        // Geometry was validated at construction and raw codes are always valid.
        let flops = cost(&spec).expect("valid spec and geometry").flops;
        self.cache
            .write()
            .expect("flops cache poisoned")
            .insert(*raw, flops);
        flops
    }

    /// GFLOPs of the network obtained by rounding `code`.
    pub fn lookup(&self, code: &ArchCode) -> f64 {
        self.lookup_raw(&coding::round_code(code))
    }

    /// FLOPs increase when `dim` of `raw` grows by one grid step, or `None`
    /// when the step would leave the bounds.
    pub fn delta_raw(&self, raw: &RawCode, dim: usize) -> Option<f64> {
        let up = raw.stepped(dim, 1)?;
        Some(self.lookup_raw(&up) - self.lookup_raw(raw))
    }

    /// `lookup(code with dim raised by one grid unit) - lookup(code)`.
    pub fn flops_delta(&self, code: &ArchCode, dim: usize) -> Option<f64> {
        let mut raw = code.to_raw_units();
        let b = DIM_KINDS[dim].bounds();
        raw[dim] += b.unit;
        if raw[dim] > b.max + 1e-9 {
            return None;
        }
        let mut rounded = [0u32; CODE_DIM];
        for i in 0..CODE_DIM {
            rounded[i] = coding::round_value(DIM_KINDS[i], raw[i]);
        }
        let up = RawCode::new(rounded).expect("rounded values are on the grid");
        Some(self.lookup_raw(&up) - self.lookup(code))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{decode_raw, sample_raw, stage_offset};
    use rand_chacha::rand_core::SeedableRng;

    fn init_spec(head: Head, input: InputGeometry) -> NetworkSpec {
        decode_raw(&RawCode::default_init(), head, input)
    }

    #[test]
    fn stem_conv_macs() {
        let spec = init_spec(Head::Classification, InputGeometry::new(224, 224));
        let report = cost(&spec).unwrap();
        let conv1 = &report.per_layer[0];
        assert_eq!(conv1.label, "stem.conv1");
        assert_eq!(conv1.macs, 21_676_032);
    }

    #[test]
    fn residual_unit_macs() {
        // 224 input: branch 1 runs at 56x56; the entry unit is 64->64 plus its projection.
        let spec = init_spec(Head::Classification, InputGeometry::new(224, 224));
        let report = cost(&spec).unwrap();
        let unit: u64 = report
            .per_layer
            .iter()
            .filter(|l| l.label.starts_with("s1.b1.branch1.unit1."))
            .map(|l| l.macs)
            .sum();
        assert_eq!(unit, 244_056_064);
    }

    #[test]
    fn default_init_golden() {
        // Frozen from a separate per-layer spreadsheet computation.
        let table = FlopsTable::new(Head::Segmentation, InputGeometry::default()).unwrap();
        assert_eq!(table.lookup(&ArchCode::default_init()), 2.35831296);
        let r = cost(&init_spec(Head::Segmentation, InputGeometry::default())).unwrap();
        assert_eq!(r.total_macs, 2_358_312_960);
        assert_eq!(r.total_params, 5_712_787);
    }

    #[test]
    fn totals_are_layer_sums() {
        let spec = init_spec(Head::Segmentation, InputGeometry::default());
        let r = cost(&spec).unwrap();
        assert_eq!(
            r.total_macs,
            r.per_layer.iter().map(|l| l.macs).sum::<u64>()
        );
        assert_eq!(
            r.total_params,
            r.per_layer.iter().map(|l| l.params).sum::<u64>()
        );
        assert!(r.per_layer.iter().all(|l| l.macs > 0 && l.params > 0));
    }

    #[test]
    fn rejects_indivisible_input() {
        let spec = init_spec(Head::Segmentation, InputGeometry::new(100, 128));
        assert!(matches!(cost(&spec), Err(Error::Validation(_))));
        assert!(FlopsTable::new(Head::Segmentation, InputGeometry::new(128, 48)).is_err());
    }

    #[test]
    fn delta_unavailable_at_upper_bound() {
        let table = FlopsTable::new(Head::Segmentation, InputGeometry::default()).unwrap();
        let mut v = *RawCode::default_init().values();
        v[0] = 128;
        v[2] = 4;
        let code = RawCode::new(v).unwrap();
        assert!(table.flops_delta(&code.normalize(), 0).is_none());
        assert!(table.delta_raw(&code, 2).is_none());
        assert!(table.flops_delta(&code.normalize(), 1).unwrap() > 0.0);
    }

    #[test]
    fn block_costs_more_than_channels() {
        let table = FlopsTable::new(Head::Segmentation, InputGeometry::default()).unwrap();
        let init = ArchCode::default_init();
        let b4 = table.flops_delta(&init, stage_offset(4)).unwrap();
        let c11 = table.flops_delta(&init, stage_offset(1) + 2).unwrap();
        assert!(b4 > c11, "b4 {b4} vs c1_1 {c11}");
    }

    #[test]
    fn lookup_matches_cost_and_rounding() {
        let table = FlopsTable::new(Head::Segmentation, InputGeometry::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let raw = sample_raw(&mut rng);
            let spec = decode_raw(&raw, Head::Segmentation, InputGeometry::default());
            let code = raw.normalize();
            assert_eq!(table.lookup(&code), cost(&spec).unwrap().flops);
            let mut jittered = *code.values();
            for (i, v) in jittered.iter_mut().enumerate() {
                let u = DIM_KINDS[i].bounds().unit / DIM_KINDS[i].bounds().span();
                *v += 0.3 * u * if i % 2 == 0 { 1.0 } else { -1.0 };
            }
            assert_eq!(
                table.lookup(&ArchCode::from_normalized(jittered)),
                table.lookup(&code)
            );
        }
    }

    #[test]
    fn csv_export() {
        let r = cost(&init_spec(Head::Segmentation, InputGeometry::default())).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("layer,stage,branch,flops_mac,params"));
        assert_eq!(lines.count(), r.per_layer.len());
    }
}
