//! Analytic parameter and FLOP model for convolutions and the normalization
//! layers that precede them.
//!
//! Paper-mode formulas (bias terms excluded, one multiply-accumulate and one
//! value assignment each count as one FLOP):
//!
//! | layer       | params                        | FLOPs                              |
//! |-------------|-------------------------------|------------------------------------|
//! | conv        | `k²·Cin·Cout`                 | `k²·Cin·Cout·H·W`                  |
//! | SPADE       | `km²·(Nc·Cm + 2·Cm·Cin)`      | `km²·(Nc·Cm + 2·Cm·Cin)·H·W`       |
//! | CLADE       | `2·Nc·Cin`                    | `2·Cin·H·W`                        |
//! | CLADE-ICPE  | `2·Nc·Cin + 4`                | `(4·Cin + 4)·H·W`                  |
//! | edge embed  | `2`                           | `H·W`                              |
//!
//! For SPADE and the norm layers `Cin` is the channel count of the feature
//! being normalized, i.e. the input of the following convolution.
//! [`CostModel::strict`] adds bias terms; [`CostModel::mac_flops`] = 2 counts
//! the multiply and the add of a convolution MAC separately.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, LayerRow};
use crate::error::{Error, Result};

/// Counting convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    /// Include bias parameters and bias adds.
    pub strict: bool,
    /// FLOPs per convolution multiply-accumulate.
    pub mac_flops: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::PAPER
    }
}

impl CostModel {
    pub const PAPER: CostModel = CostModel {
        strict: false,
        mac_flops: 1,
    };

    pub fn strict() -> Self {
        CostModel {
            strict: true,
            ..CostModel::PAPER
        }
    }

    pub fn with_mac_flops(self, mac_flops: u64) -> Self {
        CostModel { mac_flops, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Spade,
    Clade,
    CladeIcpe,
    EdgeEmbed,
    /// 1x1 `2 -> 1` transform of the positional encoding appended to the
    /// normalized feature.
    PosEmbed,
}

/// Dimensions of one layer. For norm kinds `cin` is the normalized channel
/// count and `cout` the output channels of the following conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub nc: usize,
    pub cm: usize,
}

impl LayerSpec {
    pub fn conv(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            cin,
            cout,
            k,
            h,
            w,
            nc: 1,
            cm: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.cin, self.cout, self.k, self.h, self.w, self.nc, self.cm];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("layer dims must be positive: {self:?}")));
        }
        if self.k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel size {} must be odd", self.k)));
        }
        Ok(())
    }

    fn hw(&self) -> u64 {
        (self.h * self.w) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cost {
    pub params: u64,
    pub flops: u64,
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            flops: self.flops + o.flops,
        }
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

/// Kernel size of the modulation network convolutions.
pub const SPADE_KERNEL: usize = 3;

/// Parameters and FLOPs of a single layer under `model`.
pub fn analytic_cost(spec: &LayerSpec, model: &CostModel) -> Cost {
    let (cin, cout, k, nc, cm) = (
        spec.cin as u64,
        spec.cout as u64,
        spec.k as u64,
        spec.nc as u64,
        spec.cm as u64,
    );
    let hw = spec.hw();
    let mac = model.mac_flops;
    let strict = model.strict as u64;
    match spec.kind {
        LayerKind::Conv => {
            let p = k * k * cin * cout;
            Cost {
                params: p + strict * cout,
                flops: p * hw * mac + strict * cout * hw,
            }
        }
        LayerKind::Spade => {
            let km = SPADE_KERNEL as u64;
            let p = km * km * (nc * cm + 2 * cm * cin);
            let biases = cm + 2 * cin;
            Cost {
                params: p + strict * biases,
                flops: p * hw * mac + strict * biases * hw,
            }
        }
        LayerKind::Clade => Cost {
            params: 2 * nc * cin,
            flops: 2 * cin * hw,
        },
        LayerKind::CladeIcpe => Cost {
            // two 2 -> 1 1x1 heads; strict adds their biases and the `1 +`
            params: 2 * nc * cin + 4 + strict * 2,
            flops: 2 * cin * hw + 4 * hw * mac + 2 * cin * hw + strict * 4 * hw,
        },
        LayerKind::EdgeEmbed => Cost {
            params: 2,
            flops: hw,
        },
        LayerKind::PosEmbed => Cost {
            params: 2 + strict,
            flops: 2 * hw * mac + strict * hw,
        },
    }
}

/// Exact non-negative rational, compared by cross-multiplication.
#[derive(Debug, Clone, Copy)]
pub struct Fraction {
    pub num: u128,
    pub den: u128,
}

impl Fraction {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den != 0, "zero denominator");
        Fraction { num, den }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Fraction {
    fn eq(&self, o: &Self) -> bool {
        self.num * o.den == o.num * self.den
    }
}

impl Eq for Fraction {}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Fraction {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Closed-form overhead ratios of a norm relative to a `k x k` conv with
/// `cin -> cout` channels. These restate the primitive formulas above
/// (SPADE assumes `k = km = 3`) and exist to be checked against them.
pub mod ratio {
    use super::Fraction;

    /// `(Nc·Cm + 2·Cm·Cin) / (Cin·Cout)`.
    pub fn spade(nc: usize, cm: usize, cin: usize, cout: usize) -> Fraction {
        let (nc, cm, cin, cout) = (nc as u128, cm as u128, cin as u128, cout as u128);
        Fraction::new(nc * cm + 2 * cm * cin, cin * cout)
    }

    /// `2·Nc / (k²·Cout)`.
    pub fn clade_params(nc: usize, k: usize, cout: usize) -> Fraction {
        Fraction::new(2 * nc as u128, (k * k * cout) as u128)
    }

    /// `2 / (k²·Cout)`.
    pub fn clade_flops(k: usize, cout: usize) -> Fraction {
        Fraction::new(2, (k * k * cout) as u128)
    }

    /// `(2·Nc + 4/Cin) / (k²·Cout)`.
    pub fn clade_icpe_params(nc: usize, cin: usize, k: usize, cout: usize) -> Fraction {
        let (nc, cin) = (nc as u128, cin as u128);
        Fraction::new(2 * nc * cin + 4, cin * (k * k * cout) as u128)
    }

    /// `(4 + 4/Cin) / (k²·Cout)`.
    pub fn clade_icpe_flops(cin: usize, k: usize, cout: usize) -> Fraction {
        let cin = cin as u128;
        Fraction::new(4 * cin + 4, cin * (k * k * cout) as u128)
    }
}

/// The norm attached to a conv row, with its optional extras.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormSpec {
    /// Main layer (`Spade`, `Clade` or `CladeIcpe`) at the normalized dims.
    pub layer: LayerSpec,
    pub edge_embed: bool,
    pub pos_embed: bool,
}

impl NormSpec {
    /// Every primitive layer that makes up this norm.
    pub fn parts(&self) -> Vec<LayerSpec> {
        let mut parts = vec![self.layer];
        let extra = |kind| LayerSpec {
            kind,
            ..self.layer
        };
        if self.edge_embed {
            parts.push(extra(LayerKind::EdgeEmbed));
        }
        if self.pos_embed {
            parts.push(extra(LayerKind::PosEmbed));
        }
        parts
    }

    pub fn cost(&self, model: &CostModel) -> Cost {
        self.parts().iter().map(|p| analytic_cost(p, model)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub name: String,
    pub conv: LayerSpec,
    pub norm: Option<NormSpec>,
    pub conv_cost: Cost,
    pub norm_cost: Cost,
}

impl CostRow {
    pub fn param_ratio(&self) -> f64 {
        self.norm_cost.params as f64 / self.conv_cost.params as f64
    }

    pub fn flop_ratio(&self) -> f64 {
        self.norm_cost.flops as f64 / self.conv_cost.flops as f64
    }

    pub fn kind_label(&self) -> String {
        match &self.norm {
            Some(n) => format!("{}+conv", kind_name(n.layer.kind)),
            None => "conv".into(),
        }
    }
}

fn kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv => "conv",
        LayerKind::Spade => "spade",
        LayerKind::Clade => "clade",
        LayerKind::CladeIcpe => "clade_icpe",
        LayerKind::EdgeEmbed => "edge_embed",
        LayerKind::PosEmbed => "pos_embed",
    }
}

/// Aggregate of the per-row overhead ratios over rows that carry a norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub param_ratio: f64,
    pub flop_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub model: CostModel,
    /// Mean of per-row ratios.
    pub mean_of_ratios: Aggregate,
    /// Sum of norm costs over sum of conv costs.
    pub totals_ratio: Aggregate,
}

impl CostReport {
    pub fn from_rows(rows: Vec<CostRow>, model: CostModel) -> Self {
        let normed: Vec<&CostRow> = rows.iter().filter(|r| r.norm.is_some()).collect();
        let (mean_of_ratios, totals_ratio) = if normed.is_empty() {
            (Aggregate::default(), Aggregate::default())
        } else {
            let n = normed.len() as f64;
            let mean = Aggregate {
                param_ratio: normed.iter().map(|r| r.param_ratio()).sum::<f64>() / n,
                flop_ratio: normed.iter().map(|r| r.flop_ratio()).sum::<f64>() / n,
            };
            let sum = |f: fn(&CostRow) -> u64| normed.iter().map(|r| f(r)).sum::<u64>() as f64;
            let totals = Aggregate {
                param_ratio: sum(|r| r.norm_cost.params) / sum(|r| r.conv_cost.params),
                flop_ratio: sum(|r| r.norm_cost.flops) / sum(|r| r.conv_cost.flops),
            };
            (mean, totals)
        };
        CostReport {
            rows,
            model,
            mean_of_ratios,
            totals_ratio,
        }
    }

    pub fn total_conv(&self) -> Cost {
        self.rows.iter().map(|r| r.conv_cost).sum()
    }

    pub fn total_norm(&self) -> Cost {
        self.rows.iter().map(|r| r.norm_cost).sum()
    }

    /// Header `layer,kind,p_conv,p_norm,f_conv,f_norm,p_ratio,f_ratio`, one
    /// line per row, then one footer line per aggregate mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,p_conv,p_norm,f_conv,f_norm,p_ratio,f_ratio\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{:.6}",
                r.name,
                r.kind_label(),
                r.conv_cost.params,
                r.norm_cost.params,
                r.conv_cost.flops,
                r.norm_cost.flops,
                r.param_ratio(),
                r.flop_ratio()
            )
            .unwrap();
        }
        let (tc, tn) = (self.total_conv(), self.total_norm());
        for (label, agg) in [
            ("mean_of_ratios", self.mean_of_ratios),
            ("totals_ratio", self.totals_ratio),
        ] {
            writeln!(
                out,
                "{label},aggregate,{},{},{},{},{:.6},{:.6}",
                tc.params, tn.params, tc.flops, tn.flops, agg.param_ratio, agg.flop_ratio
            )
            .unwrap();
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:<16} {:>12} {:>12} {:>16} {:>16} {:>10} {:>10}\n",
            "layer", "kind", "p_conv", "p_norm", "f_conv", "f_norm", "p_ratio", "f_ratio"
        );
        for r in &self.rows {
            writeln!(
                out,
                "{:<14} {:<16} {:>12} {:>12} {:>16} {:>16} {:>9.2}% {:>9.3}%",
                r.name,
                r.kind_label(),
                r.conv_cost.params,
                r.norm_cost.params,
                r.conv_cost.flops,
                r.norm_cost.flops,
                100.0 * r.param_ratio(),
                100.0 * r.flop_ratio()
            )
            .unwrap();
        }
        for (label, agg) in [
            ("mean of ratios", self.mean_of_ratios),
            ("totals ratio", self.totals_ratio),
        ] {
            writeln!(
                out,
                "{label:<31} params {:>8.2}%   flops {:>8.3}%",
                100.0 * agg.param_ratio,
                100.0 * agg.flop_ratio
            )
            .unwrap();
        }
        out
    }
}

/// Per-row costs of every convolution in `arch` and the norm preceding it.
pub fn analyze_arch(arch: &ArchSpec, model: &CostModel) -> Result<CostReport> {
    let rows = arch.layer_rows()?;
    Ok(cost_rows(&rows, model))
}

pub fn cost_rows(rows: &[LayerRow], model: &CostModel) -> CostReport {
    let rows = rows
        .iter()
        .map(|r| CostRow {
            name: r.name.clone(),
            conv: r.conv,
            norm: r.norm,
            conv_cost: analytic_cost(&r.conv, model),
            norm_cost: r.norm.map(|n| n.cost(model)).unwrap_or_default(),
        })
        .collect();
    CostReport::from_rows(rows, *model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(kind: LayerKind, nc: usize, cm: usize, cin: usize, cout: usize, k: usize, hw: usize) -> LayerSpec {
        LayerSpec {
            kind,
            cin,
            cout,
            k,
            h: hw,
            w: hw,
            nc,
            cm,
        }
    }

    #[test]
    fn spade_ratio_deep_layer() {
        let r = ratio::spade(151, 128, 1024, 1024);
        assert_eq!(r, Fraction::new(281472, 1048576));
        assert!((r.to_f64() - 0.268432).abs() < 1e-6);
    }

    #[test]
    fn spade_ratio_shallow_layer_exceeds_six() {
        let r = ratio::spade(151, 128, 128, 64);
        assert!((r.to_f64() - 6.359375).abs() < 1e-12);
        let model = CostModel::PAPER;
        let p_spade = analytic_cost(&norm(LayerKind::Spade, 151, 128, 128, 64, 3, 4), &model);
        let p_conv = analytic_cost(&LayerSpec::conv(128, 64, 3, 4, 4), &model);
        assert_eq!(Fraction::new(p_spade.params as u128, p_conv.params as u128), r);
    }

    #[test]
    fn clade_ratios() {
        assert_eq!(ratio::clade_params(151, 3, 1024), Fraction::new(302, 9216));
        assert_eq!(ratio::clade_flops(3, 1024), Fraction::new(2, 9216));
        assert!((ratio::clade_params(151, 3, 1024).to_f64() - 0.032769).abs() < 1e-6);
    }

    #[test]
    fn clade_costs_ignore_unrelated_dims() {
        let model = CostModel::PAPER;
        let a = analytic_cost(&norm(LayerKind::Clade, 10, 1, 32, 8, 3, 16), &model);
        let b = analytic_cost(&norm(LayerKind::Clade, 99, 1, 32, 8, 3, 16), &model);
        let c = analytic_cost(&norm(LayerKind::Clade, 10, 1, 32, 8, 3, 64), &model);
        assert_eq!(a.flops, b.flops);
        assert_eq!(a.params, c.params);
    }

    #[test]
    fn strict_mode_adds_biases() {
        let spec = LayerSpec::conv(4, 8, 3, 2, 2);
        let p = analytic_cost(&spec, &CostModel::PAPER);
        let s = analytic_cost(&spec, &CostModel::strict());
        assert_eq!(s.params - p.params, 8);
        assert_eq!(s.flops - p.flops, 8 * 4);
        let icpe = norm(LayerKind::CladeIcpe, 5, 1, 7, 3, 3, 2);
        assert_eq!(analytic_cost(&icpe, &CostModel::strict()).params, 2 * 5 * 7 + 6);
    }

    #[test]
    fn fraction_ordering() {
        assert!(Fraction::new(1, 3) < Fraction::new(1, 2));
        assert_eq!(Fraction::new(2, 4), Fraction::new(1, 2));
    }
}
