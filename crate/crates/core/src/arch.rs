//! Declarative generator architecture, shared by the cost model and the toy
//! generator.
//!
//! An [`ArchSpec`] is a JSON document listing blocks in forward order:
//!
//! ```json
//! { "name": "toy", "nc": 4, "cm": 16, "icpe_mode": "none", "edges": false,
//!   "blocks": [
//!     { "kind": "conv",     "cin": 4,  "cout": 16, "k": 3, "h": 8,  "w": 8 },
//!     { "kind": "resblock", "cin": 16, "cout": 8,  "k": 3, "h": 16, "w": 16, "norm": "clade" },
//!     { "kind": "conv",     "cin": 8,  "cout": 3,  "k": 3, "h": 16, "w": 16 } ] }
//! ```
//!
//! Each block's `h`/`w` is its output resolution; a block whose resolution
//! doubles its predecessor's is preceded by nearest-neighbour upsampling.
//! A `norm` block carries only a norm and attaches to the conv block after it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::complexity::{LayerKind, LayerSpec, NormSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic_str;
use crate::norm::StatsMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Spade,
    Clade,
    CladeIcpe,
}

impl NormKind {
    pub fn layer_kind(self) -> LayerKind {
        match self {
            NormKind::Spade => LayerKind::Spade,
            NormKind::Clade => LayerKind::Clade,
            NormKind::CladeIcpe => LayerKind::CladeIcpe,
        }
    }

    pub fn is_clade_family(self) -> bool {
        matches!(self, NormKind::Clade | NormKind::CladeIcpe)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spade" => Some(NormKind::Spade),
            "clade" => Some(NormKind::Clade),
            "clade_icpe" => Some(NormKind::CladeIcpe),
            _ => None,
        }
    }
}

/// How the positional encoding enters the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpeVariant {
    #[default]
    None,
    /// Concatenated to the downsampled mask fed to the head conv.
    Disti,
    /// A 1x1 `2 -> 1` transform appended to every CLADE-normalized feature.
    Distf,
    /// Every CLADE norm rescales its maps by `1 + conv1x1(d)`.
    Distp,
}

/// Nonlinearity between norms and convs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// ReLU after norms, leaky ReLU (0.2) before norm-free convs.
    #[default]
    Relu,
    /// `tanh` everywhere; smooth, so central differences stay accurate.
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Conv,
    Resblock,
    Norm,
}

fn default_k() -> usize {
    3
}

fn default_cm() -> usize {
    crate::norm::SPADE_HIDDEN
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub cin: usize,
    pub cout: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    pub h: usize,
    pub w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cm: Option<usize>,
    /// Kernel size of the learned shortcut conv; defaults to `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    #[serde(default)]
    pub name: String,
    pub nc: usize,
    #[serde(default = "default_cm")]
    pub cm: usize,
    #[serde(default)]
    pub icpe_mode: IcpeVariant,
    #[serde(default)]
    pub edges: bool,
    #[serde(default)]
    pub stats: StatsMode,
    #[serde(default)]
    pub activation: Activation,
    pub blocks: Vec<BlockSpec>,
}

/// Position of a convolution within its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvRole {
    /// A stand-alone conv block.
    Plain,
    /// First conv of a residual block, `cin -> min(cin, cout)`.
    Main0,
    /// Second conv of a residual block, `min(cin, cout) -> cout`.
    Main1,
    /// Learned shortcut of a residual block whose channel count changes.
    Skip,
}

/// One convolution of the expanded architecture and the norm feeding it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub block: usize,
    pub role: ConvRole,
    /// Input channels include any edge or positional channel appended by the norm.
    pub conv: LayerSpec,
    pub norm: Option<NormSpec>,
}

impl LayerRow {
    /// Channels of the normalized feature (the conv input without extras).
    pub fn feature_channels(&self) -> usize {
        self.norm.map_or(self.conv.cin, |n| n.layer.cin)
    }
}

impl ArchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("arch serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic_str(path, &(self.to_json() + "\n"))
    }

    /// Norm a block actually uses once the arch-wide variant is applied.
    pub fn effective_norm(&self, block: &BlockSpec) -> Option<NormKind> {
        match (block.norm, self.icpe_mode) {
            (Some(NormKind::Clade), IcpeVariant::Distp) => Some(NormKind::CladeIcpe),
            (n, _) => n,
        }
    }

    /// Whether a positional encoding map must be supplied to the forward pass.
    pub fn needs_positional(&self) -> bool {
        self.icpe_mode != IcpeVariant::None
            || self
                .blocks
                .iter()
                .any(|b| self.effective_norm(b) == Some(NormKind::CladeIcpe))
    }

    /// Extra channels the head conv sees beyond the one-hot mask.
    pub fn head_extra_channels(&self) -> usize {
        if self.icpe_mode == IcpeVariant::Disti {
            2
        } else {
            0
        }
    }

    pub fn output_size(&self) -> Option<(usize, usize)> {
        self.blocks.last().map(|b| (b.h, b.w))
    }

    /// The same arch with every norm-carrying block switched to `norm`.
    pub fn with_norm(&self, norm: NormKind) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            if b.norm.is_some() {
                b.norm = Some(norm);
            }
        }
        out
    }

    pub fn with_icpe_mode(&self, mode: IcpeVariant) -> Self {
        ArchSpec {
            icpe_mode: mode,
            ..self.clone()
        }
    }

    /// Scales every block's resolution so the output becomes `h x w`. Each
    /// block size must scale to a whole number of pixels.
    pub fn rescaled(&self, h: usize, w: usize) -> Result<Self> {
        let (oh, ow) = self
            .output_size()
            .ok_or_else(|| Error::InvalidArch("empty layer list".into()))?;
        let mut out = self.clone();
        for b in &mut out.blocks {
            if !(b.h * h).is_multiple_of(oh) || !(b.w * w).is_multiple_of(ow) || b.h * h < oh || b.w * w < ow {
                return Err(Error::InvalidArch(format!(
                    "block size {}x{} does not scale from {oh}x{ow} to {h}x{w}",
                    b.h, b.w
                )));
            }
            b.h = b.h * h / oh;
            b.w = b.w * w / ow;
        }
        Ok(out)
    }

    fn block_norm_spec(&self, block: &BlockSpec, kind: NormKind, channels: usize, cout: usize) -> NormSpec {
        let layer = LayerSpec {
            kind: kind.layer_kind(),
            cin: channels,
            cout,
            k: block.k,
            h: block.h,
            w: block.w,
            nc: block.nc.unwrap_or(self.nc),
            cm: block.cm.unwrap_or(self.cm),
        };
        NormSpec {
            layer,
            edge_embed: self.edges && kind.is_clade_family(),
            pos_embed: self.icpe_mode == IcpeVariant::Distf && kind.is_clade_family(),
        }
    }

    /// Checks dims and the block grammar, then lists every convolution with
    /// the norm that precedes it.
    pub fn layer_rows(&self) -> Result<Vec<LayerRow>> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidArch("empty layer list".into()));
        }
        if self.nc == 0 || self.cm == 0 {
            return Err(Error::InvalidArch("nc and cm must be positive".into()));
        }
        let mut rows = Vec::new();
        let mut pending: Option<(usize, NormKind)> = None;
        for (i, b) in self.blocks.iter().enumerate() {
            let dims = [b.cin, b.cout, b.k, b.h, b.w];
            if dims.contains(&0) || b.nc == Some(0) || b.cm == Some(0) {
                return Err(Error::InvalidArch(format!("block {i}: dims must be positive")));
            }
            let skip_k = b.skip_k.unwrap_or(b.k);
            if b.k % 2 == 0 || skip_k % 2 == 0 {
                return Err(Error::InvalidArch(format!("block {i}: kernel sizes must be odd")));
            }
            let norm = self.effective_norm(b);
            let with_norm = |channels: usize, cout: usize| {
                norm.map(|n| self.block_norm_spec(b, n, channels, cout))
            };
            let extra = |spec: &Option<NormSpec>| {
                spec.map_or(0, |n| n.edge_embed as usize + n.pos_embed as usize)
            };
            match b.kind {
                BlockKind::Norm => {
                    let kind = norm.ok_or_else(|| {
                        Error::InvalidArch(format!("block {i}: norm block without a norm kind"))
                    })?;
                    if pending.is_some() {
                        return Err(Error::InvalidArch(format!(
                            "block {i}: dangling norm (no following conv) before it"
                        )));
                    }
                    if b.cin != b.cout {
                        return Err(Error::InvalidArch(format!(
                            "block {i}: a norm block keeps its channel count"
                        )));
                    }
                    pending = Some((i, kind));
                }
                BlockKind::Conv => {
                    let kind = match (pending.take(), norm) {
                        (Some(_), Some(_)) => {
                            return Err(Error::InvalidArch(format!(
                                "block {i}: conv carries a norm and follows a norm block"
                            )))
                        }
                        (Some((j, kind)), None) => {
                            let nb = &self.blocks[j];
                            if nb.cout != b.cin || (nb.h, nb.w) != (b.h, b.w) {
                                return Err(Error::InvalidArch(format!(
                                    "block {i}: norm block {j} does not match its conv"
                                )));
                            }
                            Some(kind)
                        }
                        (None, n) => n,
                    };
                    let spec = kind.map(|n| self.block_norm_spec(b, n, b.cin, b.cout));
                    rows.push(LayerRow {
                        name: format!("b{i}.conv"),
                        block: i,
                        role: ConvRole::Plain,
                        conv: LayerSpec::conv(b.cin + extra(&spec), b.cout, b.k, b.h, b.w),
                        norm: spec,
                    });
                }
                BlockKind::Resblock => {
                    if pending.is_some() {
                        return Err(Error::InvalidArch(format!(
                            "block {i}: dangling norm (no following conv) before a residual block"
                        )));
                    }
                    if norm.is_none() {
                        return Err(Error::InvalidArch(format!("block {i}: residual block needs a norm")));
                    }
                    let mid = b.cin.min(b.cout);
                    let n0 = with_norm(b.cin, mid);
                    rows.push(LayerRow {
                        name: format!("b{i}.conv_0"),
                        block: i,
                        role: ConvRole::Main0,
                        conv: LayerSpec::conv(b.cin + extra(&n0), mid, b.k, b.h, b.w),
                        norm: n0,
                    });
                    let n1 = with_norm(mid, b.cout);
                    rows.push(LayerRow {
                        name: format!("b{i}.conv_1"),
                        block: i,
                        role: ConvRole::Main1,
                        conv: LayerSpec::conv(mid + extra(&n1), b.cout, b.k, b.h, b.w),
                        norm: n1,
                    });
                    if b.cin != b.cout {
                        let ns = with_norm(b.cin, b.cout);
                        rows.push(LayerRow {
                            name: format!("b{i}.conv_s"),
                            block: i,
                            role: ConvRole::Skip,
                            conv: LayerSpec::conv(b.cin + extra(&ns), b.cout, skip_k, b.h, b.w),
                            norm: ns,
                        });
                    }
                }
            }
        }
        if let Some((j, _)) = pending {
            return Err(Error::InvalidArch(format!(
                "block {j}: dangling norm (no following conv)"
            )));
        }
        Ok(rows)
    }

    /// Additional checks for building a generator: a norm-free head conv fed
    /// by the mask, channel and resolution chaining, and a 3-channel output.
    pub fn validate_generator(&self) -> Result<Vec<LayerRow>> {
        let rows = self.layer_rows()?;
        let head = &self.blocks[0];
        if head.kind != BlockKind::Conv || head.norm.is_some() {
            return Err(Error::InvalidArch("first block must be a conv without norm".into()));
        }
        let expect = self.nc + self.head_extra_channels();
        if head.cin != expect {
            return Err(Error::InvalidArch(format!(
                "head conv takes {} channels, the mask provides {expect}",
                head.cin
            )));
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.cin != a.cout {
                return Err(Error::InvalidArch(format!(
                    "block {}: cin {} does not match previous cout {}",
                    i + 1,
                    b.cin,
                    a.cout
                )));
            }
            let same = (b.h, b.w) == (a.h, a.w);
            let double = (b.h, b.w) == (2 * a.h, 2 * a.w);
            if !same && !double {
                return Err(Error::InvalidArch(format!(
                    "block {}: resolution {}x{} must equal or double {}x{}",
                    i + 1,
                    b.h,
                    b.w,
                    a.h,
                    a.w
                )));
            }
            if double && b.kind == BlockKind::Norm {
                return Err(Error::InvalidArch(format!(
                    "block {}: upsampling must precede a conv or residual block",
                    i + 1
                )));
            }
        }
        let last = self.blocks.last().unwrap();
        if last.cout != 3 {
            return Err(Error::InvalidArch(format!(
                "final block outputs {} channels, expected 3",
                last.cout
            )));
        }
        for b in &self.blocks {
            if b.nc.is_some_and(|nc| nc != self.nc) {
                return Err(Error::InvalidArch(
                    "per-block nc overrides are only supported for cost analysis".into(),
                ));
            }
        }
        Ok(rows)
    }
}
