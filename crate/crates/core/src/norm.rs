//! The conditional normalization family.
//!
//! Every layer here splits into a normalization step, `x̂ = (x - μ) / σ`
//! with `σ = sqrt(var + EPS)`, and a modulation step `γ ⊙ x̂ + β`. The layers
//! differ only in where `γ` and `β` come from:
//!
//! * CLADE looks them up per class from a [`ParamBank`] ([`guided_sample`]).
//! * CLADE-ICPE rescales the looked-up maps by `1 + conv1x1(d)` where `d` is
//!   the intra-class positional encoding ([`clade_icpe_forward`]).
//! * SPADE regresses them from the one-hot mask with a shallow conv network
//!   ([`spade_forward`]).
//!
//! Modulation is applied as `γ·x̂ + β`, not `(1 + γ)·x̂ + β`; identity
//! modulation is therefore `γ = 1, β = 0`.

use std::fmt::Write as _;

use crate::conv::{conv2d, ConvKernel};
use crate::error::{Error, Result};
use crate::mask::{PositionalEncodingMap, SemanticMask};
use crate::tensor::{
    add, concat_channels, moments, mul, relu, MomentMode, Scalar, Shape, Tensor,
};

/// Added to the variance under the square root in every normalization.
pub const EPS: f64 = 1e-5;

/// Which statistics the normalization step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    /// Per channel over batch and space (batch norm).
    #[default]
    Batch,
    /// Per sample and channel over space (instance norm).
    Instance,
}

impl StatsMode {
    pub fn moment_mode(self) -> MomentMode {
        match self {
            StatsMode::Batch => MomentMode::PerChannel,
            StatsMode::Instance => MomentMode::PerInstance,
        }
    }
}

/// Normalized tensor plus the per-group `1 / σ` needed by the backward pass.
pub struct Normalized<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

pub fn normalize_with_stats<T: Scalar>(x: &Tensor<T>, mode: StatsMode) -> Normalized<T> {
    let mm = mode.moment_mode();
    let s = x.shape();
    let m = moments(x, mm);
    let eps = T::from_f64(EPS);
    let inv_std: Vec<T> = m.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let p = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let g = mm.group_of(&s, n, c);
            let (mu, is) = (m.mean[g], inv_std[g]);
            let start = (n * s.c + c) * p;
            for v in &mut xhat.data_mut()[start..start + p] {
                *v = (*v - mu) * is;
            }
        }
    }
    Normalized { xhat, inv_std }
}

/// `(x - μ) / sqrt(var + EPS)` per reduction group.
pub fn normalize<T: Scalar>(x: &Tensor<T>, mode: StatsMode) -> Tensor<T> {
    normalize_with_stats(x, mode).xhat
}

/// `γ ⊙ x̂ + β`; the maps broadcast over any unit dim.
pub fn modulate<T: Scalar>(xhat: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    add(&mul(xhat, gamma)?, beta)
}

/// Per-class, per-channel modulation scales and shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBank<T> {
    classes: usize,
    channels: usize,
    /// Row-major `classes x channels`.
    gamma: Vec<T>,
    beta: Vec<T>,
}

impl<T: Scalar> ParamBank<T> {
    pub fn new(classes: usize, channels: usize, gamma: Vec<T>, beta: Vec<T>) -> Result<Self> {
        if classes == 0 || channels == 0 {
            return Err(Error::InvalidArgument("parameter bank dims must be positive".into()));
        }
        for (name, v) in [("gamma", &gamma), ("beta", &beta)] {
            if v.len() != classes * channels {
                return Err(Error::ShapeMismatch {
                    op: "parameter bank",
                    expected: format!("{classes}x{channels} {name} values"),
                    got: format!("{} values", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite {name} in parameter bank")));
            }
        }
        Ok(ParamBank {
            classes,
            channels,
            gamma,
            beta,
        })
    }

    /// `γ = 1, β = 0` for every class.
    pub fn identity(classes: usize, channels: usize) -> Self {
        ParamBank {
            classes,
            channels,
            gamma: vec![T::one(); classes * channels],
            beta: vec![T::zero(); classes * channels],
        }
    }

    /// Every class carries the same `gamma`/`beta` channel vectors.
    pub fn uniform(classes: usize, gamma: &[T], beta: &[T]) -> Result<Self> {
        Self::new(classes, gamma.len(), gamma.repeat(classes), beta.repeat(classes))
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn gamma_of(&self, class: usize) -> &[T] {
        &self.gamma[class * self.channels..(class + 1) * self.channels]
    }

    pub fn beta_of(&self, class: usize) -> &[T] {
        &self.beta[class * self.channels..(class + 1) * self.channels]
    }

    /// `(classes, channels, 1, 1)` tables as stored in a parameter store.
    pub fn to_tables(&self) -> (Tensor<T>, Tensor<T>) {
        let shape = Shape::new(self.classes, self.channels, 1, 1);
        (
            Tensor::from_vec(shape, self.gamma.clone()).unwrap(),
            Tensor::from_vec(shape, self.beta.clone()).unwrap(),
        )
    }

    pub fn from_tables(gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Self> {
        let s = gamma.shape();
        if beta.shape() != s || s.h != 1 || s.w != 1 {
            return Err(Error::ShapeMismatch {
                op: "parameter bank tables",
                expected: format!("two ({}, {}, 1, 1) tables", s.n, s.c),
                got: format!("{} and {}", s, beta.shape()),
            });
        }
        Self::new(s.n, s.c, gamma.data().to_vec(), beta.data().to_vec())
    }
}

fn check_spatial(op: &'static str, x: Shape, h: usize, w: usize) -> Result<()> {
    if x.h != h || x.w != w {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("spatial dims {}x{}", x.h, x.w),
            got: format!("{h}x{w}"),
        });
    }
    Ok(())
}

/// Fills each pixel with its class's row of a `(classes, C, 1, 1)` table,
/// giving a `(1, C, H, W)` map.
pub fn guided_sample_table<T: Scalar>(table: &Tensor<T>, m: &SemanticMask) -> Result<Tensor<T>> {
    let ts = table.shape();
    let (classes, channels) = (ts.n, ts.c);
    if ts.h != 1 || ts.w != 1 {
        return Err(Error::InvalidShape {
            op: "guided_sample",
            shape: ts,
            reason: "table must be (classes, C, 1, 1)".into(),
        });
    }
    let (h, w) = (m.height(), m.width());
    let p = h * w;
    if let Some(i) = m.labels().iter().position(|&l| l as usize >= classes) {
        return Err(Error::LabelOutOfRange {
            label: m.labels()[i],
            row: i / w,
            col: i % w,
            classes,
        });
    }
    let mut out = Tensor::zeros(Shape::new(1, channels, h, w));
    let tab = table.data();
    let data = out.data_mut();
    for (i, &l) in m.labels().iter().enumerate() {
        let row = &tab[l as usize * channels..(l as usize + 1) * channels];
        for (c, &v) in row.iter().enumerate() {
            data[c * p + i] = v;
        }
    }
    Ok(out)
}

/// Dense `(1, C, H, W)` scale and shift maps: pixel `(i, j)` carries the
/// bank row of class `m[i][j]`.
pub fn guided_sample<T: Scalar>(bank: &ParamBank<T>, m: &SemanticMask) -> Result<(Tensor<T>, Tensor<T>)> {
    let (g, b) = bank.to_tables();
    Ok((guided_sample_table(&g, m)?, guided_sample_table(&b, m)?))
}

/// Class-adaptive normalization. `m` must already be at the resolution of `x`.
pub fn clade_forward<T: Scalar>(
    x: &Tensor<T>,
    m: &SemanticMask,
    bank: &ParamBank<T>,
    mode: StatsMode,
) -> Result<Tensor<T>> {
    check_spatial("clade", x.shape(), m.height(), m.width())?;
    check_channels("clade", x.shape(), bank.channels())?;
    let (gamma, beta) = guided_sample(bank, m)?;
    modulate(&normalize(x, mode), &gamma, &beta)
}

fn check_channels(op: &'static str, x: Shape, channels: usize) -> Result<()> {
    if x.c != channels {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("{channels} channels"),
            got: format!("{} channels in {}", x.c, x),
        });
    }
    Ok(())
}

/// Two learnable constants applied to a binary edge map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeParams<T> {
    pub gamma_c: T,
    pub beta_c: T,
}

impl<T: Scalar> EdgeParams<T> {
    pub fn identity() -> Self {
        EdgeParams {
            gamma_c: T::one(),
            beta_c: T::zero(),
        }
    }
}

/// Appends `γ_c·E + β_c` to `x_out` as one extra channel.
pub fn embed_edges<T: Scalar>(x_out: &Tensor<T>, edges: &Tensor<T>, ep: &EdgeParams<T>) -> Result<Tensor<T>> {
    let (xs, es) = (x_out.shape(), edges.shape());
    if es.c != 1 || es.h != xs.h || es.w != xs.w || !(es.n == 1 || es.n == xs.n) {
        return Err(Error::ShapeMismatch {
            op: "embed_edges",
            expected: format!("(1 or {}, 1, {}, {})", xs.n, xs.h, xs.w),
            got: es.to_string(),
        });
    }
    let mut e = edges.map(|v| ep.gamma_c * v + ep.beta_c);
    if es.n != xs.n {
        let mut data = Vec::with_capacity(xs.n * xs.plane());
        for _ in 0..xs.n {
            data.extend_from_slice(e.data());
        }
        e = Tensor::from_vec(Shape::new(xs.n, 1, xs.h, xs.w), data)?;
    }
    concat_channels(x_out, &e)
}

/// The pair of `2 -> 1` 1x1 convolutions mapping the positional encoding to
/// multiplicative corrections of `γ` and `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpeHeads<T> {
    pub conv_gamma: ConvKernel<T>,
    pub conv_beta: ConvKernel<T>,
}

impl<T: Scalar> IcpeHeads<T> {
    pub fn zeros() -> Self {
        IcpeHeads {
            conv_gamma: ConvKernel::zeros(2, 1, 1),
            conv_beta: ConvKernel::zeros(2, 1, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in [&self.conv_gamma, &self.conv_beta] {
            k.validate()?;
            if k.cin() != 2 || k.cout() != 1 || k.k() != 1 {
                return Err(Error::InvalidShape {
                    op: "icpe heads",
                    shape: k.weight.shape(),
                    reason: "heads must be 2 -> 1 convolutions with k = 1".into(),
                });
            }
        }
        Ok(())
    }
}

/// `map ⊙ (1 + scale)`, `scale` broadcasting over the unit dims.
pub fn scale_one_plus<T: Scalar>(map: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    mul(map, &scale.map(|v| T::one() + v))
}

/// The `(γ̃, β̃)` maps of CLADE-ICPE.
pub fn icpe_modulation<T: Scalar>(
    bank: &ParamBank<T>,
    heads: &IcpeHeads<T>,
    m: &SemanticMask,
    d: &PositionalEncodingMap,
) -> Result<(Tensor<T>, Tensor<T>)> {
    heads.validate()?;
    if d.height() != m.height() || d.width() != m.width() {
        return Err(Error::ShapeMismatch {
            op: "clade_icpe",
            expected: format!("encoding map {}x{}", m.height(), m.width()),
            got: format!("{}x{}", d.height(), d.width()),
        });
    }
    let (gamma, beta) = guided_sample(bank, m)?;
    let dt = d.to_tensor::<T>();
    let cg = conv2d(&dt, &heads.conv_gamma)?;
    let cb = conv2d(&dt, &heads.conv_beta)?;
    Ok((scale_one_plus(&gamma, &cg)?, scale_one_plus(&beta, &cb)?))
}

/// CLADE with the looked-up maps rescaled by `1 + C(d)`.
pub fn clade_icpe_forward<T: Scalar>(
    x: &Tensor<T>,
    m: &SemanticMask,
    bank: &ParamBank<T>,
    heads: &IcpeHeads<T>,
    d: &PositionalEncodingMap,
    mode: StatsMode,
) -> Result<Tensor<T>> {
    check_spatial("clade_icpe", x.shape(), m.height(), m.width())?;
    check_channels("clade_icpe", x.shape(), bank.channels())?;
    let (gamma, beta) = icpe_modulation(bank, heads, m, d)?;
    modulate(&normalize(x, mode), &gamma, &beta)
}

/// Reference spatially-adaptive block: a shared `classes -> hidden` 3x3 conv
/// with ReLU, then two `hidden -> channels` 3x3 heads for `γ` and `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpadeBlock<T> {
    pub shared: ConvKernel<T>,
    pub gamma_head: ConvKernel<T>,
    pub beta_head: ConvKernel<T>,
}

/// Default hidden width of the modulation network.
pub const SPADE_HIDDEN: usize = 128;

impl<T: Scalar> SpadeBlock<T> {
    /// Zero heads, so the block starts as `γ = β = 0`.
    pub fn zeros(classes: usize, hidden: usize, channels: usize) -> Self {
        SpadeBlock {
            shared: ConvKernel::zeros(classes, hidden, 3),
            gamma_head: ConvKernel::zeros(hidden, channels, 3),
            beta_head: ConvKernel::zeros(hidden, channels, 3),
        }
    }

    pub fn classes(&self) -> usize {
        self.shared.cin()
    }

    pub fn hidden(&self) -> usize {
        self.shared.cout()
    }

    pub fn channels(&self) -> usize {
        self.gamma_head.cout()
    }
}

/// `(γ, β)` maps regressed from a one-hot mask.
pub fn spade_modulation<T: Scalar>(block: &SpadeBlock<T>, onehot: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let hidden = relu(&conv2d(onehot, &block.shared)?);
    Ok((conv2d(&hidden, &block.gamma_head)?, conv2d(&hidden, &block.beta_head)?))
}

pub fn spade_forward<T: Scalar>(
    x: &Tensor<T>,
    onehot: &Tensor<T>,
    block: &SpadeBlock<T>,
    mode: StatsMode,
) -> Result<Tensor<T>> {
    let os = onehot.shape();
    check_spatial("spade", x.shape(), os.h, os.w)?;
    if os.c != block.classes() {
        return Err(Error::ShapeMismatch {
            op: "spade",
            expected: format!("{} mask channels", block.classes()),
            got: format!("{} channels", os.c),
        });
    }
    check_channels("spade", x.shape(), block.channels())?;
    let (gamma, beta) = spade_modulation(block, onehot)?;
    modulate(&normalize(x, mode), &gamma, &beta)
}

/// Options for [`concentration_stats`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationOptions {
    pub bins: usize,
    /// Pixels closer than this to the image border are ignored.
    pub margin: usize,
}

impl Default for ConcentrationOptions {
    fn default() -> Self {
        ConcentrationOptions { bins: 64, margin: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassChannelStats {
    pub class: u32,
    pub channel: usize,
    pub pixels: usize,
    pub mean: f64,
    pub std: f64,
    /// `bins + 1` edges spanning `[min, max]` of this class-channel.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// How tightly a modulation map's values cluster within each class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub rows: Vec<ClassChannelStats>,
    /// Per channel: mean within-class std over global std (0 when the global
    /// std is 0).
    pub channel_ratio: Vec<f64>,
}

impl ConcentrationReport {
    /// Mean of the per-channel ratios.
    pub fn ratio(&self) -> f64 {
        if self.channel_ratio.is_empty() {
            return 0.0;
        }
        self.channel_ratio.iter().sum::<f64>() / self.channel_ratio.len() as f64
    }

    /// `class,channel,mean,std,R,bin_edges,counts`; the list columns are
    /// `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,channel,mean,std,R,bin_edges,counts\n");
        for r in &self.rows {
            let edges: Vec<String> = r.bin_edges.iter().map(|e| format!("{e}")).collect();
            let counts: Vec<String> = r.counts.iter().map(|c| c.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.class,
                r.channel,
                r.mean,
                r.std,
                self.channel_ratio[r.channel],
                edges.join(";"),
                counts.join(";")
            )
            .unwrap();
        }
        out
    }
}

/// Shifted by the first value, so a constant class gives a std of exactly 0.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let k = values[0];
    let shift = values.iter().map(|v| v - k).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - k - shift).powi(2)).sum::<f64>() / n;
    (k + shift, var.sqrt())
}

/// Per class and channel statistics of a `(1, C, H, W)` map. Classes absent
/// from `m` (or from its interior, with a margin) are omitted.
pub fn concentration_stats<T: Scalar>(
    map: &Tensor<T>,
    m: &SemanticMask,
    opts: ConcentrationOptions,
) -> Result<ConcentrationReport> {
    let s = map.shape();
    if s.n != 1 {
        return Err(Error::InvalidShape {
            op: "concentration_stats",
            shape: s,
            reason: "expected a single map (N = 1)".into(),
        });
    }
    check_spatial("concentration_stats", s, m.height(), m.width())?;
    if opts.bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let inside = |r: usize, c: usize| {
        r >= opts.margin && c >= opts.margin && r + opts.margin < s.h && c + opts.margin < s.w
    };
    let mut rows = Vec::new();
    let mut channel_ratio = Vec::with_capacity(s.c);
    for ch in 0..s.c {
        let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); m.classes()];
        let mut all = Vec::new();
        for r in 0..s.h {
            for c in 0..s.w {
                if inside(r, c) {
                    let v = map.at(0, ch, r, c).as_f64();
                    per_class[m.get(r, c) as usize].push(v);
                    all.push(v);
                }
            }
        }
        let mut stds = Vec::new();
        for (class, values) in per_class.iter().enumerate() {
            if values.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(values);
            stds.push(std);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / opts.bins as f64;
            let bin_edges: Vec<f64> = (0..=opts.bins).map(|i| lo + width * i as f64).collect();
            let mut counts = vec![0usize; opts.bins];
            for &v in values {
                let b = if width > 0.0 {
                    (((v - lo) / width) as usize).min(opts.bins - 1)
                } else {
                    0
                };
                counts[b] += 1;
            }
            rows.push(ClassChannelStats {
                class: class as u32,
                channel: ch,
                pixels: values.len(),
                mean,
                std,
                bin_edges,
                counts,
            });
        }
        let global = if all.is_empty() { 0.0 } else { mean_std(&all).1 };
        let within = if stds.is_empty() {
            0.0
        } else {
            stds.iter().sum::<f64>() / stds.len() as f64
        };
        channel_ratio.push(if global > 0.0 { within / global } else { 0.0 });
    }
    Ok(ConcentrationReport {
        rows,
        channel_ratio,
    })
}
