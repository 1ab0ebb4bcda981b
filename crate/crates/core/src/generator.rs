//! Toy residual generator built from an [`ArchSpec`], a synthetic
//! mask-to-image task and a plain gradient-descent trainer.
//!
//! Block wiring:
//! - head conv: consumes the one-hot mask at its resolution (plus `d` under
//!   `disti`), no activation;
//! - residual block: `skip + conv_1(relu(norm_1(conv_0(relu(norm_0(x))))))`
//!   where `skip = conv_s(norm_s(x))` when channels change, else `x`;
//! - other conv blocks: `conv(relu(norm(x)))`, or `conv(lrelu_0.2(x))` without
//!   a norm (the usual output-conv convention).
//!
//! With `activation: tanh` every nonlinearity above is `tanh` instead.
//!
//! A block whose resolution doubles its predecessor's is fed a nearest
//! upsampled input. Output is the raw final conv, `(N, 3, H, W)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{Activation, ArchSpec, ConvRole, IcpeVariant, LayerRow};
use crate::autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::flops::{Category, FlopCounter, Part, Scope};
use crate::mask::{edge_from_instance, icpe_map, random_shape_mask, IcpeMode, InstanceMap, PositionalEncodingMap, SemanticMask};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy)]
struct ConvParams {
    weight: ParamId,
    bias: ParamId,
    padding: usize,
}

#[derive(Debug, Clone, Copy)]
enum NormParams {
    Clade {
        gamma: ParamId,
        beta: ParamId,
    },
    CladeIcpe {
        gamma: ParamId,
        beta: ParamId,
        head_gamma: ConvParams,
        head_beta: ConvParams,
    },
    Spade {
        shared: ConvParams,
        gamma: ConvParams,
        beta: ConvParams,
    },
}

#[derive(Debug, Clone, Copy)]
struct NormUnit {
    params: NormParams,
    edge: Option<(ParamId, ParamId)>,
    pos: Option<ConvParams>,
}

#[derive(Debug, Clone, Copy)]
struct ConvUnit {
    row: usize,
    norm: Option<NormUnit>,
    conv: ConvParams,
}

#[derive(Debug, Clone)]
enum Stage {
    Head(ConvUnit),
    Plain(ConvUnit),
    Residual {
        main0: ConvUnit,
        main1: ConvUnit,
        skip: Option<ConvUnit>,
    },
}

#[derive(Debug, Clone)]
struct Block {
    upsample: bool,
    size: (usize, usize),
    stage: Stage,
}

/// Per-sample conditioning inputs.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub mask: SemanticMask,
    /// Source of the edge map; required iff the arch enables edges.
    pub instance: Option<InstanceMap>,
    /// Required iff the arch uses positional encoding in any form.
    pub positional: Option<PositionalEncodingMap>,
}

impl Conditioning {
    pub fn new(mask: SemanticMask) -> Self {
        Conditioning {
            mask,
            instance: None,
            positional: None,
        }
    }

    /// Fills whatever `arch` needs from the mask alone: instances are the
    /// mask's connected components and `d` uses the default ICPE mode.
    pub fn derived(mask: SemanticMask, arch: &ArchSpec) -> Self {
        let instance = arch.edges.then(|| InstanceMap::from_components(&mask));
        let positional = arch
            .needs_positional()
            .then(|| icpe_map(&mask, IcpeMode::default()));
        Conditioning {
            mask,
            instance,
            positional,
        }
    }
}

/// Mask-derived tensors at one resolution, batched over samples.
struct Resized<T> {
    masks: Vec<SemanticMask>,
    onehot: Option<Tensor<T>>,
    edges: Option<Tensor<T>>,
    positional: Option<Tensor<T>>,
}

fn batch<T: Scalar>(items: Vec<Tensor<T>>) -> Result<Tensor<T>> {
    let s = items[0].shape();
    let mut data = Vec::with_capacity(s.numel() * items.len());
    for t in &items {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(Shape::new(items.len(), s.c, s.h, s.w), data)
}

#[derive(Debug, Clone)]
pub struct Generator<T> {
    arch: ArchSpec,
    rows: Vec<LayerRow>,
    store: ParamStore<T>,
    blocks: Vec<Block>,
}

/// Stable per-name stream so a parameter's init does not depend on which
/// other parameters exist.
fn name_stream(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3))
}

struct Builder<T> {
    store: ParamStore<T>,
    seed: u64,
}

impl<T: Scalar> Builder<T> {
    fn add(&mut self, name: String, t: Tensor<T>) -> Result<ParamId> {
        self.store.add(name, t)
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero bias.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<ConvParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(name_stream(name));
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = Tensor::from_fn(Shape::new(cout, cin, k, k), |_, _, _, _| {
            T::from_f64(normal.sample(&mut rng))
        });
        self.conv_with(name, weight, Tensor::zeros(Shape::new(1, cout, 1, 1)))
    }

    fn conv_with(&mut self, name: &str, weight: Tensor<T>, bias: Tensor<T>) -> Result<ConvParams> {
        let padding = weight.shape().h / 2;
        Ok(ConvParams {
            weight: self.add(format!("{name}.weight"), weight)?,
            bias: self.add(format!("{name}.bias"), bias)?,
            padding,
        })
    }

    fn zero_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: f64) -> Result<ConvParams> {
        self.conv_with(
            name,
            Tensor::zeros(Shape::new(cout, cin, k, k)),
            Tensor::full(Shape::new(1, cout, 1, 1), T::from_f64(bias)),
        )
    }

    fn norm(&mut self, row: &LayerRow) -> Result<Option<NormUnit>> {
        let Some(spec) = row.norm else { return Ok(None) };
        let name = row.name.replacen("conv", "norm", 1);
        let (nc, c) = (spec.layer.nc, spec.layer.cin);
        let bank = |b: &mut Self| -> Result<(ParamId, ParamId)> {
            Ok((
                b.add(format!("{name}.gamma"), Tensor::ones(Shape::new(nc, c, 1, 1)))?,
                b.add(format!("{name}.beta"), Tensor::zeros(Shape::new(nc, c, 1, 1)))?,
            ))
        };
        let params = match spec.layer.kind {
            crate::complexity::LayerKind::Clade => {
                let (gamma, beta) = bank(self)?;
                NormParams::Clade { gamma, beta }
            }
            crate::complexity::LayerKind::CladeIcpe => {
                let (gamma, beta) = bank(self)?;
                NormParams::CladeIcpe {
                    gamma,
                    beta,
                    head_gamma: self.zero_conv(&format!("{name}.icpe_gamma"), 2, 1, 1, 0.0)?,
                    head_beta: self.zero_conv(&format!("{name}.icpe_beta"), 2, 1, 1, 0.0)?,
                }
            }
            crate::complexity::LayerKind::Spade => {
                let k = crate::complexity::SPADE_KERNEL;
                let cm = spec.layer.cm;
                // zero head weights; a unit gamma bias makes the block an
                // identity modulation at init, like a fresh bank
                NormParams::Spade {
                    shared: self.conv(&format!("{name}.shared"), nc, cm, k)?,
                    gamma: self.zero_conv(&format!("{name}.gamma"), cm, c, k, 1.0)?,
                    beta: self.zero_conv(&format!("{name}.beta"), cm, c, k, 0.0)?,
                }
            }
            other => return Err(Error::InvalidArch(format!("{other:?} is not a norm layer"))),
        };
        let edge = if spec.edge_embed {
            Some((
                self.add(format!("{name}.edge_gamma"), Tensor::scalar(T::one()))?,
                self.add(format!("{name}.edge_beta"), Tensor::scalar(T::zero()))?,
            ))
        } else {
            None
        };
        let pos = if spec.pos_embed {
            Some(self.conv(&format!("{name}.pos"), 2, 1, 1)?)
        } else {
            None
        };
        Ok(Some(NormUnit { params, edge, pos }))
    }

    fn unit(&mut self, index: usize, row: &LayerRow) -> Result<ConvUnit> {
        let norm = self.norm(row)?;
        let conv = self.conv(&row.name, row.conv.cin, row.conv.cout, row.conv.k)?;
        Ok(ConvUnit { row: index, norm, conv })
    }
}

impl<T: Scalar> Generator<T> {
    /// Deterministic in `seed`: equal seeds give bit-identical parameters.
    pub fn build(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let rows = arch.validate_generator()?;
        let mut b = Builder {
            store: ParamStore::new(),
            seed,
        };
        let mut blocks = Vec::new();
        let mut prev_size: Option<(usize, usize)> = None;
        let mut i = 0;
        while i < rows.len() {
            let bi = rows[i].block;
            let spec = &arch.blocks[bi];
            let size = (spec.h, spec.w);
            let upsample = prev_size.is_some_and(|p| p != size);
            let stage = match rows[i].role {
                ConvRole::Plain => {
                    let unit = b.unit(i, &rows[i])?;
                    i += 1;
                    if bi == 0 {
                        Stage::Head(unit)
                    } else {
                        Stage::Plain(unit)
                    }
                }
                ConvRole::Main0 => {
                    let main0 = b.unit(i, &rows[i])?;
                    let main1 = b.unit(i + 1, &rows[i + 1])?;
                    i += 2;
                    let skip = if rows.get(i).is_some_and(|r| r.role == ConvRole::Skip && r.block == bi) {
                        i += 1;
                        Some(b.unit(i - 1, &rows[i - 1])?)
                    } else {
                        None
                    };
                    Stage::Residual { main0, main1, skip }
                }
                role => unreachable!("row expansion never starts a block with {role:?}"),
            };
            blocks.push(Block { upsample, size, stage });
            prev_size = Some(size);
        }
        Ok(Generator {
            arch: arch.clone(),
            rows,
            store: b.store,
            blocks,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn rows(&self) -> &[LayerRow] {
        &self.rows
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn output_size(&self) -> (usize, usize) {
        self.blocks.last().map(|b| b.size).unwrap_or((0, 0))
    }

    fn uses_spade(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.norm.is_some_and(|n| n.layer.kind == crate::complexity::LayerKind::Spade))
    }

    fn check(&self, cond: &[Conditioning]) -> Result<()> {
        let (h, w) = self.output_size();
        if cond.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for c in cond {
            let m = &c.mask;
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::ShapeMismatch {
                    op: "generator forward",
                    expected: format!("{h}x{w} mask"),
                    got: format!("{}x{}", m.height(), m.width()),
                });
            }
            if m.classes() > self.arch.nc {
                return Err(Error::InvalidArgument(format!(
                    "mask declares {} classes, generator has {}",
                    m.classes(),
                    self.arch.nc
                )));
            }
            if self.arch.needs_positional() {
                match &c.positional {
                    None => {
                        return Err(Error::InvalidArgument(
                            "positional encoding map required by this arch".into(),
                        ))
                    }
                    Some(d) if (d.height(), d.width()) != (h, w) => {
                        return Err(Error::ShapeMismatch {
                            op: "generator forward",
                            expected: format!("{h}x{w} positional map"),
                            got: format!("{}x{}", d.height(), d.width()),
                        })
                    }
                    _ => {}
                }
            }
            if self.arch.edges {
                match &c.instance {
                    None => return Err(Error::InvalidArgument("instance map required for edges".into())),
                    Some(i) if (i.height(), i.width()) != (h, w) => {
                        return Err(Error::ShapeMismatch {
                            op: "generator forward",
                            expected: format!("{h}x{w} instance map"),
                            got: format!("{}x{}", i.height(), i.width()),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn resized(&self, cond: &[Conditioning], size: (usize, usize), onehot: bool) -> Result<Resized<T>> {
        let (h, w) = size;
        let masks = cond
            .iter()
            .map(|c| c.mask.with_classes(self.arch.nc)?.resize_nearest(h, w))
            .collect::<Result<Vec<_>>>()?;
        let onehot = if onehot {
            Some(batch(masks.iter().map(|m| m.one_hot::<T>()).collect())?)
        } else {
            None
        };
        let edges = if self.arch.edges {
            let e = cond
                .iter()
                .map(|c| Ok(edge_from_instance::<T>(&c.instance.as_ref().unwrap().resize_nearest(h, w)?)))
                .collect::<Result<Vec<_>>>()?;
            Some(batch(e)?)
        } else {
            None
        };
        let positional = if self.arch.needs_positional() {
            let d = cond
                .iter()
                .map(|c| Ok(c.positional.as_ref().unwrap().resize_nearest(h, w)?.to_tensor::<T>()))
                .collect::<Result<Vec<_>>>()?;
            Some(batch(d)?)
        } else {
            None
        };
        Ok(Resized {
            masks,
            onehot,
            edges,
            positional,
        })
    }

    /// Records the forward pass on `tape` (which must borrow this
    /// generator's parameters) and returns the output node.
    pub fn record(&self, tape: &mut Tape<'_, T>, cond: &[Conditioning]) -> Result<Var> {
        self.check(cond)?;
        let mut cache: HashMap<(usize, usize), Resized<T>> = HashMap::new();
        let spade = self.uses_spade();
        let mut x: Option<Var> = None;
        for block in &self.blocks {
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(block.size) {
                let head = matches!(block.stage, Stage::Head(_));
                e.insert(self.resized(cond, block.size, spade || head)?);
            }
            let res = &cache[&block.size];
            let mut h = match x {
                Some(v) if block.upsample => {
                    tape.set_scope(None);
                    let prev = tape.value(v).shape();
                    tape.upsample(v, block.size.0 / prev.h)?
                }
                Some(v) => v,
                None => {
                    let onehot = tape.input(res.onehot.clone().unwrap());
                    if self.arch.icpe_mode == IcpeVariant::Disti {
                        let d = tape.input(res.positional.clone().unwrap());
                        tape.concat(onehot, d)?
                    } else {
                        onehot
                    }
                }
            };
            h = match &block.stage {
                Stage::Head(u) => self.conv_unit(tape, u, h, res, false)?,
                Stage::Plain(u) => self.conv_unit(tape, u, h, res, true)?,
                Stage::Residual { main0, main1, skip } => {
                    let s = match skip {
                        Some(u) => {
                            let n = self.norm_unit(tape, u, h, res)?;
                            self.conv(tape, u, n)?
                        }
                        None => h,
                    };
                    let d0 = self.conv_unit(tape, main0, h, res, true)?;
                    let d1 = self.conv_unit(tape, main1, d0, res, true)?;
                    tape.set_scope(None);
                    tape.add(s, d1)?
                }
            };
            x = Some(h);
        }
        tape.set_scope(None);
        Ok(x.expect("validated arch has blocks"))
    }

    fn conv(&self, tape: &mut Tape<'_, T>, u: &ConvUnit, x: Var) -> Result<Var> {
        tape.set_scope(Some(Scope::new(u.row, Part::Conv)));
        let (w, b) = (tape.param(u.conv.weight), tape.param(u.conv.bias));
        tape.conv(x, w, Some(b), 1, u.conv.padding)
    }

    fn conv_unit(&self, tape: &mut Tape<'_, T>, u: &ConvUnit, x: Var, res: &Resized<T>, activate: bool) -> Result<Var> {
        let h = if u.norm.is_some() {
            let n = self.norm_unit(tape, u, x, res)?;
            tape.set_scope(Some(Scope::new(u.row, Part::Apply)));
            match self.arch.activation {
                Activation::Relu => tape.relu(n),
                Activation::Tanh => tape.tanh(n),
            }
        } else if activate {
            tape.set_scope(Some(Scope::new(u.row, Part::Apply)));
            match self.arch.activation {
                Activation::Relu => tape.leaky_relu(x, T::from_f64(0.2)),
                Activation::Tanh => tape.tanh(x),
            }
        } else {
            x
        };
        self.conv(tape, u, h)
    }

    fn small_conv(tape: &mut Tape<'_, T>, p: &ConvParams, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(p.weight), tape.param(p.bias));
        tape.conv(x, w, Some(b), 1, p.padding)
    }

    /// Normalized and modulated features, with edge / positional channels
    /// appended when configured.
    fn norm_unit(&self, tape: &mut Tape<'_, T>, u: &ConvUnit, x: Var, res: &Resized<T>) -> Result<Var> {
        let norm = u.norm.expect("norm unit");
        let apply = Some(Scope::new(u.row, Part::Apply));
        let maps = Some(Scope::new(u.row, Part::Norm));
        tape.set_scope(apply);
        let xhat = tape.normalize(x, self.arch.stats);
        tape.set_scope(maps);
        let (gamma, beta) = match norm.params {
            NormParams::Clade { gamma, beta } => {
                let (g, b) = (tape.param(gamma), tape.param(beta));
                (tape.guided_sample(g, &res.masks)?, tape.guided_sample(b, &res.masks)?)
            }
            NormParams::CladeIcpe {
                gamma,
                beta,
                head_gamma,
                head_beta,
            } => {
                let (g, b) = (tape.param(gamma), tape.param(beta));
                let gmap = tape.guided_sample(g, &res.masks)?;
                let bmap = tape.guided_sample(b, &res.masks)?;
                let d = tape.input(res.positional.clone().unwrap());
                let cg = Self::small_conv(tape, &head_gamma, d)?;
                let cb = Self::small_conv(tape, &head_beta, d)?;
                let sg = tape.add_scalar(cg, T::one());
                let sb = tape.add_scalar(cb, T::one());
                (
                    tape.mul_as(gmap, sg, Category::ModulationProduct)?,
                    tape.mul_as(bmap, sb, Category::ModulationProduct)?,
                )
            }
            NormParams::Spade { shared, gamma, beta } => {
                let m = tape.input(res.onehot.clone().unwrap());
                let a = Self::small_conv(tape, &shared, m)?;
                let a = tape.relu(a);
                (Self::small_conv(tape, &gamma, a)?, Self::small_conv(tape, &beta, a)?)
            }
        };
        tape.set_scope(apply);
        let scaled = tape.mul(xhat, gamma)?;
        let mut out = tape.add(scaled, beta)?;
        tape.set_scope(maps);
        if let Some((gc, bc)) = norm.edge {
            let e = tape.input(res.edges.clone().unwrap());
            let (gc, bc) = (tape.param(gc), tape.param(bc));
            let scaled = tape.mul_as(e, gc, Category::ModulationProduct)?;
            let embedded = tape.add(scaled, bc)?;
            out = tape.concat(out, embedded)?;
        }
        if let Some(p) = &norm.pos {
            let d = tape.input(res.positional.clone().unwrap());
            let f = Self::small_conv(tape, p, d)?;
            out = tape.concat(out, f)?;
        }
        Ok(out)
    }

    pub fn forward_batch(&self, cond: &[Conditioning]) -> Result<Tensor<T>> {
        let mut tape = Tape::new(&self.store);
        let out = self.record(&mut tape, cond)?;
        Ok(tape.value(out).clone())
    }

    /// `(1, 3, H, W)` image for one mask.
    pub fn forward(
        &self,
        mask: &SemanticMask,
        instance: Option<&InstanceMap>,
        positional: Option<&PositionalEncodingMap>,
    ) -> Result<Tensor<T>> {
        self.forward_batch(&[Conditioning {
            mask: mask.clone(),
            instance: instance.cloned(),
            positional: positional.cloned(),
        }])
    }

    /// Forward pass with a FLOP counter attached.
    pub fn forward_counted(&self, cond: &[Conditioning], counter: FlopCounter) -> Result<(Tensor<T>, FlopCounter)> {
        let mut tape = Tape::with_counter(&self.store, counter);
        let out = self.record(&mut tape, cond)?;
        let value = tape.value(out).clone();
        Ok((value, tape.take_counter().expect("counter attached")))
    }

    /// MSE against `targets` (batched in sample order) and its gradients.
    pub fn loss_and_grad(&self, cond: &[Conditioning], targets: &Tensor<T>) -> Result<(f64, Gradients<T>)> {
        let mut tape = Tape::new(&self.store);
        let out = self.record(&mut tape, cond)?;
        let loss = tape.mse(out, targets)?;
        let value = tape.value(loss).data()[0].as_f64();
        Ok((value, tape.backward(loss)?))
    }

    pub fn loss(&self, cond: &[Conditioning], targets: &Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let out = self.record(&mut tape, cond)?;
        let loss = tape.mse(out, targets)?;
        Ok(tape.value(loss).data()[0].as_f64())
    }

    /// Writes `arch.json` and one CLTN file per parameter into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.store.save_dir(dir)?;
        self.arch.save(dir.join("arch.json"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let arch = ArchSpec::load(dir.join("arch.json"))?;
        let mut gen = Generator::build(&arch, 0)?;
        gen.store.load_dir(dir)?;
        Ok(gen)
    }
}

/// Synthetic mask-to-image task.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToyTask {
    pub classes: usize,
    /// RGB per class, each in `[0, 1]`.
    pub palette: Vec<[f64; 3]>,
    /// Strength of the in-object gradient texture.
    pub amplitude: f64,
    /// Objects drawn over the background in each mask.
    #[serde(default = "default_shapes")]
    pub shapes: usize,
}

fn default_shapes() -> usize {
    2
}

impl ToyTask {
    /// Evenly spread, fixed palette.
    pub fn new(classes: usize, amplitude: f64) -> Self {
        let palette = (0..classes)
            .map(|l| {
                let t = l as f64 / classes.max(1) as f64;
                let ch = |phase: f64| 0.5 + 0.35 * (2.0 * PI * (t + phase)).cos();
                [ch(0.0), ch(1.0 / 3.0), ch(2.0 / 3.0)]
            })
            .collect();
        ToyTask {
            classes,
            palette,
            amplitude,
            shapes: default_shapes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.palette.len() != self.classes {
            return Err(Error::InvalidArgument(format!(
                "task needs at least 2 classes and one palette entry per class (got {} / {})",
                self.classes,
                self.palette.len()
            )));
        }
        if self.palette.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("palette values must lie in [0, 1]".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument("texture amplitude must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub mask: SemanticMask,
    /// `(1, 3, H, W)`.
    pub target: Tensor<T>,
}

/// Random shape masks and their targets: the class's palette colour plus
/// `amplitude · (cos θ_l · dx + sin θ_l · dy)`, where `d` is the pixel's
/// normalized offset inside its object and `θ_l` a per-class direction.
pub fn synth_task<T: Scalar>(task: &ToyTask, n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<Sample<T>>> {
    task.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mask = random_shape_mask(&mut rng, h, w, task.classes, task.shapes);
            let d = icpe_map(&mask, IcpeMode::default());
            let target = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, r, col| {
                let l = mask.get(r, col) as usize;
                let theta = 2.0 * PI * l as f64 / task.classes as f64;
                let tex = theta.cos() * d.get(0, r, col) + theta.sin() * d.get(1, r, col);
                T::from_f64(task.palette[l][c] + task.amplitude * tex)
            });
            Ok(Sample { mask, target })
        })
        .collect()
}

/// Per-step losses of full-batch gradient descent with a fixed step size.
/// `loss[i]` is measured before update `i`; the last entry follows the
/// final update.
pub fn train_toy<T: Scalar>(gen: &mut Generator<T>, samples: &[Sample<T>], steps: usize, lr: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let cond: Vec<Conditioning> = samples
        .iter()
        .map(|s| Conditioning::derived(s.mask.clone(), gen.arch()))
        .collect();
    let targets = batch(samples.iter().map(|s| s.target.clone()).collect())?;
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let (loss, grads) = gen.loss_and_grad(&cond, &targets)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss { step, value: loss });
        }
        losses.push(loss);
        gen.store.sgd_step(&grads, T::from_f64(lr));
    }
    let last = gen.loss(&cond, &targets)?;
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss { step: steps, value: last });
    }
    losses.push(last);
    Ok(losses)
}
