//! Reverse-mode differentiation over the fixed op set used by the generator.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every op in execution
//! order, so node ids are already a topological order. [`Tape::backward`]
//! walks the nodes in reverse. All reductions (bias sums, scatter-adds by
//! class, statistics) accumulate in row-major order, so gradients are
//! bit-reproducible.
//!
//! The tape can also carry a [`FlopCounter`]; each op records its FLOPs
//! under the scope set with [`Tape::set_scope`].

use std::collections::HashMap;
use std::path::Path;

use crate::cltn::CltnArray;
use crate::conv::{conv2d_backward_raw, conv2d_raw, ConvGeometry};
use crate::error::{Error, Result};
use crate::flops::{Category, FlopCounter, Scope};
use crate::mask::SemanticMask;
use crate::norm::{normalize_with_stats, StatsMode};
use crate::tensor::{
    concat_channels, downsample_sum, elementwise, split_channels, upsample_nearest, BinaryOp, Scalar,
    Shape, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. Names are unique and double as checkpoint file
/// stems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// `θ ← θ - lr · g` for every parameter that received a gradient.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) {
        for (value, grad) in self.values.iter_mut().zip(&grads.params) {
            if let Some(g) = grad {
                for (v, &d) in value.data_mut().iter_mut().zip(g.data()) {
                    *v = *v - lr * d;
                }
            }
        }
    }

    /// Writes `<dir>/<name>.cltn` for every parameter.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, value) in self.names.iter().zip(&self.values) {
            CltnArray::from_tensor(value).save(dir.join(format!("{name}.cltn")))?;
        }
        Ok(())
    }

    /// Overwrites every parameter from `<dir>/<name>.cltn`; shapes must match.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let loaded: Tensor<T> = CltnArray::load(dir.join(format!("{name}.cltn")))?.to_tensor()?;
            if loaded.shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    expected: value.shape().to_string(),
                    got: loaded.shape().to_string(),
                });
            }
            *value = loaded;
        }
        Ok(())
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Normalize {
        x: Var,
        mode: StatsMode,
        inv_std: Vec<T>,
    },
    GuidedSample {
        table: Var,
        masks: usize,
    },
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
    },
    AddScalar {
        x: Var,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Mse {
        x: Var,
        target: Tensor<T>,
    },
    Sum {
        x: Var,
    },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    nodes: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the parameter does not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a recorded input (or any other node kept on request).
    pub fn input(&self, var: Var) -> Option<&Tensor<T>> {
        self.nodes.get(&var)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(Tensor::is_finite)
    }
}

pub struct Tape<'a, T> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    inputs: Vec<Var>,
    masks: Vec<Vec<SemanticMask>>,
    counter: Option<FlopCounter>,
    scope: Option<Scope>,
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            inputs: Vec::new(),
            masks: Vec::new(),
            counter: None,
            scope: None,
        }
    }

    pub fn with_counter(store: &'a ParamStore<T>, counter: FlopCounter) -> Self {
        Tape {
            counter: Some(counter),
            ..Tape::new(store)
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn set_scope(&mut self, scope: Option<Scope>) {
        self.scope = scope;
    }

    pub fn counter(&self) -> Option<&FlopCounter> {
        self.counter.as_ref()
    }

    pub fn take_counter(&mut self) -> Option<FlopCounter> {
        self.counter.take()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, category: Category, flops: u64) {
        if let Some(c) = &mut self.counter {
            c.record(self.scope, category, flops);
        }
    }

    /// A constant; its gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.inputs.push(v);
        v
    }

    /// The node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let weight = self.value(w);
        let cout = weight.shape().n;
        let zero;
        let bias: &[T] = match b {
            Some(b) => {
                let bt = self.value(b);
                if bt.numel() != cout {
                    return Err(Error::ShapeMismatch {
                        op: "conv bias",
                        expected: format!("{cout} values"),
                        got: bt.shape().to_string(),
                    });
                }
                bt.data()
            }
            None => {
                zero = vec![T::zero(); cout];
                &zero
            }
        };
        let out = conv2d_raw(self.value(x), weight, bias, stride, padding)?;
        let ws = weight.shape();
        let geom = ConvGeometry {
            cin: ws.c,
            cout,
            k: ws.h,
            stride,
            padding,
        };
        let macs = geom.macs(self.value(x).shape())?;
        let os = out.shape();
        if let Some(c) = &mut self.counter {
            c.record_macs(self.scope, macs);
            if b.is_some() {
                c.record(self.scope, Category::Bias, os.numel() as u64);
            }
        }
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = upsample_nearest(self.value(x), factor)?;
        Ok(self.push(out, Op::Upsample { x, factor }))
    }

    pub fn normalize(&mut self, x: Var, mode: StatsMode) -> Var {
        let n = normalize_with_stats(self.value(x), mode);
        // mean, variance and the normalizing affine: ~5 per element
        self.record(Category::Normalize, 5 * n.xhat.numel() as u64);
        self.push(
            n.xhat,
            Op::Normalize {
                x,
                mode,
                inv_std: n.inv_std,
            },
        )
    }

    /// Per-pixel lookup of a `(Nc, C, 1, 1)` table by the labels of each
    /// batch item's mask; output `(N, C, H, W)` with `N = masks.len()`.
    pub fn guided_sample(&mut self, table: Var, masks: &[SemanticMask]) -> Result<Var> {
        let t = self.value(table);
        let ts = t.shape();
        if ts.h != 1 || ts.w != 1 || masks.is_empty() {
            return Err(Error::InvalidShape {
                op: "guided_sample",
                shape: ts,
                reason: "expected an (Nc, C, 1, 1) table and at least one mask".into(),
            });
        }
        let (h, w) = (masks[0].height(), masks[0].width());
        let out_shape = Shape::new(masks.len(), ts.c, h, w);
        let mut out = Tensor::zeros(out_shape);
        for (n, m) in masks.iter().enumerate() {
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::ShapeMismatch {
                    op: "guided_sample",
                    expected: format!("{h}x{w} mask"),
                    got: format!("{}x{}", m.height(), m.width()),
                });
            }
            if let Some((i, &l)) = m.labels().iter().enumerate().find(|(_, &l)| l as usize >= ts.n) {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    row: i / w,
                    col: i % w,
                    classes: ts.n,
                });
            }
            let p = h * w;
            let td = t.data();
            let od = out.data_mut();
            for c in 0..ts.c {
                let dst = &mut od[(n * ts.c + c) * p..(n * ts.c + c + 1) * p];
                for (o, &l) in dst.iter_mut().zip(m.labels()) {
                    *o = td[l as usize * ts.c + c];
                }
            }
        }
        self.record(Category::Assign, out_shape.numel() as u64);
        self.masks.push(masks.to_vec());
        let idx = self.masks.len() - 1;
        Ok(self.push(out, Op::GuidedSample { table, masks: idx }))
    }

    fn binary(&mut self, op: BinaryOp, a: Var, b: Var, category: Category) -> Result<Var> {
        let out = elementwise(self.value(a), self.value(b), op)?;
        self.record(category, out.numel() as u64);
        Ok(self.push(out, Op::Binary { op, a, b }))
    }

    /// Broadcasting add, counted as [`Category::Elementwise`].
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b, Category::Elementwise)
    }

    /// Broadcasting product, counted as [`Category::Elementwise`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b, Category::Elementwise)
    }

    pub fn add_as(&mut self, a: Var, b: Var, category: Category) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b, category)
    }

    pub fn mul_as(&mut self, a: Var, b: Var, category: Category) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b, category)
    }

    /// `x + c`; counted as a bias add.
    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.record(Category::Bias, out.numel() as u64);
        self.push(out, Op::AddScalar { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = crate::tensor::relu(self.value(x));
        self.record(Category::Elementwise, out.numel() as u64);
        self.push(out, Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = crate::tensor::leaky_relu(self.value(x), slope);
        self.record(Category::Elementwise, out.numel() as u64);
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.record(Category::Elementwise, out.numel() as u64);
        self.push(out, Op::Tanh { x })
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    /// Mean squared error against a constant target; a scalar node.
    pub fn mse(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                expected: xv.shape().to_string(),
                got: target.shape().to_string(),
            });
        }
        let mut acc = T::zero();
        for (&a, &b) in xv.data().iter().zip(target.data()) {
            acc = acc + (a - b) * (a - b);
        }
        let loss = acc / T::from_f64(xv.numel() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                x,
                target: target.clone(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Gradients of the scalar `loss` with respect to every parameter and
    /// every input recorded on this tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.value(loss).shape();
        if ls.numel() != 1 {
            return Err(Error::NonScalarLoss(ls));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls, T::one()));

        fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let cg = conv2d_backward_raw(self.value(*x), self.value(*w), *stride, *padding, &g)?;
                    accumulate(&mut grads, *x, cg.input);
                    accumulate(&mut grads, *w, cg.weight);
                    if let Some(b) = b {
                        let bs = self.value(*b).shape();
                        accumulate(&mut grads, *b, Tensor::from_vec(bs, cg.bias)?);
                    }
                }
                Op::Upsample { x, factor } => {
                    accumulate(&mut grads, *x, downsample_sum(&g, *factor)?);
                }
                Op::Normalize { x, mode, inv_std } => {
                    let xhat = self.value(Var(i));
                    accumulate(&mut grads, *x, normalize_backward(xhat, &g, *mode, inv_std));
                }
                Op::GuidedSample { table, masks } => {
                    let ts = self.value(*table).shape();
                    let mut gt = Tensor::zeros(ts);
                    let gs = g.shape();
                    let p = gs.plane();
                    let gtd = gt.data_mut();
                    for (n, m) in self.masks[*masks].iter().enumerate() {
                        for c in 0..gs.c {
                            let src = &g.data()[(n * gs.c + c) * p..(n * gs.c + c + 1) * p];
                            for (&v, &l) in src.iter().zip(m.labels()) {
                                let slot = &mut gtd[l as usize * ts.c + c];
                                *slot = *slot + v;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::Binary { op, a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (ga, gb) = match op {
                        BinaryOp::Add => (g.sum_to(av.shape())?, g.sum_to(bv.shape())?),
                        BinaryOp::Mul => (
                            elementwise(&g, bv, BinaryOp::Mul)?.sum_to(av.shape())?,
                            elementwise(&g, av, BinaryOp::Mul)?.sum_to(bv.shape())?,
                        ),
                    };
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddScalar { x } => accumulate(&mut grads, *x, g),
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut out = g;
                    for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *o = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, out);
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let mut out = g;
                    for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *o = *o * *slope;
                        }
                    }
                    accumulate(&mut grads, *x, out);
                }
                Op::Tanh { x } => {
                    let y = self.value(Var(i));
                    let mut out = g;
                    for (o, &t) in out.data_mut().iter_mut().zip(y.data()) {
                        *o = *o * (T::one() - t * t);
                    }
                    accumulate(&mut grads, *x, out);
                }
                Op::Concat { a, b } => {
                    let (ga, gb) = split_channels(&g, self.value(*a).shape().c)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mse { x, target } => {
                    let xv = self.value(*x);
                    let scale = g.data()[0] * T::from_f64(2.0 / xv.numel() as f64);
                    let mut out = xv.clone();
                    for (o, &t) in out.data_mut().iter_mut().zip(target.data()) {
                        *o = (*o - t) * scale;
                    }
                    accumulate(&mut grads, *x, out);
                }
                Op::Sum { x } => {
                    let xs = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor::full(xs, g.data()[0]));
                }
            }
        }

        let mut params: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        for (id, v) in &self.params {
            params[id.0] = grads[v.0].take();
        }
        let nodes = self
            .inputs
            .iter()
            .filter_map(|&v| grads[v.0].take().map(|g| (v, g)))
            .collect();
        Ok(Gradients { params, nodes })
    }
}

/// Full normalization backward: with `x̂ = (x - μ)·s` per group of size `N`,
/// `dx = s/N · (N·g - Σg - x̂·Σ(g·x̂))`.
fn normalize_backward<T: Scalar>(xhat: &Tensor<T>, g: &Tensor<T>, mode: StatsMode, inv_std: &[T]) -> Tensor<T> {
    let mm = mode.moment_mode();
    let s = xhat.shape();
    let groups = mm.groups(&s);
    let count = mm.group_size(&s) as f64;
    let p = s.plane();
    let mut sum_g = vec![0f64; groups];
    let mut sum_gx = vec![0f64; groups];
    for n in 0..s.n {
        for c in 0..s.c {
            let k = mm.group_of(&s, n, c);
            let off = (n * s.c + c) * p;
            for (&gv, &xv) in g.data()[off..off + p].iter().zip(&xhat.data()[off..off + p]) {
                sum_g[k] += gv.as_f64();
                sum_gx[k] += gv.as_f64() * xv.as_f64();
            }
        }
    }
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let k = mm.group_of(&s, n, c);
            let off = (n * s.c + c) * p;
            let (mg, mgx) = (T::from_f64(sum_g[k] / count), T::from_f64(sum_gx[k] / count));
            let is = inv_std[k];
            let dst = &mut out.data_mut()[off..off + p];
            for ((o, &gv), &xv) in dst.iter_mut().zip(&g.data()[off..off + p]).zip(&xhat.data()[off..off + p]) {
                *o = is * (gv - mg - xv * mgx);
            }
        }
    }
    out
}

/// `(f(θ + h) - f(θ - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, theta: f64, h: f64) -> f64 {
    (f(theta + h) - f(theta - h)) / (2.0 * h)
}

/// Central-difference gradient of `loss` for every scalar of the listed
/// parameters, with step `rel_step · max(1, |θ|)`. The store is restored
/// afterwards.
pub fn finite_diff<T: Scalar>(
    store: &mut ParamStore<T>,
    ids: &[ParamId],
    rel_step: f64,
    mut loss: impl FnMut(&ParamStore<T>) -> Result<f64>,
) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let mut grad = Tensor::zeros(store.get(id).shape());
        for j in 0..grad.numel() {
            let theta = store.get(id).data()[j];
            let h = rel_step * theta.as_f64().abs().max(1.0);
            store.get_mut(id).data_mut()[j] = T::from_f64(theta.as_f64() + h);
            let up = loss(store)?;
            store.get_mut(id).data_mut()[j] = T::from_f64(theta.as_f64() - h);
            let down = loss(store)?;
            store.get_mut(id).data_mut()[j] = theta;
            grad.data_mut()[j] = T::from_f64((up - down) / (2.0 * h));
        }
        out.push(grad);
    }
    Ok(out)
}

/// Norm-wise relative error `‖a - n‖ / max(‖a‖, ‖n‖, floor)` of one
/// gradient tensor against its numeric estimate.
///
/// Norm-wise rather than per entry: at `h = 1e-3` the central difference
/// carries an `O(h²)` truncation error that swamps entries whose gradient is
/// tiny compared to the local curvature, while the tensor as a whole is
/// still resolved to ~1e-5.
pub fn relative_error<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>, floor: f64) -> f64 {
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let (a, n) = (analytic.data(), numeric.data());
    let diff = norm(&mut a.iter().zip(n).map(|(&a, &n)| a.as_f64() - n.as_f64()));
    let na = norm(&mut a.iter().map(|v| v.as_f64()));
    let nn = norm(&mut n.iter().map(|v| v.as_f64()));
    diff / na.max(nn).max(floor)
}
