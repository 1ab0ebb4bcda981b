//! Dense rank-4 tensors in `(batch, channel, height, width)` layout.
//!
//! Only the handful of operations the normalization layers and the toy
//! generator need are provided. Every operation is a pure function of its
//! inputs and returns a freshly allocated tensor.

use std::fmt;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type stored in a serialized tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for row-major operands described by
    /// explicit row and column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: DType = $dtype;

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    (rows as isize - 1) * rs + (cols as isize - 1) * cs
                };
                if k > 0 {
                    assert!(last(m, k, a.1, a.2) < a.0.len() as isize);
                    assert!(last(k, n, b.1, b.2) < b.0.len() as isize);
                }
                assert!(last(m, n, c.1, c.2) < c.0.len() as isize);
                // SAFETY: the asserts above keep every strided access in bounds
                // and all strides are non-negative at every call site.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, DType::F32, matrixmultiply::sgemm);
impl_scalar!(f64, DType::F64, matrixmultiply::dgemm);

/// `(N, C, H, W)` extents of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn is_valid(&self) -> bool {
        self.dims().iter().all(|&d| d >= 1)
    }

    /// True if every dim of `self` is either 1 or equal to the matching dim of `target`.
    pub fn broadcasts_to(&self, target: &Shape) -> bool {
        self.dims()
            .iter()
            .zip(target.dims())
            .all(|(&d, t)| d == 1 || d == t)
    }

    pub(crate) fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

/// Reduction groups for [`moments`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MomentMode {
    /// One group per channel, reducing over N, H and W (batch-norm statistics).
    PerChannel,
    /// One group per (sample, channel), reducing over H and W (instance-norm statistics).
    PerInstance,
}

impl MomentMode {
    pub fn groups(self, shape: &Shape) -> usize {
        match self {
            MomentMode::PerChannel => shape.c,
            MomentMode::PerInstance => shape.n * shape.c,
        }
    }

    pub fn group_size(self, shape: &Shape) -> usize {
        match self {
            MomentMode::PerChannel => shape.n * shape.plane(),
            MomentMode::PerInstance => shape.plane(),
        }
    }

    /// Group index of the `(n, c)` plane.
    pub fn group_of(self, shape: &Shape, n: usize, c: usize) -> usize {
        match self {
            MomentMode::PerChannel => c,
            MomentMode::PerInstance => n * shape.c + c,
        }
    }
}

/// Population mean and variance per reduction group.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 16;
        let mut dbg = f.debug_struct("Tensor");
        dbg.field("shape", &self.shape);
        if self.data.len() <= PREVIEW {
            dbg.field("data", &self.data);
        } else {
            dbg.field("data[..16]", &&self.data[..PREVIEW]);
        }
        dbg.finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if !shape.is_valid() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: "all dims must be at least 1".into(),
            });
        }
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                expected: format!("{} elements for {}", shape.numel(), shape),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(shape.is_valid(), "invalid tensor shape {shape}");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        assert!(shape.is_valid(), "invalid tensor shape {shape}");
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous `H*W` slice of one `(n, c)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.numel() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Sum over every dim where `target` has extent 1. Used to reduce a
    /// broadcast gradient back to the operand's shape.
    pub fn sum_to(&self, target: Shape) -> Result<Self> {
        if !target.broadcasts_to(&self.shape) {
            return Err(Error::ShapeMismatch {
                op: "sum_to",
                expected: format!("a shape broadcastable to {}", self.shape),
                got: target.to_string(),
            });
        }
        if target == self.shape {
            return Ok(self.clone());
        }
        let mut out = Tensor::zeros(target);
        let s = self.shape;
        let pick = |d: usize, i: usize| if d == 1 { 0 } else { i };
        let mut src = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                for h in 0..s.h {
                    for w in 0..s.w {
                        let dst = target.index(
                            pick(target.n, n),
                            pick(target.c, c),
                            pick(target.h, h),
                            pick(target.w, w),
                        );
                        out.data[dst] = out.data[dst] + self.data[src];
                        src += 1;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0usize; 4];
    for (i, (x, y)) in a.dims().into_iter().zip(b.dims()).enumerate() {
        out[i] = match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    expected: format!("{a} or a broadcastable shape"),
                    got: b.to_string(),
                })
            }
        };
    }
    Ok(Shape::new(out[0], out[1], out[2], out[3]))
}

/// Pointwise `x op y`. Any dim of extent 1 in either operand broadcasts
/// against the other operand.
pub fn elementwise<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, op: BinaryOp) -> Result<Tensor<T>> {
    let f = |a: T, b: T| match op {
        BinaryOp::Add => a + b,
        BinaryOp::Mul => a * b,
    };
    if x.shape == y.shape {
        let data = x.data.iter().zip(&y.data).map(|(&a, &b)| f(a, b)).collect();
        return Ok(Tensor {
            shape: x.shape,
            data,
        });
    }
    let out_shape = broadcast_shape("elementwise", x.shape, y.shape)?;
    let strides = |s: Shape| {
        let full = [s.c * s.h * s.w, s.h * s.w, s.w, 1];
        let dims = s.dims();
        let mut st = [0usize; 4];
        for i in 0..4 {
            st[i] = if dims[i] == 1 { 0 } else { full[i] };
        }
        st
    };
    let (sx, sy) = (strides(x.shape), strides(y.shape));
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..out_shape.n {
        for c in 0..out_shape.c {
            for h in 0..out_shape.h {
                let bx = n * sx[0] + c * sx[1] + h * sx[2];
                let by = n * sy[0] + c * sy[1] + h * sy[2];
                for w in 0..out_shape.w {
                    data.push(f(x.data[bx + w * sx[3]], y.data[by + w * sy[3]]));
                }
            }
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data,
    })
}

pub fn add<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(x, y, BinaryOp::Add)
}

pub fn mul<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(x, y, BinaryOp::Mul)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

/// Stacks `x` and `y` along the channel axis. Batch and spatial dims must agree.
pub fn concat_channels<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b) = (x.shape, y.shape);
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            expected: format!("({}, _, {}, {})", a.n, a.h, a.w),
            got: b.to_string(),
        });
    }
    let shape = Shape::new(a.n, a.c + b.c, a.h, a.w);
    let mut data = Vec::with_capacity(shape.numel());
    let (px, py) = (a.c * a.plane(), b.c * b.plane());
    for n in 0..a.n {
        data.extend_from_slice(&x.data[n * px..(n + 1) * px]);
        data.extend_from_slice(&y.data[n * py..(n + 1) * py]);
    }
    Ok(Tensor { shape, data })
}

/// Splits channels `[0, split)` and `[split, C)` into two tensors. Inverse of
/// [`concat_channels`].
pub fn split_channels<T: Scalar>(x: &Tensor<T>, split: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = x.shape;
    if split == 0 || split >= s.c {
        return Err(Error::InvalidArgument(format!(
            "split_channels: split {split} outside (0, {})",
            s.c
        )));
    }
    let (sa, sb) = (
        Shape::new(s.n, split, s.h, s.w),
        Shape::new(s.n, s.c - split, s.h, s.w),
    );
    let (mut da, mut db) = (Vec::with_capacity(sa.numel()), Vec::with_capacity(sb.numel()));
    let (pa, pb) = (sa.c * s.plane(), sb.c * s.plane());
    for n in 0..s.n {
        let base = n * (pa + pb);
        da.extend_from_slice(&x.data[base..base + pa]);
        db.extend_from_slice(&x.data[base + pa..base + pa + pb]);
    }
    Ok((Tensor { shape: sa, data: da }, Tensor { shape: sb, data: db }))
}

/// Nearest-neighbour upsampling: each pixel is replicated `factor x factor` times.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let s = x.shape;
    let shape = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut data = Vec::with_capacity(shape.numel());
    let mut row = Vec::with_capacity(shape.w);
    for plane in x.data.chunks_exact(s.plane()) {
        for src_row in plane.chunks_exact(s.w) {
            row.clear();
            for &v in src_row {
                row.extend(std::iter::repeat_n(v, factor));
            }
            for _ in 0..factor {
                data.extend_from_slice(&row);
            }
        }
    }
    Ok(Tensor { shape, data })
}

/// Adjoint of [`upsample_nearest`]: sums each `factor x factor` cell.
pub fn downsample_sum<T: Scalar>(g: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = g.shape;
    if factor == 0 || !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "downsample_sum: factor {factor} does not divide {s}"
        )));
    }
    let shape = Shape::new(s.n, s.c, s.h / factor, s.w / factor);
    let mut out = Tensor::zeros(shape);
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    let dst = shape.index(n, c, h / factor, w / factor);
                    out.data[dst] = out.data[dst] + g.at(n, c, h, w);
                }
            }
        }
    }
    Ok(out)
}

/// Population mean and variance of each reduction group. Sums are
/// accumulated in `f64` in row-major order; variance is two-pass.
pub fn moments<T: Scalar>(x: &Tensor<T>, mode: MomentMode) -> Moments<T> {
    let s = x.shape;
    let groups = mode.groups(&s);
    let count = mode.group_size(&s) as f64;
    let mut sum = vec![0f64; groups];
    for n in 0..s.n {
        for c in 0..s.c {
            let g = mode.group_of(&s, n, c);
            sum[g] += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0f64; groups];
    for n in 0..s.n {
        for c in 0..s.c {
            let g = mode.group_of(&s, n, c);
            let m = mean[g];
            sq[g] += x
                .plane(n, c)
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
    }
    Moments {
        mean: mean.into_iter().map(T::from_f64).collect(),
        var: sq.into_iter().map(|v| T::from_f64(v / count)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn from_vec_checks_length_and_dims() {
        assert!(Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn relu_and_leaky() {
        let x = t(Shape::new(1, 1, 1, 3), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(leaky_relu(&x, 0.2).data(), &[-0.2, 0.0, 2.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, h, w| (n + 2 * c + 3 * h + 5 * w) as f64);
        let ones = Tensor::ones(x.shape());
        assert_eq!(mul(&x, &ones).unwrap(), x);
    }

    #[test]
    fn broadcast_channel_vector() {
        let x = Tensor::<f64>::ones(Shape::new(2, 2, 2, 2));
        let y = t(Shape::new(1, 2, 1, 1), &[3.0, 5.0]);
        let z = mul(&x, &y).unwrap();
        assert_eq!(z.at(1, 0, 1, 1), 3.0);
        assert_eq!(z.at(1, 1, 0, 1), 5.0);
        let bad = t(Shape::new(1, 3, 1, 1), &[1.0, 2.0, 3.0]);
        assert!(matches!(add(&x, &bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sum_to_reverses_broadcast() {
        let g = Tensor::<f64>::ones(Shape::new(2, 3, 2, 2));
        let r = g.sum_to(Shape::new(1, 3, 1, 1)).unwrap();
        assert_eq!(r.data(), &[8.0, 8.0, 8.0]);
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::<f64>::full(Shape::new(2, 2, 3, 3), 1.0);
        let b = Tensor::<f64>::full(Shape::new(2, 3, 3, 3), 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 5, 3, 3));
        assert_eq!(c.at(1, 1, 0, 0), 1.0);
        assert_eq!(c.at(1, 2, 0, 0), 2.0);
        let (a2, b2) = split_channels(&c, 2).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn upsample_replicates() {
        let x = t(Shape::new(1, 1, 1, 2), &[1.0, 2.0]);
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(downsample_sum(&y, 2).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn moments_small_cases() {
        let x = t(Shape::new(1, 1, 1, 2), &[1.0, 3.0]);
        let m = moments(&x, MomentMode::PerChannel);
        assert_eq!((m.mean[0], m.var[0]), (2.0, 1.0));

        let c = Tensor::<f64>::full(Shape::new(2, 3, 2, 2), 4.5);
        for mode in [MomentMode::PerChannel, MomentMode::PerInstance] {
            let m = moments(&c, mode);
            assert_eq!(m.mean.len(), mode.groups(&c.shape()));
            assert!(m.mean.iter().all(|&v| v == 4.5));
            assert!(m.var.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_duplication_keeps_channel_moments() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| ((c + 1) * (h * 3 + w)) as f64 * 0.1);
        let mut doubled = x.data().to_vec();
        doubled.extend_from_slice(x.data());
        let xx = Tensor::from_vec(Shape::new(2, 2, 3, 3), doubled).unwrap();
        let (a, b) = (moments(&x, MomentMode::PerChannel), moments(&xx, MomentMode::PerChannel));
        for i in 0..2 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-15);
            assert!((a.var[i] - b.var[i]).abs() < 1e-15);
        }
    }
}
