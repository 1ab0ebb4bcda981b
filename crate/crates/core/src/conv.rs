//! Direct 2-D cross-correlation lowered to im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Square convolution kernel with per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    /// `(Cout, Cin, k, k)`.
    pub weight: Tensor<T>,
    /// `Cout` values.
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        let kern = ConvKernel {
            weight,
            bias,
            stride,
            padding,
        };
        kern.validate()?;
        Ok(kern)
    }

    /// Zero weights and bias, "same" padding.
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        ConvKernel {
            weight: Tensor::zeros(Shape::new(cout, cin, k, k)),
            bias: vec![T::zero(); cout],
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        if s.h != s.w || s.h.is_multiple_of(2) {
            return Err(Error::InvalidShape {
                op: "conv kernel",
                shape: s,
                reason: "kernel must be square with odd size".into(),
            });
        }
        if self.bias.len() != s.n {
            return Err(Error::ShapeMismatch {
                op: "conv kernel bias",
                expected: format!("{} values", s.n),
                got: format!("{} values", self.bias.len()),
            });
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        if !self.weight.is_finite() || self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("conv weights must be finite".into()));
        }
        Ok(())
    }

    pub fn cin(&self) -> usize {
        self.weight.shape().c
    }

    pub fn cout(&self) -> usize {
        self.weight.shape().n
    }

    pub fn k(&self) -> usize {
        self.weight.shape().h
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            cin: self.cin(),
            cout: self.cout(),
            k: self.k(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Shape-only description of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: format!("{} input channels", self.cin),
                got: format!("{} channels in input {}", input.c, input),
            });
        }
        let out = |d: usize| -> Option<usize> {
            let padded = d + 2 * self.padding;
            (padded >= self.k).then(|| (padded - self.k) / self.stride + 1)
        };
        match (out(input.h), out(input.w)) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n, self.cout, h, w)),
            _ => Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: format!(
                    "spatial dims >= {} for kernel {} and padding {}",
                    self.k.saturating_sub(2 * self.padding),
                    self.k,
                    self.padding
                ),
                got: format!("{}x{}", input.h, input.w),
            }),
        }
    }

    /// Multiply-accumulates for one forward pass over `input`, bias excluded.
    pub fn macs(&self, input: Shape) -> Result<u64> {
        let o = self.output_shape(input)?;
        Ok((self.k * self.k * self.cin * self.cout) as u64 * (o.n * o.plane()) as u64)
    }
}

/// Unfolds sample `n` of `x` into a `(Cin*k*k) x (H'*W')` row-major matrix.
fn im2col<T: Scalar>(x: &Tensor<T>, n: usize, g: &ConvGeometry, out: Shape, cols: &mut [T]) {
    let s = x.shape();
    let (k, stride, pad) = (g.k, g.stride, g.padding as isize);
    let p = out.plane();
    for ci in 0..g.cin {
        let plane = x.plane(n, ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad;
                    let dst = &mut row[oy * out.w..(oy + 1) * out.w];
                    if iy < 0 || iy >= s.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad;
                        *d = if ix < 0 || ix >= s.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into sample `n` of `dx`.
fn col2im<T: Scalar>(cols: &[T], n: usize, g: &ConvGeometry, out: Shape, dx: &mut Tensor<T>) {
    let s = dx.shape();
    let (k, stride, pad) = (g.k, g.stride, g.padding as isize);
    let p = out.plane();
    for ci in 0..g.cin {
        let base = s.index(n, ci, 0, 0);
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let data = dx.data_mut();
                    for ox in 0..out.w {
                        let ix = (ox * stride + kx) as isize - pad;
                        if ix >= 0 && ix < s.w as isize {
                            let i = base + iy as usize * s.w + ix as usize;
                            data[i] = data[i] + row[oy * out.w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` with `kern`, output `(N, Cout, H', W')`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, kern: &ConvKernel<T>) -> Result<Tensor<T>> {
    conv2d_raw(x, &kern.weight, &kern.bias, kern.stride, kern.padding)
}

fn geometry_of<T: Scalar>(weight: &Tensor<T>, bias: &[T], stride: usize, padding: usize) -> Result<ConvGeometry> {
    let ws = weight.shape();
    if ws.h != ws.w || ws.h.is_multiple_of(2) || bias.len() != ws.n || stride == 0 {
        return Err(Error::InvalidShape {
            op: "conv2d",
            shape: ws,
            reason: format!(
                "expected an odd square kernel with {} bias values and positive stride",
                ws.n
            ),
        });
    }
    Ok(ConvGeometry {
        cin: ws.c,
        cout: ws.n,
        k: ws.h,
        stride,
        padding,
    })
}

/// [`conv2d`] on borrowed weight `(Cout, Cin, k, k)` and bias `Cout` storage.
pub fn conv2d_raw<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = geometry_of(weight, bias, stride, padding)?;
    let out_shape = g.output_shape(x.shape())?;
    let kk = g.cin * g.k * g.k;
    let p = out_shape.plane();
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); kk * p];
    for n in 0..out_shape.n {
        im2col(x, n, &g, out_shape, &mut cols);
        let dst = &mut out.data_mut()[n * g.cout * p..(n + 1) * g.cout * p];
        for (co, row) in dst.chunks_exact_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        T::gemm(
            g.cout,
            kk,
            p,
            T::one(),
            (weight.data(), kk as isize, 1),
            (&cols, p as isize, 1),
            T::one(),
            (dst, p as isize, 1),
        );
    }
    Ok(out)
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kern: &ConvKernel<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_raw(x, &kern.weight, kern.stride, kern.padding, grad_out)
}

pub fn conv2d_backward_raw<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let zero_bias = vec![T::zero(); weight.shape().n];
    let g = geometry_of(weight, &zero_bias, stride, padding)?;
    let out_shape = g.output_shape(x.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            expected: out_shape.to_string(),
            got: grad_out.shape().to_string(),
        });
    }
    let kk = g.cin * g.k * g.k;
    let p = out_shape.plane();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = zero_bias;
    let mut cols = vec![T::zero(); kk * p];
    let mut dcols = vec![T::zero(); kk * p];
    for n in 0..out_shape.n {
        let go = &grad_out.data()[n * g.cout * p..(n + 1) * g.cout * p];
        for (co, row) in go.chunks_exact(p).enumerate() {
            db[co] = db[co] + row.iter().copied().sum::<T>();
        }
        im2col(x, n, &g, out_shape, &mut cols);
        // dW += dY (Cout x P) * cols^T (P x KK)
        T::gemm(
            g.cout,
            p,
            kk,
            T::one(),
            (go, p as isize, 1),
            (&cols, 1, p as isize),
            T::one(),
            (dw.data_mut(), kk as isize, 1),
        );
        // dcols = W^T (KK x Cout) * dY (Cout x P)
        T::gemm(
            kk,
            g.cout,
            p,
            T::one(),
            (weight.data(), 1, kk as isize),
            (go, p as isize, 1),
            T::zero(),
            (&mut dcols, p as isize, 1),
        );
        col2im(&dcols, n, &g, out_shape, &mut dx);
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
