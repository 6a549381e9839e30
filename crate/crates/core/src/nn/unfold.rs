//! Patch extraction (`im2col`) and its adjoint for 2-D convolutions.
//!
//! A `(B, C, H, W)` input becomes `(B, C * kh * kw, Ho * Wo)` columns so that a
//! convolution is one matrix product; the backward pass folds column
//! gradients back onto the input grid.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    /// Spacing between kernel taps along the width axis.
    dilation: usize,
}

impl Geometry {
    fn out_h(&self) -> usize {
        (self.height - self.kh) / self.stride + 1
    }

    fn span_w(&self) -> usize {
        self.dilation * (self.kw - 1) + 1
    }

    fn out_w(&self) -> usize {
        (self.width - self.span_w()) / self.stride + 1
    }

    fn cols_shape(&self) -> Shape {
        Shape::from((self.batch, self.channels * self.kh * self.kw, self.out_h() * self.out_w()))
    }

    fn unfold<T: WithDType>(&self, x: &[T]) -> Vec<T> {
        let (ho, wo, s) = (self.out_h(), self.out_w(), self.stride);
        let rows = self.channels * self.kh * self.kw;
        let mut out = vec![T::zero(); self.batch * rows * ho * wo];
        for b in 0..self.batch {
            for c in 0..self.channels {
                let plane = &x[(b * self.channels + c) * self.height * self.width..][..self.height * self.width];
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let r = (c * self.kh + i) * self.kw + j;
                        let dst = &mut out[(b * rows + r) * ho * wo..][..ho * wo];
                        for oy in 0..ho {
                            let src = &plane[(oy * s + i) * self.width + j * self.dilation..];
                            let d = &mut dst[oy * wo..][..wo];
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = src[ox * s];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn fold<T: WithDType>(&self, cols: &[T]) -> Vec<T> {
        let (ho, wo, s) = (self.out_h(), self.out_w(), self.stride);
        let rows = self.channels * self.kh * self.kw;
        let mut out = vec![T::zero(); self.batch * self.channels * self.height * self.width];
        for b in 0..self.batch {
            for c in 0..self.channels {
                let plane = &mut out[(b * self.channels + c) * self.height * self.width..][..self.height * self.width];
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let r = (c * self.kh + i) * self.kw + j;
                        let src = &cols[(b * rows + r) * ho * wo..][..ho * wo];
                        for oy in 0..ho {
                            let base = (oy * s + i) * self.width + j * self.dilation;
                            for (ox, &v) in src[oy * wo..][..wo].iter().enumerate() {
                                plane[base + ox * s] += v;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("unfold expects a contiguous tensor"),
    }
}

struct Unfold(Geometry);
struct Fold(Geometry);

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold2d"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.unfold(contiguous(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(g.unfold(contiguous(v, layout)?)),
            _ => candle_core::bail!("unfold supports f32 and f64"),
        };
        Ok((out, g.cols_shape()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&Fold(self.0))?))
    }
}

impl CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold2d"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.fold(contiguous(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(g.fold(contiguous(v, layout)?)),
            _ => candle_core::bail!("fold supports f32 and f64"),
        };
        Ok((out, Shape::from((g.batch, g.channels, g.height, g.width))))
    }
}

/// `(B, C, H, W) -> (B, C * kh * kw, Ho * Wo)` with `Ho = (H - kh) / stride + 1`;
/// row `(c * kh + i) * kw + j` holds `x[b, c, oy * stride + i, ox * stride + j * dilation]`.
pub fn unfold2d(x: &Tensor, kh: usize, kw: usize, stride: usize, dilation: usize) -> Result<Tensor> {
    let (batch, channels, height, width) = x.dims4()?;
    let span = dilation * (kw.max(1) - 1) + 1;
    if height < kh || width < span || stride == 0 || dilation == 0 || kh == 0 || kw == 0 {
        return crate::error::shape_err(format!("cannot unfold {height}x{width} with a {kh}x{kw} kernel"));
    }
    let g = Geometry {
        batch,
        channels,
        height,
        width,
        kh,
        kw,
        stride,
        dilation,
    };
    Ok(x.contiguous()?.apply_op1(Unfold(g))?)
}

/// Strided 2-D convolution without padding: `weight` is `(O, C, kh, kw)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize) -> Result<Tensor> {
    let (b, _, h, w) = x.dims4()?;
    let (o, c, kh, kw) = weight.dims4()?;
    let cols = unfold2d(x, kh, kw, stride, 1)?;
    let (ho, wo) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
    let w2 = weight.reshape((1, o, c * kh * kw))?.broadcast_as((b, o, c * kh * kw))?.contiguous()?;
    Ok(w2.matmul(&cols)?.reshape((b, o, ho, wo))?)
}

/// Ungrouped 1-D convolution without padding: `weight` is `(O, C, k)`.
pub fn conv1d(x: &Tensor, weight: &Tensor, stride: usize, dilation: usize) -> Result<Tensor> {
    let (b, c, t) = x.dims3()?;
    let (o, _, k) = weight.dims3()?;
    let cols = unfold2d(&x.reshape((b, c, 1, t))?, 1, k, stride, dilation)?;
    let l = cols.dim(2)?;
    let w2 = weight.reshape((1, o, c * k))?.broadcast_as((b, o, c * k))?.contiguous()?;
    Ok(w2.matmul(&cols)?.reshape((b, o, l))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        crate::nn::scalar(&(a - b).unwrap().abs().unwrap().max_all().unwrap()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        crate::nn::scalar(&(a * b).unwrap().sum_all().unwrap()).unwrap()
    }

    /// The output is linear in both the input and the kernel, so for any
    /// probe `<probe, y> == <dy/dx, x> == <dy/dw, w>`.
    fn check_linear_adjoints(y: &Tensor, x: &Var, w: &Var) {
        let probe = Tensor::randn(0f64, 1.0, y.dims(), &Device::Cpu).unwrap();
        let lhs = dot(y, &probe);
        let g = (y * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let gx = g.get(x).unwrap();
        let gw = g.get(w).unwrap();
        assert_eq!(gx.dims(), x.dims());
        assert_eq!(gw.dims(), w.dims());
        for rhs in [dot(gx, x.as_tensor()), dot(gw, w.as_tensor())] {
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv2d_matches_library_forward_with_adjoint_gradients() {
        for (kh, kw, stride, h, w) in [(3, 9, 1, 7, 12), (3, 9, 2, 10, 19), (3, 3, 2, 9, 8), (3, 9, 2, 11, 9)] {
            let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 3, h, w), &Device::Cpu).unwrap()).unwrap();
            let k = Var::from_tensor(&Tensor::randn(0f64, 1.0, (4, 3, kh, kw), &Device::Cpu).unwrap()).unwrap();
            let ours = conv2d(x.as_tensor(), k.as_tensor(), stride).unwrap();
            let lib = x.as_tensor().conv2d(k.as_tensor(), 0, stride, 1, 1).unwrap();
            assert_eq!(ours.dims(), lib.dims());
            assert!(max_diff(&ours, &lib) < 1e-10);
            check_linear_adjoints(&ours, &x, &k);
        }
    }

    #[test]
    fn unfold_layout() {
        let x = Tensor::arange(0f32, 12.0, &Device::Cpu).unwrap().reshape((1, 1, 3, 4)).unwrap();
        let cols = unfold2d(&x, 2, 2, 2, 1).unwrap();
        assert_eq!(cols.dims(), &[1, 4, 2]);
        let v: Vec<Vec<f32>> = cols.squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(v, vec![vec![0.0, 2.0], vec![1.0, 3.0], vec![4.0, 6.0], vec![5.0, 7.0]]);
    }

    #[test]
    fn dilated_unfold_layout() {
        let x = Tensor::arange(0f32, 7.0, &Device::Cpu).unwrap().reshape((1, 1, 1, 7)).unwrap();
        let cols = unfold2d(&x, 1, 3, 2, 2).unwrap();
        let v: Vec<Vec<f32>> = cols.squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(v, vec![vec![0.0, 2.0], vec![2.0, 4.0], vec![4.0, 6.0]]);
    }

    #[test]
    fn conv1d_matches_library_forward_with_adjoint_gradients() {
        for (k, stride, dilation, t) in [(3, 1, 1, 10), (5, 3, 1, 17), (3, 1, 9, 40), (1, 1, 1, 4), (3, 2, 3, 20)] {
            let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 3, t), &Device::Cpu).unwrap()).unwrap();
            let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (4, 3, k), &Device::Cpu).unwrap()).unwrap();
            let ours = conv1d(x.as_tensor(), w.as_tensor(), stride, dilation).unwrap();
            let lib = x.as_tensor().conv1d(w.as_tensor(), 0, stride, dilation, 1).unwrap();
            assert_eq!(ours.dims(), lib.dims());
            assert!(max_diff(&ours, &lib) < 1e-10);
            check_linear_adjoints(&ours, &x, &w);
        }
    }
}
