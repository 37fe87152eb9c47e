//! Dense row-major `f64` tensors and the numeric kernels shared by the tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense n-dimensional array stored row-major.
///
/// A tensor with an empty shape is a scalar holding one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} holds {n} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// One-dimensional tensor.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a tensor viewed as `[shape[0], rest]`.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn row_len(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.data.len() / self.shape[0]
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Rows selected by index along the leading axis.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::invalid(format!(
                    "row {i} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(indices.len());
        } else {
            shape[0] = indices.len();
        }
        Self::new(shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::InvalidShape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `c[n, m] = a[n, k] · b[k, m]`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let out = &mut c[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    c
}

/// `c[n, k] = g[n, m] · b[k, m]ᵀ`.
pub fn matmul_nt(g: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            c[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `c[k, m] = a[n, k]ᵀ · g[n, m]`.
pub fn matmul_tn(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out = &mut c[p * m..(p + 1) * m];
            for (o, &gv) in out.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    c
}

/// Geometry of a 2-D cross-correlation over `[batch, channels, height, width]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::InvalidShape(format!(
                "conv2d expects 4-d input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        if input[1] != kernel[1] {
            return Err(Error::InvalidShape(format!(
                "input has {} channels but kernel expects {}",
                input[1], kernel[1]
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let geo = Self {
            batch: input[0],
            in_channels: input[1],
            height: input[2],
            width: input[3],
            out_channels: kernel[0],
            kernel_h: kernel[2],
            kernel_w: kernel[3],
            stride,
            padding,
        };
        if geo.kernel_h > geo.height + 2 * padding || geo.kernel_w > geo.width + 2 * padding {
            return Err(Error::InvalidShape(format!(
                "kernel {}x{} larger than padded input {}x{}",
                geo.kernel_h,
                geo.kernel_w,
                geo.height + 2 * padding,
                geo.width + 2 * padding
            )));
        }
        Ok(geo)
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h(), self.out_w()]
    }

    /// Output columns `ox` whose input column `ox*stride + kj - padding` is in range.
    fn valid_cols(&self, kj: usize) -> core::ops::Range<usize> {
        valid_range(self.out_w(), self.width, self.stride, self.padding, kj)
    }

    fn valid_rows(&self, ki: usize) -> core::ops::Range<usize> {
        valid_range(self.out_h(), self.height, self.stride, self.padding, ki)
    }
}

fn valid_range(out: usize, size: usize, stride: usize, padding: usize, k: usize) -> core::ops::Range<usize> {
    // need 0 <= o*stride + k - padding < size
    let lo = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    let hi = if size + padding <= k {
        0
    } else {
        ((size + padding - k - 1) / stride + 1).min(out)
    };
    lo.min(hi)..hi
}

pub fn conv2d_forward(input: &[f64], kernel: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.batch * g.out_channels * oh * ow];
    let in_plane = g.height * g.width;
    let k_plane = g.kernel_h * g.kernel_w;
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let out_map = &mut out[(b * g.out_channels + o) * oh * ow..][..oh * ow];
            for c in 0..g.in_channels {
                let in_map = &input[(b * g.in_channels + c) * in_plane..][..in_plane];
                let kmap = &kernel[(o * g.in_channels + c) * k_plane..][..k_plane];
                for ki in 0..g.kernel_h {
                    let rows = g.valid_rows(ki);
                    for kj in 0..g.kernel_w {
                        let w = kmap[ki * g.kernel_w + kj];
                        if w == 0.0 {
                            continue;
                        }
                        let cols = g.valid_cols(kj);
                        for oy in rows.clone() {
                            let iy = oy * g.stride + ki - g.padding;
                            let orow = &mut out_map[oy * ow..(oy + 1) * ow];
                            let irow = &in_map[iy * g.width..(iy + 1) * g.width];
                            if g.stride == 1 {
                                let ix0 = cols.start + kj - g.padding;
                                let src = &irow[ix0..ix0 + cols.len()];
                                for (dst, &x) in orow[cols.clone()].iter_mut().zip(src) {
                                    *dst += w * x;
                                }
                            } else {
                                for ox in cols.clone() {
                                    orow[ox] += w * irow[ox * g.stride + kj - g.padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a cross-correlation with respect to input and kernel.
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let in_plane = g.height * g.width;
    let k_plane = g.kernel_h * g.kernel_w;
    let mut d_input = vec![0.0; input.len()];
    let mut d_kernel = vec![0.0; kernel.len()];
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let gmap = &grad_out[(b * g.out_channels + o) * oh * ow..][..oh * ow];
            for c in 0..g.in_channels {
                let in_off = (b * g.in_channels + c) * in_plane;
                let k_off = (o * g.in_channels + c) * k_plane;
                for ki in 0..g.kernel_h {
                    let rows = g.valid_rows(ki);
                    for kj in 0..g.kernel_w {
                        let w = kernel[k_off + ki * g.kernel_w + kj];
                        let cols = g.valid_cols(kj);
                        let mut acc = 0.0;
                        for oy in rows.clone() {
                            let iy = oy * g.stride + ki - g.padding;
                            let grow = &gmap[oy * ow..(oy + 1) * ow];
                            let ibase = in_off + iy * g.width;
                            for ox in cols.clone() {
                                let ix = ox * g.stride + kj - g.padding;
                                let gv = grow[ox];
                                acc += gv * input[ibase + ix];
                                d_input[ibase + ix] += gv * w;
                            }
                        }
                        d_kernel[k_off + ki * g.kernel_w + kj] += acc;
                    }
                }
            }
        }
    }
    (d_input, d_kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert_eq!(Tensor::scalar(2.0).item(), Some(2.0));
    }

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] · [5; 6] = [17; 39]
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1);
        assert_eq!(c, vec![17.0, 39.0]);
        let nt = matmul_nt(&[1.0, 1.0], &[1.0, 2.0, 3.0, 4.0], 1, 2, 2);
        assert_eq!(nt, vec![3.0, 7.0]);
        let tn = matmul_tn(&[1.0, 2.0], &[3.0], 1, 2, 1);
        assert_eq!(tn, vec![3.0, 6.0]);
    }

    #[test]
    fn conv_valid_ranges_with_padding() {
        let g = ConvGeometry::new(&[1, 1, 3, 3], &[1, 1, 3, 3], 1, 1).unwrap();
        assert_eq!(g.out_shape(), vec![1, 1, 3, 3]);
        let ones = vec![1.0; 9];
        let out = conv2d_forward(&ones, &ones, &g);
        // corners see 4 pixels, edges 6, centre 9
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_kernel_too_large() {
        assert!(ConvGeometry::new(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 0).is_err());
    }
}
