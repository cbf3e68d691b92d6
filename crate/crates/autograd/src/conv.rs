//! Stride-1 2-D convolution via im2col + GEMM.
//!
//! Layouts are NCHW for activations and (out, in, kh, kw) for weights,
//! matching the usual framework convention so checkpoints stay readable.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

use crate::element::Element;
use crate::error::{AutogradError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        self.in_h + 2 * self.pad + 1 - self.kernel_h
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 2 * self.pad + 1 - self.kernel_w
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

pub fn geometry<T>(x: &ArrayView4<T>, w: &ArrayView4<T>, pad: usize) -> Result<ConvGeometry> {
    let (_, c, h, wd) = x.dim();
    let (o, ci, kh, kw) = w.dim();
    if c != ci {
        return Err(AutogradError::Shape(format!(
            "conv2d: input has {c} channels but weight expects {ci}"
        )));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(AutogradError::Shape(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {pad})"
        )));
    }
    Ok(ConvGeometry {
        in_channels: c,
        out_channels: o,
        kernel_h: kh,
        kernel_w: kw,
        pad,
        in_h: h,
        in_w: wd,
    })
}

/// Unfolds one image `(C, H, W)` (contiguous slice) into `(C*kh*kw, oh*ow)`.
fn im2col<T: Element>(img: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = g.in_h * g.in_w;
    let mut row = 0;
    for c in 0..g.in_channels {
        let chan = &img[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                // valid output columns for this tap
                let x0 = g.pad.saturating_sub(kx);
                let x1 = (g.in_w + g.pad).saturating_sub(kx).min(ow);
                for oy in 0..oh {
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.in_h || x0 >= x1 {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &chan[(iy - g.pad) * g.in_w..(iy - g.pad + 1) * g.in_w];
                    out_row[..x0].fill(T::zero());
                    out_row[x1..].fill(T::zero());
                    let ix0 = x0 + kx - g.pad;
                    out_row[x0..x1].copy_from_slice(&src_row[ix0..ix0 + (x1 - x0)]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `(C*kh*kw, oh*ow)` back onto `(C, H, W)`, accumulating.
fn col2im<T: Element>(cols: &[T], g: &ConvGeometry, img: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = g.in_h * g.in_w;
    let mut row = 0;
    for c in 0..g.in_channels {
        let chan = &mut img[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                let x0 = g.pad.saturating_sub(kx);
                let x1 = (g.in_w + g.pad).saturating_sub(kx).min(ow);
                if x0 < x1 {
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < g.pad || iy - g.pad >= g.in_h {
                            continue;
                        }
                        let ix0 = x0 + kx - g.pad;
                        let dst = &mut chan[(iy - g.pad) * g.in_w + ix0..];
                        for (d, s) in dst.iter_mut().zip(&src[oy * ow + x0..oy * ow + x1]) {
                            *d += *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(
    x: ArrayView4<T>,
    w: ArrayView4<T>,
    bias: Option<ArrayView1<T>>,
    pad: usize,
) -> Result<Array4<T>> {
    let g = geometry(&x, &w, pad)?;
    if let Some(b) = &bias {
        if b.len() != g.out_channels {
            return Err(AutogradError::Shape(format!(
                "conv2d: bias has {} entries for {} output channels",
                b.len(),
                g.out_channels
            )));
        }
    }
    let batch = x.dim().0;
    let (oh, ow) = (g.out_h(), g.out_w());
    let x = x.as_standard_layout();
    let w = w.as_standard_layout();
    let wmat = w
        .view()
        .into_shape_with_order((g.out_channels, g.patch_len()))
        .expect("contiguous weight");
    let mut out = Array4::<T>::zeros((batch, g.out_channels, oh, ow));
    let mut cols = vec![T::zero(); g.patch_len() * oh * ow];
    let img_len = g.in_channels * g.in_h * g.in_w;
    let xs = x.as_slice().expect("standard layout");
    for n in 0..batch {
        im2col(&xs[n * img_len..(n + 1) * img_len], &g, &mut cols);
        let cview = ArrayView2::from_shape((g.patch_len(), oh * ow), &cols).expect("cols");
        let mut o = out.index_axis_mut(Axis(0), n);
        let mut omat = o
            .view_mut()
            .into_shape_with_order((g.out_channels, oh * ow))
            .expect("contiguous output");
        general_mat_mul(T::one(), &wmat, &cview, T::zero(), &mut omat);
        if let Some(b) = &bias {
            for (mut r, &bv) in omat.outer_iter_mut().zip(b.iter()) {
                r.mapv_inplace(|v| v + bv);
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Array4<T>>,
    pub dw: Array4<T>,
    pub db: Array1<T>,
}

pub fn conv2d_backward<T: Element>(
    x: ArrayView4<T>,
    w: ArrayView4<T>,
    dy: ArrayView4<T>,
    pad: usize,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(&x, &w, pad)?;
    let batch = x.dim().0;
    let (oh, ow) = (g.out_h(), g.out_w());
    if dy.dim() != (batch, g.out_channels, oh, ow) {
        return Err(AutogradError::Shape(format!(
            "conv2d backward: upstream gradient {:?} does not match output",
            dy.dim()
        )));
    }
    let x = x.as_standard_layout();
    let w = w.as_standard_layout();
    let dy = dy.as_standard_layout();
    let k = g.patch_len();
    let wmat = w
        .view()
        .into_shape_with_order((g.out_channels, k))
        .expect("contiguous weight");
    let mut dw = Array2::<T>::zeros((g.out_channels, k));
    let mut db = Array1::<T>::zeros(g.out_channels);
    let mut dx = need_dx.then(|| Array4::<T>::zeros((batch, g.in_channels, g.in_h, g.in_w)));
    let mut cols = vec![T::zero(); k * oh * ow];
    let mut dcols = Array2::<T>::zeros((k, oh * ow));
    let img_len = g.in_channels * g.in_h * g.in_w;
    let xs = x.as_slice().expect("standard layout");
    for n in 0..batch {
        let dyn_ = dy.index_axis(Axis(0), n);
        let dymat = dyn_
            .into_shape_with_order((g.out_channels, oh * ow))
            .expect("contiguous grad");
        im2col(&xs[n * img_len..(n + 1) * img_len], &g, &mut cols);
        let cview = ArrayView2::from_shape((k, oh * ow), &cols).expect("cols");
        general_mat_mul(T::one(), &dymat, &cview.t(), T::one(), &mut dw);
        db += &dymat.sum_axis(Axis(1));
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(T::one(), &wmat.t(), &dymat, T::zero(), &mut dcols);
            let mut dxn = dx.index_axis_mut(Axis(0), n);
            col2im(
                dcols.as_slice().expect("contiguous"),
                &g,
                dxn.as_slice_mut().expect("contiguous"),
            );
        }
    }
    let dw = dw
        .into_shape_with_order((g.out_channels, g.in_channels, g.kernel_h, g.kernel_w))
        .expect("weight shape");
    Ok(ConvGrads { dx, dw, db })
}
