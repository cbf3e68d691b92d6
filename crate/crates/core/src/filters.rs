use ndarray::{Array2, ArrayView2};

/// Normalized 1-D Gaussian taps of length `2 * radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable blur with clamp-to-edge borders; output has the input shape.
pub fn blur_clamped(plane: ArrayView2<'_, f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let r = (kernel.len() / 2) as isize;
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * plane[[y, xx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[[yy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Separable filter without padding: output is `(h - k + 1, w - k + 1)`.
pub fn filter_valid(plane: ArrayView2<'_, f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            tmp[[y, x]] = kernel.iter().enumerate().map(|(i, t)| t * plane[[y, x + i]]).sum();
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = kernel.iter().enumerate().map(|(i, t)| t * tmp[[y + i, x]]).sum();
        }
    }
    out
}
