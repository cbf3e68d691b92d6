use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::filters::{filter_valid, gaussian_kernel};
use crate::tensor::{ensure_same_dims, ImageTensor};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_pair(op: &str, a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    ensure_same_dims(op, a, b)?;
    if !a.is_unit() || !b.is_unit() {
        return Err(Error::Domain(format!("{op} needs unit-interval images")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    psnr_with(a, b, 1.0, PSNR_CAP_DB)
}

pub fn psnr_with(a: &ImageTensor, b: &ImageTensor, peak: f64, cap: f64) -> Result<f64> {
    check_pair("psnr", a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(cap);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(cap))
}

/// Luma plane of every batch item (RGB) or the single channel itself.
fn luminance(t: &ImageTensor) -> Result<Vec<Array2<f64>>> {
    let d = t.data();
    match t.channels() {
        1 => Ok(d
            .axis_iter(Axis(0))
            .map(|item| item.index_axis(Axis(0), 0).to_owned())
            .collect()),
        3 => Ok(d
            .axis_iter(Axis(0))
            .map(|item| {
                let ch = |c: usize| item.index_axis(Axis(0), c);
                &ch(0) * LUMA[0] + &ch(1) * LUMA[1] + &ch(2) * LUMA[2]
            })
            .collect()),
        c => Err(Error::Dimension(format!("ssim needs 1 or 3 channels, got {c}"))),
    }
}

/// Mean SSIM over the luma plane with an 11x11 Gaussian window
/// (sigma 1.5), valid filtering and peak 1. Batch items are averaged.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let (h, w) = a.spatial();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let kernel = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (la, lb) = (luminance(a)?, luminance(b)?);
    let mut total = 0.0;
    for (x, y) in la.iter().zip(&lb) {
        let mu_x = filter_valid(x.view(), &kernel);
        let mu_y = filter_valid(y.view(), &kernel);
        let xx = filter_valid((x * x).view(), &kernel);
        let yy = filter_valid((y * y).view(), &kernel);
        let xy = filter_valid((x * y).view(), &kernel);
        let sum = Zip::from(&mu_x)
            .and(&mu_y)
            .and(&xx)
            .and(&yy)
            .and(&xy)
            .fold(0.0, |acc, &mx, &my, &xx, &yy, &xy| {
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                acc + ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
            });
        total += sum / mu_x.len() as f64;
    }
    Ok(total / la.len() as f64)
}
