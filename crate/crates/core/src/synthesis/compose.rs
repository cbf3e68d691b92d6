//! Snow formation model and its analytic inverse.
//!
//! `K = J (1 - Z R) + C Z R` places snow particles over the scene, and
//! `I = K T + A (1 - T)` adds the veiling effect. `R`, `Z` and `T` are
//! single-channel and broadcast across the colour channels.

use ndarray::{Array4, Zip};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const DEFAULT_INVERT_EPS: f64 = 0.05;

fn check_unit(name: &str, t: &ImageTensor) -> Result<()> {
    if !t.is_unit() {
        return Err(Error::Domain(format!("{name} must be a unit-interval tensor")));
    }
    Ok(())
}

/// `image` is (B, C, H, W); every `plane` must be (B, 1, H, W) and every
/// `color` must equal `image` in shape.
fn check_shapes(
    image: (&str, &ImageTensor),
    planes: &[(&str, &ImageTensor)],
    colors: &[(&str, &ImageTensor)],
) -> Result<()> {
    let (b, c, h, w) = image.1.dim();
    for (name, p) in planes {
        if p.dim() != (b, 1, h, w) {
            return Err(Error::Dimension(format!(
                "{name} has shape {:?}, expected {:?}",
                p.dim(),
                (b, 1, h, w)
            )));
        }
    }
    for (name, p) in colors {
        if p.dim() != (b, c, h, w) {
            return Err(Error::Dimension(format!(
                "{name} has shape {:?}, expected {:?} like {}",
                p.dim(),
                (b, c, h, w),
                image.0
            )));
        }
    }
    check_unit(image.0, image.1)?;
    for (name, p) in planes.iter().chain(colors) {
        check_unit(name, p)?;
    }
    Ok(())
}

/// Elementwise product `Z * R`, the per-pixel snow occlusion weight.
fn occlusion(r: &ImageTensor, z: &ImageTensor) -> Array4<f64> {
    r.data() * z.data()
}

pub fn compose_veilfree(clean: &ImageTensor, r: &ImageTensor, z: &ImageTensor, c: &ImageTensor) -> Result<ImageTensor> {
    check_shapes(("J", clean), &[("R", r), ("Z", z)], &[("C", c)])?;
    let zr = occlusion(r, z);
    let mut k = clean.data().clone();
    let (_, channels, _, _) = k.dim();
    for ch in 0..channels {
        let mut kc = k.slice_mut(ndarray::s![.., ch..ch + 1, .., ..]);
        let cc = c.data().slice(ndarray::s![.., ch..ch + 1, .., ..]);
        Zip::from(&mut kc).and(&cc).and(&zr).for_each(|k, &c, &zr| {
            *k = (*k * (1.0 - zr) + c * zr).clamp(0.0, 1.0);
        });
    }
    ImageTensor::unit(k)
}

pub fn compose_snowy(k: &ImageTensor, t: &ImageTensor, a: &ImageTensor) -> Result<ImageTensor> {
    check_shapes(("K", k), &[("T", t)], &[("A", a)])?;
    let mut out = k.data().clone();
    let channels = out.dim().1;
    for ch in 0..channels {
        let mut oc = out.slice_mut(ndarray::s![.., ch..ch + 1, .., ..]);
        let ac = a.data().slice(ndarray::s![.., ch..ch + 1, .., ..]);
        Zip::from(&mut oc).and(&ac).and(t.data()).for_each(|o, &a, &t| {
            *o = (*o * t + a * (1.0 - t)).clamp(0.0, 1.0);
        });
    }
    ImageTensor::unit(out)
}

/// Recovers `J` from `K`; fails where `Z R > 1 - eps` since the scene is
/// (nearly) fully occluded there.
pub fn invert_veilfree(
    k: &ImageTensor,
    r: &ImageTensor,
    z: &ImageTensor,
    c: &ImageTensor,
    eps: f64,
) -> Result<ImageTensor> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Parameter(format!("eps must lie in [0, 1), got {eps}")));
    }
    check_shapes(("K", k), &[("R", r), ("Z", z)], &[("C", c)])?;
    let zr = occlusion(r, z);
    let count = zr.iter().filter(|&&v| v > 1.0 - eps).count();
    if count > 0 {
        return Err(Error::Singularity { count });
    }
    let mut j = k.data().clone();
    let channels = j.dim().1;
    for ch in 0..channels {
        let mut jc = j.slice_mut(ndarray::s![.., ch..ch + 1, .., ..]);
        let cc = c.data().slice(ndarray::s![.., ch..ch + 1, .., ..]);
        Zip::from(&mut jc).and(&cc).and(&zr).for_each(|j, &c, &zr| {
            *j = ((*j - c * zr) / (1.0 - zr)).clamp(0.0, 1.0);
        });
    }
    ImageTensor::unit(j)
}
