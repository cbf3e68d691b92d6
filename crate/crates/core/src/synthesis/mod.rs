//! Synthetic snow: formation model, latent map sampling and paired samples.

mod compose;
mod mask;
mod params;
mod scene;

pub use compose::{compose_snowy, compose_veilfree, invert_veilfree, DEFAULT_INVERT_EPS};
pub use mask::{render_snow_mask, DEFAULT_COVERAGE_BAND, MIN_MASK_SIDE, REFERENCE_SIDE};
pub use params::SynthParams;
pub use scene::procedural_scene;

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::{blur_clamped, gaussian_kernel};
use crate::tensor::ImageTensor;
use mask::sample_real;

const TRANSMISSION_STREAM: u64 = 2;
const ATMOSPHERE_STREAM: u64 = 3;
const CHROMA_STREAM: u64 = 4;

/// Latent maps of the formation model for one `(1, 3, H, W)` image.
/// `r`, `z`, `t` are single-channel; `c`, `a` are RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct SnowLatents {
    pub r: ImageTensor,
    pub z: ImageTensor,
    pub c: ImageTensor,
    pub t: ImageTensor,
    pub a: ImageTensor,
}

impl SnowLatents {
    pub const NAMES: [&'static str; 5] = ["R", "Z", "C", "T", "A"];

    pub fn get(&self, name: &str) -> Option<&ImageTensor> {
        match name {
            "R" => Some(&self.r),
            "Z" => Some(&self.z),
            "C" => Some(&self.c),
            "T" => Some(&self.t),
            "A" => Some(&self.a),
            _ => None,
        }
    }

    /// Validates shapes against a `(1, 3, h, w)` image.
    pub fn check(&self, h: usize, w: usize) -> Result<()> {
        for (name, t, ch) in [
            ("R", &self.r, 1),
            ("Z", &self.z, 1),
            ("C", &self.c, 3),
            ("T", &self.t, 1),
            ("A", &self.a, 3),
        ] {
            if t.dim() != (1, ch, h, w) {
                return Err(Error::Dimension(format!(
                    "latent {name} has shape {:?}, expected {:?}",
                    t.dim(),
                    (1, ch, h, w)
                )));
            }
            if !t.is_unit() {
                return Err(Error::Domain(format!("latent {name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Applies the same value-preserving spatial transform to every map.
    pub fn remap(&self, f: impl Fn(ndarray::ArrayView4<'_, f64>) -> Array4<f64>) -> Self {
        Self {
            r: self.r.remap(&f),
            z: self.z.remap(&f),
            c: self.c.remap(&f),
            t: self.t.remap(&f),
            a: self.a.remap(&f),
        }
    }

    /// Runs the full formation model over `clean`.
    pub fn compose(&self, clean: &ImageTensor) -> Result<ImageTensor> {
        let k = compose_veilfree(clean, &self.r, &self.z, &self.c)?;
        compose_snowy(&k, &self.t, &self.a)
    }
}

/// Paired record. `clean` and `mask` are absent for inference-only or
/// real-world data; `latents` only exist for synthetic samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SnowSample {
    pub id: String,
    pub snowy: ImageTensor,
    pub clean: Option<ImageTensor>,
    pub mask: Option<ImageTensor>,
    pub latents: Option<SnowLatents>,
}

impl SnowSample {
    pub fn new(
        id: impl Into<String>,
        snowy: ImageTensor,
        clean: Option<ImageTensor>,
        mask: Option<ImageTensor>,
        latents: Option<SnowLatents>,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            snowy,
            clean,
            mask,
            latents,
        };
        s.check_shapes()?;
        Ok(s)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (b, c, h, w) = self.snowy.dim();
        if b != 1 || c != 3 {
            return Err(Error::Dimension(format!(
                "sample {}: snowy image must be (1, 3, H, W), got {:?}",
                self.id,
                self.snowy.dim()
            )));
        }
        if let Some(clean) = &self.clean {
            if clean.dim() != (1, 3, h, w) {
                return Err(Error::Dimension(format!(
                    "sample {}: clean image {:?} does not match snowy {:?}",
                    self.id,
                    clean.dim(),
                    self.snowy.dim()
                )));
            }
        }
        if let Some(mask) = &self.mask {
            if mask.batch() != 1 || mask.spatial() != (h, w) {
                return Err(Error::Dimension(format!(
                    "sample {}: mask {:?} does not match snowy {:?}",
                    self.id,
                    mask.dim(),
                    self.snowy.dim()
                )));
            }
        }
        if let Some(l) = &self.latents {
            l.check(h, w)?;
        }
        Ok(())
    }

    /// Has both the clean target and the mask.
    pub fn is_complete(&self) -> bool {
        self.clean.is_some() && self.mask.is_some()
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.snowy.spatial()
    }

    /// Largest deviation between `snowy` and the formation model applied to
    /// `clean`; `None` without latents or clean image.
    pub fn composition_error(&self) -> Result<Option<f64>> {
        match (&self.latents, &self.clean) {
            (Some(l), Some(clean)) => Ok(Some(l.compose(clean)?.max_abs_diff(&self.snowy)?)),
            _ => Ok(None),
        }
    }

    /// Applies one value-preserving spatial transform to every aligned tensor.
    pub fn remap(&self, f: impl Fn(ndarray::ArrayView4<'_, f64>) -> Array4<f64>) -> Self {
        Self {
            id: self.id.clone(),
            snowy: self.snowy.remap(&f),
            clean: self.clean.as_ref().map(|t| t.remap(&f)),
            mask: self.mask.as_ref().map(|t| t.remap(&f)),
            latents: self.latents.as_ref().map(|l| l.remap(&f)),
        }
    }
}

fn plane_tensor(plane: Array2<f64>) -> Result<ImageTensor> {
    let (h, w) = plane.dim();
    ImageTensor::unit_clamped(plane.into_shape_with_order((1, 1, h, w)).expect("same size"))
}

/// Smooth low-frequency field: blurred uniform noise rescaled into `range`.
fn transmission_field(params: &SynthParams, h: usize, w: usize) -> Array2<f64> {
    let (lo, hi) = params.transmission_range;
    if lo == hi {
        return Array2::from_elem((h, w), lo);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(TRANSMISSION_STREAM);
    let noise = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
    let sigma = (h.min(w) as f64 / 8.0).max(2.0);
    let radius = (3.0 * sigma).ceil() as usize;
    let smooth = blur_clamped(noise.view(), &gaussian_kernel(sigma, radius));
    let (mn, mx) = smooth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = mx - mn;
    smooth.mapv(|v| {
        let u = if span > 0.0 { (v - mn) / span } else { 0.5 };
        (lo + u * (hi - lo)).clamp(lo, hi)
    })
}

fn rgb_constant(values: [f64; 3], h: usize, w: usize) -> Result<ImageTensor> {
    ImageTensor::unit(Array4::from_shape_fn((1, 3, h, w), |(_, c, _, _)| values[c]))
}

/// Samples every latent map for an `h x w` image.
pub fn sample_latents(params: &SynthParams, h: usize, w: usize) -> Result<SnowLatents> {
    let (r, z) = render_snow_mask(params, h, w)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(ATMOSPHERE_STREAM);
    let gray = sample_real(&mut rng, params.atmospheric_range);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(CHROMA_STREAM);
    let chroma: [f64; 3] = std::array::from_fn(|_| 1.0 - params.chroma_jitter * rng.random::<f64>());

    Ok(SnowLatents {
        r: plane_tensor(r)?,
        z: plane_tensor(z)?,
        c: rgb_constant(chroma, h, w)?,
        t: plane_tensor(transmission_field(params, h, w))?,
        a: rgb_constant([gray; 3], h, w)?,
    })
}

/// Synthesizes one paired sample over a `(1, 3, H, W)` clean image; the
/// ground-truth mask is `R`.
pub fn synth_sample(id: impl Into<String>, clean: &ImageTensor, params: &SynthParams) -> Result<SnowSample> {
    if clean.batch() != 1 || clean.channels() != 3 {
        return Err(Error::Dimension(format!(
            "clean image must be (1, 3, H, W), got {:?}",
            clean.dim()
        )));
    }
    if !clean.is_unit() {
        return Err(Error::Domain("clean image must lie in [0, 1]".into()));
    }
    let (h, w) = clean.spatial();
    let latents = sample_latents(params, h, w)?;
    let snowy = latents.compose(clean)?;
    SnowSample::new(id, snowy, Some(clean.clone()), Some(latents.r.clone()), Some(latents))
}

/// Mean of `R` over an image; used to characterise snow density.
pub fn mask_coverage(r: &ImageTensor) -> f64 {
    r.data().mean().unwrap_or(0.0)
}
