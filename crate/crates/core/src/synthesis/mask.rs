//! Parametric snow particle renderer producing the location mask `R` and
//! the per-particle opacity map `Z`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::SynthParams;
use crate::error::{Error, Result};

pub const MIN_MASK_SIDE: usize = 16;

/// Range of `mean(R)` for default parameters at 128x128, measured over
/// seeds 0..100 (observed 0.0064 to 0.0637).
pub const DEFAULT_COVERAGE_BAND: (f64, f64) = (0.005, 0.08);

/// Particle counts in [`SynthParams`] are per `REFERENCE_SIDE^2` pixels and
/// scale with image area.
pub const REFERENCE_SIDE: usize = 128;

/// Stream id for particle sampling; other latents use other streams of
/// the same seed so changing one never perturbs the other.
pub(crate) const PARTICLE_STREAM: u64 = 1;

const STREAK_HALF_WIDTH: f64 = 0.6;

#[derive(Clone, Debug)]
enum Particle {
    Flake {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        cos: f64,
        sin: f64,
    },
    Streak {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
}

impl Particle {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Particle::Flake { cx, cy, rx, ry, .. } => {
                let r = rx.max(ry) + 1.0;
                (cx - r, cy - r, cx + r, cy + r)
            }
            Particle::Streak { x0, y0, x1, y1 } => {
                let m = STREAK_HALF_WIDTH + 1.0;
                (x0.min(x1) - m, y0.min(y1) - m, x0.max(x1) + m, y0.max(y1) + m)
            }
        }
    }

    /// Anti-aliased coverage of the pixel centred at `(px, py)`.
    fn coverage(&self, px: f64, py: f64) -> f64 {
        match *self {
            Particle::Flake {
                cx,
                cy,
                rx,
                ry,
                cos,
                sin,
            } => {
                let (dx, dy) = (px - cx, py - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                let d = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                // normalized distance scaled back to pixels at the rim
                (0.5 - (d - 1.0) * rx.min(ry)).clamp(0.0, 1.0)
            }
            Particle::Streak { x0, y0, x1, y1 } => {
                let (ex, ey) = (x1 - x0, y1 - y0);
                let len2 = ex * ex + ey * ey;
                let t = if len2 > 0.0 {
                    (((px - x0) * ex + (py - y0) * ey) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (x0 + t * ex - px, y0 + t * ey - py);
                let dist = (qx * qx + qy * qy).sqrt();
                (STREAK_HALF_WIDTH + 0.5 - dist).clamp(0.0, 1.0)
            }
        }
    }
}

fn sample_count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize), area_scale: f64) -> usize {
    let n = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    (n as f64 * area_scale).round() as usize
}

pub(crate) fn sample_real(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Renders `(R, Z)` as `(H, W)` planes. Deterministic in `(params, h, w)`.
pub fn render_snow_mask(params: &SynthParams, h: usize, w: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    params.validate()?;
    if h < MIN_MASK_SIDE || w < MIN_MASK_SIDE {
        return Err(Error::Size(format!(
            "mask must be at least {MIN_MASK_SIDE}x{MIN_MASK_SIDE}, got {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(PARTICLE_STREAM);

    let area_scale = (h * w) as f64 / (REFERENCE_SIDE * REFERENCE_SIDE) as f64;
    let mut particles: Vec<(Particle, f64)> = Vec::new();
    for _ in 0..sample_count(&mut rng, params.flake_count_range, area_scale) {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let rx = sample_real(&mut rng, params.flake_radius_range);
        let ry = sample_real(&mut rng, params.flake_radius_range);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let opacity = sample_real(&mut rng, params.opacity_range);
        particles.push((
            Particle::Flake {
                cx,
                cy,
                rx,
                ry,
                cos: theta.cos(),
                sin: theta.sin(),
            },
            opacity,
        ));
    }
    for _ in 0..sample_count(&mut rng, params.streak_count_range, area_scale) {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let len = sample_real(&mut rng, params.streak_length_range);
        let angle = sample_real(&mut rng, params.streak_angle_range).to_radians();
        let (hx, hy) = (0.5 * len * angle.cos(), 0.5 * len * angle.sin());
        let opacity = sample_real(&mut rng, params.opacity_range);
        particles.push((
            Particle::Streak {
                x0: cx - hx,
                y0: cy - hy,
                x1: cx + hx,
                y1: cy + hy,
            },
            opacity,
        ));
    }

    let mut r = Array2::<f64>::zeros((h, w));
    let mut z = Array2::<f64>::zeros((h, w));
    for (p, opacity) in &particles {
        let (bx0, by0, bx1, by1) = p.bounds();
        let x_lo = bx0.floor().max(0.0) as usize;
        let y_lo = by0.floor().max(0.0) as usize;
        let x_hi = (bx1.ceil().max(0.0) as usize).min(w);
        let y_hi = (by1.ceil().max(0.0) as usize).min(h);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let mut cov = p.coverage(x as f64 + 0.5, y as f64 + 0.5);
                if params.binary_mask {
                    cov = if cov >= 0.5 { 1.0 } else { 0.0 };
                }
                // strongest particle wins the pixel
                if cov > 0.0 && (cov > r[[y, x]] || (cov == r[[y, x]] && *opacity > z[[y, x]])) {
                    r[[y, x]] = cov;
                    z[[y, x]] = *opacity;
                }
            }
        }
    }
    Ok((r, z))
}
