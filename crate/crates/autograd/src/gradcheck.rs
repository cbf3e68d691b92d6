//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward closure, so it stays
//! independent of the backward implementation it verifies.

use ndarray::IxDyn;
use rand::Rng;

use crate::error::AutogradError;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: Vec<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Draws rejected because the stencil straddled a kink.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients
/// from producing 0/0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// One-sided slopes that disagree by more than this fraction mark a
/// non-differentiable point (ReLU, abs, clamp) inside `[x - h, x + h]`.
pub const KINK_TOLERANCE: f64 = 1e-3;
const MAX_REDRAWS: usize = 50;

/// Compares the tape gradient with central differences of step `h` at
/// `samples` parameter entries. Parameters are visited round-robin over
/// `names` (all parameters when empty) so every group gets coverage; the
/// entry within each tensor is drawn from `rng`. Entries whose stencil
/// crosses a kink are redrawn, since central differences do not estimate a
/// derivative there.
pub fn check_gradients<E, F, R>(
    store: &mut ParamStore<f64>,
    names: &[String],
    samples: usize,
    h: f64,
    rng: &mut R,
    forward: F,
) -> Result<GradCheckReport, E>
where
    E: From<AutogradError>,
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, E>,
    R: Rng,
{
    let names: Vec<String> = if names.is_empty() {
        store.names().map(str::to_string).collect()
    } else {
        names.to_vec()
    };
    if names.is_empty() {
        return Ok(GradCheckReport {
            entries: Vec::new(),
            kinks_skipped: 0,
        });
    }

    let grads = {
        let mut g = Graph::new(&*store);
        let loss = forward(&mut g)?;
        g.backward(loss)?
    };

    let eval = |store: &ParamStore<f64>| -> Result<f64, E> {
        let mut g = Graph::new(store);
        let loss = forward(&mut g)?;
        Ok(g.scalar(loss)?)
    };

    let base = eval(store)?;
    let mut entries = Vec::with_capacity(samples);
    let mut kinks_skipped = 0;
    for i in 0..samples {
        let name = &names[i % names.len()];
        let shape = store
            .get(name)
            .ok_or_else(|| AutogradError::MissingParam(name.clone()))?
            .shape()
            .to_vec();
        let len: usize = shape.iter().product();
        for attempt in 0..=MAX_REDRAWS {
            let mut rem = rng.random_range(0..len);
            let mut index = vec![0; shape.len()];
            for d in (0..shape.len()).rev() {
                index[d] = rem % shape[d];
                rem /= shape[d];
            }
            let ix = IxDyn(&index);
            let orig = store.get(name).expect("checked")[&ix];
            store.get_mut(name).expect("checked")[&ix] = orig + h;
            let plus = eval(store)?;
            store.get_mut(name).expect("checked")[&ix] = orig - h;
            let minus = eval(store)?;
            store.get_mut(name).expect("checked")[&ix] = orig;

            let (right, left) = ((plus - base) / h, (base - minus) / h);
            if relative_error(right, left) > KINK_TOLERANCE && attempt < MAX_REDRAWS {
                kinks_skipped += 1;
                continue;
            }
            let analytic = grads.get(name).map(|g| g[&ix]).unwrap_or(0.0);
            let numeric = (plus - minus) / (2.0 * h);
            entries.push(GradCheckEntry {
                param: name.clone(),
                index,
                analytic,
                numeric,
                rel_err: relative_error(analytic, numeric),
            });
            break;
        }
    }
    Ok(GradCheckReport { entries, kinks_skipped })
}
