//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance runner. Nothing here calls into the convolution or
//! composition code under test.

#![allow(dead_code)]

use ndarray::{Array, Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smgarn::autograd::gradcheck::{check_gradients, GradCheckReport};
use smgarn::autograd::{Graph, ParamStore, Var};
use smgarn::nn::ParamSpec;
use smgarn::synthesis::{procedural_scene, synth_sample, SnowSample, SynthParams};
use smgarn::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    Array::from_iter((0..n).map(|_| rng.random_range(lo..hi)))
        .into_shape_with_order(IxDyn(shape))
        .unwrap()
}

pub fn uniform4(shape: (usize, usize, usize, usize), rng: &mut impl Rng, lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

/// Direct nested-loop convolution with zero padding.
pub fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, b: Option<&[f64]>, pad: usize) -> Array4<f64> {
    let (n, c, h, wd) = x.dim();
    let (o, ci, kh, kw) = w.dim();
    assert_eq!(c, ci);
    let (oh, ow) = (h + 2 * pad + 1 - kh, wd + 2 * pad + 1 - kw);
    let mut out = Array4::zeros((n, o, oh, ow));
    for bi in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y + ky) as isize - pad as isize;
                                let ix = (xx + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w[[oc, ic, ky, kx]] * x[[bi, ic, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    out[[bi, oc, y, xx]] = acc;
                }
            }
        }
    }
    out
}

/// `(c, c, k, k)` kernel that copies every channel scaled by `gain`.
pub fn identity_kernel(c: usize, k: usize, gain: f64) -> Array4<f64> {
    Array4::from_shape_fn((c, c, k, k), |(o, i, y, x)| {
        if o == i && y == k / 2 && x == k / 2 {
            gain
        } else {
            0.0
        }
    })
}

/// Parameters drawn from `U(-scale, scale)`, biases included, so no term
/// is trivially zero during gradient checks.
pub fn random_params(specs: &[ParamSpec], rng: &mut impl Rng, scale: f64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for s in specs {
        store.insert(s.name.clone(), uniform(&s.shape, rng, -scale, scale));
    }
    store
}

pub fn get4(store: &ParamStore<f64>, name: &str) -> Array4<f64> {
    store.get(name).unwrap().clone().into_dimensionality().unwrap()
}

pub fn get1(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.get(name).unwrap().iter().copied().collect()
}

/// Gradient check of `sum(module(x) * proj)` over every parameter tensor,
/// at least `min_samples` entries in total.
pub fn gradcheck_module(
    specs: &[ParamSpec],
    input_shape: &[usize],
    out_shape: &[usize],
    seed: u64,
    min_samples: usize,
    module: impl Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
) -> GradCheckReport {
    let mut r = rng(seed);
    let mut store = random_params(specs, &mut r, 0.4);
    let x = uniform(input_shape, &mut r, -1.0, 1.0);
    let proj = uniform(out_shape, &mut r, -1.0, 1.0);
    let samples = min_samples.max(2 * specs.len());
    check_gradients::<smgarn::Error, _, _>(&mut store, &[], samples, 1e-5, &mut r, |g| {
        let xv = g.input(x.clone());
        let y = module(g, xv)?;
        let p = g.input(proj.clone());
        let prod = g.mul(y, p)?;
        Ok(g.sum(prod))
    })
    .unwrap()
}

/// `n` synthetic pairs of `size`x`size` scenes, seeds `seed..seed + n`.
pub fn toy_samples(n: usize, size: usize, seed: u64) -> Vec<SnowSample> {
    (0..n as u64)
        .map(|i| {
            let s = seed + i;
            let clean = procedural_scene(size, size, s);
            synth_sample(format!("{:04}", i + 1), &clean, &SynthParams::default().with_seed(s)).unwrap()
        })
        .collect()
}
