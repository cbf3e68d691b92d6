//! Patch cropping, joint geometric augmentation and batch assembly.

use ndarray::{concatenate, s, Array4, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smgarn_autograd::Element;

use crate::error::{Error, Result};
use crate::synthesis::SnowSample;
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentFlags {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rot90: true,
        }
    }
}

impl AugmentFlags {
    pub const NONE: Self = Self {
        hflip: false,
        vflip: false,
        rot90: false,
    };
}

/// Generator for one `(seed, epoch, step)` position. Every batch can be
/// rebuilt from its position alone, independent of what ran before it.
pub fn position_rng(seed: u64, epoch: u64, step: u64, purpose: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, epoch, step, purpose].into_iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Same `size x size` window from every aligned tensor of the sample.
pub fn sample_patch<R: Rng>(sample: &SnowSample, size: usize, rng: &mut R) -> Result<SnowSample> {
    let (h, w) = sample.spatial();
    if size == 0 || size > h || size > w {
        return Err(Error::Size(format!(
            "sample {}: patch size {size} does not fit a {h}x{w} image",
            sample.id
        )));
    }
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    Ok(crop(sample, y0, x0, size))
}

pub fn crop(sample: &SnowSample, y0: usize, x0: usize, size: usize) -> SnowSample {
    sample.remap(|v| v.slice(s![.., .., y0..y0 + size, x0..x0 + size]).to_owned())
}

pub fn hflip(v: ArrayView4<'_, f64>) -> Array4<f64> {
    v.slice(s![.., .., .., ..;-1]).to_owned()
}

pub fn vflip(v: ArrayView4<'_, f64>) -> Array4<f64> {
    v.slice(s![.., .., ..;-1, ..]).to_owned()
}

/// Quarter turn counter-clockwise in the image plane.
pub fn rot90(v: ArrayView4<'_, f64>) -> Array4<f64> {
    let mut t = v;
    t.swap_axes(2, 3);
    t.slice_move(s![.., .., ..;-1, ..]).to_owned()
}

/// Random joint flips and quarter turns. With `rot90` enabled the sample
/// must be square.
pub fn augment<R: Rng>(sample: &SnowSample, flags: AugmentFlags, rng: &mut R) -> Result<SnowSample> {
    let (h, w) = sample.spatial();
    if flags.rot90 && h != w {
        return Err(Error::Size(format!(
            "sample {}: quarter-turn augmentation needs a square patch, got {h}x{w}",
            sample.id
        )));
    }
    let mut out = sample.clone();
    if flags.hflip && rng.random_bool(0.5) {
        out = out.remap(hflip);
    }
    if flags.vflip && rng.random_bool(0.5) {
        out = out.remap(vflip);
    }
    if flags.rot90 {
        for _ in 0..rng.random_range(0..4) {
            out = out.remap(rot90);
        }
    }
    Ok(out)
}

/// Stacked network inputs for one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub snowy: Array4<T>,
    pub clean: Array4<T>,
    pub mask: Option<Array4<T>>,
}

fn stack<T: Element>(items: &[&ImageTensor]) -> Result<Array4<T>> {
    let views: Vec<_> = items.iter().map(|t| t.view()).collect();
    let a = concatenate(Axis(0), &views).map_err(|e| Error::Dimension(format!("batch: {e}")))?;
    Ok(a.mapv(T::from_real))
}

/// Stacks already cropped samples. Masks are repeated to `mask_channels`
/// when stored single-channel and only gathered when `with_mask` is set.
pub fn collate<T: Element>(samples: &[SnowSample], with_mask: bool, mask_channels: usize) -> Result<Batch<T>> {
    let snowy: Vec<&ImageTensor> = samples.iter().map(|s| &s.snowy).collect();
    let clean = samples
        .iter()
        .map(|s| {
            s.clean
                .as_ref()
                .ok_or_else(|| Error::Dataset(format!("sample {} has no clean target", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = if with_mask {
        let masks = samples
            .iter()
            .map(|s| {
                s.mask
                    .as_ref()
                    .ok_or_else(|| Error::Dataset(format!("sample {} has no mask", s.id)))?
                    .repeat_channels(mask_channels)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(stack(&masks.iter().collect::<Vec<_>>())?)
    } else {
        None
    };
    Ok(Batch {
        snowy: stack(&snowy)?,
        clean: stack(&clean)?,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{procedural_scene, synth_sample, SynthParams};

    fn sample(h: usize, w: usize) -> SnowSample {
        synth_sample(
            "0000",
            &procedural_scene(h, w, 1),
            &SynthParams {
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn full_size_patch_is_identity() {
        let s = sample(20, 24);
        let mut rng = position_rng(0, 0, 0, 0);
        assert!(sample_patch(&s, 21, &mut rng).is_err());
        let s = sample(20, 20);
        assert_eq!(sample_patch(&s, 20, &mut rng).unwrap(), s);
    }

    #[test]
    fn quarter_turns_and_flips_are_invertible() {
        let s = sample(16, 16);
        let mut r = s.clone();
        for _ in 0..4 {
            r = r.remap(rot90);
        }
        assert_eq!(r, s);
        assert_eq!(s.remap(hflip).remap(hflip), s);
        assert_ne!(s.remap(rot90), s);
    }

    #[test]
    fn rot90_moves_top_left_to_bottom_left() {
        let a = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, y, x)| (2 * y + x) as f64);
        let r = rot90(a.view());
        assert_eq!(r[[0, 0, 1, 0]], a[[0, 0, 0, 0]]);
        assert_eq!(r[[0, 0, 0, 0]], a[[0, 0, 0, 1]]);
    }

    #[test]
    fn rot90_needs_square_input() {
        let s = sample(16, 20);
        let mut rng = position_rng(1, 2, 3, 4);
        assert!(matches!(
            augment(&s, AugmentFlags::default(), &mut rng),
            Err(Error::Size(_))
        ));
        assert!(augment(
            &s,
            AugmentFlags {
                rot90: false,
                ..Default::default()
            },
            &mut rng
        )
        .is_ok());
    }

    #[test]
    fn position_rng_is_a_function_of_position() {
        let a: u64 = position_rng(1, 2, 3, 0).random();
        assert_eq!(a, position_rng(1, 2, 3, 0).random::<u64>());
        assert_ne!(a, position_rng(1, 2, 4, 0).random::<u64>());
    }
}
