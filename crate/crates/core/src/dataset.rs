//! Paired dataset directories and PNG conversion.
//!
//! ```text
//! root/snowy/<id>.png      8-bit RGB, required
//! root/gt/<id>.png         8-bit RGB, optional directory
//! root/mask/<id>.png       8-bit grayscale, optional directory
//! root/latents/<id>.tensors  archive with f64 arrays R, Z, C, T, A (optional)
//! ```
//!
//! Masks are single-channel values in `[0, 1]`, stored as gray levels.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array4, ArrayD};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::synthesis::{SnowLatents, SnowSample};
use crate::tensor::ImageTensor;

pub const SNOWY_DIR: &str = "snowy";
pub const GT_DIR: &str = "gt";
pub const MASK_DIR: &str = "mask";
pub const LATENTS_DIR: &str = "latents";
pub const LATENTS_EXT: &str = "tensors";

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads any PNG as `(1, 3, H, W)` RGB in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = Array4::from_shape_fn((1, 3, h as usize, w as usize), |(_, c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    });
    ImageTensor::unit(data)
}

/// Reads any PNG as a `(1, 1, H, W)` gray plane in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = Array4::from_shape_fn((1, 1, h as usize, w as usize), |(_, _, y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    });
    ImageTensor::unit(data)
}

/// Writes the first batch item of a 3-channel tensor as 8-bit RGB.
pub fn write_rgb(path: &Path, t: &ImageTensor) -> Result<()> {
    let (_, c, h, w) = t.dim();
    if c != 3 {
        return Err(Error::Dimension(format!("RGB output needs 3 channels, got {c}")));
    }
    let d = t.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            quantize(d[[0, 0, y, x]]),
            quantize(d[[0, 1, y, x]]),
            quantize(d[[0, 2, y, x]]),
        ])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes channel 0 of the first batch item as 8-bit grayscale.
pub fn write_gray(path: &Path, t: &ImageTensor) -> Result<()> {
    let (_, _, h, w) = t.dim();
    let d = t.data();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(d[[0, 0, y as usize, x as usize]])])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn latents_archive(l: &SnowLatents) -> Archive {
    let mut ar = Archive::new();
    ar.set_meta("kind", "snow_latents");
    for name in SnowLatents::NAMES {
        let t = l.get(name).expect("known latent");
        ar.push(name, &t.data().clone().into_dyn());
    }
    ar
}

fn latents_from_archive(ar: &Archive, path: &Path) -> Result<SnowLatents> {
    let get = |name: &str| -> Result<ImageTensor> {
        let a: ArrayD<f64> = ar
            .get(name)
            .ok_or_else(|| Error::Format(format!("{}: missing latent `{name}`", path.display())))?
            .to_array();
        let a = a
            .into_dimensionality::<ndarray::Ix4>()
            .map_err(|_| Error::Format(format!("{}: latent `{name}` is not rank 4", path.display())))?;
        ImageTensor::unit(a)
    };
    Ok(SnowLatents {
        r: get("R")?,
        z: get("Z")?,
        c: get("C")?,
        t: get("T")?,
        a: get("A")?,
    })
}

/// Writes samples in the directory layout above. `gt/`, `mask/` and
/// `latents/` are only created when at least one sample carries them.
pub fn write_dataset(samples: &[SnowSample], dir: &Path) -> Result<()> {
    let snowy_dir = dir.join(SNOWY_DIR);
    create_dir(&snowy_dir)?;
    for s in samples {
        s.check_shapes()?;
        write_rgb(&snowy_dir.join(format!("{}.png", s.id)), &s.snowy)?;
        if let Some(clean) = &s.clean {
            let d = dir.join(GT_DIR);
            create_dir(&d)?;
            write_rgb(&d.join(format!("{}.png", s.id)), clean)?;
        }
        if let Some(mask) = &s.mask {
            let d = dir.join(MASK_DIR);
            create_dir(&d)?;
            write_gray(&d.join(format!("{}.png", s.id)), mask)?;
        }
        if let Some(l) = &s.latents {
            let d = dir.join(LATENTS_DIR);
            create_dir(&d)?;
            latents_archive(l).save(&d.join(format!("{}.{LATENTS_EXT}", s.id)))?;
        }
    }
    Ok(())
}

/// Lazily loaded dataset directory; ids come from `snowy/` in sorted order.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    ids: Vec<String>,
    has_gt: bool,
    has_mask: bool,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let snowy_dir = root.join(SNOWY_DIR);
        if !snowy_dir.is_dir() {
            return Err(Error::Dataset(format!("{} is not a directory", snowy_dir.display())));
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&snowy_dir).map_err(|e| Error::io(&snowy_dir, e))? {
            let path = entry.map_err(|e| Error::io(&snowy_dir, e))?.path();
            let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if let (true, Some(stem)) = (is_png, path.file_stem()) {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(Self {
            root: root.to_path_buf(),
            ids,
            has_gt: root.join(GT_DIR).is_dir(),
            has_mask: root.join(MASK_DIR).is_dir(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_gt(&self) -> bool {
        self.has_gt
    }

    pub fn has_mask(&self) -> bool {
        self.has_mask
    }

    fn paired(&self, sub: &str, id: &str, ext: &str) -> Result<PathBuf> {
        let path = self.root.join(sub).join(format!("{id}.{ext}"));
        if !path.is_file() {
            return Err(Error::Pairing {
                id: id.to_string(),
                reason: format!("missing {}", path.display()),
            });
        }
        Ok(path)
    }

    pub fn load(&self, id: &str) -> Result<SnowSample> {
        let snowy = read_rgb(&self.root.join(SNOWY_DIR).join(format!("{id}.png")))?;
        let dims = snowy.spatial();
        let check = |what: &str, t: &ImageTensor| -> Result<()> {
            if t.spatial() != dims {
                return Err(Error::Pairing {
                    id: id.to_string(),
                    reason: format!("{what} is {:?} but snowy is {:?}", t.spatial(), dims),
                });
            }
            Ok(())
        };
        let clean = if self.has_gt {
            let t = read_rgb(&self.paired(GT_DIR, id, "png")?)?;
            check("gt", &t)?;
            Some(t)
        } else {
            None
        };
        let mask = if self.has_mask {
            let t = read_gray(&self.paired(MASK_DIR, id, "png")?)?;
            check("mask", &t)?;
            Some(t)
        } else {
            None
        };
        let lpath = self.root.join(LATENTS_DIR).join(format!("{id}.{LATENTS_EXT}"));
        let latents = if lpath.is_file() {
            let l = latents_from_archive(&Archive::load(&lpath)?, &lpath)?;
            l.check(dims.0, dims.1).map_err(|e| Error::Pairing {
                id: id.to_string(),
                reason: e.to_string(),
            })?;
            Some(l)
        } else {
            None
        };
        SnowSample::new(id, snowy, clean, mask, latents)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<SnowSample>> + '_ {
        self.ids.iter().map(|id| self.load(id))
    }

    pub fn load_all(&self) -> Result<Vec<SnowSample>> {
        self.iter().collect()
    }
}

/// Loads every sample under `dir`, sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<SnowSample>> {
    Dataset::open(dir)?.load_all()
}

/// Zero-padded decimal id, at least four digits.
pub fn format_id(index: usize, count: usize) -> String {
    let width = count.saturating_sub(1).max(1).to_string().len().max(4);
    format!("{index:0width$}")
}
