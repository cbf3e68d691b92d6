use std::path::Path;

use serde::{Deserialize, Serialize};
use smgarn_autograd::Element;

use super::metrics::{psnr, ssim};
use crate::archive::write_atomic;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::Smgarn;
use crate::synthesis::SnowSample;
use crate::tensor::ImageTensor;

/// Anything that maps a snowy image to a restored one.
pub trait Restorer {
    fn restore(&self, snowy: &ImageTensor, gt_mask: Option<&ImageTensor>) -> Result<ImageTensor>;
}

impl<T: Element> Restorer for Smgarn<T> {
    fn restore(&self, snowy: &ImageTensor, gt_mask: Option<&ImageTensor>) -> Result<ImageTensor> {
        let mask = if self.config.guidance_case.needs_gt_mask_input() {
            match gt_mask {
                Some(m) => Some(m.repeat_channels(self.config.mask_channels)?),
                None => None,
            }
        } else {
            None
        };
        Ok(self.infer(snowy, mask.as_ref())?.image)
    }
}

/// Returns its input unchanged; scores the degraded images themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Restorer for Identity {
    fn restore(&self, snowy: &ImageTensor, _: Option<&ImageTensor>) -> Result<ImageTensor> {
        Ok(snowy.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    /// Sorted by id.
    pub per_image: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    /// Sorts rows by id and computes the means in that order, so the
    /// result does not depend on evaluation order.
    pub fn from_scores(dataset_id: impl Into<String>, mut per_image: Vec<ImageScore>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Dataset("no images were evaluated".into()));
        }
        per_image.sort_by(|a, b| a.id.cmp(&b.id));
        let n = per_image.len() as f64;
        let mean_psnr = per_image.iter().map(|s| s.psnr_db).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n;
        Ok(Self {
            dataset_id: dataset_id.into(),
            per_image,
            mean_psnr,
            mean_ssim,
        })
    }

    /// `mean_psnr/mean_ssim` with two decimals, e.g. `29.94/0.94`.
    pub fn summary(&self) -> String {
        format_summary(self.mean_psnr, self.mean_ssim)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.per_image {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "dataset_id": self.dataset_id,
            "count": self.per_image.len(),
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "summary": self.summary(),
        })
        .to_string()
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv()?.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.json")), self.summary_json().as_bytes())
    }
}

pub fn format_summary(psnr: f64, ssim: f64) -> String {
    format!("{psnr:.2}/{ssim:.2}")
}

pub fn score_sample(restorer: &dyn Restorer, sample: &SnowSample) -> Result<ImageScore> {
    let clean = sample
        .clean
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("sample {} has no ground truth", sample.id)))?;
    let pred = restorer.restore(&sample.snowy, sample.mask.as_ref())?;
    Ok(ImageScore {
        id: sample.id.clone(),
        psnr_db: psnr(&pred, clean)?,
        ssim: ssim(&pred, clean)?,
    })
}

/// Scores in-memory samples at native resolution.
pub fn evaluate_samples(restorer: &dyn Restorer, dataset_id: &str, samples: &[SnowSample]) -> Result<EvalReport> {
    let scores = samples
        .iter()
        .map(|s| score_sample(restorer, s))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(dataset_id, scores)
}

/// Scores every image of a dataset directory; the directory must have `gt/`.
pub fn evaluate(restorer: &dyn Restorer, dataset_dir: &Path) -> Result<EvalReport> {
    let ds = Dataset::open(dataset_dir)?;
    if !ds.has_gt() {
        return Err(Error::Dataset(format!(
            "{} has no gt/ directory to evaluate against",
            dataset_dir.display()
        )));
    }
    let mut scores = Vec::with_capacity(ds.len());
    for sample in ds.iter() {
        scores.push(score_sample(restorer, &sample?)?);
    }
    let id = dataset_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    EvalReport::from_scores(id, scores)
}
