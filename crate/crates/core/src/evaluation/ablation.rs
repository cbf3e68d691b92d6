//! Named model variants, study grids, and the sweep that trains and scores
//! each grid point under one budget.

use std::fmt::Write as _;

use serde::Serialize;

use super::report::{evaluate_samples, EvalReport};
use crate::error::{Error, Result};
use crate::gf_net::{Backbone, GuidanceMode};
use crate::model::{param_count, GuidanceCase, ModelConfig};
use crate::reconstruct_net::{AggMode, ScaleMode};
use crate::synthesis::SnowSample;
use crate::training::{TrainConfig, Trainer};

/// A named edit applied to a base configuration.
pub struct Variant {
    pub name: &'static str,
    pub description: &'static str,
    apply: fn(&mut ModelConfig),
}

impl std::fmt::Debug for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Variant").field("name", &self.name).finish()
    }
}

impl Variant {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        (self.apply)(&mut cfg);
        cfg
    }
}

macro_rules! variant {
    ($name:literal, $desc:literal, |$c:ident| $body:expr) => {
        Variant {
            name: $name,
            description: $desc,
            apply: |$c: &mut ModelConfig| $body,
        }
    };
}

pub static VARIANTS: &[Variant] = &[
    variant!(
        "masknet_baseline",
        "plain convs in place of both attention units",
        |c| {
            c.use_sa = false;
            c.use_ca = false;
        }
    ),
    variant!("masknet_sa", "self-pixel attention only", |c| {
        c.use_sa = true;
        c.use_ca = false;
    }),
    variant!("masknet_ca", "cross-pixel attention only", |c| {
        c.use_sa = false;
        c.use_ca = true;
    }),
    variant!("masknet_casa", "both attention units", |c| {
        c.use_sa = true;
        c.use_ca = true;
    }),
    variant!("tbl4_case1", "no mask network", |c| c.guidance_case =
        GuidanceCase::NoMaskNet),
    variant!("tbl4_case2", "mask network without mask loss", |c| c.guidance_case =
        GuidanceCase::NoMaskLoss),
    variant!("tbl4_case3", "mask network with mask loss", |c| c.guidance_case =
        GuidanceCase::Full),
    variant!("tbl4_case4", "ground-truth mask guidance", |c| c.guidance_case =
        GuidanceCase::GtMask),
    variant!("tbl5_case1", "eight-conv stack over concatenated features", |c| {
        c.gf_backbone = Backbone::ConvStack;
        c.guidance_mode = GuidanceMode::Concat;
    }),
    variant!("tbl5_case2", "eight-conv stack over the feature difference", |c| {
        c.gf_backbone = Backbone::ConvStack;
        c.guidance_mode = GuidanceMode::Residual;
    }),
    variant!("tbl5_case3", "residual units with concatenation merge", |c| {
        c.gf_backbone = Backbone::Adaptive;
        c.guidance_mode = GuidanceMode::Concat;
    }),
    variant!("tbl5_case4", "residual units with adaptive residuals", |c| {
        c.gf_backbone = Backbone::Adaptive;
        c.guidance_mode = GuidanceMode::Residual;
    }),
    variant!("marn_ss_sa", "single-scale branches, single aggregation", |c| {
        c.marb_scale = ScaleMode::Single;
        c.marb_agg = AggMode::Single;
    }),
    variant!("marn_ms_sa", "multi-scale branches, single aggregation", |c| {
        c.marb_scale = ScaleMode::Multi;
        c.marb_agg = AggMode::Single;
    }),
    variant!("marn_ss_ma", "single-scale branches, multi aggregation", |c| {
        c.marb_scale = ScaleMode::Single;
        c.marb_agg = AggMode::Multi;
    }),
    variant!("marn_ms_ma", "multi-scale branches, multi aggregation", |c| {
        c.marb_scale = ScaleMode::Multi;
        c.marb_agg = AggMode::Multi;
    }),
    variant!("marb1", "one MARB", |c| c.marb_count = 1),
    variant!("marb2", "two MARBs", |c| c.marb_count = 2),
    variant!("marb3", "three MARBs", |c| c.marb_count = 3),
];

pub static GRIDS: &[(&str, &[&str])] = &[
    (
        "attention",
        &["masknet_baseline", "masknet_sa", "masknet_ca", "masknet_casa"],
    ),
    ("guidance", &["tbl4_case1", "tbl4_case2", "tbl4_case3", "tbl4_case4"]),
    ("gfnet", &["tbl5_case1", "tbl5_case2", "tbl5_case3", "tbl5_case4"]),
    ("marb", &["marn_ss_sa", "marn_ms_sa", "marn_ss_ma", "marn_ms_ma"]),
    ("marb_count", &["marb1", "marb2", "marb3"]),
];

fn registry_listing() -> Vec<String> {
    GRIDS.iter().map(|(g, vs)| format!("{g} ({})", vs.join(", "))).collect()
}

pub fn lookup_variant(name: &str) -> Result<&'static Variant> {
    VARIANTS.iter().find(|v| v.name == name).ok_or_else(|| Error::Registry {
        name: name.to_string(),
        known: registry_listing(),
    })
}

/// Resolves a grid name, or a comma-separated list of variant names, into
/// variants in grid order.
pub fn resolve_grid(grid: &str) -> Result<Vec<&'static Variant>> {
    if let Some((_, names)) = GRIDS.iter().find(|(name, _)| *name == grid) {
        return names.iter().map(|n| lookup_variant(n)).collect();
    }
    let names: Vec<&str> = grid.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::Registry {
            name: grid.to_string(),
            known: registry_listing(),
        });
    }
    names.into_iter().map(lookup_variant).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    /// Mean reconstruction loss over the last training epoch.
    pub final_rec_loss: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    #[serde(skip)]
    pub report: EvalReport,
}

/// A soft expectation about the ordering of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendCheck {
    pub description: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub grid: String,
    /// In grid order.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Rows sorted by mean PSNR, best first; ties keep grid order.
    pub fn ranked(&self) -> Vec<&AblationRow> {
        let mut r: Vec<&AblationRow> = self.rows.iter().collect();
        r.sort_by(|a, b| b.mean_psnr.total_cmp(&a.mean_psnr));
        r
    }

    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.ranked() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Fixed-width ranked table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<4} {:<18} {:>10} {:>12} {:>12}",
            "rank", "variant", "params", "rec_loss", "psnr/ssim"
        );
        for (i, r) in self.ranked().iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<4} {:<18} {:>10} {:>12.5} {:>12}",
                i + 1,
                r.variant,
                r.params,
                r.final_rec_loss,
                r.report.summary()
            );
        }
        s
    }

    /// Orderings expected for the known grids.
    pub fn trends(&self) -> Vec<TrendCheck> {
        let mut out = Vec::new();
        let loss = |v: &str| self.row(v).map(|r| r.final_rec_loss);
        if let (Some(c1), Some(c3), Some(c4)) = (loss("tbl4_case1"), loss("tbl4_case3"), loss("tbl4_case4")) {
            out.push(TrendCheck {
                description: "final loss: tbl4_case4 <= tbl4_case3 <= tbl4_case1".into(),
                holds: c4 <= c3 && c3 <= c1,
                detail: format!("case4 {c4:.5}, case3 {c3:.5}, case1 {c1:.5}"),
            });
        }
        let psnr = |v: &str| self.row(v).map(|r| r.mean_psnr);
        if let (Some(a), Some(b), Some(c)) = (psnr("marb1"), psnr("marb2"), psnr("marb3")) {
            out.push(TrendCheck {
                description: "PSNR increases with MARB count".into(),
                holds: a <= b && b <= c,
                detail: format!("marb1 {a:.2} dB, marb2 {b:.2} dB, marb3 {c:.2} dB"),
            });
        }
        if let (Some(full), Some(base)) = (psnr("marn_ms_ma"), psnr("marn_ss_sa")) {
            out.push(TrendCheck {
                description: "multi-scale multi-aggregation beats single/single".into(),
                holds: full >= base,
                detail: format!("ms_ma {full:.2} dB, ss_sa {base:.2} dB"),
            });
        }
        if let (Some(full), Some(base)) = (psnr("masknet_casa"), psnr("masknet_baseline")) {
            out.push(TrendCheck {
                description: "both attention units beat the plain mask network".into(),
                holds: full >= base,
                detail: format!("casa {full:.2} dB, baseline {base:.2} dB"),
            });
        }
        out
    }
}

/// Trains every variant from the same seed and budget on `train`, then
/// scores it on `eval`.
pub fn ablation_sweep(
    grid: &str,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[SnowSample],
    eval: &[SnowSample],
    mut progress: impl FnMut(&str),
) -> Result<AblationTable> {
    let variants = resolve_grid(grid)?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        progress(v.name);
        let cfg = v.apply(base);
        let mut trainer = Trainer::<f32>::new(cfg.clone(), train_cfg.clone())?;
        trainer.run(train)?;
        let last_epoch = trainer.state.epoch.saturating_sub(1);
        let last: Vec<f64> = trainer
            .metrics
            .iter()
            .filter(|m| m.epoch == last_epoch && m.psnr.is_none())
            .map(|m| m.loss_rec)
            .collect();
        let final_rec_loss = last.iter().sum::<f64>() / last.len().max(1) as f64;
        let report = evaluate_samples(trainer.model(), v.name, eval)?;
        rows.push(AblationRow {
            variant: v.name.to_string(),
            params: param_count(&cfg),
            final_rec_loss,
            mean_psnr: report.mean_psnr,
            mean_ssim: report.mean_ssim,
            report,
        });
    }
    Ok(AblationTable {
        grid: grid.to_string(),
        rows,
    })
}
