//! The assembled desnowing network, its configuration and losses.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array4, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smgarn_autograd::{Element, Graph, ParamStore, Var};

use crate::config::{parse_flag, parse_value};
use crate::error::{Error, Result};
use crate::gf_net::{gfnet_forward, Backbone, FusionMode, GFNetConfig, GuidanceMode};
use crate::mask_net::{masknet_forward, MaskNetConfig};
use crate::nn::{check_params, init_params, Conv, ConvSpec, ParamSpec};
use crate::reconstruct_net::{reconstruct_forward, AggMode, MarbConfig, ScaleMode};
use crate::tensor::{ImageTensor, ValueDomain};

/// Which source of snow guidance feeds the fusion network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GuidanceCase {
    /// No mask network; fusion sees a bias-free encoding of the image.
    NoMaskNet,
    /// Full network trained without the mask loss.
    NoMaskLoss,
    /// Full network with mask supervision.
    #[default]
    Full,
    /// Ground-truth mask lifted by a convolution replaces the mask network.
    GtMask,
}

crate::gf_net::keyword_enum!(GuidanceCase {
    NoMaskNet => "case1_no_masknet",
    NoMaskLoss => "case2_no_maskloss",
    Full => "case3_full",
    GtMask => "case4_gt_mask",
});

impl GuidanceCase {
    pub fn has_masknet(self) -> bool {
        matches!(self, Self::NoMaskLoss | Self::Full)
    }

    pub fn uses_mask_loss(self) -> bool {
        self == Self::Full
    }

    pub fn needs_gt_mask_input(self) -> bool {
        self == Self::GtMask
    }
}

/// Architecture hyperparameters. Every sub-network shares `embed_dim`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub mask_channels: usize,
    pub mask_blocks: usize,
    pub use_sa: bool,
    pub use_ca: bool,
    pub gf_levels: usize,
    pub fusion_mode: FusionMode,
    pub guidance_mode: GuidanceMode,
    pub gf_backbone: Backbone,
    pub marb_count: usize,
    pub marb_scale: ScaleMode,
    pub marb_agg: AggMode,
    pub guidance_case: GuidanceCase,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 112,
            mask_channels: 1,
            mask_blocks: 1,
            use_sa: true,
            use_ca: true,
            gf_levels: 2,
            fusion_mode: FusionMode::default(),
            guidance_mode: GuidanceMode::default(),
            gf_backbone: Backbone::default(),
            marb_count: 3,
            marb_scale: ScaleMode::default(),
            marb_agg: AggMode::default(),
            guidance_case: GuidanceCase::default(),
        }
    }
}

impl ModelConfig {
    pub fn masknet(&self) -> MaskNetConfig {
        MaskNetConfig {
            embed_dim: self.embed_dim,
            num_blocks: self.mask_blocks,
            use_sa: self.use_sa,
            use_ca: self.use_ca,
            mask_channels: self.mask_channels,
        }
    }

    pub fn gfnet(&self) -> GFNetConfig {
        GFNetConfig {
            embed_dim: self.embed_dim,
            levels: self.gf_levels,
            fusion_mode: self.fusion_mode,
            guidance_mode: self.guidance_mode,
            backbone: self.gf_backbone,
        }
    }

    pub fn marb(&self) -> MarbConfig {
        MarbConfig {
            channels: self.embed_dim,
            scale_mode: self.marb_scale,
            agg_mode: self.marb_agg,
            count: self.marb_count,
        }
    }

    /// Bias-free image encoder standing in for mask features without a
    /// mask network.
    pub fn image_encoder(&self) -> Conv {
        Conv::new("guide.img_enc", ConvSpec::k3(3, self.embed_dim).without_bias())
    }

    pub fn gt_lift(&self) -> Conv {
        Conv::new("guide.gt_lift", ConvSpec::k3(self.mask_channels, self.embed_dim))
    }

    pub fn validate(&self) -> Result<()> {
        self.masknet().validate()?;
        self.gfnet().validate()?;
        self.marb().validate()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        match self.guidance_case {
            GuidanceCase::NoMaskNet => out.extend(self.image_encoder().param_specs()),
            GuidanceCase::GtMask => out.extend(self.gt_lift().param_specs()),
            GuidanceCase::NoMaskLoss | GuidanceCase::Full => out.extend(self.masknet().param_specs()),
        }
        out.extend(self.gfnet().param_specs());
        out.extend(self.marb().param_specs());
        out
    }

    /// Applies one `key = value` setting; `Ok(false)` for keys that are not
    /// model settings.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        match key {
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "mask_channels" => self.mask_channels = parse_value(key, value)?,
            "mask_blocks" => self.mask_blocks = parse_value(key, value)?,
            "use_sa" => self.use_sa = parse_flag(key, value)?,
            "use_ca" => self.use_ca = parse_flag(key, value)?,
            "gf_levels" => self.gf_levels = parse_value(key, value)?,
            "fusion_mode" => self.fusion_mode = parse_value(key, value)?,
            "guidance_mode" => self.guidance_mode = parse_value(key, value)?,
            "gf_backbone" => self.gf_backbone = parse_value(key, value)?,
            "marb_count" => self.marb_count = parse_value(key, value)?,
            "marb_scale" => self.marb_scale = parse_value(key, value)?,
            "marb_agg" => self.marb_agg = parse_value(key, value)?,
            "guidance_case" => self.guidance_case = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let s = |k: &str, v: &dyn fmt::Display| (k.to_string(), v.to_string());
        vec![
            s("embed_dim", &self.embed_dim),
            s("mask_channels", &self.mask_channels),
            s("mask_blocks", &self.mask_blocks),
            s("use_sa", &self.use_sa),
            s("use_ca", &self.use_ca),
            s("gf_levels", &self.gf_levels),
            s("fusion_mode", &self.fusion_mode),
            s("guidance_mode", &self.guidance_mode),
            s("gf_backbone", &self.gf_backbone),
            s("marb_count", &self.marb_count),
            s("marb_scale", &self.marb_scale),
            s("marb_agg", &self.marb_agg),
            s("guidance_case", &self.guidance_case),
        ]
    }

    /// Rebuilds a config from `to_pairs` output; every key must be known.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            if !cfg.set(k, v).map_err(Error::Config)? {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Total scalar parameter count; independent of image size.
pub fn param_count(cfg: &ModelConfig) -> usize {
    cfg.param_specs().iter().map(ParamSpec::len).sum()
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub image: Var,
    /// Predicted mask; absent when the variant has no mask network.
    pub mask: Option<Var>,
    pub fused: Var,
    pub global: Var,
}

/// Full forward pass on a `(B, 3, H, W)` image node. `gt_mask` must be
/// given for [`GuidanceCase::GtMask`] and is ignored otherwise.
pub fn smgarn_forward<T: Element>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    snowy: Var,
    gt_mask: Option<Var>,
) -> Result<ModelOutput> {
    let shape = g.shape(snowy).to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Dimension(format!(
            "model expects (B, 3, H, W) input, got {shape:?}"
        )));
    }
    let (guide, mask) = match cfg.guidance_case {
        GuidanceCase::NoMaskNet => (cfg.image_encoder().forward(g, snowy)?, None),
        GuidanceCase::GtMask => {
            let m = gt_mask
                .ok_or_else(|| Error::Config(format!("{} needs a ground-truth mask input", GuidanceCase::GtMask)))?;
            let expected = [shape[0], cfg.mask_channels, shape[2], shape[3]];
            if g.shape(m) != expected {
                return Err(Error::Dimension(format!(
                    "ground-truth mask has shape {:?}, expected {expected:?}",
                    g.shape(m)
                )));
            }
            (cfg.gt_lift().forward(g, m)?, None)
        }
        GuidanceCase::NoMaskLoss | GuidanceCase::Full => {
            let out = masknet_forward(g, &cfg.masknet(), snowy)?;
            (out.features, Some(out.mask))
        }
    };
    let fused = gfnet_forward(g, &cfg.gfnet(), snowy, guide)?;
    let rec = reconstruct_forward(g, &cfg.marb(), fused)?;
    Ok(ModelOutput {
        image: rec.image,
        mask,
        fused,
        global: rec.global,
    })
}

/// Loss nodes of one training step.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub reconstruct: Var,
    pub mask: Option<Var>,
}

/// `rec + lambda * mask`. The mask term is only built when the variant uses
/// the mask loss and `lambda > 0`, so a zero weight keeps the ground-truth
/// mask out of the graph entirely.
pub fn loss_graph<T: Element>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    out: &ModelOutput,
    clean: Var,
    gt_mask: Option<Var>,
    lambda: f64,
) -> Result<LossVars> {
    check_lambda(lambda)?;
    if g.shape(out.image) != g.shape(clean) {
        return Err(Error::Dimension(format!(
            "prediction {:?} and target {:?} differ",
            g.shape(out.image),
            g.shape(clean)
        )));
    }
    let reconstruct = g.l1(out.image, clean)?;
    let mask = match (cfg.guidance_case.uses_mask_loss() && lambda > 0.0, out.mask) {
        (true, Some(pred)) => {
            let gt = gt_mask.ok_or_else(|| Error::Dataset("mask loss needs ground-truth masks".into()))?;
            if g.shape(pred) != g.shape(gt) {
                return Err(Error::Dimension(format!(
                    "mask prediction {:?} and target {:?} differ",
                    g.shape(pred),
                    g.shape(gt)
                )));
            }
            Some(g.l1(pred, gt)?)
        }
        _ => None,
    };
    let total = match mask {
        Some(m) => {
            let weighted = g.scale(m, T::from_real(lambda));
            g.add(reconstruct, weighted)?
        }
        None => reconstruct,
    };
    Ok(LossVars {
        total,
        reconstruct,
        mask,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "lambda must be a finite value >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Mean absolute error.
fn l1(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    crate::tensor::ensure_same_dims("l1", a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

pub fn mask_loss(pred: &ImageTensor, gt: &ImageTensor) -> Result<f64> {
    l1(pred, gt)
}

pub fn reconstruct_loss(pred: &ImageTensor, clean: &ImageTensor) -> Result<f64> {
    l1(pred, clean)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBundle {
    pub total: f64,
    pub reconstruct: f64,
    /// `None` when the mask term is not part of the objective.
    pub mask: Option<f64>,
    pub lambda: f64,
}

pub fn total_loss(reconstruct: f64, mask: Option<f64>, lambda: f64) -> Result<LossBundle> {
    check_lambda(lambda)?;
    let total = match mask {
        Some(m) => reconstruct + lambda * m,
        None => reconstruct,
    };
    Ok(LossBundle {
        total,
        reconstruct,
        mask,
        lambda,
    })
}

/// Restored image and, for variants with a mask network, the predicted mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub image: ImageTensor,
    pub mask: Option<ImageTensor>,
}

/// Configuration plus parameters in element type `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Smgarn<T: Element> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Element> Smgarn<T> {
    /// Fresh fan-in-scaled initialisation from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_specs(), &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        check_params(&params, &config.param_specs())?;
        Ok(Self { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn infer(&self, snowy: &ImageTensor, gt_mask: Option<&ImageTensor>) -> Result<Prediction> {
        let mut g = Graph::new(&self.params);
        let x = g.input(snowy.to_element::<T>().into_dyn());
        let m = gt_mask.map(|m| g.input(m.to_element::<T>().into_dyn()));
        let out = smgarn_forward(&mut g, &self.config, x, m)?;
        let to_image = |v: Var| -> Result<ImageTensor> {
            let a: Array4<T> = g.value(v).clone().into_dimensionality::<Ix4>().expect("rank 4 output");
            ImageTensor::from_element(&a, ValueDomain::UnitInterval)
        };
        Ok(Prediction {
            image: to_image(out.image)?,
            mask: out.mask.map(to_image).transpose()?,
        })
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let entries = crate::config::parse_kv(s)?;
        Self::from_pairs(entries.iter().map(|e| (e.key.as_str(), e.value.as_str())))
    }
}
