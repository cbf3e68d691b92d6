//! Guidance fusion: encodes the snowy image and the mask features with
//! residual units and fuses their per-level differences.

use smgarn_autograd::{Element, Graph, Var};

use crate::error::{Error, Result};
use crate::nn::{conv_param_specs, Conv, ConvSpec, ParamSpec};

/// How per-level residuals are combined into the fused feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionMode {
    /// Concatenate all levels, then two convs.
    #[default]
    ConcatConv,
    /// Sum all levels, then two convs.
    AddConv,
}

/// How the image and mask branches are merged at each level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GuidanceMode {
    /// `f_snow - f_mask`.
    #[default]
    Residual,
    /// `conv(concat(f_snow, f_mask))`, 2C -> C.
    Concat,
}

/// Encoder used after the two input convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Backbone {
    /// Per-level residual units on both branches.
    #[default]
    Adaptive,
    /// Eight plain convolutions on the merged input features.
    ConvStack,
}

pub const CONV_STACK_DEPTH: usize = 8;

macro_rules! keyword_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $(Self::$variant => $name),+ }
            }
        }
        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.name())
            }
        }
        impl ::std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    _ => Err(format!("expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
    };
}
pub(crate) use keyword_enum;

keyword_enum!(FusionMode { ConcatConv => "concat_conv", AddConv => "add_conv" });
keyword_enum!(GuidanceMode { Residual => "residual", Concat => "concat" });
keyword_enum!(Backbone { Adaptive => "adaptive", ConvStack => "conv_stack" });

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GFNetConfig {
    pub embed_dim: usize,
    pub levels: usize,
    pub fusion_mode: FusionMode,
    pub guidance_mode: GuidanceMode,
    pub backbone: Backbone,
}

impl Default for GFNetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 112,
            levels: 2,
            fusion_mode: FusionMode::default(),
            guidance_mode: GuidanceMode::default(),
            backbone: Backbone::default(),
        }
    }
}

/// `Y = X + conv3(ReLU(conv2(ReLU(conv1(X)))))`, widths C -> C -> 2C -> C.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResUnit {
    pub conv1: Conv,
    pub conv2: Conv,
    pub conv3: Conv,
}

impl ResUnit {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            conv1: Conv::new(format!("{prefix}.conv1"), ConvSpec::k3(channels, channels)),
            conv2: Conv::new(format!("{prefix}.conv2"), ConvSpec::k3(channels, 2 * channels)),
            conv3: Conv::new(format!("{prefix}.conv3"), ConvSpec::k3(2 * channels, channels)),
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        conv_param_specs([&self.conv1, &self.conv2, &self.conv3])
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward_relu(g, x)?;
        let h = self.conv2.forward_relu(g, h)?;
        let h = self.conv3.forward(g, h)?;
        Ok(g.add(x, h)?)
    }
}

impl GFNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.levels == 0 {
            return Err(Error::Config("guidance fusion needs embed_dim and levels >= 1".into()));
        }
        Ok(())
    }

    pub fn conv_img(&self) -> Conv {
        Conv::new("gfnet.conv_img", ConvSpec::k3(3, self.embed_dim))
    }

    pub fn conv_mask(&self) -> Conv {
        Conv::new("gfnet.conv_mask", ConvSpec::k3(self.embed_dim, self.embed_dim))
    }

    /// Residual unit at `level` (1-based) on `branch` 1 (image) or 2 (mask).
    pub fn res_unit(&self, level: usize, branch: usize) -> ResUnit {
        ResUnit::new(&format!("gfnet.ru{level}{branch}"), self.embed_dim)
    }

    pub fn merge(&self, level: usize) -> Conv {
        let c = self.embed_dim;
        Conv::new(format!("gfnet.merge{level}"), ConvSpec::k3(2 * c, c))
    }

    pub fn stack(&self) -> Vec<Conv> {
        let c = self.embed_dim;
        let first_in = match self.guidance_mode {
            GuidanceMode::Residual => c,
            GuidanceMode::Concat => 2 * c,
        };
        (1..=CONV_STACK_DEPTH)
            .map(|j| {
                Conv::new(
                    format!("gfnet.stack{j}"),
                    ConvSpec::k3(if j == 1 { first_in } else { c }, c),
                )
            })
            .collect()
    }

    pub fn fuse(&self) -> (Conv, Conv) {
        let c = self.embed_dim;
        let fused_in = match self.fusion_mode {
            FusionMode::ConcatConv => self.levels * c,
            FusionMode::AddConv => c,
        };
        (
            Conv::new("gfnet.fuse1", ConvSpec::k3(fused_in, c)),
            Conv::new("gfnet.fuse2", ConvSpec::k3(c, c)),
        )
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = self.conv_img().param_specs();
        out.extend(self.conv_mask().param_specs());
        match self.backbone {
            Backbone::Adaptive => {
                for level in 1..=self.levels {
                    out.extend(self.res_unit(level, 1).param_specs());
                    out.extend(self.res_unit(level, 2).param_specs());
                    if self.guidance_mode == GuidanceMode::Concat {
                        out.extend(self.merge(level).param_specs());
                    }
                }
                let (f1, f2) = self.fuse();
                out.extend(conv_param_specs([&f1, &f2]));
            }
            Backbone::ConvStack => out.extend(conv_param_specs(&self.stack())),
        }
        out
    }

    fn combine<T: Element>(&self, g: &mut Graph<'_, T>, level: usize, snow: Var, mask: Var) -> Result<Var> {
        match self.guidance_mode {
            GuidanceMode::Residual => Ok(g.sub(snow, mask)?),
            GuidanceMode::Concat => {
                let cat = g.concat(&[snow, mask])?;
                self.merge(level).forward(g, cat)
            }
        }
    }
}

/// Per-level intermediate nodes, exposed for inspection in tests.
#[derive(Clone, Debug)]
pub struct GFNetTrace {
    pub snow: Vec<Var>,
    pub mask: Vec<Var>,
    pub residuals: Vec<Var>,
    pub fused: Var,
}

/// Fuses `(B, 3, H, W)` image and `(B, C, H, W)` mask features into
/// `(B, C, H, W)`.
pub fn gfnet_forward<T: Element>(
    g: &mut Graph<'_, T>,
    cfg: &GFNetConfig,
    image: Var,
    mask_features: Var,
) -> Result<Var> {
    Ok(gfnet_trace(g, cfg, image, mask_features)?.fused)
}

pub fn gfnet_trace<T: Element>(
    g: &mut Graph<'_, T>,
    cfg: &GFNetConfig,
    image: Var,
    mask_features: Var,
) -> Result<GFNetTrace> {
    let (si, sm) = (g.shape(image).to_vec(), g.shape(mask_features).to_vec());
    if si.len() != 4 || sm.len() != 4 || si[0] != sm[0] || si[2..] != sm[2..] {
        return Err(Error::Dimension(format!(
            "image {si:?} and mask features {sm:?} must share batch and spatial dims"
        )));
    }
    let img0 = cfg.conv_img().forward(g, image)?;
    let mask0 = cfg.conv_mask().forward(g, mask_features)?;
    encode_levels(g, cfg, img0, mask0)
}

/// Everything after the two input convolutions; split out so tests can
/// feed both branches directly.
pub fn encode_levels<T: Element>(g: &mut Graph<'_, T>, cfg: &GFNetConfig, img0: Var, mask0: Var) -> Result<GFNetTrace> {
    match cfg.backbone {
        Backbone::Adaptive => {
            let (mut snow, mut mask, mut residuals) = (Vec::new(), Vec::new(), Vec::new());
            let (mut s, mut m) = (img0, mask0);
            for level in 1..=cfg.levels {
                s = cfg.res_unit(level, 1).forward(g, s)?;
                m = cfg.res_unit(level, 2).forward(g, m)?;
                residuals.push(cfg.combine(g, level, s, m)?);
                snow.push(s);
                mask.push(m);
            }
            let merged = match cfg.fusion_mode {
                FusionMode::ConcatConv => g.concat(&residuals)?,
                FusionMode::AddConv => {
                    let mut acc = residuals[0];
                    for &r in &residuals[1..] {
                        acc = g.add(acc, r)?;
                    }
                    acc
                }
            };
            let (f1, f2) = cfg.fuse();
            let h = f1.forward_relu(g, merged)?;
            let fused = f2.forward(g, h)?;
            Ok(GFNetTrace {
                snow,
                mask,
                residuals,
                fused,
            })
        }
        Backbone::ConvStack => {
            let mut x = match cfg.guidance_mode {
                GuidanceMode::Residual => g.sub(img0, mask0)?,
                GuidanceMode::Concat => g.concat(&[img0, mask0])?,
            };
            let stack = cfg.stack();
            let last = stack.len() - 1;
            for (j, conv) in stack.iter().enumerate() {
                x = if j == last {
                    conv.forward(g, x)?
                } else {
                    conv.forward_relu(g, x)?
                };
            }
            Ok(GFNetTrace {
                snow: vec![img0],
                mask: vec![mask0],
                residuals: Vec::new(),
                fused: x,
            })
        }
    }
}
