//! Snow mask prediction: pixel attention units, the residual snow mask
//! block, and the network producing mask features and the mask itself.

use smgarn_autograd::{Element, Graph, Var};

use crate::error::{Error, Result};
use crate::nn::{conv_param_specs, Conv, ConvSpec, ParamSpec};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskNetConfig {
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub use_sa: bool,
    pub use_ca: bool,
    pub mask_channels: usize,
}

impl Default for MaskNetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 112,
            num_blocks: 1,
            use_sa: true,
            use_ca: true,
            mask_channels: 1,
        }
    }
}

impl MaskNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_blocks == 0 || self.mask_channels == 0 {
            return Err(Error::Config(
                "mask net needs embed_dim, num_blocks and mask_channels >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn conv_in(&self) -> Conv {
        Conv::new("masknet.conv_in", ConvSpec::k3(3, self.embed_dim))
    }

    pub fn conv_out(&self) -> Conv {
        Conv::new("masknet.conv_out", ConvSpec::k3(self.embed_dim, self.embed_dim))
    }

    pub fn head(&self) -> Conv {
        Conv::new("masknet.head", ConvSpec::k3(self.embed_dim, self.mask_channels))
    }

    pub fn block(&self, index: usize) -> SnowMaskBlock {
        SnowMaskBlock::new(
            format!("masknet.block{index}"),
            self.embed_dim,
            self.use_sa,
            self.use_ca,
        )
    }

    pub fn blocks(&self) -> Vec<SnowMaskBlock> {
        (1..=self.num_blocks).map(|i| self.block(i)).collect()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = self.conv_in().param_specs();
        for b in self.blocks() {
            out.extend(b.param_specs());
        }
        out.extend(self.conv_out().param_specs());
        out.extend(self.head().param_specs());
        out
    }
}

/// `Conv0(X) * Conv0(X)`: one convolution, squared elementwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelfPixelAttention {
    pub conv0: Conv,
}

impl SelfPixelAttention {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            conv0: Conv::new(format!("{prefix}.conv0"), ConvSpec::k3(channels, channels)),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let e = self.conv0.forward(g, x)?;
        Ok(g.mul(e, e)?)
    }
}

/// `Conv1(X) * Conv2(X)` with independent convolutions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossPixelAttention {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl CrossPixelAttention {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            conv1: Conv::new(format!("{prefix}.conv1"), ConvSpec::k3(channels, channels)),
            conv2: Conv::new(format!("{prefix}.conv2"), ConvSpec::k3(channels, channels)),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.conv1.forward(g, x)?;
        let b = self.conv2.forward(g, x)?;
        Ok(g.mul(a, b)?)
    }
}

/// Either an attention unit or, when disabled, a plain 3x3 conv + ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Unit<A> {
    Attention(A),
    Plain(Conv),
}

/// `Y = X + CA(SA(X))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnowMaskBlock {
    pub sa: Unit<SelfPixelAttention>,
    pub ca: Unit<CrossPixelAttention>,
}

impl SnowMaskBlock {
    pub fn new(prefix: String, channels: usize, use_sa: bool, use_ca: bool) -> Self {
        let plain = |unit: &str| Conv::new(format!("{prefix}.{unit}.plain"), ConvSpec::k3(channels, channels));
        Self {
            sa: if use_sa {
                Unit::Attention(SelfPixelAttention::new(&format!("{prefix}.sa"), channels))
            } else {
                Unit::Plain(plain("sa"))
            },
            ca: if use_ca {
                Unit::Attention(CrossPixelAttention::new(&format!("{prefix}.ca"), channels))
            } else {
                Unit::Plain(plain("ca"))
            },
        }
    }

    pub fn convs(&self) -> Vec<&Conv> {
        let mut out = Vec::new();
        match &self.sa {
            Unit::Attention(a) => out.push(&a.conv0),
            Unit::Plain(c) => out.push(c),
        }
        match &self.ca {
            Unit::Attention(a) => out.extend([&a.conv1, &a.conv2]),
            Unit::Plain(c) => out.push(c),
        }
        out
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        conv_param_specs(self.convs())
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = match &self.sa {
            Unit::Attention(a) => a.forward(g, x)?,
            Unit::Plain(c) => c.forward_relu(g, x)?,
        };
        let c = match &self.ca {
            Unit::Attention(a) => a.forward(g, s)?,
            Unit::Plain(c) => c.forward_relu(g, s)?,
        };
        Ok(g.add(x, c)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaskNetOutput {
    /// Features right before the mask head.
    pub features: Var,
    /// Sigmoid mask, `(B, mask_channels, H, W)`.
    pub mask: Var,
}

/// Runs the mask network on a `(B, 3, H, W)` image node.
pub fn masknet_forward<T: Element>(g: &mut Graph<'_, T>, cfg: &MaskNetConfig, image: Var) -> Result<MaskNetOutput> {
    let shape = g.shape(image);
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Dimension(format!(
            "mask net expects (B, 3, H, W) input, got {shape:?}"
        )));
    }
    let mut x = cfg.conv_in().forward_relu(g, image)?;
    for block in cfg.blocks() {
        x = block.forward(g, x)?;
    }
    let features = cfg.conv_out().forward_relu(g, x)?;
    let logits = cfg.head().forward(g, features)?;
    Ok(MaskNetOutput {
        features,
        mask: g.sigmoid(logits),
    })
}
