//! Image reconstruction from fused features with multi-scale aggregated
//! residual blocks (MARBs) and a global skip.

use smgarn_autograd::{Element, Graph, Var};

use crate::error::{Error, Result};
use crate::gf_net::keyword_enum;
use crate::nn::{conv_param_specs, Conv, ConvSpec, ParamSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScaleMode {
    /// 1x1, 3x3 and 5x5 entry convolutions.
    #[default]
    Multi,
    /// 3x3 everywhere.
    Single,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AggMode {
    /// Two staged pairwise concatenations, then a final one.
    #[default]
    Multi,
    /// One concatenation of all three branches.
    Single,
}

keyword_enum!(ScaleMode { Multi => "multi", Single => "single" });
keyword_enum!(AggMode { Multi => "multi", Single => "single" });

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarbConfig {
    pub channels: usize,
    pub scale_mode: ScaleMode,
    pub agg_mode: AggMode,
    pub count: usize,
}

impl Default for MarbConfig {
    fn default() -> Self {
        Self {
            channels: 112,
            scale_mode: ScaleMode::Multi,
            agg_mode: AggMode::Multi,
            count: 3,
        }
    }
}

/// One MARB. Branch `k` is `ReLU(mid_k(ReLU(in_k(X))))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Marb {
    pub branch_in: [Conv; 3],
    pub branch_mid: [Conv; 3],
    /// `agg1(b1, b3)` and `agg2(b5, b3)`; empty in single aggregation.
    pub agg: Vec<Conv>,
    pub fuse: Conv,
}

impl Marb {
    pub fn new(prefix: &str, channels: usize, scale_mode: ScaleMode, agg_mode: AggMode) -> Self {
        let c = channels;
        let kernels = match scale_mode {
            ScaleMode::Multi => [1, 3, 5],
            ScaleMode::Single => [3, 3, 3],
        };
        let labels = ["b1", "b3", "b5"];
        let branch_in =
            std::array::from_fn(|i| Conv::new(format!("{prefix}.{}_in", labels[i]), ConvSpec::new(c, c, kernels[i])));
        let branch_mid = std::array::from_fn(|i| Conv::new(format!("{prefix}.{}_mid", labels[i]), ConvSpec::k3(c, c)));
        let (agg, fuse_in) = match agg_mode {
            AggMode::Multi => (
                vec![
                    Conv::new(format!("{prefix}.agg1"), ConvSpec::k3(2 * c, c)),
                    Conv::new(format!("{prefix}.agg2"), ConvSpec::k3(2 * c, c)),
                ],
                2 * c,
            ),
            AggMode::Single => (Vec::new(), 3 * c),
        };
        Self {
            branch_in,
            branch_mid,
            agg,
            fuse: Conv::new(format!("{prefix}.fuse"), ConvSpec::k3(fuse_in, c)),
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut convs: Vec<&Conv> = Vec::new();
        for i in 0..3 {
            convs.push(&self.branch_in[i]);
            convs.push(&self.branch_mid[i]);
        }
        convs.extend(self.agg.iter());
        convs.push(&self.fuse);
        conv_param_specs(convs)
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut b = [x; 3];
        for (i, slot) in b.iter_mut().enumerate() {
            let h = self.branch_in[i].forward_relu(g, x)?;
            *slot = self.branch_mid[i].forward_relu(g, h)?;
        }
        let [b1, b3, b5] = b;
        let merged = if self.agg.is_empty() {
            g.concat(&[b1, b3, b5])?
        } else {
            let c13 = g.concat(&[b1, b3])?;
            let n1 = self.agg[0].forward_relu(g, c13)?;
            let c53 = g.concat(&[b5, b3])?;
            let n2 = self.agg[1].forward_relu(g, c53)?;
            g.concat(&[n1, n2])?
        };
        let out = self.fuse.forward(g, merged)?;
        Ok(g.add(x, out)?)
    }
}

impl MarbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.count == 0 {
            return Err(Error::Config(
                "reconstruction needs channels and MARB count >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn marb(&self, index: usize) -> Marb {
        Marb::new(
            &format!("recon.marb{index}"),
            self.channels,
            self.scale_mode,
            self.agg_mode,
        )
    }

    pub fn marbs(&self) -> Vec<Marb> {
        (1..=self.count).map(|i| self.marb(i)).collect()
    }

    pub fn out_conv(&self) -> Conv {
        Conv::new("recon.out", ConvSpec::k3(self.channels, 3))
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out: Vec<ParamSpec> = self.marbs().iter().flat_map(Marb::param_specs).collect();
        out.extend(self.out_conv().param_specs());
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReconstructOutput {
    /// `F_fuse + MARB_n(... MARB_1(F_fuse))`.
    pub global: Var,
    /// Clamped RGB image.
    pub image: Var,
}

pub fn reconstruct_forward<T: Element>(
    g: &mut Graph<'_, T>,
    cfg: &MarbConfig,
    fused: Var,
) -> Result<ReconstructOutput> {
    let mut x = fused;
    for marb in cfg.marbs() {
        x = marb.forward(g, x)?;
    }
    let global = g.add(fused, x)?;
    let rgb = cfg.out_conv().forward(g, global)?;
    Ok(ReconstructOutput {
        global,
        image: g.clamp(rgb, T::zero(), T::one()),
    })
}
