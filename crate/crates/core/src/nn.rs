//! Convolution layer descriptions shared by the sub-networks.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use smgarn_autograd::{Element, Graph, ParamStore, Var};

use crate::error::{Error, Result};

/// Same-padded, stride-1 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            bias: true,
        }
    }

    pub fn k3(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 3)
    }

    pub fn without_bias(self) -> Self {
        Self { bias: false, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("conv channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn num_params(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.bias { self.out_channels } else { 0 }
    }
}

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Fan-in used for initialisation; 0 marks a bias (initialised to zero).
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named convolution layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub name: String,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new(name: impl Into<String>, spec: ConvSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let s = &self.spec;
        let mut out = vec![ParamSpec {
            name: self.weight_name(),
            shape: s.weight_shape().to_vec(),
            fan_in: s.in_channels * s.kernel * s.kernel,
        }];
        if s.bias {
            out.push(ParamSpec {
                name: self.bias_name(),
                shape: vec![s.out_channels],
                fan_in: 0,
            });
        }
        out
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let channels = g.shape(x).get(1).copied().unwrap_or(0);
        if channels != self.spec.in_channels {
            return Err(Error::Dimension(format!(
                "{} expects {} input channels, got {channels}",
                self.name, self.spec.in_channels
            )));
        }
        let w = g.param(&self.weight_name())?;
        let b = if self.spec.bias {
            Some(g.param(&self.bias_name())?)
        } else {
            None
        };
        Ok(g.conv2d(x, w, b, self.spec.padding())?)
    }

    /// `ReLU(conv(x))`.
    pub fn forward_relu<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.forward(g, x)?;
        Ok(g.relu(y))
    }
}

pub fn conv_param_specs<'a>(convs: impl IntoIterator<Item = &'a Conv>) -> Vec<ParamSpec> {
    convs.into_iter().flat_map(Conv::param_specs).collect()
}

/// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero, in declaration order.
pub fn init_params<T: Element, R: Rng>(specs: &[ParamSpec], rng: &mut R) -> ParamStore<T> {
    specs
        .iter()
        .map(|s| {
            let value = if s.fan_in == 0 {
                ArrayD::zeros(IxDyn(&s.shape))
            } else {
                let bound = 1.0 / (s.fan_in as f64).sqrt();
                ArrayD::from_shape_simple_fn(IxDyn(&s.shape), || T::from_real(rng.random_range(-bound..bound)))
            };
            (s.name.clone(), value)
        })
        .collect()
}

/// Every tensor in `specs` set to zero.
pub fn zero_params<T: Element>(specs: &[ParamSpec]) -> ParamStore<T> {
    specs
        .iter()
        .map(|s| (s.name.clone(), ArrayD::zeros(IxDyn(&s.shape))))
        .collect()
}

/// Checks that `store` holds exactly the tensors in `specs` with matching
/// shapes.
pub fn check_params<T: Element>(store: &ParamStore<T>, specs: &[ParamSpec]) -> Result<()> {
    for s in specs {
        match store.get(&s.name) {
            None => return Err(Error::Checkpoint(format!("missing parameter `{}`", s.name))),
            Some(t) if t.shape() != s.shape.as_slice() => {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )))
            }
            Some(_) => {}
        }
    }
    if store.len() != specs.len() {
        let extra: Vec<&str> = store.names().filter(|n| !specs.iter().any(|s| s.name == *n)).collect();
        return Err(Error::Checkpoint(format!(
            "unexpected parameters: {}",
            extra.join(", ")
        )));
    }
    Ok(())
}
