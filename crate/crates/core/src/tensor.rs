use ndarray::{Array4, ArrayView4, Axis};
use smgarn_autograd::Element;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueDomain {
    /// Every element lies in `[0, 1]`.
    UnitInterval,
    Unbounded,
}

/// Rank-4 `(batch, channel, height, width)` image or feature tensor in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array4<f64>,
    domain: ValueDomain,
}

impl ImageTensor {
    pub fn new(data: Array4<f64>, domain: ValueDomain) -> Result<Self> {
        let (b, c, h, w) = data.dim();
        if b == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "tensor dims must all be >= 1, got ({b}, {c}, {h}, {w})"
            )));
        }
        if domain == ValueDomain::UnitInterval {
            if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("value {v} outside [0, 1]")));
            }
        }
        Ok(Self { data, domain })
    }

    pub fn unit(data: Array4<f64>) -> Result<Self> {
        Self::new(data, ValueDomain::UnitInterval)
    }

    pub fn unbounded(data: Array4<f64>) -> Result<Self> {
        Self::new(data, ValueDomain::Unbounded)
    }

    /// Clamps into `[0, 1]` and tags the result as a unit-interval image.
    pub fn unit_clamped(data: Array4<f64>) -> Result<Self> {
        Self::unit(data.mapv(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn filled(shape: (usize, usize, usize, usize), value: f64) -> Result<Self> {
        let domain = if (0.0..=1.0).contains(&value) {
            ValueDomain::UnitInterval
        } else {
            ValueDomain::Unbounded
        };
        Self::new(Array4::from_elem(shape, value), domain)
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView4<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn is_unit(&self) -> bool {
        self.domain == ValueDomain::UnitInterval
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Applies a shape-changing transform that keeps values (crop, flip,
    /// rotation), preserving the domain tag.
    pub fn remap(&self, f: impl FnOnce(ArrayView4<'_, f64>) -> Array4<f64>) -> Self {
        Self {
            data: f(self.data.view()),
            domain: self.domain,
        }
    }

    /// Repeats a single-channel tensor `channels` times along axis 1.
    pub fn repeat_channels(&self, channels: usize) -> Result<Self> {
        if self.channels() == channels {
            return Ok(self.clone());
        }
        if self.channels() != 1 {
            return Err(Error::Dimension(format!(
                "cannot broadcast {} channels to {channels}",
                self.channels()
            )));
        }
        let views: Vec<_> = (0..channels).map(|_| self.data.view()).collect();
        let data = ndarray::concatenate(Axis(1), &views).expect("same shapes");
        Ok(Self {
            data,
            domain: self.domain,
        })
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[&ImageTensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack zero tensors".into()))?;
        let views: Vec<_> = items.iter().map(|t| t.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Dimension(format!("stack: {e}")))?;
        let domain = if items.iter().all(|t| t.is_unit()) {
            ValueDomain::UnitInterval
        } else {
            first.domain
        };
        Ok(Self { data, domain })
    }

    pub fn to_element<T: Element>(&self) -> Array4<T> {
        self.data.mapv(T::from_real)
    }

    pub fn from_element<T: Element>(data: &Array4<T>, domain: ValueDomain) -> Result<Self> {
        Self::new(data.mapv(|v| v.as_f64()), domain)
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> Result<f64> {
        ensure_same_dims("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn ensure_same_dims(op: &str, a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_domain_is_enforced() {
        assert!(ImageTensor::unit(Array4::from_elem((1, 1, 2, 2), 1.5)).is_err());
        assert!(ImageTensor::unbounded(Array4::from_elem((1, 1, 2, 2), 1.5)).is_ok());
        assert!(ImageTensor::unit(Array4::zeros((1, 0, 2, 2))).is_err());
    }

    #[test]
    fn repeat_channels_copies_the_plane() {
        let t = ImageTensor::filled((1, 1, 2, 3), 0.25).unwrap();
        let r = t.repeat_channels(3).unwrap();
        assert_eq!(r.dim(), (1, 3, 2, 3));
        assert!(r.data().iter().all(|&v| v == 0.25));
        assert!(r.repeat_channels(2).is_err());
    }
}
