use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::element::Element;

/// Named parameter tensors, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, ArrayD<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    /// Inserts or replaces a tensor, returning the previous value.
    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<T>) -> Option<ArrayD<T>> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| U::from_real(x.as_f64()))))
                .collect(),
        }
    }
}

impl<T> FromIterator<(String, ArrayD<T>)> for ParamStore<T> {
    fn from_iter<I: IntoIterator<Item = (String, ArrayD<T>)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().collect(),
        }
    }
}
