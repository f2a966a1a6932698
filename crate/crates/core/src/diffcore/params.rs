use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors in insertion order.
///
/// Iteration order is the insertion order, which keeps optimizer updates and
/// serialized checkpoints reproducible across runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamTree {
    leaves: Vec<(String, Tensor)>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        self.leaves.push((name, value));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.leaves.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.leaves[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.leaves[i].1)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.leaves.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.leaves.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.leaves.iter().map(|(_, t)| t)
    }

    pub fn zeros_like(&self) -> ParamTree {
        ParamTree {
            leaves: self
                .leaves
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// True when both trees have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamTree) -> bool {
        self.leaves.len() == other.leaves.len()
            && self
                .leaves
                .iter()
                .zip(&other.leaves)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }

    pub fn num_scalars(&self) -> usize {
        self.leaves.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.leaves.iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt()
    }

    /// Rescales all leaves so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for (_, t) in &mut self.leaves {
                for x in t.data_mut() {
                    *x *= k;
                }
            }
        }
        norm
    }

    pub fn add_scaled(&mut self, other: &ParamTree, k: f64) {
        for ((_, a), (_, b)) in self.leaves.iter_mut().zip(&other.leaves) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += k * y;
            }
        }
    }

    /// Leaves whose names start with `prefix`, prefix stripped.
    pub fn subtree(&self, prefix: &str) -> ParamTree {
        ParamTree {
            leaves: self
                .leaves
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
                .collect(),
        }
    }

    /// Copies `other` in with every name prefixed.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamTree) -> Result<()> {
        for (n, t) in other.iter() {
            self.insert(format!("{prefix}{n}"), t.clone())?;
        }
        Ok(())
    }
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}
