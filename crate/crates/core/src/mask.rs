//! Per-layer parameter bitsets.

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::ModelState;

/// One bitset per model layer, each sized to that layer's parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerBits {
    layers: Vec<FixedBitSet>,
}

impl LayerBits {
    pub fn empty(sizes: &[usize]) -> Self {
        LayerBits {
            layers: sizes
                .iter()
                .map(|&n| FixedBitSet::with_capacity(n))
                .collect(),
        }
    }

    pub fn empty_like(model: &ModelState) -> Self {
        Self::empty(&model.layer_sizes())
    }

    pub fn full_like(model: &ModelState) -> Self {
        let mut bits = Self::empty_like(model);
        for layer in &mut bits.layers {
            layer.insert_range(..);
        }
        bits
    }

    /// Builds from per-layer index lists; every index must be below its layer size.
    pub fn from_indices(sizes: &[usize], indices: &[Vec<usize>]) -> Result<Self> {
        if sizes.len() != indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} layer sizes but {} index lists",
                sizes.len(),
                indices.len()
            )));
        }
        let mut bits = Self::empty(sizes);
        for (l, idx) in indices.iter().enumerate() {
            for &j in idx {
                if j >= sizes[l] {
                    return Err(Error::ShapeMismatch(format!(
                        "index {j} out of range for layer {l} of size {}",
                        sizes[l]
                    )));
                }
                bits.layers[l].insert(j);
            }
        }
        Ok(bits)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(FixedBitSet::len).collect()
    }

    pub fn layer(&self, l: usize) -> &FixedBitSet {
        &self.layers[l]
    }

    pub fn insert(&mut self, l: usize, j: usize) {
        self.layers[l].insert(j);
    }

    pub fn fill_layer(&mut self, l: usize) {
        self.layers[l].insert_range(..);
    }

    pub fn contains(&self, l: usize, j: usize) -> bool {
        self.layers[l].contains(j)
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|b| b.count_ones(..)).sum()
    }

    pub fn layer_count(&self, l: usize) -> usize {
        self.layers[l].count_ones(..)
    }

    pub fn indices(&self, l: usize) -> Vec<usize> {
        self.layers[l].ones().collect()
    }

    pub fn is_congruent(&self, model: &ModelState) -> bool {
        self.sizes() == model.layer_sizes()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.sizes() != other.sizes() {
            return Err(Error::ShapeMismatch(format!(
                "bitset shapes differ: {:?} vs {:?}",
                self.sizes(),
                other.sizes()
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let mut out = a.clone();
                out.union_with(b);
                out
            })
            .collect();
        Ok(LayerBits { layers })
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let mut out = a.clone();
                out.intersect_with(b);
                out
            })
            .collect();
        Ok(LayerBits { layers })
    }
}

#[derive(Serialize, Deserialize)]
struct LayerBitsRepr {
    size: usize,
    indices: Vec<usize>,
}

impl Serialize for LayerBits {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr: Vec<LayerBitsRepr> = self
            .layers
            .iter()
            .map(|b| LayerBitsRepr {
                size: b.len(),
                indices: b.ones().collect(),
            })
            .collect();
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LayerBits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = Vec::<LayerBitsRepr>::deserialize(deserializer)?;
        let sizes: Vec<usize> = repr.iter().map(|r| r.size).collect();
        let indices: Vec<Vec<usize>> = repr.into_iter().map(|r| r.indices).collect();
        LayerBits::from_indices(&sizes, &indices).map_err(serde::de::Error::custom)
    }
}
