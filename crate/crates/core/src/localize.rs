//! Per-layer TopK selection, overlap masks and entanglement analysis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::round_count;
use crate::error::{Error, Result};
use crate::mask::LayerBits;
use crate::probe::{DatasetTag, GradientSummary};

pub const MASK_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K_OP_UR: f64 = 10.0;
pub const DEFAULT_K_OP_RR: f64 = 20.0;

/// Number of parameters kept from a layer of `n`: `round(k% · n)`, at least one.
pub fn topk_count(k_percent: f64, n: usize) -> usize {
    round_count(k_percent / 100.0 * n as f64).clamp(1, n.max(1))
}

fn check_k(k_percent: f64) -> Result<()> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "k must lie in (0, 100], got {k_percent}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSet {
    pub dataset_tag: DatasetTag,
    pub k_percent: f64,
    pub model_fingerprint: String,
    pub layer_sizes: Vec<usize>,
    /// Sorted ascending per layer.
    pub layers: Vec<Vec<usize>>,
}

impl IndexSet {
    pub fn to_bits(&self) -> LayerBits {
        LayerBits::from_indices(&self.layer_sizes, &self.layers).expect("index set is in range")
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Largest magnitudes first, lower index on ties.
fn rank_desc(values: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// Indices of the `m` largest values, ascending.
pub fn top_indices(values: &[f64], m: usize) -> Vec<usize> {
    let m = m.min(values.len());
    if m == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if m < idx.len() {
        idx.select_nth_unstable_by(m - 1, |&a, &b| rank_desc(values, a, b));
        idx.truncate(m);
    }
    idx.sort_unstable();
    idx
}

pub fn topk(summary: &GradientSummary, k_percent: f64) -> Result<IndexSet> {
    check_k(k_percent)?;
    summary.validate()?;
    let layers = summary
        .magnitudes
        .iter()
        .map(|layer| top_indices(layer, topk_count(k_percent, layer.len())))
        .collect();
    Ok(IndexSet {
        dataset_tag: summary.dataset_tag,
        k_percent,
        model_fingerprint: summary.model_fingerprint.clone(),
        layer_sizes: summary.layer_sizes(),
        layers,
    })
}

fn check_compatible(sets: &[&IndexSet]) -> Result<()> {
    let first = sets[0];
    for s in &sets[1..] {
        if s.model_fingerprint != first.model_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: first.model_fingerprint.clone(),
                found: s.model_fingerprint.clone(),
            });
        }
        if s.k_percent != first.k_percent {
            return Err(Error::InvalidArgument(format!(
                "index sets taken at different k ({} vs {})",
                first.k_percent, s.k_percent
            )));
        }
        if s.layer_sizes != first.layer_sizes {
            return Err(Error::ShapeMismatch(
                "index sets over different layer shapes".into(),
            ));
        }
    }
    Ok(())
}

fn expect_tag(set: &IndexSet, tag: DatasetTag) -> Result<()> {
    if set.dataset_tag != tag {
        return Err(Error::InvalidArgument(format!(
            "expected the {tag} index set, got {}",
            set.dataset_tag
        )));
    }
    Ok(())
}

/// Parameters critical to some unlearn set and some retain set:
/// `(T_U^pri ∪ T_U^cpy) ∩ (T_R^pri ∪ T_R^cpy)` per layer.
pub fn build_op_ur(
    u_pri: &IndexSet,
    u_cpy: &IndexSet,
    r_pri: &IndexSet,
    r_cpy: &IndexSet,
) -> Result<LayerBits> {
    expect_tag(u_pri, DatasetTag::UnlearnPrivacy)?;
    expect_tag(u_cpy, DatasetTag::UnlearnCopyright)?;
    expect_tag(r_pri, DatasetTag::RetainPrivacy)?;
    expect_tag(r_cpy, DatasetTag::RetainCopyright)?;
    check_compatible(&[u_pri, u_cpy, r_pri, r_cpy])?;
    let unlearn = u_pri.to_bits().union(&u_cpy.to_bits())?;
    let retain = r_pri.to_bits().union(&r_cpy.to_bits())?;
    unlearn.intersection(&retain)
}

/// Parameters critical to retention in both domains: `T_R^pri ∩ T_R^cpy`.
pub fn build_op_rr(r_pri: &IndexSet, r_cpy: &IndexSet) -> Result<LayerBits> {
    expect_tag(r_pri, DatasetTag::RetainPrivacy)?;
    expect_tag(r_cpy, DatasetTag::RetainCopyright)?;
    check_compatible(&[r_pri, r_cpy])?;
    r_pri.to_bits().intersection(&r_cpy.to_bits())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenMask {
    pub frozen: LayerBits,
    pub op_ur: LayerBits,
    pub op_rr: LayerBits,
}

impl FrozenMask {
    pub fn empty(sizes: &[usize]) -> Self {
        FrozenMask {
            frozen: LayerBits::empty(sizes),
            op_ur: LayerBits::empty(sizes),
            op_rr: LayerBits::empty(sizes),
        }
    }

    /// Same components with `op_ur` and/or `op_rr` dropped from the frozen set.
    pub fn ablate(&self, keep_op_ur: bool, keep_op_rr: bool) -> Self {
        let sizes = self.frozen.sizes();
        let op_ur = if keep_op_ur {
            self.op_ur.clone()
        } else {
            LayerBits::empty(&sizes)
        };
        let op_rr = if keep_op_rr {
            self.op_rr.clone()
        } else {
            LayerBits::empty(&sizes)
        };
        compose_frozen(op_ur, op_rr).expect("components share a shape")
    }
}

pub fn compose_frozen(op_ur: LayerBits, op_rr: LayerBits) -> Result<FrozenMask> {
    let frozen = op_ur.union(&op_rr)?;
    Ok(FrozenMask {
        frozen,
        op_ur,
        op_rr,
    })
}

/// Full localization from the four core summaries (in any order).
pub fn localize(summaries: &[GradientSummary], k_op_ur: f64, k_op_rr: f64) -> Result<FrozenMask> {
    let get = |tag: DatasetTag| -> Result<&GradientSummary> {
        summaries
            .iter()
            .find(|s| s.dataset_tag == tag)
            .ok_or_else(|| Error::InvalidArgument(format!("missing {tag} summary")))
    };
    let ur = |tag| topk(get(tag)?, k_op_ur);
    let op_ur = build_op_ur(
        &ur(DatasetTag::UnlearnPrivacy)?,
        &ur(DatasetTag::UnlearnCopyright)?,
        &ur(DatasetTag::RetainPrivacy)?,
        &ur(DatasetTag::RetainCopyright)?,
    )?;
    let op_rr = build_op_rr(
        &topk(get(DatasetTag::RetainPrivacy)?, k_op_rr)?,
        &topk(get(DatasetTag::RetainCopyright)?, k_op_rr)?,
    )?;
    compose_frozen(op_ur, op_rr)
}

/// Persisted frozen mask with the inputs it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub format_version: u32,
    pub k_op_ur: f64,
    pub k_op_rr: f64,
    pub model_fingerprint: String,
    pub layer_names: Vec<String>,
    pub mask: FrozenMask,
}

impl MaskFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MaskFile = serde_json::from_str(&text)?;
        if file.format_version != MASK_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "{}: unsupported mask version {}",
                path.display(),
                file.format_version
            )));
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardMatrix {
    pub k_percent: f64,
    /// Row/column labels, [`DatasetTag::ALL`] order.
    pub tags: Vec<DatasetTag>,
    /// Pooled over every layer's `(layer, index)` pairs.
    pub model_wise: [[f64; 4]; 4],
    pub per_layer: Vec<(String, [[f64; 4]; 4])>,
}

impl JaccardMatrix {
    pub fn get(&self, a: DatasetTag, b: DatasetTag) -> f64 {
        let pos = |t| DatasetTag::ALL.iter().position(|&x| x == t).unwrap();
        self.model_wise[pos(a)][pos(b)]
    }

    /// Mean of the two unlearn/retain pairs within a domain.
    pub fn within_domain_mean(&self) -> f64 {
        (self.get(DatasetTag::UnlearnPrivacy, DatasetTag::RetainPrivacy)
            + self.get(DatasetTag::UnlearnCopyright, DatasetTag::RetainCopyright))
            / 2.0
    }

    /// Mean of the four privacy/copyright pairs.
    pub fn cross_domain_mean(&self) -> f64 {
        let pri = [DatasetTag::UnlearnPrivacy, DatasetTag::RetainPrivacy];
        let cpy = [DatasetTag::UnlearnCopyright, DatasetTag::RetainCopyright];
        let mut total = 0.0;
        for a in pri {
            for b in cpy {
                total += self.get(a, b);
            }
        }
        total / 4.0
    }

    /// CSV rows `tag_a,tag_b,layer,value`; the pooled matrix uses layer `ALL`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tag_a", "tag_b", "layer", "value"])?;
        let blocks = std::iter::once(("ALL", &self.model_wise))
            .chain(self.per_layer.iter().map(|(n, m)| (n.as_str(), m)));
        for (layer, m) in blocks {
            for (i, a) in DatasetTag::ALL.iter().enumerate() {
                for (j, b) in DatasetTag::ALL.iter().enumerate() {
                    w.write_record([a.as_str(), b.as_str(), layer, &m[i][j].to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn jaccard_matrix(summaries: &[GradientSummary], k_percent: f64) -> Result<JaccardMatrix> {
    let sets: Vec<IndexSet> = DatasetTag::ALL
        .iter()
        .map(|&tag| {
            let s = summaries
                .iter()
                .find(|s| s.dataset_tag == tag)
                .ok_or_else(|| Error::InvalidArgument(format!("missing {tag} summary")))?;
            topk(s, k_percent)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&IndexSet> = sets.iter().collect();
    check_compatible(&refs)?;

    let n_layers = sets[0].layers.len();
    let layer_names = &summaries[0].layer_names;
    let mut inter_total = [[0usize; 4]; 4];
    let mut union_total = [[0usize; 4]; 4];
    let mut per_layer = Vec::with_capacity(n_layers);
    for (l, name) in layer_names.iter().enumerate().take(n_layers) {
        let mut m = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let inter = intersection_len(&sets[a].layers[l], &sets[b].layers[l]);
                let union = sets[a].layers[l].len() + sets[b].layers[l].len() - inter;
                inter_total[a][b] += inter;
                union_total[a][b] += union;
                m[a][b] = ratio(inter, union);
            }
        }
        per_layer.push((name.clone(), m));
    }
    let mut model_wise = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            model_wise[a][b] = ratio(inter_total[a][b], union_total[a][b]);
        }
    }
    Ok(JaccardMatrix {
        k_percent,
        tags: DatasetTag::ALL.to_vec(),
        model_wise,
        per_layer,
    })
}
