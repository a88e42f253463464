//! Objective functions: reconstruction BCE, centroid MMD, class-wise MMD,
//! the weighted target objective, and classifier cross-entropy.
//!
//! Every loss is built out of tape ops, so gradients come from the same
//! reverse pass as the networks they train.

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

/// Contiguous row range holding one class's samples in a class-sorted batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassRange {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

impl ClassRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// A feature batch sorted by class, with per-class contiguous ranges.
#[derive(Debug, Clone)]
pub struct ClassIndexedBatch {
    features: Tensor,
    labels: Vec<usize>,
    offsets: Vec<ClassRange>,
}

impl ClassIndexedBatch {
    /// Build from class-sorted rows; rejects unsorted labels and empty input.
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if labels.len() != n {
            return Err(Error::shape(
                "class_indexed_batch",
                format!("{n} rows vs {} labels", labels.len()),
            ));
        }
        if n == 0 {
            return Err(Error::contract("empty batch"));
        }
        if labels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::contract("labels must be sorted ascending"));
        }
        let offsets = class_ranges(&labels);
        Ok(ClassIndexedBatch {
            features,
            labels,
            offsets,
        })
    }

    /// Sorts rows by class first, then builds the batch.
    pub fn from_unsorted(features: Tensor, labels: &[usize]) -> Result<Self> {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| labels[i]);
        let sorted_feats = features.gather_rows(&order)?;
        let sorted_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        ClassIndexedBatch::new(sorted_feats, sorted_labels)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn offsets(&self) -> &[ClassRange] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-class contiguous ranges of a sorted label list.
pub fn class_ranges(sorted_labels: &[usize]) -> Vec<ClassRange> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=sorted_labels.len() {
        if i == sorted_labels.len() || sorted_labels[i] != sorted_labels[start] {
            out.push(ClassRange {
                class: sorted_labels[start],
                start,
                end: i,
            });
            start = i;
        }
    }
    out
}

/// Binary cross-entropy reconstruction loss: per-sample pixel sums averaged
/// over the batch, -(1/N) sum_i sum_pix [x log p + (1-x) log(1-p)].
pub fn recon_bce(tape: &mut Tape, x: NodeId, p: NodeId) -> Result<NodeId> {
    let sx = tape.value(x).shape().to_vec();
    let sp = tape.value(p).shape().to_vec();
    if sx != sp {
        return Err(Error::shape("recon_bce", format!("{sx:?} vs {sp:?}")));
    }
    let (n, _) = tape.value(x).dims2()?;
    let ones = tape.constant(&Tensor::filled(sx, 1.0));
    let log_p = tape.log_clamped(p)?;
    let pos = tape.mul(x, log_p)?;
    let one_minus_x = tape.sub(ones, x)?;
    let one_minus_p = tape.sub(ones, p)?;
    let log_1p = tape.log_clamped(one_minus_p)?;
    let neg = tape.mul(one_minus_x, log_1p)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum_all(both)?;
    tape.scale(total, -1.0 / n as f64)
}

/// Squared distance between batch centroids.
pub fn mmd_linear(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (na, wa) = tape.value(a).dims2()?;
    let (nb, wb) = tape.value(b).dims2()?;
    if wa != wb {
        return Err(Error::shape("mmd_linear", format!("widths {wa} vs {wb}")));
    }
    if na == 0 || nb == 0 {
        return Err(Error::contract("mmd_linear on empty batch"));
    }
    let ma = tape.mean_rows(a)?;
    let mb = tape.mean_rows(b)?;
    let diff = tape.sub(ma, mb)?;
    let sq = tape.square(diff)?;
    tape.sum_all(sq)
}

/// Class-wise centroid distance, averaged over classes:
/// (1/C) sum_k || mean_k(src) - mean_k(tgt) ||^2.
///
/// Implemented with constant row-selector matrices, so per-class means are a
/// single matmul and the whole loss stays on the tape.
pub fn mmd_classwise(
    tape: &mut Tape,
    src: NodeId,
    src_offsets: &[ClassRange],
    tgt: NodeId,
    tgt_offsets: &[ClassRange],
) -> Result<NodeId> {
    let (ns, ws) = tape.value(src).dims2()?;
    let (nt, wt) = tape.value(tgt).dims2()?;
    if ws != wt {
        return Err(Error::shape("mmd_classwise", format!("widths {ws} vs {wt}")));
    }
    check_same_classes(src_offsets, tgt_offsets)?;
    let c = src_offsets.len();
    if c == 0 {
        return Err(Error::contract("mmd_classwise on empty batches"));
    }
    let sel_src = tape.constant(&mean_selector(src_offsets, ns)?);
    let sel_tgt = tape.constant(&mean_selector(tgt_offsets, nt)?);
    let means_src = tape.matmul(sel_src, src)?;
    let means_tgt = tape.matmul(sel_tgt, tgt)?;
    let diff = tape.sub(means_src, means_tgt)?;
    let sq = tape.square(diff)?;
    let total = tape.sum_all(sq)?;
    tape.scale(total, 1.0 / c as f64)
}

fn check_same_classes(src: &[ClassRange], tgt: &[ClassRange]) -> Result<()> {
    let mut i = 0;
    let mut j = 0;
    while i < src.len() || j < tgt.len() {
        match (src.get(i), tgt.get(j)) {
            (Some(s), Some(t)) if s.class == t.class => {
                i += 1;
                j += 1;
            }
            (Some(s), Some(t)) if s.class < t.class => {
                return Err(Error::MissingClass {
                    class: s.class,
                    side: "target",
                });
            }
            (Some(_), Some(t)) => {
                return Err(Error::MissingClass {
                    class: t.class,
                    side: "source",
                });
            }
            (Some(s), None) => {
                return Err(Error::MissingClass {
                    class: s.class,
                    side: "target",
                });
            }
            (None, Some(t)) => {
                return Err(Error::MissingClass {
                    class: t.class,
                    side: "source",
                });
            }
            (None, None) => unreachable!(),
        }
    }
    Ok(())
}

/// [C x n] matrix whose k-th row holds 1/n_k over class k's rows, so that
/// selector @ features yields the per-class centroids.
fn mean_selector(offsets: &[ClassRange], n: usize) -> Result<Tensor> {
    let c = offsets.len();
    let mut data = vec![0.0; c * n];
    for (k, range) in offsets.iter().enumerate() {
        if range.is_empty() {
            return Err(Error::contract(format!("class {} has no samples", range.class)));
        }
        if range.end > n {
            return Err(Error::contract(format!(
                "class range {}..{} exceeds batch of {n}",
                range.start, range.end
            )));
        }
        let w = 1.0 / range.len() as f64;
        for i in range.start..range.end {
            data[k * n + i] = w;
        }
    }
    Tensor::new(vec![c, n], data)
}

/// Weighted target objective: recon + beta * mmd.
pub fn target_objective(tape: &mut Tape, recon: NodeId, mmd: NodeId, beta: f64) -> Result<NodeId> {
    if beta < 0.0 {
        return Err(Error::config(format!("beta must be >= 0, got {beta}")));
    }
    let scaled = tape.scale(mmd, beta)?;
    tape.add(recon, scaled)
}

/// Mean categorical cross-entropy against one-hot targets.
pub fn classifier_ce(tape: &mut Tape, y_onehot: NodeId, p: NodeId) -> Result<NodeId> {
    let sy = tape.value(y_onehot).shape().to_vec();
    let sp = tape.value(p).shape().to_vec();
    if sy != sp {
        return Err(Error::shape("classifier_ce", format!("{sy:?} vs {sp:?}")));
    }
    let (n, _) = tape.value(p).dims2()?;
    let log_p = tape.log_clamped(p)?;
    let picked = tape.mul(y_onehot, log_p)?;
    let total = tape.sum_all(picked)?;
    tape.scale(total, -1.0 / n as f64)
}

/// One-hot encode labels into an [n x n_classes] tensor.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::contract(format!("label {l} out of {n_classes} classes")));
        }
        data[i * n_classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), n_classes], data)
}

/// Evaluate class-wise MMD of two plain (untracked) feature batches.
pub fn mmd_classwise_value(a: &ClassIndexedBatch, b: &ClassIndexedBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let na = tape.constant(a.features());
    let nb = tape.constant(b.features());
    let id = mmd_classwise(&mut tape, na, a.offsets(), nb, b.offsets())?;
    tape.value(id).item()
}
