//! Heterogeneity-aware triplet loss.
//!
//! For an anchor `a` in domain `p`, a same-domain positive `ps`, a
//! cross-domain positive `pc` (domain `q`) and two sets of embeddings of one
//! negative identity (`ns` in `p`, `nc` in `q`):
//!
//! ```text
//! L1 = [ |a - ps|^2 - |a - mean(ns)|^2 + alpha1 ]_+
//! L2 = [ |a - pc|^2 - |a - mean(nc)|^2 + alpha2 ]_+
//! L  = L1 + L2
//! ```
//!
//! All distances are squared Euclidean. Each hinge is clipped independently.
//! The plain triplet loss `[ |a - p|^2 - |a - n|^2 + alpha ]_+` is provided as
//! the baseline.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::vector::{check_same_dim, sq_dist};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            alpha1: 0.4,
            alpha2: 0.4,
        }
    }
}

impl Margins {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("margins.alpha1", self.alpha1),
            ("margins.alpha2", self.alpha2),
        ] {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTuple {
    pub anchor: Vec<f64>,
    pub pos_same: Vec<f64>,
    pub pos_cross: Vec<f64>,
    pub negs_same: Vec<Vec<f64>>,
    pub negs_cross: Vec<Vec<f64>>,
}

impl EmbeddingTuple {
    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.negs_same.is_empty() || self.negs_cross.is_empty() {
            return Err(Error::arg("negative sets must be nonempty"));
        }
        check_same_dim(&self.anchor, &self.pos_same)?;
        check_same_dim(&self.anchor, &self.pos_cross)?;
        for n in self.negs_same.iter().chain(&self.negs_cross) {
            check_same_dim(&self.anchor, n)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub l1_active: bool,
    pub l2_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub d_anchor: Vec<f64>,
    pub d_pos_same: Vec<f64>,
    pub d_pos_cross: Vec<f64>,
    pub d_negs_same: Vec<Vec<f64>>,
    pub d_negs_cross: Vec<Vec<f64>>,
}

impl LossGrad {
    fn zeros(t: &EmbeddingTuple) -> Self {
        let z = vec![0.0; t.dim()];
        Self {
            d_anchor: z.clone(),
            d_pos_same: z.clone(),
            d_pos_cross: z.clone(),
            d_negs_same: vec![z.clone(); t.negs_same.len()],
            d_negs_cross: vec![z; t.negs_cross.len()],
        }
    }
}

/// NaN passes through so callers can detect it.
#[inline]
fn hinge(z: f64) -> (f64, bool) {
    if z > 0.0 || z.is_nan() {
        (z, true)
    } else {
        (0.0, false)
    }
}

/// `[ |a - p|^2 - |a - n|^2 + alpha ]_+`
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<f64> {
    check_same_dim(anchor, positive)?;
    check_same_dim(anchor, negative)?;
    Ok(hinge(sq_dist(anchor, positive) - sq_dist(anchor, negative) + alpha).0)
}

/// Gradient of [`triplet_loss`] with respect to `(anchor, positive, negative)`.
pub fn triplet_loss_grad(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    alpha: f64,
) -> Result<(f64, [Vec<f64>; 3])> {
    let loss = triplet_loss(anchor, positive, negative, alpha)?;
    let d = anchor.len();
    if loss == 0.0 {
        return Ok((loss, [vec![0.0; d], vec![0.0; d], vec![0.0; d]]));
    }
    let da = (0..d).map(|i| 2.0 * (negative[i] - positive[i])).collect();
    let dp = (0..d).map(|i| 2.0 * (positive[i] - anchor[i])).collect();
    let dn = (0..d).map(|i| 2.0 * (anchor[i] - negative[i])).collect();
    Ok((loss, [da, dp, dn]))
}

/// Component-wise mean.
///
/// Vectors are summed in lexicographic order, so the result is bit-identical
/// for every permutation of the input.
pub fn mean_embedding<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::arg("mean of an empty set of embeddings"))?
        .as_ref();
    for v in vectors {
        check_same_dim(first, v.as_ref())?;
    }
    let mut order: Vec<&[f64]> = vectors.iter().map(|v| v.as_ref()).collect();
    order.sort_by(|a, b| lex_cmp(a, b));
    let mut sum = vec![0.0; first.len()];
    for v in order {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let k = vectors.len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Hinge argument `|a - p|^2 - |a - mean(negs)|^2 + alpha` and the mean.
fn mean_negative_argument(
    anchor: &[f64],
    positive: &[f64],
    negs: &[Vec<f64>],
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    check_same_dim(anchor, positive)?;
    let mean = mean_embedding(negs)?;
    check_same_dim(anchor, &mean)?;
    Ok((
        sq_dist(anchor, positive) - sq_dist(anchor, &mean) + alpha,
        mean,
    ))
}

/// Within-domain term: mean negative drawn from the anchor's domain.
pub fn loss_l1(tuple: &EmbeddingTuple, alpha1: f64) -> Result<f64> {
    let (z, _) = mean_negative_argument(&tuple.anchor, &tuple.pos_same, &tuple.negs_same, alpha1)?;
    Ok(hinge(z).0)
}

/// Cross-domain term: positive and mean negative from the other domain.
pub fn loss_l2(tuple: &EmbeddingTuple, alpha2: f64) -> Result<f64> {
    let (z, _) =
        mean_negative_argument(&tuple.anchor, &tuple.pos_cross, &tuple.negs_cross, alpha2)?;
    Ok(hinge(z).0)
}

/// Both hinge arguments before clipping, `(z1, z2)`.
pub fn hinge_arguments(tuple: &EmbeddingTuple, margins: Margins) -> Result<(f64, f64)> {
    tuple.validate()?;
    let (z1, _) = mean_negative_argument(
        &tuple.anchor,
        &tuple.pos_same,
        &tuple.negs_same,
        margins.alpha1,
    )?;
    let (z2, _) = mean_negative_argument(
        &tuple.anchor,
        &tuple.pos_cross,
        &tuple.negs_cross,
        margins.alpha2,
    )?;
    Ok((z1, z2))
}

pub fn hetero_loss(tuple: &EmbeddingTuple, margins: Margins) -> Result<LossValue> {
    let (z1, z2) = hinge_arguments(tuple, margins)?;
    Ok(loss_value(z1, z2))
}

fn loss_value(z1: f64, z2: f64) -> LossValue {
    let (l1, l1_active) = hinge(z1);
    let (l2, l2_active) = hinge(z2);
    LossValue {
        l1,
        l2,
        total: l1 + l2,
        l1_active,
        l2_active,
    }
}

/// Loss value and its (sub)gradient with respect to every embedding of the
/// tuple. An inactive hinge (argument `<= 0`) contributes nothing; each
/// negative receives `1/k` of its mean's gradient.
pub fn hetero_loss_grad(tuple: &EmbeddingTuple, margins: Margins) -> Result<(LossValue, LossGrad)> {
    tuple.validate()?;
    let a = &tuple.anchor;
    let (z1, mean_s) =
        mean_negative_argument(a, &tuple.pos_same, &tuple.negs_same, margins.alpha1)?;
    let (z2, mean_c) =
        mean_negative_argument(a, &tuple.pos_cross, &tuple.negs_cross, margins.alpha2)?;
    let value = loss_value(z1, z2);
    let mut grad = LossGrad::zeros(tuple);
    if value.l1_active {
        accumulate_term(
            a,
            &tuple.pos_same,
            &mean_s,
            &mut grad.d_anchor,
            &mut grad.d_pos_same,
            &mut grad.d_negs_same,
        );
    }
    if value.l2_active {
        accumulate_term(
            a,
            &tuple.pos_cross,
            &mean_c,
            &mut grad.d_anchor,
            &mut grad.d_pos_cross,
            &mut grad.d_negs_cross,
        );
    }
    Ok((value, grad))
}

// d/da  = 2 (mean - pos)
// d/dp  = 2 (pos - a)
// d/dni = 2 (a - mean) / k
fn accumulate_term(
    a: &[f64],
    pos: &[f64],
    mean: &[f64],
    d_anchor: &mut [f64],
    d_pos: &mut [f64],
    d_negs: &mut [Vec<f64>],
) {
    let inv_k = 1.0 / d_negs.len() as f64;
    for i in 0..a.len() {
        d_anchor[i] += 2.0 * (mean[i] - pos[i]);
        d_pos[i] += 2.0 * (pos[i] - a[i]);
        let dn = 2.0 * (a[i] - mean[i]) * inv_k;
        for n in d_negs.iter_mut() {
            n[i] += dn;
        }
    }
}

/// Batch reduction: mean of per-tuple totals, summed in input order.
pub fn batch_mean(values: &[LossValue]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.total).sum::<f64>() / values.len() as f64
}
