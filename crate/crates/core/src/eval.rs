//! Gallery/probe matching and biometric metrics (CMC, ROC, EER, GAR@FAR).
//!
//! Scores are squared Euclidean distances: smaller means more similar, and a
//! pair is accepted when its distance is `<=` the decision threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::net::EmbeddingNet;
use crate::vector::{format_sig, sq_dist};

/// FAR levels reported by default (0.1% and 10%).
pub const DEFAULT_FAR_LEVELS: [f64; 2] = [0.001, 0.1];

pub fn embed_dataset(net: &EmbeddingNet, dataset: &Dataset) -> Result<BTreeMap<usize, Vec<f64>>> {
    if dataset.feature_dim() != net.config().input_dim {
        return Err(Error::shape(format!(
            "data has {} features, network expects {}",
            dataset.feature_dim(),
            net.config().input_dim
        )));
    }
    dataset
        .samples()
        .iter()
        .map(|s| Ok((s.id, net.forward(&s.features)?)))
        .collect()
}

/// Row-major `probes x gallery` matrix of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged distance matrix"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&d| f(d)).collect(),
        }
    }
}

pub fn distance_matrix<P: AsRef<[f64]>, G: AsRef<[f64]>>(
    probes: &[P],
    gallery: &[G],
) -> Result<DistanceMatrix> {
    if gallery.is_empty() {
        return Err(Error::arg("gallery is empty"));
    }
    let dim = gallery[0].as_ref().len();
    if let Some(v) = probes
        .iter()
        .map(AsRef::as_ref)
        .chain(gallery.iter().map(AsRef::as_ref))
        .find(|v| v.len() != dim)
    {
        return Err(Error::shape(format!(
            "embedding dim {} differs from {dim}",
            v.len()
        )));
    }
    let mut data = Vec::with_capacity(probes.len() * gallery.len());
    for p in probes {
        for g in gallery {
            data.push(sq_dist(p.as_ref(), g.as_ref()));
        }
    }
    Ok(DistanceMatrix {
        rows: probes.len(),
        cols: gallery.len(),
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentReport {
    /// CMC: entry `r - 1` is the fraction of probes matched within rank `r`.
    pub rank_accuracies: Vec<f64>,
    pub n_probes: usize,
    pub n_gallery: usize,
}

impl IdentReport {
    /// CMC value at a 1-based rank; ranks past the gallery size saturate.
    pub fn at_rank(&self, rank: usize) -> f64 {
        assert!(rank >= 1, "ranks are 1-based");
        let i = (rank - 1).min(self.rank_accuracies.len().saturating_sub(1));
        self.rank_accuracies.get(i).copied().unwrap_or(0.0)
    }

    pub fn rank1(&self) -> f64 {
        self.at_rank(1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,accuracy\n");
        for (i, a) in self.rank_accuracies.iter().enumerate() {
            let _ = writeln!(s, "{},{}", i + 1, format_sig(*a, 9));
        }
        s
    }
}

/// Closed-set identification. Gallery columns are ranked by ascending
/// distance, ties broken by lower column index; a probe's rank is the position
/// of the first column sharing its identity.
///
/// With `strict`, a probe whose identity is absent from the gallery is an
/// error; otherwise it counts as never retrieved.
pub fn identify<S: AsRef<str>>(
    dist: &DistanceMatrix,
    probe_identities: &[S],
    gallery_identities: &[S],
    strict: bool,
) -> Result<IdentReport> {
    if dist.rows() != probe_identities.len() || dist.cols() != gallery_identities.len() {
        return Err(Error::shape(format!(
            "distance matrix is {}x{}, labels are {}x{}",
            dist.rows(),
            dist.cols(),
            probe_identities.len(),
            gallery_identities.len()
        )));
    }
    if dist.rows() == 0 || dist.cols() == 0 {
        return Err(Error::arg(
            "identification needs at least one probe and one gallery entry",
        ));
    }
    let enrolled: BTreeSet<&str> = gallery_identities.iter().map(AsRef::as_ref).collect();
    let mut hits = vec![0usize; dist.cols()];
    let mut order: Vec<usize> = Vec::with_capacity(dist.cols());
    for (i, probe_id) in probe_identities.iter().enumerate() {
        let probe_id = probe_id.as_ref();
        if !enrolled.contains(probe_id) {
            if strict {
                return Err(Error::arg(format!(
                    "probe identity '{probe_id}' is not enrolled in the gallery"
                )));
            }
            continue;
        }
        let row = dist.row(i);
        order.clear();
        order.extend(0..dist.cols());
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let rank = order
            .iter()
            .position(|&j| gallery_identities[j].as_ref() == probe_id)
            .expect("enrolled identity");
        hits[rank] += 1;
    }
    let n = dist.rows() as f64;
    let mut cumulative = 0usize;
    let rank_accuracies = hits
        .into_iter()
        .map(|h| {
            cumulative += h;
            cumulative as f64 / n
        })
        .collect();
    Ok(IdentReport {
        rank_accuracies,
        n_probes: dist.rows(),
        n_gallery: dist.cols(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    /// Every probe x gallery pair, labeled genuine when identities match.
    pub fn from_matrix<S: AsRef<str>>(
        dist: &DistanceMatrix,
        probe_identities: &[S],
        gallery_identities: &[S],
    ) -> Result<Self> {
        if dist.rows() != probe_identities.len() || dist.cols() != gallery_identities.len() {
            return Err(Error::shape("distance matrix does not match label lists"));
        }
        let mut scores = ScoreSet::default();
        for (i, p) in probe_identities.iter().enumerate() {
            for (j, g) in gallery_identities.iter().enumerate() {
                let d = dist.get(i, j);
                if p.as_ref() == g.as_ref() {
                    scores.genuine.push(d);
                } else {
                    scores.impostor.push(d);
                }
            }
        }
        Ok(scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub far: f64,
    pub gar: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("far,gar,threshold\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{}",
                format_sig(p.far, 9),
                format_sig(p.gar, 9),
                format_sig(p.threshold, 9)
            );
        }
        s
    }
}

/// Sweeps every distinct score as a threshold, bracketed by `-inf`
/// (nothing accepted) and `+inf` (everything accepted).
pub fn roc(scores: &ScoreSet) -> Result<RocCurve> {
    if scores.genuine.is_empty() || scores.impostor.is_empty() {
        return Err(Error::arg("ROC needs both genuine and impostor scores"));
    }
    if scores
        .genuine
        .iter()
        .chain(&scores.impostor)
        .any(|s| !s.is_finite())
    {
        return Err(Error::arg("scores must be finite"));
    }
    let mut genuine = scores.genuine.clone();
    let mut impostor = scores.impostor.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(RocPoint {
        far: 0.0,
        gar: 0.0,
        threshold: f64::NEG_INFINITY,
    });
    let (mut gi, mut ii) = (0usize, 0usize);
    for t in thresholds {
        while gi < genuine.len() && genuine[gi] <= t {
            gi += 1;
        }
        while ii < impostor.len() && impostor[ii] <= t {
            ii += 1;
        }
        points.push(RocPoint {
            far: ii as f64 / ni,
            gar: gi as f64 / ng,
            threshold: t,
        });
    }
    points.push(RocPoint {
        far: 1.0,
        gar: 1.0,
        threshold: f64::INFINITY,
    });
    Ok(RocCurve { points })
}

/// Equal error rate: where FAR meets FRR = 1 - GAR, linearly interpolated
/// between the two operating points that straddle the crossing.
pub fn eer(curve: &RocCurve) -> f64 {
    let diff = |p: &RocPoint| p.far - (1.0 - p.gar);
    let pts = &curve.points;
    let Some(i) = pts.iter().position(|p| diff(p) >= 0.0) else {
        return 1.0;
    };
    let hi = pts[i];
    if diff(&hi) == 0.0 || i == 0 {
        return hi.far;
    }
    let lo = pts[i - 1];
    let (dl, dh) = (diff(&lo), diff(&hi));
    let t = -dl / (dh - dl);
    lo.far + t * (hi.far - lo.far)
}

/// GAR at the requested FAR, linearly interpolated along the curve. Requests
/// below the smallest positive FAR on the curve return the GAR at FAR = 0.
pub fn gar_at_far(curve: &RocCurve, far_level: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&far_level) {
        return Err(Error::arg(format!("FAR level {far_level} outside [0, 1]")));
    }
    let pts = &curve.points;
    // Last point with far <= level carries the highest GAR at that FAR.
    let j = pts.partition_point(|p| p.far <= far_level);
    if j == 0 {
        return Err(Error::arg("ROC curve does not start at FAR = 0"));
    }
    let lo = pts[j - 1];
    if lo.far == far_level || j == pts.len() || lo.far == 0.0 {
        return Ok(lo.gar);
    }
    let hi = pts[j];
    let t = (far_level - lo.far) / (hi.far - lo.far);
    Ok(lo.gar + t * (hi.gar - lo.gar))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub eer: f64,
    /// `(far_level, gar)` pairs in request order.
    pub gar_at: Vec<(f64, f64)>,
}

pub fn verification_report(
    scores: &ScoreSet,
    far_levels: &[f64],
) -> Result<(RocCurve, VerificationReport)> {
    let curve = roc(scores)?;
    let gar_at = far_levels
        .iter()
        .map(|&f| Ok((f, gar_at_far(&curve, f)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = VerificationReport {
        eer: eer(&curve),
        gar_at,
    };
    Ok((curve, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetConfig};

    fn scores(genuine: &[f64], impostor: &[f64]) -> ScoreSet {
        ScoreSet {
            genuine: genuine.to_vec(),
            impostor: impostor.to_vec(),
        }
    }

    #[test]
    fn embed_identity_net() {
        let cfg = NetConfig {
            input_dim: 2,
            hidden_dims: vec![],
            embed_dim: 2,
            activation: Activation::Relu,
            normalize_output: false,
        };
        let net = EmbeddingNet::from_params(cfg, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let ds = crate::dataset::parse_manifest("HETERO-EMBED-DATA v1 dim=2\na,A,1 2\nb,A,-3 4\n")
            .unwrap();
        let emb = embed_dataset(&net, &ds).unwrap();
        assert_eq!(emb[&1], vec![-3.0, 4.0]);
        assert_eq!(embed_dataset(&net, &ds).unwrap(), emb);
        let empty = ds.filter(|_| false);
        assert!(embed_dataset(&net, &empty).unwrap().is_empty());
        let wrong =
            crate::dataset::parse_manifest("HETERO-EMBED-DATA v1 dim=3\na,A,1 2 3\n").unwrap();
        assert!(matches!(embed_dataset(&net, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn distance_examples() {
        let m = distance_matrix(&[vec![0.0, 0.0]], &[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(0), &[0.0, 25.0]);
        let pts = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 3.0]];
        let m = distance_matrix(&pts, &pts).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        let none: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            distance_matrix(&[vec![0.0]], &none),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            distance_matrix(&[vec![0.0]], &[vec![0.0, 1.0]]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn identify_examples() {
        let m = DistanceMatrix::from_rows(vec![vec![0.1, 2.0], vec![3.0, 0.2]]).unwrap();
        let r = identify(&m, &["x", "y"], &["x", "y"], true).unwrap();
        assert_eq!(r.rank1(), 1.0);

        let m = DistanceMatrix::from_rows(vec![vec![1.0, 1.0]]).unwrap();
        let r = identify(&m, &["right"], &["wrong", "right"], true).unwrap();
        assert_eq!(r.rank_accuracies, vec![0.0, 1.0]);
    }

    #[test]
    fn identify_missing_identity() {
        let m = DistanceMatrix::from_rows(vec![vec![1.0, 2.0], vec![0.5, 0.1]]).unwrap();
        let err = identify(&m, &["ghost", "a"], &["a", "b"], true).unwrap_err();
        assert!(err.to_string().contains("ghost"));
        let r = identify(&m, &["ghost", "a"], &["a", "b"], false).unwrap();
        assert_eq!(r.rank_accuracies, vec![0.0, 0.5]);
    }

    #[test]
    fn roc_separable() {
        let c = roc(&scores(&[0.1], &[0.9])).unwrap();
        assert!(c
            .points
            .iter()
            .any(|p| p.far == 0.0 && p.gar == 1.0 && p.threshold == 0.1));
        assert_eq!(eer(&c), 0.0);
        assert_eq!(gar_at_far(&c, 0.001).unwrap(), 1.0);
        assert_eq!(gar_at_far(&c, 1.0).unwrap(), 1.0);
        assert_eq!(c.points.first().unwrap().far, 0.0);
        assert_eq!(c.points.last().unwrap().far, 1.0);
    }

    #[test]
    fn roc_identical_distributions() {
        let s = [0.3, 0.1, 0.7, 0.5, 0.5];
        let c = roc(&scores(&s, &s)).unwrap();
        assert!(c.points.iter().all(|p| p.far == p.gar));
        assert!((eer(&c) - 0.5).abs() < 1e-12, "{}", eer(&c));
    }

    #[test]
    fn roc_requires_both_sets() {
        assert!(roc(&scores(&[], &[1.0])).is_err());
        assert!(roc(&scores(&[1.0], &[])).is_err());
    }

    #[test]
    fn eer_worked_example() {
        // Crossing between thresholds 0.4 (FAR 1/4, FRR 1/2) and 0.5
        // (FAR 1/4, FRR 1/4): FAR == FRR == 0.25 at 0.5.
        let c = roc(&scores(&[0.1, 0.3, 0.5, 0.7], &[0.4, 0.6, 0.8, 1.0])).unwrap();
        assert!((eer(&c) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gar_interpolates() {
        // Impostors 0.2, 0.4 -> FAR steps 0, 0.5, 1. Genuine 0.1, 0.3.
        let c = roc(&scores(&[0.1, 0.3], &[0.2, 0.4])).unwrap();
        // Points: (0,0) (0,0.5)@0.1 (0.5,0.5)@0.2 (0.5,1)@0.3 (1,1)@0.4 (1,1)@inf
        assert_eq!(gar_at_far(&c, 0.0).unwrap(), 0.5);
        assert_eq!(gar_at_far(&c, 0.25).unwrap(), 0.5);
        assert_eq!(gar_at_far(&c, 0.5).unwrap(), 1.0);
        assert_eq!(gar_at_far(&c, 0.75).unwrap(), 1.0);
        assert!(gar_at_far(&c, 1.5).is_err());
        assert!(gar_at_far(&c, -0.1).is_err());
    }

    #[test]
    fn csv_exports() {
        let c = roc(&scores(&[0.1], &[0.9])).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("far,gar,threshold\n0,0,-inf\n0,1,0.1\n"));
        let r = IdentReport {
            rank_accuracies: vec![0.5, 1.0],
            n_probes: 2,
            n_gallery: 2,
        };
        assert_eq!(r.to_csv(), "rank,accuracy\n1,0.5\n2,1\n");
    }
}
