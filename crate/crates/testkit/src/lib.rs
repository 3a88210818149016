//! Test oracles written independently of the library code paths they check.
//!
//! Nothing here calls into `hetero_embed::eval` or the analytic gradients;
//! only plain data types are shared.

use hetero_embed::loss::{hetero_loss, EmbeddingTuple, Margins};
use rand::Rng;

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative gradient error with an absolute floor for near-zero entries.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

pub fn random_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tuple<R: Rng>(
    rng: &mut R,
    dim: usize,
    k_same: usize,
    k_cross: usize,
    scale: f64,
) -> EmbeddingTuple {
    EmbeddingTuple {
        anchor: random_vec(rng, dim, scale),
        pos_same: random_vec(rng, dim, scale),
        pos_cross: random_vec(rng, dim, scale),
        negs_same: (0..k_same).map(|_| random_vec(rng, dim, scale)).collect(),
        negs_cross: (0..k_cross).map(|_| random_vec(rng, dim, scale)).collect(),
    }
}

/// Flattens every embedding of a tuple, anchor first.
pub fn flatten_tuple(t: &EmbeddingTuple) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend_from_slice(&t.anchor);
    v.extend_from_slice(&t.pos_same);
    v.extend_from_slice(&t.pos_cross);
    for n in t.negs_same.iter().chain(&t.negs_cross) {
        v.extend_from_slice(n);
    }
    v
}

pub fn unflatten_tuple(template: &EmbeddingTuple, flat: &[f64]) -> EmbeddingTuple {
    let d = template.dim();
    let mut chunks = flat.chunks(d).map(<[f64]>::to_vec);
    let mut next = || chunks.next().expect("enough values");
    EmbeddingTuple {
        anchor: next(),
        pos_same: next(),
        pos_cross: next(),
        negs_same: (0..template.negs_same.len()).map(|_| next()).collect(),
        negs_cross: (0..template.negs_cross.len()).map(|_| next()).collect(),
    }
}

/// Numerical gradient of the total hetero loss, in [`flatten_tuple`] order.
pub fn numeric_loss_grad(t: &EmbeddingTuple, margins: Margins, h: f64) -> Vec<f64> {
    let x = flatten_tuple(t);
    let mut f = |v: &[f64]| hetero_loss(&unflatten_tuple(t, v), margins).unwrap().total;
    (0..x.len())
        .map(|i| central_difference(&mut f, &x, i, h))
        .collect()
}

/// Direct hinge arguments, written out coordinate by coordinate.
pub fn hinge_args_direct(t: &EmbeddingTuple, m: Margins) -> (f64, f64) {
    fn sqd(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        s
    }
    fn mean(vs: &[Vec<f64>]) -> Vec<f64> {
        let mut m = vec![0.0; vs[0].len()];
        for v in vs {
            for i in 0..m.len() {
                m[i] += v[i];
            }
        }
        m.iter().map(|x| x / vs.len() as f64).collect()
    }
    let z1 = sqd(&t.anchor, &t.pos_same) - sqd(&t.anchor, &mean(&t.negs_same)) + m.alpha1;
    let z2 = sqd(&t.anchor, &t.pos_cross) - sqd(&t.anchor, &mean(&t.negs_cross)) + m.alpha2;
    (z1, z2)
}

/// One operating point: `(far, gar, threshold)`.
pub type Point = (f64, f64, f64);

/// ROC by direct counting at every distinct threshold, with `-inf`/`+inf`
/// sentinels, sorted by threshold.
pub fn brute_roc(genuine: &[f64], impostor: &[f64]) -> Vec<Point> {
    let mut thresholds: Vec<f64> = Vec::new();
    for &s in genuine.iter().chain(impostor) {
        if !thresholds.contains(&s) {
            thresholds.push(s);
        }
    }
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rate =
        |set: &[f64], t: f64| set.iter().filter(|&&s| s <= t).count() as f64 / set.len() as f64;
    let mut pts = vec![(0.0, 0.0, f64::NEG_INFINITY)];
    for t in thresholds {
        pts.push((rate(impostor, t), rate(genuine, t), t));
    }
    pts.push((1.0, 1.0, f64::INFINITY));
    pts
}

/// EER by scanning every consecutive pair of operating points for the one
/// across which `FAR - FRR` changes sign, then solving the linear segment.
pub fn brute_eer(points: &[Point]) -> f64 {
    let d = |p: &Point| p.0 - (1.0 - p.1);
    let mut best: Option<(f64, f64)> = None; // (|d|, eer)
    for p in points {
        if d(p) == 0.0 {
            return p.0;
        }
    }
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if d(a) < 0.0 && d(b) > 0.0 {
            let t = -d(a) / (d(b) - d(a));
            let e = a.0 + t * (b.0 - a.0);
            let score = d(a).abs().min(d(b).abs());
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, e));
            }
        }
    }
    best.map(|(_, e)| e).expect("FAR - FRR crosses zero")
}

/// GAR at `f` from raw operating points.
pub fn brute_gar_at_far(points: &[Point], f: f64) -> f64 {
    let min_positive = points
        .iter()
        .map(|p| p.0)
        .filter(|&x| x > 0.0)
        .fold(f64::INFINITY, f64::min);
    let best_at = |far: f64| {
        points
            .iter()
            .filter(|p| p.0 == far)
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    if f < min_positive {
        return best_at(0.0);
    }
    let lo_far = points
        .iter()
        .map(|p| p.0)
        .filter(|&x| x <= f)
        .fold(f64::NEG_INFINITY, f64::max);
    if lo_far == f {
        return best_at(f);
    }
    let hi_far = points
        .iter()
        .map(|p| p.0)
        .filter(|&x| x > f)
        .fold(f64::INFINITY, f64::min);
    let lo_gar = best_at(lo_far);
    let hi_gar = points
        .iter()
        .filter(|p| p.0 == hi_far)
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    lo_gar + (f - lo_far) / (hi_far - lo_far) * (hi_gar - lo_gar)
}

/// CMC by counting, for each probe, the gallery entries that beat its best
/// genuine match (strictly closer, or equally close at a lower index).
/// Probes without an enrolled identity never count.
pub fn brute_cmc(dist: &[Vec<f64>], probe_ids: &[&str], gallery_ids: &[&str]) -> Vec<f64> {
    let g = gallery_ids.len();
    let mut counts = vec![0usize; g];
    for (i, row) in dist.iter().enumerate() {
        let mut best: Option<usize> = None;
        for j in 0..g {
            if gallery_ids[j] == probe_ids[i] && best.is_none_or(|b| row[j] < row[b]) {
                best = Some(j);
            }
        }
        let Some(b) = best else { continue };
        let ahead = (0..g)
            .filter(|&j| row[j] < row[b] || (row[j] == row[b] && j < b))
            .count();
        for c in counts.iter_mut().skip(ahead) {
            *c += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / dist.len() as f64)
        .collect()
}

/// Genuine/impostor split of a labeled score list.
pub fn random_scores<R: Rng>(rng: &mut R, n: usize, discrete: bool) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for _ in 0..n {
        let is_genuine = rng.random_bool(0.4);
        let base: f64 = if discrete {
            rng.random_range(0..20) as f64 / 10.0
        } else {
            rng.random_range(0.0..2.0)
        };
        let s = if is_genuine { base * 0.7 } else { base };
        if is_genuine {
            genuine.push(s);
        } else {
            impostor.push(s);
        }
    }
    if genuine.is_empty() {
        genuine.push(0.5);
    }
    if impostor.is_empty() {
        impostor.push(0.5);
    }
    (genuine, impostor)
}
