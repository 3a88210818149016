//! Labeled feature data: manifest I/O, identity-disjoint splits and a
//! synthetic two-domain generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::vector::{all_finite, format_exact};

pub const MANIFEST_MAGIC: &str = "HETERO-EMBED-DATA v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub identity: String,
    pub domain: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_dim: usize,
}

impl Dataset {
    /// Checks shared dimension, finiteness and id uniqueness. May be empty
    /// (split products can be), but `feature_dim` must be positive.
    pub fn new(samples: Vec<Sample>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::arg("feature_dim must be >= 1"));
        }
        let mut ids = BTreeSet::new();
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::shape(format!(
                    "sample {} has {} features, expected {feature_dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if !all_finite(&s.features) {
                return Err(Error::arg(format!(
                    "sample {} has non-finite features",
                    s.id
                )));
            }
            if !ids.insert(s.id) {
                return Err(Error::arg(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            samples,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted, deduplicated identity labels.
    pub fn identities(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.identity.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Sorted, deduplicated domain labels.
    pub fn domains(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.domain.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Samples satisfying `keep`, order preserved.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            feature_dim: self.feature_dim,
        }
    }

    pub fn in_domain(&self, domain: &str) -> Dataset {
        self.filter(|s| s.domain == domain)
    }

    pub fn to_manifest_string(&self) -> String {
        let mut out = format!("{MANIFEST_MAGIC} dim={}\n", self.feature_dim);
        for s in &self.samples {
            out.push_str(&s.identity);
            out.push(',');
            out.push_str(&s.domain);
            out.push(',');
            for (i, f) in s.features.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format_exact(*f));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_manifest_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = loop {
        match lines.next() {
            None => return Err(Error::arg("manifest is empty")),
            Some((_, l)) if l.trim().is_empty() || l.starts_with('#') => continue,
            Some(h) => break h,
        }
    };
    let dim = parse_header(header.0, header.1)?;
    let mut samples = Vec::new();
    for (n, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (identity, domain, feats) = match (parts.next(), parts.next(), parts.next()) {
            (Some(i), Some(d), Some(f)) => (i.trim(), d.trim(), f),
            _ => return Err(Error::parse(n, "expected '<identity>,<domain>,<features>'")),
        };
        if identity.is_empty() || domain.is_empty() {
            return Err(Error::parse(n, "empty identity or domain label"));
        }
        let features = feats
            .split_whitespace()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(n, format!("invalid feature value '{f}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if features.len() != dim {
            return Err(Error::shape(format!(
                "line {n}: {} features, manifest dim is {dim}",
                features.len()
            )));
        }
        samples.push(Sample {
            id: samples.len(),
            identity: identity.to_string(),
            domain: domain.to_string(),
            features,
        });
    }
    if samples.is_empty() {
        return Err(Error::arg("manifest contains no samples"));
    }
    Dataset::new(samples, dim)
}

fn parse_header(n: usize, line: &str) -> Result<usize> {
    let rest = line
        .trim_end()
        .strip_prefix(MANIFEST_MAGIC)
        .ok_or_else(|| Error::parse(n, format!("expected header '{MANIFEST_MAGIC} dim=<D>'")))?;
    let dim = rest
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(n, "header must declare dim=<positive integer>"))?;
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainShift {
    pub rotation_angle_degrees: f64,
    pub offset_magnitude: f64,
    pub noise_scale: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            rotation_angle_degrees: 30.0,
            offset_magnitude: 1.0,
            noise_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub samples_per_identity_per_domain: usize,
    pub feature_dim: usize,
    pub cluster_spread: f64,
    pub domain_shift: DomainShift,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_identities: 50,
            samples_per_identity_per_domain: 20,
            feature_dim: 16,
            cluster_spread: 0.3,
            domain_shift: DomainShift::default(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::config("synth.n_identities must be >= 2"));
        }
        if self.samples_per_identity_per_domain == 0 {
            return Err(Error::config(
                "synth.samples_per_identity_per_domain must be >= 1",
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("synth.feature_dim must be >= 1"));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread > 0.0) {
            return Err(Error::config("synth.cluster_spread must be positive"));
        }
        let s = &self.domain_shift;
        if !(s.rotation_angle_degrees.is_finite() && s.offset_magnitude.is_finite()) {
            return Err(Error::config("synth domain shift must be finite"));
        }
        if !(s.noise_scale.is_finite() && s.noise_scale >= 0.0) {
            return Err(Error::config("synth.noise_scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Two domains, "A" and "B". Each identity gets a standard-normal cluster
/// center `c`. Domain A samples are `c + spread * e`; domain B samples are
/// `R c + o + spread * e + noise_scale * e'`, where `R` rotates the first two
/// coordinates and `o` is a shared offset along the all-ones direction.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let d = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let centers: Vec<Vec<f64>> = (0..config.n_identities)
        .map(|_| (0..d).map(|_| normal()).collect())
        .collect();
    let shift = config.domain_shift;
    let theta = shift.rotation_angle_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let offset = shift.offset_magnitude / (d as f64).sqrt();
    let width = (config.n_identities - 1).to_string().len().max(2);

    let mut samples =
        Vec::with_capacity(config.n_identities * config.samples_per_identity_per_domain * 2);
    for (i, c) in centers.iter().enumerate() {
        let identity = format!("id{i:0width$}");
        let mut shifted = c.clone();
        if d >= 2 {
            shifted[0] = cos * c[0] - sin * c[1];
            shifted[1] = sin * c[0] + cos * c[1];
        }
        for v in shifted.iter_mut() {
            *v += offset;
        }
        for (domain, base, extra) in [("A", c, 0.0), ("B", &shifted, shift.noise_scale)] {
            for _ in 0..config.samples_per_identity_per_domain {
                let features = base
                    .iter()
                    .map(|&b| {
                        let mut v = b + config.cluster_spread * normal();
                        if extra > 0.0 {
                            v += extra * normal();
                        }
                        v
                    })
                    .collect();
                samples.push(Sample {
                    id: samples.len(),
                    identity: identity.clone(),
                    domain: domain.to_string(),
                    features,
                });
            }
        }
    }
    Dataset::new(samples, d)
}

/// Splits by identity into disjoint train/test sets.
///
/// `round(train_fraction * n)` identities go to train, clamped so each side
/// keeps at least one.
pub fn split_by_identity(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg("train_fraction must lie in (0, 1)"));
    }
    let mut ids = dataset.identities();
    if ids.len() < 2 {
        return Err(Error::arg(format!(
            "identity split needs >= 2 identities, found {}",
            ids.len()
        )));
    }
    let n = ids.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_ids: BTreeSet<&str> = ids[..n_train].iter().map(String::as_str).collect();
    let train = dataset.filter(|s| train_ids.contains(s.identity.as_str()));
    let test = dataset.filter(|s| !train_ids.contains(s.identity.as_str()));
    Ok((train, test))
}

/// Per identity, `per_identity_enroll` random samples go to the gallery and
/// the rest become probes.
pub fn split_enroll_probe(
    dataset: &Dataset,
    per_identity_enroll: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if per_identity_enroll == 0 {
        return Err(Error::arg("per_identity_enroll must be >= 1"));
    }
    let mut by_identity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for s in dataset.samples() {
        by_identity.entry(&s.identity).or_default().push(s.id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enrolled = BTreeSet::new();
    for (identity, mut ids) in by_identity {
        if ids.len() <= per_identity_enroll {
            return Err(Error::arg(format!(
                "identity '{identity}' has {} samples; enrolling {per_identity_enroll} needs at least {}",
                ids.len(),
                per_identity_enroll + 1
            )));
        }
        ids.shuffle(&mut rng);
        enrolled.extend(ids.into_iter().take(per_identity_enroll));
    }
    let gallery = dataset.filter(|s| enrolled.contains(&s.id));
    let probes = dataset.filter(|s| !enrolled.contains(&s.id));
    Ok((gallery, probes))
}
