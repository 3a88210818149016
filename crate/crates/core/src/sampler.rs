//! Random tuple composition for training.
//!
//! The sampler sees only labels and an RNG stream. It never looks at
//! embeddings or losses, so there is no hard-negative mining of any kind.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{index, IndexedRandom};
use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    groups: BTreeMap<(String, String), Vec<usize>>,
    identities: Vec<String>,
    domains: Vec<String>,
}

impl DatasetIndex {
    pub fn build(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::arg("cannot index an empty dataset"));
        }
        let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for s in dataset.samples() {
            groups
                .entry((s.identity.clone(), s.domain.clone()))
                .or_default()
                .push(s.id);
        }
        Ok(Self {
            groups,
            identities: dataset.identities(),
            domains: dataset.domains(),
        })
    }

    pub fn identities(&self) -> &[String] {
        &self.identities
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn groups(&self) -> &BTreeMap<(String, String), Vec<usize>> {
        &self.groups
    }

    pub fn group(&self, identity: &str, domain: &str) -> &[usize] {
        self.groups
            .get(&(identity.to_string(), domain.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn count(&self, identity: &str, domain: &str) -> usize {
        self.group(identity, domain).len()
    }

    fn anchor_ok(&self, a: &str, p: &str, q: &str) -> bool {
        self.count(a, p) >= 2 && self.count(a, q) >= 1
    }

    fn negative_ok(&self, b: &str, p: &str, q: &str) -> bool {
        self.count(b, p) >= 1 && self.count(b, q) >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainPolicy {
    /// Anchor domain `p`, cross domain `q`.
    Fixed { p: String, q: String },
    /// `p` uniform over domains, `q` uniform over the remaining ones.
    UniformPair,
}

impl fmt::Display for DomainPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainPolicy::Fixed { p, q } => write!(f, "fixed:{p}:{q}"),
            DomainPolicy::UniformPair => f.write_str("uniform_pair"),
        }
    }
}

impl std::str::FromStr for DomainPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform_pair" {
            return Ok(DomainPolicy::UniformPair);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["fixed", p, q] if !p.is_empty() && !q.is_empty() => Ok(DomainPolicy::Fixed {
                p: p.to_string(),
                q: q.to_string(),
            }),
            _ => Err(Error::config(format!(
                "invalid domain policy '{s}' (expected uniform_pair or fixed:<p>:<q>)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TupleSpec {
    pub k: usize,
    pub domain_policy: DomainPolicy,
    /// Lets either domain of a pair serve as the anchor domain.
    pub anchor_symmetric: bool,
    /// Random draws before falling back to a deterministic feasibility scan.
    pub max_retries: usize,
}

impl Default for TupleSpec {
    fn default() -> Self {
        Self {
            k: 4,
            domain_policy: DomainPolicy::UniformPair,
            anchor_symmetric: true,
            max_retries: 64,
        }
    }
}

impl TupleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("sampler.k must be >= 1"));
        }
        if let DomainPolicy::Fixed { p, q } = &self.domain_policy {
            if p == q {
                return Err(Error::config(
                    "fixed domain policy needs two distinct domains",
                ));
            }
        }
        Ok(())
    }

    /// Ordered `(p, q)` pairs this spec can emit on `index`, in sorted order.
    fn allowed_pairs<'a>(&'a self, index: &'a DatasetIndex) -> Vec<(&'a str, &'a str)> {
        let doms = index.domains();
        match (&self.domain_policy, self.anchor_symmetric) {
            (DomainPolicy::Fixed { p, q }, false) => vec![(p.as_str(), q.as_str())],
            (DomainPolicy::Fixed { p, q }, true) => {
                let mut v = vec![(p.as_str(), q.as_str()), (q.as_str(), p.as_str())];
                v.sort();
                v
            }
            (DomainPolicy::UniformPair, sym) => {
                let anchors = if sym {
                    doms
                } else {
                    &doms[..doms.len().min(1)]
                };
                anchors
                    .iter()
                    .flat_map(|p| {
                        doms.iter()
                            .filter(move |q| *q != p)
                            .map(move |q| (p.as_str(), q.as_str()))
                    })
                    .collect()
            }
        }
    }

    fn draw_pair<'a, R: Rng + ?Sized>(
        &'a self,
        index: &'a DatasetIndex,
        rng: &mut R,
    ) -> Option<(&'a str, &'a str)> {
        match &self.domain_policy {
            DomainPolicy::Fixed { p, q } => {
                if self.anchor_symmetric && rng.random_bool(0.5) {
                    Some((q.as_str(), p.as_str()))
                } else {
                    Some((p.as_str(), q.as_str()))
                }
            }
            DomainPolicy::UniformPair => {
                let doms = index.domains();
                if doms.len() < 2 {
                    return None;
                }
                let pi = if self.anchor_symmetric {
                    rng.random_range(0..doms.len())
                } else {
                    0
                };
                let mut qi = rng.random_range(0..doms.len() - 1);
                if qi >= pi {
                    qi += 1;
                }
                Some((doms[pi].as_str(), doms[qi].as_str()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledTuple {
    pub anchor_id: usize,
    pub pos_same_id: usize,
    pub pos_cross_id: usize,
    pub neg_same_ids: Vec<usize>,
    pub neg_cross_ids: Vec<usize>,
    pub identity_a: String,
    pub identity_b: String,
    pub domain_p: String,
    pub domain_q: String,
}

impl SampledTuple {
    /// Every sample id referenced by the tuple, anchor first.
    pub fn all_ids(&self) -> impl Iterator<Item = usize> + '_ {
        [self.anchor_id, self.pos_same_id, self.pos_cross_id]
            .into_iter()
            .chain(self.neg_same_ids.iter().copied())
            .chain(self.neg_cross_ids.iter().copied())
    }
}

pub fn sample_tuple<R: Rng + ?Sized>(
    index: &DatasetIndex,
    rng: &mut R,
    spec: &TupleSpec,
) -> Result<SampledTuple> {
    spec.validate()?;
    if index.identities().len() < 2 {
        return Err(Error::Infeasible(format!(
            "need >= 2 identities, index has {}",
            index.identities().len()
        )));
    }
    if let DomainPolicy::Fixed { p, q } = &spec.domain_policy {
        for d in [p, q] {
            if !index.domains().contains(d) {
                return Err(Error::Infeasible(format!(
                    "domain '{d}' is not present in the data"
                )));
            }
        }
    }

    for _ in 0..spec.max_retries {
        let Some((p, q)) = spec.draw_pair(index, rng) else {
            break;
        };
        let anchors: Vec<&String> = index
            .identities()
            .iter()
            .filter(|a| index.anchor_ok(a, p, q))
            .collect();
        let Some(&a) = anchors.choose(rng) else {
            continue;
        };
        let negatives: Vec<&String> = index
            .identities()
            .iter()
            .filter(|b| *b != a && index.negative_ok(b, p, q))
            .collect();
        let Some(&b) = negatives.choose(rng) else {
            continue;
        };
        return Ok(compose(index, rng, spec.k, a, b, p, q));
    }

    for (p, q) in spec.allowed_pairs(index) {
        for a in index
            .identities()
            .iter()
            .filter(|a| index.anchor_ok(a, p, q))
        {
            if let Some(b) = index
                .identities()
                .iter()
                .find(|b| *b != a && index.negative_ok(b, p, q))
            {
                return Ok(compose(index, rng, spec.k, a, b, p, q));
            }
        }
    }
    Err(Error::Infeasible(tightest_failure(index, spec)))
}

fn tightest_failure(index: &DatasetIndex, spec: &TupleSpec) -> String {
    let pairs = spec.allowed_pairs(index);
    if pairs.is_empty() {
        return format!("need >= 2 domains, index has {}", index.domains().len());
    }
    let any_anchor = pairs
        .iter()
        .any(|(p, q)| index.identities().iter().any(|a| index.anchor_ok(a, p, q)));
    if !any_anchor {
        "no identity has >= 2 samples in an anchor domain and >= 1 in the paired domain".into()
    } else {
        "no negative identity (distinct from every feasible anchor) has samples in both domains"
            .into()
    }
}

fn compose<R: Rng + ?Sized>(
    index: &DatasetIndex,
    rng: &mut R,
    k: usize,
    a: &str,
    b: &str,
    p: &str,
    q: &str,
) -> SampledTuple {
    let ap = index.group(a, p);
    let pick = index::sample(rng, ap.len(), 2);
    let (anchor_id, pos_same_id) = (ap[pick.index(0)], ap[pick.index(1)]);
    let pos_cross_id = *index.group(a, q).choose(rng).expect("feasible anchor");
    let mut draw = |group: &[usize]| -> Vec<usize> {
        index::sample(rng, group.len(), k.min(group.len()))
            .into_iter()
            .map(|i| group[i])
            .collect()
    };
    let neg_same_ids = draw(index.group(b, p));
    let neg_cross_ids = draw(index.group(b, q));
    SampledTuple {
        anchor_id,
        pos_same_id,
        pos_cross_id,
        neg_same_ids,
        neg_cross_ids,
        identity_a: a.to_string(),
        identity_b: b.to_string(),
        domain_p: p.to_string(),
        domain_q: q.to_string(),
    }
}

pub fn epoch_tuples<R: Rng + ?Sized>(
    index: &DatasetIndex,
    rng: &mut R,
    spec: &TupleSpec,
    n_tuples: usize,
) -> Result<Vec<SampledTuple>> {
    (0..n_tuples)
        .map(|_| sample_tuple(index, rng, spec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `spec` lists (identity, domain, count).
    fn dataset(spec: &[(&str, &str, usize)]) -> Dataset {
        let mut samples = Vec::new();
        for &(i, d, n) in spec {
            for _ in 0..n {
                samples.push(Sample {
                    id: samples.len(),
                    identity: i.into(),
                    domain: d.into(),
                    features: vec![0.0],
                });
            }
        }
        Dataset::new(samples, 1).unwrap()
    }

    #[test]
    fn index_groups() {
        let ds = dataset(&[("a", "0", 2), ("a", "1", 2), ("b", "0", 2), ("b", "1", 2)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        assert_eq!(idx.groups().len(), 4);
        assert!(idx.groups().values().all(|g| g.len() == 2));

        let ds = dataset(&[("b", "1", 1), ("a", "0", 2), ("a", "1", 2)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        assert_eq!(idx.identities(), ["a", "b"]);
        assert_eq!(idx.group("b", "1"), &[0]);
        assert!(idx.group("b", "0").is_empty());

        let empty = Dataset::new(vec![], 1).unwrap();
        assert!(matches!(
            DatasetIndex::build(&empty),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn two_identity_tuple() {
        let ds = dataset(&[("a", "0", 2), ("a", "1", 2), ("b", "0", 2), ("b", "1", 2)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let spec = TupleSpec {
            k: 2,
            ..TupleSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let t = sample_tuple(&idx, &mut rng, &spec).unwrap();
            assert_ne!(t.identity_a, t.identity_b);
            assert_eq!(t.neg_same_ids.len(), 2);
            assert_eq!(t.neg_cross_ids.len(), 2);
        }
    }

    #[test]
    fn k_truncates_to_availability() {
        let ds = dataset(&[("a", "0", 3), ("a", "1", 3), ("b", "0", 6), ("b", "1", 3)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let spec = TupleSpec {
            k: 5,
            domain_policy: DomainPolicy::Fixed {
                p: "0".into(),
                q: "1".into(),
            },
            anchor_symmetric: false,
            ..TupleSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = sample_tuple(&idx, &mut rng, &spec).unwrap();
            if t.identity_b == "b" {
                assert_eq!(t.neg_same_ids.len(), 5);
                assert_eq!(t.neg_cross_ids.len(), 3);
            }
        }
    }

    #[test]
    fn single_identity_is_infeasible() {
        let ds = dataset(&[("a", "0", 3), ("a", "1", 3)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let err = sample_tuple(
            &idx,
            &mut ChaCha8Rng::seed_from_u64(0),
            &TupleSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn infeasible_names_constraint() {
        // No identity has two samples in any domain.
        let ds = dataset(&[("a", "0", 1), ("a", "1", 1), ("b", "0", 1), ("b", "1", 1)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let err = sample_tuple(
            &idx,
            &mut ChaCha8Rng::seed_from_u64(0),
            &TupleSpec::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains(">= 2 samples"), "{err}");

        // Anchor exists, but the other identity is missing from domain 1.
        let ds = dataset(&[("a", "0", 2), ("a", "1", 1), ("b", "0", 3)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let err = sample_tuple(
            &idx,
            &mut ChaCha8Rng::seed_from_u64(0),
            &TupleSpec::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("negative identity"), "{err}");

        let ds = dataset(&[("a", "0", 2), ("b", "0", 3)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let err = sample_tuple(
            &idx,
            &mut ChaCha8Rng::seed_from_u64(0),
            &TupleSpec::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("2 domains"), "{err}");
    }

    #[test]
    fn sparse_index_falls_back_to_scan() {
        // Only ("0" -> "1") is feasible; uniform draws hit the other order half the time.
        let ds = dataset(&[("a", "0", 2), ("a", "1", 1), ("b", "0", 1), ("b", "1", 1)]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let spec = TupleSpec {
            max_retries: 0,
            ..TupleSpec::default()
        };
        let t = sample_tuple(&idx, &mut ChaCha8Rng::seed_from_u64(9), &spec).unwrap();
        assert_eq!((t.identity_a.as_str(), t.domain_p.as_str()), ("a", "0"));
    }

    #[test]
    fn fixed_policy_validation() {
        let spec = TupleSpec {
            domain_policy: DomainPolicy::Fixed {
                p: "x".into(),
                q: "x".into(),
            },
            ..TupleSpec::default()
        };
        assert!(spec.validate().is_err());
        assert_eq!(
            "fixed:A:B".parse::<DomainPolicy>().unwrap().to_string(),
            "fixed:A:B"
        );
        assert!("fixed:A".parse::<DomainPolicy>().is_err());
    }

    #[test]
    fn epoch_determinism() {
        let ds = dataset(&[
            ("a", "0", 4),
            ("a", "1", 4),
            ("b", "0", 4),
            ("b", "1", 4),
            ("c", "0", 4),
            ("c", "1", 4),
        ]);
        let idx = DatasetIndex::build(&ds).unwrap();
        let spec = TupleSpec::default();
        let run =
            |seed| epoch_tuples(&idx, &mut ChaCha8Rng::seed_from_u64(seed), &spec, 30).unwrap();
        assert_eq!(run(1).len(), 30);
        assert_eq!(run(1), run(1));
        assert!(
            epoch_tuples(&idx, &mut ChaCha8Rng::seed_from_u64(1), &spec, 0)
                .unwrap()
                .is_empty()
        );
    }
}
