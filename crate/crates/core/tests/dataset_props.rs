use std::collections::{BTreeMap, BTreeSet};

use hetero_embed::dataset::{
    generate_synthetic, load_manifest, parse_manifest, split_by_identity, split_enroll_probe,
    Dataset, DomainShift, Sample, SynthConfig,
};
use proptest::prelude::*;

fn per_identity_domain_means(ds: &Dataset) -> BTreeMap<(String, String), Vec<f64>> {
    let mut sums: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for s in ds.samples() {
        let e = sums
            .entry((s.identity.clone(), s.domain.clone()))
            .or_insert_with(|| (vec![0.0; ds.feature_dim()], 0));
        for (a, f) in e.0.iter_mut().zip(&s.features) {
            *a += f;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(k, (v, n))| (k, v.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

fn no_shift(seed: u64, offset: f64) -> SynthConfig {
    SynthConfig {
        domain_shift: DomainShift {
            rotation_angle_degrees: 0.0,
            offset_magnitude: offset,
            noise_scale: 0.0,
        },
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn unshifted_domains_share_means() {
    let cfg = no_shift(42, 0.0);
    let ds = generate_synthetic(&cfg).unwrap();
    let means = per_identity_domain_means(&ds);
    let n = cfg.samples_per_identity_per_domain as f64;
    // Difference of two independent means: sd = spread * sqrt(2 / n).
    let bound = 3.0 * cfg.cluster_spread * (2.0 / n).sqrt();
    let (mut checks, mut violations) = (0, 0);
    for id in ds.identities() {
        let a = &means[&(id.clone(), "A".to_string())];
        let b = &means[&(id.clone(), "B".to_string())];
        for (x, y) in a.iter().zip(b) {
            checks += 1;
            if (x - y).abs() > bound {
                violations += 1;
            }
        }
    }
    assert!(
        violations as f64 <= 0.01 * checks as f64,
        "{violations}/{checks}"
    );

    // Pooled over identities, the literal 3 * spread / sqrt(n) bound applies per coordinate.
    let pooled = |dom: &str| {
        let part = ds.in_domain(dom);
        let mut m = vec![0.0; ds.feature_dim()];
        for s in part.samples() {
            for (a, f) in m.iter_mut().zip(&s.features) {
                *a += f / part.len() as f64;
            }
        }
        m
    };
    let n_pooled = ds.in_domain("A").len() as f64;
    for (x, y) in pooled("A").iter().zip(pooled("B")) {
        assert!((x - y).abs() <= 3.0 * cfg.cluster_spread / n_pooled.sqrt());
    }
}

#[test]
fn larger_offset_separates_domains_further() {
    let mean_gap = |offset: f64| {
        let ds = generate_synthetic(&no_shift(7, offset)).unwrap();
        let means = per_identity_domain_means(&ds);
        let ids = ds.identities();
        ids.iter()
            .map(|id| {
                let a = &means[&(id.clone(), "A".to_string())];
                let b = &means[&(id.clone(), "B".to_string())];
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / ids.len() as f64
    };
    assert!(mean_gap(2.0) > mean_gap(0.0));
}

#[test]
fn manifest_round_trip_is_byte_exact() {
    let cfg = SynthConfig {
        n_identities: 6,
        samples_per_identity_per_domain: 3,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.hem");
    ds.save_manifest(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_manifest_string(), text);
}

fn labeled(identities: usize, per: usize) -> Dataset {
    let mut samples = Vec::new();
    for i in 0..identities {
        for j in 0..per {
            samples.push(Sample {
                id: samples.len(),
                identity: format!("s{i:03}"),
                domain: ["A", "B"][j % 2].into(),
                features: vec![i as f64, j as f64],
            });
        }
    }
    Dataset::new(samples, 2).unwrap()
}

proptest! {
    #[test]
    fn features_survive_text_encoding(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..6)) {
        let ds = Dataset::new(vec![Sample { id: 0, identity: "x".into(), domain: "d".into(), features: values.clone() }], values.len()).unwrap();
        let back = parse_manifest(&ds.to_manifest_string()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.samples()[0].features), bits(&values));
    }

    #[test]
    fn identity_split_is_a_partition(n in 2usize..40, per in 1usize..4, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let ds = labeled(n, per);
        let (train, test) = split_by_identity(&ds, frac, seed).unwrap();
        let tr: BTreeSet<String> = train.identities().into_iter().collect();
        let te: BTreeSet<String> = test.identities().into_iter().collect();
        prop_assert!(tr.is_disjoint(&te));
        prop_assert_eq!(tr.len() + te.len(), n);
        prop_assert!(!tr.is_empty() && !te.is_empty());
        let expected = ((frac * n as f64).round() as usize).clamp(1, n - 1);
        prop_assert_eq!(tr.len(), expected);
        prop_assert_eq!(train.len() + test.len(), ds.len());
    }

    #[test]
    fn enroll_split_counts(n in 1usize..10, per in 2usize..6, seed in any::<u64>()) {
        let ds = labeled(n, per);
        let enroll = per - 1;
        let (g, p) = split_enroll_probe(&ds, enroll, seed).unwrap();
        prop_assert_eq!(g.len(), n * enroll);
        prop_assert_eq!(p.len(), n * (per - enroll));
        let ids: BTreeSet<usize> = g.samples().iter().chain(p.samples()).map(|s| s.id).collect();
        prop_assert_eq!(ids.len(), ds.len());
    }
}
