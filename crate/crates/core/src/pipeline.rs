//! End-to-end runs: training with analytic gradients through the shared
//! network, protocol evaluation, and the baseline comparison.
//!
//! Every random choice comes from a stream derived from the run seed, so a run
//! is a pure function of (config, data, seed).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::config::{LossMode, RunConfig};
use crate::dataset::{split_by_identity, split_enroll_probe, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    distance_matrix, embed_dataset, identify, verification_report, IdentReport, RocCurve, ScoreSet,
    VerificationReport, DEFAULT_FAR_LEVELS,
};
use crate::loss::{hetero_loss_grad, triplet_loss_grad, EmbeddingTuple};
use crate::net::{EmbeddingNet, ForwardTrace};
use crate::sampler::{epoch_tuples, sample_tuple, DatasetIndex, SampledTuple};
use crate::vector::format_sig;

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SAMPLER: u64 = 3;
const STREAM_ENROLL: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-seed for one consumer of randomness.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub active_fraction: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

pub const TRAINING_LOG_HEADER: &str = "epoch,mean_loss,mean_l1,mean_l2,active_fraction,lr";

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{TRAINING_LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch, r.mean_loss, r.mean_l1, r.mean_l2, r.active_fraction, r.lr
            );
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TRAINING_LOG_HEADER) {
            return Err(Error::parse(
                1,
                format!("expected header '{TRAINING_LOG_HEADER}'"),
            ));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::parse(n, "expected 6 fields"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(n, format!("invalid number '{s}'")))
            };
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| Error::parse(n, "invalid epoch"))?,
                mean_loss: num(f[1])?,
                mean_l1: num(f[2])?,
                mean_l2: num(f[3])?,
                active_fraction: num(f[4])?,
                lr: num(f[5])?,
            });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: EmbeddingNet,
    pub net: EmbeddingNet,
    pub log: TrainingLog,
}

/// Identity-disjoint `(train, test)` split used by both training and
/// evaluation.
pub fn protocol_split(cfg: &RunConfig, data: &Dataset) -> Result<(Dataset, Dataset)> {
    split_by_identity(
        data,
        cfg.eval.train_fraction,
        derive_seed(cfg.seed, STREAM_SPLIT),
    )
}

/// Trains on the training identities of `data` under `cfg.loss_mode`.
pub fn train(cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, _) = protocol_split(cfg, data)?;
    let net_cfg = cfg.net_config_for(data.feature_dim())?;
    let mut net = EmbeddingNet::init(net_cfg, derive_seed(cfg.seed, STREAM_INIT))?;
    let initial = net.clone();
    let index = DatasetIndex::build(&train_set)?;
    let features: BTreeMap<usize, &[f64]> = train_set
        .samples()
        .iter()
        .map(|s| (s.id, s.features.as_slice()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SAMPLER));
    // Surface infeasibility before any work, without consuming the stream.
    sample_tuple(&index, &mut rng.clone(), &cfg.tuple_spec)?;

    let mut adam = AdamState::new(cfg.optimizer, net.params().len())?;
    let mut log = TrainingLog::default();
    for epoch in 1..=cfg.epochs {
        let tuples = epoch_tuples(&index, &mut rng, &cfg.tuple_spec, cfg.tuples_per_epoch)?;
        let mut stats = EpochStats::default();
        for batch in tuples.chunks(cfg.batch_size) {
            let grads = batch_gradient(cfg, &net, &features, batch, &mut stats)?;
            if !stats.loss_sum.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            adam.step(net.params_mut(), &grads)?;
        }
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        let n = stats.tuples as f64;
        log.records.push(EpochRecord {
            epoch,
            mean_loss: stats.loss_sum / n,
            mean_l1: stats.l1_sum / n,
            mean_l2: stats.l2_sum / n,
            active_fraction: stats.active_sum / n,
            lr: adam.learning_rate,
        });
        adam.decay_learning_rate();
    }
    Ok(TrainOutcome { initial, net, log })
}

#[derive(Debug, Default)]
struct EpochStats {
    tuples: usize,
    loss_sum: f64,
    l1_sum: f64,
    l2_sum: f64,
    active_sum: f64,
}

/// Gradient of the batch-mean loss with respect to the network parameters.
fn batch_gradient(
    cfg: &RunConfig,
    net: &EmbeddingNet,
    features: &BTreeMap<usize, &[f64]>,
    batch: &[SampledTuple],
    stats: &mut EpochStats,
) -> Result<Vec<f64>> {
    let used = |t: &SampledTuple| -> Vec<usize> {
        match cfg.loss_mode {
            LossMode::Hetero => t.all_ids().collect(),
            LossMode::TripletBaseline => vec![t.anchor_id, t.pos_same_id, t.neg_same_ids[0]],
        }
    };
    // Each distinct sample is forwarded once; gradients from every tuple that
    // uses it are summed before backpropagation.
    let mut traces: BTreeMap<usize, (ForwardTrace, Vec<f64>)> = BTreeMap::new();
    for t in batch {
        for id in used(t) {
            if let std::collections::btree_map::Entry::Vacant(e) = traces.entry(id) {
                let x = features
                    .get(&id)
                    .ok_or_else(|| Error::arg(format!("sample {id} missing from training set")))?;
                let trace = net.forward_trace(x)?;
                let zeros = vec![0.0; trace.output.len()];
                e.insert((trace, zeros));
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let emb = |id: &usize| traces[id].0.output.clone();
    let mut contributions: Vec<(usize, Vec<f64>)> = Vec::new();
    for t in batch {
        match cfg.loss_mode {
            LossMode::Hetero => {
                let tuple = EmbeddingTuple {
                    anchor: emb(&t.anchor_id),
                    pos_same: emb(&t.pos_same_id),
                    pos_cross: emb(&t.pos_cross_id),
                    negs_same: t.neg_same_ids.iter().map(emb).collect(),
                    negs_cross: t.neg_cross_ids.iter().map(emb).collect(),
                };
                let (value, grad) = hetero_loss_grad(&tuple, cfg.margins)?;
                stats.loss_sum += value.total;
                stats.l1_sum += value.l1;
                stats.l2_sum += value.l2;
                stats.active_sum += (value.l1_active as u8 + value.l2_active as u8) as f64 / 2.0;
                contributions.push((t.anchor_id, grad.d_anchor));
                contributions.push((t.pos_same_id, grad.d_pos_same));
                contributions.push((t.pos_cross_id, grad.d_pos_cross));
                contributions.extend(t.neg_same_ids.iter().copied().zip(grad.d_negs_same));
                contributions.extend(t.neg_cross_ids.iter().copied().zip(grad.d_negs_cross));
            }
            LossMode::TripletBaseline => {
                let neg = t.neg_same_ids[0];
                let (loss, [da, dp, dn]) = triplet_loss_grad(
                    &emb(&t.anchor_id),
                    &emb(&t.pos_same_id),
                    &emb(&neg),
                    cfg.margins.alpha1,
                )?;
                stats.loss_sum += loss;
                stats.l1_sum += loss;
                stats.active_sum += if loss > 0.0 { 1.0 } else { 0.0 };
                contributions.push((t.anchor_id, da));
                contributions.push((t.pos_same_id, dp));
                contributions.push((neg, dn));
            }
        }
        stats.tuples += 1;
    }
    for (id, g) in contributions {
        let acc = &mut traces.get_mut(&id).expect("forwarded sample").1;
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v * scale;
        }
    }
    let mut grads = vec![0.0; net.params().len()];
    for (trace, g) in traces.values() {
        if g.iter().any(|&v| v != 0.0) {
            net.accumulate_backward(trace, g, &mut grads)?;
        }
    }
    Ok(grads)
}

/// Identification plus verification on one gallery/probe pairing.
#[derive(Debug, Clone)]
pub struct MatchReport {
    pub ident: IdentReport,
    pub verification: VerificationReport,
    pub roc: RocCurve,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// Gallery and probes drawn from the test identities across all domains.
    pub overall: MatchReport,
    /// Gallery from the first domain, probes from every other domain.
    pub cross_domain: Option<MatchReport>,
    pub gallery_domain: Option<String>,
}

pub fn match_sets(
    net: &EmbeddingNet,
    gallery: &Dataset,
    probes: &Dataset,
    strict: bool,
) -> Result<MatchReport> {
    let g_emb = embed_dataset(net, gallery)?;
    let p_emb = embed_dataset(net, probes)?;
    let g_vecs: Vec<&Vec<f64>> = gallery.samples().iter().map(|s| &g_emb[&s.id]).collect();
    let p_vecs: Vec<&Vec<f64>> = probes.samples().iter().map(|s| &p_emb[&s.id]).collect();
    let g_ids: Vec<&str> = gallery
        .samples()
        .iter()
        .map(|s| s.identity.as_str())
        .collect();
    let p_ids: Vec<&str> = probes
        .samples()
        .iter()
        .map(|s| s.identity.as_str())
        .collect();
    let dist = distance_matrix(&p_vecs, &g_vecs)?;
    let ident = identify(&dist, &p_ids, &g_ids, strict)?;
    let scores = ScoreSet::from_matrix(&dist, &p_ids, &g_ids)?;
    let (roc, verification) = verification_report(&scores, &DEFAULT_FAR_LEVELS)?;
    Ok(MatchReport {
        ident,
        verification,
        roc,
    })
}

/// Evaluates on the held-out identities of `data`.
pub fn evaluate(cfg: &RunConfig, net: &EmbeddingNet, data: &Dataset) -> Result<EvalOutcome> {
    if data.feature_dim() != net.config().input_dim {
        return Err(Error::shape(format!(
            "checkpoint expects {} features, data has {}",
            net.config().input_dim,
            data.feature_dim()
        )));
    }
    let (_, test) = protocol_split(cfg, data)?;
    let enroll_seed = derive_seed(cfg.seed, STREAM_ENROLL);
    let enroll = cfg.eval.enroll_per_identity;
    let (gallery, probes) = split_enroll_probe(&test, enroll, enroll_seed)?;
    let overall = match_sets(net, &gallery, &probes, cfg.eval.strict)?;

    let domains = test.domains();
    let mut cross_domain = None;
    let mut gallery_domain = None;
    if domains.len() >= 2 {
        let home = &domains[0];
        let home_set = test.in_domain(home);
        let probes = test.filter(|s| &s.domain != home);
        // Skipped when some identity is too thin in the gallery domain.
        if let Ok((gallery, _)) = split_enroll_probe(&home_set, enroll, enroll_seed) {
            if gallery.identities() == test.identities() {
                cross_domain = Some(match_sets(net, &gallery, &probes, cfg.eval.strict)?);
                gallery_domain = Some(home.clone());
            }
        }
    }
    Ok(EvalOutcome {
        overall,
        cross_domain,
        gallery_domain,
    })
}

fn report_lines(prefix: &str, r: &MatchReport, out: &mut Vec<(String, f64)>) {
    out.push((format!("{prefix}rank1"), r.ident.rank1()));
    out.push((format!("{prefix}eer"), r.verification.eer));
    for (f, g) in &r.verification.gar_at {
        out.push((format!("{prefix}gar@{f}"), *g));
    }
}

impl EvalOutcome {
    /// Ordered `(key, value)` metrics.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        report_lines("", &self.overall, &mut out);
        if let Some(c) = &self.cross_domain {
            report_lines("cross.", c, &mut out);
        }
        out
    }

    pub fn to_report(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.metrics() {
            let _ = writeln!(s, "{k}={}", format_sig(v, 9));
        }
        let _ = writeln!(s, "n_probes={}", self.overall.ident.n_probes);
        let _ = writeln!(s, "n_gallery={}", self.overall.ident.n_gallery);
        if let (Some(c), Some(d)) = (&self.cross_domain, &self.gallery_domain) {
            let _ = writeln!(s, "cross.gallery_domain={d}");
            let _ = writeln!(s, "cross.n_probes={}", c.ident.n_probes);
            let _ = writeln!(s, "cross.n_gallery={}", c.ident.n_gallery);
        }
        s
    }
}

/// Parses a flat `key=value` report back into ordered pairs.
pub fn parse_report(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::parse(i + 1, "expected key=value"))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: LossMode,
    pub train: TrainOutcome,
    pub eval: EvalOutcome,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub baseline: ModeRun,
    pub hetero: ModeRun,
}

/// Trains the triplet baseline and the heterogeneity-aware loss from the same
/// seed, data and sampler stream, and evaluates both on the same split.
pub fn compare(cfg: &RunConfig, data: &Dataset) -> Result<Comparison> {
    let run = |mode: LossMode| -> Result<ModeRun> {
        let cfg = RunConfig {
            loss_mode: mode,
            ..cfg.clone()
        };
        let train = train(&cfg, data)?;
        let eval = evaluate(&cfg, &train.net, data)?;
        Ok(ModeRun { mode, train, eval })
    };
    Ok(Comparison {
        baseline: run(LossMode::TripletBaseline)?,
        hetero: run(LossMode::Hetero)?,
    })
}

impl Comparison {
    /// `hetero - baseline` for every metric both runs report.
    pub fn deltas(&self) -> Vec<(String, f64)> {
        let base: BTreeMap<String, f64> = self.baseline.eval.metrics().into_iter().collect();
        self.hetero
            .eval
            .metrics()
            .into_iter()
            .filter_map(|(k, v)| base.get(&k).map(|b| (k, v - b)))
            .collect()
    }

    pub fn to_report(&self) -> String {
        let mut s = String::new();
        for run in [&self.baseline, &self.hetero] {
            let prefix = run.mode.to_string();
            let log = &run.train.log.records;
            if let (Some(first), Some(last)) = (log.first(), log.last()) {
                let _ = writeln!(
                    s,
                    "{prefix}.first_epoch_loss={}",
                    format_sig(first.mean_loss, 9)
                );
                let _ = writeln!(
                    s,
                    "{prefix}.final_epoch_loss={}",
                    format_sig(last.mean_loss, 9)
                );
            }
            for line in run.eval.to_report().lines() {
                let _ = writeln!(s, "{prefix}.{line}");
            }
        }
        for (k, d) in self.deltas() {
            let _ = writeln!(s, "delta.{k}={}", format_sig(d, 9));
        }
        s
    }
}
