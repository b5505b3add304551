//! Turning a fitted state into answers: truths, source reliability,
//! groups, plus the plurality-vote baseline and accuracy metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::claims::ClaimSet;
use crate::error::{Error, Result};
use crate::inference::{FitResult, VariationalState};
use crate::priors::Hyperparams;

/// Index of the largest entry, smallest index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthEstimate {
    pub value: usize,
    pub confidence: f64,
}

/// MAP value of every object with its posterior probability.
pub fn extract_truths(state: &VariationalState) -> Vec<TruthEstimate> {
    (0..state.num_objects())
        .map(|m| {
            let nu = state.nu(m);
            let value = argmax(nu);
            TruthEstimate { value, confidence: nu[value] }
        })
        .collect()
}

/// Reliability(S_n) = Σ_l q(g_n = l) E[u_l], with the tail mass scored at
/// the prior mean b1 / (b1 + b0).
pub fn source_reliability(state: &VariationalState, h: &Hyperparams) -> Vec<f64> {
    let expected: Vec<f64> = (0..state.truncation()).map(|l| state.expected_reliability(l)).collect();
    (0..state.num_sources())
        .map(|n| {
            let explicit: f64 = state.phi_row(n).iter().zip(&expected).map(|(p, u)| p * u).sum();
            explicit + state.tail_mass(n) * h.prior_reliability()
        })
        .collect()
}

/// 1-based ranks, highest score first; ties go to the smaller index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (position, &n) in order.iter().enumerate() {
        ranks[n] = position + 1;
    }
    ranks
}

/// MAP explicit group of each source.
pub fn map_groups(state: &VariationalState) -> Vec<usize> {
    (0..state.num_sources()).map(|n| argmax(state.phi_row(n))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoteOutcome {
    pub value: usize,
    pub votes: usize,
    /// False when nobody claimed the object; `value` is then 0.
    pub claimed: bool,
}

/// Plurality vote per object, ties to the smallest value index.
pub fn voting_baseline(cs: &ClaimSet) -> Vec<VoteOutcome> {
    (0..cs.num_objects())
        .map(|m| {
            let mut counts = vec![0usize; cs.domain_size(m)];
            for c in cs.column(m) {
                counts[c.value] += 1;
            }
            let mut value = 0;
            for (k, &count) in counts.iter().enumerate() {
                if count > counts[value] {
                    value = k;
                }
            }
            VoteOutcome {
                value,
                votes: counts[value],
                claimed: !cs.column(m).is_empty(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelStats {
    /// None when the label was never predicted.
    pub precision: Option<f64>,
    /// None when the label never occurs in the ground truth.
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub predicted: usize,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation<V: Ord> {
    pub covered: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_label: BTreeMap<V, LabelStats>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Compare predictions against a ground-truth subset. Objects in the truth
/// without a prediction count as errors.
pub fn evaluate<K: Ord, V: Ord + Clone>(
    predictions: &BTreeMap<K, V>,
    truth: &BTreeMap<K, V>,
) -> Result<Evaluation<V>> {
    if truth.is_empty() {
        return Err(Error::InvalidInput("ground truth is empty".into()));
    }
    let mut tp: BTreeMap<V, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<V, usize> = BTreeMap::new();
    let mut support: BTreeMap<V, usize> = BTreeMap::new();
    let mut correct = 0;
    for (key, actual) in truth {
        *support.entry(actual.clone()).or_default() += 1;
        if let Some(guess) = predictions.get(key) {
            *predicted.entry(guess.clone()).or_default() += 1;
            if guess == actual {
                correct += 1;
                *tp.entry(actual.clone()).or_default() += 1;
            }
        }
    }
    let labels: std::collections::BTreeSet<V> =
        support.keys().chain(predicted.keys()).cloned().collect();
    let per_label: BTreeMap<V, LabelStats> = labels
        .into_iter()
        .map(|label| {
            let hits = tp.get(&label).copied().unwrap_or(0);
            let pred = predicted.get(&label).copied().unwrap_or(0);
            let sup = support.get(&label).copied().unwrap_or(0);
            let stats = LabelStats {
                precision: (pred > 0).then(|| hits as f64 / pred as f64),
                recall: (sup > 0).then(|| hits as f64 / sup as f64),
                true_positives: hits,
                predicted: pred,
                support: sup,
            };
            (label, stats)
        })
        .collect();
    Ok(Evaluation {
        covered: truth.len(),
        correct,
        accuracy: correct as f64 / truth.len() as f64,
        macro_precision: mean(per_label.values().filter_map(|s| s.precision)),
        macro_recall: mean(per_label.values().filter_map(|s| s.recall)),
        per_label,
    })
}

/// Mean precision and recall of `positive` across independent runs (one
/// per tag, say). Runs where the quantity is undefined are skipped.
pub fn average_precision_recall<V: Ord>(runs: &[Evaluation<V>], positive: &V) -> (Option<f64>, Option<f64>) {
    let stats = || runs.iter().filter_map(|e| e.per_label.get(positive));
    (
        mean(stats().filter_map(|s| s.precision)),
        mean(stats().filter_map(|s| s.recall)),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelProbability {
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectReport {
    pub object_id: String,
    pub value_label: String,
    pub value_index: usize,
    pub confidence: f64,
    pub posterior: Vec<LabelProbability>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceReport {
    pub source_id: String,
    pub index: usize,
    pub score: f64,
    pub rank: usize,
    pub map_group: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub index: usize,
    pub expected_reliability: f64,
    pub effective_size: f64,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceReport {
    pub config: serde_json::Value,
    pub hyperparams: Hyperparams,
    pub elbo: f64,
    pub initial_elbo: f64,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub objects: Vec<ObjectReport>,
    pub sources: Vec<SourceReport>,
    pub groups: Vec<GroupReport>,
}

impl InferenceReport {
    pub fn new(cs: &ClaimSet, h: &Hyperparams, fit: &FitResult, config: serde_json::Value) -> Self {
        let state = &fit.state;
        let truths = extract_truths(state);
        let objects = truths
            .iter()
            .enumerate()
            .map(|(m, t)| {
                let domain = cs.object(m);
                ObjectReport {
                    object_id: domain.id().to_owned(),
                    value_label: domain.labels()[t.value].clone(),
                    value_index: t.value,
                    confidence: t.confidence,
                    posterior: domain
                        .labels()
                        .iter()
                        .zip(state.nu(m))
                        .map(|(label, &p)| LabelProbability { label: label.clone(), probability: p })
                        .collect(),
                }
            })
            .collect();

        let scores = source_reliability(state, h);
        let ranks = rank_descending(&scores);
        let groups_of = map_groups(state);
        let sources = (0..cs.num_sources())
            .map(|n| SourceReport {
                source_id: cs.source_id(n).to_owned(),
                index: n,
                score: scores[n],
                rank: ranks[n],
                map_group: groups_of[n],
            })
            .collect();

        let groups = (0..state.truncation())
            .map(|l| GroupReport {
                index: l,
                expected_reliability: state.expected_reliability(l),
                effective_size: state.effective_size(l),
                members: (0..cs.num_sources())
                    .filter(|&n| groups_of[n] == l)
                    .map(|n| cs.source_id(n).to_owned())
                    .collect(),
            })
            .collect();

        Self {
            config,
            hyperparams: *h,
            elbo: fit.final_elbo(),
            initial_elbo: fit.initial_elbo,
            elbo_trace: fit.elbo_trace.clone(),
            iterations: fit.iterations,
            converged: fit.converged,
            warnings: fit.warnings.clone(),
            objects,
            sources,
            groups,
        }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// `object_id,value_label,confidence`, preceded by a `#` provenance line.
    pub fn write_truths_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = provenance_writer(writer, &self.config)?;
        w.write_record(["object_id", "value_label", "confidence"]).map_err(csv_err)?;
        for o in &self.objects {
            w.write_record([o.object_id.as_str(), o.value_label.as_str(), &o.confidence.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `source_id,score,rank,map_group` in source order.
    pub fn write_reliability_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = provenance_writer(writer, &self.config)?;
        w.write_record(["source_id", "score", "rank", "map_group"]).map_err(csv_err)?;
        for s in &self.sources {
            w.write_record([
                s.source_id.as_str(),
                &s.score.to_string(),
                &s.rank.to_string(),
                &s.map_group.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Top-k and bottom-k sources side by side.
    pub fn ranking_table(&self, k: usize) -> String {
        let mut by_rank: Vec<&SourceReport> = self.sources.iter().collect();
        by_rank.sort_by_key(|s| s.rank);
        let k = k.min(by_rank.len());
        let top = &by_rank[..k];
        let bottom: Vec<&SourceReport> = by_rank.iter().rev().take(k).copied().collect();
        let width = by_rank
            .iter()
            .map(|s| s.source_id.chars().count())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:>8}    {:>4}  {:<width$}  {:>8}",
            "rank", "top", "score", "rank", "bottom", "score"
        );
        for i in 0..k {
            let (t, b) = (top[i], bottom[i]);
            let _ = writeln!(
                out,
                "{:>4}  {:<width$}  {:>8.4}    {:>4}  {:<width$}  {:>8.4}",
                t.rank, t.source_id, t.score, b.rank, b.source_id, b.score
            );
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// CSV writer whose first line is `# config=<json>`.
pub(crate) fn provenance_writer<W: Write>(
    mut writer: W,
    config: &serde_json::Value,
) -> Result<csv::Writer<W>> {
    writeln!(writer, "# config={}", serde_json::to_string(config)?)?;
    Ok(csv::Writer::from_writer(writer))
}

/// Read a two-or-more-column `object_id,value_label,...` CSV (header row,
/// `#` comment lines skipped) into a map.
pub fn read_label_csv<R: std::io::Read>(input: R) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::parse(e.position().map(|p| p.line() as usize).unwrap_or(0), e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() < 2 {
            return Err(Error::parse(line, "expected at least object_id,value_label"));
        }
        if map.insert(record[0].to_owned(), record[1].to_owned()).is_some() {
            return Err(Error::parse(line, format!("object `{}` listed twice", &record[0])));
        }
    }
    Ok(map)
}
