//! Metrics and the architecture comparison.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Tag;
use crate::grammar::{self, LabeledSentence};
use crate::models::{self, ArchKind, ArchSpec, HaltedBy, Model, ModelError, TrainConfig, TrainReport};
use crate::numcore::ParamStore;
use crate::persistence;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Evaluation of one model on one dataset. Intent fields are `None` for
/// kinds without an intent head, tag fields for kinds without tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub examples: usize,
    pub intent_accuracy: Option<f64>,
    pub intent_loss: Option<f64>,
    /// Teacher-forced: seq2seq decoders see the gold history. Counts every
    /// non-pad character plus the END position for seq2seq kinds.
    pub tag_accuracy: Option<f64>,
    pub tag_loss: Option<f64>,
    /// Greedy decoding over the same positions.
    pub free_running_tag_accuracy: Option<f64>,
    pub param_count: usize,
    pub model_bytes: usize,
    /// Mean wall-clock time of one `predict` call.
    pub mean_latency_ms: f64,
}

/// Positions of `ex` a free-running prediction gets right, out of
/// `|text|` (+1 for the END position of seq2seq kinds).
fn free_running_correct(ex: &LabeledSentence, tags: &[Tag], halted: Option<HaltedBy>) -> usize {
    let mut correct = ex.tags.iter().zip(tags).filter(|(g, p)| g == p).count();
    if tags.len() == ex.tags.len() && halted == Some(HaltedBy::EndToken) {
        correct += 1;
    }
    correct
}

pub fn evaluate(params: &ParamStore, arch: &ArchSpec, dataset: &[LabeledSentence]) -> Result<Metrics, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let s = models::score_indices(params, arch, dataset, &all)?;
    let n = s.examples as f64;

    let mut fr_correct = 0;
    let started = Instant::now();
    for ex in dataset {
        let p = models::predict(params, arch, &ex.text)?;
        fr_correct += free_running_correct(ex, &p.tags, p.halted_by);
    }
    let mean_latency_ms = started.elapsed().as_secs_f64() * 1e3 / n;

    let has_i = arch.kind.has_intent();
    let has_t = arch.kind.has_tags();
    let positions = s.tag_positions.max(1) as f64;
    Ok(Metrics {
        examples: s.examples,
        intent_accuracy: has_i.then(|| s.intent_correct as f64 / n),
        intent_loss: has_i.then(|| s.intent_loss_sum / n),
        tag_accuracy: has_t.then(|| s.tag_correct as f64 / positions),
        tag_loss: has_t.then(|| s.tag_loss_sum / positions),
        free_running_tag_accuracy: has_t.then(|| fr_correct as f64 / positions),
        param_count: params.param_count(),
        model_bytes: persistence::encoded_size(params, arch),
        mean_latency_ms,
    })
}

/// Published accuracy/loss for comparison only; never used as a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub intent_accuracy: Option<f64>,
    pub intent_loss: Option<f64>,
    pub tag_accuracy: Option<f64>,
    pub tag_loss: Option<f64>,
}

pub fn reference_values(kind: ArchKind) -> Option<ReferenceValues> {
    let r = |ia, il, ta, tl| Some(ReferenceValues { intent_accuracy: ia, intent_loss: il, tag_accuracy: ta, tag_loss: tl });
    match kind {
        ArchKind::S2sMtl => r(Some(0.996), Some(0.006), Some(0.994), Some(0.007)),
        ArchKind::MtlE2e => r(Some(0.98), Some(0.03), Some(0.991), Some(0.02)),
        ArchKind::SingleIntent => r(Some(0.96), Some(0.08), None, None),
        ArchKind::S2sTagger => r(None, None, Some(0.97), Some(0.02)),
        ArchKind::E2eTagger => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_baseline_hidden")]
    pub baseline_hidden: usize,
    #[serde(default = "default_s2s_mtl_hidden")]
    pub s2s_mtl_hidden: usize,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<ArchKind>,
    /// Seed the corpus was generated with, recorded in the fingerprint.
    #[serde(default)]
    pub corpus_seed: Option<u64>,
}

fn default_baseline_hidden() -> usize {
    models::DEFAULT_BASELINE_HIDDEN
}

fn default_s2s_mtl_hidden() -> usize {
    models::DEFAULT_S2S_MTL_HIDDEN
}

fn default_kinds() -> Vec<ArchKind> {
    ArchKind::ALL.to_vec()
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            baseline_hidden: default_baseline_hidden(),
            s2s_mtl_hidden: default_s2s_mtl_hidden(),
            kinds: default_kinds(),
            corpus_seed: None,
        }
    }
}

impl CompareConfig {
    pub fn arch_for(&self, kind: ArchKind) -> ArchSpec {
        let hidden = if kind == ArchKind::S2sMtl { self.s2s_mtl_hidden } else { self.baseline_hidden };
        ArchSpec::new(kind, hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFingerprint {
    pub seed: Option<u64>,
    pub size: usize,
    /// CRC-32 of the corpus as written in JSONL.
    pub hash: String,
}

pub fn fingerprint_corpus(corpus: &[LabeledSentence], seed: Option<u64>) -> CorpusFingerprint {
    let mut buf = Vec::new();
    grammar::write_corpus(&mut buf, corpus).expect("writing to memory");
    CorpusFingerprint { seed, size: corpus.len(), hash: format!("{:08x}", crc32fast::hash(&buf)) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub intent_accuracy: Option<f64>,
    pub tag_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchResult {
    pub arch: ArchSpec,
    pub metrics: Metrics,
    pub train: TrainReport,
    pub reference: Option<ReferenceValues>,
    /// Measured minus reference.
    pub delta: Option<Delta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeComparison {
    pub mtl_e2e_params: usize,
    pub s2s_mtl_params: usize,
    pub param_ratio: f64,
    pub hidden_ratio: f64,
    pub bytes_ratio: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub corpus: CorpusFingerprint,
    pub train_size: usize,
    pub val_size: usize,
    pub config: CompareConfig,
    pub results: Vec<ArchResult>,
    pub size: Option<SizeComparison>,
    pub omitted: Vec<ArchKind>,
}

impl ComparisonReport {
    pub fn result(&self, kind: ArchKind) -> Option<&ArchResult> {
        self.results.iter().find(|r| r.arch.kind == kind)
    }

    /// Equality ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &ComparisonReport) -> bool {
        let strip = |r: &ComparisonReport| {
            let mut r = r.clone();
            for a in &mut r.results {
                a.metrics.mean_latency_ms = 0.0;
                a.train.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
            }
            r
        };
        strip(self) == strip(other)
    }
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Trains every configured kind on the same split and evaluates each on the
/// shared validation examples. Returns the trained models in `kinds` order.
pub fn compare_architectures(
    corpus: &[LabeledSentence],
    cfg: &CompareConfig,
    mut on_epoch: impl FnMut(ArchKind, &models::EpochStats),
) -> Result<(ComparisonReport, Vec<Model>), EvalError> {
    let (train_idx, val_idx) = models::split_indices(corpus.len(), cfg.train.val_fraction, cfg.train.seed);
    let val: Vec<LabeledSentence> = val_idx.iter().map(|&i| corpus[i].clone()).collect();
    let mut results = Vec::new();
    let mut trained = Vec::new();
    for &kind in &cfg.kinds {
        let arch = cfg.arch_for(kind);
        let (params, train) = models::train_with_progress(&arch, corpus, &cfg.train, |e| on_epoch(kind, e))?;
        let metrics = evaluate(&params, &arch, &val)?;
        let reference = reference_values(kind);
        let delta = reference.map(|r| Delta {
            intent_accuracy: diff(metrics.intent_accuracy, r.intent_accuracy),
            tag_accuracy: diff(metrics.tag_accuracy, r.tag_accuracy),
        });
        results.push(ArchResult { arch, metrics, train, reference, delta });
        trained.push(Model { arch, params });
    }
    let size = size_comparison(cfg);
    let omitted = ArchKind::ALL.into_iter().filter(|k| !cfg.kinds.contains(k)).collect();
    let report = ComparisonReport {
        corpus: fingerprint_corpus(corpus, cfg.corpus_seed),
        train_size: train_idx.len(),
        val_size: val_idx.len(),
        config: cfg.clone(),
        results,
        size: Some(size),
        omitted,
    };
    Ok((report, trained))
}

/// Parameter and byte sizes of MTL_E2E against S2S_MTL at the configured widths.
pub fn size_comparison(cfg: &CompareConfig) -> SizeComparison {
    let big = cfg.arch_for(ArchKind::MtlE2e);
    let small = cfg.arch_for(ArchKind::S2sMtl);
    let (pb, ps) = (big.param_count(), small.param_count());
    let bytes = |a: &ArchSpec| persistence::FIXED_BYTES as f64 + 4.0 * a.param_count() as f64;
    SizeComparison {
        mtl_e2e_params: pb,
        s2s_mtl_params: ps,
        param_ratio: pb as f64 / ps as f64,
        hidden_ratio: big.hidden as f64 / small.hidden as f64,
        bytes_ratio: bytes(&big) / bytes(&small),
        note: "sizes follow from parameter counts; only ratios are compared, not absolute file sizes"
            .into(),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.3}", v))
}

fn signed(v: Option<f64>) -> String {
    v.map_or_else(|| "".into(), |v| format!(" ({v:+.3})"))
}

/// Human-readable table of a report.
pub fn render_table(r: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "corpus: {} sentences, hash {}, seed {}; split {}/{}",
        r.corpus.size,
        r.corpus.hash,
        r.corpus.seed.map_or_else(|| "?".into(), |v| v.to_string()),
        r.train_size,
        r.val_size
    );
    let _ = writeln!(
        s,
        "{:<14} {:>6} {:>10} {:>18} {:>8} {:>18} {:>8} {:>8} {:>6} {:>8}",
        "kind", "hidden", "params", "intent acc", "i-loss", "tag acc (tf)", "t-loss", "tag fr", "epoch", "secs"
    );
    for a in &r.results {
        let m = &a.metrics;
        let d = a.delta.as_ref();
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>10} {:>18} {:>8} {:>18} {:>8} {:>8} {:>6} {:>8.0}",
            a.arch.kind.name(),
            a.arch.hidden,
            m.param_count,
            format!("{}{}", pct(m.intent_accuracy), signed(d.and_then(|d| d.intent_accuracy))),
            pct(m.intent_loss),
            format!("{}{}", pct(m.tag_accuracy), signed(d.and_then(|d| d.tag_accuracy))),
            pct(m.tag_loss),
            pct(m.free_running_tag_accuracy),
            a.train.best_epoch,
            a.train.total_seconds()
        );
    }
    if let Some(z) = &r.size {
        let _ = writeln!(
            s,
            "size: MTL_E2E {} / S2S_MTL {} params = {:.3}x (hidden {:.1}x, bytes {:.3}x)",
            z.mtl_e2e_params, z.s2s_mtl_params, z.param_ratio, z.hidden_ratio, z.bytes_ratio
        );
        let _ = writeln!(s, "note: {}", z.note);
    }
    if !r.omitted.is_empty() {
        let names: Vec<&str> = r.omitted.iter().map(|k| k.name()).collect();
        let _ = writeln!(s, "omitted: {}", names.join(", "));
    }
    let _ = writeln!(s, "deltas in parentheses are against the reference values");
    s
}

/// Validation split of `corpus` as used by [`models::train`].
pub fn validation_split(corpus: &[LabeledSentence], cfg: &TrainConfig) -> Vec<LabeledSentence> {
    let (_, val) = models::split_indices(corpus.len(), cfg.val_fraction, cfg.seed);
    val.iter().map(|&i| corpus[i].clone()).collect()
}
