//! The five architectures: an intent classifier, an aligned per-character
//! tagger, their hard-parameter-sharing combination, a seq2seq tagger, and
//! the seq2seq multi-task model whose intent branch reads the encoder.
//!
//! | kind            | tensors                                                    |
//! |-----------------|------------------------------------------------------------|
//! | `SINGLE_INTENT` | `enc.{W,U,b}`, `intent.out.{W,b}`                          |
//! | `E2E_TAGGER`    | `enc.{W,U,b}`, `tag.out.{W,b}`                             |
//! | `MTL_E2E`       | `enc.{W,U,b}`, `tag.out.{W,b}`, `intent.out.{W,b}`         |
//! | `S2S_TAGGER`    | `enc.{W,U,b}`, `dec.{W,U,b}`, `dec.out.{W,b}`              |
//! | `S2S_MTL`       | `S2S_TAGGER` + `cls.{W,U,b}`, `cls.out.{W,b}`              |
//!
//! LSTM shapes are `W: 4h × in`, `U: 4h × h`, `b: 4h`; dense heads are
//! `W: out × h`, `b: out`. The encoder reads 128-way one-hot characters, the
//! decoder 19-way one-hot tags, and the intent branch the encoder's per-step
//! outputs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{self, Batch, EncodingError, Intent, Tag, CHAR_DIM, INTENT_DIM, TAG_DIM};
use crate::grammar::LabeledSentence;
use crate::numcore::{
    self, adam_step, dense_backward_raw, dense_forward_raw, init_params, lstm_seq_backward, lstm_seq_forward, softmax_rows,
    AdamConfig, AdamState, Init, LstmGrads, LstmGradsMut, LstmParams, LstmSeq, NumError, ParamSpec, ParamStore, SeqInput,
    Tensor,
};
use crate::rng;

pub const DEFAULT_BASELINE_HIDDEN: usize = 512;
pub const DEFAULT_S2S_MTL_HIDDEN: usize = 128;
pub const MIN_HIDDEN: usize = 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("corpus has {0} examples; at least 10 are needed")]
    CorpusTooSmall(usize),
    #[error("empty input text")]
    EmptyInput,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArchKind {
    SingleIntent,
    E2eTagger,
    MtlE2e,
    S2sTagger,
    S2sMtl,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] =
        [ArchKind::SingleIntent, ArchKind::E2eTagger, ArchKind::MtlE2e, ArchKind::S2sTagger, ArchKind::S2sMtl];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::SingleIntent => "SINGLE_INTENT",
            ArchKind::E2eTagger => "E2E_TAGGER",
            ArchKind::MtlE2e => "MTL_E2E",
            ArchKind::S2sTagger => "S2S_TAGGER",
            ArchKind::S2sMtl => "S2S_MTL",
        }
    }

    /// Flag spelling used on the command line.
    pub fn flag(self) -> &'static str {
        match self {
            ArchKind::SingleIntent => "single-intent",
            ArchKind::E2eTagger => "e2e-tagger",
            ArchKind::MtlE2e => "mtl-e2e",
            ArchKind::S2sTagger => "s2s-tagger",
            ArchKind::S2sMtl => "s2s-mtl",
        }
    }

    pub fn has_intent(self) -> bool {
        matches!(self, ArchKind::SingleIntent | ArchKind::MtlE2e | ArchKind::S2sMtl)
    }

    pub fn has_tags(self) -> bool {
        !matches!(self, ArchKind::SingleIntent)
    }

    pub fn is_seq2seq(self) -> bool {
        matches!(self, ArchKind::S2sTagger | ArchKind::S2sMtl)
    }

    pub fn default_hidden(self) -> usize {
        match self {
            ArchKind::S2sMtl => DEFAULT_S2S_MTL_HIDDEN,
            _ => DEFAULT_BASELINE_HIDDEN,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.flag() == s || k.name() == s)
            .ok_or_else(|| ModelError::InvalidArch(format!("unknown kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub hidden: usize,
}

impl ArchSpec {
    pub fn new(kind: ArchKind, hidden: usize) -> Self {
        Self { kind, hidden }
    }

    pub fn with_default_hidden(kind: ArchKind) -> Self {
        Self { kind, hidden: kind.default_hidden() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden < MIN_HIDDEN {
            return Err(ModelError::InvalidArch(format!("hidden {} below {MIN_HIDDEN}", self.hidden)));
        }
        Ok(())
    }

    /// Names, shapes and initializers of every tensor of this architecture.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let h = self.hidden;
        let lstm = |prefix: &str, inp: usize| {
            vec![
                ParamSpec::new(format!("{prefix}.W"), &[4 * h, inp], Init::Glorot),
                ParamSpec::new(format!("{prefix}.U"), &[4 * h, h], Init::Glorot),
                ParamSpec::new(format!("{prefix}.b"), &[4 * h], Init::LstmBias { hidden: h }),
            ]
        };
        let dense = |prefix: &str, out: usize| {
            vec![
                ParamSpec::new(format!("{prefix}.W"), &[out, h], Init::Glorot),
                ParamSpec::new(format!("{prefix}.b"), &[out], Init::Zeros),
            ]
        };
        let mut specs = lstm("enc", CHAR_DIM);
        match self.kind {
            ArchKind::SingleIntent => specs.extend(dense("intent.out", INTENT_DIM)),
            ArchKind::E2eTagger => specs.extend(dense("tag.out", TAG_DIM)),
            ArchKind::MtlE2e => {
                specs.extend(dense("tag.out", TAG_DIM));
                specs.extend(dense("intent.out", INTENT_DIM));
            }
            ArchKind::S2sTagger | ArchKind::S2sMtl => {
                specs.extend(lstm("dec", TAG_DIM));
                specs.extend(dense("dec.out", TAG_DIM));
                if self.kind == ArchKind::S2sMtl {
                    specs.extend(lstm("cls", h));
                    specs.extend(dense("cls.out", INTENT_DIM));
                }
            }
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Checks that `params` has exactly this architecture's tensors.
    pub fn check_params(&self, params: &ParamStore) -> Result<(), ModelError> {
        let specs = self.param_specs();
        if specs.len() != params.len() {
            return Err(ModelError::InvalidArch(format!("expected {} tensors, found {}", specs.len(), params.len())));
        }
        for s in specs {
            let t = params.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(ModelError::InvalidArch(format!("{} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
        }
        Ok(())
    }
}

/// Fresh parameters for `arch`.
pub fn build(arch: &ArchSpec, seed: u64) -> Result<ParamStore, ModelError> {
    arch.validate()?;
    Ok(init_params(&arch.param_specs(), seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub intent: f64,
    pub tag: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { intent: 1.0, tag: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub intent: Option<f64>,
    pub tag: Option<f64>,
    pub total: f64,
}

fn to_time_major<T: Copy>(src: &[T], rows: usize, steps: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for t in 0..steps {
        for r in 0..rows {
            out.push(src[r * steps + t]);
        }
    }
    out
}

fn dense_head(params: &ParamStore, prefix: &str, x: &[f64], rows: usize) -> Result<Vec<f64>, ModelError> {
    let w = params.get(&format!("{prefix}.W"))?;
    let b = params.get(&format!("{prefix}.b"))?;
    let inp = w.cols();
    if x.len() != rows * inp {
        return Err(NumError::ShapeMismatch(format!("{prefix} input")).into());
    }
    let mut y = vec![0.0; rows * b.len()];
    dense_forward_raw(x, rows, inp, w.data(), b.data(), &mut y);
    Ok(y)
}

/// Activations of one forward pass over a batch.
struct ForwardPass {
    rows: usize,
    steps: usize,
    enc: LstmSeq,
    dec: Option<LstmSeq>,
    cls: Option<LstmSeq>,
    /// `rows × 8`.
    intent_logits: Option<Vec<f64>>,
    /// Time-major `steps × rows × 19` (encoder steps for aligned taggers,
    /// decoder steps for seq2seq).
    tag_logits: Option<Vec<f64>>,
    /// Time-major targets and mask matching `tag_logits`.
    tag_targets: Vec<usize>,
    tag_mask: Vec<f64>,
    enc_mask: Vec<f64>,
}

fn run_forward(params: &ParamStore, arch: &ArchSpec, batch: &Batch) -> Result<ForwardPass, ModelError> {
    let (rows, steps, h) = (batch.rows, batch.max_len, arch.hidden);
    let zeros = vec![0.0; rows * h];
    let enc_mask = to_time_major(&batch.mask, rows, steps);
    let enc_p = LstmParams::from_store(params, "enc")?;
    let enc = lstm_seq_forward(
        &enc_p,
        SeqInput::OneHot(to_time_major(&batch.chars, rows, steps)),
        rows,
        steps,
        &zeros,
        &zeros,
        &enc_mask,
    )?;
    let mut pass = ForwardPass {
        rows,
        steps,
        dec: None,
        cls: None,
        intent_logits: None,
        tag_logits: None,
        tag_targets: Vec::new(),
        tag_mask: Vec::new(),
        enc_mask,
        enc,
    };
    match arch.kind {
        ArchKind::SingleIntent | ArchKind::E2eTagger | ArchKind::MtlE2e => {
            if arch.kind.has_intent() {
                pass.intent_logits = Some(dense_head(params, "intent.out", pass.enc.final_h(), rows)?);
            }
            if arch.kind.has_tags() {
                pass.tag_logits = Some(dense_head(params, "tag.out", pass.enc.outputs(), rows * steps)?);
                pass.tag_targets = to_time_major(&batch.tags, rows, steps);
                pass.tag_mask = pass.enc_mask.clone();
            }
        }
        ArchKind::S2sTagger | ArchKind::S2sMtl => {
            let dec_steps = batch.decoder_len();
            let dec_p = LstmParams::from_store(params, "dec")?;
            let dec_mask = to_time_major(&batch.decoder_mask, rows, dec_steps);
            // Teacher forcing: the decoder reads the gold START-shifted tags.
            let dec = lstm_seq_forward(
                &dec_p,
                SeqInput::OneHot(to_time_major(&batch.decoder_input, rows, dec_steps)),
                rows,
                dec_steps,
                pass.enc.final_h(),
                pass.enc.final_c(),
                &dec_mask,
            )?;
            pass.tag_logits = Some(dense_head(params, "dec.out", dec.outputs(), rows * dec_steps)?);
            pass.tag_targets = to_time_major(&batch.decoder_target, rows, dec_steps);
            pass.tag_mask = dec_mask;
            pass.dec = Some(dec);
            if arch.kind == ArchKind::S2sMtl {
                let cls_p = LstmParams::from_store(params, "cls")?;
                let cls = lstm_seq_forward(
                    &cls_p,
                    SeqInput::Dense(pass.enc.outputs().to_vec()),
                    rows,
                    steps,
                    pass.enc.final_h(),
                    pass.enc.final_c(),
                    &pass.enc_mask,
                )?;
                pass.intent_logits = Some(dense_head(params, "cls.out", cls.final_h(), rows)?);
                pass.cls = Some(cls);
            }
        }
    }
    Ok(pass)
}

fn lstm_grad_buffers(params: &ParamStore, prefix: &str) -> Result<LstmGrads, ModelError> {
    Ok(LstmGrads::zeros_for(&LstmParams::from_store(params, prefix)?))
}

fn as_mut(g: &mut LstmGrads) -> LstmGradsMut<'_> {
    LstmGradsMut { w: g.w.data_mut(), u: g.u.data_mut(), b: g.b.data_mut() }
}

fn insert_lstm(store: &mut ParamStore, prefix: &str, g: LstmGrads) {
    store.insert(format!("{prefix}.W"), g.w);
    store.insert(format!("{prefix}.U"), g.u);
    store.insert(format!("{prefix}.b"), g.b);
}

/// Backprop through a dense head; returns the gradient w.r.t. its input.
fn dense_head_backward(params: &ParamStore, grads: &mut ParamStore, prefix: &str, dy: &[f64], x: &[f64], rows: usize) -> Result<Vec<f64>, ModelError> {
    let w = params.get(&format!("{prefix}.W"))?;
    let (out, inp) = (w.rows(), w.cols());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[out]);
    let mut dx = vec![0.0; rows * inp];
    dense_backward_raw(dy, x, rows, inp, out, w.data(), dw.data_mut(), db.data_mut(), Some(&mut dx));
    grads.insert(format!("{prefix}.W"), dw);
    grads.insert(format!("{prefix}.b"), db);
    Ok(dx)
}

fn add_into(acc: &mut Option<Vec<f64>>, v: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(v).for_each(|(x, y)| *x += y),
        None => *acc = Some(v.to_vec()),
    }
}

/// Losses and exact gradients for one batch. The seq2seq decoder is teacher
/// forced; multi-task losses are combined as `w_i·intent + w_t·tag`.
pub fn forward_train(params: &ParamStore, arch: &ArchSpec, batch: &Batch, weights: LossWeights) -> Result<(Losses, ParamStore), ModelError> {
    let pass = run_forward(params, arch, batch)?;
    let (rows, steps) = (pass.rows, pass.steps);
    let mut losses = Losses::default();
    let mut grads = ParamStore::new();

    let mut d_intent = None;
    if let Some(logits) = &pass.intent_logits {
        let mut g = vec![0.0; logits.len()];
        let l = numcore::xent_raw(logits, INTENT_DIM, &batch.intents, &vec![1.0; rows], weights.intent, &mut g)?;
        losses.intent = Some(l);
        losses.total += weights.intent * l;
        d_intent = Some(g);
    }
    let mut d_tag = None;
    if let Some(logits) = &pass.tag_logits {
        let mut g = vec![0.0; logits.len()];
        let l = numcore::xent_raw(logits, TAG_DIM, &pass.tag_targets, &pass.tag_mask, weights.tag, &mut g)?;
        losses.tag = Some(l);
        losses.total += weights.tag * l;
        d_tag = Some(g);
    }

    // Gradients flowing into the encoder.
    let mut enc_dh_out: Option<Vec<f64>> = None;
    let mut enc_dh_final: Option<Vec<f64>> = None;
    let mut enc_dc_final: Option<Vec<f64>> = None;

    match arch.kind {
        ArchKind::SingleIntent | ArchKind::E2eTagger | ArchKind::MtlE2e => {
            if let Some(dy) = &d_intent {
                let dx = dense_head_backward(params, &mut grads, "intent.out", dy, pass.enc.final_h(), rows)?;
                add_into(&mut enc_dh_final, &dx);
            }
            if let Some(dy) = &d_tag {
                let dx = dense_head_backward(params, &mut grads, "tag.out", dy, pass.enc.outputs(), rows * steps)?;
                add_into(&mut enc_dh_out, &dx);
            }
        }
        ArchKind::S2sTagger | ArchKind::S2sMtl => {
            let dec = pass.dec.as_ref().expect("seq2seq pass has a decoder");
            let dy = d_tag.as_ref().expect("seq2seq pass has tag logits");
            let d_dec_out = dense_head_backward(params, &mut grads, "dec.out", dy, dec.outputs(), rows * dec.steps)?;
            let dec_p = LstmParams::from_store(params, "dec")?;
            let mut dec_g = lstm_grad_buffers(params, "dec")?;
            let back = lstm_seq_backward(&dec_p, dec, Some(&d_dec_out), None, None, as_mut(&mut dec_g))?;
            insert_lstm(&mut grads, "dec", dec_g);
            add_into(&mut enc_dh_final, &back.dh0);
            add_into(&mut enc_dc_final, &back.dc0);

            if let (Some(cls), Some(dy)) = (&pass.cls, &d_intent) {
                let d_cls_h = dense_head_backward(params, &mut grads, "cls.out", dy, cls.final_h(), rows)?;
                let cls_p = LstmParams::from_store(params, "cls")?;
                let mut cls_g = lstm_grad_buffers(params, "cls")?;
                let back = lstm_seq_backward(&cls_p, cls, None, Some(&d_cls_h), None, as_mut(&mut cls_g))?;
                insert_lstm(&mut grads, "cls", cls_g);
                add_into(&mut enc_dh_out, back.dx.as_deref().expect("dense input"));
                add_into(&mut enc_dh_final, &back.dh0);
                add_into(&mut enc_dc_final, &back.dc0);
            }
        }
    }

    let enc_p = LstmParams::from_store(params, "enc")?;
    let mut enc_g = lstm_grad_buffers(params, "enc")?;
    lstm_seq_backward(
        &enc_p,
        &pass.enc,
        enc_dh_out.as_deref(),
        enc_dh_final.as_deref(),
        enc_dc_final.as_deref(),
        as_mut(&mut enc_g),
    )?;
    insert_lstm(&mut grads, "enc", enc_g);
    Ok((losses, grads))
}

/// Teacher-forced counts over one batch (sums, not means).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchScores {
    pub examples: usize,
    pub intent_correct: usize,
    pub intent_loss_sum: f64,
    pub tag_correct: usize,
    pub tag_positions: usize,
    pub tag_loss_sum: f64,
}

impl BatchScores {
    pub fn merge(&mut self, o: &BatchScores) {
        self.examples += o.examples;
        self.intent_correct += o.intent_correct;
        self.intent_loss_sum += o.intent_loss_sum;
        self.tag_correct += o.tag_correct;
        self.tag_positions += o.tag_positions;
        self.tag_loss_sum += o.tag_loss_sum;
    }
}

/// Lowest-index argmax over `row[from..]`, returned as an absolute index.
pub(crate) fn argmax_from(row: &[f64], from: usize) -> usize {
    let mut best = from;
    for (i, &v) in row.iter().enumerate().skip(from + 1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn neg_log_prob(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[target]
}

/// Teacher-forced accuracy and loss sums for a batch. Tag positions are the
/// non-padding characters (plus the END position for seq2seq kinds).
pub fn score_batch(params: &ParamStore, arch: &ArchSpec, batch: &Batch) -> Result<BatchScores, ModelError> {
    let pass = run_forward(params, arch, batch)?;
    let mut s = BatchScores { examples: batch.rows, ..Default::default() };
    if let Some(logits) = &pass.intent_logits {
        for (row, &target) in logits.chunks_exact(INTENT_DIM).zip(&batch.intents) {
            s.intent_loss_sum += neg_log_prob(row, target);
            if argmax_from(row, 0) == target {
                s.intent_correct += 1;
            }
        }
    }
    if let Some(logits) = &pass.tag_logits {
        for ((row, &target), &m) in logits.chunks_exact(TAG_DIM).zip(&pass.tag_targets).zip(&pass.tag_mask) {
            if m == 0.0 {
                continue;
            }
            s.tag_positions += 1;
            s.tag_loss_sum += neg_log_prob(row, target);
            if argmax_from(row, 0) == target {
                s.tag_correct += 1;
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HaltedBy {
    EndToken,
    LengthCap,
}

/// Model output for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Softmax over the 8 intents, for kinds with an intent head.
    pub intent_probs: Option<Vec<f64>>,
    /// One tag per decoded character; never START/END, at most `|text|` long.
    pub tags: Vec<Tag>,
    /// How seq2seq decoding stopped; `None` for aligned or intent-only kinds.
    pub halted_by: Option<HaltedBy>,
}

impl Prediction {
    pub fn intent(&self) -> Option<(Intent, f64)> {
        let probs = self.intent_probs.as_ref()?;
        let best = argmax_from(probs, 0);
        Some((Intent::from_id(best).expect("8 intents"), probs[best]))
    }
}

/// A trained model: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub params: ParamStore,
}

impl Model {
    pub fn new(arch: ArchSpec, params: ParamStore) -> Result<Self, ModelError> {
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn predict(&self, text: &str) -> Result<Prediction, ModelError> {
        predict(&self.params, &self.arch, text)
    }
}

/// Runs the model on one sentence. Seq2seq kinds decode greedily from START,
/// feeding back the argmax tag, until END or `|text|` tags.
pub fn predict(params: &ParamStore, arch: &ArchSpec, text: &str) -> Result<Prediction, ModelError> {
    let chars = encoding::encode_chars(text)?;
    if chars.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let len = chars.len();
    let h = arch.hidden;
    let zeros = vec![0.0; h];
    let enc_p = LstmParams::from_store(params, "enc")?;
    let ones = vec![1.0; len];
    let enc = lstm_seq_forward(&enc_p, SeqInput::OneHot(chars), 1, len, &zeros, &zeros, &ones)?;

    let mut pred = Prediction { intent_probs: None, tags: Vec::new(), halted_by: None };
    match arch.kind {
        ArchKind::SingleIntent | ArchKind::E2eTagger | ArchKind::MtlE2e => {
            if arch.kind.has_intent() {
                pred.intent_probs = Some(softmax_rows(&dense_head(params, "intent.out", enc.final_h(), 1)?, INTENT_DIM));
            }
            if arch.kind.has_tags() {
                let logits = dense_head(params, "tag.out", enc.outputs(), len)?;
                pred.tags = logits
                    .chunks_exact(TAG_DIM)
                    .map(|row| Tag::from_id(argmax_from(row, Tag::None.id())).expect("19 tags"))
                    .collect();
            }
        }
        ArchKind::S2sTagger | ArchKind::S2sMtl => {
            let (tags, halted) = greedy_decode(params, &enc, len)?;
            pred.tags = tags;
            pred.halted_by = Some(halted);
            if arch.kind == ArchKind::S2sMtl {
                let cls_p = LstmParams::from_store(params, "cls")?;
                let cls = lstm_seq_forward(&cls_p, SeqInput::Dense(enc.outputs().to_vec()), 1, len, enc.final_h(), enc.final_c(), &ones)?;
                pred.intent_probs = Some(softmax_rows(&dense_head(params, "cls.out", cls.final_h(), 1)?, INTENT_DIM));
            }
        }
    }
    Ok(pred)
}

/// Greedy decoding. START is never a candidate output; at most `cap` tags are
/// emitted, and after the cap one more step checks whether END is the argmax.
fn greedy_decode(params: &ParamStore, enc: &LstmSeq, cap: usize) -> Result<(Vec<Tag>, HaltedBy), ModelError> {
    let dec_p = LstmParams::from_store(params, "dec")?;
    let mut h = enc.final_h().to_vec();
    let mut c = enc.final_c().to_vec();
    let mut prev = Tag::Start;
    let mut tags = Vec::with_capacity(cap);
    loop {
        let step = lstm_seq_forward(&dec_p, SeqInput::OneHot(vec![prev.id()]), 1, 1, &h, &c, &[1.0])?;
        let logits = dense_head(params, "dec.out", step.final_h(), 1)?;
        let next = Tag::from_id(argmax_from(&logits, Tag::End.id())).expect("19 tags");
        if next == Tag::End {
            return Ok((tags, HaltedBy::EndToken));
        }
        if tags.len() == cap {
            return Ok((tags, HaltedBy::LengthCap));
        }
        tags.push(next);
        prev = next;
        h = step.final_h().to_vec();
        c = step.final_c().to_vec();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            lr: 3e-3,
            patience: 5,
            val_fraction: 0.2,
            seed: 7,
            weights: LossWeights::default(),
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("validation fraction must be in (0, 1)");
        }
        if self.patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return bad("patience, batch size and epochs must be positive");
        }
        if !(self.weights.intent > 0.0 && self.weights.tag > 0.0) || !(self.lr > 0.0) {
            return bad("loss weights and learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_intent_accuracy: Option<f64>,
    pub val_tag_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub arch: ArchSpec,
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub param_count: usize,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }

    /// Equality ignoring wall-clock timings.
    pub fn same_outcome(&self, other: &TrainReport) -> bool {
        let strip = |r: &TrainReport| {
            let mut r = r.clone();
            r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
            r
        };
        strip(self) == strip(other)
    }
}

/// Seeded train/validation split: `(train, validation)` index lists.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::substream(seed, 10));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let train = idx.split_off(n_val);
    (train, idx)
}

/// Batches for one epoch: shuffle, sort windows of 16 batches by length to
/// limit padding, then shuffle the batch order.
fn epoch_batches(indices: &[usize], corpus: &[LabeledSentence], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut r = rng::substream(seed, 100 + epoch as u64);
    let mut idx = indices.to_vec();
    idx.shuffle(&mut r);
    let mut batches = Vec::new();
    for window in idx.chunks(batch_size * 16) {
        let mut w = window.to_vec();
        w.sort_by_key(|&i| corpus[i].text.len());
        batches.extend(w.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut r);
    batches
}

/// Sums teacher-forced scores over `indices` in fixed-size, length-sorted batches.
pub fn score_indices(params: &ParamStore, arch: &ArchSpec, corpus: &[LabeledSentence], indices: &[usize]) -> Result<BatchScores, ModelError> {
    let mut sorted = indices.to_vec();
    sorted.sort_by_key(|&i| (corpus[i].text.len(), i));
    let mut total = BatchScores::default();
    for chunk in sorted.chunks(64) {
        let batch = encoding::make_batch(corpus, chunk)?;
        total.merge(&score_batch(params, arch, &batch)?);
    }
    Ok(total)
}

fn val_loss(s: &BatchScores, arch: &ArchSpec, w: LossWeights) -> f64 {
    let mut total = 0.0;
    if arch.kind.has_intent() {
        total += w.intent * s.intent_loss_sum / s.examples as f64;
    }
    if arch.kind.has_tags() {
        total += w.tag * s.tag_loss_sum / s.tag_positions.max(1) as f64;
    }
    total
}

/// Trains with Adam and early stopping on validation loss, returning the
/// parameters of the best validation epoch.
pub fn train(arch: &ArchSpec, corpus: &[LabeledSentence], cfg: &TrainConfig) -> Result<(ParamStore, TrainReport), ModelError> {
    train_with_progress(arch, corpus, cfg, |_| {})
}

pub fn train_with_progress(
    arch: &ArchSpec,
    corpus: &[LabeledSentence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ParamStore, TrainReport), ModelError> {
    cfg.validate()?;
    if corpus.len() < 10 {
        return Err(ModelError::CorpusTooSmall(corpus.len()));
    }
    let (train_idx, val_idx) = split_indices(corpus.len(), cfg.val_fraction, cfg.seed);
    let mut params = build(arch, cfg.seed)?;
    let mut adam = AdamState::new(&params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut report = TrainReport {
        arch: *arch,
        epochs: Vec::new(),
        best_epoch: 0,
        param_count: params.param_count(),
        train_size: train_idx.len(),
        val_size: val_idx.len(),
    };

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let batches = epoch_batches(&train_idx, corpus, cfg.batch_size, cfg.seed, epoch);
        for rows in &batches {
            let batch = encoding::make_batch(corpus, rows)?;
            let (losses, mut grads) = forward_train(&params, arch, &batch, cfg.weights)?;
            loss_sum += losses.total;
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut params, &grads, &mut adam)?;
        }
        let scores = score_indices(&params, arch, corpus, &val_idx)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_loss: val_loss(&scores, arch, cfg.weights),
            val_intent_accuracy: arch.kind.has_intent().then(|| scores.intent_correct as f64 / scores.examples as f64),
            val_tag_accuracy: arch.kind.has_tags().then(|| scores.tag_correct as f64 / scores.tag_positions.max(1) as f64),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        let improved = stats.val_loss < best.0;
        report.epochs.push(stats);
        if improved {
            best = (report.epochs[epoch - 1].val_loss, epoch, params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    report.best_epoch = best.1;
    Ok((best.2, report))
}
