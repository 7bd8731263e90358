//! Independent reference computations shared by the integration tests.
//! Everything here steps one cell at a time with no batching or masking.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nlim_core::encoding::{self, Intent, Tag, TAG_DIM};
use nlim_core::grammar::LabeledSentence;
use nlim_core::models::{predict, ArchKind, ArchSpec, HaltedBy};
use nlim_core::numcore::{dense_forward, lstm_cell_forward, CellInput, LstmParams, ParamStore, Tensor};

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn toy() -> Vec<LabeledSentence> {
    let mk = |text: &str, tags: &[(Tag, usize)], intent| LabeledSentence {
        text: text.into(),
        tags: tags.iter().flat_map(|&(t, n)| std::iter::repeat_n(t, n)).collect(),
        intent,
    };
    vec![
        mk(
            "buy 5 @ 1.5 tsla",
            &[
                (Tag::Buy, 3),
                (Tag::Separator, 1),
                (Tag::Quantity, 1),
                (Tag::Separator, 1),
                (Tag::None, 1),
                (Tag::Separator, 1),
                (Tag::Price, 3),
                (Tag::Separator, 1),
                (Tag::Instrument, 4),
            ],
            Intent::Buy,
        ),
        mk("add rsi", &[(Tag::Add, 3), (Tag::Separator, 1), (Tag::Indicator, 3)], Intent::AddIndicator),
        mk("what is the weather", &[(Tag::None, 19)], Intent::None),
    ]
}

/// Full (len+1)×(len+1) Levenshtein table, case-folded.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Closest candidate by distance, ties to the lexicographically smaller name.
pub fn best_match(word: &str, candidates: &[String]) -> (String, usize) {
    let mut all: Vec<(usize, &String)> = candidates.iter().map(|c| (levenshtein(word, c), c)).collect();
    all.sort();
    (all[0].1.clone(), all[0].0)
}

pub fn nll(row: &[f64], target: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[target]
}

/// First index of the maximum over `row[from..]`.
pub fn argmax_from(row: &[f64], from: usize) -> usize {
    (from..row.len()).fold(from, |b, i| if row[i] > row[b] { i } else { b })
}

pub fn head(p: &ParamStore, prefix: &str, h: &Tensor) -> Vec<f64> {
    dense_forward(h, p.get(&format!("{prefix}.W")).unwrap(), p.get(&format!("{prefix}.b")).unwrap()).unwrap().into_data()
}

pub enum Step {
    Id(usize),
    Vec(Tensor),
}

/// Runs `p` over `inputs` from state `(h, c)`; returns every output and the final state.
pub fn run(p: &LstmParams, inputs: impl IntoIterator<Item = Step>, mut h: Tensor, mut c: Tensor) -> (Vec<Tensor>, Tensor, Tensor) {
    let mut outs = Vec::new();
    for x in inputs {
        let (h2, c2, _) = match &x {
            Step::Id(i) => lstm_cell_forward(CellInput::OneHot(&[*i]), &h, &c, p).unwrap(),
            Step::Vec(t) => lstm_cell_forward(CellInput::Dense(t), &h, &c, p).unwrap(),
        };
        (h, c) = (h2, c2);
        outs.push(h.clone());
    }
    (outs, h, c)
}

pub fn encode(p: &ParamStore, hidden: usize, text: &str) -> (Vec<Tensor>, Tensor, Tensor) {
    let enc = LstmParams::from_store(p, "enc").unwrap();
    let chars = encoding::encode_chars(text).unwrap();
    run(&enc, chars.into_iter().map(Step::Id), Tensor::zeros(&[1, hidden]), Tensor::zeros(&[1, hidden]))
}

/// Teacher-forced scores of one example.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExampleScore {
    pub intent_correct: bool,
    pub intent_nll: f64,
    pub tag_hits: usize,
    pub tag_positions: usize,
    pub tag_nll: f64,
}

pub fn score_example(p: &ParamStore, arch: &ArchSpec, ex: &LabeledSentence) -> ExampleScore {
    let (outs, h, c) = encode(p, arch.hidden, &ex.text);
    let mut intent_logits = None;
    let mut tag_rows: Vec<(Vec<f64>, usize)> = Vec::new();
    match arch.kind {
        ArchKind::SingleIntent | ArchKind::E2eTagger | ArchKind::MtlE2e => {
            if arch.kind.has_intent() {
                intent_logits = Some(head(p, "intent.out", &h));
            }
            if arch.kind.has_tags() {
                for (o, t) in outs.iter().zip(&ex.tags) {
                    tag_rows.push((head(p, "tag.out", o), t.id()));
                }
            }
        }
        ArchKind::S2sTagger | ArchKind::S2sMtl => {
            let dec = LstmParams::from_store(p, "dec").unwrap();
            let (inp, tgt) = encoding::make_decoder_io(&ex.tags).unwrap();
            let (douts, _, _) = run(&dec, inp.iter().map(|t| Step::Id(t.id())), h.clone(), c.clone());
            for (o, t) in douts.iter().zip(&tgt) {
                tag_rows.push((head(p, "dec.out", o), t.id()));
            }
            if arch.kind == ArchKind::S2sMtl {
                let cls = LstmParams::from_store(p, "cls").unwrap();
                let (_, ch, _) = run(&cls, outs.into_iter().map(Step::Vec), h, c);
                intent_logits = Some(head(p, "cls.out", &ch));
            }
        }
    }
    let mut s = ExampleScore::default();
    if let Some(l) = intent_logits {
        s.intent_correct = argmax_from(&l, 0) == ex.intent.id();
        s.intent_nll = nll(&l, ex.intent.id());
    }
    s.tag_positions = tag_rows.len();
    s.tag_hits = tag_rows.iter().filter(|(r, t)| argmax_from(r, 0) == *t).count();
    s.tag_nll = tag_rows.iter().map(|(r, t)| nll(r, *t)).sum();
    s
}

/// Metrics recomputed example by example: (intent acc, intent loss, tag acc,
/// tag loss, free-running tag acc), `None` where the kind has no such head.
pub type Recount = (Option<f64>, Option<f64>, Option<f64>, Option<f64>, Option<f64>);

pub fn recount(p: &ParamStore, arch: &ArchSpec, data: &[LabeledSentence]) -> Recount {
    let (mut ic, mut il, mut hits, mut pos, mut tl, mut fr) = (0usize, 0.0, 0usize, 0usize, 0.0, 0usize);
    for ex in data {
        let s = score_example(p, arch, ex);
        ic += usize::from(s.intent_correct);
        il += s.intent_nll;
        hits += s.tag_hits;
        pos += s.tag_positions;
        tl += s.tag_nll;
        let pred = predict(p, arch, &ex.text).unwrap();
        fr += ex.tags.iter().zip(&pred.tags).filter(|(g, q)| g == q).count();
        if arch.kind.is_seq2seq() && pred.tags.len() == ex.tags.len() && pred.halted_by == Some(HaltedBy::EndToken) {
            fr += 1;
        }
    }
    let n = data.len() as f64;
    let pos = pos as f64;
    let i = arch.kind.has_intent();
    let t = arch.kind.has_tags();
    (
        i.then(|| ic as f64 / n),
        i.then(|| il / n),
        t.then(|| hits as f64 / pos),
        t.then(|| tl / pos),
        t.then(|| fr as f64 / pos),
    )
}

/// Replays greedy decoding cell by cell and checks `predict` against it.
pub fn check_decode(p: &ParamStore, arch: &ArchSpec, text: &str) -> Result<(), String> {
    let pred = predict(p, arch, text).map_err(|e| e.to_string())?;
    if pred.tags.len() > text.len() {
        return Err(format!("{} tags for {} chars", pred.tags.len(), text.len()));
    }
    if pred.tags.iter().any(|t| t.is_special()) {
        return Err("special tag emitted".into());
    }
    let dec = LstmParams::from_store(p, "dec").unwrap();
    let (_, mut h, mut c) = encode(p, arch.hidden, text);
    let mut prev = Tag::Start;
    let mut end_seen = false;
    for step in 0..=pred.tags.len() {
        let (_, h2, c2) = run(&dec, [Step::Id(prev.id())], h, c);
        (h, c) = (h2, c2);
        let best = argmax_from(&head(p, "dec.out", &h), Tag::End.id());
        debug_assert!(best < TAG_DIM);
        if step < pred.tags.len() {
            if best != pred.tags[step].id() {
                return Err(format!("step {step}: replay picks {best}, predict gave {}", pred.tags[step]));
            }
            prev = pred.tags[step];
        } else {
            end_seen = best == Tag::End.id();
        }
    }
    match pred.halted_by {
        Some(HaltedBy::EndToken) if end_seen => Ok(()),
        Some(HaltedBy::LengthCap) if !end_seen && pred.tags.len() == text.len() => Ok(()),
        other => Err(format!("halted_by {other:?} but END seen = {end_seen}, {} of {} tags", pred.tags.len(), text.len())),
    }
}
