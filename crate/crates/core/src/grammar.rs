//! Template grammar and corpus synthesis.
//!
//! A corpus spec declares lexicons (named word lists) and templates written in
//! a small inline syntax:
//!
//! * `{TAG}` slot with tag `TAG`, drawing from the lexicon named `TAG`
//! * `{TAG:lexicon}` slot with tag `TAG`, drawing from `lexicon`
//! * `{=TAG:some text}` literal text carrying tag `TAG`
//! * bare words are literals tagged `NONE`
//!
//! A single space between tokens is tagged `SEPARATOR`. Spaces inside a slot
//! entry or a tagged literal keep the entity tag, so multi-word entities stay
//! one contiguous span.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Intent, Tag};
use crate::rng::{self, SeededRng};

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("malformed corpus spec: {0}")]
    Syntax(String),
    #[error("template {template}: unknown lexicon {lexicon:?}")]
    UnknownLexicon { template: usize, lexicon: String },
    #[error("template {template}: unknown tag {tag:?}")]
    UnknownTag { template: usize, tag: String },
    #[error("template {template}: unknown intent {intent:?}")]
    UnknownIntent { template: usize, intent: String },
    #[error("template {0}: empty pattern")]
    EmptyTemplate(usize),
    #[error("lexicon {lexicon:?}: non-ASCII entry {entry:?}")]
    NonAsciiEntry { lexicon: String, entry: String },
    #[error("lexicon {lexicon:?}: invalid entry {entry:?}")]
    InvalidEntry { lexicon: String, entry: String },
    #[error("spec declares no templates")]
    NoTemplates,
    #[error("noise probability {name} = {value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("filler lexicon {0:?} missing or empty")]
    MissingFillerLexicon(String),
    #[error("negative source exhausted: needed {needed}, found {available}")]
    InsufficientSource { needed: usize, available: usize },
    #[error("target {target} too small for {templates} templates plus {negatives} negatives")]
    TargetTooSmall { target: usize, templates: usize, negatives: usize },
    #[error("invalid corpus record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training example: text, one tag per character, and an intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub text: String,
    pub intent: Intent,
    pub tags: Vec<Tag>,
}

impl LabeledSentence {
    pub fn validate(&self) -> Result<(), String> {
        if self.text.is_empty() {
            return Err("empty text".into());
        }
        if !self.text.is_ascii() {
            return Err("non-ASCII text".into());
        }
        if self.text.len() != self.tags.len() {
            return Err(format!("{} tags for {} characters", self.tags.len(), self.text.len()));
        }
        if self.tags.iter().any(|t| t.is_special()) {
            return Err("START/END tag in stored sentence".into());
        }
        Ok(())
    }
}

/// Named word lists. Entries are unique, non-empty, ASCII.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexiconSet {
    lexicons: BTreeMap<String, Vec<String>>,
}

impl LexiconSet {
    pub fn new(lexicons: BTreeMap<String, Vec<String>>) -> Result<Self, GrammarError> {
        for (name, entries) in &lexicons {
            let mut seen = std::collections::HashSet::new();
            for entry in entries {
                if !entry.is_ascii() {
                    return Err(GrammarError::NonAsciiEntry { lexicon: name.clone(), entry: entry.clone() });
                }
                if entry.is_empty() || !seen.insert(entry.as_str()) {
                    return Err(GrammarError::InvalidEntry { lexicon: name.clone(), entry: entry.clone() });
                }
            }
        }
        Ok(Self { lexicons })
    }

    pub fn get(&self, name: &str) -> Option<&[String]> {
        self.lexicons.get(name).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.lexicons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexicons.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternToken {
    Literal { text: String, tag: Tag },
    Slot { tag: Tag, lexicon: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub intent: Intent,
    pub pattern: Vec<PatternToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(default)]
    pub swap_prob: f64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub filler_prob: f64,
    #[serde(default)]
    pub filler_lexicon: Option<String>,
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self { swap_prob: 0.0, drop_prob: 0.0, filler_prob: 0.0, filler_lexicon: None }
    }

    fn validate(&self) -> Result<(), GrammarError> {
        for (name, value) in [("swap_prob", self.swap_prob), ("drop_prob", self.drop_prob), ("filler_prob", self.filler_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(GrammarError::BadProbability { name, value });
            }
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::off()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSource {
    pub path: PathBuf,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub lexicons: LexiconSet,
    pub templates: Vec<Template>,
    pub noise: NoiseConfig,
    pub negatives: Option<NegativeSource>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default)]
    lexicons: BTreeMap<String, Vec<String>>,
    templates: Vec<RawTemplate>,
    #[serde(default)]
    noise: NoiseConfig,
    #[serde(default)]
    negatives: Option<NegativeSource>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    intent: String,
    pattern: String,
}

/// Parses and validates a JSON corpus spec. Relative negative-source paths
/// are left as written; [`load_corpus_spec`] rebases them.
pub fn parse_corpus_spec(document: &str) -> Result<CorpusSpec, GrammarError> {
    let raw: RawSpec = serde_json::from_str(document).map_err(|e| GrammarError::Syntax(e.to_string()))?;
    let lexicons = LexiconSet::new(raw.lexicons)?;
    if raw.templates.is_empty() {
        return Err(GrammarError::NoTemplates);
    }
    let mut templates = Vec::with_capacity(raw.templates.len());
    for (idx, t) in raw.templates.iter().enumerate() {
        let intent = Intent::from_name(&t.intent)
            .map_err(|_| GrammarError::UnknownIntent { template: idx, intent: t.intent.clone() })?;
        let pattern = parse_pattern(idx, &t.pattern)?;
        for token in &pattern {
            if let PatternToken::Slot { lexicon, .. } = token {
                if lexicons.get(lexicon).is_none_or(|e| e.is_empty()) {
                    return Err(GrammarError::UnknownLexicon { template: idx, lexicon: lexicon.clone() });
                }
            }
        }
        templates.push(Template { intent, pattern });
    }
    raw.noise.validate()?;
    if raw.noise.filler_prob > 0.0 {
        let name = raw.noise.filler_lexicon.clone().unwrap_or_default();
        if lexicons.get(&name).is_none_or(|e| e.is_empty()) {
            return Err(GrammarError::MissingFillerLexicon(name));
        }
    }
    Ok(CorpusSpec { lexicons, templates, noise: raw.noise, negatives: raw.negatives })
}

/// Reads a spec file; a relative negatives path is resolved against the
/// spec's directory.
pub fn load_corpus_spec(path: &Path) -> Result<CorpusSpec, GrammarError> {
    let text = std::fs::read_to_string(path)?;
    let mut spec = parse_corpus_spec(&text)?;
    if let Some(neg) = spec.negatives.as_mut() {
        if neg.path.is_relative() {
            if let Some(dir) = path.parent() {
                neg.path = dir.join(&neg.path);
            }
        }
    }
    Ok(spec)
}

fn parse_tag(template: usize, name: &str) -> Result<Tag, GrammarError> {
    match Tag::from_name(name) {
        Ok(tag) if !tag.is_special() => Ok(tag),
        _ => Err(GrammarError::UnknownTag { template, tag: name.to_string() }),
    }
}

fn parse_pattern(template: usize, pattern: &str) -> Result<Vec<PatternToken>, GrammarError> {
    if !pattern.is_ascii() {
        return Err(GrammarError::NonAsciiEntry { lexicon: format!("template {template}"), entry: pattern.into() });
    }
    let mut tokens = Vec::new();
    let mut bare = String::new();
    let flush = |bare: &mut String, tokens: &mut Vec<PatternToken>| {
        if !bare.is_empty() {
            tokens.push(PatternToken::Literal { text: std::mem::take(bare), tag: Tag::None });
        }
    };
    let mut rest = pattern;
    while let Some(ch) = rest.chars().next() {
        match ch {
            ' ' => {
                flush(&mut bare, &mut tokens);
                tokens.push(PatternToken::Literal { text: " ".into(), tag: Tag::Separator });
                rest = &rest[1..];
            }
            '{' => {
                flush(&mut bare, &mut tokens);
                let close = rest
                    .find('}')
                    .ok_or_else(|| GrammarError::Syntax(format!("template {template}: unterminated '{{'")))?;
                let body = &rest[1..close];
                tokens.push(parse_brace(template, body)?);
                rest = &rest[close + 1..];
            }
            '}' => return Err(GrammarError::Syntax(format!("template {template}: stray '}}'"))),
            _ => {
                bare.push(ch);
                rest = &rest[1..];
            }
        }
    }
    flush(&mut bare, &mut tokens);
    if tokens.iter().all(|t| matches!(t, PatternToken::Literal { tag: Tag::Separator, .. })) {
        return Err(GrammarError::EmptyTemplate(template));
    }
    Ok(tokens)
}

fn parse_brace(template: usize, body: &str) -> Result<PatternToken, GrammarError> {
    if let Some(literal) = body.strip_prefix('=') {
        let (tag, text) = literal
            .split_once(':')
            .ok_or_else(|| GrammarError::Syntax(format!("template {template}: tagged literal needs TAG:text")))?;
        if text.is_empty() {
            return Err(GrammarError::EmptyTemplate(template));
        }
        return Ok(PatternToken::Literal { text: text.to_string(), tag: parse_tag(template, tag)? });
    }
    let (tag, lexicon) = match body.split_once(':') {
        Some((tag, lex)) => (tag, lex),
        None => (body, body),
    };
    Ok(PatternToken::Slot { tag: parse_tag(template, tag)?, lexicon: lexicon.to_string() })
}

/// Realizes one template, drawing slot entries uniformly.
pub fn expand_template(t: &Template, lex: &LexiconSet, rng: &mut SeededRng) -> LabeledSentence {
    let mut text = String::new();
    let mut tags = Vec::new();
    for token in &t.pattern {
        let (surface, tag) = match token {
            PatternToken::Literal { text, tag } => (text.as_str(), *tag),
            PatternToken::Slot { tag, lexicon } => {
                let entries = lex.get(lexicon).expect("template validated against lexicons");
                let pick = rng.random_range(0..entries.len());
                (entries[pick].as_str(), *tag)
            }
        };
        text.push_str(surface);
        tags.extend(std::iter::repeat_n(tag, surface.len()));
    }
    LabeledSentence { text, tags, intent: t.intent }
}

/// Byte ranges of maximal non-space runs.
fn words(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b' ' {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i] != b' ' {
            i += 1;
        }
        out.push((start, i));
    }
    out
}

/// Transposes characters `i` and `i + 1` if they share a tag. Returns whether
/// the swap happened.
pub fn swap_chars(s: &mut LabeledSentence, i: usize) -> bool {
    if i + 1 >= s.tags.len() || s.tags[i] != s.tags[i + 1] {
        return false;
    }
    let mut bytes = std::mem::take(&mut s.text).into_bytes();
    bytes.swap(i, i + 1);
    s.text = String::from_utf8(bytes).expect("ASCII text");
    true
}

/// Deletes character `i` and its tag.
pub fn drop_char(s: &mut LabeledSentence, i: usize) {
    s.text.remove(i);
    s.tags.remove(i);
}

/// Typo noise: per word of length >= 3, maybe transpose two adjacent interior
/// characters and maybe delete one interior character.
pub fn inject_noise(s: &LabeledSentence, cfg: &NoiseConfig, rng: &mut SeededRng) -> LabeledSentence {
    let mut out = s.clone();
    if cfg.swap_prob == 0.0 && cfg.drop_prob == 0.0 {
        return out;
    }
    // Right to left so earlier word offsets stay valid after a deletion.
    for (start, end) in words(&s.text).into_iter().rev() {
        let len = end - start;
        if len < 3 {
            continue;
        }
        if rng.random_bool(cfg.swap_prob) && len >= 4 {
            let j = start + rng.random_range(1..=len - 3);
            swap_chars(&mut out, j);
        }
        if rng.random_bool(cfg.drop_prob) {
            let j = start + rng.random_range(1..=len - 2);
            drop_char(&mut out, j);
        }
    }
    out
}

/// Positions where a filler may go: sentence start, right after each
/// SEPARATOR character, and sentence end.
fn insertion_points(s: &LabeledSentence) -> Vec<usize> {
    let mut points = vec![0];
    points.extend(s.tags.iter().enumerate().filter(|(_, t)| **t == Tag::Separator).map(|(i, _)| i + 1));
    points.push(s.tags.len());
    points.dedup();
    points
}

/// Inserts a filler word at `point` (a value from the insertion points),
/// adding the SEPARATOR space needed to keep words apart.
pub fn insert_filler_at(s: &mut LabeledSentence, point: usize, filler: &str) {
    let mut piece = String::new();
    let mut tags = Vec::new();
    if point == s.tags.len() && point > 0 {
        piece.push(' ');
        tags.push(Tag::Separator);
        piece.push_str(filler);
        tags.extend(std::iter::repeat_n(Tag::None, filler.len()));
    } else {
        piece.push_str(filler);
        tags.extend(std::iter::repeat_n(Tag::None, filler.len()));
        piece.push(' ');
        tags.push(Tag::Separator);
    }
    s.text.insert_str(point, &piece);
    s.tags.splice(point..point, tags);
}

pub fn insert_fillers(s: &LabeledSentence, filler: &[String], cfg: &NoiseConfig, rng: &mut SeededRng) -> LabeledSentence {
    let mut out = s.clone();
    if cfg.filler_prob == 0.0 || filler.is_empty() {
        return out;
    }
    let points = insertion_points(s);
    let mut chosen = Vec::new();
    for &p in &points {
        if rng.random_bool(cfg.filler_prob) {
            chosen.push((p, filler[rng.random_range(0..filler.len())].as_str()));
        }
    }
    for (p, word) in chosen.into_iter().rev() {
        insert_filler_at(&mut out, p, word);
    }
    out
}

/// Replaces non-ASCII and control characters so a line can be encoded.
pub fn ascii_normalize(line: &str) -> String {
    line.chars()
        .map(|c| match c {
            '\t' => ' ',
            c if !c.is_ascii() => '?',
            c if c.is_ascii_control() => ' ',
            c => c,
        })
        .collect::<String>()
        .trim()
        .to_string()
}

/// Reservoir-samples `n` non-empty lines from `source` as classless examples.
pub fn sample_negatives<R: BufRead>(source: R, n: usize, rng: &mut SeededRng) -> Result<Vec<LabeledSentence>, GrammarError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut reservoir: Vec<String> = Vec::with_capacity(n);
    let mut seen = 0usize;
    for line in source.lines() {
        let line = ascii_normalize(&line?);
        if line.is_empty() {
            continue;
        }
        if reservoir.len() < n {
            reservoir.push(line);
        } else {
            let j = rng.random_range(0..=seen);
            if j < n {
                reservoir[j] = line;
            }
        }
        seen += 1;
    }
    if reservoir.len() < n {
        return Err(GrammarError::InsufficientSource { needed: n, available: reservoir.len() });
    }
    Ok(reservoir
        .into_iter()
        .map(|text| LabeledSentence { tags: vec![Tag::None; text.len()], text, intent: Intent::None })
        .collect())
}

/// Synthesizes `target` labeled sentences: round-robin template expansions
/// with noise and fillers, plus sampled negatives, shuffled.
pub fn augment(spec: &CorpusSpec, seed: u64, target: usize) -> Result<Vec<LabeledSentence>, GrammarError> {
    let negative_count = spec.negatives.as_ref().map_or(0, |n| n.count);
    let templates = spec.templates.len();
    if target < templates + negative_count {
        return Err(GrammarError::TargetTooSmall { target, templates, negatives: negative_count });
    }
    let fillers: &[String] = spec
        .noise
        .filler_lexicon
        .as_deref()
        .and_then(|name| spec.lexicons.get(name))
        .unwrap_or(&[]);

    let mut expand_rng = rng::substream(seed, 0);
    let mut out = Vec::with_capacity(target);
    for k in 0..target - negative_count {
        let template = &spec.templates[k % templates];
        let s = expand_template(template, &spec.lexicons, &mut expand_rng);
        let s = inject_noise(&s, &spec.noise, &mut expand_rng);
        out.push(insert_fillers(&s, fillers, &spec.noise, &mut expand_rng));
    }
    if let Some(neg) = &spec.negatives {
        let file = std::fs::File::open(&neg.path)?;
        let mut neg_rng = rng::substream(seed, 1);
        out.extend(sample_negatives(BufReader::new(file), neg.count, &mut neg_rng)?);
    }
    let mut shuffle_rng = rng::substream(seed, 2);
    out.shuffle(&mut shuffle_rng);
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_corpus<W: Write>(mut w: W, corpus: &[LabeledSentence]) -> std::io::Result<()> {
    for s in corpus {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<LabeledSentence>, GrammarError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledSentence =
            serde_json::from_str(&line).map_err(|e| GrammarError::BadRecord { line: i + 1, reason: e.to_string() })?;
        s.validate().map_err(|reason| GrammarError::BadRecord { line: i + 1, reason })?;
        out.push(s);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<LabeledSentence>, GrammarError> {
    read_corpus(BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "lexicons": {"INSTRUMENT": ["EURUSD"]},
        "templates": [{"intent": "BUY", "pattern": "{=BUY:buy} {INSTRUMENT}"}]
    }"#;

    fn tags_of(s: &LabeledSentence) -> Vec<&'static str> {
        s.tags.iter().map(|t| t.name()).collect()
    }

    #[test]
    fn parses_minimal_spec() {
        let spec = parse_corpus_spec(MINIMAL).unwrap();
        assert_eq!(spec.templates.len(), 1);
        assert_eq!(spec.lexicons.len(), 1);
        assert_eq!(
            spec.templates[0].pattern,
            vec![
                PatternToken::Literal { text: "buy".into(), tag: Tag::Buy },
                PatternToken::Literal { text: " ".into(), tag: Tag::Separator },
                PatternToken::Slot { tag: Tag::Instrument, lexicon: "INSTRUMENT".into() },
            ]
        );
    }

    #[test]
    fn validation_errors_name_the_culprit() {
        let doc = r#"{"templates": [{"intent": "BUY", "pattern": "buy {INSTRUMENT:tickers}"}]}"#;
        match parse_corpus_spec(doc) {
            Err(GrammarError::UnknownLexicon { lexicon, .. }) => assert_eq!(lexicon, "tickers"),
            other => panic!("{other:?}"),
        }
        let doc = r#"{"lexicons": {"COMPANY": ["café"]}, "templates": [{"intent": "BUY", "pattern": "x"}]}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::NonAsciiEntry { .. })));
        let doc = r#"{"templates": [{"intent": "BUY", "pattern": "buy {TICKER}"}]}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::UnknownTag { .. })));
        let doc = r#"{"templates": [{"intent": "BUY", "pattern": "{=FOO:x}"}]}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::UnknownTag { .. })));
        let doc = r#"{"templates": [{"intent": "BUY", "pattern": "{=END:x}"}]}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::UnknownTag { .. })));
        let doc = r#"{"templates": [{"intent": "HODL", "pattern": "x"}]}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::UnknownIntent { .. })));
        let doc = r#"{"templates": [{"intent": "BUY", "pattern": ""}]}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::EmptyTemplate(0))));
        let doc = r#"{"templates": []}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::NoTemplates)));
        let doc = r#"{"templates": [{"intent": "BUY", "pattern": "x"}], "noise": {"filler_prob": 0.5}}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::MissingFillerLexicon(_))));
        let doc = r#"{"templates": [{"intent": "BUY", "pattern": "x"}], "noise": {"swap_prob": 1.5}}"#;
        assert!(matches!(parse_corpus_spec(doc), Err(GrammarError::BadProbability { .. })));
    }

    #[test]
    fn expansion_labels() {
        let spec = parse_corpus_spec(MINIMAL).unwrap();
        let s = expand_template(&spec.templates[0], &spec.lexicons, &mut rng::seeded(1));
        assert_eq!(s.text, "buy EURUSD");
        let mut expected = vec!["BUY"; 3];
        expected.push("SEPARATOR");
        expected.extend(vec!["INSTRUMENT"; 6]);
        assert_eq!(tags_of(&s), expected);
        assert_eq!(s.intent, Intent::Buy);
    }

    #[test]
    fn multi_word_slot_is_one_span() {
        let doc = r#"{"lexicons": {"INDICATOR": ["Bollinger Bands"]},
            "templates": [{"intent": "ADD_INDICATOR", "pattern": "{=ADD:add} {INDICATOR}"}]}"#;
        let spec = parse_corpus_spec(doc).unwrap();
        let s = expand_template(&spec.templates[0], &spec.lexicons, &mut rng::seeded(3));
        assert_eq!(&s.text[4..], "Bollinger Bands");
        assert!(s.tags[4..].iter().all(|&t| t == Tag::Indicator));
        assert_eq!(s.tags[4..].len(), 15);
    }

    #[test]
    fn literal_only_template_ignores_rng() {
        let doc = r#"{"templates": [{"intent": "NONE", "pattern": "hello there"}]}"#;
        let spec = parse_corpus_spec(doc).unwrap();
        let a = expand_template(&spec.templates[0], &spec.lexicons, &mut rng::seeded(1));
        let b = expand_template(&spec.templates[0], &spec.lexicons, &mut rng::seeded(99));
        assert_eq!(a, b);
        assert_eq!(a.text, "hello there");
    }

    fn plain(text: &str) -> LabeledSentence {
        LabeledSentence {
            text: text.into(),
            tags: text.chars().map(|c| if c == ' ' { Tag::Separator } else { Tag::None }).collect(),
            intent: Intent::None,
        }
    }

    #[test]
    fn forced_swap_and_drop() {
        let mut s = plain("chart");
        assert!(swap_chars(&mut s, 2));
        assert_eq!(s.text, "chrat");
        assert_eq!(s.tags, vec![Tag::None; 5]);

        let mut s = plain("please");
        drop_char(&mut s, 3);
        assert_eq!(s.text, "plese");
        assert_eq!(s.tags.len(), 5);

        // tag boundary inside a word: swap refused
        let mut s = LabeledSentence { text: "5x".into(), tags: vec![Tag::Quantity, Tag::None], intent: Intent::None };
        assert!(!swap_chars(&mut s, 0));
    }

    #[test]
    fn noise_off_is_identity() {
        let s = plain("open new chart EURUSD");
        let mut r = rng::seeded(5);
        assert_eq!(inject_noise(&s, &NoiseConfig::off(), &mut r), s);
        assert_eq!(insert_fillers(&s, &["please".into()], &NoiseConfig::off(), &mut r), s);
    }

    #[test]
    fn noise_always_keeps_alignment_and_short_words() {
        let cfg = NoiseConfig { swap_prob: 1.0, drop_prob: 1.0, filler_prob: 0.0, filler_lexicon: None };
        let s = plain("buy 5 @ 295.9 tsla");
        let noisy = inject_noise(&s, &cfg, &mut rng::seeded(11));
        assert_eq!(noisy.text.len(), noisy.tags.len());
        assert!(noisy.text.starts_with("by "));
        assert!(noisy.text.contains(" 5 @ "));
        // one character dropped from each of the three long words
        assert_eq!(noisy.text.len(), s.text.len() - 3);
    }

    #[test]
    fn filler_at_front() {
        let spec = parse_corpus_spec(MINIMAL).unwrap();
        let mut s = expand_template(&spec.templates[0], &spec.lexicons, &mut rng::seeded(1));
        insert_filler_at(&mut s, 0, "please");
        assert_eq!(s.text, "please buy EURUSD");
        assert_eq!(&s.tags[..6], &[Tag::None; 6]);
        assert_eq!(s.tags[6], Tag::Separator);
        assert_eq!(s.tags.len(), s.text.len());
    }

    #[test]
    fn two_fillers_length_arithmetic() {
        // "buy EURUSD" has insertion points {0, 4, 10}; with filler_prob = 1
        // all three fire. Expected: 10 + (6+1) + (6+1) + (1+6) = 31, hand-counted
        // from "please buy please EURUSD please".
        let spec = parse_corpus_spec(MINIMAL).unwrap();
        let s = expand_template(&spec.templates[0], &spec.lexicons, &mut rng::seeded(1));
        let cfg = NoiseConfig { filler_prob: 1.0, ..NoiseConfig::off() };
        let out = insert_fillers(&s, &["please".into()], &cfg, &mut rng::seeded(2));
        assert_eq!(out.text, "please buy please EURUSD please");
        assert_eq!(out.text.len(), 31);
        assert_eq!(out.tags.len(), 31);
        assert_eq!(out.intent, Intent::Buy);
        assert!(out.tags[18..24].iter().all(|&t| t == Tag::Instrument));
    }

    #[test]
    fn fillers_never_split_multi_word_entities() {
        let s = LabeledSentence {
            text: "add Bollinger Bands".into(),
            tags: [vec![Tag::Add; 3], vec![Tag::Separator], vec![Tag::Indicator; 15]].concat(),
            intent: Intent::AddIndicator,
        };
        assert_eq!(insertion_points(&s), vec![0, 4, 19]);
    }

    #[test]
    fn negatives() {
        let src = "what is the weather\n\nnice day\n";
        let neg = sample_negatives(src.as_bytes(), 1, &mut rng::seeded(0)).unwrap();
        assert_eq!(neg.len(), 1);
        let all = sample_negatives("what is the weather\n".as_bytes(), 1, &mut rng::seeded(0)).unwrap();
        assert_eq!(all[0].intent, Intent::None);
        assert_eq!(all[0].tags, vec![Tag::None; 19]);
        assert!(sample_negatives(src.as_bytes(), 0, &mut rng::seeded(0)).unwrap().is_empty());
        assert!(matches!(
            sample_negatives(src.as_bytes(), 5, &mut rng::seeded(0)),
            Err(GrammarError::InsufficientSource { needed: 5, available: 2 })
        ));
        let n = sample_negatives("caf\u{e9} au lait\n".as_bytes(), 1, &mut rng::seeded(0)).unwrap();
        assert_eq!(n[0].text, "caf? au lait");
    }

    #[test]
    fn augment_exact_one_per_template() {
        let doc = r#"{"lexicons": {"INSTRUMENT": ["EURUSD"], "INDICATOR": ["RSI"]},
            "templates": [
                {"intent": "OPEN_CHART", "pattern": "{=OPEN:open} {INSTRUMENT}"},
                {"intent": "ADD_INDICATOR", "pattern": "{=ADD:add} {INDICATOR}"}
            ]}"#;
        let spec = parse_corpus_spec(doc).unwrap();
        let mut texts: Vec<String> = augment(&spec, 3, 2).unwrap().into_iter().map(|s| s.text).collect();
        texts.sort();
        assert_eq!(texts, vec!["add RSI", "open EURUSD"]);
        assert!(matches!(augment(&spec, 3, 1), Err(GrammarError::TargetTooSmall { .. })));
    }

    #[test]
    fn corpus_round_trip_through_jsonl() {
        let spec = parse_corpus_spec(MINIMAL).unwrap();
        let corpus = augment(&spec, 1, 3).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &corpus).unwrap();
        let line = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert!(line.starts_with(r#"{"text":"buy EURUSD","intent":"BUY","tags":["BUY","BUY","BUY","SEPARATOR""#));
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), corpus);
        let bad = br#"{"text":"ab","intent":"BUY","tags":["BUY"]}"#;
        assert!(matches!(read_corpus(&bad[..]), Err(GrammarError::BadRecord { line: 1, .. })));
    }
}
