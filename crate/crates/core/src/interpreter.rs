//! From per-character tags to structured commands.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::encoding::{Intent, Tag};
use crate::models::{HaltedBy, ModelError, Prediction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub tag: Tag,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub text: String,
}

/// Maximal runs of one content tag. Missing trailing tags count as NONE.
pub fn spans_from_tags(text: &str, tags: &[Tag]) -> Vec<Span> {
    let bytes = text.as_bytes();
    let tag_at = |i: usize| tags.get(i).copied().unwrap_or(Tag::None);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let tag = tag_at(i);
        let start = i;
        while i < bytes.len() && tag_at(i) == tag {
            i += 1;
        }
        if tag.is_content() {
            spans.push(Span { tag, start, end: i, text: text[start..i].to_string() });
        }
    }
    spans
}

/// Case-insensitive Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<u8> = a.bytes().map(|c| c.to_ascii_lowercase()).collect();
    let b: Vec<u8> = b.bytes().map(|c| c.to_ascii_lowercase()).collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Closest candidate by case-insensitive edit distance; ties go to the
/// lexicographically smallest name. `None` only for an empty candidate list.
pub fn fuzzy_match<'a, S: AsRef<str>>(word: &str, candidates: &'a [S]) -> Option<(&'a str, usize)> {
    candidates
        .iter()
        .map(|c| (c.as_ref(), levenshtein(word, c.as_ref())))
        .min_by(|(na, da), (nb, db)| da.cmp(db).then_with(|| na.cmp(nb)))
}

/// The registry shipped with the demo corpus.
pub const DEMO_REGISTRY: &str = include_str!("../data/registry.json");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate name {0:?}")]
    Duplicate(String),
    #[error("name {0:?} is empty or not ASCII")]
    BadName(String),
    #[error("company {company:?} maps to unknown ticker {ticker:?}")]
    UnknownTicker { company: String, ticker: String },
    #[error("registry syntax: {0}")]
    Syntax(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical names the interpreter resolves surfaces against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    pub indicators: Vec<String>,
    pub tickers: Vec<String>,
    #[serde(default)]
    pub companies: BTreeMap<String, String>,
    /// Fixed distance threshold; when absent it is `max(1, ceil(len / 4))`
    /// of the surface length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_distance: Option<usize>,
}

impl Registry {
    pub fn new(
        indicators: Vec<String>,
        tickers: Vec<String>,
        companies: BTreeMap<String, String>,
        max_distance: Option<usize>,
    ) -> Result<Self, RegistryError> {
        let r = Self { indicators, tickers, companies, max_distance };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        for names in [&self.indicators, &self.tickers] {
            let mut seen = BTreeSet::new();
            for n in names {
                if n.is_empty() || !n.is_ascii() {
                    return Err(RegistryError::BadName(n.clone()));
                }
                if !seen.insert(n.to_ascii_lowercase()) {
                    return Err(RegistryError::Duplicate(n.clone()));
                }
            }
        }
        for (company, ticker) in &self.companies {
            if company.is_empty() || !company.is_ascii() {
                return Err(RegistryError::BadName(company.clone()));
            }
            if !self.tickers.contains(ticker) {
                return Err(RegistryError::UnknownTicker { company: company.clone(), ticker: ticker.clone() });
            }
        }
        Ok(())
    }

    pub fn parse(document: &str) -> Result<Self, RegistryError> {
        let r: Registry = serde_json::from_str(document).map_err(|e| RegistryError::Syntax(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn threshold(&self, surface: &str) -> usize {
        self.max_distance.unwrap_or_else(|| surface.len().div_ceil(4).max(1))
    }
}

/// Exact decimal `mantissa · 10^-scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decimal {
    pub mantissa: u64,
    pub scale: u32,
}

impl Decimal {
    pub fn to_f64(self) -> f64 {
        // Parsing the decimal string gives the correctly rounded f64.
        self.to_string().parse().expect("decimal renders as a float literal")
    }

    pub fn is_positive(self) -> bool {
        self.mantissa > 0
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 0 {
            return write!(f, "{}", self.mantissa);
        }
        let digits = format!("{:0>width$}", self.mantissa, width = self.scale as usize + 1);
        let (int, frac) = digits.split_at(digits.len() - self.scale as usize);
        write!(f, "{int}.{frac}")
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        parse_number(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

/// Parses `digits? ('.' digits)?` with at least one digit, e.g. "5", "295.9", ".5".
pub fn parse_number(text: &str) -> Result<Decimal, InterpretError> {
    let bad = || InterpretError::MalformedNumber { text: text.to_string() };
    let (int, frac) = match text.split_once('.') {
        Some((i, f)) if !f.is_empty() => (i, f),
        Some(_) => return Err(bad()),
        None => (text, ""),
    };
    let digits = format!("{int}{frac}");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let mantissa: u64 = digits.parse().map_err(|_| bad())?;
    Ok(Decimal { mantissa, scale: frac.len() as u32 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Command {
    OpenChart { instrument: String },
    CloseChart { instrument: String },
    AddIndicator { indicator: String, instrument: Option<String> },
    RemoveIndicator { indicator: String, instrument: Option<String> },
    FilterNews { topic: String },
    Buy { quantity: Decimal, price: Option<Decimal>, instrument: String },
    Sell { quantity: Decimal, price: Option<Decimal>, instrument: String },
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InterpretError {
    #[error("missing {slot}")]
    MissingSlot { slot: Tag },
    #[error("could not resolve {surface:?} (closest {best:?} at distance {distance})")]
    UnresolvedEntity { surface: String, best: String, distance: usize },
    #[error("malformed number {text:?}")]
    MalformedNumber { text: String },
    #[error("{slot} must be positive")]
    NonPositive { slot: Tag },
}

fn first<'a>(spans: &'a [Span], tag: Tag) -> Option<&'a Span> {
    spans.iter().find(|s| s.tag == tag)
}

fn require<'a>(spans: &'a [Span], tag: Tag) -> Result<&'a Span, InterpretError> {
    first(spans, tag).ok_or(InterpretError::MissingSlot { slot: tag })
}

fn resolve(surface: &str, names: &[String], reg: &Registry) -> Result<String, InterpretError> {
    let surface = surface.trim();
    let (best, distance) = fuzzy_match(surface, names).ok_or_else(|| InterpretError::UnresolvedEntity {
        surface: surface.to_string(),
        best: String::new(),
        distance: surface.len(),
    })?;
    if distance > reg.threshold(surface) {
        return Err(InterpretError::UnresolvedEntity { surface: surface.to_string(), best: best.to_string(), distance });
    }
    Ok(best.to_string())
}

fn resolve_company(surface: &str, reg: &Registry) -> Result<String, InterpretError> {
    let names: Vec<String> = reg.companies.keys().cloned().collect();
    let name = resolve(surface, &names, reg)?;
    Ok(reg.companies[&name].clone())
}

fn positive(span: &Span) -> Result<Decimal, InterpretError> {
    let v = parse_number(span.text.trim())?;
    if !v.is_positive() {
        return Err(InterpretError::NonPositive { slot: span.tag });
    }
    Ok(v)
}

fn optional_instrument(spans: &[Span], reg: &Registry) -> Result<Option<String>, InterpretError> {
    first(spans, Tag::Instrument).map(|s| resolve(&s.text, &reg.tickers, reg)).transpose()
}

/// Fills the command for `intent` from the first span of each slot tag.
pub fn build_command(intent: Intent, spans: &[Span], reg: &Registry) -> Result<Command, InterpretError> {
    let instrument = || resolve(&require(spans, Tag::Instrument)?.text, &reg.tickers, reg);
    let indicator = || resolve(&require(spans, Tag::Indicator)?.text, &reg.indicators, reg);
    let order = || -> Result<_, InterpretError> {
        let quantity = positive(require(spans, Tag::Quantity)?)?;
        let price = first(spans, Tag::Price).map(positive).transpose()?;
        Ok((quantity, price, instrument()?))
    };
    Ok(match intent {
        Intent::None => Command::NoOp,
        Intent::OpenChart => Command::OpenChart { instrument: instrument()? },
        Intent::CloseChart => Command::CloseChart { instrument: instrument()? },
        Intent::AddIndicator => Command::AddIndicator { indicator: indicator()?, instrument: optional_instrument(spans, reg)? },
        Intent::RemoveIndicator => {
            Command::RemoveIndicator { indicator: indicator()?, instrument: optional_instrument(spans, reg)? }
        }
        Intent::FilterNews => {
            let span = spans
                .iter()
                .find(|s| matches!(s.tag, Tag::NewsTopic | Tag::Company))
                .ok_or(InterpretError::MissingSlot { slot: Tag::NewsTopic })?;
            let topic = match span.tag {
                Tag::Company => resolve_company(&span.text, reg)?,
                _ => span.text.trim().to_ascii_lowercase(),
            };
            Command::FilterNews { topic }
        }
        Intent::Buy => {
            let (quantity, price, instrument) = order()?;
            Command::Buy { quantity, price, instrument }
        }
        Intent::Sell => {
            let (quantity, price, instrument) = order()?;
            Command::Sell { quantity, price, instrument }
        }
    })
}

/// Intent implied by the action tags, for models without an intent head.
pub fn intent_from_tags(tags: &[Tag]) -> Intent {
    let verb = tags.iter().find_map(|t| match t {
        Tag::Buy => Some(Intent::Buy),
        Tag::Sell => Some(Intent::Sell),
        Tag::Open => Some(Intent::OpenChart),
        Tag::Close => Some(Intent::CloseChart),
        Tag::Add => Some(Intent::AddIndicator),
        Tag::Remove => Some(Intent::RemoveIndicator),
        Tag::Filter => Some(Intent::FilterNews),
        _ => None,
    });
    verb.unwrap_or(Intent::None)
}

/// Anything that maps a sentence to a [`Prediction`].
pub trait Predictor: Send + Sync {
    fn predict(&self, text: &str) -> Result<Prediction, ModelError>;
}

impl Predictor for crate::models::Model {
    fn predict(&self, text: &str) -> Result<Prediction, ModelError> {
        crate::models::Model::predict(self, text)
    }
}

/// Full result of interpreting one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub text: String,
    pub intent: Intent,
    /// Intent probability, for models with an intent head.
    pub confidence: Option<f64>,
    pub tags: Vec<Tag>,
    pub halted_by: Option<HaltedBy>,
    pub spans: Vec<Span>,
    pub command: Result<Command, InterpretError>,
}

pub fn interpret(model: &dyn Predictor, reg: &Registry, text: &str) -> Result<Interpretation, ModelError> {
    let pred = model.predict(text)?;
    let (intent, confidence) = match pred.intent() {
        Some((i, p)) => (i, Some(p)),
        None => (intent_from_tags(&pred.tags), None),
    };
    let spans = spans_from_tags(text, &pred.tags);
    let command = build_command(intent, &spans, reg);
    Ok(Interpretation { text: text.to_string(), intent, confidence, tags: pred.tags, halted_by: pred.halted_by, spans, command })
}
