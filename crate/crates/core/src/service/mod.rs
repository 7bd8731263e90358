//! Mock trading session driven by interpreted commands.

#[cfg(feature = "cli")]
pub mod http;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Intent;
use crate::interpreter::{self, Command, Decimal, Predictor, Registry, Span};

pub const MAX_TEXT_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Chart {
    pub instrument: String,
    pub indicators: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub side: Side,
    pub quantity: Decimal,
    pub price: Option<Decimal>,
    pub instrument: String,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TradingState {
    pub charts: Vec<Chart>,
    pub news_filters: Vec<String>,
    pub orders: Vec<Order>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ApplyError {
    #[error("no open chart for {instrument:?}")]
    UnknownChart { instrument: Option<String> },
    #[error("several charts are open; name one")]
    AmbiguousChart,
}

impl TradingState {
    fn chart_index(&self, instrument: &Option<String>) -> Result<usize, ApplyError> {
        match instrument {
            Some(name) => self
                .charts
                .iter()
                .position(|c| &c.instrument == name)
                .ok_or(ApplyError::UnknownChart { instrument: Some(name.clone()) }),
            None => match self.charts.len() {
                0 => Err(ApplyError::UnknownChart { instrument: None }),
                1 => Ok(0),
                _ => Err(ApplyError::AmbiguousChart),
            },
        }
    }

    fn next_sequence(&self) -> u64 {
        self.orders.last().map_or(1, |o| o.sequence + 1)
    }
}

/// Applies a validated command, returning the new state. Removing an
/// indicator that is not on the chart leaves the chart unchanged.
pub fn apply_command(state: &TradingState, cmd: &Command) -> Result<TradingState, ApplyError> {
    let mut s = state.clone();
    match cmd {
        Command::NoOp => {}
        Command::OpenChart { instrument } => {
            if !s.charts.iter().any(|c| &c.instrument == instrument) {
                s.charts.push(Chart { instrument: instrument.clone(), indicators: Vec::new() });
            }
        }
        Command::CloseChart { instrument } => {
            let i = s.chart_index(&Some(instrument.clone()))?;
            s.charts.remove(i);
        }
        Command::AddIndicator { indicator, instrument } => {
            let i = s.chart_index(instrument)?;
            let chart = &mut s.charts[i];
            if !chart.indicators.contains(indicator) {
                chart.indicators.push(indicator.clone());
            }
        }
        Command::RemoveIndicator { indicator, instrument } => {
            let i = s.chart_index(instrument)?;
            s.charts[i].indicators.retain(|x| x != indicator);
        }
        Command::FilterNews { topic } => {
            if !s.news_filters.contains(topic) {
                s.news_filters.push(topic.clone());
            }
        }
        Command::Buy { quantity, price, instrument } | Command::Sell { quantity, price, instrument } => {
            let side = if matches!(cmd, Command::Buy { .. }) { Side::Buy } else { Side::Sell };
            let sequence = s.next_sequence();
            s.orders.push(Order { side, quantity: *quantity, price: *price, instrument: instrument.clone(), sequence });
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

impl ErrorBody {
    fn new(kind: &str, message: impl ToString) -> Self {
        Self { kind: kind.into(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretResponse {
    pub text: String,
    pub intent: Option<Intent>,
    pub confidence: Option<f64>,
    pub spans: Vec<Span>,
    pub command: Option<Command>,
    pub error: Option<ErrorBody>,
    pub state: TradingState,
}

/// How the transport should report a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    BadRequest,
    TooLarge,
}

/// One model, one registry, one session.
pub struct Service {
    model: Arc<dyn Predictor>,
    registry: Registry,
    fingerprint: String,
    state: Mutex<TradingState>,
}

impl Service {
    pub fn new(model: Arc<dyn Predictor>, registry: Registry, fingerprint: impl Into<String>) -> Self {
        Self { model, registry, fingerprint: fingerprint.into(), state: Mutex::new(TradingState::default()) }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn state(&self) -> TradingState {
        self.lock().clone()
    }

    pub fn reset(&self) -> TradingState {
        let mut s = self.lock();
        *s = TradingState::default();
        s.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, TradingState> {
        // A panic while holding the lock cannot leave a half-applied state:
        // the state is replaced wholesale after apply_command succeeds.
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn rejected(&self, text: &str, error: ErrorBody) -> InterpretResponse {
        InterpretResponse {
            text: text.into(),
            intent: None,
            confidence: None,
            spans: Vec::new(),
            command: None,
            error: Some(error),
            state: self.state(),
        }
    }

    /// Interprets `text` and applies the resulting command. Interpretation
    /// and application errors are reported in the response and leave the
    /// state untouched.
    pub fn handle_interpret(&self, text: &str) -> (Outcome, InterpretResponse) {
        if text.len() > MAX_TEXT_LEN {
            let msg = format!("text is {} bytes; the limit is {MAX_TEXT_LEN}", text.len());
            return (Outcome::TooLarge, self.rejected(text, ErrorBody::new("PayloadTooLarge", msg)));
        }
        if let Some(pos) = text.chars().position(|c| !c.is_ascii()) {
            let msg = format!("non-ASCII character at position {pos}");
            return (Outcome::BadRequest, self.rejected(text, ErrorBody::new("NonAsciiChar", msg)));
        }
        if text.trim().is_empty() {
            return (Outcome::BadRequest, self.rejected(text, ErrorBody::new("EmptyInput", "empty text")));
        }
        let interp = match interpreter::interpret(self.model.as_ref(), &self.registry, text) {
            Ok(i) => i,
            Err(e) => return (Outcome::BadRequest, self.rejected(text, ErrorBody::new("ModelError", e))),
        };
        let mut resp = InterpretResponse {
            text: text.into(),
            intent: Some(interp.intent),
            confidence: interp.confidence,
            spans: interp.spans,
            command: None,
            error: None,
            state: TradingState::default(),
        };
        let mut state = self.lock();
        match interp.command {
            Ok(cmd) => {
                match apply_command(&state, &cmd) {
                    Ok(next) => *state = next,
                    Err(e) => resp.error = Some(ErrorBody::new(error_kind(&e), &e)),
                }
                resp.command = Some(cmd);
            }
            Err(e) => resp.error = Some(ErrorBody::new(interpret_error_kind(&e), &e)),
        }
        resp.state = state.clone();
        (Outcome::Ok, resp)
    }
}

fn error_kind(e: &ApplyError) -> &'static str {
    match e {
        ApplyError::UnknownChart { .. } => "UnknownChart",
        ApplyError::AmbiguousChart => "AmbiguousChart",
    }
}

fn interpret_error_kind(e: &interpreter::InterpretError) -> &'static str {
    use interpreter::InterpretError as E;
    match e {
        E::MissingSlot { .. } => "MissingSlot",
        E::UnresolvedEntity { .. } => "UnresolvedEntity",
        E::MalformedNumber { .. } => "MalformedNumber",
        E::NonPositive { .. } => "NonPositive",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(i: &str) -> Command {
        Command::OpenChart { instrument: i.into() }
    }

    #[test]
    fn open_is_idempotent_and_close_removes() {
        let s = apply_command(&TradingState::default(), &open("EURUSD")).unwrap();
        let s = apply_command(&s, &open("EURUSD")).unwrap();
        assert_eq!(s.charts.len(), 1);
        let s = apply_command(&s, &Command::CloseChart { instrument: "EURUSD".into() }).unwrap();
        assert!(s.charts.is_empty());
    }

    #[test]
    fn indicator_targeting() {
        let add = |i: Option<&str>| Command::AddIndicator { indicator: "RSI".into(), instrument: i.map(Into::into) };
        let empty = TradingState::default();
        assert_eq!(apply_command(&empty, &add(None)), Err(ApplyError::UnknownChart { instrument: None }));
        let one = apply_command(&empty, &open("TSLA")).unwrap();
        let with = apply_command(&apply_command(&one, &add(None)).unwrap(), &add(None)).unwrap();
        assert_eq!(with.charts[0].indicators, vec!["RSI".to_string()]);
        let two = apply_command(&with, &open("AAPL")).unwrap();
        assert_eq!(apply_command(&two, &add(None)), Err(ApplyError::AmbiguousChart));
        let named = apply_command(&two, &add(Some("AAPL"))).unwrap();
        assert_eq!(named.charts[1].indicators, vec!["RSI".to_string()]);
    }

    #[test]
    fn noop_is_identity_and_orders_sequence() {
        let s = apply_command(&TradingState::default(), &open("X")).unwrap();
        assert_eq!(apply_command(&s, &Command::NoOp).unwrap(), s);
        let buy = Command::Buy { quantity: Decimal { mantissa: 5, scale: 0 }, price: None, instrument: "TSLA".into() };
        let s = apply_command(&apply_command(&s, &buy).unwrap(), &buy).unwrap();
        let seqs: Vec<u64> = s.orders.iter().map(|o| o.sequence).collect();
        assert_eq!(seqs, vec![1, 2]);
    }
}
