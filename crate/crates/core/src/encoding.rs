//! Fixed character, tag and intent vocabularies, and the conversion of
//! labeled sentences into padded batches.
//!
//! Characters map to their 7-bit ASCII code (a 128-way one-hot input). The
//! tag alphabet has 19 symbols, two of which (`START`, `END`) only ever
//! appear on the decoder side of the seq2seq models.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::grammar::LabeledSentence;

pub const CHAR_DIM: usize = 128;
pub const TAG_DIM: usize = 19;
pub const INTENT_DIM: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodingError {
    #[error("non-ASCII character at position {0}")]
    NonAsciiChar(usize),
    #[error("START/END tag inside a stored tag sequence")]
    IllegalSpecialTag,
    #[error("empty batch")]
    EmptyBatch,
    #[error("example index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("tag id {0} out of range")]
    OutOfRangeId(usize),
    #[error("unknown tag name {0:?}")]
    UnknownTag(String),
    #[error("unknown intent name {0:?}")]
    UnknownIntent(String),
}

macro_rules! vocab_enum {
    ($(#[$meta:meta])* $name:ident, $err:ident { $($variant:ident = $id:literal => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant = $id),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn id(self) -> usize {
                self as usize
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn from_id(id: usize) -> Option<Self> {
                Self::ALL.get(id).copied()
            }

            pub fn from_name(name: &str) -> Result<Self, EncodingError> {
                match name {
                    $($label => Ok($name::$variant),)+
                    other => Err(EncodingError::$err(other.to_string())),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $name::from_name(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

vocab_enum!(
    /// Per-character category. Ids are fixed and shared with saved models.
    Tag, UnknownTag {
        Start = 0 => "START",
        End = 1 => "END",
        None = 2 => "NONE",
        Separator = 3 => "SEPARATOR",
        Buy = 4 => "BUY",
        Sell = 5 => "SELL",
        Open = 6 => "OPEN",
        Close = 7 => "CLOSE",
        Add = 8 => "ADD",
        Remove = 9 => "REMOVE",
        Filter = 10 => "FILTER",
        Instrument = 11 => "INSTRUMENT",
        Indicator = 12 => "INDICATOR",
        Company = 13 => "COMPANY",
        Price = 14 => "PRICE",
        Quantity = 15 => "QUANTITY",
        Number = 16 => "NUMBER",
        Timeframe = 17 => "TIMEFRAME",
        NewsTopic = 18 => "NEWS_TOPIC",
    }
);

vocab_enum!(
    /// Sentence-level action.
    Intent, UnknownIntent {
        None = 0 => "NONE",
        OpenChart = 1 => "OPEN_CHART",
        CloseChart = 2 => "CLOSE_CHART",
        AddIndicator = 3 => "ADD_INDICATOR",
        RemoveIndicator = 4 => "REMOVE_INDICATOR",
        FilterNews = 5 => "FILTER_NEWS",
        Buy = 6 => "BUY",
        Sell = 7 => "SELL",
    }
);

impl Tag {
    /// START and END bracket decoder sequences and never label a character.
    pub fn is_special(self) -> bool {
        matches!(self, Tag::Start | Tag::End)
    }

    /// Tags that carry a command argument or verb (everything but padding-like tags).
    pub fn is_content(self) -> bool {
        !matches!(self, Tag::Start | Tag::End | Tag::None | Tag::Separator)
    }
}

/// Maps each character to its ASCII code.
pub fn encode_chars(text: &str) -> Result<Vec<usize>, EncodingError> {
    text.chars()
        .enumerate()
        .map(|(i, ch)| {
            let code = ch as u32;
            if code < CHAR_DIM as u32 {
                Ok(code as usize)
            } else {
                Err(EncodingError::NonAsciiChar(i))
            }
        })
        .collect()
}

/// Builds the teacher-forced decoder input (`START` + tags) and target
/// (tags + `END`).
pub fn make_decoder_io(tags: &[Tag]) -> Result<(Vec<Tag>, Vec<Tag>), EncodingError> {
    if tags.iter().any(|t| t.is_special()) {
        return Err(EncodingError::IllegalSpecialTag);
    }
    let mut input = Vec::with_capacity(tags.len() + 1);
    input.push(Tag::Start);
    input.extend_from_slice(tags);
    let mut target = Vec::with_capacity(tags.len() + 1);
    target.extend_from_slice(tags);
    target.push(Tag::End);
    Ok((input, target))
}

/// Tag names for an id sequence, truncated at the first `END`.
pub fn decode_tags(ids: &[usize]) -> Result<Vec<&'static str>, EncodingError> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let tag = Tag::from_id(id).ok_or(EncodingError::OutOfRangeId(id))?;
        if tag == Tag::End {
            break;
        }
        out.push(tag.name());
    }
    Ok(out)
}

/// A padded mini-batch. All matrices are row-major with one row per example.
///
/// Encoder-side matrices are `rows × max_len`; decoder-side ones are
/// `rows × (max_len + 1)` because of the START/END shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub max_len: usize,
    pub chars: Vec<usize>,
    pub tags: Vec<usize>,
    pub decoder_input: Vec<usize>,
    pub decoder_target: Vec<usize>,
    pub intents: Vec<usize>,
    pub mask: Vec<f64>,
    pub decoder_mask: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn decoder_len(&self) -> usize {
        self.max_len + 1
    }
}

/// Pads the selected examples into a [`Batch`]. Padding positions use char 0
/// and tag NONE and are masked out.
pub fn make_batch(examples: &[LabeledSentence], order: &[usize]) -> Result<Batch, EncodingError> {
    if order.is_empty() {
        return Err(EncodingError::EmptyBatch);
    }
    let mut selected = Vec::with_capacity(order.len());
    for &idx in order {
        selected.push(examples.get(idx).ok_or(EncodingError::IndexOutOfRange(idx))?);
    }
    let rows = selected.len();
    let max_len = selected.iter().map(|s| s.tags.len()).max().unwrap_or(0);
    let dec_len = max_len + 1;
    let pad_tag = Tag::None.id();

    let mut batch = Batch {
        rows,
        max_len,
        chars: vec![0; rows * max_len],
        tags: vec![pad_tag; rows * max_len],
        decoder_input: vec![pad_tag; rows * dec_len],
        decoder_target: vec![pad_tag; rows * dec_len],
        intents: Vec::with_capacity(rows),
        mask: vec![0.0; rows * max_len],
        decoder_mask: vec![0.0; rows * dec_len],
        lengths: Vec::with_capacity(rows),
    };

    for (r, sentence) in selected.iter().enumerate() {
        let codes = encode_chars(&sentence.text)?;
        let len = codes.len();
        let (dec_in, dec_out) = make_decoder_io(&sentence.tags)?;
        for (j, &code) in codes.iter().enumerate() {
            batch.chars[r * max_len + j] = code;
            batch.tags[r * max_len + j] = sentence.tags[j].id();
            batch.mask[r * max_len + j] = 1.0;
        }
        for j in 0..=len {
            batch.decoder_input[r * dec_len + j] = dec_in[j].id();
            batch.decoder_target[r * dec_len + j] = dec_out[j].id();
            batch.decoder_mask[r * dec_len + j] = 1.0;
        }
        batch.intents.push(sentence.intent.id());
        batch.lengths.push(len);
    }
    Ok(batch)
}

/// Writes `tags.txt` and `intents.txt` (id TAB name per line) into `dir`.
pub fn write_vocab_tables(dir: &Path) -> std::io::Result<()> {
    let mut tags = std::fs::File::create(dir.join("tags.txt"))?;
    for tag in Tag::ALL {
        writeln!(tags, "{}\t{}", tag.id(), tag.name())?;
    }
    let mut intents = std::fs::File::create(dir.join("intents.txt"))?;
    for intent in Intent::ALL {
        writeln!(intents, "{}\t{}", intent.id(), intent.name())?;
    }
    Ok(())
}
