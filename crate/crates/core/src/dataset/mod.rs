//! Emotion-labelled records with opinion annotations, read from JSON Lines.
//!
//! Spans are character (Unicode scalar) offsets into the record text, end
//! exclusive. Every line is validated field by field so that diagnostics can
//! name the line and the offending field path.

mod distribution;
mod labels;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use distribution::{validate_distribution, DistributionReport, Flag, SplitStats, REFERENCE_DISTRIBUTION};
pub use labels::{emotion_names, Emotion, LabelMap, NUM_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn is_valid_for(&self, text: &str) -> bool {
        self.start < self.end && self.end <= text.chars().count()
    }

    /// Byte range of this character span in `text`.
    pub fn byte_range(&self, text: &str) -> std::ops::Range<usize> {
        let mut start = text.len();
        let mut end = text.len();
        for (ci, (bi, _)) in text.char_indices().enumerate() {
            if ci == self.start {
                start = bi;
            }
            if ci == self.end {
                end = bi;
                break;
            }
        }
        start..end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Strong,
    Average,
    Weak,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument {
                op: "split",
                msg: format!("unknown split {other:?}"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionAnnotation {
    pub sentiment_expression: Option<Span>,
    pub holder: Option<Span>,
    pub target: Option<Span>,
    pub aspect_term: Option<Span>,
    pub qualifier: Option<Span>,
    pub polarity: Polarity,
    pub intensity: Intensity,
    pub aspect_category: Option<String>,
    pub target_entity: Option<String>,
}

impl OpinionAnnotation {
    pub fn spans(&self) -> impl Iterator<Item = (&'static str, Span)> + '_ {
        [
            ("sentiment_expression", self.sentiment_expression),
            ("holder", self.holder),
            ("target", self.target),
            ("aspect_term", self.aspect_term),
            ("qualifier", self.qualifier),
        ]
        .into_iter()
        .filter_map(|(name, s)| s.map(|s| (name, s)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub text: String,
    pub emotion: Emotion,
    pub opinions: Vec<OpinionAnnotation>,
}

/// One problem found on one line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub id: Option<String>,
    pub field: String,
    pub message: String,
    #[serde(skip)]
    bounds: Option<(usize, usize, usize)>,
}

impl Diagnostic {
    fn into_error(self) -> Error {
        if let (Some((start, end, len)), Some(id)) = (self.bounds, &self.id) {
            return Error::SpanOutOfBounds {
                id: id.clone(),
                start,
                end,
                len,
            };
        }
        Error::Schema {
            line: self.line,
            field: self.field,
            msg: match self.id {
                Some(id) => format!("record {id}: {}", self.message),
                None => self.message,
            },
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: field `{}`: {}", self.line, self.field, self.message)?;
        if let Some(id) = &self.id {
            write!(f, " (record {id})")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<Record>,
}

impl Corpus {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for r in &self.records {
            sizes[r.split as usize] += 1;
        }
        sizes
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<corpus writer>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses every line, returning valid records and all diagnostics.
pub fn parse_corpus(text: &str) -> (Vec<Record>, Vec<Diagnostic>) {
    let mut records = Vec::new();
    let mut diags = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, line_no) {
            Ok(rec) => {
                if !seen.insert(rec.id.clone()) {
                    diags.push(Diagnostic {
                        line: line_no,
                        id: Some(rec.id.clone()),
                        field: "id".into(),
                        message: "duplicate id".into(),
                        bounds: None,
                    });
                } else {
                    records.push(rec);
                }
            }
            Err(d) => diags.push(d),
        }
    }
    (records, diags)
}

/// Loads and validates a corpus file; the first diagnostic becomes the error.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (records, diags) = parse_corpus(&text);
    match diags.into_iter().next() {
        Some(d) => Err(d.into_error()),
        None => Ok(Corpus::new(records)),
    }
}

struct LineCtx {
    line: usize,
    id: Option<String>,
}

impl LineCtx {
    fn err(&self, field: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            line: self.line,
            id: self.id.clone(),
            field: field.into(),
            message: message.into(),
            bounds: None,
        }
    }
}

fn parse_record(line: &str, line_no: usize) -> std::result::Result<Record, Diagnostic> {
    let mut ctx = LineCtx {
        line: line_no,
        id: None,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| ctx.err("<line>", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ctx.err("<line>", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "id" | "split" | "text" | "emotion" | "opinions") {
            return Err(ctx.err(key.clone(), "unknown field"));
        }
    }
    let id = req_str(obj, "id", "id", &ctx)?.to_string();
    if id.is_empty() {
        return Err(ctx.err("id", "empty id"));
    }
    ctx.id = Some(id.clone());
    let split = req_str(obj, "split", "split", &ctx)?
        .parse::<Split>()
        .map_err(|_| ctx.err("split", "expected one of train, dev, test"))?;
    let text = req_str(obj, "text", "text", &ctx)?.to_string();
    let emotion_str = req_str(obj, "emotion", "emotion", &ctx)?;
    let emotion = emotion_str
        .parse::<Emotion>()
        .map_err(|_| ctx.err("emotion", format!("unknown label {emotion_str:?}")))?;
    let opinions_val = obj
        .get("opinions")
        .ok_or_else(|| ctx.err("opinions", "missing"))?;
    let arr = opinions_val
        .as_array()
        .ok_or_else(|| ctx.err("opinions", "expected an array"))?;
    let n_chars = text.chars().count();
    let mut opinions = Vec::with_capacity(arr.len());
    for (k, op) in arr.iter().enumerate() {
        opinions.push(parse_opinion(op, &format!("opinions[{k}]"), n_chars, &ctx)?);
    }
    Ok(Record {
        id,
        split,
        text,
        emotion,
        opinions,
    })
}

fn req_str<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    path: &str,
    ctx: &LineCtx,
) -> std::result::Result<&'a str, Diagnostic> {
    match obj.get(key) {
        None => Err(ctx.err(path, "missing")),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(ctx.err(path, "expected a string")),
    }
}

const SPAN_FIELDS: [&str; 5] = [
    "sentiment_expression",
    "holder",
    "target",
    "aspect_term",
    "qualifier",
];

fn parse_opinion(
    v: &Value,
    path: &str,
    n_chars: usize,
    ctx: &LineCtx,
) -> std::result::Result<OpinionAnnotation, Diagnostic> {
    let obj = v
        .as_object()
        .ok_or_else(|| ctx.err(path, "expected an object"))?;
    for key in obj.keys() {
        let known = SPAN_FIELDS.contains(&key.as_str())
            || matches!(
                key.as_str(),
                "polarity" | "intensity" | "aspect_category" | "target_entity"
            );
        if !known {
            return Err(ctx.err(format!("{path}.{key}"), "unknown field"));
        }
    }
    let mut spans = [None; 5];
    for (slot, name) in spans.iter_mut().zip(SPAN_FIELDS) {
        *slot = parse_span(obj.get(name), &format!("{path}.{name}"), n_chars, ctx)?;
    }
    if spans.iter().all(Option::is_none) {
        return Err(ctx.err(path, "opinion has no span"));
    }
    let polarity = enum_field(obj, "polarity", path, ctx)?;
    let intensity = enum_field(obj, "intensity", path, ctx)?;
    let opt_string = |key: &str| -> std::result::Result<Option<String>, Diagnostic> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ctx.err(format!("{path}.{key}"), "expected a string or null")),
        }
    };
    Ok(OpinionAnnotation {
        sentiment_expression: spans[0],
        holder: spans[1],
        target: spans[2],
        aspect_term: spans[3],
        qualifier: spans[4],
        polarity,
        intensity,
        aspect_category: opt_string("aspect_category")?,
        target_entity: opt_string("target_entity")?,
    })
}

fn enum_field<T: serde::de::DeserializeOwned>(
    obj: &Map<String, Value>,
    key: &str,
    path: &str,
    ctx: &LineCtx,
) -> std::result::Result<T, Diagnostic> {
    let field = format!("{path}.{key}");
    let v = obj.get(key).ok_or_else(|| ctx.err(&field, "missing"))?;
    serde_json::from_value(v.clone()).map_err(|_| ctx.err(&field, format!("invalid value {v}")))
}

fn parse_span(
    v: Option<&Value>,
    path: &str,
    n_chars: usize,
    ctx: &LineCtx,
) -> std::result::Result<Option<Span>, Diagnostic> {
    let obj = match v {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::Object(o)) => o,
        Some(_) => return Err(ctx.err(path, "expected null or {\"start\",\"end\"}")),
    };
    let get = |k: &str| -> std::result::Result<usize, Diagnostic> {
        obj.get(k)
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .ok_or_else(|| ctx.err(format!("{path}.{k}"), "expected a non-negative integer"))
    };
    let (start, end) = (get("start")?, get("end")?);
    if obj.len() != 2 {
        return Err(ctx.err(path, "span takes exactly `start` and `end`"));
    }
    if start >= end || end > n_chars {
        let mut d = ctx.err(
            format!("{path}.end"),
            format!("span {start}..{end} out of bounds for text of {n_chars} characters"),
        );
        d.bounds = Some((start, end, n_chars));
        return Err(d);
    }
    Ok(Some(Span { start, end }))
}
