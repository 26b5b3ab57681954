use serde::{Deserialize, Serialize};

/// Half-open byte range into the original text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteSpan {
    pub start: usize,
    pub end: usize,
}

impl ByteSpan {
    pub fn intersects(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// Lowercased surface form, used for vocabulary lookup.
    pub text: String,
    pub span: ByteSpan,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn offsets(&self) -> Vec<ByteSpan> {
        self.tokens.iter().map(|t| t.span).collect()
    }
}

/// Runs of alphanumeric characters form tokens; every other non-whitespace
/// character is a token of its own.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |tokens: &mut Vec<Token>, start: usize, end: usize| {
        tokens.push(Token {
            text: text[start..end].to_lowercase(),
            span: ByteSpan { start, end },
        });
    };
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            flush(&mut tokens, s, i);
        }
        if !c.is_whitespace() {
            flush(&mut tokens, i, i + c.len_utf8());
        }
    }
    if let Some(s) = word_start {
        flush(&mut tokens, s, text.len());
    }
    TokenSequence { tokens }
}
