use alloc::vec::Vec;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    StringLiteral,
    Number,
    Operator,
    Punctuation,
    Comment,
}

/// A lexeme borrowed from the input. `text` is exactly
/// `input[offset..offset + text.len()]`; only whitespace lies between tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SqlToken<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub offset: usize,
}

impl SqlToken<'_> {
    /// Case-insensitive keyword test.
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(kw)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuation && self.text == p
    }

    /// Unquoted word: a keyword or a bare identifier.
    pub fn is_bare_word(&self) -> bool {
        match self.kind {
            TokenKind::Keyword => true,
            TokenKind::Identifier => self.text.starts_with(|c: char| c.is_alphabetic() || c == '_'),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LexErrorKind {
    UnterminatedString,
    UnterminatedComment,
    UnterminatedIdentifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} starting at offset {offset}")]
pub struct LexError {
    pub kind: LexErrorKind,
    pub offset: usize,
}

// Sorted for binary search.
const KEYWORDS: &[&str] = &[
    "ALL", "ALTER", "AND", "AS", "ASC", "ATTACH", "BETWEEN", "BY", "CASE", "CAST", "CREATE", "CROSS",
    "DELETE", "DESC", "DETACH", "DISTINCT", "DROP", "ELSE", "END", "ESCAPE", "EXCEPT", "EXEC",
    "EXECUTE", "EXISTS", "FALSE", "FROM", "FULL", "GLOB", "GRANT", "GROUP", "HAVING", "IN", "INNER",
    "INSERT", "INTERSECT", "INTO", "IS", "JOIN", "LEFT", "LIKE", "LIMIT", "MERGE", "NATURAL", "NOT",
    "NULL", "OFFSET", "ON", "OR", "ORDER", "OUTER", "OVER", "PARTITION", "PRAGMA", "RECURSIVE",
    "REPLACE", "REVOKE", "RIGHT", "SELECT", "SET", "TABLE", "THEN", "TRUE", "TRUNCATE", "UNION",
    "UPDATE", "USING", "VALUES", "WHEN", "WHERE", "WITH",
];

pub fn is_keyword(word: &str) -> bool {
    let mut buf = [0u8; 16];
    if word.len() > buf.len() || !word.is_ascii() {
        return false;
    }
    let upper = &mut buf[..word.len()];
    upper.copy_from_slice(word.as_bytes());
    upper.make_ascii_uppercase();
    let upper = core::str::from_utf8(upper).expect("ascii");
    KEYWORDS.binary_search(&upper).is_ok()
}

const TWO_CHAR_OPS: &[&str] = &["<>", "!=", "<=", ">=", "==", "||"];

/// Splits SQL into tokens. Whitespace is skipped; comments are kept as
/// tokens. `'..'` strings (with `''` escapes) and `"..."`, `` `..` ``,
/// `[..]` quoted identifiers are single tokens.
pub fn tokenize_sql(text: &str) -> Result<Vec<SqlToken<'_>>, LexError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let c = rest.chars().next().expect("non-empty");
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        let start = pos;
        let kind = if rest.starts_with("--") {
            pos += rest.find('\n').unwrap_or(rest.len());
            TokenKind::Comment
        } else if let Some(body) = rest.strip_prefix("/*") {
            let close = body.find("*/").ok_or(LexError { kind: LexErrorKind::UnterminatedComment, offset: start })?;
            pos += close + 4;
            TokenKind::Comment
        } else if c == '\'' {
            pos = quoted_end(bytes, pos, b'\'').ok_or(LexError { kind: LexErrorKind::UnterminatedString, offset: start })?;
            TokenKind::StringLiteral
        } else if c == '"' || c == '`' {
            pos = quoted_end(bytes, pos, c as u8).ok_or(LexError { kind: LexErrorKind::UnterminatedIdentifier, offset: start })?;
            TokenKind::Identifier
        } else if c == '[' {
            let close = rest.find(']').ok_or(LexError { kind: LexErrorKind::UnterminatedIdentifier, offset: start })?;
            pos += close + 1;
            TokenKind::Identifier
        } else if c.is_ascii_digit() || (c == '.' && rest[1..].starts_with(|d: char| d.is_ascii_digit())) {
            pos = number_end(bytes, pos);
            TokenKind::Number
        } else if c.is_alphabetic() || c == '_' {
            let len = rest
                .char_indices()
                .find(|(_, ch)| !(ch.is_alphanumeric() || *ch == '_' || *ch == '$'))
                .map_or(rest.len(), |(i, _)| i);
            pos += len;
            if is_keyword(&rest[..len]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if TWO_CHAR_OPS.iter().any(|op| rest.starts_with(op)) {
            pos += 2;
            TokenKind::Operator
        } else if "=<>+-*/%!|&~^".contains(c) {
            pos += 1;
            TokenKind::Operator
        } else {
            pos += c.len_utf8();
            TokenKind::Punctuation
        };
        tokens.push(SqlToken { kind, text: &text[start..pos], offset: start });
    }
    Ok(tokens)
}

/// End (exclusive) of a quoted run starting at `start`; doubled quotes escape.
fn quoted_end(bytes: &[u8], start: usize, quote: u8) -> Option<usize> {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return Some(i + 1);
        }
        i += 1;
    }
    None
}

fn number_end(bytes: &[u8], start: usize) -> usize {
    let digits = |mut i: usize| {
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        i
    };
    let mut i = digits(start);
    if i < bytes.len() && bytes[i] == b'.' {
        i = digits(i + 1);
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            i = digits(j);
        }
    }
    i
}
