//! SQL lexing and the read-only statement guard.

mod guard;
mod lexer;

pub use guard::{sanitize, Guard, Rule, SanitizationVerdict, Violation, DEFAULT_DENY_LIST};
pub use lexer::{is_keyword, tokenize_sql, LexError, LexErrorKind, SqlToken, TokenKind};
