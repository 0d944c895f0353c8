use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::lexer::{tokenize_sql, SqlToken, TokenKind};

pub const DEFAULT_DENY_LIST: &[&str] = &[
    "DROP", "ALTER", "UPDATE", "INSERT", "DELETE", "TRUNCATE", "CREATE", "GRANT", "REVOKE", "MERGE",
    "REPLACE", "ATTACH", "DETACH", "PRAGMA", "EXEC", "EXECUTE",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ForbiddenKeyword,
    MultipleStatements,
    NotSelect,
    CommentSmuggling,
    /// The statement could not be tokenized.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub detail: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizationVerdict {
    pub allowed: bool,
    pub violations: Vec<Violation>,
}

impl SanitizationVerdict {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self { allowed: violations.is_empty(), violations }
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

/// Token-level read-only policy: the statement must be a single SELECT/WITH
/// with no deny-listed keyword outside string literals, and no comment may
/// mention a deny-listed word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guard {
    deny: BTreeSet<String>,
}

impl Default for Guard {
    fn default() -> Self {
        Self::with_deny_list(DEFAULT_DENY_LIST.iter().copied())
    }
}

impl Guard {
    pub fn with_deny_list<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let deny = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_ascii_uppercase())
            .filter(|w| !w.is_empty())
            .collect();
        Self { deny }
    }

    /// One keyword per line; blank lines and `#` comments are ignored.
    pub fn from_deny_list_text(text: &str) -> Self {
        Self::with_deny_list(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn deny_list(&self) -> impl Iterator<Item = &str> {
        self.deny.iter().map(String::as_str)
    }

    fn denied(&self, word: &str) -> bool {
        self.deny.contains(&word.to_ascii_uppercase())
    }

    pub fn sanitize(&self, sql: &str) -> SanitizationVerdict {
        let tokens = match tokenize_sql(sql) {
            Ok(t) => t,
            Err(e) => {
                return SanitizationVerdict::from_violations(alloc::vec![Violation {
                    rule: Rule::Malformed,
                    detail: e.to_string(),
                    offset: e.offset,
                }])
            }
        };
        let mut violations = Vec::new();

        // leading comments and opening parentheses may precede the verb
        match tokens.iter().find(|t| t.kind != TokenKind::Comment && !t.is_punct("(")) {
            Some(t) if t.is_keyword("SELECT") || t.is_keyword("WITH") => {}
            Some(t) => violations.push(Violation {
                rule: Rule::NotSelect,
                detail: format!("statement starts with `{}`", t.text),
                offset: t.offset,
            }),
            None => violations.push(Violation { rule: Rule::NotSelect, detail: "no statement keyword".into(), offset: 0 }),
        }

        if let Some(extra) = second_statement(&tokens) {
            violations.push(Violation {
                rule: Rule::MultipleStatements,
                detail: format!("content after `;`: {}", extra.text),
                offset: extra.offset,
            });
        }

        for t in &tokens {
            if t.is_bare_word() && self.denied(t.text) {
                violations.push(Violation {
                    rule: Rule::ForbiddenKeyword,
                    detail: t.text.to_ascii_uppercase(),
                    offset: t.offset,
                });
            } else if t.kind == TokenKind::Comment {
                let hit = t
                    .text
                    .split(|c: char| !(c.is_alphanumeric() || c == '_'))
                    .find(|w| !w.is_empty() && self.denied(w));
                if let Some(word) = hit {
                    violations.push(Violation {
                        rule: Rule::CommentSmuggling,
                        detail: format!("comment mentions {}", word.to_ascii_uppercase()),
                        offset: t.offset,
                    });
                }
            }
        }
        SanitizationVerdict::from_violations(violations)
    }
}

/// First non-comment token following a `;`, if any.
fn second_statement<'a, 'b>(tokens: &'b [SqlToken<'a>]) -> Option<&'b SqlToken<'a>> {
    let semi = tokens.iter().position(|t| t.is_punct(";"))?;
    tokens[semi + 1..].iter().find(|t| t.kind != TokenKind::Comment)
}

/// [`Guard::sanitize`] with the default deny list.
pub fn sanitize(sql: &str) -> SanitizationVerdict {
    Guard::default().sanitize(sql)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rules(sql: &str) -> Vec<Rule> {
        sanitize(sql).violations.iter().map(|v| v.rule).collect()
    }

    #[test]
    fn drop_is_rejected() {
        let v = sanitize("DROP TABLE users");
        assert!(!v.allowed);
        assert!(v.violations.iter().any(|x| x.rule == Rule::ForbiddenKeyword && x.detail == "DROP"));
        assert!(v.has(Rule::NotSelect));
    }

    #[test]
    fn literals_and_identifiers_are_exempt() {
        assert!(sanitize("SELECT * FROM t WHERE note = 'drop it'").allowed);
        assert!(sanitize("SELECT updated_at, created_by FROM t").allowed);
        assert!(sanitize("SELECT \"delete\" FROM t").allowed);
    }

    #[test]
    fn multiple_statements() {
        let r = rules("SELECT 1; DELETE FROM t");
        assert!(r.contains(&Rule::MultipleStatements));
        assert!(r.contains(&Rule::ForbiddenKeyword));
        assert!(sanitize("SELECT 1;").allowed);
        assert!(sanitize("SELECT 1;  \n").allowed);
        assert_eq!(rules("SELECT 1; SELECT 2"), vec![Rule::MultipleStatements]);
    }

    #[test]
    fn comment_smuggling() {
        assert_eq!(rules("SELECT 1 -- then drop everything"), vec![Rule::CommentSmuggling]);
        assert_eq!(rules("SELECT /* DELETE */ 1"), vec![Rule::CommentSmuggling]);
        assert!(sanitize("SELECT 1 -- total sales").allowed);
    }

    #[test]
    fn must_start_with_select_or_with() {
        assert!(sanitize("WITH x AS (SELECT 1) SELECT * FROM x").allowed);
        assert!(sanitize("(SELECT 1)").allowed);
        assert_eq!(rules("VALUES (1)"), vec![Rule::NotSelect]);
        assert_eq!(rules("EXPLAIN SELECT 1"), vec![Rule::NotSelect]);
        assert!(sanitize("/* report */ SELECT 1").allowed);
        assert_eq!(rules(""), vec![Rule::NotSelect]);
    }

    #[test]
    fn lex_errors_reject() {
        let v = sanitize("SELECT 'oops");
        assert!(!v.allowed);
        assert_eq!(v.violations[0].rule, Rule::Malformed);
    }

    #[test]
    fn custom_deny_list() {
        let g = Guard::from_deny_list_text("# sqlite extras\nvacuum\n\nDROP\n");
        assert_eq!(g.deny_list().collect::<Vec<_>>(), alloc::vec!["DROP", "VACUUM"]);
        assert!(!g.sanitize("SELECT 1 FROM vacuum").allowed);
        assert!(g.sanitize("SELECT 1 FROM t WHERE x = 'vacuum'").allowed);
        // the default list no longer applies
        assert!(!g.sanitize("UPDATE t SET a = 1").allowed);
        assert!(g.sanitize("SELECT 1 FROM t").allowed);
    }
}
