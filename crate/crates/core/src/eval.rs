//! Clause-level SQL decomposition, exact-set matching and difficulty rules.
//!
//! Decomposition segments the token stream at top-level clause keywords
//! (parenthesis depth zero) rather than parsing a full grammar. Members are
//! lowercased (string literals excepted) and joined with single spaces, so
//! `SUM(Amount)` and `sum ( amount )` normalize identically.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sql::{tokenize_sql, LexError, SqlToken, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecomposeError {
    #[error("lex error: {0}")]
    Lex(#[from] LexError),
    #[error("unsupported statement: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SetOp {
    Union,
    Intersect,
    Except,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseSet {
    pub select_items: BTreeSet<String>,
    pub from_tables: BTreeSet<String>,
    pub join_conditions: BTreeSet<String>,
    pub where_conditions: BTreeSet<String>,
    pub group_by_items: BTreeSet<String>,
    pub having_conditions: BTreeSet<String>,
    pub order_by_items: Vec<String>,
    pub limit_value: Option<String>,
    pub distinct: bool,
    pub has_subquery: bool,
    pub set_ops: BTreeSet<SetOp>,
    /// Operands after the first one of a UNION/INTERSECT/EXCEPT chain.
    pub compound: Vec<(SetOp, Box<ClauseSet>)>,
    /// Constructs kept verbatim (normalized) instead of being decomposed.
    pub unsupported: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Extra];

    pub fn label(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
        }
    }
}

pub fn decompose(sql: &str) -> Result<ClauseSet, DecomposeError> {
    let tokens: Vec<SqlToken<'_>> = tokenize_sql(sql)?
        .into_iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .collect();
    let mut toks: &[SqlToken<'_>] = &tokens;
    while toks.last().is_some_and(|t| t.is_punct(";")) {
        toks = &toks[..toks.len() - 1];
    }
    toks = strip_parens(toks);

    let mut prelude = None;
    if toks.first().is_some_and(|t| t.is_keyword("WITH")) {
        let main = depth_zero(toks)
            .skip(1)
            .find(|(_, t)| t.is_keyword("SELECT"))
            .map(|(i, _)| i)
            .ok_or_else(|| DecomposeError::Unsupported("WITH without a main SELECT".into()))?;
        prelude = Some(normalize(&toks[..main]));
        toks = &toks[main..];
    }

    // split the set-operation chain
    let mut operands: Vec<(Option<SetOp>, &[SqlToken<'_>])> = Vec::new();
    let mut start = 0;
    let mut pending: Option<SetOp> = None;
    let positions: Vec<(usize, SetOp)> = depth_zero(toks)
        .filter_map(|(i, t)| set_op(t).map(|op| (i, op)))
        .collect();
    for (at, op) in positions {
        operands.push((pending, &toks[start..at]));
        pending = Some(op);
        let mut i = at + 1;
        if toks.get(i).is_some_and(|t| t.is_keyword("ALL") || t.is_keyword("DISTINCT")) {
            i += 1;
        }
        start = i;
    }
    operands.push((pending, &toks[start..]));

    let mut iter = operands.into_iter();
    let (_, first) = iter.next().expect("at least one operand");
    let mut set = decompose_select(first)?;
    for (op, part) in iter {
        let op = op.expect("operands after the first carry an operator");
        set.set_ops.insert(op);
        let sub = decompose_select(part)?;
        set.has_subquery |= sub.has_subquery;
        set.compound.push((op, Box::new(sub)));
    }
    if let Some(p) = prelude {
        set.has_subquery = true;
        set.unsupported.insert(p);
    }
    Ok(set)
}

fn set_op(t: &SqlToken<'_>) -> Option<SetOp> {
    if t.is_keyword("UNION") {
        Some(SetOp::Union)
    } else if t.is_keyword("INTERSECT") {
        Some(SetOp::Intersect)
    } else if t.is_keyword("EXCEPT") {
        Some(SetOp::Except)
    } else {
        None
    }
}

/// Tokens at parenthesis depth zero, with their positions.
fn depth_zero<'t, 'a>(toks: &'t [SqlToken<'a>]) -> impl Iterator<Item = (usize, &'t SqlToken<'a>)> {
    let mut depth = 0i32;
    toks.iter().enumerate().filter(move |(_, t)| {
        if t.is_punct("(") {
            depth += 1;
            false
        } else if t.is_punct(")") {
            depth -= 1;
            false
        } else {
            depth == 0
        }
    })
}

/// Removes parentheses wrapping the whole slice.
fn strip_parens<'t, 'a>(mut toks: &'t [SqlToken<'a>]) -> &'t [SqlToken<'a>] {
    while toks.len() >= 2 && toks[0].is_punct("(") && toks[toks.len() - 1].is_punct(")") {
        let mut depth = 0;
        let mut closes_at_end = true;
        for (i, t) in toks.iter().enumerate() {
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                depth -= 1;
                if depth == 0 && i != toks.len() - 1 {
                    closes_at_end = false;
                    break;
                }
            }
        }
        if !closes_at_end {
            break;
        }
        toks = &toks[1..toks.len() - 1];
    }
    toks
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Clause {
    Select,
    From,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
    Offset,
}

fn decompose_select(toks: &[SqlToken<'_>]) -> Result<ClauseSet, DecomposeError> {
    let toks = strip_parens(toks);
    match toks.first() {
        Some(t) if t.is_keyword("SELECT") => {}
        Some(t) => return Err(DecomposeError::Unsupported(format!("expected SELECT, found `{}`", t.text))),
        None => return Err(DecomposeError::Unsupported("empty statement".into())),
    }

    // clause boundaries at depth zero
    let mut marks: Vec<(Clause, usize, usize)> = Vec::new(); // (clause, keyword start, body start)
    for (i, t) in depth_zero(toks) {
        let next_by = toks.get(i + 1).is_some_and(|n| n.is_keyword("BY"));
        let clause = if t.is_keyword("SELECT") && i == 0 {
            Some((Clause::Select, 1))
        } else if t.is_keyword("FROM") {
            Some((Clause::From, 1))
        } else if t.is_keyword("WHERE") {
            Some((Clause::Where, 1))
        } else if t.is_keyword("GROUP") && next_by {
            Some((Clause::GroupBy, 2))
        } else if t.is_keyword("HAVING") {
            Some((Clause::Having, 1))
        } else if t.is_keyword("ORDER") && next_by {
            Some((Clause::OrderBy, 2))
        } else if t.is_keyword("LIMIT") {
            Some((Clause::Limit, 1))
        } else if t.is_keyword("OFFSET") {
            Some((Clause::Offset, 1))
        } else {
            None
        };
        if let Some((c, skip)) = clause {
            marks.push((c, i, i + skip));
        }
    }

    let mut set = ClauseSet {
        has_subquery: toks
            .windows(2)
            .any(|w| w[0].is_punct("(") && (w[1].is_keyword("SELECT") || w[1].is_keyword("WITH"))),
        ..ClauseSet::default()
    };
    let mut offset = None;
    for (n, (clause, _, body_start)) in marks.iter().enumerate() {
        let end = marks.get(n + 1).map_or(toks.len(), |m| m.1);
        let body = &toks[*body_start..end.max(*body_start)];
        match clause {
            Clause::Select => {
                let mut body = body;
                if body.first().is_some_and(|t| t.is_keyword("DISTINCT")) {
                    set.distinct = true;
                    body = &body[1..];
                } else if body.first().is_some_and(|t| t.is_keyword("ALL")) {
                    body = &body[1..];
                }
                set.select_items = split_commas(body).map(|item| normalize(strip_alias(item))).collect();
            }
            Clause::From => decompose_from(body, &mut set),
            Clause::Where => set.where_conditions = split_conditions(body),
            Clause::GroupBy => set.group_by_items = split_commas(body).map(normalize).collect(),
            Clause::Having => set.having_conditions = split_conditions(body),
            Clause::OrderBy => {
                set.order_by_items = split_commas(body)
                    .map(|item| {
                        let item = match item.last() {
                            Some(t) if t.is_keyword("ASC") => &item[..item.len() - 1],
                            _ => item,
                        };
                        normalize(item)
                    })
                    .collect();
            }
            Clause::Limit => {
                // LIMIT n, m is the offset form
                set.limit_value = Some(normalize(body));
            }
            Clause::Offset => offset = Some(normalize(body)),
        }
    }
    if let Some(off) = offset {
        let base = set.limit_value.take().unwrap_or_default();
        set.limit_value = Some(format!("{base} offset {off}"));
    }
    Ok(set)
}

fn decompose_from(body: &[SqlToken<'_>], set: &mut ClauseSet) {
    // items separated by commas or JOIN keywords; ON/USING clauses attach to the item before
    let mut items: Vec<&[SqlToken<'_>]> = Vec::new();
    let mut start = 0;
    let boundaries: Vec<(usize, bool)> = depth_zero(body)
        .filter(|(_, t)| t.is_punct(",") || t.is_keyword("JOIN"))
        .map(|(i, t)| (i, t.is_keyword("JOIN")))
        .collect();
    for (at, is_join) in boundaries {
        // walk back over NATURAL/LEFT/RIGHT/FULL/INNER/CROSS/OUTER
        let mut item_end = at;
        if is_join {
            while item_end > start && is_join_modifier(&body[item_end - 1]) {
                item_end -= 1;
            }
        }
        items.push(&body[start..item_end]);
        start = at + 1;
    }
    items.push(&body[start..]);

    for item in items {
        let (table, cond) = match depth_zero(item).find(|(_, t)| t.is_keyword("ON") || t.is_keyword("USING")) {
            Some((at, t)) if t.is_keyword("ON") => (&item[..at], Some((false, &item[at + 1..]))),
            Some((at, _)) => (&item[..at], Some((true, &item[at..]))),
            None => (item, None),
        };
        if let Some(name) = table_name(table) {
            set.from_tables.insert(name);
        }
        match cond {
            Some((false, c)) => set.join_conditions.extend(split_conditions(c)),
            Some((true, c)) => {
                set.join_conditions.insert(normalize(c));
            }
            None => {}
        }
    }
}

fn is_join_modifier(t: &SqlToken<'_>) -> bool {
    ["NATURAL", "LEFT", "RIGHT", "FULL", "INNER", "CROSS", "OUTER"]
        .iter()
        .any(|kw| t.is_keyword(kw))
}

fn table_name(item: &[SqlToken<'_>]) -> Option<String> {
    let first = item.first()?;
    if first.is_punct("(") {
        // derived table: keep the parenthesized body, drop the alias
        let mut depth = 0;
        for (i, t) in item.iter().enumerate() {
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                depth -= 1;
                if depth == 0 {
                    return Some(normalize(&item[..=i]));
                }
            }
        }
        return Some(normalize(item));
    }
    // dotted name, alias dropped
    let mut end = 1;
    while end + 1 < item.len() && item[end].is_punct(".") {
        end += 2;
    }
    Some(normalize(&item[..end.min(item.len())]))
}

fn strip_alias<'t, 'a>(item: &'t [SqlToken<'a>]) -> &'t [SqlToken<'a>] {
    let n = item.len();
    if n >= 3 && item[n - 2].is_keyword("AS") && item[n - 1].kind == TokenKind::Identifier {
        return &item[..n - 2];
    }
    item
}

fn split_commas<'t, 'a>(toks: &'t [SqlToken<'a>]) -> impl Iterator<Item = &'t [SqlToken<'a>]> {
    let mut parts = Vec::new();
    let mut start = 0;
    for (i, _) in depth_zero(toks).filter(|(_, t)| t.is_punct(",")) {
        parts.push(&toks[start..i]);
        start = i + 1;
    }
    parts.push(&toks[start..]);
    parts.into_iter().filter(|p| !p.is_empty())
}

/// Splits a boolean expression at top-level AND. An expression with a
/// top-level OR is kept whole, since AND binds tighter.
fn split_conditions(toks: &[SqlToken<'_>]) -> BTreeSet<String> {
    let toks = strip_parens(toks);
    if toks.is_empty() {
        return BTreeSet::new();
    }
    if depth_zero(toks).any(|(_, t)| t.is_keyword("OR")) {
        return BTreeSet::from([normalize(toks)]);
    }
    let mut out = BTreeSet::new();
    let mut start = 0;
    let mut in_between = false;
    for (i, t) in depth_zero(toks) {
        if t.is_keyword("BETWEEN") {
            in_between = true;
        } else if t.is_keyword("AND") {
            if in_between {
                in_between = false;
            } else {
                out.insert(normalize(strip_parens(&toks[start..i])));
                start = i + 1;
            }
        }
    }
    out.insert(normalize(strip_parens(&toks[start..])));
    out
}

fn normalize(toks: &[SqlToken<'_>]) -> String {
    let mut out = String::new();
    for (i, t) in toks.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        match t.kind {
            TokenKind::StringLiteral => out.push_str(t.text),
            TokenKind::Identifier if t.text.len() >= 2 && (t.text.starts_with('"') || t.text.starts_with('`') || t.text.starts_with('[')) => {
                out.push_str(&t.text[1..t.text.len() - 1].to_lowercase())
            }
            _ => out.push_str(&t.text.to_lowercase()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchVerdict {
    pub matched: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("gold query does not decompose: {0}")]
pub struct GoldError(pub DecomposeError);

/// Clause-wise set comparison. A prediction that fails to decompose is a
/// mismatch; a gold query that fails is a suite error.
pub fn exact_match(pred: &str, gold: &str) -> Result<MatchVerdict, GoldError> {
    let gold = decompose(gold).map_err(GoldError)?;
    Ok(match decompose(pred) {
        Ok(p) if p == gold => MatchVerdict { matched: true, reason: None },
        Ok(p) => MatchVerdict { matched: false, reason: Some(first_difference(&p, &gold).to_string()) },
        Err(e) => MatchVerdict { matched: false, reason: Some(format!("prediction does not decompose: {e}")) },
    })
}

fn first_difference(a: &ClauseSet, b: &ClauseSet) -> &'static str {
    if a.select_items != b.select_items {
        "select"
    } else if a.from_tables != b.from_tables || a.join_conditions != b.join_conditions {
        "from"
    } else if a.where_conditions != b.where_conditions {
        "where"
    } else if a.group_by_items != b.group_by_items {
        "group by"
    } else if a.having_conditions != b.having_conditions {
        "having"
    } else if a.order_by_items != b.order_by_items {
        "order by"
    } else if a.limit_value != b.limit_value {
        "limit"
    } else if a.distinct != b.distinct {
        "distinct"
    } else {
        "set operations or nested structure"
    }
}

/// Weighted structural score of a decomposed query.
pub fn difficulty_score(set: &ClauseSet) -> usize {
    set.where_conditions.len()
        + 2 * usize::from(!set.group_by_items.is_empty())
        + 2 * usize::from(!set.order_by_items.is_empty())
        + 3 * usize::from(set.has_subquery)
        + 3 * set.set_ops.len()
        + 2 * usize::from(set.from_tables.len() > 1)
        + usize::from(set.select_items.len() > 2)
}

pub fn classify_difficulty(sql: &str) -> Result<Difficulty, DecomposeError> {
    Ok(match difficulty_score(&decompose(sql)?) {
        0..=1 => Difficulty::Easy,
        2..=4 => Difficulty::Medium,
        5..=7 => Difficulty::Hard,
        _ => Difficulty::Extra,
    })
}

/// Whether result order matters when comparing executions against `gold`.
pub fn order_sensitive(gold: &str) -> Result<bool, DecomposeError> {
    Ok(!decompose(gold)?.order_by_items.is_empty())
}
