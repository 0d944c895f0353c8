#![allow(dead_code)]

use std::path::Path;

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::Deserialize;

fn data(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)).unwrap()
}

/// Statements of a corpus file: every line that does not start with `#`.
fn statements(name: &str) -> Vec<String> {
    data(name).lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

pub fn mutating_statements() -> Vec<String> {
    statements("sanitizer_mutating.sql")
}

pub fn legitimate_selects() -> Vec<String> {
    statements("sanitizer_legit.sql")
}

#[derive(Deserialize)]
pub struct GoldenPair {
    pub pred: String,
    pub gold: String,
    pub expected: bool,
}

pub fn exact_match_golden() -> Vec<GoldenPair> {
    data("exact_match_golden.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// (pred, gold, gold_is_ordered) over the sales fixture: each gold is paired
/// with five mutations, some of which preserve the result.
pub fn execution_mutations() -> Vec<(String, String, bool)> {
    let groups: [(&str, bool, [&str; 5]); 10] = [
        (
            "SELECT region, SUM(amount) FROM monthly_sales GROUP BY region",
            false,
            [
                "SELECT m.region, SUM(m.amount) FROM monthly_sales AS m GROUP BY m.region",
                "select region,sum(amount)\nfrom monthly_sales group by region",
                "SELECT region, SUM(amount) FROM monthly_sales GROUP BY region ORDER BY region DESC",
                "SELECT region, AVG(amount) FROM monthly_sales GROUP BY region",
                "SELECT region, SUM(amount) FROM monthly_sales WHERE year = 2023 GROUP BY region",
            ],
        ),
        (
            "SELECT COUNT(*) FROM monthly_sales WHERE amount > 1300",
            false,
            [
                "SELECT COUNT(amount) FROM monthly_sales WHERE amount > 1300",
                "SELECT COUNT(*) FROM monthly_sales AS s WHERE s.amount > 1300",
                "SELECT COUNT(*) FROM monthly_sales WHERE amount >= 1300",
                "SELECT COUNT(*) FROM monthly_sales WHERE amount > 1400",
                "SELECT COUNT(*) FROM monthly_sales WHERE 1300 < amount",
            ],
        ),
        (
            "SELECT month, amount FROM monthly_sales WHERE region = 'north' AND year = 2023 ORDER BY month",
            true,
            [
                "SELECT month, amount FROM monthly_sales WHERE year = 2023 AND region = 'north' ORDER BY month",
                "SELECT month, amount FROM monthly_sales WHERE region = 'north' AND year = 2023 ORDER BY month DESC",
                "SELECT month, amount FROM monthly_sales WHERE region = 'north' AND year = 2023",
                "SELECT amount, month FROM monthly_sales WHERE region = 'north' AND year = 2023 ORDER BY month",
                "SELECT t.month, t.amount FROM monthly_sales t WHERE t.region = 'north' AND t.year = 2023 ORDER BY t.month",
            ],
        ),
        (
            "SELECT manager FROM regions WHERE name = 'west'",
            false,
            [
                "SELECT r.manager FROM regions AS r WHERE r.name = 'west'",
                "SELECT manager FROM regions WHERE name = 'West'",
                "SELECT manager FROM regions WHERE name LIKE 'west'",
                "SELECT country FROM regions WHERE name = 'west'",
                "SELECT manager FROM regions WHERE name <> 'west'",
            ],
        ),
        (
            "SELECT year, AVG(units) FROM monthly_sales GROUP BY year",
            false,
            [
                "SELECT year, SUM(units) * 1.0 / COUNT(*) FROM monthly_sales GROUP BY year",
                "SELECT year, AVG(units) FROM monthly_sales GROUP BY year ORDER BY year DESC",
                "SELECT year, SUM(units) FROM monthly_sales GROUP BY year",
                "SELECT year, AVG(amount) FROM monthly_sales GROUP BY year",
                "SELECT year, MAX(units) FROM monthly_sales GROUP BY year",
            ],
        ),
        (
            "SELECT region, MAX(amount) FROM monthly_sales WHERE year = 2024 GROUP BY region ORDER BY region",
            true,
            [
                "SELECT region, MAX(amount) FROM monthly_sales WHERE year = 2024 GROUP BY region ORDER BY region ASC",
                "SELECT region, MAX(amount) FROM monthly_sales WHERE year = 2024 GROUP BY region ORDER BY region DESC",
                "SELECT region, MIN(amount) FROM monthly_sales WHERE year = 2024 GROUP BY region ORDER BY region",
                "SELECT region, MAX(amount) AS top FROM monthly_sales WHERE year = 2024 GROUP BY region ORDER BY 1",
                "SELECT region, MAX(amount) FROM monthly_sales WHERE year = 2023 GROUP BY region ORDER BY region",
            ],
        ),
        (
            "SELECT t.region, t.target FROM targets AS t WHERE t.year = 2023",
            false,
            [
                "SELECT region, target FROM targets WHERE year = 2023",
                "SELECT x.region, x.target FROM targets x WHERE x.year = 2023 ORDER BY x.target",
                "SELECT region, target FROM targets WHERE year = 2024",
                "SELECT region, target FROM targets",
                "SELECT region, target * 1.0 FROM targets WHERE year = 2023",
            ],
        ),
        (
            "SELECT DISTINCT region FROM monthly_sales",
            false,
            [
                "SELECT region FROM monthly_sales GROUP BY region",
                "SELECT name FROM regions",
                "SELECT region FROM monthly_sales",
                "SELECT DISTINCT region FROM monthly_sales WHERE amount > 1500",
                "SELECT region FROM targets GROUP BY region",
            ],
        ),
        (
            "SELECT region, amount FROM monthly_sales WHERE month = 3 ORDER BY amount DESC LIMIT 2",
            true,
            [
                "SELECT region, amount FROM monthly_sales WHERE month = 3 ORDER BY amount DESC LIMIT 2 OFFSET 0",
                "SELECT region, amount FROM monthly_sales WHERE month = 3 ORDER BY amount LIMIT 2",
                "SELECT region, amount FROM monthly_sales WHERE month = 3 ORDER BY amount DESC LIMIT 3",
                "SELECT region, amount FROM monthly_sales WHERE month = 3 ORDER BY amount DESC",
                "SELECT s.region, s.amount FROM monthly_sales s WHERE s.month = 3 ORDER BY s.amount DESC LIMIT 2",
            ],
        ),
        (
            "SELECT r.manager, SUM(m.units) FROM regions AS r JOIN monthly_sales AS m ON m.region = r.name GROUP BY r.manager",
            false,
            [
                "SELECT r.manager, SUM(m.units) FROM monthly_sales AS m JOIN regions AS r ON r.name = m.region GROUP BY r.manager",
                "SELECT manager, SUM(units) FROM regions, monthly_sales WHERE region = name GROUP BY manager",
                "SELECT r.manager, COUNT(m.units) FROM regions AS r JOIN monthly_sales AS m ON m.region = r.name GROUP BY r.manager",
                "SELECT r.manager, SUM(m.units) FROM regions AS r LEFT JOIN monthly_sales AS m ON m.region = r.name AND m.year = 2024 GROUP BY r.manager",
                "SELECT r.country, SUM(m.units) FROM regions AS r JOIN monthly_sales AS m ON m.region = r.name GROUP BY r.country",
            ],
        ),
    ];
    groups
        .iter()
        .flat_map(|(gold, ordered, preds)| preds.iter().map(move |p| (p.to_string(), gold.to_string(), *ordered)))
        .collect()
}

/// Executes directly and renders each row as strings, reals at fixed
/// precision. `None` if the statement fails.
pub fn raw_rows(db: &Path, sql: &str) -> Option<Vec<Vec<String>>> {
    let conn = Connection::open_with_flags(db, OpenFlags::SQLITE_OPEN_READ_ONLY).ok()?;
    let mut stmt = conn.prepare(sql).ok()?;
    let width = stmt.column_count();
    let mut rows = stmt.query([]).ok()?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().ok()? {
        out.push(
            (0..width)
                .map(|i| match row.get_ref(i).unwrap() {
                    ValueRef::Null => "null".to_string(),
                    ValueRef::Integer(v) => format!("int {v}"),
                    ValueRef::Real(v) => format!("real {v:.4}"),
                    ValueRef::Text(t) => format!("text {}", String::from_utf8_lossy(t)),
                    ValueRef::Blob(_) => "blob".to_string(),
                })
                .collect(),
        );
    }
    Some(out)
}

/// Multiset (or list, when ordered) equality of directly executed rows.
pub fn oracle_equal(db: &Path, pred: &str, gold: &str, ordered: bool) -> bool {
    let (Some(mut p), Some(mut g)) = (raw_rows(db, pred), raw_rows(db, gold)) else { return false };
    if !ordered {
        p.sort();
        g.sort();
    }
    p == g
}
