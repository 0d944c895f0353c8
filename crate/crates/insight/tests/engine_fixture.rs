mod common;

use std::collections::BTreeMap;

use insight::dataset::DB_FILE;
use insight::engine::{execution_match, QueryEngine};
use insight_core::eval::exact_match;
use insight_core::result::Value;
use insight_core::sql::Guard;

use common::corpora;

fn engine() -> (tempfile::TempDir, QueryEngine) {
    let dir = common::sales_dir();
    let e = QueryEngine::default();
    e.register("sales", dir.path().join(DB_FILE));
    (dir, e)
}

#[test]
fn fixture_has_all_csv_rows() {
    let (_d, e) = engine();
    let t = e.execute("SELECT COUNT(*) FROM monthly_sales", "sales").unwrap();
    assert_eq!(t.rows(), [vec![Value::Integer(36)]]);
    let t = e.execute("SELECT COUNT(*) FROM regions", "sales").unwrap();
    assert_eq!(t.rows(), [vec![Value::Integer(3)]]);
}

#[test]
fn region_sums_agree_with_csv() {
    let (dir, e) = engine();
    let mut expected: BTreeMap<String, f64> = BTreeMap::new();
    for row in common::csv_rows(&dir.path().join("monthly_sales.csv")) {
        *expected.entry(row[0].clone()).or_default() += row[3].parse::<f64>().unwrap();
    }
    let t = e.execute("SELECT region, SUM(amount) FROM monthly_sales GROUP BY region ORDER BY region", "sales").unwrap();
    assert_eq!(t.row_count(), expected.len());
    for (row, (region, sum)) in t.rows().iter().zip(&expected) {
        assert_eq!(row[0], Value::Text(region.clone()));
        let Value::Real(got) = row[1] else { panic!("{row:?}") };
        assert!((got - sum).abs() < 1e-6, "{region}: {got} vs {sum}");
    }
}

#[test]
fn avg_is_not_sum() {
    let (_d, e) = engine();
    let gold = "SELECT region, SUM(amount) FROM monthly_sales GROUP BY region";
    let pred = "SELECT region, AVG(amount) FROM monthly_sales GROUP BY region";
    assert!(!execution_match(&e, pred, gold, "sales").unwrap());
    assert!(execution_match(&e, gold, gold, "sales").unwrap());
}

#[test]
fn mutation_corpus_matches_direct_execution() {
    let (dir, e) = engine();
    let db = dir.path().join(DB_FILE);
    let corpus = corpora::execution_mutations();
    assert_eq!(corpus.len(), 50);
    let (mut same, mut differ) = (0, 0);
    for (pred, gold, ordered) in &corpus {
        let want = corpora::oracle_equal(&db, pred, gold, *ordered);
        let got = execution_match(&e, pred, gold, "sales").unwrap();
        assert_eq!(got, want, "pred {pred}\ngold {gold}");
        if want { same += 1 } else { differ += 1 }
    }
    // the corpus exercises both outcomes
    assert!(same >= 10 && differ >= 10, "{same} / {differ}");
}

#[test]
fn sanitizer_rejects_every_mutating_statement() {
    let g = Guard::default();
    let cases = corpora::mutating_statements();
    assert_eq!(cases.len(), 60);
    for sql in &cases {
        assert!(!g.sanitize(sql).allowed, "accepted: {sql:?}");
    }
}

#[test]
fn sanitizer_accepts_every_legitimate_select() {
    let g = Guard::default();
    let cases = corpora::legitimate_selects();
    assert_eq!(cases.len(), 40);
    for sql in &cases {
        let v = g.sanitize(sql);
        assert!(v.allowed, "rejected: {sql}\n{:?}", v.violations);
    }
}

#[test]
fn exact_match_goldens() {
    let pairs = corpora::exact_match_golden();
    assert_eq!(pairs.len(), 50);
    for p in &pairs {
        let v = exact_match(&p.pred, &p.gold).unwrap();
        assert_eq!(v.matched, p.expected, "pred {}\ngold {}\n{:?}", p.pred, p.gold, v.reason);
    }
}

#[test]
fn no_statement_ever_writes() {
    let (_d, e) = engine();
    for sql in corpora::mutating_statements() {
        let _ = e.execute(&sql, "sales");
    }
    for sql in corpora::legitimate_selects() {
        let _ = e.execute(&sql, "sales");
    }
    assert_eq!(e.write_count(), 0);
    let t = e.execute("SELECT COUNT(*) FROM monthly_sales", "sales").unwrap();
    assert_eq!(t.rows(), [vec![Value::Integer(36)]]);
}
