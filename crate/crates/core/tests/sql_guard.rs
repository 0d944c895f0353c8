use insight_core::sql::{sanitize, tokenize_sql, Rule, TokenKind, DEFAULT_DENY_LIST};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAGMENTS: &[&str] = &[
    "SELECT", "region", ",", "SUM(amount)", "FROM", "monthly_sales", "WHERE", "amount", ">=", "10.5",
    "'it''s'", "'drop'", "-- note\n", "/* block */", "GROUP BY", "ORDER BY", "DESC", ";", "\"quoted id\"",
    "(", ")", "t.a", "<>", "1e3", "`tick`", "[br]", "naïve", "||", "\t", "\n", "  ",
];

fn reconstructs(input: &str) -> bool {
    let Ok(tokens) = tokenize_sql(input) else { return true };
    let mut pos = 0;
    for t in &tokens {
        if !input[pos..t.offset].chars().all(char::is_whitespace) {
            return false;
        }
        if &input[t.offset..t.offset + t.text.len()] != t.text {
            return false;
        }
        pos = t.offset + t.text.len();
    }
    input[pos..].chars().all(char::is_whitespace)
}

#[test]
fn reconstruction_holds_on_fuzz_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let n = rng.gen_range(1..25);
        let mut s = String::new();
        for _ in 0..n {
            s.push_str(FRAGMENTS.choose(&mut rng).unwrap());
            if rng.gen_bool(0.7) {
                s.push(' ');
            }
        }
        let tokens = tokenize_sql(&s).expect("fragments are balanced");
        assert!(!tokens.is_empty());
        assert!(reconstructs(&s), "{s:?}");
    }
}

#[test]
fn every_deny_keyword_token_is_rejected() {
    for word in DEFAULT_DENY_LIST {
        for sql in [
            format!("{word} TABLE t"),
            format!("SELECT a FROM t WHERE x IN (SELECT 1) {word}"),
            format!("select 1 from t; {}", word.to_lowercase()),
        ] {
            let v = sanitize(&sql);
            assert!(!v.allowed, "{sql}");
            assert!(v.has(Rule::ForbiddenKeyword), "{sql}");
        }
    }
}

proptest! {
    #[test]
    fn lexer_never_panics_and_reconstructs(s in "\\PC{0,80}") {
        prop_assert!(reconstructs(&s));
    }

    #[test]
    fn deny_words_in_literals_stay_allowed(
        idx in 0usize..DEFAULT_DENY_LIST.len(),
        base in prop::sample::select(vec![
            "SELECT region FROM monthly_sales WHERE region = {}",
            "SELECT {} AS label, amount FROM monthly_sales",
            "SELECT COUNT(*) FROM monthly_sales WHERE region <> {} AND month > 3",
        ]),
        lower in any::<bool>(),
    ) {
        let word = if lower { DEFAULT_DENY_LIST[idx].to_lowercase() } else { DEFAULT_DENY_LIST[idx].to_string() };
        let sql = base.replace("{}", &format!("'{word} me'"));
        prop_assert!(sanitize(&sql).allowed, "{}", sql);
    }

    #[test]
    fn comments_are_single_tokens(body in "[a-zA-Z ]{0,30}") {
        let sql = format!("SELECT 1 /*{body}*/ -- {body}");
        let toks = tokenize_sql(&sql).unwrap();
        prop_assert_eq!(toks.iter().filter(|t| t.kind == TokenKind::Comment).count(), 2);
    }
}
