use miniops_tsstore::sql::{parse, print};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    sql: String,
    valid: bool,
    column: Option<usize>,
}

#[derive(Deserialize)]
struct Corpus {
    cases: Vec<Case>,
}

fn corpus() -> Vec<Case> {
    let text = include_str!("data/sql_corpus.json");
    serde_json::from_str::<Corpus>(text).unwrap().cases
}

#[test]
fn corpus_has_at_least_fifty_cases_of_both_kinds() {
    let cases = corpus();
    assert!(cases.len() >= 50);
    assert!(cases.iter().any(|c| c.valid));
    assert!(cases.iter().any(|c| !c.valid));
}

#[test]
fn every_case_parses_or_fails_at_expected_column() {
    for c in corpus() {
        match (parse(&c.sql), c.valid) {
            (Ok(_), true) => {}
            (Err(e), false) => assert_eq!(Some(e.column), c.column, "{:?}: {}", c.sql, e),
            (Ok(q), false) => panic!("{:?} parsed to {q:?}", c.sql),
            (Err(e), true) => panic!("{:?}: {e}", c.sql),
        }
    }
}

#[test]
fn print_is_a_fixed_point_on_valid_cases() {
    for c in corpus().into_iter().filter(|c| c.valid) {
        let q = parse(&c.sql).unwrap();
        let text = print(&q);
        let again = parse(&text).unwrap_or_else(|e| panic!("{text:?}: {e}"));
        assert_eq!(q, again, "{text}");
        assert_eq!(print(&again), text);
    }
}
