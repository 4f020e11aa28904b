mod support;

use support::formula_oracle::{compare_engine_with_oracle, Class};

#[test]
fn engine_matches_brute_force_interpreter() {
    let run = compare_engine_with_oracle(0x5eed, 2000);
    assert!(
        run.mismatches.is_empty(),
        "{:#?}",
        &run.mismatches[..run.mismatches.len().min(10)]
    );
    assert!(run.max_depth <= 4);
    for p in [
        "number",
        "text",
        "bool",
        "ref",
        "ref_sheet",
        "ref_quoted",
        "if",
        "sum",
        "average",
        "group",
        "op+",
        "op-",
        "op*",
        "op/",
        "op>",
        "op<",
        "op>=",
        "op<=",
        "op=",
    ] {
        assert!(
            run.productions.contains(p),
            "production {p} never generated"
        );
    }
    for c in [
        Class::Parse,
        Class::Type,
        Class::DivZero,
        Class::Reference,
        Class::Numeric,
        Class::Cycle,
    ] {
        assert!(run.classes.contains(&c), "{c:?} never produced");
    }
    assert!(run.values > run.cases / 5, "{} value results", run.values);
}

#[test]
fn other_seeds_agree_too() {
    for seed in 1..=4 {
        let run = compare_engine_with_oracle(seed, 500);
        assert!(
            run.mismatches.is_empty(),
            "seed {seed}: {:#?}",
            &run.mismatches[..run.mismatches.len().min(10)]
        );
    }
}
