mod common;

use proptest::prelude::*;

#[test]
fn engine_matches_reference_on_fixed_seeds() {
    let (mut compared, mut succeeded) = (0, 0);
    for seed in 0..3000 {
        let t = common::oracle_case(seed).unwrap_or_else(|e| panic!("{e}"));
        compared += t.compared;
        succeeded += t.succeeded;
    }
    // Both the success and the error paths get real coverage.
    assert!(succeeded * 4 >= compared, "{succeeded}/{compared}");
    assert!(succeeded * 10 <= compared * 9, "{succeeded}/{compared}");
    println!("{succeeded} of {compared} calls succeeded");
}

#[test]
fn alphabet_classification_agrees_with_inference() {
    use cfms::table::Value;
    for (raw, _) in common::NUMERIC_CELLS {
        assert!(matches!(Value::infer(raw), Value::Number(_)), "{raw}");
    }
    for raw in common::TEXT_CELLS {
        assert!(matches!(Value::infer(raw), Value::Text(_)), "{raw}");
    }
    assert_eq!(Value::infer(""), Value::Empty);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn engine_matches_reference(seed in any::<u64>()) {
        if let Err(e) = common::oracle_case(seed) {
            prop_assert!(false, "{}", e);
        }
    }
}
