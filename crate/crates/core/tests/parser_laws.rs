mod common;

use cfms::ops::{format_operation_call, parse_operation_call, parse_operation_call_with, OpKind, OpSet};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn round_trips(seed: u64) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let call = common::arb_call(&mut rng);
    let text = format_operation_call(&call);
    match parse_operation_call(&text) {
        Ok(back) if back == call => Ok(()),
        Ok(back) => Err(format!("`{text}` parsed as {back:?}, expected {call:?}")),
        Err(e) => Err(format!("`{text}` failed to parse: {e}")),
    }
}

#[test]
fn format_then_parse_is_identity() {
    for seed in 0..1500 {
        round_trips(seed).unwrap();
    }
}

#[test]
fn parser_never_panics_on_noise() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..5000 {
        let input = common::arb_parser_input(&mut rng);
        let _ = parse_operation_call(&input);
    }
}

#[test]
fn disabled_operations_are_rejected() {
    for kind in OpKind::ALL {
        let allowed = OpSet::all().without(kind);
        let mut rng = StdRng::seed_from_u64(kind as u64);
        for _ in 0..200 {
            let call = common::arb_call(&mut rng);
            let parsed = parse_operation_call_with(&format_operation_call(&call), allowed);
            if call.kind() == Some(kind) {
                assert!(parsed.is_err(), "{call}");
            } else {
                assert_eq!(parsed.unwrap(), call);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_law(seed in any::<u64>()) {
        if let Err(e) = round_trips(seed) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn total_on_arbitrary_text(s in any::<String>()) {
        let _ = parse_operation_call(&s);
    }

    #[test]
    fn canonical_text_is_a_fixed_point(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let text = format_operation_call(&common::arb_call(&mut rng));
        let again = format_operation_call(&parse_operation_call(&text).unwrap());
        prop_assert_eq!(again, text);
    }
}
