mod common;

use common::*;
use mlprompt_core::instance::{build_instance, emit_lp, sample_data, InstanceError, ParamValues};
use mlprompt_core::load_bounds;
use proptest::prelude::*;

fn binpacking_bounds(set_lo: i64, set_hi: i64, c: (i64, i64), w: (f64, f64)) -> String {
    format!(
        r#"{{"set": [[{set_lo}, {set_hi}]], "hyper-parameter": [[null, null]], "parameter": [[{}, {}], [{:?}, {:?}]], "parameter_types": ["integer", "float"]}}"#,
        c.0, c.1, w.0, w.1
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn values_stay_in_half_open_bounds(
        seed in any::<u64>(),
        set_lo in 1i64..6,
        set_extra in 0i64..4,
        c_lo in -50i64..50,
        c_gap in 1i64..=15,
        w_lo in -20.0f64..20.0,
        w_gap in 0.01f64..15.0,
    ) {
        let model = corpus_model("binpacking");
        let text = binpacking_bounds(set_lo, set_lo + set_extra, (c_lo, c_lo + c_gap), (w_lo, w_lo + w_gap));
        let bounds = load_bounds(&text).unwrap();
        let data = sample_data(&model, &bounds, seed).unwrap();
        let items = &data.set_elements[&model.sets[0].name];
        let card = items.len() as i64;
        prop_assert!(card >= set_lo && card <= set_lo + set_extra);
        for p in data.param_values.values() {
            prop_assert_eq!(p.values.len(), p.shape.iter().product::<usize>());
            match &p.values {
                ParamValues::Integer(v) => {
                    for x in v {
                        prop_assert!(*x >= c_lo && *x < c_lo + c_gap);
                    }
                }
                ParamValues::Float(v) => {
                    // bounds pass through decimal text, so compare against the parsed endpoints
                    let (lo, hi) = (format!("{w_lo:?}").parse::<f64>().unwrap(), format!("{:?}", w_lo + w_gap).parse::<f64>().unwrap());
                    for x in v {
                        prop_assert!(*x >= lo && *x < hi, "{} not in [{}, {})", x, lo, hi);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bytes(seed in any::<u64>()) {
        let model = corpus_model("binpacking");
        let bounds = load_bounds(&binpacking_bounds(2, 4, (5, 10), (1.5, 7.25))).unwrap();
        let a = sample_data(&model, &bounds, seed).unwrap();
        let b = sample_data(&model, &bounds, seed).unwrap();
        prop_assert_eq!(a.to_json_pretty(), b.to_json_pretty());
        prop_assert_eq!(
            emit_lp(&build_instance(&model, &a).unwrap()),
            emit_lp(&build_instance(&model, &b).unwrap())
        );
    }
}

#[test]
fn different_seeds_usually_differ() {
    let model = corpus_model("binpacking");
    let bounds = load_bounds(&binpacking_bounds(5, 5, (0, 15), (0.0, 15.0))).unwrap();
    let distinct: std::collections::BTreeSet<String> = (0..20)
        .map(|s| sample_data(&model, &bounds, s).unwrap().to_json_pretty())
        .collect();
    assert!(distinct.len() > 15);
}

#[test]
fn noncompliant_bounds_are_refused() {
    let model = corpus_model("binpacking");
    let bounds = load_bounds(&binpacking_bounds(2, 4, (5, 100), (1.0, 2.0))).unwrap();
    assert!(matches!(sample_data(&model, &bounds, 1), Err(InstanceError::InvalidBounds(_))));
}
