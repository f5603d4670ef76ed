use mthm_wasm_demo::{alignment_oracle_json, attention_json, specaugment_json};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.expect("view builds")).expect("valid JSON")
}

#[test]
fn attention_view_has_one_map_per_head() {
    let v = parse(attention_json(7, 6, 20, 4, 2, 0.5, 2.0, true));
    let alpha = v["alpha"].as_array().unwrap();
    assert_eq!(alpha.len(), 4);
    for head in alpha {
        let rows = head.as_array().unwrap();
        assert_eq!(rows.len(), 6);
        for row in rows {
            let row: Vec<f64> = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            assert_eq!(row.len(), 20);
            assert!(row.iter().sum::<f64>() <= 1.0 + 1e-9);
        }
    }
    let hard = v["hard"].as_array().unwrap();
    assert_eq!(hard.len(), 6);
    assert!(hard.iter().all(|step| step.as_array().unwrap().len() == 4));
}

#[test]
fn attention_view_rejects_bad_sizes() {
    assert!(attention_json(1, 0, 10, 2, 2, 0.0, 1.0, false).is_err());
    assert!(attention_json(1, 4, 10, 3, 2, 0.0, 1.0, false).is_ok());
    assert!(attention_json(1, 4, 10, 9, 2, 0.0, 1.0, false).is_err());
}

#[test]
fn noise_changes_expected_but_not_hard_attention() {
    let quiet = parse(attention_json(3, 5, 12, 2, 2, 0.0, 1.0, false));
    let noisy = parse(attention_json(3, 5, 12, 2, 2, 0.0, 1.0, true));
    assert_ne!(quiet["alpha"], noisy["alpha"]);
    assert_eq!(quiet["hard"], noisy["hard"]);
}

#[test]
fn specaugment_view_marks_block_cells() {
    let v = parse(specaugment_json(11, 100, 40, 40, 27, 2, 2, 0.2));
    let masked: Vec<u64> = v["masked"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(masked.len(), 100 * 40);
    let blocks = v["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 4);
    for b in blocks {
        let (start, len) = (b["start"].as_u64().unwrap() as usize, b["len"].as_u64().unwrap() as usize);
        for k in start..start + len {
            match b["axis"].as_str().unwrap() {
                "time" => assert!((0..40).all(|c| masked[k * 40 + c] == 1)),
                _ => assert!((0..100).all(|r| masked[r * 40 + k] == 1)),
            }
        }
    }
    assert_eq!(parse(specaugment_json(11, 100, 40, 40, 27, 2, 2, 0.2)), v);
}

#[test]
fn oracle_view_agrees_with_enumeration() {
    let v = parse(alignment_oracle_json(5, 4, 6));
    assert!(v["max_abs_error"].as_f64().unwrap() < 1e-12);
    assert!(alignment_oracle_json(5, 9, 6).is_err());
}
