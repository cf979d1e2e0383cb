use std::collections::BTreeSet;

use serde_json::{Map, Value};

use indlab::config::{ExperimentConfig, ScenarioSpec};

fn schema() -> Value {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/config.schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn keys(m: &Map<String, Value>) -> BTreeSet<String> {
    m.keys().cloned().collect()
}

fn props(v: &Value) -> &Map<String, Value> {
    v["properties"].as_object().unwrap()
}

#[test]
fn top_level_and_nested_keys_match() {
    let schema = schema();
    let cfg = ExperimentConfig { cadence: Some(1), out: Some("o".into()), ..ExperimentConfig::default() };
    let json = serde_json::to_value(&cfg).unwrap();
    let top = props(&schema);
    assert_eq!(keys(top), keys(json.as_object().unwrap()));
    for nested in ["estimator", "closure", "identity"] {
        let p = props(&top[nested]);
        assert_eq!(keys(p), keys(json[nested].as_object().unwrap()), "{nested}");
        // documented defaults are the real ones
        for (k, v) in json[nested].as_object().unwrap() {
            assert_eq!(&p[k]["default"], v, "{nested}.{k}");
        }
    }
    for (k, v) in json.as_object().unwrap() {
        if let Some(d) = top[k].get("default") {
            match (d.as_f64(), v.as_f64()) {
                (Some(a), Some(b)) => assert_eq!(a, b, "{k}"),
                _ => assert_eq!(d, v, "{k}"),
            }
        }
    }
}

#[test]
fn scenario_variants_match() {
    let schema = schema();
    let variants = schema["properties"]["scenario"]["oneOf"].as_array().unwrap();
    let full = [
        ScenarioSpec::Disparate { n: 4 },
        ScenarioSpec::Redundant { n: 4, strength: Some(1.0) },
        ScenarioSpec::Modular { n: 4, blocks: Some(2), block_sizes: Some(vec![2, 2]), w_in: 0.5, w_out: 0.1 },
        ScenarioSpec::Ring { n: 4, strength: Some(1.0) },
        ScenarioSpec::Custom { path: "m.csv".into() },
    ];
    assert_eq!(variants.len(), full.len());
    for spec in full {
        let json = serde_json::to_value(&spec).unwrap();
        let v = variants
            .iter()
            .find(|v| v["properties"]["kind"]["const"] == json["kind"])
            .unwrap_or_else(|| panic!("no schema variant for {}", spec.kind()));
        assert_eq!(keys(props(v)), keys(json.as_object().unwrap()), "{}", spec.kind());
        // required keys are exactly the ones serde cannot default
        for r in v["required"].as_array().unwrap() {
            let mut stripped = json.as_object().unwrap().clone();
            stripped.remove(r.as_str().unwrap());
            let cfg = serde_json::json!({ "scenario": stripped });
            assert!(ExperimentConfig::from_json(&cfg.to_string()).is_err(), "{} without {r}", spec.kind());
        }
    }
}
