use std::process::Command;

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_main-annotate");

fn sample(input: &std::path::Path, seed: &str) -> Value {
    let out = Command::new(BIN)
        .args([
            "sample",
            input.to_str().unwrap(),
            "--rate",
            "0.15",
            "--seed",
            seed,
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn manifest_sampling_from_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let mut manifest = serde_json::Map::new();
    for (cohort, n) in [("children", 116), ("young", 20), ("elderly", 71)] {
        for i in 0..n {
            // two stories per participant count once
            for story in ["dog", "cat"] {
                manifest.insert(
                    format!("{cohort}{i:03}_{story}.cha"),
                    json!({"participant_id": format!("{cohort}{i:03}"), "cohort": cohort, "story": story}),
                );
            }
        }
    }
    let path = tmp.path().join("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string(&Value::Object(manifest)).unwrap(),
    )
    .unwrap();

    let r = sample(&path, "3");
    let selected = |c: &str| r["cohorts"][c]["selected"].as_array().unwrap().len();
    assert_eq!(
        (selected("children"), selected("young"), selected("elderly")),
        (18, 3, 11)
    );
    assert_eq!(r["cohorts"]["children"]["population"], 116);
    assert_eq!(r["participants"].as_array().unwrap().len(), 32);
    assert_eq!(r["narratives"].as_array().unwrap().len(), 64);
    assert_eq!(sample(&path, "3"), r);
    assert_ne!(sample(&path, "4")["participants"], r["participants"]);
}

#[test]
fn bad_rate_is_rejected() {
    let out = Command::new(BIN)
        .args(["sample", "/nonexistent", "--rate", "1.5"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
