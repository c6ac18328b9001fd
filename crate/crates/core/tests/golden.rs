//! Regression goldens for the committed seed-7 corridor scene.
//!
//! Set `GROUNDLIFT_BLESS=1` to rewrite the files in `tests/data` after an
//! intentional change.

use std::path::{Path, PathBuf};

use groundlift::experiment::{run_lift, run_robustness, Experiment};
use groundlift::robustness::{summarize, Parameterization};
use groundlift::scene::{generate_scene, Scene, SceneTemplate};
use serde_json::{json, Value};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn bless() -> bool {
    std::env::var("GROUNDLIFT_BLESS").is_ok_and(|v| v == "1")
}

fn seed7() -> Experiment {
    Experiment::load(&repo().join("configs/corridor_seed7.json")).unwrap()
}

/// Recursive comparison; numbers within `rel` relative (or 1e-12 absolute).
fn assert_close(expected: &Value, actual: &Value, rel: f64, path: &str) {
    match (expected, actual) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!(
                (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12,
                "{path}: expected {a}, got {b}"
            );
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}: length");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_close(x, y, rel, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{path}: keys");
            for (k, x) in a {
                assert_close(x, &b[k], rel, &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(expected, actual, "{path}"),
    }
}

fn check(name: &str, actual: Value) {
    let path = data(name);
    if bless() {
        std::fs::write(&path, serde_json::to_string_pretty(&actual).unwrap() + "\n").unwrap();
        return;
    }
    let expected: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_close(&expected, &actual, 1e-9, name);
}

#[test]
fn committed_scene_matches_generator() {
    let generated = generate_scene(SceneTemplate::Corridor, 20, 7).unwrap();
    let committed =
        Scene::from_json(&std::fs::read_to_string(repo().join("configs/scenes/corridor_seed7.json")).unwrap())
            .unwrap();
    assert_eq!(generated, committed);
    check("scene_corridor_seed7.json", serde_json::to_value(&generated).unwrap());
}

#[test]
fn grid_checksum() {
    let run = run_lift(&seed7()).unwrap();
    let sums = |g: &groundlift::bevpool::BevGrid| {
        json!({ "channel_sums": g.channel_sums(), "nonzero_cells": g.occupied().count() })
    };
    check(
        "grid_checksum_seed7.json",
        json!({
            "height": sums(&run.height_grid),
            "depth": sums(&run.depth_grid),
            "height_points": run.height_cloud.len(),
            "depth_points": run.depth_cloud.len(),
        }),
    );
}

#[test]
fn overlap_margin_and_error_table() {
    let run = run_robustness(&seed7()).unwrap();
    let margins: Vec<f64> = run
        .overlaps
        .iter()
        .map(|r| r.overlap_height - r.overlap_depth)
        .collect();
    check(
        "overlap_seed7.json",
        json!({
            "margin": summarize(&margins),
            "height_wins": run.overlaps.iter().filter(|r| r.overlap_height > r.overlap_depth).count(),
        }),
    );

    // per-object medians over the disturbed trials
    let n_objects = run.study.clean.objects.iter().map(|o| o.object + 1).max().unwrap_or(0);
    let mut rows = Vec::new();
    for object in 0..n_objects {
        let per = |p: Parameterization| {
            let errs: Vec<f64> = run
                .study
                .trials
                .iter()
                .flat_map(|t| t.objects.iter().filter(|o| o.object == object))
                .map(|o| o.get(p).distance_error)
                .collect();
            summarize(&errs).map(|s| s.median)
        };
        let clean = run.study.clean.objects.iter().find(|o| o.object == object);
        rows.push(json!({
            "object": object,
            "clean_height": clean.map(|o| o.height.distance_error),
            "clean_depth": clean.map(|o| o.depth.distance_error),
            "median_height": per(Parameterization::Height),
            "median_depth": per(Parameterization::Depth),
        }));
    }
    check("error_table_seed7.json", json!(rows));
}
