use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn agency(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agency")).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stderr {}", String::from_utf8_lossy(&out.stderr));
    })
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn close(v: &Value, x: f64, tol: f64) -> bool {
    v.as_f64().is_some_and(|y| (y - x).abs() <= tol)
}

#[test]
fn solve_market_reports_equal_profits() {
    let out = agency(&["solve", "--game", "market", "--param", "c=1", "--param", "qbar=2", "--param", "pbar=7"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["kind"], "solve");
    let hit = r["candidates"].as_array().unwrap().iter().any(|c| {
        c["pass"] == true && c["utilities"]["principals"].as_array().unwrap().iter().all(|u| close(u, 2.0, 1e-4))
    });
    assert!(hit, "no candidate with profits (2, 2)");
    assert_eq!(r["validity"]["route"], "a-ii");
}

#[test]
fn verify_names_the_failing_condition() {
    let candidate = data("prop3b_ex2_candidate.json");
    let out = agency(&["verify", "--game", "prop3b_ex2", "--candidate", &candidate]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    let failing: Vec<&Value> = r["report"]["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .collect();
    assert_eq!(failing.len(), 1);
    assert_eq!(failing[0]["name"], "Bii");
    assert!(close(&failing[0]["witness"]["action"][0], 1.0, 1e-12));
}

#[test]
fn lobbying_is_routed_through_symmetric_externalities() {
    let out = agency(&["check-assumptions", "--game", "lobbying", "--param", "n=2", "--param", "e=1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["route"], "b");
}

#[test]
fn unrouted_game_exits_with_check_failure() {
    let out = agency(&["check-assumptions", "--game", "ex1", "--param", "gamma=2", "--samples", "2000"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["route"], Value::Null);
}

#[test]
fn same_seed_same_bytes() {
    let args = ["check-assumptions", "--game", "b22_ex3", "--samples", "3000", "--seed", "7"];
    let (a, b) = (agency(&args), agency(&args));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let other = agency(&["check-assumptions", "--game", "b22_ex3", "--samples", "3000", "--seed", "8"]);
    assert_ne!(a.stdout, other.stdout);
}

/// Rows of a curves CSV as numbers, header checked.
fn curves(game: &str, resolution: &str) -> Vec<Vec<f64>> {
    let out = agency(&[
        "curves", "--game", game, "--closed-form", "A", "--bid-resolution", resolution, "--format", "csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("b1,b2,u0,u1,u2,ref_u0,ref_u1,ref_u2"));
    lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn improves_everyone(row: &[f64], strict: bool) -> bool {
    (0..3).all(|k| {
        let (u, r) = (row[2 + k], row[5 + k]);
        if strict {
            u > r + 1e-12
        } else {
            u >= r - 1e-12
        }
    })
}

#[test]
fn improvement_regions_meet_only_at_the_reference() {
    let rows = curves("b22_ex1", "51");
    let weak: Vec<&Vec<f64>> = rows.iter().filter(|r| improves_everyone(r, false)).collect();
    assert_eq!(weak.len(), 1);
    assert_eq!((weak[0][0], weak[0][1]), (1.0, 1.0));
}

#[test]
fn improvement_regions_overlap_with_asymmetric_externalities() {
    let rows = curves("b22_ex2", "51");
    assert!(rows.iter().any(|r| improves_everyone(r, true)));
}

#[test]
fn degenerate_grid_is_the_reference() {
    let rows = curves("b22_ex1", "1");
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r[0], r[1]), (1.0, 1.0));
    assert_eq!(&r[2..5], &r[5..8]);
}

#[test]
fn curves_need_two_principals() {
    let out = agency(&["curves", "--game", "lobbying", "--param", "n=3", "--action", "0,0", "--bids", "0,0,0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn efficiency_finds_the_dominating_allocation() {
    let out = agency(&["efficiency", "--game", "ex1", "--param", "gamma=2", "--action", "1", "--bids", "0,0"]);
    assert_eq!(out.status.code(), Some(1));
    let w = &report(&out)["result"]["witness"];
    assert_eq!(w["bids"], serde_json::json!([1.0, 1.0]));
    let out = agency(&["efficiency", "--game", "ex1", "--param", "gamma=0.5", "--action", "1", "--bids", "0,0"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn oracle_lists_equilibrium_allocations() {
    let out = agency(&[
        "oracle", "--game", "ex1", "--param", "gamma=2", "--actions", "0,0.2,1", "--menu", "0,0.2,0.5,1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let allocations = r["allocations"].as_array().unwrap();
    assert!(allocations.iter().any(|a| a["action"][0] == 1.0 && a["bids"] == serde_json::json!([0.0, 0.0])));
    assert!(!allocations.iter().any(|a| a["action"][0] == 1.0 && a["bids"] == serde_json::json!([1.0, 1.0])));
}

#[test]
fn frontier_writes_csv_into_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let out = agency(&[
        "frontier", "--game", "ex1", "--resolution", "11", "--bid-resolution", "5", "--format", "csv", "--out", &out_dir,
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("frontier.csv")).unwrap();
    assert!(text.starts_with("a,b_1,b_2,u_0,u_1,u_2\n"));
    assert!(text.lines().count() > 1);
}

#[test]
fn game_files_load_like_builtins() {
    let file = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../games/prop3b_ex1.json");
    let file = file.to_string_lossy();
    let a = agency(&["frontier", "--file", &file, "--resolution", "11", "--bid-resolution", "5"]);
    let b = agency(&["frontier", "--game", "prop3b_ex1", "--resolution", "11", "--bid-resolution", "5"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn structural_errors_exit_two() {
    assert_eq!(agency(&["solve", "--game", "nope"]).status.code(), Some(2));
    assert_eq!(agency(&["solve", "--game", "market", "--param", "c"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"n\": 2").unwrap();
    let bad = bad.to_string_lossy().into_owned();
    assert_eq!(agency(&["solve", "--file", &bad]).status.code(), Some(2));
    assert_eq!(agency(&["verify", "--game", "prop3b_ex2", "--candidate", &bad]).status.code(), Some(2));
    assert_eq!(agency(&["solve", "--game", "market", "--format", "csv"]).status.code(), Some(2));
    assert_eq!(
        agency(&["efficiency", "--game", "ex1", "--action", "1", "--bids", "0,0", "--bid-resolution", "100000"])
            .status
            .code(),
        Some(2)
    );
}
