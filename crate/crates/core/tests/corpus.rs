//! The `games/` corpus matches the builtins, and every file round-trips
//! through the expression grammar with its closed forms intact.
//!
//! Regenerate with `AGENCY_WRITE_GAMES=1 cargo test -p agency-core --test corpus`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use agency_core::builtin::get_game;
use agency_core::equilibrium::{verify_truthful_equilibrium, Candidate};
use agency_core::game::GameDefinition;

/// File name, builtin name, parameter overrides.
type Entry = (&'static str, &'static str, &'static [(&'static str, f64)]);

const CORPUS: &[Entry] = &[
    ("prop3b_ex1.json", "prop3b_ex1", &[]),
    ("prop3b_ex2.json", "prop3b_ex2", &[]),
    ("ex1_gamma2.json", "ex1", &[("gamma", 2.0)]),
    ("ex1_gamma0.5.json", "ex1", &[("gamma", 0.5)]),
    ("ex2.json", "ex2", &[]),
    ("market.json", "market", &[]),
    ("lobbying_n2.json", "lobbying", &[("n", 2.0)]),
    ("lobbying_n3.json", "lobbying", &[("n", 3.0)]),
    ("b22_ex1.json", "b22_ex1", &[]),
    ("b22_ex2.json", "b22_ex2", &[]),
    ("b22_ex3.json", "b22_ex3", &[]),
    ("b22_ex4.json", "b22_ex4", &[]),
];

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../games")
}

#[test]
fn corpus_matches_builtins_and_round_trips() {
    let write = std::env::var_os("AGENCY_WRITE_GAMES").is_some();
    for (file, name, pairs) in CORPUS {
        let params: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let builtin = get_game(name, &params).unwrap();
        let exported = builtin.definition.to_json().unwrap() + "\n";
        let path = corpus_dir().join(file);
        if write {
            std::fs::write(&path, &exported).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, exported, "{file} is stale");

        let game = GameDefinition::from_json(&text).unwrap().build().unwrap();
        assert_eq!(game.grid().points(), builtin.game.grid().points(), "{file}");
        for cf in &builtin.closed_forms {
            let u = game.evaluate(&cf.action, &cf.bids).unwrap();
            for (x, y) in u.to_vec().iter().zip(cf.utilities.to_vec()) {
                assert!((x - y).abs() < 1e-9, "{file} {}: {x} vs {y}", cf.label);
            }
            let (Some(profile), Some(u_star)) = (cf.profile_on(&game).unwrap(), cf.u_star.clone()) else {
                continue;
            };
            let cand = Candidate::new(&game, cf.action.clone(), profile, u_star).unwrap();
            let report = verify_truthful_equilibrium(&game, &cand).unwrap();
            if cf.truthful_equilibrium {
                assert!(report.pass, "{file} {}: {:?}", cf.label, report.failing());
            } else {
                let expected = cf.rejected_by.as_deref().unwrap();
                let failing = report.failing();
                assert!(!failing.is_empty(), "{file} {}", cf.label);
                for name in failing {
                    let family = name.split('[').next().unwrap();
                    assert_eq!(family, expected, "{file} {}", cf.label);
                }
            }
        }
    }
}
