//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use agency_core::{get_game, GameSpec};

/// Builtin game at the given action-grid resolution.
pub fn game(name: &str, params: &[(&str, f64)], resolution: usize) -> GameSpec {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    get_game(name, &p)
        .and_then(|b| b.game.with_resolution(resolution))
        .expect("builtin game")
}
