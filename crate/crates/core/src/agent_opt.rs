//! The agent's problem: best actions under a bidding profile and outside options.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{BiddingProfile, Direction, GameSpec, SpaceKind};

/// Relative tolerance for membership in the argmax set.
pub const ARGMAX_TOL: f64 = 1e-9;
const GOLDEN_ITER: usize = 80;

/// Set of grid actions maximizing the agent's utility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgmaxSet {
    /// Grid indices, ascending.
    pub indices: Vec<usize>,
    pub best: f64,
}

impl ArgmaxSet {
    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }
}

/// `u_0(a, b(a))` at every grid action.
pub fn agent_values(game: &GameSpec, profile: &BiddingProfile) -> Result<Vec<f64>> {
    check_shape(game, profile)?;
    game.grid()
        .points()
        .par_iter()
        .enumerate()
        .map(|(k, a)| game.agent_utility(a, &profile.bids_at(k)))
        .collect()
}

fn check_shape(game: &GameSpec, profile: &BiddingProfile) -> Result<()> {
    if profile.n() != game.n || profile.schedules.iter().any(|s| s.values.len() != game.grid().len()) {
        return Err(Error::Structure(format!(
            "profile shape does not match game `{}` ({} principals, {} grid points)",
            game.name,
            game.n,
            game.grid().len()
        )));
    }
    Ok(())
}

pub fn argmax_of(values: &[f64]) -> ArgmaxSet {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = ARGMAX_TOL * best.abs().max(1.0);
    ArgmaxSet {
        indices: values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= best - tol)
            .map(|(k, _)| k)
            .collect(),
        best,
    }
}

pub fn argmax_set(game: &GameSpec, profile: &BiddingProfile) -> Result<ArgmaxSet> {
    Ok(argmax_of(&agent_values(game, profile)?))
}

/// The bid that removes principal `i` from the agent's consideration.
pub fn pinned_bid(game: &GameSpec) -> f64 {
    match game.agent_direction {
        Direction::Increasing => game.global_min,
        Direction::Decreasing => game.global_max,
    }
}

/// Agent's best utility when principal `i` is pinned to its null bid.
pub fn outside_option(game: &GameSpec, profile: &BiddingProfile, i: usize) -> Result<f64> {
    check_shape(game, profile)?;
    if i >= game.n {
        return Err(Error::Structure(format!("no principal {}", i + 1)));
    }
    let pin = pinned_bid(game);
    let values = game
        .grid()
        .points()
        .par_iter()
        .enumerate()
        .map(|(k, a)| game.agent_utility(a, &profile.bids_with(k, i, pin)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

pub fn outside_options(game: &GameSpec, profile: &BiddingProfile) -> Result<Vec<f64>> {
    (0..game.n).map(|i| outside_option(game, profile, i)).collect()
}

/// Golden-section search of `u_0(a, b(a))` between the neighbours of grid
/// point `k`, using interpolated schedules. Only for one-dimensional interval
/// spaces; elsewhere returns the grid point.
pub fn refine_argmax(game: &GameSpec, profile: &BiddingProfile, k: usize) -> Result<(Vec<f64>, f64)> {
    let grid = game.grid();
    let here = grid.point(k).to_vec();
    let f = |x: f64| -> Result<f64> {
        let a = [x];
        let bids: Vec<f64> = (0..game.n).map(|i| profile.interpolate(game, i, &a)).collect();
        game.agent_utility(&a, &bids)
    };
    if game.action_space.kind != SpaceKind::Interval {
        let v = game.agent_utility(&here, &profile.bids_at(k))?;
        return Ok((here, v));
    }
    let mut lo = grid.point(k.saturating_sub(1))[0];
    let mut hi = grid.point((k + 1).min(grid.len() - 1))[0];
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..GOLDEN_ITER {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1)?;
        }
    }
    let x = 0.5 * (lo + hi);
    let vx = f(x)?;
    let v0 = game.agent_utility(&here, &profile.bids_at(k))?;
    Ok(if vx > v0 { (vec![x], vx) } else { (here, v0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{ActionSpace, Directions, GameDefinition, PrincipalDefinition};

    fn toy() -> GameSpec {
        GameDefinition {
            name: None,
            n: 2,
            action_space: ActionSpace::interval(0.0, 1.0, 11),
            agent_utility: "b1 + b2 - (a - 0.37)^2".into(),
            principals: vec![
                PrincipalDefinition {
                    utility: "a - b1".into(),
                    lower_bound: "0".into(),
                    upper_bound: "1".into(),
                },
                PrincipalDefinition {
                    utility: "1 - a - b2".into(),
                    lower_bound: "0".into(),
                    upper_bound: "1".into(),
                },
            ],
            global_min: 0.0,
            global_max: 1.0,
            own_bid_direction: Directions::All(Direction::Decreasing),
            agent_bid_direction: Direction::Increasing,
            flags: Default::default(),
            params: Default::default(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn argmax_and_ties() {
        let g = toy();
        let zero = BiddingProfile::constant(&g, 0.0);
        let s = argmax_set(&g, &zero).unwrap();
        assert_eq!(s.indices, vec![4]);
        let flat = argmax_of(&[1.0, 1.0 - 1e-10, 0.5, 1.0]);
        assert_eq!(flat.indices, vec![0, 1, 3]);
    }

    #[test]
    fn outside_option_pins_one_principal() {
        let g = toy();
        let p = BiddingProfile::from_fn(&g, |i, a| Ok(if i == 0 { a[0] } else { 0.0 })).unwrap();
        // Without principal 1, the agent only sees -(a - 0.37)^2 on the grid.
        let o = outside_option(&g, &p, 0).unwrap();
        assert!((o + 0.0009).abs() < 1e-12);
        // Pinning principal 2 changes nothing since it already bids zero.
        let best = argmax_set(&g, &p).unwrap().best;
        assert!((outside_option(&g, &p, 1).unwrap() - best).abs() < 1e-15);
    }

    #[test]
    fn golden_refinement_finds_off_grid_peak() {
        let g = toy();
        let zero = BiddingProfile::constant(&g, 0.0);
        let (a, v) = refine_argmax(&g, &zero, 4).unwrap();
        assert!((a[0] - 0.37).abs() < 1e-6);
        assert!(v.abs() < 1e-12);
    }
}
