//! Truthful bidding responses: each principal bids so that its utility
//! equals a target level, clamped to the feasible bid range.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{BiddingProfile, Direction, Flag, GameSpec, Schedule};

pub const BISECTION_MAX_ITER: usize = 100;
pub const BISECTION_TOL: f64 = 1e-12;
pub const DAMPING: f64 = 0.5;
pub const FIXED_POINT_TOL: f64 = 1e-9;
pub const FIXED_POINT_MAX_ITER: usize = 500;
pub const TRUTHFUL_TOL: f64 = 1e-8;

/// Inverse of a principal's own-bid utility at a fixed action and fixed other bids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "bid", rename_all = "snake_case")]
pub enum Phi {
    Bid(f64),
    /// Target is above every utility reachable in the global bid range.
    UnreachableAbove,
    /// Target is below every utility reachable in the global bid range.
    UnreachableBelow,
}

/// Which row of the clamp table produced a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Lower,
    Upper,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Response {
    pub bid: f64,
    pub branch: Branch,
}

fn own_utility(game: &GameSpec, i: usize, action: &[f64], bids: &mut [f64], b: f64) -> Result<f64> {
    bids[i] = b;
    game.principal_utility(i, action, bids)
}

fn check_direction(game: &GameSpec, i: usize, action: &[f64], at_low: f64, at_high: f64) -> Result<()> {
    let dir = game.own_direction(i);
    let contradicted = match dir {
        Direction::Decreasing => at_low < at_high,
        Direction::Increasing => at_low > at_high,
    };
    if contradicted {
        return Err(Error::Monotonicity {
            principal: i + 1,
            declared: dir.as_str(),
            action: action.to_vec(),
            at_low,
            at_high,
        });
    }
    Ok(())
}

/// Bisection for `u_i(a, b_i, b_-i) = target` on `[lo, hi]`, given the utility is
/// monotone in `b_i` with the declared direction and the target lies between
/// the endpoint values.
fn bisect(
    game: &GameSpec,
    i: usize,
    action: &[f64],
    bids: &mut [f64],
    mut lo: f64,
    mut hi: f64,
    target: f64,
) -> Result<f64> {
    let decreasing = game.own_direction(i) == Direction::Decreasing;
    let width = (hi - lo).abs().max(1.0);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECTION_MAX_ITER {
        mid = 0.5 * (lo + hi);
        let u = own_utility(game, i, action, bids, mid)?;
        if (u - target).abs() <= BISECTION_TOL {
            break;
        }
        if (u > target) == decreasing {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * width {
            mid = 0.5 * (lo + hi);
            break;
        }
    }
    Ok(mid)
}

/// Solves for principal `i`'s own bid that yields `target`, searching the global bid range.
pub fn solve_phi(game: &GameSpec, i: usize, action: &[f64], bids: &[f64], target: f64) -> Result<Phi> {
    let mut b = bids.to_vec();
    let (gmin, gmax) = (game.global_min, game.global_max);
    let u_lo = own_utility(game, i, action, &mut b, gmin)?;
    let u_hi = own_utility(game, i, action, &mut b, gmax)?;
    check_direction(game, i, action, u_lo, u_hi)?;
    if u_lo == target {
        return Ok(Phi::Bid(gmin));
    }
    if u_hi == target {
        return Ok(Phi::Bid(gmax));
    }
    let (top, bottom) = (u_lo.max(u_hi), u_lo.min(u_hi));
    if target > top {
        return Ok(Phi::UnreachableAbove);
    }
    if target < bottom {
        return Ok(Phi::UnreachableBelow);
    }
    Ok(Phi::Bid(bisect(game, i, action, &mut b, gmin, gmax, target)?))
}

/// Truthful response of principal `i` at `action` given the other bids in `bids`.
pub fn truthful_response(game: &GameSpec, i: usize, action: &[f64], bids: &[f64], target: f64) -> Result<Response> {
    let mut b = bids.to_vec();
    let lo = game.lower(i, action)?;
    let hi = game.upper(i, action)?;
    let u_lo = own_utility(game, i, action, &mut b, lo)?;
    let u_hi = own_utility(game, i, action, &mut b, hi)?;
    check_direction(game, i, action, u_lo, u_hi)?;
    // The bound with the higher own utility is the one the principal retreats to
    // when the target is out of reach; the other one caps over-delivery.
    let (best, best_u, worst, worst_u, best_branch, worst_branch) = match game.own_direction(i) {
        Direction::Decreasing => (lo, u_lo, hi, u_hi, Branch::Lower, Branch::Upper),
        Direction::Increasing => (hi, u_hi, lo, u_lo, Branch::Upper, Branch::Lower),
    };
    if best_u < target {
        return Ok(Response {
            bid: best,
            branch: best_branch,
        });
    }
    if target < worst_u {
        return Ok(Response {
            bid: worst,
            branch: worst_branch,
        });
    }
    let bid = if best_u == target {
        best
    } else if worst_u == target {
        worst
    } else {
        bisect(game, i, action, &mut b, lo.min(hi), lo.max(hi), target)?
    };
    Ok(Response {
        bid,
        branch: Branch::Interior,
    })
}

/// Joint truthful profile for a vector of target utilities.
#[derive(Debug, Clone, Serialize)]
pub struct TruthfulProfile {
    pub profile: BiddingProfile,
    pub converged: bool,
    /// Largest iteration count over grid points.
    pub iterations: usize,
    /// Largest final damped-step size over grid points.
    pub residual: f64,
}

fn initial_bid(game: &GameSpec, i: usize, action: &[f64]) -> Result<f64> {
    match game.agent_direction {
        Direction::Increasing => game.lower(i, action),
        Direction::Decreasing => game.upper(i, action),
    }
}

struct PointSolution {
    bids: Vec<f64>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

fn solve_point(game: &GameSpec, action: &[f64], targets: &[f64]) -> Result<PointSolution> {
    let n = game.n;
    let mut bids = (0..n)
        .map(|i| initial_bid(game, i, action))
        .collect::<Result<Vec<_>>>()?;
    if game.has_flag(Flag::NoExternalities) {
        let out = (0..n)
            .map(|i| truthful_response(game, i, action, &bids, targets[i]).map(|r| r.bid))
            .collect::<Result<Vec<_>>>()?;
        return Ok(PointSolution {
            bids: out,
            iterations: 1,
            residual: 0.0,
            converged: true,
        });
    }
    let mut residual = f64::INFINITY;
    for it in 1..=FIXED_POINT_MAX_ITER {
        let responses = (0..n)
            .map(|i| truthful_response(game, i, action, &bids, targets[i]).map(|r| r.bid))
            .collect::<Result<Vec<_>>>()?;
        residual = 0.0;
        for (b, r) in bids.iter_mut().zip(&responses) {
            let next = (1.0 - DAMPING) * *b + DAMPING * r;
            residual = f64::max(residual, (next - *b).abs());
            *b = next;
        }
        if residual <= FIXED_POINT_TOL {
            // Snap to the exact response so clamped bids land on their bounds.
            let snapped = (0..n)
                .map(|i| truthful_response(game, i, action, &bids, targets[i]).map(|r| r.bid))
                .collect::<Result<Vec<_>>>()?;
            return Ok(PointSolution {
                bids: snapped,
                iterations: it,
                residual,
                converged: true,
            });
        }
    }
    Ok(PointSolution {
        bids,
        iterations: FIXED_POINT_MAX_ITER,
        residual,
        converged: false,
    })
}

/// Truthful profile relative to `targets`, tabulated on the game grid.
///
/// Without externalities this is a single pass; otherwise a damped synchronous
/// fixed-point iteration runs independently at each grid action.
pub fn truthful_profile(game: &GameSpec, targets: &[f64]) -> Result<TruthfulProfile> {
    build_profile(game, targets, false).map(|t| t.expect("no early exit"))
}

/// Like [`truthful_profile`], but gives up (returns `None`) as soon as one grid
/// action fails to converge.
pub fn converged_truthful_profile(game: &GameSpec, targets: &[f64]) -> Result<Option<BiddingProfile>> {
    Ok(build_profile(game, targets, true)?
        .filter(|t| t.converged)
        .map(|t| t.profile))
}

fn build_profile(game: &GameSpec, targets: &[f64], early_exit: bool) -> Result<Option<TruthfulProfile>> {
    if targets.len() != game.n {
        return Err(Error::Structure(format!(
            "{} targets for {} principals",
            targets.len(),
            game.n
        )));
    }
    let failed = AtomicBool::new(false);
    let points: Vec<Option<PointSolution>> = game
        .grid()
        .points()
        .par_iter()
        .map(|a| {
            if early_exit && failed.load(Ordering::Relaxed) {
                return Ok(None);
            }
            let p = solve_point(game, a, targets)?;
            if !p.converged {
                failed.store(true, Ordering::Relaxed);
            }
            Ok(Some(p))
        })
        .collect::<Result<Vec<_>>>()?;
    if early_exit && failed.load(Ordering::Relaxed) {
        return Ok(None);
    }
    let points: Vec<PointSolution> = points.into_iter().flatten().collect();
    let schedules = (0..game.n)
        .map(|i| Schedule {
            values: points.iter().map(|p| p.bids[i]).collect(),
            step: false,
        })
        .collect();
    Ok(Some(TruthfulProfile {
        profile: BiddingProfile { schedules },
        converged: points.iter().all(|p| p.converged),
        iterations: points.iter().map(|p| p.iterations).max().unwrap_or(0),
        residual: points.iter().map(|p| p.residual).fold(0.0, f64::max),
    }))
}

/// Largest gap between a profile and its truthful response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthfulViolation {
    pub principal: usize,
    pub action: Vec<f64>,
    pub bid: f64,
    pub expected: f64,
}

impl TruthfulViolation {
    pub fn deviation(&self) -> f64 {
        (self.bid - self.expected).abs()
    }
}

/// Checks that every schedule matches its truthful response to the others at
/// `targets` within `tol`; returns the worst mismatch, if any exceeds `tol`.
pub fn truthful_violation(
    game: &GameSpec,
    profile: &BiddingProfile,
    targets: &[f64],
    tol: f64,
) -> Result<Option<TruthfulViolation>> {
    profile.check_feasible(game)?;
    if targets.len() != game.n {
        return Err(Error::Structure(format!(
            "{} targets for {} principals",
            targets.len(),
            game.n
        )));
    }
    let mut worst: Option<TruthfulViolation> = None;
    for (k, a) in game.grid().points().iter().enumerate() {
        let bids = profile.bids_at(k);
        for (i, &target) in targets.iter().enumerate() {
            let r = truthful_response(game, i, a, &bids, target)?;
            let v = TruthfulViolation {
                principal: i + 1,
                action: a.clone(),
                bid: bids[i],
                expected: r.bid,
            };
            if v.deviation() > tol && worst.as_ref().is_none_or(|w| v.deviation() > w.deviation()) {
                worst = Some(v);
            }
        }
    }
    Ok(worst)
}

pub fn is_truthful(game: &GameSpec, profile: &BiddingProfile, targets: &[f64]) -> Result<bool> {
    Ok(truthful_violation(game, profile, targets, TRUTHFUL_TOL)?.is_none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{ActionSpace, Directions, GameDefinition, PrincipalDefinition};

    fn ex1(gamma: f64, res: usize) -> GameSpec {
        let p = |u: &str| PrincipalDefinition {
            utility: u.into(),
            lower_bound: "0".into(),
            upper_bound: "a".into(),
        };
        GameDefinition {
            name: None,
            n: 2,
            action_space: ActionSpace::interval(0.0, 1.0, res),
            agent_utility: "b1 + b2".into(),
            principals: vec![p("a - b1 + gamma*b2"), p("a - b2 + gamma*b1")],
            global_min: 0.0,
            global_max: 1.0,
            own_bid_direction: Directions::All(Direction::Decreasing),
            agent_bid_direction: Direction::Increasing,
            flags: Default::default(),
            params: [("gamma".to_string(), gamma)].into_iter().collect(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn clamp_table_rows() {
        let g = ex1(2.0, 3);
        // u_1 = a - b1 + 2 b2 at a = 1, b2 = 0.5: ranges over [1, 2] for b1 in [0, 1].
        let r = truthful_response(&g, 0, &[1.0], &[0.0, 0.5], 1.5).unwrap();
        assert_eq!(r.branch, Branch::Interior);
        assert!((r.bid - 0.5).abs() < 1e-12);
        let r = truthful_response(&g, 0, &[1.0], &[0.0, 0.5], 3.0).unwrap();
        assert_eq!((r.bid, r.branch), (0.0, Branch::Lower));
        let r = truthful_response(&g, 0, &[1.0], &[0.0, 0.5], 0.5).unwrap();
        assert_eq!((r.bid, r.branch), (1.0, Branch::Upper));
        // Ties at a bound resolve to the interior branch and return the bound.
        let r = truthful_response(&g, 0, &[1.0], &[0.0, 0.5], 2.0).unwrap();
        assert_eq!((r.bid, r.branch), (0.0, Branch::Interior));
    }

    #[test]
    fn phi_markers_and_monotonicity() {
        let g = ex1(0.0, 3);
        assert_eq!(solve_phi(&g, 0, &[0.5], &[0.0, 0.0], 0.25).unwrap(), Phi::Bid(0.25));
        assert_eq!(solve_phi(&g, 0, &[0.5], &[0.0, 0.0], 0.5).unwrap(), Phi::Bid(0.0));
        assert_eq!(solve_phi(&g, 0, &[0.5], &[0.0, 0.0], 0.9).unwrap(), Phi::UnreachableAbove);
        assert_eq!(solve_phi(&g, 0, &[0.5], &[0.0, 0.0], -0.9).unwrap(), Phi::UnreachableBelow);
        let mut wrong = g.clone();
        wrong.principals[0].direction = Direction::Increasing;
        assert!(matches!(
            solve_phi(&wrong, 0, &[0.5], &[0.0, 0.0], 0.25),
            Err(Error::Monotonicity { principal: 1, .. })
        ));
    }

    #[test]
    fn joint_profile_with_positive_externalities() {
        // gamma = 0.5, target 1: b_i = a + 0.5 b_j - 1 clamped to [0, a].
        let g = ex1(0.5, 11);
        let t = truthful_profile(&g, &[1.0, 1.0]).unwrap();
        assert!(t.converged);
        for (k, a) in g.grid().points().iter().enumerate() {
            // Symmetric interior solution b = 2(a - 1) is negative, so both clamp to 0 below a = 1.
            let expect = (2.0 * (a[0] - 1.0)).max(0.0);
            assert!((t.profile.value(0, k) - expect).abs() < 1e-9, "a={a:?}");
        }
        assert!(is_truthful(&g, &t.profile, &[1.0, 1.0]).unwrap());
        assert!(!is_truthful(&g, &t.profile, &[0.5, 0.5]).unwrap());
    }

    #[test]
    fn joint_profile_interior_fixed_point() {
        // gamma = 0.5, target 0.6: b = 2(a - 0.6), interior for a in [0.6, 1].
        let g = ex1(0.5, 11);
        let t = truthful_profile(&g, &[0.6, 0.6]).unwrap();
        assert!(t.converged);
        let k = g.grid().index_of(&[0.8], 1e-12).unwrap();
        assert!((t.profile.value(0, k) - 0.4).abs() < 1e-8);
        let u = g.evaluate(&[0.8], &t.profile.bids_at(k)).unwrap();
        assert!((u.principals[0] - 0.6).abs() < 1e-8);
    }
}
