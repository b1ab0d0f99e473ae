//! Brute-force Pareto dominance search over grid allocations and a sampled
//! utility frontier.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{linspace, Allocation, GameSpec, UtilityVector};

/// A margin must exceed this for the dominance to count as strict.
pub const STRICTNESS: f64 = 1e-6;
/// Slack allowed on the weak inequalities.
pub const WEAK_SLACK: f64 = 1e-9;
/// Largest number of utility evaluations a scan may attempt.
pub const SCAN_GUARD: f64 = 1e8;
pub const DEFAULT_BID_RESOLUTION: usize = 41;

/// A feasible grid pair that Pareto-dominates the tested allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceWitness {
    pub action: Vec<f64>,
    pub bids: Vec<f64>,
    pub utilities: UtilityVector,
    /// Agent first, then principals.
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Efficiency {
    EfficientAtResolution { bid_resolution: usize, pairs: usize },
    Dominated { witness: DominanceWitness, pairs: usize },
}

impl Efficiency {
    pub fn is_efficient(&self) -> bool {
        matches!(self, Efficiency::EfficientAtResolution { .. })
    }

    pub fn witness(&self) -> Option<&DominanceWitness> {
        match self {
            Efficiency::Dominated { witness, .. } => Some(witness),
            _ => None,
        }
    }
}

/// Margins of `u` over `base`, if `u` dominates it.
pub fn dominance_margins(u: &[f64], base: &[f64]) -> Option<Vec<f64>> {
    let margins: Vec<f64> = u.iter().zip(base).map(|(x, y)| x - y).collect();
    let weak = margins.iter().all(|&m| m >= -WEAK_SLACK);
    let strict = margins.iter().any(|&m| m > STRICTNESS);
    (weak && strict).then_some(margins)
}

pub fn dominates(u: &[f64], base: &[f64]) -> bool {
    dominance_margins(u, base).is_some()
}

fn guard(game: &GameSpec, r: usize, what: &str) -> Result<()> {
    let needed = game.grid().len() as f64 * (r as f64).powi(game.n as i32);
    if needed > SCAN_GUARD {
        return Err(Error::SizeGuard {
            what: what.into(),
            needed,
            limit: SCAN_GUARD,
        });
    }
    Ok(())
}

/// Per-principal bid grid at `action`, as a mixed-radix index space.
struct BidGrid {
    axes: Vec<Vec<f64>>,
}

impl BidGrid {
    fn at(game: &GameSpec, action: &[f64], r: usize) -> Result<Option<Self>> {
        let mut axes = Vec::with_capacity(game.n);
        for i in 0..game.n {
            let (lo, hi) = (game.lower(i, action)?, game.upper(i, action)?);
            if hi < lo {
                return Ok(None);
            }
            axes.push(if hi > lo { linspace(lo, hi, r) } else { vec![lo] });
        }
        Ok(Some(BidGrid { axes }))
    }

    fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    fn bids(&self, mut idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (i, axis) in self.axes.iter().enumerate().rev() {
            out[i] = axis[idx % axis.len()];
            idx /= axis.len();
        }
        out
    }
}

/// Scans every grid action and bid-grid point for a pair dominating `alloc`.
/// The witness maximizes the summed margins, ties going to the earliest pair.
pub fn check_efficiency(game: &GameSpec, alloc: &Allocation, bid_resolution: usize) -> Result<Efficiency> {
    let r = bid_resolution.max(2);
    guard(game, r, "efficiency scan")?;
    let base = alloc.utilities.to_vec();
    let found = game
        .grid()
        .points()
        .par_iter()
        .map(|a| -> Result<(usize, Option<(f64, DominanceWitness)>)> {
            let Some(grid) = BidGrid::at(game, a, r)? else {
                return Ok((0, None));
            };
            let mut best: Option<(f64, DominanceWitness)> = None;
            for idx in 0..grid.len() {
                let bids = grid.bids(idx);
                let u = game.evaluate(a, &bids)?;
                if let Some(margins) = dominance_margins(&u.to_vec(), &base) {
                    let total: f64 = margins.iter().sum();
                    if best.as_ref().is_none_or(|(t, _)| total > *t) {
                        best = Some((
                            total,
                            DominanceWitness {
                                action: a.clone(),
                                bids,
                                utilities: u,
                                margins,
                            },
                        ));
                    }
                }
            }
            Ok((grid.len(), best))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = found.iter().map(|(n, _)| n).sum();
    let mut best: Option<(f64, DominanceWitness)> = None;
    for (_, hit) in found {
        if let Some((t, w)) = hit {
            if best.as_ref().is_none_or(|(b, _)| t > *b) {
                best = Some((t, w));
            }
        }
    }
    Ok(match best {
        Some((_, witness)) => Efficiency::Dominated { witness, pairs },
        None => Efficiency::EfficientAtResolution {
            bid_resolution: r,
            pairs,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub action: Vec<f64>,
    pub bids: Vec<f64>,
    pub utilities: UtilityVector,
}

fn weakly_dominates(u: &[f64], v: &[f64]) -> bool {
    u.iter().zip(v).all(|(x, y)| *x >= *y - WEAK_SLACK) && u.iter().zip(v).any(|(x, y)| *x > *y + WEAK_SLACK)
}

/// Non-dominated utility vectors over the game grid and a per-principal bid
/// grid, sorted lexicographically by (action, bids).
pub fn frontier_sample(game: &GameSpec, bid_resolution: usize) -> Result<Vec<FrontierPoint>> {
    let r = bid_resolution.max(2);
    guard(game, r, "frontier sample")?;
    let per_action = game
        .grid()
        .points()
        .par_iter()
        .map(|a| -> Result<Vec<FrontierPoint>> {
            let Some(grid) = BidGrid::at(game, a, r)? else {
                return Ok(Vec::new());
            };
            (0..grid.len())
                .map(|idx| {
                    let bids = grid.bids(idx);
                    let utilities = game.evaluate(a, &bids)?;
                    Ok(FrontierPoint {
                        action: a.clone(),
                        bids,
                        utilities,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points: Vec<(Vec<f64>, FrontierPoint)> = per_action
        .into_iter()
        .flatten()
        .map(|p| (p.utilities.to_vec(), p))
        .collect();
    // A dominating vector has a larger sum, so scanning by decreasing sum only
    // needs comparisons against points already kept.
    points.sort_by(|(u, _), (v, _)| v.iter().sum::<f64>().total_cmp(&u.iter().sum::<f64>()));
    let mut kept: Vec<(Vec<f64>, FrontierPoint)> = Vec::new();
    for (u, p) in points {
        if !kept.iter().any(|(k, _)| weakly_dominates(k, &u)) {
            kept.push((u, p));
        }
    }
    let survivors: Vec<bool> = kept
        .par_iter()
        .map(|(u, _)| !kept.iter().any(|(k, _)| weakly_dominates(k, u)))
        .collect();
    let mut out: Vec<FrontierPoint> = kept
        .into_iter()
        .zip(survivors)
        .filter(|(_, keep)| *keep)
        .map(|((_, p), _)| p)
        .collect();
    out.sort_by(|x, y| {
        x.action
            .iter()
            .chain(&x.bids)
            .zip(y.action.iter().chain(&y.bids))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::get_game;
    use crate::game::ActionSpace;
    use std::collections::BTreeMap;

    fn ex1(gamma: f64, resolution: usize) -> GameSpec {
        let p: BTreeMap<String, f64> = [("gamma".to_string(), gamma)].into();
        get_game("ex1", &p).unwrap().game.with_resolution(resolution).unwrap()
    }

    #[test]
    fn allocation_b_dichotomy() {
        let g = ex1(2.0, 51);
        let b = Allocation::new(&g, vec![1.0], vec![0.0, 0.0]).unwrap();
        let res = check_efficiency(&g, &b, 41).unwrap();
        let w = res.witness().unwrap();
        assert_eq!(w.action, vec![1.0]);
        assert_eq!(w.bids, vec![1.0, 1.0]);
        assert!(w.utilities.to_vec().iter().all(|&u| u >= 2.0 - 1e-6));

        let g = ex1(0.5, 51);
        let b = Allocation::new(&g, vec![1.0], vec![0.0, 0.0]).unwrap();
        assert!(check_efficiency(&g, &b, 41).unwrap().is_efficient());
    }

    #[test]
    fn no_self_domination() {
        let g = ex1(2.0, 11);
        let a = Allocation::new(&g, vec![0.5], vec![0.25, 0.5]).unwrap();
        let u = a.utilities.to_vec();
        assert!(!dominates(&u, &u));
        assert_eq!(dominance_margins(&u, &u), None);
    }

    #[test]
    fn frontier_of_example_one() {
        let g = ex1(2.0, 11);
        let f = frontier_sample(&g, 11).unwrap();
        assert!(!f.is_empty());
        assert!(f.iter().all(|p| p.action == vec![1.0]));
        assert!(f.iter().all(|p| (p.bids[0].max(p.bids[1]) - 1.0).abs() < 1e-12));
        assert!(f
            .iter()
            .any(|p| p.utilities.to_vec().iter().all(|&u| (u - 2.0).abs() < 1e-12)));
        for p in &f {
            for q in &f {
                assert!(!weakly_dominates(&q.utilities.to_vec(), &p.utilities.to_vec()));
            }
        }
    }

    #[test]
    fn single_point_frontier() {
        let g = ex1(2.0, 11).with_action_space(ActionSpace::finite(vec![vec![0.0]])).unwrap();
        let f = frontier_sample(&g, 5).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].bids, vec![0.0, 0.0]);
    }

    #[test]
    fn size_guard() {
        let g = ex1(2.0, 201);
        let b = Allocation::new(&g, vec![1.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(check_efficiency(&g, &b, 100_000), Err(Error::SizeGuard { .. })));
    }
}
