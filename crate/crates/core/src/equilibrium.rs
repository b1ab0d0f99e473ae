//! Truthful-equilibrium verification and search, the truthful-best-response
//! check, and an exhaustive equilibrium oracle for tiny finite games.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::agent_opt::{agent_values, argmax_of, outside_options, ArgmaxSet};
use crate::error::{Error, Result};
use crate::game::{
    ActionSpace, BiddingProfile, Flag, GameSpec, PrivateView, Schedule, UtilityVector, FEASIBILITY_TOL,
};
use crate::truthful::{converged_truthful_profile, truthful_response, truthful_violation, TRUTHFUL_TOL};

/// Tolerance of the equilibrium conditions.
pub const CONDITION_TOL: f64 = 1e-6;
/// Utility comparison tolerance of the enumeration oracle.
pub const ORACLE_TOL: f64 = 1e-9;
/// Largest number of profile evaluations the oracle will attempt.
pub const ORACLE_GUARD: f64 = 1e7;
/// Grid tolerance for locating a candidate action.
pub const ACTION_TOL: f64 = 1e-9;

/// A candidate truthful equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub action: Vec<f64>,
    pub profile: BiddingProfile,
    pub u_star: Vec<f64>,
    pub agent_value: f64,
}

impl Candidate {
    /// Builds a candidate, reading the agent value off the profile.
    pub fn new(game: &GameSpec, action: Vec<f64>, profile: BiddingProfile, u_star: Vec<f64>) -> Result<Self> {
        let k = action_index(game, &action)?;
        let agent_value = game.agent_utility(&action, &profile.bids_at(k))?;
        Ok(Candidate {
            action,
            profile,
            u_star,
            agent_value,
        })
    }

    pub fn bids(&self, game: &GameSpec) -> Result<Vec<f64>> {
        Ok(self.profile.bids_at(action_index(game, &self.action)?))
    }
}

pub fn action_index(game: &GameSpec, action: &[f64]) -> Result<usize> {
    game.grid().index_of(action, ACTION_TOL).ok_or_else(|| {
        Error::Structure(format!(
            "action {action:?} is not a grid point of `{}`; choose a resolution that contains it",
            game.name
        ))
    })
}

/// Action and utilities demonstrating a failed condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub action: Vec<f64>,
    pub bids: Vec<f64>,
    pub utilities: UtilityVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub pass: bool,
    /// Size of the defect (zero when the condition holds exactly).
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub action: Vec<f64>,
    pub u_star: Vec<f64>,
    pub agent_value: f64,
    pub conditions: Vec<Condition>,
    pub pass: bool,
}

impl ConditionReport {
    pub fn failing(&self) -> Vec<&str> {
        self.conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Everything about a profile that does not depend on the chosen action.
pub struct EquilibriumContext<'g> {
    game: &'g GameSpec,
    profile: BiddingProfile,
    u_star: Vec<f64>,
    values: Vec<f64>,
    argmax: ArgmaxSet,
    outside: Vec<f64>,
    scale: f64,
    truthful: Condition,
    bii: Condition,
}

impl<'g> EquilibriumContext<'g> {
    pub fn new(game: &'g GameSpec, profile: BiddingProfile, u_star: Vec<f64>) -> Result<Self> {
        if u_star.len() != game.n {
            return Err(Error::Structure(format!(
                "u_star has {} entries for {} principals",
                u_star.len(),
                game.n
            )));
        }
        profile.check_feasible(game)?;
        let values = agent_values(game, &profile)?;
        let argmax = argmax_of(&values);
        let outside = outside_options(game, &profile)?;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = (argmax.best - lo).max(1.0);

        let truthful = match truthful_violation(game, &profile, &u_star, TRUTHFUL_TOL)? {
            None => Condition {
                name: "truthful".into(),
                pass: true,
                residual: 0.0,
                witness: None,
            },
            Some(v) => {
                let k = action_index(game, &v.action)?;
                let bids = profile.bids_at(k);
                Condition {
                    name: "truthful".into(),
                    pass: false,
                    residual: v.deviation(),
                    witness: Some(Witness {
                        utilities: game.evaluate(&v.action, &bids)?,
                        action: v.action,
                        bids,
                    }),
                }
            }
        };

        let mut ctx = EquilibriumContext {
            game,
            profile,
            u_star,
            values,
            argmax,
            outside,
            scale,
            truthful,
            bii: Condition {
                name: "Bii".into(),
                pass: true,
                residual: 0.0,
                witness: None,
            },
        };
        ctx.bii = ctx.check_bii()?;
        Ok(ctx)
    }

    pub fn profile(&self) -> &BiddingProfile {
        &self.profile
    }

    pub fn argmax(&self) -> &ArgmaxSet {
        &self.argmax
    }

    pub fn outside_options(&self) -> &[f64] {
        &self.outside
    }

    fn in_ai(&self, k: usize) -> bool {
        self.argmax.best - self.values[k] <= CONDITION_TOL * self.argmax.best.abs().max(1.0)
    }

    fn aii_residuals(&self, k: usize) -> Vec<f64> {
        self.outside
            .iter()
            .map(|o| (self.values[k] - o).abs() / self.scale)
            .collect()
    }

    /// Largest strict improvement over `u_star` among actions meeting (Ai) and (Aii).
    fn check_bii(&self) -> Result<Condition> {
        let mut worst: Option<(f64, Witness)> = None;
        for k in 0..self.values.len() {
            if !self.in_ai(k) || self.aii_residuals(k).iter().any(|&r| r > CONDITION_TOL) {
                continue;
            }
            let a = self.game.grid().point(k);
            let bids = self.profile.bids_at(k);
            let u = self.game.evaluate(a, &bids)?;
            let gaps: Vec<f64> = u.principals.iter().zip(&self.u_star).map(|(x, y)| x - y).collect();
            let margin = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weakly_above = gaps.iter().all(|&g| g >= -CONDITION_TOL);
            if weakly_above && margin > CONDITION_TOL && worst.as_ref().is_none_or(|(m, _)| margin > *m) {
                worst = Some((
                    margin,
                    Witness {
                        action: a.to_vec(),
                        bids,
                        utilities: u,
                    },
                ));
            }
        }
        Ok(match worst {
            None => Condition {
                name: "Bii".into(),
                pass: true,
                residual: 0.0,
                witness: None,
            },
            Some((m, w)) => Condition {
                name: "Bii".into(),
                pass: false,
                residual: m,
                witness: Some(w),
            },
        })
    }

    /// Conditions (Ai), (Aii) per principal, (Bi), (Bii) and truthfulness at grid action `k`.
    pub fn check_action(&self, k: usize) -> Result<ConditionReport> {
        let a = self.game.grid().point(k);
        let bids = self.profile.bids_at(k);
        let u = self.game.evaluate(a, &bids)?;
        let witness = Witness {
            action: a.to_vec(),
            bids: bids.clone(),
            utilities: u.clone(),
        };
        let mut conditions = Vec::with_capacity(self.game.n + 4);
        let ai_res = (self.argmax.best - self.values[k]).max(0.0) / self.argmax.best.abs().max(1.0);
        let ai_pass = self.in_ai(k);
        conditions.push(Condition {
            name: "Ai".into(),
            pass: ai_pass,
            residual: ai_res,
            witness: (!ai_pass).then(|| witness.clone()),
        });
        for (i, r) in self.aii_residuals(k).into_iter().enumerate() {
            conditions.push(Condition {
                name: format!("Aii[{}]", i + 1),
                pass: r <= CONDITION_TOL,
                residual: r,
                witness: (r > CONDITION_TOL).then(|| witness.clone()),
            });
        }
        let bi_res = u
            .principals
            .iter()
            .zip(&self.u_star)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        conditions.push(Condition {
            name: "Bi".into(),
            pass: bi_res <= CONDITION_TOL,
            residual: bi_res,
            witness: (bi_res > CONDITION_TOL).then(|| witness.clone()),
        });
        conditions.push(self.bii.clone());
        conditions.push(self.truthful.clone());
        let pass = conditions.iter().all(|c| c.pass);
        Ok(ConditionReport {
            action: a.to_vec(),
            u_star: self.u_star.clone(),
            agent_value: self.values[k],
            conditions,
            pass,
        })
    }
}

/// Checks a candidate against the sufficient conditions for a truthful equilibrium.
pub fn verify_truthful_equilibrium(game: &GameSpec, cand: &Candidate) -> Result<ConditionReport> {
    let k = action_index(game, &cand.action)?;
    let ctx = EquilibriumContext::new(game, cand.profile.clone(), cand.u_star.clone())?;
    ctx.check_action(k)
}

/// Search settings for [`solve_truthful`].
#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    /// Scan points per principal dimension (or along the diagonal).
    pub scan_points: usize,
    /// Local refinement factor around promising scan points.
    pub refine_factor: usize,
    pub newton_iterations: usize,
    /// Residual level treated as a root.
    pub root_tol: f64,
    /// Largest number of scan points in a full grid scan.
    pub max_scan: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            scan_points: 101,
            refine_factor: 10,
            newton_iterations: 30,
            root_tol: CONDITION_TOL,
            max_scan: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub u_star: Vec<f64>,
    /// Largest normalized gap between the agent's best value and an outside option.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Solved {
    pub candidate: Candidate,
    pub report: ConditionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub candidates: Vec<Solved>,
    pub landscape: Vec<ScanPoint>,
    /// Reference vectors where the joint truthful profile did not converge.
    pub skipped: Vec<Vec<f64>>,
    pub scan_range: Vec<(f64, f64)>,
}

/// Range of principal utilities over grid actions and low/mid/high bid corners.
fn utility_range(game: &GameSpec) -> Result<Vec<(f64, f64)>> {
    let n = game.n;
    let corners = 3usize.pow(n as u32);
    let per_action: Vec<Vec<(f64, f64)>> = game
        .grid()
        .points()
        .par_iter()
        .map(|a| {
            let bounds = (0..n)
                .map(|i| Ok((game.lower(i, a)?, game.upper(i, a)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
            let mut bids = vec![0.0; n];
            for c in 0..corners {
                let mut rem = c;
                for (j, b) in bids.iter_mut().enumerate() {
                    let (lo, hi) = bounds[j];
                    *b = [lo, 0.5 * (lo + hi), hi][rem % 3];
                    rem /= 3;
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let u = game.principal_utility(i, a, &bids)?;
                    o.0 = o.0.min(u);
                    o.1 = o.1.max(u);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for r in per_action {
        for (acc, x) in range.iter_mut().zip(r) {
            acc.0 = acc.0.min(x.0);
            acc.1 = acc.1.max(x.1);
        }
    }
    Ok(range)
}

/// Profile builder with a per-principal cache for games without externalities.
struct ProfileBuilder<'g> {
    game: &'g GameSpec,
    separable: bool,
    cache: std::sync::Mutex<HashMap<(usize, u64), Vec<f64>>>,
}

impl<'g> ProfileBuilder<'g> {
    fn new(game: &'g GameSpec) -> Self {
        ProfileBuilder {
            game,
            separable: game.has_flag(Flag::NoExternalities),
            cache: Default::default(),
        }
    }

    fn schedule(&self, i: usize, target: f64) -> Result<Vec<f64>> {
        let key = (i, target.to_bits());
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let game = self.game;
        let values = game
            .grid()
            .points()
            .iter()
            .map(|a| {
                let bids = vec![game.global_min; game.n];
                truthful_response(game, i, a, &bids, target).map(|r| r.bid)
            })
            .collect::<Result<Vec<_>>>()?;
        self.cache.lock().expect("cache lock").insert(key, values.clone());
        Ok(values)
    }

    /// Joint truthful profile, or `None` when the fixed point does not converge.
    fn build(&self, targets: &[f64]) -> Result<Option<BiddingProfile>> {
        if self.separable {
            let schedules = targets
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    Ok(Schedule {
                        values: self.schedule(i, t)?,
                        step: false,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Some(BiddingProfile { schedules }));
        }
        converged_truthful_profile(self.game, targets)
    }
}

/// Normalized (Aii) gaps `(best − outside_i) / scale` under a profile.
fn residuals(game: &GameSpec, profile: &BiddingProfile) -> Result<Vec<f64>> {
    let values = agent_values(game, profile)?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = (best - lo).max(1.0);
    Ok(outside_options(game, profile)?
        .into_iter()
        .map(|o| (best - o) / scale)
        .collect())
}

fn norm(r: &[f64]) -> f64 {
    r.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

struct Evaluator<'g> {
    game: &'g GameSpec,
    builder: ProfileBuilder<'g>,
    symmetric: bool,
}

impl Evaluator<'_> {
    /// Maps scan coordinates to a full reference vector.
    fn expand(&self, x: &[f64]) -> Vec<f64> {
        if self.symmetric {
            vec![x[0]; self.game.n]
        } else {
            x.to_vec()
        }
    }

    fn eval(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        let targets = self.expand(x);
        match self.builder.build(&targets)? {
            None => Ok(None),
            Some(p) => {
                let r = residuals(self.game, &p)?;
                Ok(Some(if self.symmetric { vec![norm(&r)] } else { r }))
            }
        }
    }
}

fn grid_coords(ranges: &[(f64, f64)], points: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = ranges
        .iter()
        .map(|&(lo, hi)| crate::game::linspace(lo, hi, points))
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; axes.len()];
            for d in (0..axes.len()).rev() {
                x[d] = axes[d][idx % axes[d].len()];
                idx /= axes[d].len();
            }
            x
        })
        .collect()
}

/// Searches for truthful equilibria by scanning reference utilities and
/// keeping self-consistent candidates that pass verification.
pub fn solve_truthful(game: &GameSpec, config: &SolveConfig) -> Result<SolveResult> {
    let symmetric = game.has_flag(Flag::Symmetric);
    let full_range = utility_range(game)?;
    let ranges: Vec<(f64, f64)> = if symmetric {
        let lo = full_range.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let hi = full_range.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        vec![(lo, hi)]
    } else {
        full_range.clone()
    };
    let needed = (config.scan_points as f64).powi(ranges.len() as i32);
    if needed > config.max_scan as f64 {
        return Err(Error::SizeGuard {
            what: "reference-utility scan".into(),
            needed,
            limit: config.max_scan as f64,
        });
    }
    let ev = Evaluator {
        game,
        builder: ProfileBuilder::new(game),
        symmetric,
    };
    let coords = grid_coords(&ranges, config.scan_points);
    let evaluated: Vec<Option<Vec<f64>>> = coords
        .par_iter()
        .map(|x| ev.eval(x))
        .collect::<Result<Vec<_>>>()?;

    let mut landscape = Vec::with_capacity(coords.len());
    let mut skipped = Vec::new();
    for (x, r) in coords.iter().zip(&evaluated) {
        match r {
            Some(r) => landscape.push(ScanPoint {
                u_star: ev.expand(x),
                residual: norm(r),
                converged: true,
            }),
            None => {
                skipped.push(ev.expand(x));
                landscape.push(ScanPoint {
                    u_star: ev.expand(x),
                    residual: f64::NAN,
                    converged: false,
                });
            }
        }
    }

    let seeds = find_seeds(&ranges, config, &coords, &evaluated);
    let steps: Vec<f64> = ranges
        .iter()
        .map(|&(lo, hi)| (hi - lo) / (config.scan_points.max(2) - 1) as f64)
        .collect();
    let roots: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|(x, r)| {
            if norm(r) <= config.root_tol {
                return Ok(Some(x.clone()));
            }
            refine_seed(&ev, x, &steps, &ranges, config)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let candidates = self_consistent(game, &ev.builder, roots.iter().map(|x| ev.expand(x)).collect())?;
    Ok(SolveResult {
        candidates,
        landscape,
        skipped,
        scan_range: ranges,
    })
}

/// Direct hits, local minima of the residual norm, and 1-D sign changes.
fn find_seeds(
    ranges: &[(f64, f64)],
    config: &SolveConfig,
    coords: &[Vec<f64>],
    evaluated: &[Option<Vec<f64>>],
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let dims = ranges.len();
    let m = config.scan_points;
    let norms: Vec<f64> = evaluated
        .iter()
        .map(|r| r.as_ref().map_or(f64::INFINITY, |r| norm(r)))
        .collect();
    let mut seeds = Vec::new();
    for (idx, x) in coords.iter().enumerate() {
        let Some(r) = &evaluated[idx] else { continue };
        let v = norms[idx];
        if v <= config.root_tol {
            seeds.push((x.clone(), r.clone()));
            continue;
        }
        // Neighbours along each axis in the mixed-radix layout.
        let mut is_min = true;
        let mut stride = 1;
        for d in (0..dims).rev() {
            let pos = (idx / stride) % m;
            if pos > 0 && norms[idx - stride] < v {
                is_min = false;
            }
            if pos + 1 < m && norms[idx + stride] <= v {
                is_min = false;
            }
            if dims == 1 && pos + 1 < m {
                if let Some(rn) = &evaluated[idx + 1] {
                    if rn[0].signum() != r[0].signum() && rn[0] != 0.0 && r[0] != 0.0 {
                        seeds.push((x.clone(), r.clone()));
                    }
                }
            }
            stride *= m;
            let _ = d;
        }
        if is_min {
            seeds.push((x.clone(), r.clone()));
        }
    }
    seeds
}

fn refine_seed(
    ev: &Evaluator<'_>,
    seed: &[f64],
    steps: &[f64],
    ranges: &[(f64, f64)],
    config: &SolveConfig,
) -> Result<Option<Vec<f64>>> {
    // Local grid, then Newton with a forward-difference Jacobian.
    let local: Vec<(f64, f64)> = seed
        .iter()
        .zip(steps)
        .zip(ranges)
        .map(|((&x, &h), &(lo, hi))| ((x - h).max(lo), (x + h).min(hi)))
        .collect();
    let pts = grid_coords(&local, 2 * config.refine_factor + 1);
    let mut best: Option<(Vec<f64>, Vec<f64>)> = None;
    for p in pts {
        if let Some(r) = ev.eval(&p)? {
            if best.as_ref().is_none_or(|(_, br)| norm(&r) < norm(br)) {
                best = Some((p, r));
            }
        }
    }
    let Some((mut x, mut r)) = best else {
        return Ok(None);
    };
    let dims = x.len();
    for _ in 0..config.newton_iterations {
        if norm(&r) <= config.root_tol {
            return Ok(Some(x));
        }
        let mut jac = vec![vec![0.0; dims]; r.len()];
        for d in 0..dims {
            let h = 1e-7 * (ranges[d].1 - ranges[d].0).abs().max(1.0);
            let mut xh = x.clone();
            xh[d] += h;
            let Some(rh) = ev.eval(&xh)? else { return Ok(None) };
            for (row, (a, b)) in jac.iter_mut().zip(rh.iter().zip(&r)) {
                row[d] = (a - b) / h;
            }
        }
        let Some(step) = solve_linear(&jac, &r) else { break };
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..20 {
            let xn: Vec<f64> = x
                .iter()
                .zip(&step)
                .zip(ranges)
                .map(|((xi, si), &(lo, hi))| (xi - t * si).clamp(lo, hi))
                .collect();
            if let Some(rn) = ev.eval(&xn)? {
                if norm(&rn) < norm(&r) {
                    x = xn;
                    r = rn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((norm(&r) <= config.root_tol).then_some(x))
}

/// Least-squares solve `J s = r` via normal equations with Gaussian elimination.
fn solve_linear(jac: &[Vec<f64>], r: &[f64]) -> Option<Vec<f64>> {
    let n = jac.first()?.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = jac.iter().map(|row| row[i] * row[j]).sum();
        }
        a[i][n] = jac.iter().zip(r).map(|(row, ri)| row[i] * ri).sum();
    }
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[p][c].abs() < 1e-14 {
            return None;
        }
        a.swap(c, p);
        let pivot = a[c].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != c {
                let f = row[c] / pivot[c];
                for (x, y) in row[c..].iter_mut().zip(&pivot[c..]) {
                    *x -= f * y;
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// Reference vectors closer than this (relative) are one candidate.
const CLUSTER_TOL: f64 = 1e-5;

fn aii_gap(report: &ConditionReport) -> f64 {
    report
        .conditions
        .iter()
        .filter(|c| c.name.starts_with("Aii"))
        .map(|c| c.residual)
        .fold(0.0, f64::max)
}

fn key_of(u: &[f64]) -> Vec<i64> {
    u.iter().map(|x| (x * 1e9).round() as i64).collect()
}

/// For each root, re-anchor the references at the utilities actually delivered
/// at each agent-optimal action and keep the actions that verify.
fn self_consistent(game: &GameSpec, builder: &ProfileBuilder<'_>, roots: Vec<Vec<f64>>) -> Result<Vec<Solved>> {
    let mut anchors: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
    for targets in roots {
        let Some(profile) = builder.build(&targets)? else { continue };
        let values = agent_values(game, &profile)?;
        for k in argmax_of(&values).indices {
            let u = game.evaluate(game.grid().point(k), &profile.bids_at(k))?;
            anchors.entry(key_of(&u.principals)).or_insert(u.principals);
        }
    }
    let per_anchor: Vec<Vec<Solved>> = anchors
        .into_values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|u| {
            let Some(profile) = builder.build(u)? else {
                return Ok(Vec::new());
            };
            let ctx = EquilibriumContext::new(game, profile, u.clone())?;
            let mut out = Vec::new();
            for &k in &ctx.argmax().indices {
                let report = ctx.check_action(k)?;
                if report.pass {
                    out.push(Solved {
                        candidate: Candidate {
                            action: game.grid().point(k).to_vec(),
                            profile: ctx.profile().clone(),
                            u_star: u.clone(),
                            agent_value: report.agent_value,
                        },
                        report,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    // Near-identical reference vectors at the same action collapse to the one
    // with the smallest outside-option gap.
    let mut out: Vec<Solved> = Vec::new();
    for s in per_anchor.into_iter().flatten() {
        let same = out.iter().position(|o| {
            o.candidate.action == s.candidate.action
                && o.candidate
                    .u_star
                    .iter()
                    .zip(&s.candidate.u_star)
                    .all(|(x, y)| (x - y).abs() <= CLUSTER_TOL * x.abs().max(1.0))
        });
        match same {
            Some(j) if aii_gap(&s.report) < aii_gap(&out[j].report) => out[j] = s,
            Some(_) => {}
            None => out.push(s),
        }
    }
    out.sort_by(|x, y| {
        x.candidate
            .action
            .iter()
            .zip(&y.candidate.action)
            .map(|(a, b)| a.total_cmp(b))
            .chain(x.candidate.u_star.iter().zip(&y.candidate.u_star).map(|(a, b)| a.total_cmp(b)))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}

/// Tiny-game restriction: finite action points and a finite bid menu.
#[derive(Debug, Clone)]
pub struct TinyGame {
    pub game: GameSpec,
    pub bids: Vec<f64>,
    /// Feasible menu entries at each grid action, per principal.
    options: Vec<Vec<Vec<f64>>>,
}

impl TinyGame {
    pub fn new(game: &GameSpec, actions: &[Vec<f64>], bids: &[f64]) -> Result<Self> {
        let game = game.with_action_space(ActionSpace::finite(actions.to_vec()))?;
        let mut bids = bids.to_vec();
        bids.sort_by(f64::total_cmp);
        bids.dedup();
        let options = (0..game.n)
            .map(|i| {
                game.grid()
                    .points()
                    .iter()
                    .map(|a| {
                        let lo = game.lower(i, a)?;
                        let hi = game.upper(i, a)?;
                        let opts: Vec<f64> = bids
                            .iter()
                            .copied()
                            .filter(|&b| b >= lo - FEASIBILITY_TOL && b <= hi + FEASIBILITY_TOL)
                            .collect();
                        if opts.is_empty() {
                            return Err(Error::Structure(format!(
                                "principal {} has no feasible menu bid at action {a:?}",
                                i + 1
                            )));
                        }
                        Ok(opts)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TinyGame { game, bids, options })
    }

    /// Number of feasible step profiles of principal `i`.
    pub fn profile_count(&self, i: usize) -> f64 {
        self.options[i].iter().map(|o| o.len() as f64).product()
    }

    /// Principal `i`'s `idx`-th feasible step profile (mixed radix, first action slowest).
    pub fn profile(&self, i: usize, mut idx: usize) -> Vec<f64> {
        let opts = &self.options[i];
        let mut out = vec![0.0; opts.len()];
        for k in (0..opts.len()).rev() {
            out[k] = opts[k][idx % opts[k].len()];
            idx /= opts[k].len();
        }
        out
    }

    fn to_profile(&self, tables: &[Vec<f64>]) -> BiddingProfile {
        BiddingProfile {
            schedules: tables
                .iter()
                .map(|t| Schedule {
                    values: t.clone(),
                    step: true,
                })
                .collect(),
        }
    }
}

/// Set of step profiles the oracle enumerates.
#[derive(Debug, Clone)]
pub enum ProfileSpace {
    /// Every feasible table over the full action grid.
    Full,
    /// Tables that depend only on the principal's own action component.
    Private(Box<PrivateView>),
}

/// Value of a deviation: the best utility principal `i` can obtain among the
/// agent's optimal actions when `i` plays `own` against `tables`.
pub fn deviation_value(tiny: &TinyGame, i: usize, tables: &[Vec<f64>], own: &[f64]) -> Result<(f64, ArgmaxSet)> {
    let game = &tiny.game;
    let mut bids = vec![0.0; game.n];
    let mut values = Vec::with_capacity(game.grid().len());
    for (k, a) in game.grid().points().iter().enumerate() {
        for (j, b) in bids.iter_mut().enumerate() {
            *b = if j == i { own[k] } else { tables[j][k] };
        }
        values.push(game.agent_utility(a, &bids)?);
    }
    let set = argmax_of(&values);
    let mut best = f64::NEG_INFINITY;
    for &k in &set.indices {
        for (j, b) in bids.iter_mut().enumerate() {
            *b = if j == i { own[k] } else { tables[j][k] };
        }
        best = best.max(game.principal_utility(i, game.grid().point(k), &bids)?);
    }
    Ok((best, set))
}

/// Best deviation of principal `i` over the profile space, with the deviating table.
pub fn best_deviation(
    tiny: &TinyGame,
    space: &ProfileSpace,
    i: usize,
    tables: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for own in own_profiles(tiny, space, i)? {
        let (v, _) = deviation_value(tiny, i, tables, &own)?;
        if v > best.0 {
            best = (v, own);
        }
    }
    Ok(best)
}

fn own_profiles(tiny: &TinyGame, space: &ProfileSpace, i: usize) -> Result<Vec<Vec<f64>>> {
    let count = tiny.profile_count(i);
    if count > ORACLE_GUARD {
        return Err(Error::SizeGuard {
            what: format!("step profiles of principal {}", i + 1),
            needed: count,
            limit: ORACLE_GUARD,
        });
    }
    let all = (0..count as usize).map(|idx| tiny.profile(i, idx));
    Ok(match space {
        ProfileSpace::Full => all.collect(),
        ProfileSpace::Private(view) => {
            let grid = tiny.game.grid();
            all.filter(|t| {
                (0..grid.len()).all(|k| {
                    (0..grid.len()).all(|m| {
                        grid.point(k)[i] != grid.point(m)[i] || t[k] == t[m]
                    })
                })
            })
            .filter(|_| view.game.n == tiny.game.n)
            .collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub principal: usize,
    pub table: Vec<f64>,
    pub value: f64,
    pub equilibrium_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleVerdict {
    pub equilibrium: bool,
    pub action: Vec<f64>,
    pub utilities: UtilityVector,
    /// The agent is indifferent between several actions in the profile.
    pub tie_dependent: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<Deviation>,
}

/// Checks one profile and agent action against the equilibrium definition.
pub fn oracle_check(tiny: &TinyGame, space: &ProfileSpace, tables: &[Vec<f64>], action: &[f64]) -> Result<OracleVerdict> {
    let game = &tiny.game;
    let k = action_index(game, action)?;
    let profile = tiny.to_profile(tables);
    profile.check_feasible(game)?;
    let values = agent_values(game, &profile)?;
    let set = argmax_of(&values);
    let bids = profile.bids_at(k);
    let utilities = game.evaluate(action, &bids)?;
    let mut verdict = OracleVerdict {
        equilibrium: set.contains(k),
        action: action.to_vec(),
        utilities: utilities.clone(),
        tie_dependent: set.indices.len() > 1,
        deviation: None,
    };
    if !verdict.equilibrium {
        return Ok(verdict);
    }
    for i in 0..game.n {
        let (v, table) = best_deviation(tiny, space, i, tables)?;
        if v > utilities.principals[i] + ORACLE_TOL {
            verdict.equilibrium = false;
            verdict.deviation = Some(Deviation {
                principal: i + 1,
                table,
                value: v,
                equilibrium_value: utilities.principals[i],
            });
            break;
        }
    }
    Ok(verdict)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleEquilibrium {
    pub tables: Vec<Vec<f64>>,
    pub action: Vec<f64>,
    pub utilities: UtilityVector,
    pub tie_dependent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub profiles_checked: usize,
    pub equilibria: Vec<OracleEquilibrium>,
}

impl OracleReport {
    /// Distinct equilibrium allocations (action, bids) in enumeration order.
    pub fn allocations(&self, game: &GameSpec) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for e in &self.equilibria {
            let k = game.grid().index_of(&e.action, ACTION_TOL).unwrap_or(0);
            let bids: Vec<f64> = e.tables.iter().map(|t| t[k]).collect();
            if !out.iter().any(|(a, b)| a == &e.action && b == &bids) {
                out.push((e.action.clone(), bids));
            }
        }
        out
    }
}

/// Enumerates every equilibrium over step profiles of a tiny game.
pub fn enumerate_equilibria_small(tiny: &TinyGame, space: &ProfileSpace) -> Result<OracleReport> {
    let game = &tiny.game;
    let n = game.n;
    let per: Vec<Vec<Vec<f64>>> = (0..n).map(|i| own_profiles(tiny, space, i)).collect::<Result<_>>()?;
    let joint: f64 = per.iter().map(|p| p.len() as f64).product();
    let needed = joint * n as f64;
    if needed > ORACLE_GUARD {
        return Err(Error::SizeGuard {
            what: "equilibrium enumeration".into(),
            needed,
            limit: ORACLE_GUARD,
        });
    }
    let joint = joint as usize;
    let decode = |mut idx: usize| -> Vec<usize> {
        let mut out = vec![0; n];
        for i in (0..n).rev() {
            out[i] = idx % per[i].len();
            idx /= per[i].len();
        }
        out
    };
    // Best deviation value per (principal, opponents' profile indices).
    let mut cache: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut equilibria = Vec::new();
    for idx in 0..joint {
        let choice = decode(idx);
        let tables: Vec<Vec<f64>> = choice.iter().enumerate().map(|(i, &c)| per[i][c].clone()).collect();
        let profile = tiny.to_profile(&tables);
        let values = agent_values(game, &profile)?;
        let set = argmax_of(&values);
        let mut best_dev = Vec::with_capacity(n);
        for i in 0..n {
            let mut others = choice.clone();
            others[i] = usize::MAX;
            let v = match cache.get(&(i, others.clone())) {
                Some(v) => *v,
                None => {
                    let mut v = f64::NEG_INFINITY;
                    for own in &per[i] {
                        v = v.max(deviation_value(tiny, i, &tables, own)?.0);
                    }
                    cache.insert((i, others), v);
                    v
                }
            };
            best_dev.push(v);
        }
        for &k in &set.indices {
            let a = game.grid().point(k);
            let u = game.evaluate(a, &profile.bids_at(k))?;
            if u
                .principals
                .iter()
                .zip(&best_dev)
                .all(|(ui, d)| *ui >= d - ORACLE_TOL)
            {
                equilibria.push(OracleEquilibrium {
                    tables: tables.clone(),
                    action: a.to_vec(),
                    utilities: u,
                    tie_dependent: set.indices.len() > 1,
                });
            }
        }
    }
    Ok(OracleReport {
        profiles_checked: joint,
        equilibria,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponseCheck {
    pub principal: usize,
    /// Best value over enumerated step profiles.
    pub best_value: f64,
    /// Truthful response relative to `best_value`.
    pub response: Vec<f64>,
    /// Value the truthful response achieves under its own agent optimum.
    pub achieved: f64,
    pub pass: bool,
}

/// Checks that the truthful response relative to the best achievable value is
/// itself a best response to `opponents` (per-action tables on the tiny grid).
pub fn truthful_in_best_response(
    tiny: &TinyGame,
    i: usize,
    opponents: &[Vec<f64>],
    best_value: Option<f64>,
) -> Result<BestResponseCheck> {
    let game = &tiny.game;
    let best = match best_value {
        Some(v) => v,
        None => best_deviation(tiny, &ProfileSpace::Full, i, opponents)?.0,
    };
    let response = game
        .grid()
        .points()
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let bids: Vec<f64> = (0..game.n).map(|j| opponents[j][k]).collect();
            truthful_response(game, i, a, &bids, best).map(|r| r.bid)
        })
        .collect::<Result<Vec<_>>>()?;
    let (achieved, _) = deviation_value(tiny, i, opponents, &response)?;
    Ok(BestResponseCheck {
        principal: i + 1,
        best_value: best,
        response,
        achieved,
        pass: achieved >= best - ORACLE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{get_default, get_game};

    fn cf_candidate(name: &str, label: &str) -> (GameSpec, Candidate) {
        let b = get_default(name).unwrap();
        let cf = b.closed_form(label).unwrap().clone();
        let profile = cf.profile_on(&b.game).unwrap().unwrap();
        let cand = Candidate::new(&b.game, cf.action.clone(), profile, cf.u_star.clone().unwrap()).unwrap();
        (b.game, cand)
    }

    #[test]
    fn prop3b_ex1_passes() {
        let (g, c) = cf_candidate("prop3b_ex1", "equilibrium");
        let r = verify_truthful_equilibrium(&g, &c).unwrap();
        assert!(r.pass, "{:?}", r.failing());
    }

    #[test]
    fn prop3b_ex2_fails_only_bii() {
        let (g, mut c) = cf_candidate("prop3b_ex2", "bii_failure");
        c.action = vec![0.3];
        let r = verify_truthful_equilibrium(&g, &c).unwrap();
        assert_eq!(r.failing(), vec!["Bii"]);
        let bii = r.condition("Bii").unwrap();
        let w = bii.witness.as_ref().unwrap();
        assert_eq!(w.action, vec![1.0]);
        assert!((w.utilities.principals[0] - 0.5).abs() < 1e-12);
        assert!((bii.residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lobbying_any_transfer_passes() {
        let (g, c) = cf_candidate("lobbying", "equilibrium");
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let cand = Candidate::new(&g, vec![t], c.profile.clone(), c.u_star.clone()).unwrap();
            let r = verify_truthful_equilibrium(&g, &cand).unwrap();
            assert!(r.pass, "t={t}: {:?}", r.failing());
        }
    }

    #[test]
    fn ex2_allocation_b_rejected() {
        let (g, c) = cf_candidate("ex2", "B");
        let r = verify_truthful_equilibrium(&g, &c).unwrap();
        assert!(!r.pass);
        assert!(r.failing().iter().all(|f| f.starts_with("Aii")));
    }

    #[test]
    fn off_grid_candidate_is_structural() {
        let (g, mut c) = cf_candidate("prop3b_ex1", "equilibrium");
        c.action = vec![0.123456];
        assert!(matches!(verify_truthful_equilibrium(&g, &c), Err(Error::Structure(_))));
    }

    #[test]
    fn solve_prop3b_ex1() {
        let g = get_default("prop3b_ex1").unwrap().game;
        let s = solve_truthful(&g, &SolveConfig::default()).unwrap();
        assert_eq!(s.candidates.len(), 1);
        let c = &s.candidates[0].candidate;
        assert_eq!(c.action, vec![1.0]);
        assert!(c.u_star.iter().all(|u| (u - 1.0).abs() < 1e-9));
        assert!(c.bids(&g).unwrap().iter().all(|b| b.abs() < 1e-9));
    }

    #[test]
    fn solve_ex1_small_externalities() {
        let mut p = BTreeMap::new();
        p.insert("gamma".to_string(), 0.5);
        let g = get_game("ex1", &p).unwrap().game.with_resolution(51).unwrap();
        let s = solve_truthful(&g, &SolveConfig::default()).unwrap();
        assert!(!s.candidates.is_empty());
        for c in &s.candidates {
            assert_eq!(c.candidate.action, vec![1.0]);
            assert!(c.candidate.u_star.iter().all(|u| (u - 1.0).abs() < 1e-6));
        }
    }

    fn tiny_ex1(actions: &[f64], bids: &[f64]) -> TinyGame {
        let g = get_default("ex1").unwrap().game;
        let acts: Vec<Vec<f64>> = actions.iter().map(|&a| vec![a]).collect();
        TinyGame::new(&g, &acts, bids).unwrap()
    }

    #[test]
    fn oracle_example_one() {
        let tiny = tiny_ex1(&[0.0, 1.0], &[0.0, 0.2, 0.5, 1.0]);
        let rep = enumerate_equilibria_small(&tiny, &ProfileSpace::Full).unwrap();
        let allocs = rep.allocations(&tiny.game);
        assert!(allocs.contains(&(vec![1.0], vec![0.0, 0.0])));
        assert!(!allocs.contains(&(vec![1.0], vec![1.0, 1.0])));
        for e in &rep.equilibria {
            // Necessary conditions hold at every equilibrium found.
            let profile = tiny.to_profile(&e.tables);
            let values = agent_values(&tiny.game, &profile).unwrap();
            let k = tiny.game.grid().index_of(&e.action, 1e-12).unwrap();
            assert!(argmax_of(&values).contains(k));
            for o in outside_options(&tiny.game, &profile).unwrap() {
                assert!((values[k] - o).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn oracle_asymmetric_profile() {
        let tiny = tiny_ex1(&[0.0, 0.2, 1.0], &[0.0, 0.2, 0.5, 1.0]);
        let tables = vec![vec![0.0, 0.0, 0.2], vec![0.0, 0.2, 0.0]];
        let v = oracle_check(&tiny, &ProfileSpace::Full, &tables, &[1.0]).unwrap();
        assert!(v.equilibrium, "{v:?}");
        assert!((v.utilities.agent - 0.2).abs() < 1e-12);
        assert!((v.utilities.principals[0] - 0.8).abs() < 1e-12);
        assert!((v.utilities.principals[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn truthful_best_response_small() {
        let tiny = tiny_ex1(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]);
        let zero = vec![vec![0.0; 3]; 2];
        let c = truthful_in_best_response(&tiny, 0, &zero, None).unwrap();
        assert_eq!(c.best_value, 1.0);
        assert_eq!(c.response, vec![0.0, 0.0, 0.0]);
        assert!(c.pass);
    }

    #[test]
    fn oracle_guard() {
        let tiny = tiny_ex1(
            &(0..30).map(|k| k as f64 / 29.0).collect::<Vec<_>>(),
            &(0..30).map(|k| k as f64 / 29.0).collect::<Vec<_>>(),
        );
        assert!(matches!(
            enumerate_equilibria_small(&tiny, &ProfileSpace::Full),
            Err(Error::SizeGuard { .. })
        ));
    }
}
