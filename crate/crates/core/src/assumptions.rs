//! Sampled audits of the structural assumptions, and validity routing.
//!
//! Every universally quantified property is checked at a finite number of
//! seeded random points, so a pass means "no violation at sample size N".
//! Samples are drawn in fixed batches, each with its own RNG stream, and
//! folded in order: reports do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{action_index, Candidate, CONDITION_TOL};
use crate::error::{Error, Result};
use crate::game::{linspace, uniform, Direction, Flag, GameSpec, FEASIBILITY_TOL};

pub const DEFAULT_SAMPLES: usize = 10_000;
/// Points per principal on the bid grids of the conflict and deep-pockets scans.
pub const DEFAULT_BID_RESOLUTION: usize = 21;
/// Actions drawn for the all-pairs conflict scan.
pub const DEFAULT_CONFLICT_ACTIONS: usize = 16;
/// Finite-difference slopes must clear this to count as strictly signed.
pub const SIGN_MARGIN: f64 = 1e-12;
/// Margin for externality signs and the small-externalities inequality.
pub const EXTERNALITY_MARGIN: f64 = 1e-9;
/// Relative tolerance of functional identities and utility comparisons.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Finite-difference step relative to the global bid range.
pub const FD_STEP: f64 = 1e-6;
/// Curvature threshold of the differentiability probe.
pub const KINK_TOL: f64 = 1e-6;
/// Largest number of bid-pair comparisons a grid scan may attempt.
pub const PAIR_GUARD: f64 = 1e8;

const BATCH: usize = 256;
const DRAW_ATTEMPTS: usize = 64;

const STREAM_SLOPES: u64 = 1;
const STREAM_SEPARABLE: u64 = 2;
const STREAM_CUMULATIVE: u64 = 3;
const STREAM_SYMMETRIC: u64 = 4;
const STREAM_SMOOTH: u64 = 5;
const STREAM_CONCAVE: u64 = 6;
const STREAM_POCKETS: u64 = 7;
const STREAM_CONFLICT_ACTIONS: u64 = 8;
const STREAM_CONFLICT_PAIRS: u64 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Undetermined,
    NotApplicable,
}

/// Point at which a sampled check failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleWitness {
    pub action: Vec<f64>,
    pub bids: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternative: Option<Vec<f64>>,
    /// One-based principal index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub principal: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub status: Status,
    /// Smallest slack seen over the checked points; negative or zero on failure.
    pub margin: f64,
    /// Points (or pairs) actually checked.
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<SampleWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    fn without(status: Status, note: impl Into<String>) -> Self {
        Verdict {
            status,
            margin: f64::NAN,
            samples: 0,
            witness: None,
            note: Some(note.into()),
        }
    }

    fn fail_because(note: impl Into<String>, witness: Option<SampleWitness>) -> Self {
        Verdict {
            status: Status::Fail,
            margin: f64::NAN,
            samples: 0,
            witness,
            note: Some(note.into()),
        }
    }
}

struct Tally {
    margin: f64,
    checked: usize,
    witness: Option<SampleWitness>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            margin: f64::INFINITY,
            checked: 0,
            witness: None,
        }
    }

    fn ok(&mut self, margin: f64) {
        self.checked += 1;
        self.margin = self.margin.min(margin);
    }

    fn fail(&mut self, margin: f64, witness: SampleWitness) {
        self.ok(margin);
        if self.witness.is_none() {
            self.witness = Some(witness);
        }
    }

    fn verdict(self) -> Verdict {
        let status = if self.witness.is_some() {
            Status::Fail
        } else if self.checked == 0 {
            Status::Undetermined
        } else {
            Status::Pass
        };
        Verdict {
            status,
            margin: self.margin,
            samples: self.checked,
            witness: self.witness,
            note: None,
        }
    }
}

/// Sampling knobs shared by all audits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    pub samples: usize,
    pub seed: u64,
    pub bid_resolution: usize,
    pub conflict_actions: usize,
    /// Check conflict of interests only against this allocation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
    /// Restrict conflict references to equal bids.
    pub symmetric_reference: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            bid_resolution: DEFAULT_BID_RESOLUTION,
            conflict_actions: DEFAULT_CONFLICT_ACTIONS,
            reference: None,
            symmetric_reference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub action: Vec<f64>,
    pub bids: Vec<f64>,
}

/// Runs `f` once per sample with deterministic per-batch RNG streams.
fn sampled<T, F>(seed: u64, stream: u64, samples: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    let batches = samples.div_ceil(BATCH);
    let parts = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((stream << 32) | b as u64);
            let m = BATCH.min(samples - b * BATCH);
            (0..m).map(|_| f(&mut rng)).collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn fd_step(game: &GameSpec) -> f64 {
    FD_STEP * (game.global_max - game.global_min)
}

fn rel_tol(x: f64) -> f64 {
    IDENTITY_TOL * x.abs().max(1.0)
}

fn fmt(x: f64) -> String {
    format!("{x:.6e}")
}

#[derive(Debug, Clone)]
struct Point {
    action: Vec<f64>,
    bids: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Point {
    fn witness(&self, principal: Option<usize>, detail: String) -> SampleWitness {
        SampleWitness {
            action: self.action.clone(),
            bids: self.bids.clone(),
            alternative: None,
            principal: principal.map(|i| i + 1),
            detail,
        }
    }
}

fn bounds_at(game: &GameSpec, action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let lo = (0..game.n).map(|i| game.lower(i, action)).collect::<Result<Vec<f64>>>()?;
    let hi = (0..game.n).map(|i| game.upper(i, action)).collect::<Result<Vec<f64>>>()?;
    Ok((lo, hi))
}

/// A random feasible pair whose bid intervals are all at least `min_width` wide.
fn draw_point<R: Rng + ?Sized>(game: &GameSpec, rng: &mut R, min_width: f64) -> Result<Option<Point>> {
    for _ in 0..DRAW_ATTEMPTS {
        let action = game.sample_action(rng);
        let (lo, hi) = bounds_at(game, &action)?;
        if lo.iter().zip(&hi).any(|(l, h)| h - l < min_width) {
            continue;
        }
        let bids = lo.iter().zip(&hi).map(|(&l, &h)| uniform(rng, l, h)).collect();
        return Ok(Some(Point { action, bids, lo, hi }));
    }
    Ok(None)
}

fn redraw<R: Rng + ?Sized>(p: &Point, rng: &mut R) -> Vec<f64> {
    p.lo.iter().zip(&p.hi).map(|(&l, &h)| uniform(rng, l, h)).collect()
}

type Eval<'a> = dyn Fn(&[f64]) -> Result<f64> + 'a;

/// Slope of `f` in bid `j`, central inside the bounds and one-sided at them.
fn partial(f: &Eval, p: &Point, j: usize, h: f64) -> Result<f64> {
    let mut b = p.bids.clone();
    let x = b[j];
    let (x0, x1) = if x - h >= p.lo[j] && x + h <= p.hi[j] {
        (x - h, x + h)
    } else if x + h <= p.hi[j] {
        (x, x + h)
    } else {
        (x - h, x)
    };
    b[j] = x1;
    let f1 = f(&b)?;
    b[j] = x0;
    let f0 = f(&b)?;
    Ok((f1 - f0) / (x1 - x0))
}

/// Utility of principal `i`, or of the agent when `i` is `None`.
fn utility_fn<'a>(game: &'a GameSpec, action: &'a [f64], i: Option<usize>) -> Box<Eval<'a>> {
    match i {
        Some(i) => Box::new(move |b: &[f64]| game.principal_utility(i, action, b)),
        None => Box::new(move |b: &[f64]| game.agent_utility(action, b)),
    }
}

fn principal_label(i: usize) -> String {
    format!("principal {}", i + 1)
}

// ---------------------------------------------------------------------------
// Slopes: monotonicity, externality signs and small externalities.

struct Slopes {
    point: Point,
    /// `principal[i][j]` is the slope of principal `i`'s utility in bid `j`.
    principal: Vec<Vec<f64>>,
    agent: Vec<f64>,
}

fn slopes(game: &GameSpec, cfg: &AuditConfig) -> Result<Vec<Option<Slopes>>> {
    let h = fd_step(game);
    sampled(cfg.seed, STREAM_SLOPES, cfg.samples, |rng| {
        let Some(point) = draw_point(game, rng, 2.0 * h)? else {
            return Ok(None);
        };
        let mut principal = vec![vec![0.0; game.n]; game.n];
        for (i, row) in principal.iter_mut().enumerate() {
            let f = utility_fn(game, &point.action, Some(i));
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = partial(&*f, &point, j, h)?;
            }
        }
        let agent = {
            let f = utility_fn(game, &point.action, None);
            (0..game.n).map(|j| partial(&*f, &point, j, h)).collect::<Result<Vec<f64>>>()?
        };
        Ok(Some(Slopes {
            point,
            principal,
            agent,
        }))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// Principals decreasing in own bids, agent increasing in all bids.
    pub lobbying: Verdict,
    /// Principals increasing in own bids, agent decreasing in all bids.
    pub market: Verdict,
}

pub fn check_monotonicity(game: &GameSpec, cfg: &AuditConfig) -> Result<MonotonicityReport> {
    let s = slopes(game, cfg)?;
    monotonicity_from(game, &s)
}

fn monotonicity_from(game: &GameSpec, slopes: &[Option<Slopes>]) -> Result<MonotonicityReport> {
    Ok(MonotonicityReport {
        lobbying: opposing(game, slopes, Direction::Decreasing)?,
        market: opposing(game, slopes, Direction::Increasing)?,
    })
}

fn opposing(game: &GameSpec, slopes: &[Option<Slopes>], own: Direction) -> Result<Verdict> {
    let sign = match own {
        Direction::Decreasing => -1.0,
        Direction::Increasing => 1.0,
    };
    let mut t = Tally::new();
    for s in slopes.iter().flatten() {
        let mut margin = f64::INFINITY;
        let mut bad = None;
        for i in 0..game.n {
            let v = sign * s.principal[i][i];
            if v <= SIGN_MARGIN && bad.is_none() {
                bad = Some((
                    Some(i),
                    format!("slope of {} utility in own bid is {}", principal_label(i), fmt(s.principal[i][i])),
                ));
            }
            margin = margin.min(v);
        }
        for (j, &g) in s.agent.iter().enumerate() {
            let v = -sign * g;
            if v <= SIGN_MARGIN && bad.is_none() {
                bad = Some((None, format!("slope of agent utility in bid {} is {}", j + 1, fmt(g))));
            }
            margin = margin.min(v);
        }
        match bad {
            Some((i, detail)) => t.fail(margin, s.point.witness(i, detail)),
            None => t.ok(margin),
        }
    }
    let mut verdict = t.verdict();
    // The lobbying variant also needs lower bounds at the global minimum, the
    // market variant upper bounds at the global maximum.
    let (pinned, which) = match own {
        Direction::Decreasing => (game.global_min, "lower"),
        Direction::Increasing => (game.global_max, "upper"),
    };
    'grid: for a in game.grid().points() {
        for i in 0..game.n {
            let bound = match own {
                Direction::Decreasing => game.lower(i, a)?,
                Direction::Increasing => game.upper(i, a)?,
            };
            if (bound - pinned).abs() > FEASIBILITY_TOL {
                let detail = format!(
                    "{which} bound of {} is {}, not the global {}",
                    principal_label(i),
                    fmt(bound),
                    fmt(pinned)
                );
                if verdict.witness.is_none() {
                    verdict.witness = Some(SampleWitness {
                        action: a.clone(),
                        bids: Vec::new(),
                        alternative: None,
                        principal: Some(i + 1),
                        detail: detail.clone(),
                    });
                }
                verdict.status = Status::Fail;
                verdict.note = Some(detail);
                break 'grid;
            }
        }
    }
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExternalitySigns {
    pub negative: Verdict,
    pub positive: Verdict,
}

/// Signs of the cross slopes. Negative allows zero slopes within the margin;
/// positive needs at least one slope above it.
fn externality_signs(game: &GameSpec, slopes: &[Option<Slopes>], cumulative: &Verdict, smooth: &Verdict) -> ExternalitySigns {
    if !cumulative.passed() || !smooth.passed() {
        let why = if !cumulative.passed() {
            "game is not cumulative"
        } else {
            "game is not differentiable"
        };
        return ExternalitySigns {
            negative: Verdict::fail_because(why, None),
            positive: Verdict::fail_because(why, None),
        };
    }
    let mut neg = Tally::new();
    let mut pos = Tally::new();
    let mut strictly_positive = false;
    for s in slopes.iter().flatten() {
        let mut neg_bad = None;
        let mut pos_bad = None;
        let mut neg_margin = f64::INFINITY;
        let mut pos_margin = f64::INFINITY;
        for i in 0..game.n {
            for j in (0..game.n).filter(|&j| j != i) {
                let c = s.principal[i][j];
                neg_margin = neg_margin.min(EXTERNALITY_MARGIN - c);
                pos_margin = pos_margin.min(c + EXTERNALITY_MARGIN);
                strictly_positive |= c > EXTERNALITY_MARGIN;
                let detail = || format!("slope of {} utility in bid {} is {}", principal_label(i), j + 1, fmt(c));
                if c > EXTERNALITY_MARGIN && neg_bad.is_none() {
                    neg_bad = Some(s.point.witness(Some(i), detail()));
                }
                if c < -EXTERNALITY_MARGIN && pos_bad.is_none() {
                    pos_bad = Some(s.point.witness(Some(i), detail()));
                }
            }
        }
        match neg_bad {
            Some(w) => neg.fail(neg_margin, w),
            None => neg.ok(neg_margin),
        }
        match pos_bad {
            Some(w) => pos.fail(pos_margin, w),
            None => pos.ok(pos_margin),
        }
    }
    let negative = neg.verdict();
    let mut positive = pos.verdict();
    if positive.passed() && !strictly_positive {
        positive.status = Status::Fail;
        positive.note = Some("no cross slope is positive".into());
    }
    ExternalitySigns { negative, positive }
}

fn small_externalities_from(
    game: &GameSpec,
    slopes: &[Option<Slopes>],
    cumulative: &Verdict,
    smooth: &Verdict,
    signs: &ExternalitySigns,
) -> Verdict {
    if !cumulative.passed() || !smooth.passed() {
        return Verdict::without(Status::NotApplicable, "needs a cumulative, differentiable game");
    }
    let weight = if signs.negative.passed() {
        1.0
    } else if signs.positive.passed() {
        (game.n - 1) as f64
    } else {
        return Verdict::fail_because(
            "externalities are neither negative nor positive",
            signs.negative.witness.clone(),
        );
    };
    let mut t = Tally::new();
    for s in slopes.iter().flatten() {
        let mut margin = f64::INFINITY;
        let mut bad = None;
        for i in 0..game.n {
            let own = s.principal[i][i].abs();
            for j in (0..game.n).filter(|&j| j != i) {
                let cross = s.principal[i][j];
                let slack = own - weight * cross.abs() - EXTERNALITY_MARGIN;
                if slack <= 0.0 && bad.is_none() {
                    bad = Some(s.point.witness(
                        Some(i),
                        format!(
                            "own slope {} does not dominate cross slope {} in bid {}",
                            fmt(s.principal[i][i]),
                            fmt(cross),
                            j + 1
                        ),
                    ));
                }
                margin = margin.min(slack);
            }
        }
        match bad {
            Some(w) => t.fail(margin, w),
            None => t.ok(margin),
        }
    }
    t.verdict()
}

/// Small externalities; not applicable unless the game is cumulative and differentiable.
pub fn check_small_externalities(game: &GameSpec, cfg: &AuditConfig) -> Result<Verdict> {
    let s = slopes(game, cfg)?;
    let cumulative = check_cumulative(game, cfg)?;
    let smooth = check_differentiable(game, cfg)?;
    let signs = externality_signs(game, &s, &cumulative, &smooth);
    Ok(small_externalities_from(game, &s, &cumulative, &smooth, &signs))
}

// ---------------------------------------------------------------------------
// Functional identities.

/// Each principal's utility ignores the other principals' bids.
pub fn check_no_externalities(game: &GameSpec, cfg: &AuditConfig) -> Result<Verdict> {
    let rows = sampled(cfg.seed, STREAM_SEPARABLE, cfg.samples, |rng| {
        let Some(p) = draw_point(game, rng, 0.0)? else {
            return Ok(None);
        };
        let mut out = Vec::with_capacity(game.n);
        for i in 0..game.n {
            let mut alt = redraw(&p, rng);
            alt[i] = p.bids[i];
            let u = game.principal_utility(i, &p.action, &p.bids)?;
            let v = game.principal_utility(i, &p.action, &alt)?;
            out.push((i, alt, u, v));
        }
        Ok(Some((p, out)))
    })?;
    let mut t = Tally::new();
    for (p, checks) in rows.into_iter().flatten() {
        let mut margin = f64::INFINITY;
        let mut bad = None;
        for (i, alt, u, v) in checks {
            let slack = rel_tol(u) - (u - v).abs();
            if slack < 0.0 && bad.is_none() {
                let mut w = p.witness(
                    Some(i),
                    format!("utility moves from {} to {} when only other bids change", fmt(u), fmt(v)),
                );
                w.alternative = Some(alt);
                bad = Some(w);
            }
            margin = margin.min(slack);
        }
        match bad {
            Some(w) => t.fail(margin, w),
            None => t.ok(margin),
        }
    }
    Ok(t.verdict())
}

/// Moves `d` from bid `k` to bid `j`, with `d` drawn so both stay within bounds.
fn shift<R: Rng + ?Sized>(p: &Point, rng: &mut R, j: usize, k: usize) -> Vec<f64> {
    let (bj, bk) = (p.bids[j], p.bids[k]);
    let lo = (p.lo[j] - bj).max(bk - p.hi[k]);
    let hi = (p.hi[j] - bj).min(bk - p.lo[k]);
    let d = uniform(rng, lo.min(0.0), hi.max(0.0));
    let mut b = p.bids.clone();
    b[j] = bj + d;
    b[k] = bk - d;
    b
}

fn distinct_pair<R: Rng + ?Sized>(rng: &mut R, n: usize, skip: Option<usize>) -> Option<(usize, usize)> {
    let pool: Vec<usize> = (0..n).filter(|&x| Some(x) != skip).collect();
    if pool.len() < 2 {
        return None;
    }
    let j = rng.random_range(0..pool.len());
    let mut k = rng.random_range(0..pool.len() - 1);
    if k >= j {
        k += 1;
    }
    Some((pool[j], pool[k]))
}

/// Utilities depend on bids only through own bid and the others' total.
pub fn check_cumulative(game: &GameSpec, cfg: &AuditConfig) -> Result<Verdict> {
    let rows = sampled(cfg.seed, STREAM_CUMULATIVE, cfg.samples, |rng| {
        let Some(p) = draw_point(game, rng, 0.0)? else {
            return Ok(None);
        };
        let mut out = Vec::new();
        if let Some((j, k)) = distinct_pair(rng, game.n, None) {
            let alt = shift(&p, rng, j, k);
            out.push((None, game.agent_utility(&p.action, &p.bids)?, game.agent_utility(&p.action, &alt)?, alt));
        }
        for i in 0..game.n {
            if let Some((j, k)) = distinct_pair(rng, game.n, Some(i)) {
                let alt = shift(&p, rng, j, k);
                out.push((
                    Some(i),
                    game.principal_utility(i, &p.action, &p.bids)?,
                    game.principal_utility(i, &p.action, &alt)?,
                    alt,
                ));
            }
        }
        Ok(Some((p, out)))
    })?;
    let mut t = Tally::new();
    for (p, checks) in rows.into_iter().flatten() {
        let mut margin = f64::INFINITY;
        let mut bad = None;
        for (i, u, v, alt) in checks {
            let slack = rel_tol(u) - (u - v).abs();
            if slack < 0.0 && bad.is_none() {
                let whose = i.map_or_else(|| "agent".to_string(), principal_label);
                let mut w = p.witness(
                    i,
                    format!("{whose} utility moves from {} to {} at equal totals", fmt(u), fmt(v)),
                );
                w.alternative = Some(alt);
                bad = Some(w);
            }
            margin = margin.min(slack);
        }
        match bad {
            Some(w) => t.fail(margin, w),
            None => t.ok(margin),
        }
    }
    Ok(t.verdict())
}

/// Identical utilities up to relabelling, and identical bound functions up to
/// a permutation of the grid.
pub fn check_symmetric(game: &GameSpec, cfg: &AuditConfig) -> Result<Verdict> {
    let rows = sampled(cfg.seed, STREAM_SYMMETRIC, cfg.samples, |rng| {
        for _ in 0..DRAW_ATTEMPTS {
            let action = game.sample_action(rng);
            let (lo, hi) = bounds_at(game, &action)?;
            let l = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let h = hi.iter().copied().fold(f64::INFINITY, f64::min);
            if h < l {
                continue;
            }
            let bids: Vec<f64> = (0..game.n).map(|_| uniform(rng, l, h)).collect();
            let mut out = Vec::new();
            for i in 0..game.n {
                for j in i + 1..game.n {
                    let mut swapped = bids.clone();
                    swapped.swap(i, j);
                    let u = game.principal_utility(i, &action, &bids)?;
                    let v = game.principal_utility(j, &action, &swapped)?;
                    out.push((i, j, u, v));
                }
            }
            let p = Point {
                action,
                bids,
                lo: vec![l; game.n],
                hi: vec![h; game.n],
            };
            return Ok(Some((p, out)));
        }
        Ok(None)
    })?;
    let mut t = Tally::new();
    for (p, checks) in rows.into_iter().flatten() {
        let mut margin = f64::INFINITY;
        let mut bad = None;
        for (i, j, u, v) in checks {
            let slack = rel_tol(u) - (u - v).abs();
            if slack < 0.0 && bad.is_none() {
                bad = Some(p.witness(
                    Some(i),
                    format!(
                        "{} utility {} differs from {} utility {} at swapped bids",
                        principal_label(i),
                        fmt(u),
                        principal_label(j),
                        fmt(v)
                    ),
                ));
            }
            margin = margin.min(slack);
        }
        match bad {
            Some(w) => t.fail(margin, w),
            None => t.ok(margin),
        }
    }
    let mut verdict = t.verdict();
    if let Some(detail) = bound_asymmetry(game)? {
        verdict.status = Status::Fail;
        verdict.note = Some(detail);
    }
    Ok(verdict)
}

fn bound_asymmetry(game: &GameSpec) -> Result<Option<String>> {
    let sorted = |i: usize, upper: bool| -> Result<Vec<f64>> {
        let mut v = game
            .grid()
            .points()
            .iter()
            .map(|a| if upper { game.upper(i, a) } else { game.lower(i, a) })
            .collect::<Result<Vec<f64>>>()?;
        v.sort_by(f64::total_cmp);
        Ok(v)
    };
    for upper in [false, true] {
        let first = sorted(0, upper)?;
        for i in 1..game.n {
            let other = sorted(i, upper)?;
            if first.iter().zip(&other).any(|(x, y)| (x - y).abs() > FEASIBILITY_TOL) {
                let which = if upper { "upper" } else { "lower" };
                return Ok(Some(format!(
                    "{which} bounds of principal 1 and {} take different values over the grid",
                    principal_label(i)
                )));
            }
        }
    }
    Ok(None)
}

/// One-sided slopes agree in the limit: a kink shows as a slope jump that
/// does not shrink with the step.
pub fn check_differentiable(game: &GameSpec, cfg: &AuditConfig) -> Result<Verdict> {
    let h = fd_step(game);
    let rows = sampled(cfg.seed, STREAM_SMOOTH, cfg.samples, |rng| {
        let Some(p) = draw_point(game, rng, 2.0 * h)? else {
            return Ok(None);
        };
        let mut worst: Option<(f64, Option<usize>, usize, f64, f64)> = None;
        let mut margin = f64::INFINITY;
        let mut checked = false;
        for who in std::iter::once(None).chain((0..game.n).map(Some)) {
            let f = utility_fn(game, &p.action, who);
            for j in 0..game.n {
                let x = p.bids[j];
                if x - h < p.lo[j] || x + h > p.hi[j] {
                    continue;
                }
                checked = true;
                let jump = |step: f64| -> Result<(f64, f64)> {
                    let mut b = p.bids.clone();
                    let f0 = f(&b)?;
                    b[j] = x + step;
                    let fp = f(&b)?;
                    b[j] = x - step;
                    let fm = f(&b)?;
                    let right = (fp - f0) / step;
                    let left = (f0 - fm) / step;
                    Ok((right - left, right))
                };
                let (d1, slope) = jump(h)?;
                let (d2, _) = jump(0.25 * h)?;
                let threshold = KINK_TOL * slope.abs().max(1.0);
                let kinked = d1.abs() > threshold && d2.abs() > 0.5 * d1.abs();
                let slack = if kinked { -d2.abs() } else { threshold - d2.abs().min(d1.abs()) };
                margin = margin.min(slack);
                if kinked && worst.is_none() {
                    worst = Some((slack, who, j, d1, d2));
                }
            }
        }
        Ok(Some((p, checked, margin, worst)))
    })?;
    let mut t = Tally::new();
    for (p, checked, margin, worst) in rows.into_iter().flatten() {
        if !checked {
            continue;
        }
        match worst {
            Some((_, who, j, d1, d2)) => {
                let whose = who.map_or_else(|| "agent".to_string(), principal_label);
                t.fail(
                    margin,
                    p.witness(
                        who,
                        format!("{whose} utility has a slope jump of {} in bid {} (still {} at a quarter step)", fmt(d1), j + 1, fmt(d2)),
                    ),
                )
            }
            None => t.ok(margin),
        }
    }
    Ok(t.verdict())
}

/// Utility at a segment midpoint is at least the smaller endpoint utility.
fn check_quasi_concave(game: &GameSpec, cfg: &AuditConfig, cumulative: &Verdict) -> Result<Verdict> {
    if !cumulative.passed() {
        return Ok(Verdict::fail_because("game is not cumulative", None));
    }
    let rows = sampled(cfg.seed, STREAM_CONCAVE, cfg.samples, |rng| {
        let Some(p) = draw_point(game, rng, 0.0)? else {
            return Ok(None);
        };
        let other = redraw(&p, rng);
        let mid: Vec<f64> = p.bids.iter().zip(&other).map(|(x, y)| 0.5 * (x + y)).collect();
        let mut out = Vec::with_capacity(game.n);
        for i in 0..game.n {
            let u = game.principal_utility(i, &p.action, &p.bids)?;
            let v = game.principal_utility(i, &p.action, &other)?;
            let m = game.principal_utility(i, &p.action, &mid)?;
            out.push((u, v, m));
        }
        Ok(Some((p, other, out)))
    })?;
    let mut t = Tally::new();
    for (p, other, vals) in rows.into_iter().flatten() {
        let mut margin = f64::INFINITY;
        let mut bad = None;
        for (i, (u, v, m)) in vals.into_iter().enumerate() {
            let floor = u.min(v);
            let slack = m - floor + IDENTITY_TOL;
            if slack < 0.0 && bad.is_none() {
                let mut w = p.witness(
                    Some(i),
                    format!("midpoint utility {} is below both endpoints ({}, {})", fmt(m), fmt(u), fmt(v)),
                );
                w.alternative = Some(other.clone());
                bad = Some(w);
            }
            margin = margin.min(slack);
        }
        match bad {
            Some(w) => t.fail(margin, w),
            None => t.ok(margin),
        }
    }
    Ok(t.verdict())
}

// ---------------------------------------------------------------------------
// Conflict of interests.

/// Why moving from `base` to `alt` (agent first, then principals) breaks
/// conflict of interests, if it does.
fn conflict_between(base: &[f64], alt: &[f64]) -> Option<&'static str> {
    let up = |k: usize| alt[k] > base[k] + rel_tol(base[k]);
    let not_down = |k: usize| alt[k] >= base[k] - rel_tol(base[k]);
    let principals = 1..base.len();
    if up(0) && principals.clone().all(not_down) {
        return Some("agent better off and no principal worse off");
    }
    if not_down(0) && principals.clone().all(not_down) && principals.clone().any(up) {
        return Some("principals better off and agent not worse off");
    }
    None
}

fn bid_grid(lo: &[f64], hi: &[f64], r: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lo.iter().zip(hi).map(|(&l, &h)| linspace(l, h, r)).collect();
    let mut out = vec![Vec::with_capacity(lo.len())];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    out
}

/// Largest per-principal resolution whose all-pairs scan fits the guard.
fn capped_resolution(r: usize, n: usize, per_action: f64) -> usize {
    let mut r = r.max(2);
    while r > 2 && (r as f64).powi(2 * n as i32) * per_action > PAIR_GUARD {
        r -= 1;
    }
    r
}

fn conflict_row(game: &GameSpec, action: &[f64], bids: &[f64]) -> Result<Vec<f64>> {
    Ok(game.evaluate(action, bids)?.to_vec())
}

struct ConflictHit {
    action: Vec<f64>,
    base: Vec<f64>,
    alt: Vec<f64>,
    why: &'static str,
    gain: f64,
}

fn first_conflict(
    game: &GameSpec,
    action: &[f64],
    refs: &[Vec<f64>],
    alts: &[Vec<f64>],
) -> Result<(usize, Option<ConflictHit>)> {
    let ref_u = refs.iter().map(|b| conflict_row(game, action, b)).collect::<Result<Vec<_>>>()?;
    let alt_u = alts.par_iter().map(|b| conflict_row(game, action, b)).collect::<Result<Vec<_>>>()?;
    let hit = ref_u
        .par_iter()
        .enumerate()
        .find_map_first(|(r, base)| {
            alt_u
                .iter()
                .position(|alt| conflict_between(base, alt).is_some())
                .map(|k| (r, k))
        });
    let pairs = refs.len() * alts.len();
    Ok((
        pairs,
        hit.map(|(r, k)| ConflictHit {
            action: action.to_vec(),
            base: refs[r].clone(),
            alt: alts[k].clone(),
            why: conflict_between(&ref_u[r], &alt_u[k]).unwrap_or(""),
            gain: alt_u[k][0] - ref_u[r][0],
        }),
    ))
}

fn symmetric_refs(lo: &[f64], hi: &[f64], r: usize) -> Vec<Vec<f64>> {
    let l = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = hi.iter().copied().fold(f64::INFINITY, f64::min);
    if h < l {
        return Vec::new();
    }
    linspace(l, h, r).into_iter().map(|t| vec![t; lo.len()]).collect()
}

/// Conflict of interests at fixed actions, both directions.
///
/// With a reference allocation only pairs starting there are checked: the
/// bid grid at the reference action plus `samples` random alternatives.
/// Otherwise all grid pairs at `conflict_actions` sampled actions are
/// checked, followed by `samples` random pairs.
pub fn check_conflict(game: &GameSpec, cfg: &AuditConfig) -> Result<Verdict> {
    let r = cfg.bid_resolution.max(2);
    let mut checked = 0usize;
    let mut hit: Option<ConflictHit> = None;
    if let Some(reference) = &cfg.reference {
        let (lo, hi) = bounds_at(game, &reference.action)?;
        let alts = bid_grid(&lo, &hi, r);
        let (n, h) = first_conflict(game, &reference.action, std::slice::from_ref(&reference.bids), &alts)?;
        checked += n;
        hit = h;
        if hit.is_none() {
            let p = Point {
                action: reference.action.clone(),
                bids: reference.bids.clone(),
                lo,
                hi,
            };
            let alts = sampled(cfg.seed, STREAM_CONFLICT_PAIRS, cfg.samples, |rng| Ok(redraw(&p, rng)))?;
            let (n, h) = first_conflict(game, &reference.action, std::slice::from_ref(&reference.bids), &alts)?;
            checked += n;
            hit = h;
        }
    } else {
        let refs_per_action = if cfg.symmetric_reference { r as f64 } else { (r as f64).powi(game.n as i32) };
        let r = capped_resolution(r, game.n, cfg.conflict_actions as f64 * refs_per_action / (r as f64).powi(game.n as i32));
        let actions = sampled(cfg.seed, STREAM_CONFLICT_ACTIONS, cfg.conflict_actions, |rng| Ok(game.sample_action(rng)))?;
        for action in &actions {
            let (lo, hi) = bounds_at(game, action)?;
            if lo.iter().zip(&hi).any(|(l, h)| h < l) {
                continue;
            }
            let alts = bid_grid(&lo, &hi, r);
            let refs = if cfg.symmetric_reference { symmetric_refs(&lo, &hi, r) } else { alts.clone() };
            let (n, h) = first_conflict(game, action, &refs, &alts)?;
            checked += n;
            if h.is_some() {
                hit = h;
                break;
            }
        }
        if hit.is_none() {
            let pairs = sampled(cfg.seed, STREAM_CONFLICT_PAIRS, cfg.samples, |rng| {
                let Some(mut p) = draw_point(game, rng, 0.0)? else {
                    return Ok(None);
                };
                if cfg.symmetric_reference {
                    let l = p.lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let h = p.hi.iter().copied().fold(f64::INFINITY, f64::min);
                    if h < l {
                        return Ok(None);
                    }
                    p.bids = vec![uniform(rng, l, h); game.n];
                }
                let alt = redraw(&p, rng);
                let base = conflict_row(game, &p.action, &p.bids)?;
                let other = conflict_row(game, &p.action, &alt)?;
                Ok(Some((p, alt, conflict_between(&base, &other), other[0] - base[0])))
            })?;
            for (p, alt, why, gain) in pairs.into_iter().flatten() {
                checked += 1;
                if let Some(why) = why {
                    hit = Some(ConflictHit {
                        action: p.action,
                        base: p.bids,
                        alt,
                        why,
                        gain,
                    });
                    break;
                }
            }
        }
    }
    Ok(match hit {
        Some(h) => Verdict {
            status: Status::Fail,
            margin: 0.0,
            samples: checked,
            witness: Some(SampleWitness {
                action: h.action,
                bids: h.base,
                alternative: Some(h.alt),
                principal: None,
                detail: format!("{} (agent change {})", h.why, fmt(h.gain)),
            }),
            note: None,
        },
        None => Verdict {
            status: if checked > 0 { Status::Pass } else { Status::Undetermined },
            margin: 0.0,
            samples: checked,
            witness: None,
            note: None,
        },
    })
}

// ---------------------------------------------------------------------------
// Deep pockets.

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeepPocketsReport {
    pub weak: Verdict,
    pub strong: Verdict,
    /// Utility each principal is held to at its pinned bound, when strong holds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsistence: Option<Vec<f64>>,
}

pub fn check_deep_pockets(game: &GameSpec, cand: Option<&Candidate>, cfg: &AuditConfig) -> Result<DeepPocketsReport> {
    let (strong, subsistence) = check_strong_deep_pockets(game, cfg)?;
    let weak = match cand {
        Some(c) => check_weak_deep_pockets(game, c, cfg.bid_resolution)?,
        None => Verdict::without(Status::Undetermined, "needs a candidate equilibrium"),
    };
    Ok(DeepPocketsReport {
        weak,
        strong,
        subsistence,
    })
}

fn check_strong_deep_pockets(game: &GameSpec, cfg: &AuditConfig) -> Result<(Verdict, Option<Vec<f64>>)> {
    let all = |d: Direction| (0..game.n).all(|i| game.own_direction(i) == d);
    let upper = if all(Direction::Decreasing) {
        true
    } else if all(Direction::Increasing) {
        false
    } else {
        return Ok((Verdict::without(Status::NotApplicable, "principals disagree on own-bid direction"), None));
    };
    let pin = |i: usize, a: &[f64]| if upper { game.upper(i, a) } else { game.lower(i, a) };
    let a0 = game.grid().point(0);
    let (lo0, _) = bounds_at(game, a0)?;
    let levels = (0..game.n)
        .map(|i| {
            let mut b = lo0.clone();
            b[i] = pin(i, a0)?;
            game.principal_utility(i, a0, &b)
        })
        .collect::<Result<Vec<f64>>>()?;
    let rows = sampled(cfg.seed, STREAM_POCKETS, cfg.samples, |rng| {
        let k = rng.random_range(0..game.grid().len());
        let action = game.grid().point(k).to_vec();
        let (lo, hi) = bounds_at(game, &action)?;
        if lo.iter().zip(&hi).any(|(l, h)| h < l) {
            return Ok(None);
        }
        let bids: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| uniform(rng, l, h)).collect();
        let mut out = Vec::with_capacity(game.n);
        for i in 0..game.n {
            let mut b = bids.clone();
            b[i] = pin(i, &action)?;
            out.push((game.principal_utility(i, &action, &b)?, game.principal_utility(i, &action, &bids)?));
        }
        Ok(Some((Point { action, bids, lo, hi }, out)))
    })?;
    let mut t = Tally::new();
    for (p, vals) in rows.into_iter().flatten() {
        let mut margin = f64::INFINITY;
        let mut bad = None;
        for (i, (pinned, free)) in vals.into_iter().enumerate() {
            let level = levels[i];
            let drift = rel_tol(level) - (pinned - level).abs();
            let above = free - level + rel_tol(level);
            if drift < 0.0 && bad.is_none() {
                bad = Some(p.witness(
                    Some(i),
                    format!("utility at the pinned bound is {}, not the level {}", fmt(pinned), fmt(level)),
                ));
            } else if above < 0.0 && bad.is_none() {
                bad = Some(p.witness(Some(i), format!("utility {} is below the level {}", fmt(free), fmt(level))));
            }
            margin = margin.min(drift).min(above);
        }
        match bad {
            Some(w) => t.fail(margin, w),
            None => t.ok(margin),
        }
    }
    let v = t.verdict();
    let subsistence = v.passed().then_some(levels);
    Ok((v, subsistence))
}

/// Scans grid pairs dominating the candidate allocation and checks that the
/// candidate schedule leaves nobody better off there than at the candidate.
pub fn check_weak_deep_pockets(game: &GameSpec, cand: &Candidate, bid_resolution: usize) -> Result<Verdict> {
    let k0 = action_index(game, &cand.action)?;
    let base = game.evaluate(&cand.action, &cand.profile.bids_at(k0))?;
    let r = bid_resolution.max(2);
    let needed = game.grid().len() as f64 * (r as f64).powi(game.n as i32);
    if needed > PAIR_GUARD {
        return Err(Error::SizeGuard {
            what: "weak deep pockets scan".into(),
            needed,
            limit: PAIR_GUARD,
        });
    }
    let rows = game
        .grid()
        .points()
        .par_iter()
        .enumerate()
        .map(|(k, a)| -> Result<Option<(f64, Option<SampleWitness>)>> {
            let sched = cand.profile.bids_at(k);
            let there = game.evaluate(a, &sched)?;
            let slack = (0..game.n)
                .map(|i| base.principals[i] - there.principals[i] + CONDITION_TOL)
                .fold(f64::INFINITY, f64::min);
            if slack >= 0.0 {
                return Ok(Some((slack, None)));
            }
            // The conclusion fails here; look for a dominating pair at this action.
            let (lo, hi) = bounds_at(game, a)?;
            if lo.iter().zip(&hi).any(|(l, h)| h < l) {
                return Ok(None);
            }
            for b in bid_grid(&lo, &hi, r) {
                let u = game.evaluate(a, &b)?;
                let weak = u.agent >= base.agent - IDENTITY_TOL
                    && (0..game.n).all(|i| u.principals[i] >= base.principals[i] - IDENTITY_TOL);
                let strict = u.agent > base.agent + CONDITION_TOL
                    || (0..game.n).any(|i| u.principals[i] > base.principals[i] + CONDITION_TOL);
                if weak && strict {
                    let w = SampleWitness {
                        action: a.clone(),
                        bids: b,
                        alternative: Some(sched),
                        principal: None,
                        detail: format!(
                            "dominating pair exists and the schedule there pays {:?} against {:?}",
                            there.principals.iter().map(|x| fmt(*x)).collect::<Vec<_>>(),
                            base.principals.iter().map(|x| fmt(*x)).collect::<Vec<_>>()
                        ),
                    };
                    return Ok(Some((slack, Some(w))));
                }
            }
            Ok(None)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Tally::new();
    for (slack, w) in rows.into_iter().flatten() {
        match w {
            Some(w) => t.fail(slack, w),
            None => t.ok(slack.max(0.0)),
        }
    }
    let mut v = t.verdict();
    if v.status == Status::Undetermined {
        v.status = Status::Pass;
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Structure profile and validity routing.

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureProfile {
    pub game: String,
    pub seed: u64,
    pub samples: usize,
    pub lobbying_monotonicity: Verdict,
    pub market_monotonicity: Verdict,
    pub no_externalities: Verdict,
    pub conflict_of_interests: Verdict,
    pub weak_deep_pockets: Verdict,
    pub strong_deep_pockets: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsistence: Option<Vec<f64>>,
    pub small_externalities: Verdict,
    pub differentiable: Verdict,
    pub cumulative: Verdict,
    pub negative_externalities: Verdict,
    pub positive_externalities: Verdict,
    pub symmetric: Verdict,
    pub quasi_concave: Verdict,
    pub symmetric_negative_externalities: Verdict,
    /// Declared flags contradicted by the audit.
    pub flag_mismatches: Vec<String>,
}

impl StructureProfile {
    /// Verdicts by report key.
    pub fn verdicts(&self) -> Vec<(&'static str, &Verdict)> {
        vec![
            ("lobbying_monotonicity", &self.lobbying_monotonicity),
            ("market_monotonicity", &self.market_monotonicity),
            ("no_externalities", &self.no_externalities),
            ("conflict_of_interests", &self.conflict_of_interests),
            ("weak_deep_pockets", &self.weak_deep_pockets),
            ("strong_deep_pockets", &self.strong_deep_pockets),
            ("small_externalities", &self.small_externalities),
            ("differentiable", &self.differentiable),
            ("cumulative", &self.cumulative),
            ("negative_externalities", &self.negative_externalities),
            ("positive_externalities", &self.positive_externalities),
            ("symmetric", &self.symmetric),
            ("quasi_concave", &self.quasi_concave),
            ("symmetric_negative_externalities", &self.symmetric_negative_externalities),
        ]
    }

    pub fn verdict(&self, key: &str) -> Option<&Verdict> {
        self.verdicts().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }
}

fn conjunction(parts: &[(&str, &Verdict)]) -> Verdict {
    let failing: Vec<&str> = parts.iter().filter(|(_, v)| !v.passed()).map(|(k, _)| *k).collect();
    if failing.is_empty() {
        let samples = parts.iter().map(|(_, v)| v.samples).min().unwrap_or(0);
        let margin = parts.iter().map(|(_, v)| v.margin).fold(f64::INFINITY, f64::min);
        return Verdict {
            status: Status::Pass,
            margin,
            samples,
            witness: None,
            note: None,
        };
    }
    let witness = parts
        .iter()
        .find(|(_, v)| !v.passed())
        .and_then(|(_, v)| v.witness.clone());
    Verdict::fail_because(format!("fails {}", failing.join(", ")), witness)
}

/// Audits every structural property except weak deep pockets, which needs a
/// candidate (see [`validity_report`]).
pub fn classify_structure(game: &GameSpec, cfg: &AuditConfig) -> Result<StructureProfile> {
    let s = slopes(game, cfg)?;
    let mono = monotonicity_from(game, &s)?;
    let cumulative = check_cumulative(game, cfg)?;
    let differentiable = check_differentiable(game, cfg)?;
    let signs = externality_signs(game, &s, &cumulative, &differentiable);
    let small = small_externalities_from(game, &s, &cumulative, &differentiable, &signs);
    let symmetric = check_symmetric(game, cfg)?;
    let quasi_concave = check_quasi_concave(game, cfg, &cumulative)?;
    let f = conjunction(&[
        ("symmetric", &symmetric),
        ("quasi_concave", &quasi_concave),
        ("negative_externalities", &signs.negative),
    ]);
    let pockets = check_deep_pockets(game, None, cfg)?;
    let no_externalities = check_no_externalities(game, cfg)?;
    let conflict = check_conflict(game, cfg)?;
    let mut flag_mismatches = Vec::new();
    for (flag, v) in [
        (Flag::NoExternalities, &no_externalities),
        (Flag::Cumulative, &cumulative),
        (Flag::Symmetric, &symmetric),
    ] {
        if game.has_flag(flag) && v.status == Status::Fail {
            flag_mismatches.push(format!("{flag:?}"));
        }
    }
    Ok(StructureProfile {
        game: game.name.clone(),
        seed: cfg.seed,
        samples: cfg.samples,
        lobbying_monotonicity: mono.lobbying,
        market_monotonicity: mono.market,
        no_externalities,
        conflict_of_interests: conflict,
        weak_deep_pockets: pockets.weak,
        strong_deep_pockets: pockets.strong,
        subsistence: pockets.subsistence,
        small_externalities: small,
        differentiable,
        cumulative,
        negative_externalities: signs.negative,
        positive_externalities: signs.positive,
        symmetric,
        quasi_concave,
        symmetric_negative_externalities: f,
        flag_mismatches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub id: &'static str,
    pub description: &'static str,
    pub requires: Vec<&'static str>,
    pub pass: bool,
    /// Certifies symmetric equilibria only.
    pub symmetric_only: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Conflict of interests at the candidate allocation plus weak deep pockets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectCheck {
    pub conflict_at_candidate: Verdict,
    pub weak_deep_pockets: Verdict,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub structure: StructureProfile,
    pub routes: Vec<Route>,
    /// First route that certifies validity.
    pub route: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direct: Option<DirectCheck>,
    pub certified: bool,
}

const ROUTES: [(&str, &str, &[&str], bool); 4] = [
    ("a-i", "lobbying monotonicity and no externalities", &["lobbying_monotonicity", "no_externalities"], false),
    ("a-ii", "market monotonicity and no externalities", &["market_monotonicity", "no_externalities"], false),
    ("a-iii", "lobbying monotonicity and small externalities", &["lobbying_monotonicity", "small_externalities"], false),
    (
        "b",
        "lobbying monotonicity and symmetric negative externalities",
        &["lobbying_monotonicity", "symmetric_negative_externalities"],
        true,
    ),
];

/// Checks which sufficient condition, if any, certifies validity of the
/// game's truthful equilibria, and of `cand` directly when one is given.
pub fn validity_report(game: &GameSpec, cand: Option<&Candidate>, cfg: &AuditConfig) -> Result<ValidityReport> {
    let mut structure = classify_structure(game, cfg)?;
    let symmetric_candidate = match cand {
        Some(c) => {
            let b = c.bids(game)?;
            Some(b.iter().all(|x| (x - b[0]).abs() <= FEASIBILITY_TOL))
        }
        None => None,
    };
    let routes: Vec<Route> = ROUTES
        .iter()
        .map(|&(id, description, requires, symmetric_only)| {
            let holds = requires
                .iter()
                .all(|k| structure.verdict(k).is_some_and(Verdict::passed));
            let mut note = None;
            let mut pass = holds;
            if holds && symmetric_only && symmetric_candidate == Some(false) {
                pass = false;
                note = Some("candidate bids are not symmetric".to_string());
            }
            Route {
                id,
                description,
                requires: requires.to_vec(),
                pass,
                symmetric_only,
                note,
            }
        })
        .collect();
    let route = routes.iter().find(|r| r.pass).map(|r| r.id);
    let direct = match cand {
        Some(c) => {
            let weak = check_weak_deep_pockets(game, c, cfg.bid_resolution)?;
            let at = AuditConfig {
                reference: Some(Reference {
                    action: c.action.clone(),
                    bids: c.bids(game)?,
                }),
                ..cfg.clone()
            };
            let conflict = check_conflict(game, &at)?;
            structure.weak_deep_pockets = weak.clone();
            let pass = conflict.passed() && weak.passed();
            Some(DirectCheck {
                conflict_at_candidate: conflict,
                weak_deep_pockets: weak,
                pass,
            })
        }
        None => None,
    };
    let certified = route.is_some() || direct.as_ref().is_some_and(|d| d.pass);
    Ok(ValidityReport {
        structure,
        routes,
        route,
        direct,
        certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{get_default, get_game};
    use std::collections::BTreeMap;

    fn cfg(samples: usize) -> AuditConfig {
        AuditConfig {
            samples,
            ..AuditConfig::default()
        }
    }

    fn game(name: &str, pairs: &[(&str, f64)]) -> GameSpec {
        let p: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        get_game(name, &p).unwrap().game
    }

    fn at_reference(action: f64, bids: &[f64]) -> AuditConfig {
        AuditConfig {
            samples: 2000,
            bid_resolution: 41,
            reference: Some(Reference {
                action: vec![action],
                bids: bids.to_vec(),
            }),
            ..AuditConfig::default()
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sampled(7, 1, 1000, |rng| Ok(rng.random::<u64>())).unwrap();
        let b = sampled(7, 1, 1000, |rng| Ok(rng.random::<u64>())).unwrap();
        let c = sampled(8, 1, 1000, |rng| Ok(rng.random::<u64>())).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 1000);
    }

    #[test]
    fn monotonicity_verdicts() {
        let ex1 = check_monotonicity(&game("ex1", &[("gamma", 2.0)]), &cfg(2000)).unwrap();
        assert!(ex1.lobbying.passed());
        assert_eq!(ex1.market.status, Status::Fail);
        let market = check_monotonicity(&get_default("market").unwrap().game, &cfg(2000)).unwrap();
        assert!(market.market.passed());
        assert_eq!(market.lobbying.status, Status::Fail);
        let ex2 = check_monotonicity(&get_default("ex2").unwrap().game, &cfg(2000)).unwrap();
        assert_eq!(ex2.lobbying.status, Status::Fail);
        assert_eq!(ex2.market.status, Status::Fail);
        assert!(ex2.lobbying.witness.is_some());
    }

    #[test]
    fn small_externalities_verdicts() {
        let weak = check_small_externalities(&game("ex1", &[("gamma", 0.5)]), &cfg(2000)).unwrap();
        assert!(weak.passed());
        assert!((weak.margin - 0.5).abs() < 1e-3);
        let strong = check_small_externalities(&game("ex1", &[("gamma", 2.0)]), &cfg(2000)).unwrap();
        assert_eq!(strong.status, Status::Fail);
        let lobbying = check_small_externalities(&get_default("lobbying").unwrap().game, &cfg(2000)).unwrap();
        assert_eq!(lobbying.status, Status::Fail);
        let market = check_small_externalities(&get_default("market").unwrap().game, &cfg(500)).unwrap();
        assert_eq!(market.status, Status::NotApplicable);
    }

    #[test]
    fn conflict_at_reference_allocations() {
        let b1 = get_default("b22_ex1").unwrap().game;
        assert!(check_conflict(&b1, &at_reference(0.0, &[1.0, 1.0])).unwrap().passed());
        let b2 = get_default("b22_ex2").unwrap().game;
        let v = check_conflict(&b2, &at_reference(0.0, &[1.0, 1.0])).unwrap();
        assert_eq!(v.status, Status::Fail);
        let w = v.witness.unwrap();
        let alt = w.alternative.unwrap();
        let base = b2.evaluate(&[0.0], &[1.0, 1.0]).unwrap();
        let there = b2.evaluate(&[0.0], &alt).unwrap();
        assert!(there.agent >= base.agent);
        assert!(there.principals.iter().zip(&base.principals).all(|(x, y)| x >= y));
        let b4 = get_default("b22_ex4").unwrap().game;
        assert_eq!(check_conflict(&b4, &at_reference(0.0, &[1.0, 1.0])).unwrap().status, Status::Fail);
        let b3 = get_default("b22_ex3").unwrap().game;
        assert!(check_conflict(&b3, &at_reference(0.0, &[1.0, 1.0])).unwrap().passed());
    }

    #[test]
    fn conflict_everywhere() {
        let c = AuditConfig {
            samples: 2000,
            conflict_actions: 4,
            ..AuditConfig::default()
        };
        assert_eq!(check_conflict(&game("ex1", &[("gamma", 2.0)]), &c).unwrap().status, Status::Fail);
        assert!(check_conflict(&game("ex1", &[("gamma", 0.5)]), &c).unwrap().passed());
        assert!(check_conflict(&get_default("market").unwrap().game, &c).unwrap().passed());
    }

    #[test]
    fn strong_deep_pockets() {
        let p = check_deep_pockets(&get_default("prop3b_ex1").unwrap().game, None, &cfg(2000)).unwrap();
        assert!(p.strong.passed());
        assert_eq!(p.subsistence, Some(vec![0.0, 0.0]));
        assert_eq!(p.weak.status, Status::Undetermined);
        let m = check_deep_pockets(&get_default("market").unwrap().game, None, &cfg(2000)).unwrap();
        assert!(m.strong.passed());
        assert!(m.subsistence.unwrap().iter().all(|u| u.abs() < 1e-9));
        // In the reduced lobbying form the pinned utility still depends on the other bid.
        let l = check_deep_pockets(&get_default("lobbying").unwrap().game, None, &cfg(2000)).unwrap();
        assert_eq!(l.strong.status, Status::Fail);
    }

    #[test]
    fn weak_deep_pockets_at_closed_form() {
        let b = get_default("prop3b_ex1").unwrap();
        let cf = b.closed_form("equilibrium").unwrap();
        let profile = cf.profile_on(&b.game).unwrap().unwrap();
        let cand = Candidate::new(&b.game, cf.action.clone(), profile, cf.u_star.clone().unwrap()).unwrap();
        assert!(check_weak_deep_pockets(&b.game, &cand, 21).unwrap().passed());
    }

    #[test]
    fn structure_of_the_catalogue() {
        let c = cfg(3000);
        let lobbying = classify_structure(&get_default("lobbying").unwrap().game, &c).unwrap();
        assert!(lobbying.cumulative.passed());
        assert!(lobbying.symmetric.passed());
        assert!(lobbying.negative_externalities.passed());
        assert!(lobbying.quasi_concave.passed());
        assert!(lobbying.symmetric_negative_externalities.passed());
        assert_eq!(lobbying.no_externalities.status, Status::Fail);
        assert!(lobbying.flag_mismatches.is_empty());

        let b2 = classify_structure(&get_default("b22_ex2").unwrap().game, &c).unwrap();
        assert!(b2.quasi_concave.passed());
        assert_eq!(b2.symmetric.status, Status::Fail);
        assert_eq!(b2.symmetric_negative_externalities.status, Status::Fail);

        let b4 = classify_structure(&get_default("b22_ex4").unwrap().game, &c).unwrap();
        assert!(b4.symmetric.passed());
        assert_eq!(b4.quasi_concave.status, Status::Fail);
        assert_eq!(b4.symmetric_negative_externalities.status, Status::Fail);

        let market = classify_structure(&get_default("market").unwrap().game, &c).unwrap();
        assert_eq!(market.cumulative.status, Status::Fail);
        assert!(market.no_externalities.passed());
        assert_eq!(market.symmetric.status, Status::Fail);
    }

    #[test]
    fn routes() {
        let c = AuditConfig {
            samples: 2000,
            conflict_actions: 4,
            ..AuditConfig::default()
        };
        let route = |g: &GameSpec| validity_report(g, None, &c).unwrap().route;
        assert_eq!(route(&get_default("market").unwrap().game), Some("a-ii"));
        assert_eq!(route(&game("ex1", &[("gamma", 0.5)])), Some("a-iii"));
        assert_eq!(route(&get_default("lobbying").unwrap().game), Some("b"));
        assert_eq!(route(&get_default("prop3b_ex1").unwrap().game), Some("a-i"));
        assert_eq!(route(&game("ex1", &[("gamma", 2.0)])), None);
    }

    #[test]
    fn differentiability_probe_finds_kinks() {
        use crate::game::{ActionSpace, Directions, GameDefinition, PrincipalDefinition};
        let def = GameDefinition {
            name: None,
            n: 2,
            action_space: ActionSpace::interval(0.0, 1.0, 11),
            agent_utility: "bsum".into(),
            principals: vec![
                PrincipalDefinition {
                    utility: "a - b1 - abs(b2 - 0.5)".into(),
                    lower_bound: "0".into(),
                    upper_bound: "1".into(),
                },
                PrincipalDefinition {
                    utility: "a - b2".into(),
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
        };
        let g = def.build().unwrap();
        // Random points almost never land within a step of the kink.
        assert!(check_differentiable(&g, &cfg(500)).unwrap().passed());
        let smooth = check_differentiable(&get_default("b22_ex4").unwrap().game, &cfg(5000)).unwrap();
        assert!(smooth.passed(), "{smooth:?}");
    }
}
