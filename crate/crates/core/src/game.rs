//! Game data model: action spaces and grids, bid bounds, utilities,
//! feasibility, tabulated bidding profiles and the private-game view.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Compiled, Layout, Scope};

/// Feasibility tolerance for `b_i ∈ [lower(a), upper(a)]`.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Breakpoints closer than this to a uniform grid point replace it.
pub const GRID_DEDUP_TOL: f64 = 1e-12;
pub const DEFAULT_RESOLUTION: usize = 201;

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * (k as f64) / ((n - 1) as f64)
                }
            })
            .collect(),
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Increasing => "increasing",
            Direction::Decreasing => "decreasing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    NoExternalities,
    Cumulative,
    Private,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Interval,
    Product,
    Finite,
}

/// The agent's action set, discretized for computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub kind: SpaceKind,
    /// `(low, high)` per dimension (one entry for `interval`).
    #[serde(default)]
    pub bounds: Vec<(f64, f64)>,
    /// Explicit points for `finite` spaces.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec<f64>>,
    /// Values the grid must contain, applied to every dimension whose bounds contain them.
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl ActionSpace {
    pub fn interval(low: f64, high: f64, resolution: usize) -> Self {
        ActionSpace {
            kind: SpaceKind::Interval,
            bounds: vec![(low, high)],
            points: Vec::new(),
            breakpoints: Vec::new(),
            resolution,
        }
    }

    pub fn product(bounds: Vec<(f64, f64)>, resolution: usize) -> Self {
        ActionSpace {
            kind: SpaceKind::Product,
            bounds,
            points: Vec::new(),
            breakpoints: Vec::new(),
            resolution,
        }
    }

    pub fn finite(points: Vec<Vec<f64>>) -> Self {
        ActionSpace {
            kind: SpaceKind::Finite,
            bounds: Vec::new(),
            points,
            breakpoints: Vec::new(),
            resolution: 0,
        }
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            SpaceKind::Finite => self.points.first().map_or(1, Vec::len),
            _ => self.bounds.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SpaceKind::Finite => {
                if self.points.is_empty() {
                    return Err(Error::Structure("finite action set is empty".into()));
                }
                let d = self.points[0].len();
                if d == 0 || self.points.iter().any(|p| p.len() != d) {
                    return Err(Error::Structure("finite action points have inconsistent dimension".into()));
                }
                if self.points.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::Structure("finite action points must be finite".into()));
                }
            }
            SpaceKind::Interval | SpaceKind::Product => {
                if self.kind == SpaceKind::Interval && self.bounds.len() != 1 {
                    return Err(Error::Structure("interval space needs exactly one (low, high) pair".into()));
                }
                if self.bounds.is_empty() {
                    return Err(Error::Structure("product space needs at least one dimension".into()));
                }
                for &(lo, hi) in &self.bounds {
                    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                        return Err(Error::Structure(format!("invalid bounds ({lo}, {hi})")));
                    }
                }
                if self.resolution < 2 {
                    return Err(Error::Structure(format!(
                        "resolution must be at least 2, got {}",
                        self.resolution
                    )));
                }
                for &bp in &self.breakpoints {
                    if !self.bounds.iter().any(|&(lo, hi)| bp >= lo && bp <= hi) {
                        return Err(Error::Structure(format!("breakpoint {bp} outside the action bounds")));
                    }
                }
            }
        }
        Ok(())
    }

    fn axis(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = linspace(lo, hi, self.resolution);
        let mut bps: Vec<f64> = self
            .breakpoints
            .iter()
            .copied()
            .filter(|&b| b >= lo && b <= hi)
            .collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup_by(|x, y| (*x - *y).abs() <= GRID_DEDUP_TOL);
        for &bp in &bps {
            pts.retain(|&x| (x - bp).abs() > GRID_DEDUP_TOL);
        }
        pts.extend(bps);
        pts.sort_by(f64::total_cmp);
        pts
    }

    /// Per-dimension axes (one axis of points for finite spaces is not defined).
    pub fn axes(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        match self.kind {
            SpaceKind::Finite => Err(Error::Structure("finite spaces have no axes".into())),
            _ => Ok(self.bounds.iter().map(|&(lo, hi)| self.axis(lo, hi)).collect()),
        }
    }

    /// Lazily enumerates the grid in lexicographic order.
    pub fn iter_grid(&self) -> Result<GridIter> {
        match self.kind {
            SpaceKind::Finite => {
                self.validate()?;
                let mut pts = self.points.clone();
                sort_dedup_points(&mut pts);
                Ok(GridIter::Points(pts.into_iter()))
            }
            _ => {
                let axes = self.axes()?;
                let total = axes.iter().map(Vec::len).product();
                Ok(GridIter::Product {
                    axes,
                    next: 0,
                    total,
                })
            }
        }
    }

    pub fn grid(&self) -> Result<ActionGrid> {
        let points: Vec<Vec<f64>> = self.iter_grid()?.collect();
        let axes = match self.kind {
            SpaceKind::Finite => None,
            _ => Some(self.axes()?),
        };
        Ok(ActionGrid { points, axes })
    }
}

fn sort_dedup_points(pts: &mut Vec<Vec<f64>>) {
    pts.sort_by(|x, y| {
        x.iter()
            .zip(y)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    pts.dedup_by(|x, y| x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() <= GRID_DEDUP_TOL));
}

/// Lazy iterator over grid points.
pub enum GridIter {
    Points(std::vec::IntoIter<Vec<f64>>),
    Product {
        axes: Vec<Vec<f64>>,
        next: usize,
        total: usize,
    },
}

impl Iterator for GridIter {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        match self {
            GridIter::Points(it) => it.next(),
            GridIter::Product { axes, next, total } => {
                if *next >= *total {
                    return None;
                }
                let mut rem = *next;
                let mut p = vec![0.0; axes.len()];
                for d in (0..axes.len()).rev() {
                    let len = axes[d].len();
                    p[d] = axes[d][rem % len];
                    rem /= len;
                }
                *next += 1;
                Some(p)
            }
        }
    }
}

/// Materialized action grid, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    points: Vec<Vec<f64>>,
    axes: Option<Vec<Vec<f64>>>,
}

impl ActionGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn axes(&self) -> Option<&[Vec<f64>]> {
        self.axes.as_deref()
    }

    /// Grid index of `action` within `tol` (max-norm), if any.
    pub fn index_of(&self, action: &[f64], tol: f64) -> Option<usize> {
        self.points.iter().position(|p| {
            p.len() == action.len() && p.iter().zip(action).all(|(x, y)| (x - y).abs() <= tol)
        })
    }

    /// Index of the closest grid point (max-norm); ties resolve to the lower index.
    pub fn nearest(&self, action: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, p) in self.points.iter().enumerate() {
            let d = p
                .iter()
                .zip(action)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }
}

type NativeFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// A utility or bound function: a compiled expression or native closure.
#[derive(Clone)]
pub enum Function {
    Expr { source: String, compiled: Arc<Compiled> },
    Native(Arc<NativeFn>),
}

impl fmt::Debug for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Function::Expr { source, .. } => write!(f, "Expr({source:?})"),
            Function::Native(_) => f.write_str("Native(..)"),
        }
    }
}

impl Function {
    pub fn native<F>(f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Function::Native(Arc::new(f))
    }

    pub fn parse(source: &str, scope: &Scope, layout: &Layout, context: &str) -> Result<Self> {
        let parsed = expr::parse_with(source, scope).map_err(|source| Error::Parse {
            context: context.to_string(),
            source,
        })?;
        let compiled = parsed.compile(layout).map_err(|source| Error::Parse {
            context: context.to_string(),
            source,
        })?;
        Ok(Function::Expr {
            source: source.to_string(),
            compiled: Arc::new(compiled),
        })
    }

    pub fn source(&self) -> Option<&str> {
        match self {
            Function::Expr { source, .. } => Some(source),
            Function::Native(_) => None,
        }
    }

    fn call(&self, name: &dyn Fn() -> String, action: &[f64], bids: &[f64]) -> Result<f64> {
        let v = match self {
            Function::Expr { compiled, .. } => compiled.eval(action, bids).map_err(|source| Error::Eval {
                function: name(),
                source,
            })?,
            Function::Native(f) => f(action, bids),
        };
        if !v.is_finite() {
            return Err(Error::NonFinite {
                function: name(),
                action: action.to_vec(),
                bids: bids.to_vec(),
            });
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct Principal {
    pub utility: Function,
    pub lower: Function,
    pub upper: Function,
    pub direction: Direction,
}

/// Agent and principal utilities at one allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector {
    pub agent: f64,
    pub principals: Vec<f64>,
}

impl UtilityVector {
    /// `(u_0, u_1, .., u_n)` as one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.principals.len() + 1);
        v.push(self.agent);
        v.extend_from_slice(&self.principals);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// `min(b_i − lower_i(a), upper_i(a) − b_i)`; negative means violated.
    pub slack: Vec<f64>,
}

/// A common-agency game.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub name: String,
    pub n: usize,
    pub action_space: ActionSpace,
    grid: ActionGrid,
    pub agent: Function,
    pub principals: Vec<Principal>,
    pub global_min: f64,
    pub global_max: f64,
    pub agent_direction: Direction,
    pub flags: BTreeSet<Flag>,
}

impl GameSpec {
    /// Builds a game; `principals.len()` fixes `n`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        action_space: ActionSpace,
        agent: Function,
        principals: Vec<Principal>,
        global_min: f64,
        global_max: f64,
        agent_direction: Direction,
        flags: BTreeSet<Flag>,
    ) -> Result<Self> {
        if principals.is_empty() {
            return Err(Error::Structure("a game needs at least one principal".into()));
        }
        if !(global_min.is_finite() && global_max.is_finite()) || global_min > global_max {
            return Err(Error::Structure(format!(
                "invalid global bid range [{global_min}, {global_max}]"
            )));
        }
        let grid = action_space.grid()?;
        let game = GameSpec {
            name: name.into(),
            n: principals.len(),
            action_space,
            grid,
            agent,
            principals,
            global_min,
            global_max,
            agent_direction,
            flags,
        };
        game.check_bounds_on_grid()?;
        Ok(game)
    }

    fn check_bounds_on_grid(&self) -> Result<()> {
        for a in self.grid.points() {
            for i in 0..self.n {
                let lo = self.lower(i, a)?;
                let hi = self.upper(i, a)?;
                let tol = FEASIBILITY_TOL;
                if lo < self.global_min - tol || hi > self.global_max + tol || lo > hi + tol {
                    return Err(Error::Structure(format!(
                        "principal {}: bounds [{lo}, {hi}] at action {a:?} violate {} <= lower <= upper <= {}",
                        i + 1,
                        self.global_min,
                        self.global_max
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn action_dim(&self) -> usize {
        self.action_space.dim()
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn own_direction(&self, i: usize) -> Direction {
        self.principals[i].direction
    }

    /// Same game over a different action discretization.
    pub fn with_action_space(&self, space: ActionSpace) -> Result<Self> {
        let grid = space.grid()?;
        let game = GameSpec {
            action_space: space,
            grid,
            ..self.clone()
        };
        game.check_bounds_on_grid()?;
        Ok(game)
    }

    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        let mut space = self.action_space.clone();
        space.resolution = resolution;
        self.with_action_space(space)
    }

    fn check_dims(&self, action: &[f64], bids: &[f64]) -> Result<()> {
        if action.len() != self.action_dim() {
            return Err(Error::Structure(format!(
                "action has dimension {}, expected {}",
                action.len(),
                self.action_dim()
            )));
        }
        if bids.len() != self.n {
            return Err(Error::Structure(format!("got {} bids, expected {}", bids.len(), self.n)));
        }
        Ok(())
    }

    pub fn agent_utility(&self, action: &[f64], bids: &[f64]) -> Result<f64> {
        self.agent.call(&|| "agent utility".to_string(), action, bids)
    }

    pub fn principal_utility(&self, i: usize, action: &[f64], bids: &[f64]) -> Result<f64> {
        self.principals[i]
            .utility
            .call(&|| format!("utility of principal {}", i + 1), action, bids)
    }

    pub fn lower(&self, i: usize, action: &[f64]) -> Result<f64> {
        self.principals[i]
            .lower
            .call(&|| format!("lower bound of principal {}", i + 1), action, &[])
    }

    pub fn upper(&self, i: usize, action: &[f64]) -> Result<f64> {
        self.principals[i]
            .upper
            .call(&|| format!("upper bound of principal {}", i + 1), action, &[])
    }

    /// All `n + 1` utilities at `(action, bids)`.
    pub fn evaluate(&self, action: &[f64], bids: &[f64]) -> Result<UtilityVector> {
        self.check_dims(action, bids)?;
        let agent = self.agent_utility(action, bids)?;
        let principals = (0..self.n)
            .map(|i| self.principal_utility(i, action, bids))
            .collect::<Result<Vec<_>>>()?;
        Ok(UtilityVector { agent, principals })
    }

    pub fn is_feasible_pair(&self, action: &[f64], bids: &[f64]) -> Result<Feasibility> {
        self.check_dims(action, bids)?;
        let mut slack = Vec::with_capacity(self.n);
        for (i, &b) in bids.iter().enumerate() {
            let lo = self.lower(i, action)?;
            let hi = self.upper(i, action)?;
            slack.push((b - lo).min(hi - b));
        }
        Ok(Feasibility {
            feasible: slack.iter().all(|&s| s >= -FEASIBILITY_TOL),
            slack,
        })
    }

    /// Draws an action uniformly from the continuous action set (or the finite set).
    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.action_space.kind {
            SpaceKind::Finite => {
                let k = rng.random_range(0..self.grid.len());
                self.grid.point(k).to_vec()
            }
            _ => self
                .action_space
                .bounds
                .iter()
                .map(|&(lo, hi)| uniform(rng, lo, hi))
                .collect(),
        }
    }

    /// Draws bids uniformly from the feasible box at `action`.
    pub fn sample_bids<R: Rng + ?Sized>(&self, rng: &mut R, action: &[f64]) -> Result<Vec<f64>> {
        (0..self.n)
            .map(|i| Ok(uniform(rng, self.lower(i, action)?, self.upper(i, action)?)))
            .collect()
    }
}

/// One feasible allocation with cached utilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub action: Vec<f64>,
    pub bids: Vec<f64>,
    pub utilities: UtilityVector,
}

impl Allocation {
    pub fn new(game: &GameSpec, action: Vec<f64>, bids: Vec<f64>) -> Result<Self> {
        let feas = game.is_feasible_pair(&action, &bids)?;
        if !feas.feasible {
            return Err(Error::Structure(format!(
                "allocation (a={action:?}, b={bids:?}) is infeasible, slack {:?}",
                feas.slack
            )));
        }
        let utilities = game.evaluate(&action, &bids)?;
        Ok(Allocation {
            action,
            bids,
            utilities,
        })
    }
}

/// One principal's bidding function tabulated on the action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub values: Vec<f64>,
    /// Piecewise-constant (nearest grid point) instead of piecewise-linear between grid points.
    #[serde(default)]
    pub step: bool,
}

/// A bidding function per principal, tabulated on the game's action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiddingProfile {
    pub schedules: Vec<Schedule>,
}

/// A knot of a bidding function: action coordinates and bid.
#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub action: Vec<f64>,
    pub bid: f64,
}

impl BiddingProfile {
    pub fn from_fn<F>(game: &GameSpec, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &[f64]) -> Result<f64>,
    {
        let schedules = (0..game.n)
            .map(|i| {
                let values = game
                    .grid()
                    .points()
                    .iter()
                    .map(|a| f(i, a))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Schedule { values, step: false })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BiddingProfile { schedules })
    }

    pub fn constant(game: &GameSpec, bid: f64) -> Self {
        BiddingProfile {
            schedules: (0..game.n)
                .map(|_| Schedule {
                    values: vec![bid; game.grid().len()],
                    step: false,
                })
                .collect(),
        }
    }

    /// Tabulates knot lists onto the grid: linear interpolation for
    /// one-dimensional actions (flat extrapolation), nearest knot for `step`
    /// schedules and multi-dimensional actions.
    pub fn from_knots(game: &GameSpec, knots: &[Vec<Knot>], step: &[bool]) -> Result<Self> {
        if knots.len() != game.n || step.len() != game.n {
            return Err(Error::Structure(format!(
                "profile has {} schedules, game has {} principals",
                knots.len(),
                game.n
            )));
        }
        let mut schedules = Vec::with_capacity(game.n);
        for (i, ks) in knots.iter().enumerate() {
            if ks.is_empty() {
                return Err(Error::Structure(format!("principal {} has no knots", i + 1)));
            }
            if ks.iter().any(|k| k.action.len() != game.action_dim()) {
                return Err(Error::Structure(format!(
                    "principal {}: knot dimension does not match the action space",
                    i + 1
                )));
            }
            let mut ks = ks.clone();
            ks.sort_by(|x, y| x.action[0].total_cmp(&y.action[0]));
            let values = game
                .grid()
                .points()
                .iter()
                .map(|a| {
                    if step[i] || game.action_dim() > 1 {
                        nearest_knot(&ks, a)
                    } else {
                        linear_knot(&ks, a[0])
                    }
                })
                .collect();
            schedules.push(Schedule { values, step: step[i] });
        }
        Ok(BiddingProfile { schedules })
    }

    pub fn n(&self) -> usize {
        self.schedules.len()
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.schedules[i].values[k]
    }

    pub fn bids_at(&self, k: usize) -> Vec<f64> {
        self.schedules.iter().map(|s| s.values[k]).collect()
    }

    /// Bids at grid point `k` with principal `i`'s bid replaced.
    pub fn bids_with(&self, k: usize, i: usize, bid: f64) -> Vec<f64> {
        let mut b = self.bids_at(k);
        b[i] = bid;
        b
    }

    /// Evaluates schedule `i` off-grid (1-D interval grids interpolate; otherwise nearest).
    pub fn interpolate(&self, game: &GameSpec, i: usize, action: &[f64]) -> f64 {
        let s = &self.schedules[i];
        let grid = game.grid();
        if s.step || game.action_dim() > 1 || game.action_space.kind == SpaceKind::Finite {
            return s.values[grid.nearest(action)];
        }
        let x = action[0];
        let pts = grid.points();
        if x <= pts[0][0] {
            return s.values[0];
        }
        for k in 1..pts.len() {
            let (x0, x1) = (pts[k - 1][0], pts[k][0]);
            if x <= x1 {
                let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
                return s.values[k - 1] + t * (s.values[k] - s.values[k - 1]);
            }
        }
        *s.values.last().expect("non-empty schedule")
    }

    /// Checks every tabulated bid against the bounds; the error names the first violation.
    pub fn check_feasible(&self, game: &GameSpec) -> Result<()> {
        if self.n() != game.n || self.schedules.iter().any(|s| s.values.len() != game.grid().len()) {
            return Err(Error::Structure("profile shape does not match the game grid".into()));
        }
        for (k, a) in game.grid().points().iter().enumerate() {
            for i in 0..game.n {
                let b = self.value(i, k);
                let lo = game.lower(i, a)?;
                let hi = game.upper(i, a)?;
                if b < lo - FEASIBILITY_TOL || b > hi + FEASIBILITY_TOL {
                    return Err(Error::Structure(format!(
                        "principal {} bid {b} at action {a:?} outside [{lo}, {hi}]",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest absolute difference between two profiles of the same shape.
    pub fn max_diff(&self, other: &BiddingProfile) -> f64 {
        self.schedules
            .iter()
            .zip(&other.schedules)
            .flat_map(|(x, y)| x.values.iter().zip(&y.values).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }
}

fn nearest_knot(ks: &[Knot], a: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in ks {
        let d = k
            .action
            .iter()
            .zip(a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if d < best.0 {
            best = (d, k.bid);
        }
    }
    best.1
}

fn linear_knot(ks: &[Knot], x: f64) -> f64 {
    if x <= ks[0].action[0] {
        return ks[0].bid;
    }
    for w in ks.windows(2) {
        let (x0, x1) = (w[0].action[0], w[1].action[0]);
        if x <= x1 {
            if x1 <= x0 {
                return w[1].bid;
            }
            let t = (x - x0) / (x1 - x0);
            return w[0].bid + t * (w[1].bid - w[0].bid);
        }
    }
    ks[ks.len() - 1].bid
}

/// Public-interface view of a private game: bids condition only on the
/// principal's own action component.
#[derive(Debug, Clone)]
pub struct PrivateView {
    pub game: GameSpec,
    axes: Vec<Vec<f64>>,
}

/// Number of sampled points used to verify component independence.
const PRIVATE_CHECK_SAMPLES: usize = 256;

pub fn adapt_private(game: &GameSpec) -> Result<PrivateView> {
    use rand::SeedableRng;
    if !game.has_flag(Flag::Private) {
        return Err(Error::Structure(format!("game `{}` is not flagged private", game.name)));
    }
    if game.action_space.kind != SpaceKind::Product || game.action_dim() != game.n {
        return Err(Error::Structure(
            "a private game needs a product action space with one factor per principal".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for _ in 0..PRIVATE_CHECK_SAMPLES {
        let a = game.sample_action(&mut rng);
        let b = game.sample_bids(&mut rng, &a)?;
        for i in 0..game.n {
            let mut a2 = game.sample_action(&mut rng);
            a2[i] = a[i];
            let mut b2 = game.sample_bids(&mut rng, &a2)?;
            b2[i] = b[i];
            let u = game.principal_utility(i, &a, &b)?;
            let u2 = game.principal_utility(i, &a2, &b2)?;
            let (lo, lo2) = (game.lower(i, &a)?, game.lower(i, &a2)?);
            let (hi, hi2) = (game.upper(i, &a)?, game.upper(i, &a2)?);
            let tol = 1e-12 * (1.0 + u.abs());
            if (u - u2).abs() > tol || (lo - lo2).abs() > 1e-12 || (hi - hi2).abs() > 1e-12 {
                return Err(Error::Structure(format!(
                    "principal {} depends on other action components or bids: a={a:?} vs a={a2:?}",
                    i + 1
                )));
            }
        }
    }
    let axes = game.action_space.axes()?;
    Ok(PrivateView {
        game: game.clone(),
        axes,
    })
}

impl PrivateView {
    /// Own-component grid `A_i` of principal `i`.
    pub fn own_axis(&self, i: usize) -> &[f64] {
        &self.axes[i]
    }

    /// Index into `A_i` of grid point `k`.
    pub fn component_index(&self, k: usize, i: usize) -> usize {
        let mut rem = k;
        let mut idx = 0;
        for d in (0..self.axes.len()).rev() {
            let len = self.axes[d].len();
            if d == i {
                idx = rem % len;
            }
            rem /= len;
        }
        idx
    }

    /// Broadcasts per-principal tables over `A_i` to a full-grid profile.
    pub fn broadcast(&self, tables: &[Vec<f64>]) -> Result<BiddingProfile> {
        if tables.len() != self.game.n
            || tables.iter().zip(&self.axes).any(|(t, ax)| t.len() != ax.len())
        {
            return Err(Error::Structure("private tables must have |A_i| entries per principal".into()));
        }
        let len = self.game.grid().len();
        let schedules = tables
            .iter()
            .enumerate()
            .map(|(i, t)| Schedule {
                values: (0..len).map(|k| t[self.component_index(k, i)]).collect(),
                step: true,
            })
            .collect();
        Ok(BiddingProfile { schedules })
    }

    /// Extracts per-component tables; fails when a schedule varies with other components.
    pub fn restrict(&self, profile: &BiddingProfile) -> Result<Vec<Vec<f64>>> {
        let mut tables: Vec<Vec<Option<f64>>> = self.axes.iter().map(|ax| vec![None; ax.len()]).collect();
        for (i, table) in tables.iter_mut().enumerate() {
            for k in 0..self.game.grid().len() {
                let c = self.component_index(k, i);
                let v = profile.value(i, k);
                match table[c] {
                    None => table[c] = Some(v),
                    Some(w) if (w - v).abs() > 1e-12 => {
                        return Err(Error::Structure(format!(
                            "principal {} schedule varies with other action components",
                            i + 1
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(tables
            .into_iter()
            .map(|t| t.into_iter().map(|v| v.unwrap_or(0.0)).collect())
            .collect())
    }
}

/// Game definition file (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDefinition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub action_space: ActionSpace,
    pub agent_utility: String,
    pub principals: Vec<PrincipalDefinition>,
    pub global_min: f64,
    pub global_max: f64,
    pub own_bid_direction: Directions,
    pub agent_bid_direction: Direction,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalDefinition {
    pub utility: String,
    pub lower_bound: String,
    pub upper_bound: String,
}

/// One direction for every principal, or one per principal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Directions {
    All(Direction),
    Each(Vec<Direction>),
}

impl GameDefinition {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build(&self) -> Result<GameSpec> {
        if self.principals.len() != self.n {
            return Err(Error::Structure(format!(
                "n = {} but {} principals defined",
                self.n,
                self.principals.len()
            )));
        }
        self.action_space.validate()?;
        let dim = self.action_space.dim();
        let scope = |n: usize, template: bool| Scope {
            params: self.params.clone(),
            n: Some(n),
            action_dim: Some(dim),
            principal_template: template,
        };
        let agent = Function::parse(
            &self.agent_utility,
            &scope(self.n, false),
            &Layout {
                action_dim: dim,
                n: self.n,
                principal: None,
            },
            "agent_utility",
        )?;
        let dirs = match &self.own_bid_direction {
            Directions::All(d) => vec![*d; self.n],
            Directions::Each(v) if v.len() == self.n => v.clone(),
            Directions::Each(v) => {
                return Err(Error::Structure(format!(
                    "own_bid_direction has {} entries for {} principals",
                    v.len(),
                    self.n
                )))
            }
        };
        let principals = self
            .principals
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let layout = Layout {
                    action_dim: dim,
                    n: self.n,
                    principal: Some(i),
                };
                let bound_layout = Layout {
                    action_dim: dim,
                    n: 0,
                    principal: None,
                };
                Ok(Principal {
                    utility: Function::parse(&p.utility, &scope(self.n, true), &layout, &format!("principals[{i}].utility"))?,
                    lower: Function::parse(
                        &p.lower_bound,
                        &scope(0, false),
                        &bound_layout,
                        &format!("principals[{i}].lower_bound"),
                    )?,
                    upper: Function::parse(
                        &p.upper_bound,
                        &scope(0, false),
                        &bound_layout,
                        &format!("principals[{i}].upper_bound"),
                    )?,
                    direction: dirs[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GameSpec::new(
            self.name.clone().unwrap_or_else(|| "custom".into()),
            self.action_space.clone(),
            agent,
            principals,
            self.global_min,
            self.global_max,
            self.agent_bid_direction,
            self.flags.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ex1(gamma: f64) -> GameSpec {
        GameDefinition {
            name: Some("ex1".into()),
            n: 2,
            action_space: ActionSpace::interval(0.0, 1.0, 11),
            agent_utility: "b1 + b2".into(),
            principals: vec![
                PrincipalDefinition {
                    utility: "a - b1 + gamma*b2".into(),
                    lower_bound: "0".into(),
                    upper_bound: "a".into(),
                },
                PrincipalDefinition {
                    utility: "a - b2 + gamma*b1".into(),
                    lower_bound: "0".into(),
                    upper_bound: "a".into(),
                },
            ],
            global_min: 0.0,
            global_max: 1.0,
            own_bid_direction: Directions::All(Direction::Decreasing),
            agent_bid_direction: Direction::Increasing,
            flags: [Flag::Cumulative, Flag::Symmetric].into_iter().collect(),
            params: [("gamma".to_string(), gamma)].into_iter().collect(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn evaluate_example_one_allocations() {
        let g = ex1(2.0);
        let u = g.evaluate(&[1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(u.to_vec(), vec![2.0, 2.0, 2.0]);
        let u = g.evaluate(&[1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(u.to_vec(), vec![0.0, 1.0, 1.0]);
        assert_eq!(g.evaluate(&[0.3], &[0.1, 0.2]).unwrap(), g.evaluate(&[0.3], &[0.1, 0.2]).unwrap());
    }

    #[test]
    fn evaluate_rejects_wrong_dimensions() {
        let g = ex1(2.0);
        assert!(matches!(g.evaluate(&[1.0], &[1.0]), Err(Error::Structure(_))));
        assert!(matches!(g.evaluate(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::Structure(_))));
    }

    #[test]
    fn non_finite_utility_names_the_function() {
        let g = GameSpec::new(
            "inf",
            ActionSpace::interval(0.0, 1.0, 3),
            Function::native(|_, b| 1.0 / (b[0] - b[0])),
            vec![Principal {
                utility: Function::native(|a, b| a[0] - b[0]),
                lower: Function::native(|_, _| 0.0),
                upper: Function::native(|_, _| 1.0),
                direction: Direction::Decreasing,
            }],
            0.0,
            1.0,
            Direction::Increasing,
            BTreeSet::new(),
        )
        .unwrap();
        match g.evaluate(&[0.5], &[0.5]) {
            Err(Error::NonFinite { function, .. }) => assert_eq!(function, "agent utility"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn feasibility_and_slack() {
        let g = ex1(2.0);
        let f = g.is_feasible_pair(&[0.5], &[0.3, 0.5]).unwrap();
        assert!(f.feasible);
        let f = g.is_feasible_pair(&[0.5], &[0.6, 0.0]).unwrap();
        assert!(!f.feasible);
        assert!((f.slack[0] + 0.1).abs() < 1e-12);
        assert_eq!(f.slack[1], 0.0);
    }

    #[test]
    fn grids() {
        let g = ActionSpace::interval(0.0, 1.0, 3).grid().unwrap();
        assert_eq!(g.points(), &[vec![0.0], vec![0.5], vec![1.0]]);
        let g = ActionSpace::interval(0.0, 1.0, 3)
            .with_breakpoints(vec![0.5])
            .grid()
            .unwrap();
        assert_eq!(g.len(), 3);
        let g = ActionSpace::interval(0.0, 1.0, 5)
            .with_breakpoints(vec![0.5])
            .grid()
            .unwrap();
        assert_eq!(g.points().iter().filter(|p| p[0] == 0.5).count(), 1);
        let g = ActionSpace::interval(0.0, 1.0, 4)
            .with_breakpoints(vec![0.5])
            .grid()
            .unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.points().iter().filter(|p| p[0] == 0.5).count(), 1);
        assert!(ActionSpace::interval(0.0, 1.0, 1).grid().is_err());
        assert!(ActionSpace::interval(0.0, 1.0, 3).with_breakpoints(vec![2.0]).grid().is_err());
        let g = ActionSpace::product(vec![(0.0, 1.0), (0.0, 2.0)], 3).grid().unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(5), &[0.5, 2.0]);
        let lazy: Vec<_> = ActionSpace::product(vec![(0.0, 1.0), (0.0, 2.0)], 3)
            .iter_grid()
            .unwrap()
            .collect();
        assert_eq!(lazy, g.points());
    }

    #[test]
    fn knot_profiles() {
        let g = ex1(2.0).with_action_space(ActionSpace::interval(0.0, 1.0, 5)).unwrap();
        let knots = vec![
            Knot { action: vec![0.0], bid: 0.0 },
            Knot { action: vec![1.0], bid: 1.0 },
        ];
        let p = BiddingProfile::from_knots(&g, &[knots.clone(), knots.clone()], &[false, true]).unwrap();
        assert_eq!(p.schedules[0].values, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(p.schedules[1].values, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
        assert!((p.interpolate(&g, 0, &[0.1]) - 0.1).abs() < 1e-15);
        assert!(p.check_feasible(&g).is_err());
        BiddingProfile::from_knots(&g, &[knots.clone(), knots], &[false, false])
            .unwrap()
            .check_feasible(&g)
            .unwrap();
        let bad = BiddingProfile::constant(&g, 0.5);
        assert!(bad.check_feasible(&g).is_err());
    }

    fn private_toy() -> GameSpec {
        GameDefinition {
            name: Some("private_toy".into()),
            n: 2,
            action_space: ActionSpace::product(vec![(0.0, 1.0), (0.0, 1.0)], 3),
            agent_utility: "b1 + b2".into(),
            principals: vec![
                PrincipalDefinition {
                    utility: "a1 - b1".into(),
                    lower_bound: "0".into(),
                    upper_bound: "a1".into(),
                },
                PrincipalDefinition {
                    utility: "a2 - b2".into(),
                    lower_bound: "0".into(),
                    upper_bound: "a2".into(),
                },
            ],
            global_min: 0.0,
            global_max: 1.0,
            own_bid_direction: Directions::All(Direction::Decreasing),
            agent_bid_direction: Direction::Increasing,
            flags: [Flag::Private, Flag::NoExternalities].into_iter().collect(),
            params: BTreeMap::new(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn private_view_tables_are_per_component() {
        let g = private_toy();
        let view = adapt_private(&g).unwrap();
        assert_eq!(view.own_axis(0).len(), 3);
        let p = view.broadcast(&[vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 0.5]]).unwrap();
        assert_eq!(p.schedules[0].values.len(), 9);
        let back = view.restrict(&p).unwrap();
        assert_eq!(back, vec![vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 0.5]]);
        let varying = BiddingProfile::from_fn(&g, |_, a| Ok(a[0] * a[1])).unwrap();
        assert!(view.restrict(&varying).is_err());
    }

    #[test]
    fn private_view_guards() {
        assert!(adapt_private(&ex1(2.0)).is_err());
        let mut def_game = private_toy();
        def_game.principals[0].utility = Function::native(|a, b| a[0] + a[1] - b[0]);
        assert!(adapt_private(&def_game).is_err());
    }

    #[test]
    fn definition_json_round_trip() {
        let def = GameDefinition {
            name: Some("t".into()),
            n: 1,
            action_space: ActionSpace::interval(0.0, 1.0, 3),
            agent_utility: "b1".into(),
            principals: vec![PrincipalDefinition {
                utility: "-b1".into(),
                lower_bound: "0".into(),
                upper_bound: "1".into(),
            }],
            global_min: 0.0,
            global_max: 1.0,
            own_bid_direction: Directions::All(Direction::Decreasing),
            agent_bid_direction: Direction::Increasing,
            flags: BTreeSet::new(),
            params: BTreeMap::new(),
        };
        let back = GameDefinition::from_json(&def.to_json().unwrap()).unwrap();
        assert_eq!(back, def);
        let mut bad = def.clone();
        bad.principals[0].upper_bound = "b1".into();
        assert!(matches!(bad.build(), Err(Error::Parse { .. })));
    }
}
