//! Parameterized constructors for the standard games with their known solutions.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse_with, Layout, Scope};
use crate::game::{
    ActionSpace, BiddingProfile, Direction, Directions, Flag, GameDefinition, GameSpec, PrincipalDefinition,
    Schedule, UtilityVector,
};

/// A known solution or reference allocation of a builtin game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedForm {
    pub label: String,
    pub action: Vec<f64>,
    pub bids: Vec<f64>,
    pub utilities: UtilityVector,
    /// Bidding function per principal as an expression in the action.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<String>>,
    /// Parameters the profile expressions refer to.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Reference utilities the profile is truthful against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_star: Option<Vec<f64>>,
    /// Whether this is a truthful equilibrium.
    pub truthful_equilibrium: bool,
    /// Condition that rejects the profile when it is not a truthful equilibrium.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected_by: Option<String>,
    pub note: String,
}

impl ClosedForm {
    /// Tabulates the stored profile on the game grid.
    pub fn profile_on(&self, game: &GameSpec) -> Result<Option<BiddingProfile>> {
        let Some(exprs) = &self.profile else {
            return Ok(None);
        };
        let dim = game.action_dim();
        let scope = Scope {
            params: self.params.clone(),
            n: Some(0),
            action_dim: Some(dim),
            principal_template: false,
        };
        let layout = Layout {
            action_dim: dim,
            n: 0,
            principal: None,
        };
        let mut schedules = Vec::with_capacity(exprs.len());
        for (i, src) in exprs.iter().enumerate() {
            let ctx = || format!("closed-form profile of principal {}", i + 1);
            let compiled = parse_with(src, &scope)
                .and_then(|e| e.compile(&layout))
                .map_err(|source| Error::Parse {
                    context: ctx(),
                    source,
                })?;
            let values = game
                .grid()
                .points()
                .iter()
                .map(|a| {
                    compiled
                        .eval(a, &[])
                        .map_err(|source| Error::Eval { function: ctx(), source })
                })
                .collect::<Result<Vec<_>>>()?;
            schedules.push(Schedule { values, step: false });
        }
        Ok(Some(BiddingProfile { schedules }))
    }
}

/// A builtin game with its definition and known solutions.
#[derive(Debug, Clone)]
pub struct Builtin {
    pub game: GameSpec,
    pub definition: GameDefinition,
    pub closed_forms: Vec<ClosedForm>,
}

impl Builtin {
    pub fn closed_form(&self, label: &str) -> Option<&ClosedForm> {
        self.closed_forms.iter().find(|c| c.label == label)
    }
}

/// One catalogue row: name, default parameters and a summary.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogueEntry {
    pub name: &'static str,
    pub params: BTreeMap<String, f64>,
    pub summary: &'static str,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn catalogue() -> Vec<CatalogueEntry> {
    vec![
        CatalogueEntry {
            name: "prop3b_ex1",
            params: BTreeMap::new(),
            summary: "u_i = a - b_i, u_0 = b_1 + b_2, b_i in [0, a]",
        },
        CatalogueEntry {
            name: "prop3b_ex2",
            params: BTreeMap::new(),
            summary: "u_i = a - b_i, b_i in [0, 1/2], piecewise u_0",
        },
        CatalogueEntry {
            name: "ex1",
            params: params(&[("gamma", 2.0)]),
            summary: "u_i = a - b_i + gamma b_j, u_0 = b_1 + b_2",
        },
        CatalogueEntry {
            name: "ex2",
            params: BTreeMap::new(),
            summary: "ex1 with gamma = 2 and u_0 = -(b_1 + b_2)",
        },
        CatalogueEntry {
            name: "market",
            params: params(&[("c", 1.0), ("qbar", 2.0), ("pbar", 7.0)]),
            summary: "duopoly procurement: buyer splits qbar between two sellers quoting price schedules",
        },
        CatalogueEntry {
            name: "lobbying",
            params: params(&[("n", 2.0), ("e", 1.0)]),
            summary: "bribes over redistributive transfers before a public-good stage",
        },
        CatalogueEntry {
            name: "b22_ex1",
            params: BTreeMap::new(),
            summary: "u_i = a - b_i - 2 b_j (symmetric, quasi-concave)",
        },
        CatalogueEntry {
            name: "b22_ex2",
            params: BTreeMap::new(),
            summary: "u_1 = a - b_1 - 2 b_2, u_2 = a - b_1 - 4 b_2 (not symmetric)",
        },
        CatalogueEntry {
            name: "b22_ex3",
            params: BTreeMap::new(),
            summary: "u_1 = a - b_1 - b_2^2, u_2 = a - b_2 - b_1^2",
        },
        CatalogueEntry {
            name: "b22_ex4",
            params: BTreeMap::new(),
            summary: "u_1 = a - b_1 - 2 sqrt(b_2), u_2 = a - b_2 - 2 sqrt(b_1) (not quasi-concave)",
        },
    ]
}

fn merged(name: &str, given: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let entry = catalogue()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownGame(name.to_string()))?;
    let mut out = entry.params;
    for (k, v) in given {
        if !out.contains_key(k) {
            return Err(Error::Param(format!("game `{name}` has no parameter `{k}`")));
        }
        if !v.is_finite() {
            return Err(Error::Param(format!("parameter `{k}` must be finite")));
        }
        out.insert(k.clone(), *v);
    }
    Ok(out)
}

fn principal(utility: &str, lower: &str, upper: &str) -> PrincipalDefinition {
    PrincipalDefinition {
        utility: utility.into(),
        lower_bound: lower.into(),
        upper_bound: upper.into(),
    }
}

fn flags(fs: &[Flag]) -> BTreeSet<Flag> {
    fs.iter().copied().collect()
}

fn uv(agent: f64, principals: &[f64]) -> UtilityVector {
    UtilityVector {
        agent,
        principals: principals.to_vec(),
    }
}

struct Spec {
    def: GameDefinition,
    closed: Vec<ClosedForm>,
}

#[allow(clippy::too_many_arguments)]
fn two_principal_def(
    name: &str,
    space: ActionSpace,
    agent: &str,
    principals: Vec<PrincipalDefinition>,
    global: (f64, f64),
    agent_direction: Direction,
    fl: &[Flag],
    p: BTreeMap<String, f64>,
) -> GameDefinition {
    GameDefinition {
        name: Some(name.into()),
        n: principals.len(),
        action_space: space,
        agent_utility: agent.into(),
        principals,
        global_min: global.0,
        global_max: global.1,
        own_bid_direction: Directions::All(Direction::Decreasing),
        agent_bid_direction: agent_direction,
        flags: flags(fl),
        params: p,
    }
}

fn prop3b_ex1() -> Spec {
    let def = two_principal_def(
        "prop3b_ex1",
        ActionSpace::interval(0.0, 1.0, crate::game::DEFAULT_RESOLUTION),
        "b1 + b2",
        vec![principal("a - b1", "0", "a"), principal("a - b2", "0", "a")],
        (0.0, 1.0),
        Direction::Increasing,
        &[Flag::NoExternalities, Flag::Cumulative, Flag::Symmetric],
        BTreeMap::new(),
    );
    let closed = vec![ClosedForm {
        label: "equilibrium".into(),
        action: vec![1.0],
        bids: vec![0.0, 0.0],
        utilities: uv(0.0, &[1.0, 1.0]),
        profile: Some(vec!["0".into(), "0".into()]),
        params: BTreeMap::new(),
        u_star: Some(vec![1.0, 1.0]),
        truthful_equilibrium: true,
        rejected_by: None,
        note: "zero bids everywhere; only a = 1 delivers the reference utilities".into(),
    }];
    Spec { def, closed }
}

fn prop3b_ex2() -> Spec {
    let def = two_principal_def(
        "prop3b_ex2",
        ActionSpace::interval(0.0, 1.0, crate::game::DEFAULT_RESOLUTION).with_breakpoints(vec![0.5]),
        "if(a <= 0.5, b1 + b2 - 2*a, b1 + b2 - 1)",
        vec![principal("a - b1", "0", "0.5"), principal("a - b2", "0", "0.5")],
        (0.0, 0.5),
        Direction::Increasing,
        &[Flag::NoExternalities, Flag::Cumulative, Flag::Symmetric],
        BTreeMap::new(),
    );
    let closed = vec![ClosedForm {
        label: "bii_failure".into(),
        action: vec![0.0],
        bids: vec![0.0, 0.0],
        utilities: uv(0.0, &[0.0, 0.0]),
        profile: Some(vec!["if(a <= 0.5, a, 0.5)".into(), "if(a <= 0.5, a, 0.5)".into()]),
        params: BTreeMap::new(),
        u_star: Some(vec![0.0, 0.0]),
        truthful_equilibrium: false,
        rejected_by: Some("Bii".into()),
        note: "truthful relative to zero utilities, but a = 1 leaves each principal 0.5".into(),
    }];
    Spec { def, closed }
}

fn ex1_def(name: &str, gamma: f64, agent: &str, agent_direction: Direction) -> GameDefinition {
    two_principal_def(
        name,
        ActionSpace::interval(0.0, 1.0, crate::game::DEFAULT_RESOLUTION),
        agent,
        vec![
            principal("a - b1 + gamma*b2", "0", "a"),
            principal("a - b2 + gamma*b1", "0", "a"),
        ],
        (0.0, 1.0),
        agent_direction,
        &[Flag::Cumulative, Flag::Symmetric],
        params(&[("gamma", gamma)]),
    )
}

fn allocation_b(truthful: bool, rejected_by: Option<&str>, note: &str) -> ClosedForm {
    ClosedForm {
        label: "B".into(),
        action: vec![1.0],
        bids: vec![0.0, 0.0],
        utilities: uv(0.0, &[1.0, 1.0]),
        profile: Some(vec!["0".into(), "0".into()]),
        params: BTreeMap::new(),
        u_star: Some(vec![1.0, 1.0]),
        truthful_equilibrium: truthful,
        rejected_by: rejected_by.map(str::to_string),
        note: note.into(),
    }
}

fn ex1(p: &BTreeMap<String, f64>) -> Result<Spec> {
    let gamma = p["gamma"];
    if gamma <= 0.0 {
        return Err(Error::Param(format!("gamma must be positive, got {gamma}")));
    }
    let def = ex1_def("ex1", gamma, "b1 + b2", Direction::Increasing);
    let closed = vec![
        ClosedForm {
            label: "A".into(),
            action: vec![1.0],
            bids: vec![1.0, 1.0],
            utilities: uv(2.0, &[gamma, gamma]),
            profile: None,
            params: BTreeMap::new(),
            u_star: None,
            truthful_equilibrium: false,
            rejected_by: None,
            note: "symmetric efficient allocation for gamma = 2; not an equilibrium there".into(),
        },
        allocation_b(true, None, "constant zero bids; inefficient for gamma = 2, efficient for gamma = 0.5"),
    ];
    Ok(Spec { def, closed })
}

fn ex2() -> Spec {
    let def = ex1_def("ex2", 2.0, "-(b1 + b2)", Direction::Decreasing);
    let closed = vec![allocation_b(
        false,
        Some("Aii"),
        "efficient equilibrium supported by zero bids, not a truthful equilibrium",
    )];
    Spec { def, closed }
}

fn market(p: &BTreeMap<String, f64>) -> Result<Spec> {
    let (c, qbar, pbar) = (p["c"], p["qbar"], p["pbar"]);
    if c <= 0.0 || qbar <= 0.0 {
        return Err(Error::Param("market needs c > 0 and qbar > 0".into()));
    }
    if pbar <= 3.0 * c * qbar {
        return Err(Error::Param(format!(
            "market needs pbar > 3 c qbar = {}, got {pbar}",
            3.0 * c * qbar
        )));
    }
    let qstar = market_knee(c, qbar, pbar);
    let def = GameDefinition {
        name: Some("market".into()),
        n: 2,
        action_space: ActionSpace::interval(0.0, qbar, crate::game::DEFAULT_RESOLUTION)
            .with_breakpoints(vec![qbar / 2.0]),
        agent_utility: "-b1*a - b2*(qbar - a)".into(),
        principals: vec![
            principal("b1*a - c*a^2", "c*a", "pbar"),
            principal("b2*(qbar - a) - c*(qbar - a)^2", "c*(qbar - a)", "pbar"),
        ],
        global_min: 0.0,
        global_max: pbar,
        own_bid_direction: Directions::All(Direction::Increasing),
        agent_bid_direction: Direction::Decreasing,
        flags: flags(&[Flag::NoExternalities]),
        params: params(&[("c", c), ("qbar", qbar), ("pbar", pbar)]),
    };
    let profit = c * qbar * qbar / 2.0;
    let price = 1.5 * c * qbar;
    let closed = vec![ClosedForm {
        label: "equilibrium".into(),
        action: vec![qbar / 2.0],
        bids: vec![price, price],
        utilities: uv(-price * qbar, &[profit, profit]),
        profile: Some(vec![
            "if(a >= qstar, c*qbar^2/(2*a) + c*a, pbar)".into(),
            "if(qbar - a >= qstar, c*qbar^2/(2*(qbar - a)) + c*(qbar - a), pbar)".into(),
        ]),
        params: params(&[("c", c), ("qbar", qbar), ("pbar", pbar), ("qstar", qstar)]),
        u_star: Some(vec![profit, profit]),
        truthful_equilibrium: true,
        rejected_by: None,
        note: "symmetric split; each price schedule sits at pbar below the knee qstar".into(),
    }];
    Ok(Spec { def, closed })
}

/// Quantity below which the market price schedule is capped at `pbar`.
pub fn market_knee(c: f64, qbar: f64, pbar: f64) -> f64 {
    (pbar - (pbar * pbar - 2.0 * c * c * qbar * qbar).sqrt()) / (2.0 * c)
}

/// Grid points per transfer axis for three-principal lobbying.
pub const LOBBYING_AXIS_POINTS: usize = 21;

fn lobbying(p: &BTreeMap<String, f64>) -> Result<Spec> {
    let (n, e) = (p["n"], p["e"]);
    if e <= 0.0 {
        return Err(Error::Param(format!("lobbying needs e > 0, got {e}")));
    }
    if n.fract() != 0.0 || !(2.0..=3.0).contains(&n) {
        return Err(Error::Param(format!("lobbying supports n = 2 or n = 3, got {n}")));
    }
    let n = n as usize;
    let (space, utility, uppers) = if n == 2 {
        (
            ActionSpace::interval(-e, e, crate::game::DEFAULT_RESOLUTION).with_breakpoints(vec![0.0]),
            "((e + a - b1) + (e - a - b2))^2 / 9".to_string(),
            vec!["e + a".to_string(), "e - a".to_string()],
        )
    } else {
        let axis = crate::game::linspace(-e, e, LOBBYING_AXIS_POINTS);
        let points = axis
            .iter()
            .flat_map(|&t1| axis.iter().map(move |&t2| vec![t1, t2]))
            .filter(|t| (t[0] + t[1]).abs() <= e + 1e-12)
            .collect();
        (
            ActionSpace::finite(points),
            "((e + a1 - b1) + (e + a2 - b2) + (e - a1 - a2 - b3))^2 / 16".to_string(),
            vec!["e + a1".into(), "e + a2".into(), "e - a1 - a2".into()],
        )
    };
    let def = GameDefinition {
        name: Some("lobbying".into()),
        n,
        action_space: space,
        agent_utility: "bsum".into(),
        principals: uppers.iter().map(|u| principal(&utility, "0", u)).collect(),
        global_min: 0.0,
        global_max: 2.0 * e,
        own_bid_direction: Directions::All(Direction::Decreasing),
        agent_bid_direction: Direction::Increasing,
        flags: flags(&[Flag::Cumulative, Flag::Symmetric]),
        params: params(&[("e", e)]),
    };
    let level = (n as f64 * e / (n as f64 + 1.0)).powi(2);
    let closed = vec![ClosedForm {
        label: "equilibrium".into(),
        action: vec![0.0; n - 1],
        bids: vec![0.0; n],
        utilities: uv(0.0, &vec![level; n]),
        profile: Some(vec!["0".into(); n]),
        params: BTreeMap::new(),
        u_star: Some(vec![level; n]),
        truthful_equilibrium: true,
        rejected_by: None,
        note: "no bribes; utilities do not depend on the transfers".into(),
    }];
    Ok(Spec { def, closed })
}

fn b22(name: &str, u1: &str, u2: &str, cap: f64, symmetric: bool, ref_u: (f64, f64)) -> Spec {
    let cap_s = format!("{cap}");
    let fl: &[Flag] = if symmetric {
        &[Flag::Cumulative, Flag::Symmetric]
    } else {
        &[Flag::Cumulative]
    };
    let def = two_principal_def(
        name,
        ActionSpace::interval(0.0, 1.0, crate::game::DEFAULT_RESOLUTION),
        "b1 + b2",
        vec![principal(u1, "0", &cap_s), principal(u2, "0", &cap_s)],
        (0.0, cap),
        Direction::Increasing,
        fl,
        BTreeMap::new(),
    );
    let closed = vec![ClosedForm {
        label: "A".into(),
        action: vec![0.0],
        bids: vec![1.0, 1.0],
        utilities: uv(2.0, &[ref_u.0, ref_u.1]),
        profile: None,
        params: BTreeMap::new(),
        u_star: None,
        truthful_equilibrium: false,
        rejected_by: None,
        note: "reference allocation for the indifference curves".into(),
    }];
    Spec { def, closed }
}

/// Builds builtin `name` with `given` overriding its default parameters.
pub fn get_game(name: &str, given: &BTreeMap<String, f64>) -> Result<Builtin> {
    let p = merged(name, given)?;
    let spec = match name {
        "prop3b_ex1" => prop3b_ex1(),
        "prop3b_ex2" => prop3b_ex2(),
        "ex1" => ex1(&p)?,
        "ex2" => ex2(),
        "market" => market(&p)?,
        "lobbying" => lobbying(&p)?,
        "b22_ex1" => b22(name, "a - b1 - 2*b2", "a - b2 - 2*b1", 5.0, true, (-3.0, -3.0)),
        "b22_ex2" => b22(name, "a - b1 - 2*b2", "a - b1 - 4*b2", 5.0, false, (-3.0, -5.0)),
        "b22_ex3" => b22(name, "a - b1 - b2^2", "a - b2 - b1^2", 3.0, true, (-2.0, -2.0)),
        "b22_ex4" => b22(name, "a - b1 - 2*sqrt(b2)", "a - b2 - 2*sqrt(b1)", 3.0, true, (-3.0, -3.0)),
        _ => return Err(Error::UnknownGame(name.to_string())),
    };
    Ok(Builtin {
        game: spec.def.build()?,
        definition: spec.def,
        closed_forms: spec.closed,
    })
}

/// Builds builtin `name` with default parameters.
pub fn get_default(name: &str) -> Result<Builtin> {
    get_game(name, &BTreeMap::new())
}

/// First-stage public-good outcome given endowments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublicGoodStage {
    pub contributions: Vec<f64>,
    pub total: f64,
    pub utility: f64,
}

pub fn public_good_stage(n: usize, endowments: &[f64]) -> Result<PublicGoodStage> {
    if n < 2 || endowments.len() != n {
        return Err(Error::Param(format!(
            "public-good stage needs n >= 2 endowments, got n = {n} with {} values",
            endowments.len()
        )));
    }
    let total = endowments.iter().sum::<f64>() / (n as f64 + 1.0);
    Ok(PublicGoodStage {
        contributions: endowments.iter().map(|e| e - total).collect(),
        total,
        utility: total * total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        params(pairs)
    }

    #[test]
    fn every_catalogue_entry_builds() {
        for entry in catalogue() {
            let b = get_game(entry.name, &BTreeMap::new()).unwrap();
            assert_eq!(b.game.name, entry.name);
            assert!(!b.closed_forms.is_empty());
        }
    }

    #[test]
    fn closed_forms_reproduce_their_utilities() {
        for entry in catalogue() {
            let b = get_default(entry.name).unwrap();
            for cf in &b.closed_forms {
                let u = b.game.evaluate(&cf.action, &cf.bids).unwrap();
                assert!((u.agent - cf.utilities.agent).abs() < 1e-9, "{} {}", entry.name, cf.label);
                for (x, y) in u.principals.iter().zip(&cf.utilities.principals) {
                    assert!((x - y).abs() < 1e-9, "{} {}", entry.name, cf.label);
                }
                if let Some(p) = cf.profile_on(&b.game).unwrap() {
                    let k = b.game.grid().index_of(&cf.action, 1e-12).expect("closed-form action on grid");
                    for (x, y) in p.bids_at(k).iter().zip(&cf.bids) {
                        assert!((x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn market_closed_form() {
        let b = get_game("market", &with(&[("c", 1.0), ("qbar", 2.0), ("pbar", 7.0)])).unwrap();
        let cf = b.closed_form("equilibrium").unwrap();
        assert_eq!(cf.action, vec![1.0]);
        assert_eq!(cf.bids, vec![3.0, 3.0]);
        assert_eq!(cf.utilities.principals, vec![2.0, 2.0]);
        let knee = cf.params["qstar"];
        assert!((knee - (7.0 - 41f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((knee - 0.2984).abs() < 1e-4);
        // Schedule stays above average cost and below pbar past the knee.
        let p = cf.profile_on(&b.game).unwrap().unwrap();
        for (k, a) in b.game.grid().points().iter().enumerate() {
            let v = p.value(0, k);
            assert!(v >= a[0] - 1e-12);
            if a[0] > knee {
                assert!(v < 7.0);
            }
        }
    }

    #[test]
    fn parameter_ranges() {
        assert!(matches!(
            get_game("market", &with(&[("pbar", 6.0)])),
            Err(Error::Param(_))
        ));
        assert!(matches!(get_game("lobbying", &with(&[("e", 0.0)])), Err(Error::Param(_))));
        assert!(matches!(get_game("lobbying", &with(&[("n", 1.0)])), Err(Error::Param(_))));
        assert!(matches!(get_game("ex1", &with(&[("delta", 1.0)])), Err(Error::Param(_))));
        assert!(matches!(get_game("nope", &BTreeMap::new()), Err(Error::UnknownGame(_))));
    }

    #[test]
    fn lobbying_three_principals() {
        let b = get_game("lobbying", &with(&[("n", 3.0), ("e", 1.0)])).unwrap();
        assert_eq!(b.game.n, 3);
        assert_eq!(b.game.action_dim(), 2);
        let u = b.game.evaluate(&[0.5, -1.0], &[0.0, 0.0, 0.0]).unwrap();
        for x in u.principals {
            assert!((x - 9.0 / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lobbying_feasibility_example() {
        let b = get_default("lobbying").unwrap();
        assert!(b.game.is_feasible_pair(&[0.5], &[1.5, 0.5]).unwrap().feasible);
        assert!(!b.game.is_feasible_pair(&[0.5], &[1.6, 0.5]).unwrap().feasible);
    }

    #[test]
    fn b22_reference() {
        let b = get_default("b22_ex1").unwrap();
        let a = b.closed_form("A").unwrap();
        assert_eq!(a.action, vec![0.0]);
        assert_eq!(a.bids, vec![1.0, 1.0]);
        assert_eq!(a.utilities.agent, 2.0);
        assert_eq!(a.utilities.principals, vec![-3.0, -3.0]);
    }

    #[test]
    fn public_good() {
        let s = public_good_stage(2, &[1.0, 1.0]).unwrap();
        assert!((s.total - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.contributions[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.utility - 4.0 / 9.0).abs() < 1e-15);
        let s = public_good_stage(3, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.total, 0.75);
        assert_eq!(s.utility, 9.0 / 16.0);
        let s = public_good_stage(2, &[0.0, 0.0]).unwrap();
        assert_eq!((s.total, s.utility), (0.0, 0.0));
        assert_eq!(s.contributions, vec![0.0, 0.0]);
        assert!(public_good_stage(1, &[1.0]).is_err());
    }
}
