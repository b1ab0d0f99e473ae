//! Command-line front end for the common-agency toolkit.
//!
//! [`run`] turns a parsed [`Cli`] into an exit code and a list of rendered
//! artifacts; the binary decides whether they go to stdout or to `--out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use agency_core::assumptions::Reference;
use agency_core::builtin::catalogue;
use agency_core::equilibrium::{enumerate_equilibria_small, ProfileSpace, TinyGame};
use agency_core::game::{linspace, Knot};
use agency_core::report::{frontier_csv, report_json, write_csv};
use agency_core::{
    check_efficiency, frontier_sample, get_game, solve_truthful, validity_report, verify_truthful_equilibrium,
    Allocation, AuditConfig, BiddingProfile, Builtin, Candidate, ClosedForm, Error, GameDefinition, GameSpec,
    SolveConfig, UtilityVector,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "agency", version, about = "Truthful equilibria of common-agency games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the builtin games with their default parameters.
    ListGames {
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Audit the structural assumptions and report the validity route.
    CheckAssumptions {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        audit: AuditArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Search for truthful equilibria and route their validity.
    Solve {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        audit: AuditArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check a candidate truthful equilibrium read from a JSON file.
    Verify {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long)]
        candidate: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Search the grid for an allocation dominating the given one.
    Efficiency {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        allocation: AllocationArgs,
        #[arg(long, default_value_t = 41)]
        bid_resolution: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sample the utility frontier over the action grid and a bid grid.
    Frontier {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value_t = 21)]
        bid_resolution: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Enumerate every equilibrium of a tiny game in step profiles.
    Oracle {
        #[command(flatten)]
        game: GameArgs,
        /// Scalar actions; defaults to the game grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        actions: Vec<f64>,
        /// Bid menu; defaults to the global minimum, midpoint and maximum.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        menu: Vec<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Utilities over the bid plane at a reference allocation.
    Curves {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        allocation: AllocationArgs,
        #[arg(long, default_value_t = 41)]
        bid_resolution: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct GameArgs {
    /// Builtin game name.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    pub game: Option<String>,
    /// Game definition JSON file.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Parameter override, `key=value`.
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Action grid points per dimension.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    #[arg(long, default_value_t = agency_core::assumptions::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = agency_core::assumptions::DEFAULT_BID_RESOLUTION)]
    pub bid_resolution: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AllocationArgs {
    /// Label of a stored allocation of the builtin game.
    #[arg(long, conflicts_with_all = ["action", "bids"])]
    pub closed_form: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "bids")]
    pub action: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "action")]
    pub bids: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Directory to write the report into instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

/// A rendered report or data file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub artifact: Artifact,
    pub out: Option<PathBuf>,
}

impl Outcome {
    /// Writes the artifact to `--out` or stdout.
    pub fn emit(&self) -> std::io::Result<()> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(&self.artifact.name), &self.artifact.contents)
            }
            None => {
                use std::io::Write;
                std::io::stdout().write_all(self.artifact.contents.as_bytes())
            }
        }
    }
}

/// A game with its builtin closed forms, if any.
struct Loaded {
    game: GameSpec,
    builtin: Option<Builtin>,
}

fn load(args: &GameArgs) -> Result<Loaded, Error> {
    let params: BTreeMap<String, f64> = args.params.iter().cloned().collect();
    let (mut game, builtin) = match (&args.game, &args.file) {
        (Some(name), _) => {
            let b = get_game(name, &params)?;
            (b.game.clone(), Some(b))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let mut def = GameDefinition::from_json(&text)?;
            for (k, v) in params {
                if !def.params.contains_key(&k) {
                    return Err(Error::Param(format!("`{k}` is not a parameter of {}", path.display())));
                }
                def.params.insert(k, v);
            }
            (def.build()?, None)
        }
        (None, None) => return Err(Error::Structure("either --game or --file is required".into())),
    };
    if let Some(r) = args.resolution {
        game = game.with_resolution(r)?;
    }
    Ok(Loaded { game, builtin })
}

fn closed_form<'a>(loaded: &'a Loaded, label: &str) -> Result<&'a ClosedForm, Error> {
    let b = loaded
        .builtin
        .as_ref()
        .ok_or_else(|| Error::Structure("stored allocations exist only for builtin games".into()))?;
    b.closed_form(label).ok_or_else(|| {
        let labels: Vec<&str> = b.closed_forms.iter().map(|c| c.label.as_str()).collect();
        Error::Structure(format!("no stored allocation `{label}`; available: {labels:?}"))
    })
}

fn allocation(loaded: &Loaded, args: &AllocationArgs) -> Result<Allocation, Error> {
    let (action, bids) = match &args.closed_form {
        Some(label) => {
            let cf = closed_form(loaded, label)?;
            (cf.action.clone(), cf.bids.clone())
        }
        None if !args.action.is_empty() => (args.action.clone(), args.bids.clone()),
        None => return Err(Error::Structure("give --closed-form or --action with --bids".into())),
    };
    Allocation::new(&loaded.game, action, bids)
}

fn audit_config(args: &AuditArgs) -> AuditConfig {
    AuditConfig {
        samples: args.samples,
        seed: args.seed,
        bid_resolution: args.bid_resolution,
        ..AuditConfig::default()
    }
}

/// Candidate file: action, per-principal knot lists and reference utilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateFile {
    pub action: Vec<f64>,
    pub profile: Vec<ScheduleFile>,
    pub u_star: Vec<f64>,
}

/// Knots are `[a, bid]` (or `[a1, .., ak, bid]` for vector actions).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub knots: Vec<Vec<f64>>,
    #[serde(default)]
    pub step: bool,
}

impl CandidateFile {
    pub fn to_candidate(&self, game: &GameSpec) -> Result<Candidate, Error> {
        let dim = game.action_dim();
        let mut knots = Vec::with_capacity(self.profile.len());
        for (i, s) in self.profile.iter().enumerate() {
            let ks = s
                .knots
                .iter()
                .map(|k| match k.split_last() {
                    Some((bid, action)) if action.len() == dim => Ok(Knot {
                        action: action.to_vec(),
                        bid: *bid,
                    }),
                    _ => Err(Error::Structure(format!(
                        "principal {}: knots need {} numbers, got {k:?}",
                        i + 1,
                        dim + 1
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            knots.push(ks);
        }
        let steps: Vec<bool> = self.profile.iter().map(|s| s.step).collect();
        let profile = BiddingProfile::from_knots(game, &knots, &steps)?;
        profile.check_feasible(game)?;
        Candidate::new(game, self.action.clone(), profile, self.u_star.clone())
    }
}

#[derive(Serialize)]
struct GameInfo<'a> {
    name: &'a str,
    n: usize,
    resolution: usize,
}

fn info(game: &GameSpec) -> GameInfo<'_> {
    GameInfo {
        name: &game.name,
        n: game.n,
        resolution: game.grid().len(),
    }
}

#[derive(Serialize)]
struct AllocationRecord {
    action: Vec<f64>,
    bids: Vec<f64>,
    utilities: UtilityVector,
}

impl From<&Allocation> for AllocationRecord {
    fn from(a: &Allocation) -> Self {
        AllocationRecord {
            action: a.action.clone(),
            bids: a.bids.clone(),
            utilities: a.utilities.clone(),
        }
    }
}

#[derive(Serialize)]
struct CandidateRecord<'a> {
    action: &'a [f64],
    bids: Vec<f64>,
    utilities: UtilityVector,
    u_star: &'a [f64],
    pass: bool,
    failing: Vec<&'a str>,
}

fn csv_only(format: Format, command: &str) -> Result<(), Error> {
    if format == Format::Csv {
        return Err(Error::Structure(format!("`{command}` writes JSON only")));
    }
    Ok(())
}

fn json(kind: &str, body: &impl Serialize) -> Result<Artifact, Error> {
    Ok(Artifact {
        name: format!("{}.json", kind.replace('_', "-")),
        contents: report_json(kind, body)?,
    })
}

/// Runs one command. Structural problems come back as `Err`.
pub fn run(cli: &Cli) -> Result<Outcome, Error> {
    let (code, artifact, output) = match &cli.command {
        Command::ListGames { output } => {
            csv_only(output.format, "list-games")?;
            #[derive(Serialize)]
            struct Entry {
                name: &'static str,
                params: BTreeMap<String, f64>,
                summary: &'static str,
                closed_forms: Vec<String>,
            }
            let games = catalogue()
                .into_iter()
                .map(|e| {
                    let b = get_game(e.name, &e.params)?;
                    Ok(Entry {
                        name: e.name,
                        params: e.params,
                        summary: e.summary,
                        closed_forms: b.closed_forms.into_iter().map(|c| c.label).collect(),
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            (EXIT_OK, json("games", &serde_json::json!({ "games": games }))?, output)
        }
        Command::CheckAssumptions { game, audit, output } => {
            csv_only(output.format, "check-assumptions")?;
            let loaded = load(game)?;
            let report = validity_report(&loaded.game, None, &audit_config(audit))?;
            let code = if report.route.is_some() { EXIT_OK } else { EXIT_CHECK_FAILED };
            (code, json("check_assumptions", &report)?, output)
        }
        Command::Solve { game, audit, output } => {
            csv_only(output.format, "solve")?;
            let loaded = load(game)?;
            let g = &loaded.game;
            let config = SolveConfig::default();
            let result = solve_truthful(g, &config)?;
            let candidates = result
                .candidates
                .iter()
                .map(|s| {
                    let bids = s.candidate.bids(g)?;
                    Ok(CandidateRecord {
                        action: &s.candidate.action,
                        utilities: g.evaluate(&s.candidate.action, &bids)?,
                        bids,
                        u_star: &s.candidate.u_star,
                        pass: s.report.pass,
                        failing: s.report.failing(),
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let first = result.candidates.iter().find(|s| s.report.pass);
            let validity = validity_report(g, first.map(|s| &s.candidate), &audit_config(audit))?;
            let code = if first.is_some() { EXIT_OK } else { EXIT_CHECK_FAILED };
            let body = serde_json::json!({
                "game": info(g),
                "config": config,
                "scan_range": result.scan_range,
                "skipped": result.skipped.len(),
                "candidates": candidates,
                "validity": validity,
            });
            (code, json("solve", &body)?, output)
        }
        Command::Verify {
            game,
            candidate,
            output,
        } => {
            csv_only(output.format, "verify")?;
            let loaded = load(game)?;
            let text =
                fs::read_to_string(candidate).map_err(|e| Error::Io(format!("{}: {e}", candidate.display())))?;
            let file: CandidateFile = serde_json::from_str(&text)?;
            let cand = file.to_candidate(&loaded.game)?;
            let report = verify_truthful_equilibrium(&loaded.game, &cand)?;
            let code = if report.pass { EXIT_OK } else { EXIT_CHECK_FAILED };
            let body = serde_json::json!({ "game": info(&loaded.game), "report": report });
            (code, json("verify", &body)?, output)
        }
        Command::Efficiency {
            game,
            allocation: alloc,
            bid_resolution,
            output,
        } => {
            csv_only(output.format, "efficiency")?;
            let loaded = load(game)?;
            let a = allocation(&loaded, alloc)?;
            let result = check_efficiency(&loaded.game, &a, *bid_resolution)?;
            let code = if result.is_efficient() { EXIT_OK } else { EXIT_CHECK_FAILED };
            let body = serde_json::json!({
                "game": info(&loaded.game),
                "allocation": AllocationRecord::from(&a),
                "result": result,
            });
            (code, json("efficiency", &body)?, output)
        }
        Command::Frontier {
            game,
            bid_resolution,
            output,
        } => {
            let loaded = load(game)?;
            let g = &loaded.game;
            let points = frontier_sample(g, *bid_resolution)?;
            let artifact = match output.format {
                Format::Csv => Artifact {
                    name: "frontier.csv".into(),
                    contents: frontier_csv(&points, g.action_dim(), g.n)?,
                },
                Format::Json => json(
                    "frontier",
                    &serde_json::json!({ "game": info(g), "bid_resolution": bid_resolution, "points": points }),
                )?,
            };
            (EXIT_OK, artifact, output)
        }
        Command::Oracle {
            game,
            actions,
            menu,
            output,
        } => {
            csv_only(output.format, "oracle")?;
            let loaded = load(game)?;
            let g = &loaded.game;
            let actions: Vec<Vec<f64>> = if actions.is_empty() {
                g.grid().points().to_vec()
            } else {
                actions.iter().map(|a| vec![*a]).collect()
            };
            let menu = if menu.is_empty() {
                vec![g.global_min, 0.5 * (g.global_min + g.global_max), g.global_max]
            } else {
                menu.clone()
            };
            let tiny = TinyGame::new(g, &actions, &menu)?;
            let report = enumerate_equilibria_small(&tiny, &ProfileSpace::Full)?;
            let allocations = report
                .allocations(&tiny.game)
                .into_iter()
                .map(|(action, bids)| Allocation::new(&tiny.game, action, bids).map(|a| AllocationRecord::from(&a)))
                .collect::<Result<Vec<_>, Error>>()?;
            let body = serde_json::json!({
                "game": info(g),
                "actions": actions,
                "menu": tiny.bids,
                "profiles_checked": report.profiles_checked,
                "equilibria": report.equilibria.len(),
                "tie_dependent": report.equilibria.iter().filter(|e| e.tie_dependent).count(),
                "allocations": allocations,
            });
            (EXIT_OK, json("oracle", &body)?, output)
        }
        Command::Curves {
            game,
            allocation: alloc,
            bid_resolution,
            output,
        } => {
            let loaded = load(game)?;
            let reference = allocation(&loaded, alloc)?;
            let curves = emit_curves(&loaded.game, &reference, *bid_resolution)?;
            let artifact = match output.format {
                Format::Csv => Artifact {
                    name: "curves.csv".into(),
                    contents: curves.to_csv()?,
                },
                Format::Json => json("curves", &curves)?,
            };
            (EXIT_OK, artifact, output)
        }
    };
    Ok(Outcome {
        code,
        artifact,
        out: output.out.clone(),
    })
}

/// Utilities over the bid plane at a reference action, with the reference levels.
#[derive(Debug, Clone, Serialize)]
pub struct Curves {
    pub reference: Reference,
    pub reference_utilities: Vec<f64>,
    /// `[b1, b2, u0, u1, u2]` per grid point.
    pub rows: Vec<[f64; 5]>,
}

pub const CURVE_COLUMNS: [&str; 8] = ["b1", "b2", "u0", "u1", "u2", "ref_u0", "ref_u1", "ref_u2"];

impl Curves {
    pub fn to_csv(&self) -> Result<String, Error> {
        let header: Vec<String> = CURVE_COLUMNS.iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|r| r.iter().chain(&self.reference_utilities).copied().collect())
            .collect();
        let mut out = Vec::new();
        write_csv(&mut out, &header, &rows)?;
        Ok(String::from_utf8(out).expect("csv writes UTF-8"))
    }
}

/// Tabulates all three utilities over the feasible bid box at the reference
/// action. A resolution of 1 yields the reference bids alone.
pub fn emit_curves(game: &GameSpec, reference: &Allocation, resolution: usize) -> Result<Curves, Error> {
    if game.n != 2 {
        return Err(Error::Structure(format!("curves need two principals, `{}` has {}", game.name, game.n)));
    }
    let a = &reference.action;
    let axes = (0..2)
        .map(|i| {
            Ok(if resolution <= 1 {
                vec![reference.bids[i]]
            } else {
                linspace(game.lower(i, a)?, game.upper(i, a)?, resolution)
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut rows = Vec::with_capacity(axes[0].len() * axes[1].len());
    for &b1 in &axes[0] {
        for &b2 in &axes[1] {
            let u = game.evaluate(a, &[b1, b2])?;
            rows.push([b1, b2, u.agent, u.principals[0], u.principals[1]]);
        }
    }
    Ok(Curves {
        reference: Reference {
            action: a.clone(),
            bids: reference.bids.clone(),
        },
        reference_utilities: reference.utilities.to_vec(),
        rows,
    })
}
