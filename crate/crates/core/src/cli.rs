//! `cpomdp` command line.
//!
//! Exit codes: 0 success, 1 domain / validation / verification failure,
//! 2 I/O or usage error. Every command emits a [`RunManifest`], next to the
//! output file as `<out>.manifest.json`, or on stderr when writing to stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::belief::{filter_trace, BeliefError, BeliefRecord, JointBelief, TraceStep};
use crate::dynamics::Dynamics;
use crate::interventions::{DomainSet, ShiftError};
use crate::model::{load_model_with_adjustments, validate_model, CausalPomdp, ModelDocument, ModelError};
use crate::oracle::{expectimax_value, OracleConfig, OracleError};
use crate::planning::{
    check_convexity, evaluate_policy_known_shift, plan_with, AlphaSet, AlphaSetFile, EvalError, GreedyPolicy,
    PlanningError, PolicyDocument, PolicyError, PolicySpec, Pruning, ReactivePolicy, DEFAULT_NODE_BUDGET,
};
use crate::sim::{identification_experiment, monte_carlo_policy_value, sample_episode, uniform_prior, SimError};

/// Overrides the belief-tree node budget of `evaluate` and `oracle`.
pub const NODE_BUDGET_ENV: &str = "CPOMDP_NODE_BUDGET";

#[derive(Debug, Parser)]
#[command(name = "cpomdp", version, about = "Planning and filtering in causal POMDPs under shift interventions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PruningArg {
    Pointwise,
    Lp,
}

impl From<PruningArg> for Pruning {
    fn from(p: PruningArg) -> Self {
        match p {
            PruningArg::Pointwise => Pruning::Pointwise,
            PruningArg::Lp => Pruning::Lp,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a model file and print the report.
    Validate { model: PathBuf },
    /// Plan the stage-N alpha set over the selected domains.
    Plan {
        model: PathBuf,
        /// `all` or comma-separated domain names.
        #[arg(long, default_value = "all")]
        domains: String,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sample this many belief segments and fail on any convexity violation.
        #[arg(long)]
        check_convexity: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "pointwise")]
        pruning: PruningArg,
    },
    /// Filter a trace of (action, observation) pairs.
    Filter {
        model: PathBuf,
        #[arg(long, default_value = "all")]
        domains: String,
        #[arg(long)]
        trace: PathBuf,
        /// Joint prior as rows `[state][domain]`; uniform when omitted.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value of a policy when the world runs under one known domain.
    Evaluate {
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        horizon: usize,
        /// Also estimate by Monte Carlo with this many episodes.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// State prior as a flat vector; uniform when omitted.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Domain-identification experiment; writes JSON and a CSV beside it.
    Identify {
        model: PathBuf,
        #[arg(long, default_value = "all")]
        domains: String,
        #[arg(long = "true")]
        true_domain: String,
        /// Defaults to always playing the first action.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expectimax values at the joint beliefs listed in a file.
    Oracle {
        model: PathBuf,
        #[arg(long, default_value = "all")]
        domains: String,
        #[arg(long)]
        horizon: usize,
        /// JSON array of joint beliefs, each as rows `[state][domain]`.
        #[arg(long)]
        beliefs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample one trajectory under a domain.
    Sample {
        model: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Io { .. } | CliError::Usage(_) => 2,
        }
    }
}

macro_rules! failed_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Failed(e.to_string())
            }
        })*
    };
}

failed_from!(ModelError, ShiftError, BeliefError, PlanningError, PolicyError, EvalError, OracleError, SimError);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Value,
    /// Hex SHA-256 of the model file bytes.
    pub model_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub results: Option<Value>,
}

struct Run {
    command: &'static str,
    args: Value,
    model_hash: String,
    seed: Option<u64>,
    results: Option<Value>,
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

/// Write-temp-then-rename in the destination directory.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
    bytes.push(b'\n');
    bytes
}

/// Primary output goes to `out`, or stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => write_atomic(path, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

struct Loaded {
    model: CausalPomdp,
    hash: String,
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Failed(format!("{}: not UTF-8", path.display())))?;
    let (model, adjustments) = load_model_with_adjustments(&text)?;
    for finding in adjustments {
        eprintln!("note: {}: {}", finding.path, finding.detail);
    }
    Ok(Loaded {
        model,
        hash: hex::encode(Sha256::digest(&bytes)),
    })
}

fn select_domains(model: &CausalPomdp, selector: &str) -> Result<DomainSet, CliError> {
    let set = DomainSet::select(model, selector)?;
    if !set.contains_identity() {
        eprintln!("warning: domain set has no identity (unshifted) domain");
    }
    Ok(set)
}

fn node_budget() -> Result<usize, CliError> {
    match std::env::var(NODE_BUDGET_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("{NODE_BUDGET_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(DEFAULT_NODE_BUDGET),
    }
}

/// Loads a policy file. A greedy policy's alpha path is relative to the
/// policy file. Its planning stages are rebuilt from the same domains and
/// accepted only if the final stage reproduces the file exactly; otherwise
/// the file's set is used at every step.
pub fn load_policy(model: &CausalPomdp, path: &Path) -> Result<PolicySpec, CliError> {
    match read_json::<PolicyDocument>(path)? {
        PolicyDocument::Reactive { initial, map } => Ok(ReactivePolicy::from_labels(model, &initial, &map)?.into()),
        PolicyDocument::Greedy { alphas } => {
            let alpha_path = path.parent().unwrap_or(Path::new(".")).join(alphas);
            let file: AlphaSetFile = read_json(&alpha_path)?;
            let domains = DomainSet::select(model, &file.domains.join(","))?;
            let target = AlphaSet::from_file(model, &file)?;
            let dynamics = Dynamics::new(model, &domains)?;
            let stages = [Pruning::Pointwise, Pruning::Lp]
                .into_iter()
                .map(|p| plan_with(&dynamics, target.stage(), p))
                .find(|stages| stages.last() == Some(&target))
                .unwrap_or_else(|| {
                    eprintln!(
                        "warning: {} does not match a replanned set; using it at every step",
                        alpha_path.display()
                    );
                    vec![target]
                });
            Ok(GreedyPolicy::new(model, domains, stages)?.into())
        }
    }
}

fn load_policy_or_default(model: &CausalPomdp, path: Option<&Path>) -> Result<PolicySpec, CliError> {
    match path {
        Some(p) => load_policy(model, p),
        None => {
            eprintln!("note: no policy given; always playing `{}`", model.actions()[0]);
            Ok(ReactivePolicy::constant(model, 0)?.into())
        }
    }
}

fn single_domain(model: &CausalPomdp, name: &str) -> Result<crate::interventions::DomainSpec, CliError> {
    DomainSet::catalog(model)
        .get(name)
        .cloned()
        .ok_or_else(|| ShiftError::UnknownDomain(name.to_string()).into())
}

fn cmd_validate(model: &Path) -> Result<(Run, bool), CliError> {
    let bytes = read(model)?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8_lossy(&bytes);
    let (findings, adjustments) = match ModelDocument::parse(&text) {
        Ok(doc) => {
            let report = validate_model(&doc);
            let adjustments = if report.is_empty() {
                CausalPomdp::from_document(&doc)?.1
            } else {
                Vec::new()
            };
            (serde_json::to_value(&report).expect("report serializes"), adjustments)
        }
        Err(ModelError::Parse { path, message }) => (
            json!([{"path": path, "rule": "parse", "detail": message}]),
            Vec::new(),
        ),
        Err(e) => return Err(e.into()),
    };
    let valid = findings.as_array().is_some_and(Vec::is_empty);
    let report = json!({ "valid": valid, "findings": findings, "renormalized": adjustments });
    emit(None, &to_json(&report))?;
    Ok((
        Run {
            command: "validate",
            args: json!({ "model": model }),
            model_hash: hash,
            seed: None,
            results: Some(json!({ "valid": valid })),
            out: None,
        },
        valid,
    ))
}

fn execute(command: &Command) -> Result<Run, CliError> {
    match command {
        Command::Validate { .. } => unreachable!("handled separately"),
        Command::Plan {
            model,
            domains,
            horizon,
            out,
            check_convexity: samples,
            seed,
            pruning,
        } => {
            let loaded = load(model)?;
            let set = select_domains(&loaded.model, domains)?;
            let dynamics = Dynamics::new(&loaded.model, &set)?;
            let stages = plan_with(&dynamics, *horizon, (*pruning).into());
            let last = stages.last().expect("plan returns horizon + 1 stages");
            emit(out.as_deref(), &to_json(&last.to_file(&loaded.model, &set.names())))?;
            let mut run = Run {
                command: "plan",
                args: json!({ "model": model, "domains": set.names(), "horizon": horizon, "out": out,
                    "check_convexity": samples, "pruning": pruning }),
                model_hash: loaded.hash,
                seed: samples.map(|_| *seed),
                results: Some(json!({ "alphas": last.len() })),
                out: out.clone(),
            };
            if let Some(k) = samples {
                let report = check_convexity(last, *k, *seed);
                run.results = Some(json!({ "alphas": last.len(), "convexity": report }));
                if !report.passed() {
                    finish(&run)?;
                    return Err(CliError::Failed(format!(
                        "{} convexity violation(s) in {k} samples",
                        report.violations.len()
                    )));
                }
            }
            Ok(run)
        }
        Command::Filter {
            model,
            domains,
            trace,
            prior,
            out,
        } => {
            let loaded = load(model)?;
            let set = select_domains(&loaded.model, domains)?;
            let dynamics = Dynamics::new(&loaded.model, &set)?;
            let steps: Vec<TraceStep> = read_json(trace)?;
            let initial = match prior {
                Some(p) => JointBelief::from_rows(&read_json::<Vec<Vec<f64>>>(p)?)?,
                None => JointBelief::uniform(loaded.model.state_count(), set.len())?,
            };
            let beliefs = filter_trace(&dynamics, &initial, &steps)?;
            let records: Vec<BeliefRecord> = beliefs.iter().enumerate().map(|(k, b)| BeliefRecord::new(k, b)).collect();
            let output = json!({ "domains": set.names(), "steps": records });
            emit(out.as_deref(), &to_json(&output))?;
            Ok(Run {
                command: "filter",
                args: json!({ "model": model, "domains": set.names(), "trace": trace, "prior": prior, "out": out }),
                model_hash: loaded.hash,
                seed: None,
                results: None,
                out: out.clone(),
            })
        }
        Command::Evaluate {
            model,
            policy,
            domain,
            horizon,
            mc,
            seed,
            prior,
            out,
        } => {
            let loaded = load(model)?;
            let sigma = single_domain(&loaded.model, domain)?;
            let spec = load_policy(&loaded.model, policy)?;
            let state_prior = match prior {
                Some(p) => read_json::<Vec<f64>>(p)?,
                None => uniform_prior(&loaded.model),
            };
            let exact = match evaluate_policy_known_shift(&loaded.model, &sigma, &spec, &state_prior, *horizon, node_budget()?) {
                Ok(v) => Some(v),
                Err(EvalError::BudgetExceeded { budget }) if mc.is_some() => {
                    eprintln!("note: exact evaluation exceeds {budget} nodes; reporting Monte Carlo only");
                    None
                }
                Err(EvalError::BudgetExceeded { budget }) => {
                    return Err(CliError::Failed(format!(
                        "exact evaluation exceeds the node budget of {budget}; rerun with --mc <episodes>"
                    )))
                }
                Err(e) => return Err(e.into()),
            };
            let estimate = match mc {
                Some(episodes) => Some(monte_carlo_policy_value(
                    &loaded.model,
                    &sigma,
                    &spec,
                    &state_prior,
                    *horizon,
                    *episodes,
                    *seed,
                )?),
                None => None,
            };
            let report = json!({ "domain": domain, "horizon": horizon, "exact": exact, "monte_carlo": estimate });
            emit(out.as_deref(), &to_json(&report))?;
            Ok(Run {
                command: "evaluate",
                args: json!({ "model": model, "policy": policy, "domain": domain, "horizon": horizon,
                    "mc": mc, "prior": prior, "out": out }),
                model_hash: loaded.hash,
                seed: mc.map(|_| *seed),
                results: Some(report),
                out: out.clone(),
            })
        }
        Command::Identify {
            model,
            domains,
            true_domain,
            policy,
            steps,
            episodes,
            seed,
            out,
        } => {
            let loaded = load(model)?;
            let set = select_domains(&loaded.model, domains)?;
            let spec = load_policy_or_default(&loaded.model, policy.as_deref())?;
            let report =
                identification_experiment(&loaded.model, &set, true_domain, &spec, *steps, *episodes, *seed, None)?;
            let csv = report
                .to_csv()
                .map_err(|e| CliError::Failed(format!("csv: {e}")))?;
            write_atomic(out, &to_json(&report))?;
            write_atomic(&out.with_extension("csv"), csv.as_bytes())?;
            if !report.flagged.is_empty() {
                eprintln!("warning: {} episode(s) hit an impossible observation", report.flagged.len());
            }
            Ok(Run {
                command: "identify",
                args: json!({ "model": model, "domains": set.names(), "true": true_domain, "policy": policy,
                    "steps": steps, "episodes": episodes, "out": out }),
                model_hash: loaded.hash,
                seed: Some(*seed),
                results: Some(json!({
                    "final_mean_true_mass": report.mean_true_mass.last(),
                    "flagged": report.flagged.len(),
                })),
                out: Some(out.clone()),
            })
        }
        Command::Oracle {
            model,
            domains,
            horizon,
            beliefs,
            out,
        } => {
            let loaded = load(model)?;
            let set = select_domains(&loaded.model, domains)?;
            let dynamics = Dynamics::new(&loaded.model, &set)?;
            let config = OracleConfig {
                max_nodes: node_budget()?,
                ..OracleConfig::default()
            };
            let mut values = Vec::new();
            for (k, rows) in read_json::<Vec<Vec<Vec<f64>>>>(beliefs)?.iter().enumerate() {
                let b = JointBelief::from_rows(rows).map_err(|e| CliError::Failed(format!("belief {k}: {e}")))?;
                let v = expectimax_value(&dynamics, &b, *horizon, &config)?;
                values.push(json!({ "index": k, "value": v.value, "nodes": v.nodes }));
            }
            let output = json!({ "domains": set.names(), "horizon": horizon, "values": values });
            emit(out.as_deref(), &to_json(&output))?;
            Ok(Run {
                command: "oracle",
                args: json!({ "model": model, "domains": set.names(), "horizon": horizon, "beliefs": beliefs, "out": out }),
                model_hash: loaded.hash,
                seed: None,
                results: None,
                out: out.clone(),
            })
        }
        Command::Sample {
            model,
            domain,
            policy,
            horizon,
            seed,
            out,
        } => {
            let loaded = load(model)?;
            let sigma = single_domain(&loaded.model, domain)?;
            let spec = load_policy_or_default(&loaded.model, policy.as_deref())?;
            let trajectory = sample_episode(
                &loaded.model,
                &sigma,
                &spec,
                &uniform_prior(&loaded.model),
                *horizon,
                *seed,
            )?;
            emit(out.as_deref(), &to_json(&trajectory))?;
            Ok(Run {
                command: "sample",
                args: json!({ "model": model, "domain": domain, "policy": policy, "horizon": horizon, "out": out }),
                model_hash: loaded.hash,
                seed: Some(*seed),
                results: None,
                out: out.clone(),
            })
        }
    }
}

thread_local! {
    static STARTED: std::cell::Cell<Option<Instant>> = const { std::cell::Cell::new(None) };
}

fn finish(run: &Run) -> Result<(), CliError> {
    let elapsed = STARTED.with(|s| s.get()).map(|t| t.elapsed().as_secs_f64()).unwrap_or(0.0);
    let manifest = RunManifest {
        command: run.command.to_string(),
        args: run.args.clone(),
        model_hash: run.model_hash.clone(),
        seed: run.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: elapsed,
        results: run.results.clone(),
    };
    match &run.out {
        Some(out) => write_atomic(&manifest_path(out), &to_json(&manifest)),
        None => {
            eprintln!("{}", serde_json::to_string(&manifest).expect("manifest serializes"));
            Ok(())
        }
    }
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    STARTED.with(|s| s.set(Some(Instant::now())));
    let outcome = match &cli.command {
        Command::Validate { model } => cmd_validate(model).and_then(|(run, valid)| {
            finish(&run)?;
            if valid {
                Ok(())
            } else {
                Err(CliError::Failed("model is invalid".into()))
            }
        }),
        command => execute(command).and_then(|run| finish(&run)),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs. Usage errors exit 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
