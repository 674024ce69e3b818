use clap::{Parser, Subcommand};
use ctmdp::conditions::{
    check_condition2, check_condition5, check_transformed_drift, condition5_to_condition2, CertificateFile, CheckReport,
    LyapunovCertificate, ResolvedCertificates,
};
use ctmdp::model::{load_model_file, CtmdpModel, LoadedModel, ModelError};
use ctmdp::policy::{DeterministicPolicy, StationaryPolicy};
use ctmdp::reduction::{build_dtmdp, DtmdpModel};
use ctmdp::simulator::{estimate_discounted_cost, path_integral_samples, default_horizon, McOptions};
use ctmdp::solver::{extract_greedy_policy, solve_constrained_lp, value_iteration, SolverError, ViOptions};
use ctmdp::transform::build_w_transform;
use ctmdp::transition::{feller_series, kc_residual, FellerOptions, QFunction};
use ctmdp::verify::{run_battery, VerifyOptions};
use serde::Deserialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ctmdp", version, about = "Discounted CTMDPs via drift certificates and reduction to a DTMDP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Model file (JSON).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Certificate file (JSON); overrides a certificate embedded in the model.
    #[arg(long, global = true)]
    cert: Option<PathBuf>,
    /// Output file; standard output if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Value-iteration tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    eps: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo trajectories.
    #[arg(long, global = true)]
    ntraj: Option<usize>,
    /// Simulation horizon.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Largest jump count in the Feller series.
    #[arg(long, global = true, default_value_t = 64)]
    nmax: usize,
    /// Truncation level for family models.
    #[arg(long, global = true)]
    truncation: Option<usize>,
    /// Discard the outflow of the top state of a family (diagnose only).
    #[arg(long, global = true)]
    leaky: bool,
    /// Policy file (the output of `solve` or `solve-constrained`).
    #[arg(long, global = true)]
    policy: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
enum Command {
    /// Check model invariants.
    Validate,
    /// Check the drift and non-explosion conditions.
    Certify,
    /// Emit the w-transformed model.
    Transform,
    /// Emit the reduced DTMDP.
    Reduce,
    /// Value iteration and greedy policy.
    Solve,
    /// Occupation-measure LP for the constrained problem.
    SolveConstrained,
    /// Monte-Carlo estimate of the discounted cost of a policy.
    Simulate {
        /// Cost index.
        #[arg(long, default_value_t = 0)]
        cost: usize,
        /// Write per-trajectory values as CSV.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Run the full verification battery.
    Verify,
    /// CSV of honesty defects and Kolmogorov-Chapman residuals.
    Diagnose {
        /// Comma-separated times.
        #[arg(long, default_value = "0.25,0.5,1,2", value_delimiter = ',')]
        times: Vec<f64>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = std::env::var("CTMDP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn threads() -> Option<usize> {
    std::env::var("CTMDP_THREADS").ok().and_then(|v| v.parse().ok())
}

fn run(cli: &Cli) -> Outcome {
    let loaded = load(cli)?;
    match &cli.command {
        Command::Validate => validate(cli, &loaded),
        Command::Certify => certify(cli, &loaded),
        Command::Transform => {
            let certs = certificates(cli, &loaded)?;
            let tm = build_w_transform(&loaded.model, &certs.drift).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
            emit(cli, &serde_json::to_value(tm.to_json()).expect("serializable"))
        }
        Command::Reduce => {
            let d = reduce(cli, &loaded)?.1;
            emit(cli, &serde_json::to_value(d.to_json()).expect("serializable"))
        }
        Command::Solve => solve(cli, &loaded),
        Command::SolveConstrained => solve_constrained(cli, &loaded),
        Command::Simulate { cost, trajectories } => simulate(cli, &loaded, *cost, trajectories.as_deref()),
        Command::Verify => verify(cli, &loaded),
        Command::Diagnose { times } => diagnose(cli, &loaded, times),
    }
}

fn load(cli: &Cli) -> Result<LoadedModel, Failure> {
    let path = cli
        .model
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_USAGE, "--model is required"))?;
    load_model_file(path, cli.truncation).map_err(|e| match e {
        ModelError::Io(_) => Failure::new(EXIT_USAGE, e.to_string()),
        other => Failure::new(EXIT_INVALID, other.to_string()),
    })
}

fn certificate_file(cli: &Cli, loaded: &LoadedModel) -> Result<CertificateFile, Failure> {
    match &cli.cert {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_INVALID, format!("certificate: {e}")))
        }
        None => Ok(loaded.certificate.clone().unwrap_or_default()),
    }
}

fn certificates(cli: &Cli, loaded: &LoadedModel) -> Result<ResolvedCertificates, Failure> {
    certificate_file(cli, loaded)?
        .resolve(&loaded.model)
        .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))
}

fn reduce(cli: &Cli, loaded: &LoadedModel) -> Result<(ResolvedCertificates, DtmdpModel), Failure> {
    let certs = certificates(cli, loaded)?;
    let tm = build_w_transform(&loaded.model, &certs.drift).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let d = build_dtmdp(&tm).map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))?;
    Ok((certs, d))
}

fn emit(cli: &Cli, value: &Value) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(cli.out.as_deref(), &text)
}

fn write_text(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_NUMERICAL, e.to_string())
}

fn validate(cli: &Cli, loaded: &LoadedModel) -> Outcome {
    let m = &loaded.model;
    let flagged: Vec<Value> = m
        .graph()
        .filter(|&(x, k)| m.is_forbidden(x, k))
        .map(|(x, k)| json!({"state": m.label(x), "action": m.action_index(x, k)}))
        .collect();
    emit(
        cli,
        &json!({
            "valid": true,
            "states": m.n_states(),
            "pairs": m.graph().count(),
            "costs": m.n_costs(),
            "alpha": m.alpha(),
            "flagged": flagged,
        }),
    )
}

fn report_json(r: &CheckReport) -> Value {
    serde_json::to_value(r).expect("serializable")
}

fn certify(cli: &Cli, loaded: &LoadedModel) -> Outcome {
    let m = &loaded.model;
    let file = certificate_file(cli, loaded)?;
    let certs = match file.resolve(m) {
        Ok(c) => c,
        Err(e) => {
            emit(cli, &json!({"passed": false, "condition1": {"passed": false, "message": e.to_string()}}))?;
            return Err(Failure::new(EXIT_INVALID, e.to_string()));
        }
    };
    let drift = &certs.drift;
    let mut out = BTreeMap::new();
    out.insert(
        "condition1",
        json!({"passed": true, "w": drift.w, "rho": drift.rho, "L": drift.l, "alpha": m.alpha()}),
    );
    let mut passed = true;
    let mut lyapunov = certs.lyapunov.clone();
    if let Some(c5) = &certs.condition5 {
        let r = check_condition5(m, drift, c5);
        passed &= r.passed;
        out.insert("condition5", report_json(&r));
        if r.passed && lyapunov.is_none() {
            match condition5_to_condition2(c5, drift) {
                Ok(l) => lyapunov = Some(l),
                Err(e) => {
                    passed = false;
                    out.insert("condition5_conversion", json!({"passed": false, "message": e.to_string()}));
                }
            }
        }
    }
    let lyap = lyapunov.unwrap_or_else(|| LyapunovCertificate::from_drift(drift));
    let r2 = check_condition2(m, drift, &lyap);
    passed &= r2.passed;
    out.insert("condition2", report_json(&r2));
    let rt = check_transformed_drift(m, drift, &lyap);
    passed &= rt.passed;
    out.insert("transformed_drift", report_json(&rt));
    let mut value = serde_json::to_value(&out).expect("serializable");
    value["passed"] = json!(passed);
    emit(cli, &value)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::new(EXIT_INVALID, "certificate checks failed"))
    }
}

fn by_label(m: &CtmdpModel, values: &[f64]) -> BTreeMap<String, f64> {
    (0..m.n_states()).map(|x| (m.label(x).to_string(), values[x])).collect()
}

fn solve(cli: &Cli, loaded: &LoadedModel) -> Outcome {
    let m = &loaded.model;
    let (_, d) = reduce(cli, loaded)?;
    let opts = ViOptions {
        epsilon: cli.eps,
        ..Default::default()
    };
    let (v, report) = value_iteration(&d, &opts).map_err(numerical)?;
    let f = extract_greedy_policy(&d, &v).map_err(numerical)?;
    let ctmdp = d.back_transform(&v);
    let x0 = m.initial_state();
    let policy: BTreeMap<String, usize> = (0..m.n_states())
        .map(|x| (m.label(x).to_string(), m.action_index(x, f.choice[x])))
        .collect();
    emit(
        cli,
        &json!({
            "initial": m.label(x0),
            "values": {
                "ctmdp": ctmdp[x0],
                "dtmdp": v[x0],
                "ctmdp_by_state": by_label(m, &ctmdp),
                "dtmdp_by_state": by_label(m, &v[..m.n_states()]),
            },
            "policy": policy,
            "report": report,
        }),
    )
}

fn solve_constrained(cli: &Cli, loaded: &LoadedModel) -> Outcome {
    let m = &loaded.model;
    let (_, d) = reduce(cli, loaded)?;
    let x0 = m.initial_state();
    let sol = match solve_constrained_lp(&d, d.constraint_bounds(), x0) {
        Ok(s) => s,
        Err(SolverError::Infeasible) => {
            emit(cli, &json!({"status": "infeasible"}))?;
            return Err(Failure::new(EXIT_INFEASIBLE, "constrained problem is infeasible"));
        }
        Err(SolverError::Argument(msg)) => return Err(Failure::new(EXIT_INVALID, msg)),
        Err(e) => return Err(numerical(e)),
    };
    let to_ctmdp = |v: f64| d.back_transform_scalar(x0, v);
    let as_map = |p: &StationaryPolicy| -> BTreeMap<String, BTreeMap<String, f64>> {
        (0..m.n_states())
            .map(|x| {
                let row = p.distribution[x]
                    .iter()
                    .enumerate()
                    .filter(|&(_, &pk)| pk > 0.0)
                    .map(|(k, &pk)| (m.action_index(x, k).to_string(), pk))
                    .collect();
                (m.label(x).to_string(), row)
            })
            .collect()
    };
    let occupation: Vec<Value> = (0..=m.n_states())
        .flat_map(|x| {
            sol.occupation[x]
                .iter()
                .enumerate()
                .map(move |(k, &mu)| (x, k, mu))
        })
        .map(|(x, k, mu)| json!([d.label(x), d.action_index(x, k), mu]))
        .collect();
    let constraints: Vec<Value> = sol
        .constraint_values
        .iter()
        .zip(m.constraint_bounds())
        .map(|(&v, &bound)| json!({"dtmdp": v, "ctmdp": to_ctmdp(v), "bound": bound}))
        .collect();
    emit(
        cli,
        &json!({
            "status": "optimal",
            "initial": m.label(x0),
            "objective": {"dtmdp": sol.objective, "ctmdp": to_ctmdp(sol.objective)},
            "constraints": constraints,
            "policy": as_map(&sol.ctmdp_policy),
            "dtmdp_policy": as_map(&sol.policy),
            "occupation_measure": occupation,
            "report": sol.report,
        }),
    )
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PolicyEntry {
    Action(usize),
    Mixed(BTreeMap<String, f64>),
}

#[derive(Deserialize)]
struct PolicyFile {
    policy: BTreeMap<String, PolicyEntry>,
}

fn read_policy(path: &Path, m: &CtmdpModel) -> Result<StationaryPolicy, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    let file: PolicyFile = serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_INVALID, format!("policy: {e}")))?;
    let mut distribution = Vec::with_capacity(m.n_states());
    for x in 0..m.n_states() {
        let entry = file
            .policy
            .get(m.label(x))
            .ok_or_else(|| Failure::new(EXIT_INVALID, format!("policy has no entry for state {}", m.label(x))))?;
        let mut w = vec![0.0; m.n_actions(x)];
        let mut put = |a: usize, p: f64| -> Outcome {
            let k = m
                .action_position(x, a)
                .ok_or_else(|| Failure::new(EXIT_INVALID, format!("action {a} not in A({})", m.label(x))))?;
            w[k] += p;
            Ok(())
        };
        match entry {
            PolicyEntry::Action(a) => put(*a, 1.0)?,
            PolicyEntry::Mixed(map) => {
                for (a, p) in map {
                    let a: usize = a
                        .parse()
                        .map_err(|_| Failure::new(EXIT_INVALID, format!("bad action key {a:?}")))?;
                    put(a, *p)?;
                }
            }
        }
        distribution.push(w);
    }
    let p = StationaryPolicy { distribution };
    p.check(m).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    Ok(p)
}

/// The policy file if given, else the greedy optimal policy.
fn policy_for(cli: &Cli, loaded: &LoadedModel) -> Result<StationaryPolicy, Failure> {
    let m = &loaded.model;
    match &cli.policy {
        Some(path) => read_policy(path, m),
        None => {
            let (_, d) = reduce(cli, loaded)?;
            let (v, _) = value_iteration(
                &d,
                &ViOptions {
                    epsilon: cli.eps,
                    ..Default::default()
                },
            )
            .map_err(numerical)?;
            let f: DeterministicPolicy = extract_greedy_policy(&d, &v).map_err(numerical)?;
            Ok(f.to_stationary(m))
        }
    }
}

fn simulate(cli: &Cli, loaded: &LoadedModel, cost: usize, trajectories: Option<&Path>) -> Outcome {
    let m = &loaded.model;
    if cost >= m.n_costs() {
        return Err(Failure::new(EXIT_USAGE, format!("--cost {cost} out of range")));
    }
    let certs = certificates(cli, loaded)?;
    let p = policy_for(cli, loaded)?;
    let x0 = m.initial_state();
    let opts = McOptions {
        n_traj: cli.ntraj.unwrap_or(10_000),
        horizon: cli.horizon,
        seed: cli.seed,
        threads: threads(),
        certificate: Some(certs.drift.clone()),
    };
    let est = estimate_discounted_cost(m, &p, x0, cost, &opts).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    if let Some(path) = trajectories {
        let rate = ctmdp::resolvent::policy_cost_rate(m, &p, cost);
        let horizon = cli.horizon.unwrap_or_else(|| default_horizon(m.alpha(), certs.drift.rho));
        let samples = path_integral_samples(m, &p, x0, &rate, horizon, &opts).map_err(numerical)?;
        let mut csv = String::from("trajectory,value\n");
        for (j, v) in samples.iter().enumerate() {
            let _ = writeln!(csv, "{j},{v}");
        }
        write_text(Some(path), &csv)?;
    }
    emit(cli, &serde_json::to_value(est).expect("serializable"))
}

fn verify(cli: &Cli, loaded: &LoadedModel) -> Outcome {
    let certs = certificates(cli, loaded)?;
    let lyapunov = match (&certs.lyapunov, &certs.condition5) {
        (Some(l), _) => Some(l.clone()),
        (None, Some(c5)) => condition5_to_condition2(c5, &certs.drift).ok(),
        _ => None,
    };
    let opts = VerifyOptions {
        epsilon: cli.eps,
        seed: cli.seed,
        n_traj: cli.ntraj.unwrap_or(4000),
        horizon: cli.horizon,
        n_max: cli.nmax,
        threads: threads(),
        ..Default::default()
    };
    let report = run_battery(&loaded.model, &certs.drift, lyapunov.as_ref(), &opts);
    emit(cli, &serde_json::to_value(&report).expect("serializable"))?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure::new(EXIT_NUMERICAL, format!("failed checks: {}", failed.join(", "))))
    }
}

fn diagnose(cli: &Cli, loaded: &LoadedModel, times: &[f64]) -> Outcome {
    let m = &loaded.model;
    let q = if cli.leaky {
        let family = loaded
            .family
            .as_ref()
            .ok_or_else(|| Failure::new(EXIT_USAGE, "--leaky needs a family model"))?;
        QFunction::leaky_family(family).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?
    } else {
        let p = match &cli.policy {
            Some(path) => read_policy(path, m)?,
            None => StationaryPolicy::uniform(m),
        };
        QFunction::from_policy(m, &p)
    };
    let opts = FellerOptions {
        n_max: cli.nmax,
        ..Default::default()
    };
    let mut csv = String::from("x,t,defect,kc_residual\n");
    for &t in times {
        if !(t >= 0.0) {
            return Err(Failure::new(EXIT_USAGE, format!("time {t} must be >= 0")));
        }
        let defect = feller_series(&q, 0.0, t, &opts).map_err(numerical)?.defect();
        let kc = kc_residual(&q, 0.0, t / 2.0, t, &opts).map_err(numerical)?;
        for (x, dx) in defect.iter().enumerate() {
            let _ = writeln!(csv, "{},{t},{dx:e},{kc:e}", m.label(x));
        }
    }
    write_text(cli.out.as_deref(), &csv)
}
