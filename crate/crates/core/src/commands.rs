//! Subcommand bodies. Each writes `<name>.jsonl` (one JSON record per line)
//! and `<name>.csv` into the output directory. Nothing time- or
//! host-dependent goes into either file, so reruns are byte-identical.

use crate::fedsim::{
    heterogeneity_sweep, ubfp_policy, Policy, RoundRecord, RunSummary, SimError, Simulator, VALIDATION_TOL,
};
use crate::jcpba::{bcd_solve, brute_force_oracle, validate_allocation, ClientStatic, SolveError};
use crate::scenario::{PolicyName, ScenarioConfig, ScenarioError};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_INFEASIBLE: i32 = 5;
pub const EXIT_ORACLE_GAP: i32 = 6;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("solver failed")]
    Solve(#[from] SolveError),
    #[error("simulation failed")]
    Sim(#[from] SimError),
    #[error("cannot write {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("solver is {gap_pct:.4}% above the oracle (tolerance {tol_pct}%)")]
    OracleGap { gap_pct: f64, tol_pct: f64 },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        let infeasible = |e: &SolveError| if e.is_infeasible() { EXIT_INFEASIBLE } else { EXIT_OTHER };
        match self {
            CommandError::Scenario(ScenarioError::Parse(_) | ScenarioError::UnknownKey { .. }) => EXIT_PARSE,
            CommandError::Scenario(ScenarioError::Validation { .. }) => EXIT_VALIDATION,
            CommandError::Scenario(ScenarioError::Io { .. }) => EXIT_OTHER,
            CommandError::Solve(e) => infeasible(e),
            CommandError::Sim(e) => e.solve_error().map_or(EXIT_OTHER, infeasible),
            CommandError::OracleGap { .. } => EXIT_ORACLE_GAP,
            CommandError::Io { .. } | CommandError::Csv { .. } => EXIT_OTHER,
        }
    }
}

/// Command-line values that take precedence over the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub policy: Option<PolicyName>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(r) = self.rounds {
            cfg.simulation.rounds = r;
        }
        if let Some(p) = self.policy {
            cfg.policy.name = p;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
    }
}

/// What a command wrote.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub records_path: PathBuf,
    pub table_path: PathBuf,
    pub n_records: usize,
    /// One human-readable line for the terminal.
    pub headline: String,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

struct Emitter {
    dir: PathBuf,
    hash: String,
    seed: u64,
    lines: Vec<String>,
}

impl Emitter {
    fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            dir: cfg.output.dir.clone(),
            hash: cfg.config_hash(),
            seed: cfg.simulation.seed,
            lines: Vec::new(),
        }
    }

    fn push<T: Serialize>(&mut self, kind: &str, body: T) {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            kind,
            config_hash: &self.hash,
            seed: self.seed,
            body,
        };
        self.lines.push(serde_json::to_string(&env).expect("records serialize"));
    }

    fn finish<R: Serialize>(self, name: &str, rows: &[R], headline: String) -> Result<CommandOutput, CommandError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CommandError::Io { path, source }
        };
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        let records_path = self.dir.join(format!("{name}.jsonl"));
        let mut text = self.lines.join("\n");
        text.push('\n');
        fs::write(&records_path, text).map_err(io(&records_path))?;

        let table_path = self.dir.join(format!("{name}.csv"));
        let csv_err = |source| CommandError::Csv {
            path: table_path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&table_path).map_err(csv_err)?;
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(io(&table_path))?;
        Ok(CommandOutput {
            records_path,
            table_path,
            n_records: self.lines.len(),
            headline,
        })
    }
}

#[derive(Serialize)]
struct ClientRow {
    client: usize,
    flops_per_s: f64,
    memory_budget_bytes: f64,
    spectral_eff_down: f64,
    spectral_eff_up: f64,
    beta: f64,
    bandwidth_hz: f64,
    latency_s: f64,
}

fn client_rows(clients: &[ClientStatic], beta: &[f64], bw: &[f64], lat: &[f64]) -> Vec<ClientRow> {
    clients
        .iter()
        .enumerate()
        .map(|(k, c)| ClientRow {
            client: k,
            flops_per_s: c.compute.flops_per_s,
            memory_budget_bytes: c.memory_budget_bytes,
            spectral_eff_down: c.spectral_eff_down,
            spectral_eff_up: c.spectral_eff_up,
            beta: beta[k],
            bandwidth_hz: bw[k],
            latency_s: lat[k],
        })
        .collect()
}

#[derive(Serialize)]
struct SolveBody<'a> {
    policy: &'a str,
    round_index: usize,
    /// Solver trace; absent for the fixed baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective_trace: Option<&'a [f64]>,
    allocation: &'a crate::jcpba::Allocation,
    violations: usize,
}

/// One allocation for the round-0 channel draw.
pub fn cmd_solve(cfg: &ScenarioConfig) -> Result<CommandOutput, CommandError> {
    let exp = cfg.experiment()?;
    let clients = exp.round_clients(0)?;
    let policy = cfg.policy();
    let (report, allocation) = match policy {
        Policy::Jcpba => {
            let r = bcd_solve(&clients, &exp.constraints, &exp.solver)?;
            let a = r.allocation.clone();
            (Some(r), a)
        }
        Policy::Ubfp { beta_fixed } => (None, ubfp_policy(&clients, &exp.constraints, beta_fixed)?),
    };
    let violations = validate_allocation(&allocation, &clients, &exp.constraints, VALIDATION_TOL);
    if !violations.is_empty() {
        return Err(SimError::ConstraintViolation { round: 0, violations }.into());
    }
    let mut em = Emitter::new(cfg);
    em.push(
        "solve",
        SolveBody {
            policy: policy.name(),
            round_index: 0,
            iterations: report.as_ref().map(|r| r.iterations),
            converged: report.as_ref().map(|r| r.converged),
            objective_trace: report.as_ref().map(|r| r.objective_trace.as_slice()),
            allocation: &allocation,
            violations: 0,
        },
    );
    let rows = client_rows(
        &clients,
        &allocation.beta,
        &allocation.bandwidth_hz,
        &allocation.per_client_latency_s,
    );
    let headline = format!(
        "{}: round latency {:.4} s over {} clients",
        policy.name(),
        allocation.objective_s,
        clients.len()
    );
    em.finish("solve", &rows, headline)
}

#[derive(Serialize)]
struct RoundBody<'a> {
    policy: &'a str,
    #[serde(flatten)]
    record: &'a RoundRecord,
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    round_latency_s: f64,
    cumulative_time_s: f64,
    mean_beta: f64,
    min_beta: f64,
    max_beta: f64,
    total_flops: f64,
    total_bytes: f64,
    solver_iterations: Option<usize>,
    adapter_norm: f64,
    proxy_loss: f64,
}

/// Runs the configured number of rounds under the configured policy.
pub fn cmd_simulate(cfg: &ScenarioConfig) -> Result<CommandOutput, CommandError> {
    let exp = cfg.experiment()?;
    let policy = cfg.policy();
    let mut sim = Simulator::new(&exp, policy.clone())?;
    let mut em = Emitter::new(cfg);
    let mut records = Vec::with_capacity(cfg.simulation.rounds);
    let mut rows = Vec::with_capacity(cfg.simulation.rounds);
    for _ in 0..cfg.simulation.rounds {
        let r = sim.run_round()?;
        em.push(
            "round",
            RoundBody {
                policy: policy.name(),
                record: &r,
            },
        );
        let beta = &r.allocation.beta;
        rows.push(RoundRow {
            round: r.round_index,
            round_latency_s: r.round_latency_s,
            cumulative_time_s: r.cumulative_time_s,
            mean_beta: beta.iter().sum::<f64>() / beta.len() as f64,
            min_beta: beta.iter().copied().fold(f64::INFINITY, f64::min),
            max_beta: beta.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            total_flops: r.per_client_flops.iter().sum(),
            total_bytes: r.per_client_bytes.iter().sum(),
            solver_iterations: r.solver_iterations,
            adapter_norm: r.adapter_norm,
            proxy_loss: r.proxy_loss,
        });
        records.push(r);
    }
    let summary = RunSummary::from_records(&policy, sim.population(), exp.initial_loss, records);
    em.push("summary", &summary);
    let headline = format!(
        "{}: {} rounds, {:.3} s simulated, mean round {:.4} s",
        policy.name(),
        summary.rounds,
        summary.total_time_s,
        summary.mean_round_latency_s
    );
    em.finish("simulate", &rows, headline)
}

#[derive(Serialize)]
struct SweepRow {
    cell_index: usize,
    speed_lo: f64,
    speed_hi: f64,
    policy: String,
    heterogeneity_cv: f64,
    mean_round_latency_s: f64,
    total_time_s: f64,
}

/// Every speed range crossed with every sweep policy, paired on one seed.
pub fn cmd_sweep(cfg: &ScenarioConfig) -> Result<CommandOutput, CommandError> {
    let exp = cfg.experiment()?;
    let result = heterogeneity_sweep(
        &exp,
        &cfg.sweep_ranges(),
        &cfg.sweep_policies(),
        cfg.simulation.rounds,
        cfg.simulation.seed,
    )?;
    let mut em = Emitter::new(cfg);
    for c in &result.cells {
        em.push("cell", c);
    }
    for g in &result.growth {
        em.push("growth", g);
    }
    let rows: Vec<SweepRow> = result
        .cells
        .iter()
        .map(|c| SweepRow {
            cell_index: c.cell_index,
            speed_lo: c.speed_range.0,
            speed_hi: c.speed_range.1,
            policy: c.policy.clone(),
            heterogeneity_cv: c.heterogeneity_cv,
            mean_round_latency_s: c.mean_round_latency_s,
            total_time_s: c.total_time_s,
        })
        .collect();
    let headline = result
        .growth
        .iter()
        .map(|g| format!("{} {:+.2}%", g.policy, g.growth_pct))
        .collect::<Vec<_>>()
        .join(", ");
    em.finish("sweep", &rows, format!("{} cells; latency growth {headline}", rows.len()))
}

#[derive(Serialize)]
struct OracleBody<'a> {
    grid_beta: usize,
    bcd_objective_s: f64,
    oracle_objective_s: f64,
    /// `max_k A_k(beta_max)`: nobody can finish faster than its own compute.
    lower_bound_s: f64,
    relative_gap: f64,
    tolerance: f64,
    within_tolerance: bool,
    bcd_iterations: usize,
    bcd_beta: &'a [f64],
    oracle_beta: &'a [f64],
}

#[derive(Serialize)]
struct OracleRow {
    client: usize,
    solver: &'static str,
    beta: f64,
    bandwidth_hz: f64,
    latency_s: f64,
}

/// Compares the solver with exhaustive search on the round-0 instance.
/// Outputs are written before a gap failure is reported.
pub fn cmd_oracle_check(cfg: &ScenarioConfig) -> Result<CommandOutput, CommandError> {
    let exp = cfg.experiment()?;
    let clients = exp.round_clients(0)?;
    let cs = &exp.constraints;
    let bcd = bcd_solve(&clients, cs, &exp.solver)?;
    let oracle = brute_force_oracle(&clients, cs, cfg.oracle.grid_beta)?;
    let lower_bound_s = clients
        .iter()
        .map(|c| c.compute_latency(cs.beta_max))
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = bcd.allocation.objective_s / oracle.objective_s - 1.0;
    let ok = gap <= cfg.oracle.tolerance && bcd.allocation.objective_s >= lower_bound_s;

    let mut em = Emitter::new(cfg);
    em.push(
        "oracle_check",
        OracleBody {
            grid_beta: cfg.oracle.grid_beta,
            bcd_objective_s: bcd.allocation.objective_s,
            oracle_objective_s: oracle.objective_s,
            lower_bound_s,
            relative_gap: gap,
            tolerance: cfg.oracle.tolerance,
            within_tolerance: ok,
            bcd_iterations: bcd.iterations,
            bcd_beta: &bcd.allocation.beta,
            oracle_beta: &oracle.beta,
        },
    );
    let mut rows = Vec::with_capacity(2 * clients.len());
    for (solver, a) in [("bcd", &bcd.allocation), ("oracle", &oracle)] {
        for k in 0..clients.len() {
            rows.push(OracleRow {
                client: k,
                solver,
                beta: a.beta[k],
                bandwidth_hz: a.bandwidth_hz[k],
                latency_s: a.per_client_latency_s[k],
            });
        }
    }
    let headline = format!(
        "bcd {:.6} s, oracle {:.6} s, gap {:+.4}%",
        bcd.allocation.objective_s,
        oracle.objective_s,
        100.0 * gap
    );
    let out = em.finish("oracle_check", &rows, headline)?;
    if ok {
        Ok(out)
    } else {
        Err(CommandError::OracleGap {
            gap_pct: 100.0 * gap,
            tol_pct: 100.0 * cfg.oracle.tolerance,
        })
    }
}
