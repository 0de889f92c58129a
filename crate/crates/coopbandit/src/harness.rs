//! Experiment harness: configuration, the four experiment presets,
//! multi-run orchestration, and CSV / metadata emission.
//!
//! Outputs per experiment, under `<out>/<name>/`:
//!
//! - `runs_<instance>.csv`: strided cumulative-regret time series with
//!   columns `run,t,agent,algorithm,cum_regret`,
//! - `summary.csv`: per-(instance, algorithm) final-regret statistics,
//! - `metadata.json`: config echo, independence numbers, center assignments,
//!   code version,
//! - `plot_*.csv`: plot-ready projections of the summary.
//!
//! Re-running with the same master seed reproduces every file byte for byte,
//! regardless of the `--jobs` level: runs are seeded as master_seed +
//! run_index and results are collected in task order before a single
//! writer emits the files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_erdos_renyi, build_regular, build_star, CommGraph};
use crate::policy::{Algorithm, CftrlRateMode};
use crate::sim::{run, EnvironmentSpec, Instance, LossMatrix, RegretMode, RunConfig};

/// Graph family and its sweep parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GraphSpec {
    Regular {
        n: Vec<usize>,
        r: Vec<usize>,
        seed: u64,
    },
    Star {
        n: Vec<usize>,
    },
    ErdosRenyi {
        n: Vec<usize>,
        seed: u64,
    },
}

impl GraphSpec {
    fn kind(&self) -> &'static str {
        match self {
            GraphSpec::Regular { .. } => "regular",
            GraphSpec::Star { .. } => "star",
            GraphSpec::ErdosRenyi { .. } => "erdos_renyi",
        }
    }
}

/// The variable an experiment sweeps; used when emitting plot data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    Arms,
    Degree,
    Delay,
    Nodes,
}

/// A full experiment description. Deserializable from a JSON config file;
/// CLI flags may override the scalar fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    /// Arm counts to sweep.
    pub arms: Vec<usize>,
    pub graph: GraphSpec,
    /// Edge delays to sweep.
    pub delays: Vec<u64>,
    pub horizon: u64,
    pub algorithms: Vec<Algorithm>,
    pub runs: u32,
    pub master_seed: u64,
    pub sweep: SweepVar,
    #[serde(default)]
    pub regret_mode: RegretMode,
    #[serde(default)]
    pub cftrl_rate_mode: CftrlRateMode,
    #[serde(default)]
    pub stability_clamp: bool,
    /// Emit time-series rows every this many rounds (plus the final round).
    /// Defaults to max(1, horizon / 1000).
    #[serde(default)]
    pub record_stride: Option<u64>,
    /// Optional adversarial loss CSV; the default environment is the
    /// stochastic Bernoulli instance.
    #[serde(default)]
    pub loss_file: Option<PathBuf>,
    /// Default output directory (CLI --out and the env var override it).
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn stride(&self) -> u64 {
        self.record_stride
            .unwrap_or_else(|| (self.horizon / 1000).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("experiment name must be non-empty"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithm list must be non-empty"));
        }
        if self.arms.is_empty() || self.arms.iter().any(|k| *k < 2) {
            return Err(Error::config("arm counts must be >= 2"));
        }
        if self.delays.is_empty() || self.delays.iter().any(|d| *d < 1) {
            return Err(Error::config("delays must be >= 1"));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon must be >= 1"));
        }
        if self.runs < 1 {
            return Err(Error::config("need at least one run"));
        }
        match &self.graph {
            GraphSpec::Regular { n, r, .. } => {
                if n.is_empty() || r.is_empty() {
                    return Err(Error::config("regular graph sweep must be non-empty"));
                }
                for &ni in n {
                    for &ri in r {
                        if ri < 2 || ri >= ni {
                            return Err(Error::config(format!(
                                "regular graph needs 2 <= r < N, got r={ri}, N={ni}"
                            )));
                        }
                        if (ri * ni) % 2 != 0 {
                            return Err(Error::config(format!(
                                "regular graph needs r*N even, got r={ri}, N={ni}"
                            )));
                        }
                    }
                }
            }
            GraphSpec::Star { n } | GraphSpec::ErdosRenyi { n, .. } => {
                if n.is_empty() || n.iter().any(|ni| *ni < 2) {
                    return Err(Error::config("graph sweep needs N >= 2"));
                }
            }
        }
        if self.loss_file.is_some() && self.arms.len() != 1 {
            return Err(Error::config(
                "an adversarial loss file fixes K, so the arm sweep must be a single value",
            ));
        }
        if self.regret_mode == RegretMode::Pseudo && self.loss_file.is_some() {
            return Err(Error::config(
                "pseudo-regret requires the stochastic environment",
            ));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{path:?}: {e}")))?;
        Ok(cfg)
    }
}

/// The four built-in experiments.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = |name: &str| ExperimentConfig {
        name: name.to_string(),
        arms: vec![],
        graph: GraphSpec::Star { n: vec![2] },
        delays: vec![1],
        horizon: 1,
        algorithms: vec![],
        runs: 10,
        master_seed: 0,
        sweep: SweepVar::Arms,
        regret_mode: RegretMode::Empirical,
        cftrl_rate_mode: CftrlRateMode::Neighborhood,
        stability_clamp: false,
        record_stride: None,
        loss_file: None,
        out_dir: None,
    };
    let cfg = match name {
        // Arm-count sweep on the 2-regular 3-agent graph with unit delay.
        "exp1" => ExperimentConfig {
            arms: vec![20, 30, 40],
            graph: GraphSpec::Regular {
                n: vec![3],
                r: vec![2],
                seed: 1,
            },
            horizon: 50_000,
            algorithms: Algorithm::ALL.to_vec(),
            master_seed: 1_000,
            sweep: SweepVar::Arms,
            ..base("exp1")
        },
        // Degree sweep for CFTRL on 6-agent regular graphs.
        "exp2" => ExperimentConfig {
            arms: vec![10],
            graph: GraphSpec::Regular {
                n: vec![6],
                r: vec![2, 3, 4, 5],
                seed: 2,
            },
            horizon: 20_000,
            algorithms: vec![Algorithm::Cftrl],
            master_seed: 2_000,
            sweep: SweepVar::Degree,
            ..base("exp2")
        },
        // Delay sweep for CFTRL vs DFTRL on the 20-agent star. The CFTRL
        // center rate is clamped to the stability-admissible threshold: at
        // a fixed horizon the unclamped theorem rate stops being admissible
        // as d grows, and delay sensitivity is the point of this experiment.
        "exp3" => ExperimentConfig {
            arms: vec![3],
            graph: GraphSpec::Star { n: vec![20] },
            delays: vec![1, 2, 4, 8, 16],
            horizon: 20_000,
            algorithms: vec![Algorithm::Cftrl, Algorithm::Dftrl],
            master_seed: 3_000,
            sweep: SweepVar::Delay,
            stability_clamp: true,
            ..base("exp3")
        },
        // Node sweep over sparse random graphs, CFTRL vs center-based Exp3.
        "exp4" => ExperimentConfig {
            arms: vec![10, 50],
            graph: GraphSpec::ErdosRenyi {
                n: vec![10, 20, 40, 80],
                seed: 4,
            },
            horizon: 1_000,
            algorithms: vec![Algorithm::Cftrl, Algorithm::CenterExp3],
            master_seed: 4_000,
            sweep: SweepVar::Nodes,
            ..base("exp4")
        },
        other => return Err(Error::config(format!("unknown preset '{other}'"))),
    };
    Ok(cfg)
}

/// Final-regret statistics for one (instance, algorithm) cell.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub k: usize,
    pub n: usize,
    pub graph: String,
    pub degree: Option<usize>,
    pub edge_prob: Option<f64>,
    pub d: u64,
    pub horizon: u64,
    pub sweep_value: f64,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
    pub runs: u32,
}

pub const SUMMARY_HEADER: &str =
    "algorithm,k,n,graph,degree,edge_prob,d,horizon,sweep_value,mean_final_regret,std_final_regret,runs";

impl SummaryRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.algorithm,
            self.k,
            self.n,
            self.graph,
            self.degree.map(|r| r.to_string()).unwrap_or_default(),
            self.edge_prob.map(|p| p.to_string()).unwrap_or_default(),
            self.d,
            self.horizon,
            self.sweep_value,
            self.mean_final_regret,
            self.std_final_regret,
            self.runs
        )
    }
}

/// Plot-data projections of the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMode {
    /// Mean final regret against the sweep variable.
    Raw,
    /// R_T / sqrt(d) against d, for delay sweeps.
    DNormalized,
    /// (ln sweep, ln regret) pairs for slope fitting.
    LogLog,
}

impl std::str::FromStr for PlotMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(PlotMode::Raw),
            "d_normalized" => Ok(PlotMode::DNormalized),
            "loglog" => Ok(PlotMode::LogLog),
            other => Err(Error::config(format!("unknown plot mode '{other}'"))),
        }
    }
}

/// Renders the summary rows under the given plot mode; an empty summary
/// yields just the header.
pub fn emit_plot_data(rows: &[SummaryRow], mode: PlotMode) -> String {
    let mut out = String::new();
    match mode {
        PlotMode::Raw => {
            out.push_str("algorithm,k,sweep,mean_final_regret,std_final_regret\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.algorithm, r.k, r.sweep_value, r.mean_final_regret, r.std_final_regret
                ));
            }
        }
        PlotMode::DNormalized => {
            out.push_str("algorithm,k,d,normalized_regret\n");
            for r in rows {
                let norm = r.mean_final_regret / (r.d as f64).sqrt();
                out.push_str(&format!("{},{},{},{}\n", r.algorithm, r.k, r.d, norm));
            }
        }
        PlotMode::LogLog => {
            out.push_str("algorithm,k,ln_sweep,ln_regret\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.algorithm,
                    r.k,
                    r.sweep_value.ln(),
                    r.mean_final_regret.ln()
                ));
            }
        }
    }
    out
}

struct PreparedInstance {
    tag: String,
    k: usize,
    n: usize,
    degree: Option<usize>,
    edge_prob: Option<f64>,
    d: u64,
    instance: Arc<Instance>,
    sweep_value: f64,
}

fn prepare_instances(cfg: &ExperimentConfig) -> Result<Vec<PreparedInstance>> {
    // Base graphs per (n, degree) sweep point, before delay attachment.
    let mut bases: Vec<(usize, Option<usize>, Option<f64>, CommGraph)> = Vec::new();
    match &cfg.graph {
        GraphSpec::Regular { n, r, seed } => {
            for &ni in n {
                for &ri in r {
                    bases.push((ni, Some(ri), None, build_regular(ni, ri, *seed)?));
                }
            }
        }
        GraphSpec::Star { n } => {
            for &ni in n {
                bases.push((ni, None, None, build_star(ni)?));
            }
        }
        GraphSpec::ErdosRenyi { n, seed } => {
            for &ni in n {
                let er = build_erdos_renyi(ni, *seed)?;
                bases.push((ni, None, Some(er.edge_prob), er.graph));
            }
        }
    }

    let mut out = Vec::new();
    for (n, degree, edge_prob, graph) in bases {
        for &k in &cfg.arms {
            for &d in &cfg.delays {
                let tagged_degree = degree.map(|r| format!("_r{r}")).unwrap_or_default();
                let tag = format!("k{k}_n{n}{tagged_degree}_d{d}");
                let instance = Instance::new(graph.clone().with_edge_delay(d)?, k)?;
                let sweep_value = match cfg.sweep {
                    SweepVar::Arms => k as f64,
                    SweepVar::Degree => degree.unwrap_or(0) as f64,
                    SweepVar::Delay => d as f64,
                    SweepVar::Nodes => n as f64,
                };
                out.push(PreparedInstance {
                    tag,
                    k,
                    n,
                    degree,
                    edge_prob,
                    d,
                    instance: Arc::new(instance),
                    sweep_value,
                });
            }
        }
    }
    Ok(out)
}

/// Strided regret rows plus the final average regret for one run.
struct TaskOutput {
    rows: Vec<(u64, usize, f64)>,
    final_avg: f64,
}

fn strided_rounds(horizon: u64, stride: u64) -> Vec<u64> {
    let mut ts: Vec<u64> = (1..=horizon).filter(|t| t % stride == 0).collect();
    if ts.last() != Some(&horizon) {
        ts.push(horizon);
    }
    ts
}

fn run_task(
    prepared: &PreparedInstance,
    env: &EnvironmentSpec,
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    run_index: u32,
) -> Result<TaskOutput> {
    let run_cfg = RunConfig {
        algorithm,
        arms: prepared.k,
        horizon: cfg.horizon,
        seed: cfg.master_seed.wrapping_add(run_index as u64),
        regret_mode: cfg.regret_mode,
        cftrl_rate_mode: cfg.cftrl_rate_mode,
        stability_clamp: cfg.stability_clamp,
    };
    let result = run(&prepared.instance, env, &run_cfg)?;
    let mut rows = Vec::new();
    for &t in &strided_rounds(cfg.horizon, cfg.stride()) {
        for (agent, series) in result.regret_per_agent.iter().enumerate() {
            rows.push((t, agent, series[(t - 1) as usize]));
        }
    }
    Ok(TaskOutput {
        rows,
        final_avg: *result.regret_avg.last().expect("horizon >= 1"),
    })
}

#[derive(Serialize)]
struct InstanceMeta {
    tag: String,
    k: usize,
    n: usize,
    graph: String,
    degree: Option<usize>,
    edge_prob: Option<f64>,
    d: u64,
    edge_count: usize,
    alpha: usize,
    alpha_exact: bool,
    centers: Vec<usize>,
    center_of: Vec<usize>,
    center_dist: Vec<u64>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    experiment: &'a str,
    code_version: &'a str,
    stride: u64,
    config: &'a ExperimentConfig,
    instances: Vec<InstanceMeta>,
}

/// Where the harness wrote its outputs.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Runs the whole experiment and writes its output files. `jobs = 0` uses
/// the default thread count; outputs are byte-identical for any value.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_root: &Path,
    jobs: usize,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let prepared = prepare_instances(cfg)?;
    let env = match &cfg.loss_file {
        None => EnvironmentSpec::StochasticBernoulli,
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            EnvironmentSpec::Adversarial(Arc::new(LossMatrix::from_csv_str(&text)?))
        }
    };

    // Task grid in deterministic order: instance, then algorithm, then run.
    let tasks: Vec<(usize, usize, u32)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            cfg.algorithms
                .iter()
                .enumerate()
                .flat_map(move |(a, _)| (0..cfg.runs).map(move |r| (i, a, r)))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outputs: Vec<TaskOutput> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, a, r)| run_task(&prepared[i], &env, cfg, cfg.algorithms[a], r))
            .collect::<Result<Vec<_>>>()
    })?;

    // Single-writer emission after all runs complete.
    let dir = out_root.join(&cfg.name);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();

    let task_index = |i: usize, a: usize, r: u32| -> usize {
        (i * cfg.algorithms.len() + a) * cfg.runs as usize + r as usize
    };

    for (i, inst) in prepared.iter().enumerate() {
        let mut csv = String::from("run,t,agent,algorithm,cum_regret\n");
        for (a, algorithm) in cfg.algorithms.iter().enumerate() {
            for r in 0..cfg.runs {
                let out = &outputs[task_index(i, a, r)];
                for &(t, agent, regret) in &out.rows {
                    csv.push_str(&format!("{r},{t},{agent},{algorithm},{regret}\n"));
                }
            }
        }
        let path = dir.join(format!("runs_{}.csv", inst.tag));
        std::fs::write(&path, csv)?;
        files.push(path);
    }

    let mut summary = Vec::new();
    for (i, inst) in prepared.iter().enumerate() {
        for (a, algorithm) in cfg.algorithms.iter().enumerate() {
            let finals: Vec<f64> = (0..cfg.runs)
                .map(|r| outputs[task_index(i, a, r)].final_avg)
                .collect();
            let mean = finals.iter().sum::<f64>() / finals.len() as f64;
            let std = if finals.len() > 1 {
                (finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                    / (finals.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            summary.push(SummaryRow {
                algorithm: algorithm.name().to_string(),
                k: inst.k,
                n: inst.n,
                graph: cfg.graph.kind().to_string(),
                degree: inst.degree,
                edge_prob: inst.edge_prob,
                d: inst.d,
                horizon: cfg.horizon,
                sweep_value: inst.sweep_value,
                mean_final_regret: mean,
                std_final_regret: std,
                runs: cfg.runs,
            });
        }
    }
    let mut summary_csv = String::from(SUMMARY_HEADER);
    summary_csv.push('\n');
    for row in &summary {
        summary_csv.push_str(&row.to_csv_row());
        summary_csv.push('\n');
    }
    let summary_path = dir.join("summary.csv");
    std::fs::write(&summary_path, summary_csv)?;
    files.push(summary_path);

    let metadata = Metadata {
        experiment: &cfg.name,
        code_version: env!("CARGO_PKG_VERSION"),
        stride: cfg.stride(),
        config: cfg,
        instances: prepared
            .iter()
            .map(|p| {
                let n = p.instance.graph.n_agents();
                InstanceMeta {
                    tag: p.tag.clone(),
                    k: p.k,
                    n: p.n,
                    graph: cfg.graph.kind().to_string(),
                    degree: p.degree,
                    edge_prob: p.edge_prob,
                    d: p.d,
                    edge_count: p.instance.graph.edge_count(),
                    alpha: p.instance.alpha.value,
                    alpha_exact: p.instance.alpha.exact,
                    centers: p.instance.assignment.centers().collect(),
                    center_of: (0..n).map(|v| p.instance.assignment.center_of(v)).collect(),
                    center_dist: (0..n).map(|v| p.instance.assignment.dist(v)).collect(),
                }
            })
            .collect(),
    };
    let meta_path = dir.join("metadata.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&metadata)?)?;
    files.push(meta_path);

    let mut plot_modes = vec![
        (PlotMode::Raw, "plot_raw.csv"),
        (PlotMode::LogLog, "plot_loglog.csv"),
    ];
    if cfg.sweep == SweepVar::Delay {
        plot_modes.push((PlotMode::DNormalized, "plot_d_normalized.csv"));
    }
    for (mode, file_name) in plot_modes {
        let path = dir.join(file_name);
        std::fs::write(&path, emit_plot_data(&summary, mode))?;
        files.push(path);
    }

    Ok(ExperimentOutput {
        dir,
        summary,
        files,
    })
}
