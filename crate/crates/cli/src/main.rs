//! `pcdpem` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pcdpem::em::{draw_initial, run_pcdpem};
use pcdpem::experiment::{
    ablation_no_stability, monte_carlo, paper_table, run_data, sweep, timing_csv, timing_report, ExperimentConfig, McSummary, RunRecord, SweepAxis, SweepResult, NOISE_CONDITIONS,
    PARTICLE_COUNTS,
};
use pcdpem::rng::{derive_seed, Domain};
use pcdpem::sim::TrajectoryData;

#[derive(Parser)]
#[command(name = "pcdpem", version, about = "Distributed particle-consensus EM identification of networked agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (default `runs/<command>-seed<seed>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// V = 100, M = 1000, R = 100.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    agents: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    particles: Option<usize>,
    #[arg(long, global = true)]
    repetitions: Option<usize>,
    /// Coupling table index (0-4).
    #[arg(long, global = true)]
    coupling: Option<usize>,
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    /// Disable the contraction constraint.
    #[arg(long, global = true)]
    unconstrained: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the communication graph.
    Topology,
    /// Simulate one data realization.
    Simulate {
        /// Also write the latent states.
        #[arg(long)]
        states: bool,
    },
    /// Identify parameters from one data set.
    Identify {
        /// Directory holding `data.csv` and `data.json` from `simulate`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Monte Carlo study.
    Montecarlo {
        /// Also run the paired no-constraint ablation.
        #[arg(long)]
        ablation: bool,
    },
    /// One Monte Carlo study per axis value.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values: particle counts, noise indices (0-3) or coupling indices (0-4).
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Comparison tables from an existing run directory.
    Report {
        /// Run directory produced by `montecarlo` or `sweep`.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Particles,
    Noise,
    Coupling,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Topology => "topology",
            Command::Simulate { .. } => "simulate",
            Command::Identify { .. } => "identify",
            Command::Montecarlo { .. } => "montecarlo",
            Command::Sweep { .. } => "sweep",
            Command::Report { .. } => "report",
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if common.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = &common.model {
        cfg.model = v.clone();
    }
    if let Some(v) = common.agents {
        cfg.agents = v;
    }
    if let Some(v) = common.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = common.particles {
        cfg.particles = v;
    }
    if let Some(v) = common.repetitions {
        cfg.repetitions = v;
    }
    if common.coupling.is_some() {
        cfg.coupling = common.coupling;
    }
    if let Some(v) = common.max_iterations {
        cfg.em.max_iterations = v;
    }
    if common.unconstrained {
        cfg.em.constrained = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct RunDir {
    path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    fn create(path: PathBuf) -> Result<Self> {
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path, files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.path.join(name), contents).with_context(|| format!("writing {name}"))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &serde_json::to_string_pretty(value)?)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    paper_scale: bool,
    parallel: bool,
    config: &'a ExperimentConfig,
    files: &'a [String],
    elapsed_seconds: f64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Command::Report { dir } = &cli.command {
        return report(dir);
    }
    let cfg = load_config(&cli.common)?;
    let name = cli.command.name();
    let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{name}-seed{}", cfg.seed)));
    let mut dir = RunDir::create(out)?;
    let start = Instant::now();
    match &cli.command {
        Command::Topology => topology(&cfg, &mut dir)?,
        Command::Simulate { states } => simulate(&cfg, &mut dir, *states)?,
        Command::Identify { data } => identify(&cfg, &mut dir, data.as_deref())?,
        Command::Montecarlo { ablation } => montecarlo(&cfg, &mut dir, *ablation)?,
        Command::Sweep { axis, values } => run_sweep(&cfg, &mut dir, *axis, values)?,
        Command::Report { .. } => unreachable!(),
    }
    let files = dir.files.clone();
    let manifest = Manifest {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        paper_scale: cli.common.paper_scale,
        parallel: pcdpem::parallel::is_parallel(),
        config: &cfg,
        files: &files,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    dir.json("manifest.json", &manifest)?;
    fs::write(dir.path.join("config.toml"), toml::to_string(&cfg)?)?;
    println!("wrote {}", dir.path.display());
    Ok(())
}

fn topology(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let net = cfg.network()?;
    dir.write("edges.csv", &net.to_edge_list())?;
    dir.json("degrees.json", &net.degree_stats())?;
    let stats = net.degree_stats();
    println!("{} agents, {} edges, J_max {}, {:?}", net.num_agents(), net.num_edges(), net.max_degree(), stats);
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, dir: &mut RunDir, states: bool) -> Result<()> {
    let model = cfg.model_class()?;
    let net = cfg.network()?;
    let (data, _) = run_data(cfg, &model, &net, 0, states)?;
    data.save(&dir.path, "data", states)?;
    dir.files.extend(["data.csv".to_string(), "data.json".to_string()]);
    dir.write("edges.csv", &net.to_edge_list())?;
    Ok(())
}

fn identify(cfg: &ExperimentConfig, dir: &mut RunDir, data_dir: Option<&Path>) -> Result<()> {
    let model = cfg.model_class()?;
    let net = cfg.network()?;
    let data = match data_dir {
        Some(d) => TrajectoryData::load(d, "data")?,
        None => run_data(cfg, &model, &net, 0, false)?.0,
    };
    if data.num_agents() != net.num_agents() {
        bail!("data has {} agents but the configured network has {}", data.num_agents(), net.num_agents());
    }
    let theta0 = draw_initial(&model.theta_true, cfg.init_range, derive_seed(cfg.seed, Domain::Experiment, 0, 1));
    let est = run_pcdpem(&data, &net, &model, &theta0, &cfg.em_config(derive_seed(cfg.seed, Domain::Experiment, 0, 2)))?;
    dir.write("history.csv", &est.history_csv())?;
    dir.write("estimate.json", &est.summary_json()?)?;
    if let Some(cert) = &est.certificate {
        dir.write("certificate.json", &cert.to_json()?)?;
    }
    println!("theta_hat {:?}", est.theta);
    println!("relative error {:.4} after {} iterations", pcdpem::em::relative_error(&est.theta, &model.theta_true), est.iterations);
    Ok(())
}

fn write_summary(dir: &mut RunDir, stem: &str, s: &McSummary, model: &str) -> Result<()> {
    dir.write(&format!("{stem}_runs.csv"), &s.runs_csv())?;
    dir.write(&format!("{stem}_table.csv"), &s.table_csv(paper_table(model)))?;
    dir.json(&format!("{stem}_summary.json"), s)
}

fn montecarlo(cfg: &ExperimentConfig, dir: &mut RunDir, ablation: bool) -> Result<()> {
    let s = monte_carlo(cfg)?;
    write_summary(dir, "mc", &s, &cfg.model)?;
    let rows = timing_report(&[(format!("M={}", cfg.particles), s.records.clone())]);
    dir.write("timing.csv", &timing_csv(&rows))?;
    println!("{}: median error {:.4}, ok {}, failed {}, diverged {}", s.label, s.median_error, s.ok, s.failed, s.diverged);
    if ablation {
        let pairs = ablation_no_stability(cfg)?;
        let diverged = pairs.iter().filter(|p| p.diverged()).count();
        dir.json("ablation.json", &pairs)?;
        println!("ablation: {diverged}/{} unconstrained runs diverged", pairs.len());
    }
    Ok(())
}

fn run_sweep(cfg: &ExperimentConfig, dir: &mut RunDir, axis: Axis, values: &[usize]) -> Result<()> {
    let axis = match axis {
        Axis::Particles => SweepAxis::Particles(if values.is_empty() { PARTICLE_COUNTS.to_vec() } else { values.to_vec() }),
        Axis::Noise => {
            let idx: Vec<usize> = if values.is_empty() { (0..NOISE_CONDITIONS.len()).collect() } else { values.to_vec() };
            SweepAxis::Noise(idx.iter().map(|&i| NOISE_CONDITIONS.get(i).copied().with_context(|| format!("noise index {i} out of range"))).collect::<Result<_>>()?)
        }
        Axis::Coupling => SweepAxis::Coupling(if values.is_empty() { (0..5).collect() } else { values.to_vec() }),
    };
    let res = sweep(cfg, &axis)?;
    dir.write("sweep_plot.csv", &res.plot_csv())?;
    dir.write("sweep_summary.csv", &res.summary_csv())?;
    let groups: Vec<(String, Vec<RunRecord>)> = res
        .values
        .iter()
        .zip(&res.summaries)
        .map(|(v, s)| (if res.axis == "particles" { format!("M={v}") } else { v.clone() }, s.records.clone()))
        .collect();
    dir.write("timing.csv", &timing_csv(&timing_report(&groups)))?;
    dir.json("sweep.json", &res)?;
    print!("{}", res.summary_csv());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let mut text = String::new();
    let mc = dir.join("mc_summary.json");
    let sw = dir.join("sweep.json");
    if mc.exists() {
        let s: McSummary = serde_json::from_str(&fs::read_to_string(&mc)?)?;
        let model = s.label.split_whitespace().next().unwrap_or_default().to_string();
        text.push_str(&format!("# {}\n\nmedian relative error {:.4} (ok {}, failed {}, diverged {})\n\n", s.label, s.median_error, s.ok, s.failed, s.diverged));
        text.push_str(&table_markdown(&s, &model));
        let rows = timing_report(&[(format!("M={}", particles_of(&s.label)), s.records.clone())]);
        text.push_str("\n## Timing\n\n```\n");
        text.push_str(&timing_csv(&rows));
        text.push_str("```\n");
    } else if sw.exists() {
        let r: SweepResult = serde_json::from_str(&fs::read_to_string(&sw)?)?;
        text.push_str(&format!("# {} sweep\n\n| value | median error | mean iterations | mean iteration s | ok | diverged |\n|---|---|---|---|---|---|\n", r.axis));
        for (v, s) in r.values.iter().zip(&r.summaries) {
            text.push_str(&format!("| {v} | {:.4} | {:.2} | {:.2} | {} | {} |\n", s.median_error, s.mean_iterations, s.mean_iteration_seconds, s.ok, s.diverged));
        }
    } else {
        bail!("{} holds neither mc_summary.json nor sweep.json", dir.display());
    }
    fs::write(dir.join("report.md"), &text)?;
    print!("{text}");
    Ok(())
}

fn particles_of(label: &str) -> String {
    label.split_whitespace().find_map(|w| w.strip_prefix("M=")).unwrap_or("?").to_string()
}

fn table_markdown(s: &McSummary, model: &str) -> String {
    let paper = paper_table(model);
    let mut out = String::from("| param | true | estimate | paper | comparison |\n|---|---|---|---|---|\n");
    for (i, name) in s.param_names.iter().enumerate() {
        let row = paper.and_then(|p| p.iter().find(|r| r.name == name.as_str()));
        out.push_str(&format!(
            "| {name} | {} | {:.4} ± {:.3e} | {} | {} |\n",
            s.theta_true.get(i).copied().unwrap_or(f64::NAN),
            s.mean[i],
            s.std[i],
            row.map(|r| format!("{} ± {:.3e}", r.mean, r.std)).unwrap_or_default(),
            row.and_then(|r| r.comparison).map(|c| c.to_string()).unwrap_or_else(|| "-".into())
        ));
    }
    out
}
