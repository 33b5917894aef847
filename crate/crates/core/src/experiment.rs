//! Monte Carlo studies, parameter sweeps, timing tables and the stability
//! ablation.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coupling::InteractionFunction;
use crate::em::{draw_initial, relative_error, run_pcdpem, EmConfig, PlugIn, ThetaEstimate};
use crate::error::{param_err, Error, Result};
use crate::gossip::ConsensusConfig;
use crate::model::{ModelClass, ModelKind};
use crate::parallel;
use crate::rng::{derive_seed, Domain};
use crate::sim::{simulate_network, SimulationSpec, TrajectoryData};
use crate::stability::{check_contraction, CertificateGrid};
use crate::topology::{deletion_for_mean_degree, generate_ba_directed, DirectedNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub mean: f64,
    pub variance: f64,
}

/// The four noise conditions of the benchmark noise sweep.
pub const NOISE_CONDITIONS: [NoiseLevel; 4] = [
    NoiseLevel { mean: 0.05, variance: 0.1 },
    NoiseLevel { mean: 0.5, variance: 1.0 },
    NoiseLevel { mean: 5.0, variance: 10.0 },
    NoiseLevel { mean: 50.0, variance: 100.0 },
];

pub const PARTICLE_COUNTS: [usize; 5] = [50, 100, 200, 500, 1000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSettings {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub delta: f64,
    pub max_rounds: usize,
    pub constrained: bool,
    pub plug_in: PlugIn,
    /// Extra witness box `(lo, hi, points per axis)`.
    pub witness_box: Option<(f64, f64, usize)>,
}

impl Default for EmSettings {
    fn default() -> Self {
        let em = EmConfig::default();
        Self {
            epsilon: em.epsilon,
            max_iterations: em.max_iterations,
            delta: em.consensus.delta,
            max_rounds: em.consensus.max_rounds,
            constrained: true,
            plug_in: PlugIn::Aggregate,
            witness_box: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub agents: usize,
    pub horizon: usize,
    pub particles: usize,
    /// Euler step of the continuous models.
    pub dt: f64,
    pub repetitions: usize,
    /// Benchmark noise mean and variance override.
    pub noise: Option<NoiseLevel>,
    /// Index into the coupling table; `None` keeps the model's own coupling.
    pub coupling: Option<usize>,
    pub init_range: f64,
    pub seed: u64,
    pub attach: usize,
    pub deletion: f64,
    pub em: EmSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "benchmark".into(),
            agents: 20,
            horizon: 100,
            particles: 500,
            dt: 0.01,
            repetitions: 10,
            noise: None,
            coupling: None,
            init_range: 0.5,
            seed: 1,
            attach: 3,
            deletion: 0.3,
            em: EmSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// V = 100, M = 1000, R = 100 with mean out-degree 5.1.
    pub fn paper_scale(mut self) -> Self {
        self.agents = 100;
        self.particles = 1000;
        self.repetitions = 100;
        self.attach = 5;
        self.deletion = deletion_for_mean_degree(100, 5, 5.1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return param_err("repetitions must be at least 1");
        }
        if !(self.init_range > 0.0 && self.init_range <= 1.0) {
            return param_err(format!("init_range must lie in (0, 1], got {}", self.init_range));
        }
        if self.agents <= self.attach || self.attach == 0 {
            return param_err(format!("need agents > attach >= 1, got {} and {}", self.agents, self.attach));
        }
        if self.horizon == 0 || self.particles < 2 {
            return param_err("need a positive horizon and at least two particles");
        }
        if let Some(i) = self.coupling {
            InteractionFunction::table_entry(i)?;
        }
        self.model_class().map(|_| ())
    }

    pub fn model_class(&self) -> Result<ModelClass> {
        let kind = ModelKind::from_name(&self.model)?;
        let model = match (kind, self.noise) {
            (ModelKind::Benchmark, Some(n)) => ModelClass::benchmark_with_noise(n.mean, n.variance),
            (_, Some(_)) => return param_err("noise overrides apply to the benchmark model only"),
            (ModelKind::Benchmark, None) => ModelClass::benchmark(),
            (ModelKind::GeneRegulation, None) => ModelClass::gene_regulation(self.dt),
            (ModelKind::FitzHughNagumo, None) => ModelClass::fitzhugh_nagumo(self.dt),
            (ModelKind::ScalarLinear, None) => ModelClass::by_name("scalar_linear")?,
        };
        Ok(model)
    }

    pub fn interaction(&self) -> Result<InteractionFunction> {
        match self.coupling {
            Some(i) => InteractionFunction::table_entry(i),
            None => Ok(default_coupling(ModelKind::from_name(&self.model)?)),
        }
    }

    pub fn network(&self) -> Result<DirectedNetwork> {
        generate_ba_directed(self.agents, self.attach, self.deletion, derive_seed(self.seed, Domain::Topology, 0, 0))
    }

    pub fn em_config(&self, seed: u64) -> EmConfig {
        EmConfig {
            num_particles: self.particles,
            consensus: ConsensusConfig { delta: self.em.delta, max_rounds: self.em.max_rounds, ..Default::default() },
            epsilon: self.em.epsilon,
            max_iterations: self.em.max_iterations,
            seed,
            constrained: self.em.constrained,
            grid: CertificateGrid::default(),
            witness_box: self.em.witness_box,
            plug_in: self.em.plug_in,
            ..Default::default()
        }
    }

    pub fn label(&self) -> String {
        format!("{} V={} T={} M={} R={}", self.model, self.agents, self.horizon, self.particles, self.repetitions)
    }
}

pub fn default_coupling(kind: ModelKind) -> InteractionFunction {
    match kind {
        ModelKind::Benchmark => InteractionFunction::Sine { gain: 1.0 },
        ModelKind::GeneRegulation => InteractionFunction::Hill { strength: 0.05, alpha: 2 },
        ModelKind::FitzHughNagumo => InteractionFunction::Linear { gain: 1.0 },
        ModelKind::ScalarLinear => InteractionFunction::None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum RunStatus {
    Ok,
    /// Parameter blow-up: the divergence guard or a numerical breakdown.
    Diverged(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub data_seed: u64,
    pub init_seed: u64,
    pub status: RunStatus,
    pub theta_true: Vec<f64>,
    pub theta0: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub relative_error: f64,
    /// `|theta_hat_i - theta*_i| / |theta*_i|`.
    pub param_errors: Vec<f64>,
    pub iterations: usize,
    pub iteration_seconds: Vec<f64>,
    pub total_seconds: f64,
    /// Mean consensus rounds per time step, averaged over iterations.
    pub rounds: f64,
    pub messages: usize,
    /// Scalars sent at `n K V + 1` per message.
    pub payload_scalars: f64,
    /// Worst-case scalar bound summed over all consensus rounds.
    pub payload_bound: f64,
    pub min_delta_q: f64,
    pub max_mass_drift: f64,
    pub max_count_drift: f64,
    /// Block-form margin of the final certificate on its witness set.
    pub certificate_margin: Option<f64>,
}

fn classify(e: &Error) -> RunStatus {
    let mut inner = e;
    while let Error::Iteration { source, .. } = inner {
        inner = source;
    }
    match inner {
        Error::DivergenceGuard { .. } | Error::Divergence { .. } | Error::Degeneracy { .. } | Error::Numerical(_) => RunStatus::Diverged(e.to_string()),
        _ => RunStatus::Failed(e.to_string()),
    }
}

/// Simulated data for run `run` of a study.
pub fn run_data(cfg: &ExperimentConfig, model: &ModelClass, net: &DirectedNetwork, run: usize, keep_states: bool) -> Result<(TrajectoryData, u64)> {
    let data_seed = derive_seed(cfg.seed, Domain::Experiment, run as u64, 0);
    let theta = model.theta_true.clone();
    let spec = SimulationSpec { model, theta: &theta, coupling: cfg.interaction()?, net, horizon: cfg.horizon, initial: None, seed: data_seed, keep_states };
    Ok((simulate_network(&spec)?, data_seed))
}

/// One identification run; failures are recorded, not returned.
pub fn single_run(cfg: &ExperimentConfig, model: &ModelClass, net: &DirectedNetwork, run: usize) -> Result<RunRecord> {
    let (data, data_seed) = run_data(cfg, model, net, run, false)?;
    let init_seed = derive_seed(cfg.seed, Domain::Experiment, run as u64, 1);
    let theta_true = model.theta_true.clone();
    let theta0 = draw_initial(&theta_true, cfg.init_range, init_seed);
    let start = Instant::now();
    let result = run_pcdpem(&data, net, model, &theta0, &cfg.em_config(derive_seed(cfg.seed, Domain::Experiment, run as u64, 2)));
    let total_seconds = start.elapsed().as_secs_f64();
    let mut record = RunRecord {
        run,
        data_seed,
        init_seed,
        status: RunStatus::Ok,
        theta_true: theta_true.clone(),
        theta0: theta0.clone(),
        theta_hat: vec![f64::NAN; theta_true.len()],
        relative_error: f64::NAN,
        param_errors: vec![f64::NAN; theta_true.len()],
        iterations: 0,
        iteration_seconds: vec![],
        total_seconds,
        rounds: 0.0,
        messages: 0,
        payload_scalars: 0.0,
        payload_bound: 0.0,
        min_delta_q: f64::NAN,
        max_mass_drift: 0.0,
        max_count_drift: 0.0,
        certificate_margin: None,
    };
    match result {
        Ok(est) => fill_record(&mut record, &est, model, net, cfg)?,
        Err(e) => record.status = classify(&e),
    }
    Ok(record)
}

fn fill_record(record: &mut RunRecord, est: &ThetaEstimate, model: &ModelClass, net: &DirectedNetwork, cfg: &ExperimentConfig) -> Result<()> {
    let truth = &record.theta_true;
    record.theta_hat = est.theta.clone();
    record.relative_error = relative_error(&est.theta, truth);
    record.param_errors = est.theta.iter().zip(truth).map(|(a, b)| (a - b).abs() / b.abs()).collect();
    record.iterations = est.iterations;
    record.iteration_seconds = est.history.iter().map(|r| r.seconds).collect();
    record.rounds = est.history.iter().map(|r| r.rounds).sum::<f64>() / est.history.len().max(1) as f64;
    record.messages = est.history.iter().map(|r| r.messages).sum();
    let k = cfg.particles.div_ceil(net.max_degree());
    let per_message = (model.state_dim() * k * net.num_agents() + 1) as f64;
    let rounds_total = record.messages as f64 / net.num_agents() as f64;
    record.payload_scalars = record.messages as f64 * per_message;
    record.payload_bound = rounds_total * net.num_edges() as f64 * per_message * net.max_degree() as f64;
    record.min_delta_q = est.history.iter().map(|r| r.delta_q).fold(f64::INFINITY, f64::min);
    record.max_mass_drift = est.history.iter().map(|r| r.max_mass_drift).fold(0.0, f64::max);
    record.max_count_drift = est.history.iter().map(|r| r.max_count_drift).fold(0.0, f64::max);
    if let Some(cert) = &est.certificate {
        record.certificate_margin = Some(check_contraction(model, &est.theta, cert, &est.witnesses)?.margin);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub label: String,
    pub param_names: Vec<String>,
    pub theta_true: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation; 0 when only one run succeeded.
    pub std: Vec<f64>,
    pub median_param_errors: Vec<f64>,
    pub median_error: f64,
    pub mean_error: f64,
    pub errors: Vec<f64>,
    pub ok: usize,
    pub failed: usize,
    pub diverged: usize,
    pub mean_iterations: f64,
    pub mean_iteration_seconds: f64,
    pub records: Vec<RunRecord>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    (mean, (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
}

/// Statistics derived from stored run records only.
pub fn summarize(label: &str, param_names: Vec<String>, records: Vec<RunRecord>) -> McSummary {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.status == RunStatus::Ok).collect();
    let q = param_names.len();
    let column = |f: &dyn Fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (mut mean, mut std, mut median_param_errors) = (vec![], vec![], vec![]);
    for i in 0..q {
        let (m, s) = mean_std(&column(&|r| r.theta_hat[i]));
        mean.push(m);
        std.push(s);
        median_param_errors.push(median(&column(&|r| r.param_errors[i])));
    }
    let errors = column(&|r| r.relative_error);
    let iteration_times: Vec<f64> = ok.iter().flat_map(|r| r.iteration_seconds.iter().copied()).collect();
    McSummary {
        label: label.to_string(),
        param_names,
        theta_true: records.first().map(|r| r.theta_true.clone()).unwrap_or_default(),
        mean,
        std,
        median_param_errors,
        median_error: median(&errors),
        mean_error: mean_std(&errors).0,
        errors,
        ok: ok.len(),
        failed: records.iter().filter(|r| matches!(r.status, RunStatus::Failed(_))).count(),
        diverged: records.iter().filter(|r| matches!(r.status, RunStatus::Diverged(_))).count(),
        mean_iterations: mean_std(&column(&|r| r.iterations as f64)).0,
        mean_iteration_seconds: mean_std(&iteration_times).0,
        records,
    }
}

/// `R` independent runs (data seed, init seed) on one network, in parallel.
pub fn monte_carlo(cfg: &ExperimentConfig) -> Result<McSummary> {
    cfg.validate()?;
    let model = cfg.model_class()?;
    let net = cfg.network()?;
    let records = parallel::map_indices(cfg.repetitions, |r| single_run(cfg, &model, &net, r)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(&cfg.label(), model.param_names(), records))
}

impl McSummary {
    /// `param,true,mean,std,median_rel_error` plus published reference columns when known.
    pub fn table_csv(&self, paper: Option<&[PaperRow]>) -> String {
        let mut out = String::from("param,true,mean,std,median_rel_error,paper_mean,paper_std,comparison\n");
        for (i, name) in self.param_names.iter().enumerate() {
            let row = paper.and_then(|p| p.iter().find(|r| r.name == name.as_str()));
            let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{}",
                self.theta_true.get(i).copied().unwrap_or(f64::NAN),
                self.mean[i],
                self.std[i],
                self.median_param_errors[i],
                fmt(row.map(|r| r.mean)),
                fmt(row.map(|r| r.std)),
                fmt(row.and_then(|r| r.comparison))
            );
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("run,status,relative_error,iterations,total_seconds,rounds,messages");
        for n in &self.param_names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for r in &self.records {
            let status = match &r.status {
                RunStatus::Ok => "ok",
                RunStatus::Diverged(_) => "diverged",
                RunStatus::Failed(_) => "failed",
            };
            let _ = write!(out, "{},{status},{},{},{},{},{}", r.run, r.relative_error, r.iterations, r.total_seconds, r.rounds, r.messages);
            for v in &r.theta_hat {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "values")]
pub enum SweepAxis {
    Particles(Vec<usize>),
    Noise(Vec<NoiseLevel>),
    /// Coupling table indices.
    Coupling(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Particles(_) => "particles",
            SweepAxis::Noise(_) => "noise",
            SweepAxis::Coupling(_) => "coupling",
        }
    }

    /// Configs and value labels, one per sweep point.
    pub fn points(&self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        match self {
            SweepAxis::Particles(ms) => ms.iter().map(|&m| (m.to_string(), ExperimentConfig { particles: m, ..base.clone() })).collect(),
            SweepAxis::Noise(ns) => ns.iter().map(|&n| (format!("N({},{})", n.mean, n.variance), ExperimentConfig { noise: Some(n), ..base.clone() })).collect(),
            SweepAxis::Coupling(cs) => cs
                .iter()
                .map(|&c| {
                    let label = InteractionFunction::table_entry(c).map(|g| g.label()).unwrap_or_else(|_| format!("#{c}"));
                    (label, ExperimentConfig { coupling: Some(c), ..base.clone() })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub values: Vec<String>,
    pub summaries: Vec<McSummary>,
}

pub fn sweep(base: &ExperimentConfig, axis: &SweepAxis) -> Result<SweepResult> {
    let points = axis.points(base);
    if points.is_empty() {
        return param_err("empty sweep");
    }
    let mut values = Vec::new();
    let mut summaries = Vec::new();
    for (label, cfg) in points {
        summaries.push(monte_carlo(&cfg)?);
        values.push(label);
    }
    Ok(SweepResult { axis: axis.name().into(), values, summaries })
}

impl SweepResult {
    /// One row per run: `axis,value,run,status,relative_error,iterations,seconds`.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("axis,value,run,status,relative_error,iterations,seconds\n");
        for (value, s) in self.values.iter().zip(&self.summaries) {
            for r in &s.records {
                let status = match r.status {
                    RunStatus::Ok => "ok",
                    RunStatus::Diverged(_) => "diverged",
                    RunStatus::Failed(_) => "failed",
                };
                let _ = writeln!(out, "{},\"{value}\",{},{status},{},{},{}", self.axis, r.run, r.relative_error, r.iterations, r.total_seconds);
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("axis,value,median_error,mean_error,ok,failed,diverged,mean_iterations,mean_iteration_seconds\n");
        for (value, s) in self.values.iter().zip(&self.summaries) {
            let _ = writeln!(out, "{},\"{value}\",{},{},{},{},{},{},{}", self.axis, s.median_error, s.mean_error, s.ok, s.failed, s.diverged, s.mean_iterations, s.mean_iteration_seconds);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub label: String,
    pub runs: usize,
    pub mean_iteration_seconds: f64,
    pub mean_total_seconds: f64,
    pub mean_iterations: f64,
    pub mean_messages: f64,
    /// Largest measured-to-bound payload ratio over the runs.
    pub max_bound_ratio: f64,
    pub within_bound: bool,
    pub paper_iteration_seconds: Option<f64>,
    pub paper_iterations: Option<f64>,
}

/// Per-label timing and communication table from stored run records.
pub fn timing_report(groups: &[(String, Vec<RunRecord>)]) -> Vec<TimingRow> {
    groups
        .iter()
        .map(|(label, records)| {
            let ok: Vec<&RunRecord> = records.iter().filter(|r| r.status == RunStatus::Ok).collect();
            let iteration_times: Vec<f64> = ok.iter().flat_map(|r| r.iteration_seconds.iter().copied()).collect();
            let ratio = ok.iter().map(|r| r.payload_scalars / r.payload_bound.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
            let m = label.strip_prefix("M=").and_then(|s| s.parse::<usize>().ok());
            TimingRow {
                label: label.clone(),
                runs: ok.len(),
                mean_iteration_seconds: mean_std(&iteration_times).0,
                mean_total_seconds: mean_std(&ok.iter().map(|r| r.total_seconds).collect::<Vec<_>>()).0,
                mean_iterations: mean_std(&ok.iter().map(|r| r.iterations as f64).collect::<Vec<_>>()).0,
                mean_messages: mean_std(&ok.iter().map(|r| r.messages as f64).collect::<Vec<_>>()).0,
                max_bound_ratio: ratio,
                within_bound: ok.iter().all(|r| r.payload_scalars <= r.payload_bound),
                paper_iteration_seconds: m.and_then(paper_iteration_seconds),
                paper_iterations: m.and_then(paper_iterations),
            }
        })
        .collect()
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("label,runs,mean_iteration_seconds,mean_total_seconds,mean_iterations,mean_messages,max_bound_ratio,within_bound,paper_iteration_seconds,paper_iterations\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.runs,
            r.mean_iteration_seconds,
            r.mean_total_seconds,
            r.mean_iterations,
            r.mean_messages,
            r.max_bound_ratio,
            r.within_bound,
            fmt(r.paper_iteration_seconds),
            fmt(r.paper_iterations)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPair {
    pub unconstrained: RunRecord,
    pub constrained: RunRecord,
}

impl AblationPair {
    pub fn diverged(&self) -> bool {
        matches!(self.unconstrained.status, RunStatus::Diverged(_))
    }
}

/// Paired runs on the same data and initial point, without and with the
/// contraction constraint.
pub fn ablation_no_stability(cfg: &ExperimentConfig) -> Result<Vec<AblationPair>> {
    cfg.validate()?;
    let model = cfg.model_class()?;
    let net = cfg.network()?;
    let off = ExperimentConfig { em: EmSettings { constrained: false, ..cfg.em.clone() }, ..cfg.clone() };
    let on = ExperimentConfig { em: EmSettings { constrained: true, ..cfg.em.clone() }, ..cfg.clone() };
    parallel::map_indices(cfg.repetitions, |r| Ok(AblationPair { unconstrained: single_run(&off, &model, &net, r)?, constrained: single_run(&on, &model, &net, r)? })).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaperRow {
    pub name: &'static str,
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
    /// The two-stage inference method's estimate, where reported.
    pub comparison: Option<f64>,
}

const fn row(name: &'static str, truth: f64, mean: f64, std: f64, comparison: Option<f64>) -> PaperRow {
    PaperRow { name, truth, mean, std, comparison }
}

pub const PAPER_BENCHMARK: [PaperRow; 6] = [
    row("a", 0.5, 0.495, 7.13e-4, None),
    row("b", 25.0, 24.9, 0.119, None),
    row("c", 8.0, 8.05, 0.103, None),
    row("d", 0.05, 0.053, 1.45e-3, None),
    row("s", 0.5, 0.451, 0.929, None),
    row("w", 1.0, 1.18, 0.432, None),
];

pub const PAPER_GENE_REGULATION: [PaperRow; 4] = [
    row("a", -0.2, -0.2003, 1.23e-4, Some(-0.197)),
    row("b", 1.0, 1.0060, 1.26e-4, None),
    row("s", 0.001, 0.00179, 0.64, None),
    row("w", 0.01, 0.00998, 0.59, None),
];

pub const PAPER_FITZHUGH_NAGUMO: [PaperRow; 8] = [
    row("a", 1.0, 0.9931, 0.011, Some(0.989)),
    row("b", -1.0, -1.0171, 0.016, Some(-0.993)),
    row("c", -1.0, -1.0086, 0.003, Some(-0.996)),
    row("d", 0.28, 0.2814, 0.006, Some(0.279)),
    row("e", 0.5, 0.4998, 0.213, Some(0.499)),
    row("f", -0.04, -0.0402, 0.113, Some(-0.040)),
    row("s", 0.05, 0.0466, 0.629, None),
    row("w", 0.1, 0.1060, 0.514, None),
];

pub fn paper_table(model: &str) -> Option<&'static [PaperRow]> {
    match model {
        "benchmark" => Some(&PAPER_BENCHMARK),
        "gene_regulation" => Some(&PAPER_GENE_REGULATION),
        "fitzhugh_nagumo" => Some(&PAPER_FITZHUGH_NAGUMO),
        _ => None,
    }
}

/// Reported single-iteration seconds at the smallest and largest particle counts.
pub fn paper_iteration_seconds(m: usize) -> Option<f64> {
    match m {
        50 => Some(4.6),
        1000 => Some(54.9),
        _ => None,
    }
}

/// Reported mean EM iteration counts.
pub fn paper_iterations(m: usize) -> Option<f64> {
    match m {
        50 => Some(4.37),
        1000 => Some(2.71),
        _ => None,
    }
}
