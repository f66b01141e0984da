//! Explanation pipeline and the resampling study.
//!
//! A study repeats the whole estimator `R` times with fresh coalition samples.
//! The spread of the `R` estimates is the resampled ("true") standard deviation;
//! each run also bootstraps its own sample `B` times, and the bootstrap SDs are
//! averaged over runs so the two can be compared per instance and feature.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_table, BootstrapMethod, BootstrapSd, BootstrapSummary};
use crate::error::{Error, Result};
use crate::model::{fit_linear, generate_synthetic, load_csv, ContributionOracle, ContributionTable, Dataset, SyntheticSpec};
use crate::sampling::{build_pairing, draw_sample, draw_with_replacement_anchored, plan_sample_with, CoalitionSample, PlanOptions, SamplingPlan};
use crate::seed::{derive_seed, stream};
use crate::shapley::{exact_shapley_many, weighted_moment, NormalEquations, ShapleyExplanation, DEFAULT_ANCHOR_WEIGHT, ENUMERATION_CAP};
use crate::wallenius::Rounding;

const DATA_STREAM: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        response: String,
        #[serde(default = "half")]
        split_fraction: f64,
    },
    Synthetic(SyntheticSpec),
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContributionChoice {
    Marginal,
    #[default]
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSelection {
    /// The first `k` rows of the explain split.
    First(usize),
    /// Explicit row indices into the explain split.
    Indices(Vec<usize>),
}

impl Default for InstanceSelection {
    fn default() -> Self {
        InstanceSelection::First(20)
    }
}

impl std::str::FromStr for InstanceSelection {
    type Err = Error;

    /// `"20"` selects the first 20 rows; `"0,4,9"` (any comma) selects by index.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad instance spec `{s}`")))
        };
        if s.contains(',') {
            let idx = s
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(parse)
                .collect::<Result<Vec<_>>>()?;
            Ok(InstanceSelection::Indices(idx))
        } else {
            Ok(InstanceSelection::First(parse(s)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub data: DataSource,
    #[serde(default)]
    pub contribution: ContributionChoice,
    /// Coalition budget `n_total`, anchors included.
    pub coalitions: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_runs")]
    pub replicates: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<BootstrapMethod>,
    /// Also run the with-replacement frequency-weighted arm.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub instances: InstanceSelection,
    #[serde(default)]
    pub seed: u64,
    /// Keep every run's estimates in the report.
    #[serde(default)]
    pub keep_runs: bool,
    /// Drop runs whose own coalition sample gives a singular system instead of aborting.
    #[serde(default)]
    pub skip_singular_runs: bool,
    #[serde(default)]
    pub rounding: Rounding,
    #[serde(default = "default_anchor")]
    pub anchor_weight: f64,
}

fn default_runs() -> usize {
    300
}

fn default_methods() -> Vec<BootstrapMethod> {
    BootstrapMethod::ALL.to_vec()
}

fn default_anchor() -> f64 {
    DEFAULT_ANCHOR_WEIGHT
}

impl StudyConfig {
    pub fn new(data: DataSource, coalitions: u64) -> Self {
        Self {
            data,
            contribution: ContributionChoice::default(),
            coalitions,
            runs: default_runs(),
            replicates: default_runs(),
            methods: default_methods(),
            baseline: false,
            instances: InstanceSelection::default(),
            seed: 0,
            keep_runs: false,
            skip_singular_runs: false,
            rounding: Rounding::default(),
            anchor_weight: DEFAULT_ANCHOR_WEIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 2 {
            return Err(Error::invalid(format!("need at least 2 runs, got {}", self.runs)));
        }
        if !self.methods.is_empty() && self.replicates < 2 {
            return Err(Error::invalid(format!("need at least 2 bootstrap replicates, got {}", self.replicates)));
        }
        Ok(())
    }
}

/// Data, fitted oracle and the explained rows for a configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Dataset,
    pub oracle: ContributionOracle,
    /// Indices into the explain split.
    pub instance_ids: Vec<usize>,
    pub instances: Vec<Vec<f64>>,
    pub plan: SamplingPlan,
}

impl Prepared {
    pub fn instance_refs(&self) -> Vec<&[f64]> {
        self.instances.iter().map(Vec::as_slice).collect()
    }

    pub fn feature_count(&self) -> usize {
        self.data.feature_count()
    }
}

pub fn load_data(source: &DataSource, seed: u64) -> Result<Dataset> {
    match source {
        DataSource::Csv {
            path,
            response,
            split_fraction,
        } => load_csv(path, response, *split_fraction),
        DataSource::Synthetic(spec) => generate_synthetic(spec, derive_seed(seed, DATA_STREAM, 0)),
    }
}

pub fn prepare(config: &StudyConfig) -> Result<Prepared> {
    let data = load_data(&config.data, config.seed)?;
    let oracle = fit_linear(&data)?;
    let oracle = match config.contribution {
        ContributionChoice::Marginal => oracle,
        ContributionChoice::Conditional => oracle.into_conditional(&data)?,
    };
    let available = data.explain_rows().len();
    let instance_ids: Vec<usize> = match &config.instances {
        InstanceSelection::First(k) => (0..(*k).min(available)).collect(),
        InstanceSelection::Indices(idx) => {
            if let Some(bad) = idx.iter().find(|&&i| i >= available) {
                return Err(Error::invalid(format!("instance {bad} out of range ({available} rows to explain)")));
            }
            idx.clone()
        }
    };
    if instance_ids.is_empty() {
        return Err(Error::invalid("no instances selected"));
    }
    let instances = instance_ids.iter().map(|&i| data.explain_rows()[i].clone()).collect();
    let plan = plan_sample_with(
        data.feature_count(),
        config.coalitions,
        PlanOptions {
            rounding: config.rounding,
            anchor_weight: config.anchor_weight,
        },
    )?;
    Ok(Prepared {
        data,
        oracle,
        instance_ids,
        instances,
        plan,
    })
}

/// Point estimates for every instance from one sample.
pub fn estimate(sample: &CoalitionSample, table: &ContributionTable) -> Result<Vec<ShapleyExplanation>> {
    let p = sample.feature_count();
    let normal = NormalEquations::assemble(p, sample.weighted_rows())?;
    Ok((0..table.instances())
        .map(|inst| {
            let rhs = weighted_moment(
                p,
                sample
                    .entries()
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (e.mask, e.weight, table.value(i, inst))),
            );
            normal.solve(&rhs)
        })
        .collect())
}

fn sample_table(sample: &CoalitionSample, oracle: &ContributionOracle, instances: &[&[f64]]) -> ContributionTable {
    let masks: Vec<_> = sample.entries().iter().map(|e| e.mask).collect();
    ContributionTable::new(oracle, &masks, instances)
}

/// Exact attributions, or `None` when `p` is too large to enumerate.
pub fn exact_for(prepared: &Prepared, anchor_weight: f64) -> Result<Option<Vec<ShapleyExplanation>>> {
    if prepared.feature_count() > ENUMERATION_CAP {
        return Ok(None);
    }
    exact_shapley_many(&prepared.oracle, &prepared.instance_refs(), anchor_weight).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceExplanation {
    pub instance: usize,
    pub estimate: ShapleyExplanation,
    pub exact: Option<ShapleyExplanation>,
    pub bootstrap: Vec<(BootstrapMethod, BootstrapSd)>,
}

/// One sampled estimate per instance, plus bootstrap SDs for each configured method.
pub fn explain(config: &StudyConfig) -> Result<Vec<InstanceExplanation>> {
    if !config.methods.is_empty() && config.replicates < 2 {
        return Err(Error::invalid("need at least 2 bootstrap replicates"));
    }
    let prepared = prepare(config)?;
    let pairing = build_pairing(prepared.feature_count())?;
    let sample = draw_sample(&prepared.plan, &pairing, derive_seed(config.seed, stream::SAMPLE, 0))?;
    let refs = prepared.instance_refs();
    let table = sample_table(&sample, &prepared.oracle, &refs);
    let estimates = estimate(&sample, &table)?;
    let exact = exact_for(&prepared, config.anchor_weight)?;
    let mut boots: Vec<(BootstrapMethod, BootstrapSummary)> = Vec::new();
    for &method in &config.methods {
        let summary = bootstrap_table(&sample, &table, config.replicates, method, derive_seed(config.seed, stream::REPLICATE, 0))?;
        boots.push((method, summary));
    }
    Ok(estimates
        .into_iter()
        .enumerate()
        .map(|(k, est)| InstanceExplanation {
            instance: prepared.instance_ids[k],
            estimate: est,
            exact: exact.as_ref().map(|e| e[k].clone()),
            bootstrap: boots
                .iter()
                .map(|(m, s)| {
                    (
                        *m,
                        BootstrapSd {
                            sd: s.sd[k].clone(),
                            failures: s.failures,
                        },
                    )
                })
                .collect(),
        })
        .collect())
}

/// Everything one run of a study produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// `phi[instance][feature]`.
    pub estimates: Vec<Vec<f64>>,
    pub bootstrap: Vec<BootstrapSummary>,
    /// With-replacement estimates, `None` when that arm's system was singular.
    pub baseline: Option<Vec<Vec<f64>>>,
    pub baseline_unique: Option<usize>,
}

pub fn run_once(config: &StudyConfig, prepared: &Prepared, run: usize) -> Result<RunOutcome> {
    let p = prepared.feature_count();
    let pairing = build_pairing(p)?;
    let refs = prepared.instance_refs();
    let sample = draw_sample(&prepared.plan, &pairing, derive_seed(config.seed, stream::SAMPLE, run as u64))?;
    let table = sample_table(&sample, &prepared.oracle, &refs);
    let estimates = estimate(&sample, &table)?.into_iter().map(|e| e.phi).collect();
    let bootstrap = config
        .methods
        .iter()
        .map(|&m| bootstrap_table(&sample, &table, config.replicates, m, derive_seed(config.seed, stream::REPLICATE, run as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (baseline, baseline_unique) = if config.baseline {
        let freq = draw_with_replacement_anchored(p, config.coalitions, config.anchor_weight, derive_seed(config.seed, stream::BASELINE, run as u64))?;
        let unique = freq.unique_coalitions();
        let solved = match NormalEquations::assemble(p, freq.weighted_rows()) {
            Ok(normal) => Some(
                refs.iter()
                    .map(|x| {
                        let rhs = weighted_moment(p, freq.entries().iter().map(|e| (e.mask, e.weight, prepared.oracle.contribution(e.mask, x))));
                        normal.solve(&rhs).phi
                    })
                    .collect(),
            ),
            Err(e) if e.is_singular() => None,
            Err(e) => return Err(e),
        };
        (solved, Some(unique))
    } else {
        (None, None)
    };
    Ok(RunOutcome {
        estimates,
        bootstrap,
        baseline,
        baseline_unique,
    })
}

/// Sample standard deviation, two-pass.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: BootstrapMethod,
    /// `[instance][feature]`, averaged over runs.
    pub mean_boot_sd: Vec<Vec<f64>>,
    /// Singular replicates per run.
    pub failures_per_run: Vec<usize>,
    pub mean_failures: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub resampled_sd: Vec<Vec<f64>>,
    pub mean_estimate: Vec<Vec<f64>>,
    pub mean_unique_coalitions: f64,
    /// Runs whose with-replacement system was singular.
    pub singular_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub feature_names: Vec<String>,
    pub instances: Vec<usize>,
    pub coalitions: u64,
    /// Runs that entered the aggregates.
    pub runs: usize,
    /// Runs dropped because their sample was singular (only with `skip_singular_runs`).
    pub singular_runs: usize,
    pub replicates: usize,
    pub exact_phi: Option<Vec<Vec<f64>>>,
    pub mean_estimate: Vec<Vec<f64>>,
    pub resampled_sd: Vec<Vec<f64>>,
    /// Approximate Monte-Carlo standard error of `resampled_sd`.
    pub resampled_sd_se: Vec<Vec<f64>>,
    pub methods: Vec<MethodSummary>,
    pub baseline: Option<BaselineSummary>,
    pub run_estimates: Option<Vec<Vec<Vec<f64>>>>,
}

impl StudyReport {
    pub fn method(&self, method: BootstrapMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Per feature, `Σ_instances mean_boot_sd / Σ_instances resampled_sd`.
    pub fn pooled_ratio(&self, method: BootstrapMethod) -> Option<Vec<f64>> {
        let m = self.method(method)?;
        let p = self.feature_names.len();
        Some(
            (0..p)
                .map(|j| {
                    let boot: f64 = m.mean_boot_sd.iter().map(|r| r[j]).sum();
                    let truth: f64 = self.resampled_sd.iter().map(|r| r[j]).sum();
                    boot / truth
                })
                .collect(),
        )
    }
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let prepared = prepare(config)?;
    run_prepared(config, &prepared)
}

pub fn run_prepared(config: &StudyConfig, prepared: &Prepared) -> Result<StudyReport> {
    config.validate()?;
    let outcomes: Vec<Result<Option<RunOutcome>>> = (0..config.runs)
        .into_par_iter()
        .map(|r| match run_once(config, prepared, r) {
            Ok(o) => Ok(Some(o)),
            Err(e) if config.skip_singular_runs && e.is_singular() => Ok(None),
            Err(e) => Err(Error::Run {
                run: r,
                source: Box::new(e.with_singular_context(format!("coalition sample of run {r}"))),
            }),
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let singular_runs = outcomes.iter().filter(|o| o.is_none()).count();
    let outcomes: Vec<RunOutcome> = outcomes.into_iter().flatten().collect();
    if outcomes.len() < 2 {
        return Err(Error::invalid(format!(
            "only {} of {} runs had a solvable coalition sample",
            outcomes.len(),
            config.runs
        )));
    }
    let exact = exact_for(prepared, config.anchor_weight)?;
    let mut report = aggregate(config, prepared, &outcomes, exact);
    report.singular_runs = singular_runs;
    Ok(report)
}

fn aggregate(config: &StudyConfig, prepared: &Prepared, outcomes: &[RunOutcome], exact: Option<Vec<ShapleyExplanation>>) -> StudyReport {
    let p = prepared.feature_count();
    let n_inst = prepared.instances.len();
    let runs = outcomes.len();
    let column = |inst: usize, j: usize| -> Vec<f64> { outcomes.iter().map(|o| o.estimates[inst][j]).collect() };
    let grid = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> { (0..n_inst).map(|i| (0..p).map(|j| f(i, j)).collect()).collect() };

    let resampled_sd = grid(&|i, j| sample_sd(&column(i, j)));
    let se_factor = 1.0 / (2.0 * (runs as f64 - 1.0)).sqrt();
    let resampled_sd_se = resampled_sd.iter().map(|r| r.iter().map(|s| s * se_factor).collect()).collect();
    let mean_estimate = grid(&|i, j| mean(column(i, j)));

    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let failures_per_run: Vec<usize> = outcomes.iter().map(|o| o.bootstrap[k].failures).collect();
            MethodSummary {
                method,
                mean_boot_sd: grid(&|i, j| mean(outcomes.iter().map(|o| o.bootstrap[k].sd[i][j]))),
                mean_failures: mean(failures_per_run.iter().map(|&f| f as f64)),
                failures_per_run,
            }
        })
        .collect();

    let baseline = config.baseline.then(|| {
        let ok: Vec<&Vec<Vec<f64>>> = outcomes.iter().filter_map(|o| o.baseline.as_ref()).collect();
        let col = |i: usize, j: usize| -> Vec<f64> { ok.iter().map(|b| b[i][j]).collect() };
        BaselineSummary {
            resampled_sd: grid(&|i, j| sample_sd(&col(i, j))),
            mean_estimate: grid(&|i, j| mean(col(i, j))),
            mean_unique_coalitions: mean(outcomes.iter().filter_map(|o| o.baseline_unique).map(|u| u as f64)),
            singular_runs: runs - ok.len(),
        }
    });

    StudyReport {
        feature_names: prepared.data.feature_names().to_vec(),
        instances: prepared.instance_ids.clone(),
        coalitions: config.coalitions,
        runs,
        singular_runs: 0,
        replicates: config.replicates,
        exact_phi: exact.map(|e| e.into_iter().map(|x| x.phi).collect()),
        mean_estimate,
        resampled_sd,
        resampled_sd_se,
        methods,
        baseline,
        run_estimates: config.keep_runs.then(|| outcomes.iter().map(|o| o.estimates.clone()).collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown format `{other}`"))),
        }
    }
}

/// One line of the long-format report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub instance: usize,
    pub feature: String,
    pub resampled_sd: f64,
    pub method: String,
    pub mean_boot_sd: f64,
    pub failures: f64,
    pub resampled_sd_se: f64,
    pub mean_estimate: f64,
    pub exact_phi: Option<f64>,
}

/// Per feature and method: how the bootstrap SDs compare with the resampled SDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub feature: String,
    pub method: String,
    /// Mean over instances of `mean_boot_sd / resampled_sd`; instances with zero resampled SD are skipped.
    pub mean_ratio: Option<f64>,
    pub pooled_ratio: Option<f64>,
    pub mean_failures: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub instance: usize,
    pub feature: String,
    pub resampled_sd: f64,
    pub mean_estimate: f64,
    pub mean_unique_coalitions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub instance: usize,
    pub feature: String,
    pub estimate: f64,
}

/// The flattened tables written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTables {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    pub baseline: Option<Vec<BaselineRow>>,
    pub runs: Option<Vec<RunRow>>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn report_tables(report: &StudyReport) -> ReportTables {
    let names = &report.feature_names;
    let mut rows = Vec::new();
    for (k, &inst) in report.instances.iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            for m in &report.methods {
                rows.push(ReportRow {
                    instance: inst,
                    feature: name.clone(),
                    resampled_sd: report.resampled_sd[k][j],
                    method: m.method.name().to_string(),
                    mean_boot_sd: m.mean_boot_sd[k][j],
                    failures: m.mean_failures,
                    resampled_sd_se: report.resampled_sd_se[k][j],
                    mean_estimate: report.mean_estimate[k][j],
                    exact_phi: report.exact_phi.as_ref().map(|e| e[k][j]),
                });
            }
        }
    }
    let mut summary = Vec::new();
    for (j, name) in names.iter().enumerate() {
        for m in &report.methods {
            let ratios: Vec<f64> = (0..report.instances.len())
                .filter(|&k| report.resampled_sd[k][j] > 0.0)
                .map(|k| m.mean_boot_sd[k][j] / report.resampled_sd[k][j])
                .collect();
            let boot: f64 = m.mean_boot_sd.iter().map(|r| r[j]).sum();
            let truth: f64 = report.resampled_sd.iter().map(|r| r[j]).sum();
            summary.push(SummaryRow {
                feature: name.clone(),
                method: m.method.name().to_string(),
                mean_ratio: if ratios.is_empty() { None } else { finite(mean(ratios)) },
                pooled_ratio: if truth > 0.0 { finite(boot / truth) } else { None },
                mean_failures: m.mean_failures,
            });
        }
    }
    let baseline = report.baseline.as_ref().map(|b| {
        let mut out = Vec::new();
        for (k, &inst) in report.instances.iter().enumerate() {
            for (j, name) in names.iter().enumerate() {
                out.push(BaselineRow {
                    instance: inst,
                    feature: name.clone(),
                    resampled_sd: b.resampled_sd[k][j],
                    mean_estimate: b.mean_estimate[k][j],
                    mean_unique_coalitions: b.mean_unique_coalitions,
                });
            }
        }
        out
    });
    let runs = report.run_estimates.as_ref().map(|all| {
        let mut out = Vec::new();
        for (r, est) in all.iter().enumerate() {
            for (k, &inst) in report.instances.iter().enumerate() {
                for (j, name) in names.iter().enumerate() {
                    out.push(RunRow {
                        run: r,
                        instance: inst,
                        feature: name.clone(),
                        estimate: est[k][j],
                    });
                }
            }
        }
        out
    });
    ReportTables {
        rows,
        summary,
        baseline,
        runs,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::Writer::from_writer(file);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes the report into `dir`; returns the files written.
///
/// CSV: `report.csv`, `summary.csv`, plus `baseline.csv` / `runs.csv` when present.
/// JSON: a single `report.json` holding the same tables.
pub fn emit_report(report: &StudyReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tables = report_tables(report);
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let path = dir.join("report.csv");
            write_csv_table(&path, &tables.rows)?;
            written.push(path);
            let path = dir.join("summary.csv");
            write_csv_table(&path, &tables.summary)?;
            written.push(path);
            if let Some(b) = &tables.baseline {
                let path = dir.join("baseline.csv");
                write_csv_table(&path, b)?;
                written.push(path);
            }
            if let Some(r) = &tables.runs {
                let path = dir.join("runs.csv");
                write_csv_table(&path, r)?;
                written.push(path);
            }
        }
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let text = serde_json::to_string_pretty(&tables)?;
            fs::write(&path, text).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads back the tables written by [`emit_report`] from `dir`.
pub fn read_report(dir: &Path, format: ReportFormat) -> Result<ReportTables> {
    fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut rdr = csv::Reader::from_reader(file);
        rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
    }
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            Ok(serde_json::from_str(&text)?)
        }
        ReportFormat::Csv => {
            let opt = |name: &str| -> Result<Option<PathBuf>> {
                let p = dir.join(name);
                Ok(p.exists().then_some(p))
            };
            Ok(ReportTables {
                rows: read(&dir.join("report.csv"))?,
                summary: read(&dir.join("summary.csv"))?,
                baseline: opt("baseline.csv")?.map(|p| read(&p)).transpose()?,
                runs: opt("runs.csv")?.map(|p| read(&p)).transpose()?,
            })
        }
    }
}
