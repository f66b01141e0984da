use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kshap_wor::study::{self, ContributionChoice, DataSource, InstanceSelection};
use kshap_wor::{BootstrapMethod, Error, ReportFormat, StudyConfig, SyntheticSpec};

#[derive(Parser, Debug)]
#[command(name = "kshap", version, about = "KernelSHAP with without-replacement coalition sampling and bootstrap SDs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate Shapley values from one coalition sample.
    Explain(Common),
    /// Repeat the estimator and compare bootstrap SDs against the resampled SD.
    Study(Common),
    /// Exact Shapley values by full enumeration.
    Exact(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON study configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic data, e.g. `p=5,n=2864,noise=1,rho=0.5`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Response column of the CSV file.
    #[arg(long, default_value = "y")]
    response: String,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    #[arg(long, value_enum)]
    contribution: Option<Contribution>,
    /// Coalition budget including the empty and full coalitions.
    #[arg(long)]
    coalitions: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated: symmetric, doubled-half. Empty string for none.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    seed: Option<u64>,
    /// A count `k` (first k explain rows) or a comma-separated index list.
    #[arg(long)]
    instances: Option<String>,
    /// Keep every run's estimates (`runs.csv`).
    #[arg(long)]
    keep_runs: bool,
    /// Drop runs whose coalition sample is singular instead of aborting.
    #[arg(long)]
    skip_singular_runs: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Contribution {
    Marginal,
    Conditional,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Baseline {
    WithReplacement,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Csv,
    Json,
}

fn parse_synthetic(text: &str) -> Result<SyntheticSpec, Error> {
    let mut p = None;
    let mut n = None;
    let mut fields = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("synthetic spec entry `{part}` is not key=value")))?;
        let bad = || Error::InvalidArgument(format!("bad value for `{key}` in synthetic spec: `{value}`"));
        match key.trim() {
            "p" => p = Some(value.parse::<usize>().map_err(|_| bad())?),
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad())?),
            k @ ("noise" | "rho" | "intercept" | "split") => fields.push((k, value.parse::<f64>().map_err(|_| bad())?)),
            other => return Err(Error::InvalidArgument(format!("unknown synthetic spec key `{other}`"))),
        }
    }
    let p = p.ok_or_else(|| Error::InvalidArgument("synthetic spec needs p".into()))?;
    let n = n.ok_or_else(|| Error::InvalidArgument("synthetic spec needs n".into()))?;
    let mut spec = SyntheticSpec::new(p, n);
    for (k, v) in fields {
        match k {
            "noise" => spec.noise_sd = v,
            "rho" => spec.rho = v,
            "intercept" => spec.intercept = v,
            _ => spec.split_fraction = v,
        }
    }
    Ok(spec)
}

fn parse_methods(text: &str) -> Result<Vec<BootstrapMethod>, Error> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

fn build_config(args: &Common, exact: bool) -> Result<StudyConfig, Error> {
    let data = match (&args.data, &args.synthetic) {
        (Some(path), _) => Some(DataSource::Csv {
            path: path.clone(),
            response: args.response.clone(),
            split_fraction: args.split,
        }),
        (None, Some(spec)) => Some(DataSource::Synthetic(parse_synthetic(spec)?)),
        (None, None) => None,
    };
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let mut c: StudyConfig = serde_json::from_str(&text)?;
            if let Some(d) = data {
                c.data = d;
            }
            if let Some(n) = args.coalitions {
                c.coalitions = n;
            }
            c
        }
        None => {
            let data = data.ok_or_else(|| Error::InvalidArgument("one of --data, --synthetic or --config is required".into()))?;
            let coalitions = match (args.coalitions, exact) {
                (Some(n), _) => n,
                // Any feasible budget; `exact` never samples.
                (None, true) => 4,
                (None, false) => return Err(Error::InvalidArgument("--coalitions is required".into())),
            };
            StudyConfig::new(data, coalitions)
        }
    };
    if let Some(c) = args.contribution {
        config.contribution = match c {
            Contribution::Marginal => ContributionChoice::Marginal,
            Contribution::Conditional => ContributionChoice::Conditional,
        };
    }
    if let Some(r) = args.runs {
        config.runs = r;
    }
    if let Some(b) = args.replicates {
        config.replicates = b;
    }
    if let Some(m) = &args.methods {
        config.methods = parse_methods(m)?;
    }
    if args.baseline.is_some() {
        config.baseline = true;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(i) = &args.instances {
        config.instances = i.parse::<InstanceSelection>()?;
    }
    if args.keep_runs {
        config.keep_runs = true;
    }
    if args.skip_singular_runs {
        config.skip_singular_runs = true;
    }
    Ok(config)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes to `out/name` when `--out` is set, otherwise to stdout.
fn sink(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>, Error> {
    match out {
        Some(dir) => {
            let io = |source| Error::Io {
                path: dir.to_path_buf(),
                source,
            };
            fs::create_dir_all(dir).map_err(io)?;
            let path = dir.join(name);
            let file = fs::File::create(&path).map_err(|source| Error::Io { path, source })?;
            Ok(Box::new(io::BufWriter::new(file)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn run_explain(args: &Common) -> Result<(), Error> {
    let config = build_config(args, false)?;
    let result = study::explain(&config)?;
    let names = study::prepare(&config)?.data.feature_names().to_vec();
    let io_err = |source| Error::Io {
        path: args.out.clone().unwrap_or_else(|| "<stdout>".into()),
        source,
    };
    match args.format {
        Format::Json => {
            let mut w = sink(args.out.as_deref(), "explain.json")?;
            serde_json::to_writer_pretty(&mut w, &result)?;
            writeln!(w).map_err(io_err)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink(args.out.as_deref(), "explain.csv")?);
            let mut header = vec!["instance".to_string(), "feature".into(), "estimate".into(), "exact_phi".into()];
            header.extend(config.methods.iter().map(|m| format!("{m}_sd")));
            w.write_record(&header)?;
            for inst in &result {
                let mut rows = vec![("phi0".to_string(), inst.estimate.phi0, inst.exact.as_ref().map(|e| e.phi0), None)];
                for (j, name) in names.iter().enumerate() {
                    rows.push((name.clone(), inst.estimate.phi[j], inst.exact.as_ref().map(|e| e.phi[j]), Some(j)));
                }
                for (name, est, exact, j) in rows {
                    let mut rec = vec![inst.instance.to_string(), name, est.to_string(), fmt_opt(exact)];
                    for (_, b) in &inst.bootstrap {
                        rec.push(j.map(|j| b.sd[j].to_string()).unwrap_or_default());
                    }
                    w.write_record(&rec)?;
                }
            }
            w.flush().map_err(io_err)?;
        }
    }
    Ok(())
}

fn run_exact(args: &Common) -> Result<(), Error> {
    let config = build_config(args, true)?;
    let prepared = study::prepare(&config)?;
    let exact = study::exact_for(&prepared, config.anchor_weight)?.ok_or(Error::Capacity {
        what: "features for exact enumeration",
        value: prepared.feature_count(),
        limit: kshap_wor::shapley::ENUMERATION_CAP,
    })?;
    let io_err = |source| Error::Io {
        path: args.out.clone().unwrap_or_else(|| "<stdout>".into()),
        source,
    };
    match args.format {
        Format::Json => {
            let mut w = sink(args.out.as_deref(), "exact.json")?;
            let out: Vec<_> = prepared.instance_ids.iter().zip(&exact).collect();
            serde_json::to_writer_pretty(&mut w, &out)?;
            writeln!(w).map_err(io_err)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink(args.out.as_deref(), "exact.csv")?);
            w.write_record(["instance", "feature", "phi"])?;
            for (id, e) in prepared.instance_ids.iter().zip(&exact) {
                w.write_record([id.to_string(), "phi0".into(), e.phi0.to_string()])?;
                for (name, v) in prepared.data.feature_names().iter().zip(&e.phi) {
                    w.write_record([id.to_string(), name.clone(), v.to_string()])?;
                }
            }
            w.flush().map_err(io_err)?;
        }
    }
    Ok(())
}

fn run_study(args: &Common) -> Result<(), Error> {
    let config = build_config(args, false)?;
    let report = study::run_study(&config)?;
    let format = match args.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("kshap-report"));
    for path in study::emit_report(&report, format, &dir)? {
        println!("{}", path.display());
    }
    for m in &report.methods {
        if let Some(ratio) = report.pooled_ratio(m.method) {
            let cells: Vec<String> = ratio.iter().map(|r| format!("{r:.3}")).collect();
            eprintln!("{:<13} boot/resampled SD per feature: {}  mean failures {:.2}", m.method, cells.join(" "), m.mean_failures);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Explain(a) => run_explain(a),
        Command::Study(a) => run_study(a),
        Command::Exact(a) => run_exact(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kshap: error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_spec_parsing() {
        let s = parse_synthetic("p=5, n=200,noise=0.5,rho=0.3").unwrap();
        assert_eq!((s.p, s.n, s.noise_sd, s.rho), (5, 200, 0.5, 0.3));
        assert!(parse_synthetic("p=5").is_err());
        assert!(parse_synthetic("p=5,n=100,colour=2").is_err());
        assert!(parse_synthetic("p=x,n=100").is_err());
    }

    #[test]
    fn method_list_parsing() {
        assert_eq!(parse_methods("symmetric,doubled-half").unwrap(), BootstrapMethod::ALL.to_vec());
        assert!(parse_methods("").unwrap().is_empty());
        assert!(parse_methods("jackknife").is_err());
    }
}
