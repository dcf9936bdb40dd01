use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hierblue::blue::EstimateRecord;
use hierblue::eval::{read_metrics, run_experiment, solve, summarize, write_metrics, Algorithm, ExperimentOptions};
use hierblue::integer::BlueDownOptions;
use hierblue::io::{read_ndjson, write_ndjson, CountRecord};
use hierblue::noise::{measure, measure_tree};
use hierblue::schema::spec::parse_passes;
use hierblue::schema::tree::TreeRecord;
use hierblue::schema::{build_instance, GeoTree, InstanceSpec, Schema};
use hierblue::{Error, Result};

/// Noisy hierarchical count post-processing.
#[derive(Parser)]
#[command(name = "hierblue", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Instance spec TOML file, or `toy` for the built-in toy census.
    #[arg(long)]
    spec: String,
    /// Per-level pass lists, e.g. `full;total,full;total,full;full`.
    #[arg(long)]
    passes: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a tree with ground truth and constraints.
    Generate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample noisy measurements for every node.
    Measure {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-process measurements into estimates or integral counts.
    Solve {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        nmf: PathBuf,
        #[arg(long, default_value = "bluedown")]
        algo: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run measurement replicates and write the metrics CSV.
    Evaluate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        /// Comma-separated algorithms.
        #[arg(long, default_value = "bluedown,topdown")]
        algo: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Summarize a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn input(p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(Error::Usage(format!("no such file: {}", p.display())));
    }
    Ok(())
}

fn output(p: &Path) -> Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Error::Usage(format!("no such directory: {}", dir.display())))
        }
        _ => Ok(()),
    }
}

impl SpecArgs {
    fn validate(&self) -> Result<()> {
        if self.spec != "toy" {
            input(Path::new(&self.spec))?;
        }
        if let Some(p) = &self.passes {
            parse_passes(p)?;
        }
        Ok(())
    }

    fn load(&self) -> Result<InstanceSpec> {
        if self.spec == "toy" && !Path::new("toy").exists() {
            return Ok(InstanceSpec::toy_census(0));
        }
        InstanceSpec::from_toml(&std::fs::read_to_string(&self.spec)?)
    }

    fn schema(&self) -> Result<Schema> {
        let schema = Schema::new(self.load()?)?;
        match &self.passes {
            Some(p) => schema.with_passes(parse_passes(p)?),
            None => Ok(schema),
        }
    }
}

fn load_tree(schema: &Schema, path: &Path) -> Result<GeoTree> {
    GeoTree::from_records(read_ndjson::<TreeRecord>(path)?, schema.k(), schema.d())
}

fn algorithms(text: &str) -> Result<Vec<Algorithm>> {
    text.split(',').map(|s| s.trim().parse()).collect()
}

fn validate(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate { spec, out, .. } => {
            spec.validate()?;
            output(out)
        }
        Command::Measure { spec, tree, out, .. } => {
            spec.validate()?;
            input(tree)?;
            output(out)
        }
        Command::Solve { spec, tree, nmf, algo, out } => {
            spec.validate()?;
            input(tree)?;
            input(nmf)?;
            algo.parse::<Algorithm>()?;
            output(out)
        }
        Command::Evaluate { spec, tree, replicates, algo, metrics, .. } => {
            spec.validate()?;
            input(tree)?;
            if *replicates == 0 {
                return Err(Error::Usage("--replicates must be at least 1".into()));
            }
            algorithms(algo)?;
            output(metrics)
        }
        Command::Report { metrics } => input(metrics),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { spec, seed, out } => {
            let mut s = spec.load()?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(p) = &spec.passes {
                s.passes = Some(parse_passes(p)?);
            }
            let (_, tree) = build_instance(s)?;
            write_ndjson(&out, &tree.to_records())
        }
        Command::Measure { spec, tree, seed, out } => {
            let schema = spec.schema()?;
            let tree = load_tree(&schema, &tree)?;
            let nmf = measure_tree(&schema, &tree, seed)?;
            write_ndjson(&out, &measure::to_records(&schema, &tree, &nmf))
        }
        Command::Solve { spec, tree, nmf, algo, out } => {
            let schema = spec.schema()?;
            let tree = load_tree(&schema, &tree)?.without_truth();
            let nmf = measure::from_records(&schema, &tree, &read_ndjson(&nmf)?)?;
            let algo: Algorithm = algo.parse()?;
            let opts = BlueDownOptions {
                multipass: hierblue::integer::MultipassOptions {
                    alpha: schema.spec.alpha,
                    ..Default::default()
                },
                ..Default::default()
            };
            let rep = solve(algo, &schema, &tree, &nmf, opts)?;
            match algo {
                Algorithm::Blue => {
                    let recs: Vec<EstimateRecord> = (0..rep.ids.len())
                        .map(|i| rep.estimate(i).expect("linear solve carries covariances").to_record(&rep.ids[i]))
                        .collect();
                    write_ndjson(&out, &recs)
                }
                _ => {
                    let counts = rep.integers().ok_or_else(|| Error::Infeasible("non-integral output".into()))?;
                    let recs: Vec<CountRecord> = rep
                        .ids
                        .iter()
                        .zip(counts)
                        .map(|(node, counts)| CountRecord { node: node.clone(), counts })
                        .collect();
                    write_ndjson(&out, &recs)
                }
            }
        }
        Command::Evaluate { spec, tree, replicates, algo, seed, metrics } => {
            let schema = spec.schema()?;
            let tree = load_tree(&schema, &tree)?;
            let mut solve = BlueDownOptions::default();
            solve.multipass.alpha = schema.spec.alpha;
            let opts = ExperimentOptions {
                replicates,
                algorithms: algorithms(&algo)?,
                seed,
                solve,
                levels: vec![],
            };
            let exp = run_experiment(&schema, &tree, &opts)?;
            write_metrics(std::fs::File::create(&metrics)?, &exp.rows)?;
            if let Some((r, a, msg)) = exp.failures.first() {
                return Err(Error::Infeasible(format!(
                    "{} solver failures, first: replicate {r}, {a}: {msg}",
                    exp.failures.len()
                )));
            }
            Ok(())
        }
        Command::Report { metrics } => {
            let rows = read_metrics(std::fs::File::open(&metrics)?)?;
            println!(
                "{:>5}  {:<20} {:<14} {:<10} {:>4} {:>12} {:>10} {:>10}",
                "level", "query", "bin", "algorithm", "reps", "mean_l1", "median_nrm", "mean_bias"
            );
            for s in summarize(&rows) {
                println!(
                    "{:>5}  {:<20} {:<14} {:<10} {:>4} {:>12.4} {:>10.4} {:>10.4}",
                    s.level,
                    s.query,
                    s.pop_bin.as_deref().unwrap_or("-"),
                    s.algorithm,
                    s.replicates,
                    s.mean_l1,
                    s.median_normalized,
                    s.mean_bias
                );
            }
            Ok(())
        }
    }
}

fn threads() -> Result<()> {
    let Ok(v) = std::env::var("HIERBLUE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("HIERBLUE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|_| validate(&cli.command)).and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hierblue: {e}");
            if matches!(e.root_cause(), Error::Usage(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
