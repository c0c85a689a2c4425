//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::fem::{l2_error_cross_mesh, l2_norm, FieldRole};
use crate::io::{decomposition_csv, num, read_field_csv, stats_csv, tensors_csv, RunDir};
use crate::pipeline::{
    algorithm1_two_stage, algorithm2_reference, delta_scaling_study, direct_average,
    expectation_variance_sets, first_block_tensors, sample_count_study, stats_of, table1_comparison,
    table1_csv, variance_decay_study, Problem,
};

#[derive(Debug, Parser)]
#[command(name = "stochom", version, about = "Two-stage stochastic homogenization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Configuration file with [problem], [mesh], [random] and [study] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set L=484`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sample-level parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Equivalent tensor of block (0, 0) for one sample.
    Cell(Common),
    /// Stage one only: equivalent tensors and their statistics.
    Homogenize(Common),
    /// Stage one plus the homogenized solve.
    TwoStage(Common),
    /// Monte Carlo reference solution.
    Reference(Common),
    /// Direct fine-mesh solve of the oscillating problem.
    Direct(Common),
    /// Variance of the equivalent tensor against block size.
    StudyVariance(Common),
    /// Equivalent-solution error against perturbation scale.
    StudyDelta(Common),
    /// Sample-mean convergence and paired periodization comparison.
    StudySamples(Common),
    /// Relative L2 error of one run's field against a reference run's field.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Run directory or field CSV of the approximation.
    pub solution: PathBuf,
    /// Run directory or field CSV of the reference.
    pub reference: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cell(_) => "cell",
            Command::Homogenize(_) => "homogenize",
            Command::TwoStage(_) => "two-stage",
            Command::Reference(_) => "reference",
            Command::Direct(_) => "direct",
            Command::StudyVariance(_) => "study-variance",
            Command::StudyDelta(_) => "study-delta",
            Command::StudySamples(_) => "study-samples",
            Command::Compare(_) => "compare",
        }
    }
}

/// Parse arguments, run, print the output directory or a one-line error, and
/// return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            let cat = e.category();
            eprintln!("error[{}]: {}", cat.as_str(), e.to_string().replace('\n', " "));
            cat.exit_code()
        }
    }
}

/// Run one subcommand and return its output directory.
pub fn run(command: Command) -> Result<PathBuf> {
    let name = command.name();
    match command {
        Command::Compare(args) => run_compare(args),
        Command::Cell(c)
        | Command::Homogenize(c)
        | Command::TwoStage(c)
        | Command::Reference(c)
        | Command::Direct(c)
        | Command::StudyVariance(c)
        | Command::StudyDelta(c)
        | Command::StudySamples(c) => {
            let mut config = parse_config(c.config.as_deref(), &c.overrides)?;
            if let Some(seed) = c.seed {
                config.seed = seed;
            }
            let problem = Problem::new(config)?;
            let mut dir = match &c.out {
                Some(p) => RunDir::create(p)?,
                None => RunDir::create_unique(&Path::new("runs").join(name))?,
            };
            let workers = c.workers.unwrap_or(1).max(1);
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            let started = Instant::now();
            let summary = pool.install(|| dispatch(name, &problem, &mut dir))?;
            let elapsed = started.elapsed().as_secs_f64();
            dir.write("config.ini", &problem.config.to_ini())?;
            write_manifest(&mut dir, name, &problem.config, workers, elapsed, summary)?;
            Ok(dir.path().to_path_buf())
        }
    }
}

fn dispatch(name: &str, problem: &Problem, dir: &mut RunDir) -> Result<Value> {
    let c = &problem.config;
    match name {
        "cell" => {
            let solver = problem.cell_solver(c.m)?;
            let t = first_block_tensors(problem, &solver, &[c.sample_index])?;
            dir.write("cell_tensor.csv", &tensors_csv(&t))?;
            Ok(json!({ "tensor": t[0].tensor.0 }))
        }
        "homogenize" => {
            let solver = problem.cell_solver(c.m)?;
            let mut sets = Vec::new();
            if c.sets > 1 {
                let s = expectation_variance_sets(problem)?;
                dir.write(
                    "sets.csv",
                    &format!(
                        "sets,samples_per_set,expectation_mu11,mean_sample_variance11,variance_of_mu11\n{},{},{},{},{}\n",
                        s.sets,
                        s.samples_per_set,
                        num(s.expectation_mu11),
                        num(s.mean_sample_variance11),
                        num(s.variance_of_mu11)
                    ),
                )?;
                sets.push(serde_json::to_value(s).expect("serializable"));
            }
            let samples: Vec<u64> = (0..c.samples as u64).collect();
            let tensors = first_block_tensors(problem, &solver, &samples)?;
            let stats = stats_of(&tensors)?;
            dir.write("tensors.csv", &tensors_csv(&tensors))?;
            dir.write("equivalent_stats.csv", &stats_csv(&stats))?;
            Ok(json!({ "stats": stats, "sets": sets }))
        }
        "two-stage" => {
            let out = algorithm1_two_stage(problem)?;
            dir.write("tensors.csv", &tensors_csv(&out.tensors))?;
            dir.write("equivalent_stats.csv", &stats_csv(&out.stats))?;
            dir.write("kl_blocks.csv", &tensors_csv(&out.kl_tensors))?;
            dir.write("kl_decomposition.csv", &decomposition_csv(&out.decomposition))?;
            dir.write_field("u0_field", &out.u0)?;
            Ok(json!({
                "stats": out.stats,
                "delta": out.decomposition.delta,
                "lambda1": out.decomposition.lambda1,
                "phi1": out.decomposition.phi1,
                "degenerate": out.decomposition.degenerate,
                "u0_max": out.u0.max_value(),
                "final_solve": out.solve_report,
            }))
        }
        "reference" => {
            let out = algorithm2_reference(problem, false)?;
            dir.write("tensors.csv", &tensors_csv(&out.tensors))?;
            dir.write_field("reference_mean", &out.mean)?;
            Ok(json!({ "samples": c.samples, "reference_max": out.mean.max_value() }))
        }
        "direct" => {
            let field = direct_average(problem, c.direct_samples.max(1))?;
            dir.write_field("direct_field", &field)?;
            Ok(json!({ "samples": c.direct_samples.max(1), "direct_max": field.max_value() }))
        }
        "study-variance" => {
            let s = variance_decay_study(problem)?;
            dir.write("variance_decay.csv", &s.to_csv())?;
            Ok(json!({ "slope": s.slope, "zeta_hat": s.slope.map(|v| -v), "degenerate": s.degenerate }))
        }
        "study-delta" => {
            let s = delta_scaling_study(problem)?;
            dir.write("delta_scaling.csv", &s.to_csv())?;
            Ok(json!({ "slope": s.slope, "intercept": s.intercept }))
        }
        "study-samples" => {
            let s = sample_count_study(problem)?;
            dir.write("clt.csv", &s.to_csv())?;
            let squares: Vec<usize> = c
                .l_list
                .iter()
                .filter_map(|&l| {
                    let n = (l as f64).sqrt().round() as usize;
                    (n * n == l).then_some(n)
                })
                .collect();
            let rows = table1_comparison(problem, &squares, c.replicates)?;
            dir.write("table1_replicates.csv", &table1_csv(&rows))?;
            let mut table = String::from("L,N,mu11,astar11,error,error_std_error\n");
            for &n in &squares {
                let sel: Vec<_> = rows.iter().filter(|r| r.n == n).collect();
                let k = sel.len() as f64;
                let mean = |f: fn(&&crate::pipeline::Table1Row) -> f64| sel.iter().map(f).sum::<f64>() / k;
                let err = mean(|r| r.error);
                let se = if sel.len() > 1 {
                    (sel.iter().map(|r| (r.error - err).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
                } else {
                    f64::NAN
                };
                table.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    n * n,
                    n,
                    num(mean(|r| r.mu11)),
                    num(mean(|r| r.astar11)),
                    num(err),
                    num(se)
                ));
            }
            dir.write("table1.csv", &table)?;
            Ok(json!({ "clt_slope": s.slope }))
        }
        other => Err(Error::InvalidInput(format!("unknown subcommand {other}"))),
    }
}

fn write_manifest(
    dir: &mut RunDir,
    name: &str,
    config: &RunConfig,
    workers: usize,
    elapsed: f64,
    summary: Value,
) -> Result<()> {
    let mut m = Map::new();
    m.insert("tool".into(), json!("stochom"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("subcommand".into(), json!(name));
    m.insert("seed".into(), json!(config.seed));
    m.insert("coefficient_reading".into(), json!(config.coefficient_reading()));
    m.insert("config".into(), serde_json::to_value(config).expect("serializable"));
    m.insert("config_ini".into(), json!(config.to_ini()));
    m.insert("workers".into(), json!(workers));
    m.insert("timings".into(), json!({ "total_seconds": elapsed }));
    m.insert("summary".into(), summary);
    let mut files = dir.written().to_vec();
    files.push("manifest.json".into());
    m.insert("outputs".into(), json!(files));
    let text = serde_json::to_string_pretty(&Value::Object(m)).expect("serializable");
    dir.write("manifest.json", &(text + "\n"))
}

fn field_csv_path(p: &Path, stems: &[&str]) -> Result<PathBuf> {
    if p.is_file() {
        return Ok(p.to_path_buf());
    }
    stems
        .iter()
        .map(|s| p.join(format!("{s}.csv")))
        .find(|c| c.is_file())
        .ok_or_else(|| {
            Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no field CSV in {}", p.display()),
            ))
        })
}

fn run_compare(args: CompareArgs) -> Result<PathBuf> {
    const STEMS: [&str; 3] = ["u0_field", "reference_mean", "direct_field"];
    let started = Instant::now();
    let u_path = field_csv_path(&args.solution, &STEMS)?;
    let r_path = field_csv_path(&args.reference, &["reference_mean", "direct_field", "u0_field"])?;
    let read = |p: &Path| -> Result<_> {
        let f = std::fs::File::open(p)?;
        read_field_csv(std::io::BufReader::new(f), FieldRole::Other)
    };
    let u = read(&u_path)?;
    let r = read(&r_path)?;
    let err = l2_error_cross_mesh(&u, &r)?;
    let norm = l2_norm(&r);
    let rel = if norm > 0.0 { err / norm } else { f64::NAN };
    let mut dir = match &args.out {
        Some(p) => RunDir::create(p)?,
        None => RunDir::create_unique(&Path::new("runs").join("compare"))?,
    };
    dir.write(
        "relative_error.csv",
        &format!(
            "solution,reference,l2_error,reference_l2_norm,relative_error\n{},{},{},{},{}\n",
            csv_text(&u_path.display().to_string()),
            csv_text(&r_path.display().to_string()),
            num(err),
            num(norm),
            num(rel)
        ),
    )?;
    let mut m = Map::new();
    m.insert("tool".into(), json!("stochom"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("subcommand".into(), json!("compare"));
    m.insert("solution".into(), json!(u_path.display().to_string()));
    m.insert("reference".into(), json!(r_path.display().to_string()));
    m.insert("relative_error".into(), json!(rel));
    m.insert("timings".into(), json!({ "total_seconds": started.elapsed().as_secs_f64() }));
    let text = serde_json::to_string_pretty(&Value::Object(m)).expect("serializable");
    dir.write("manifest.json", &(text + "\n"))?;
    Ok(dir.path().to_path_buf())
}

/// Quote a CSV text cell when needed.
fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "stochom", "two-stage", "--set", "L=10", "--set", "test_case=A_I", "--workers", "2", "--seed", "7",
        ])
        .unwrap();
        let Command::TwoStage(c) = cli.command else { panic!() };
        assert_eq!(c.overrides, vec!["L=10", "test_case=A_I"]);
        assert_eq!(c.workers, Some(2));
        assert_eq!(c.seed, Some(7));
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_text("a,b"), "\"a,b\"");
        assert_eq!(csv_text("plain"), "plain");
    }
}
