use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use polystab_core::classification::{classify, Label};
use polystab_core::domain::{Domain, DomainSpec};
use polystab_core::factorization::FactorizationFamily;
use polystab_core::simulation::{integrate_exp, integrate_reference, portrait, Scheme, Trajectory};
use polystab_core::stability::{certify, search_certificate, SearchOptions, Verdict};
use polystab_core::synthesis::{make_center, synthesize, DegreeBounds};
use polystab_core::{parse_system, VectorField};

const SCHEMA: u32 = 1;

/// Stability analysis, classification and feedback synthesis for
/// polynomial ODE systems.
#[derive(Parser, Debug)]
#[command(name = "polystab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the factorization matrix A(x) for a parameter choice.
    Factorize {
        #[command(flatten)]
        common: Common,
        /// JSON file holding θ (defaults to all zeros).
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Certify a stability domain, searching θ unless one is given.
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
        /// Certify this θ as is instead of searching.
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Label the origin as focus, center, node or unstable.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long, default_value_t = 50_000)]
        budget: usize,
    },
    /// Integrate trajectories and write them as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<PathBuf>,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "portrait")]
        x0: Vec<f64>,
        #[arg(long = "t", default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = SchemeArg::Exp)]
        scheme: SchemeArg,
        /// JSON list of seed points; writes one CSV per seed.
        #[arg(long, conflicts_with = "x0")]
        portrait: Option<PathBuf>,
    },
    /// Search a polynomial control law (and optionally φ) for the domain.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long, default_value_t = 1)]
        deg_u: u32,
        /// Also search the augmentation φ(u).
        #[arg(long)]
        allow_phi: bool,
        /// Degree bound for φ (defaults to the degree of f in u).
        #[arg(long, requires = "allow_phi")]
        deg_phi: Option<u32>,
        /// Make the origin a center instead of stabilizing it.
        #[arg(long)]
        center: bool,
        #[arg(long, default_value_t = 200_000)]
        budget: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// System file in the polynomial DSL.
    #[arg(long)]
    system: PathBuf,
    #[arg(long, env = "POLYSTAB_SEED", default_value_t = 0)]
    seed: u64,
    /// Caps the worker pool size.
    #[arg(long)]
    threads: Option<usize>,
    /// Result file; each subcommand has its own default name.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DomainArg {
    /// Domain as inline JSON (`{"ball":{"r":0.5}}`) or a path to a JSON file.
    #[arg(long)]
    domain: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Exp,
    Rk4,
}

/// Failure modes of a run, mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Core(#[from] polystab_core::Error),
}

type Run<T> = Result<T, RunError>;

fn input(msg: impl Into<String>) -> RunError {
    RunError::Input(msg.into())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: u32,
    command: &'a str,
    seed: u64,
    system: String,
    result: T,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Factorize { common, .. }
        | Command::Certify { common, .. }
        | Command::Classify { common, .. }
        | Command::Simulate { common, .. }
        | Command::Synthesize { common, .. } => common,
    }
}

/// Returns whether the run reached a success verdict.
fn run(cli: Cli) -> Run<bool> {
    let c = common(&cli.command);
    if let Some(t) = c.threads {
        set_threads(t)?;
    }
    let f = load_system(&c.system)?;
    let seed = c.seed;
    let start = Instant::now();
    let ok = match &cli.command {
        Command::Factorize { common, theta } => {
            let out = output_path(common, "factorization.json")?;
            let fam = FactorizationFamily::build(&f)?;
            let theta = load_theta(theta.as_deref(), fam.free_dim())?;
            let a = fam.instantiate(&theta)?;
            #[derive(Serialize)]
            struct Factorization {
                entries: Vec<Vec<String>>,
                free_dim: usize,
                theta: Vec<f64>,
            }
            let res = Factorization {
                entries: a.to_strings(),
                free_dim: fam.free_dim(),
                theta,
            };
            println!("free dimension {}", res.free_dim);
            for row in &res.entries {
                println!("  [{}]", row.join(", "));
            }
            write_json(&out, "factorize", seed, &f, &res)?;
            true
        }
        Command::Certify { common, domain, budget, theta } => {
            let out = output_path(common, "cert.json")?;
            let domain = load_domain(&domain.domain, f.dim())?;
            let fam = FactorizationFamily::build(&f)?;
            let cert = match theta {
                Some(path) => {
                    let theta = load_theta(Some(path), fam.free_dim())?;
                    certify(&fam, &theta, &domain, seed)?
                }
                None => search_certificate(&fam, &domain, &SearchOptions::new(*budget, seed))?.certificate,
            };
            println!(
                "verdict {:?}, margin {:.6e} over {} samples, θ = {:?}",
                cert.verdict, cert.margin, cert.samples, cert.theta
            );
            if let Some(c) = &cert.counterexample {
                println!("counterexample at {:?} (max Re λ = {:.6e})", c.point, c.max_re);
            }
            write_json(&out, "certify", seed, &f, &cert)?;
            cert.verdict == Verdict::CertifiedOnSamples
        }
        Command::Classify { common, domain, budget } => {
            let out = output_path(common, "class.json")?;
            let domain = load_domain(&domain.domain, f.dim())?;
            let res = classify(&f, &domain, *budget, seed)?;
            println!("label {}: {}", res.label, res.note);
            write_json(&out, "classify", seed, &f, &res)?;
            res.label != Label::Unknown
        }
        Command::Simulate {
            common,
            theta,
            x0,
            t_end,
            steps,
            scheme,
            portrait: grid,
        } => {
            let out = output_path(common, "traj.csv")?;
            let fam = FactorizationFamily::build(&f)?;
            let theta = load_theta(theta.as_deref(), fam.free_dim())?;
            let scheme = match scheme {
                SchemeArg::Exp => Scheme::ExpProduct,
                SchemeArg::Rk4 => Scheme::Reference,
            };
            match grid {
                None => match integrate_one(&fam, &theta, x0, *t_end, *steps, scheme) {
                    Ok(traj) => {
                        write_csv(&out, &traj)?;
                        println!("{} points to {}; final state {:?}", traj.len(), out.display(), traj.last());
                        true
                    }
                    Err(polystab_core::Error::Divergence { time, norm, .. }) => {
                        println!("diverged at t = {time} (norm {norm:e}); nothing written");
                        false
                    }
                    Err(e) => return Err(e.into()),
                },
                Some(grid) => {
                    let seeds = load_seeds(grid, f.dim())?;
                    let runs = portrait(&fam, &theta, &seeds, *t_end, *steps, scheme);
                    let mut all_ok = true;
                    for (k, run) in runs.into_iter().enumerate() {
                        let path = indexed(&out, k);
                        match run {
                            Ok(traj) => {
                                write_csv(&path, &traj)?;
                                println!("seed {k} {:?}: {} points to {}", seeds[k], traj.len(), path.display());
                            }
                            Err(polystab_core::Error::Divergence { time, .. }) => {
                                println!("seed {k} {:?}: diverged at t = {time}", seeds[k]);
                                all_ok = false;
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    all_ok
                }
            }
        }
        Command::Synthesize {
            common,
            domain,
            deg_u,
            allow_phi,
            deg_phi,
            center,
            budget,
        } => {
            let out = output_path(common, "synth.json")?;
            let domain = load_domain(&domain.domain, f.dim())?;
            let phi = allow_phi.then(|| deg_phi.unwrap_or_else(|| f.degree().u.max(1)));
            let bounds = DegreeBounds { u: *deg_u, phi };
            let res = if *center {
                make_center(&f, &domain, &bounds, *budget, seed)?
            } else {
                synthesize(&f, &domain, &bounds, *budget, seed)?
            };
            println!("{}: {}", if res.success { "success" } else { "failure" }, res.note);
            println!("u = {:?}", res.control.to_dsl());
            if !res.augmentation.is_zero() {
                println!("φ = {:?}", res.augmentation.to_dsl());
            }
            println!("closed-loop margin {:.6e}", res.certificate.margin);
            write_json(&out, "synthesize", seed, &f, &res)?;
            res.success
        }
    };
    println!("finished in {:.2} s", start.elapsed().as_secs_f64());
    Ok(ok)
}

fn integrate_one(
    fam: &FactorizationFamily,
    theta: &[f64],
    x0: &[f64],
    t_end: f64,
    steps: usize,
    scheme: Scheme,
) -> polystab_core::Result<Trajectory> {
    match scheme {
        Scheme::ExpProduct => integrate_exp(fam, theta, x0, 0.0, t_end, steps),
        Scheme::Reference => integrate_reference(fam.field(), x0, 0.0, t_end, steps),
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Run<()> {
    if n == 0 {
        return Err(input("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| input(format!("cannot configure thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn set_threads(n: usize) -> Run<()> {
    if n == 0 {
        return Err(input("--threads must be at least 1"));
    }
    Ok(())
}

fn read(path: &Path, what: &str) -> Run<String> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {what} file {}: {e}", path.display())))
}

fn load_system(path: &Path) -> Run<VectorField> {
    let text = read(path, "system")?;
    parse_system(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_domain(arg: &str, n: usize) -> Run<Domain> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        read(Path::new(arg), "domain")?
    };
    let spec: DomainSpec = serde_json::from_str(&text).map_err(|e| {
        input(format!(
            "malformed domain JSON ({e}); expected e.g. {{\"ball\":{{\"r\":0.5}}}} or {{\"box\":{{\"h\":[1,1]}}}}"
        ))
    })?;
    Ok(spec.into_domain(n)?)
}

/// Accepts a bare array, `{"theta": [...]}`, or a result file written by
/// this tool (`{"result": {"theta": [...]}}`).
fn load_theta(path: Option<&Path>, k: usize) -> Run<Vec<f64>> {
    let Some(path) = path else {
        return Ok(vec![0.0; k]);
    };
    let value: Value = serde_json::from_str(&read(path, "theta")?)
        .map_err(|e| input(format!("{}: malformed JSON: {e}", path.display())))?;
    let arr = match &value {
        Value::Array(_) => &value,
        _ => value
            .get("theta")
            .or_else(|| value.pointer("/result/theta"))
            .ok_or_else(|| input(format!("{}: expected an array or an object with `theta`", path.display())))?,
    };
    let theta: Vec<f64> = serde_json::from_value(arr.clone())
        .map_err(|e| input(format!("{}: θ must be a list of numbers: {e}", path.display())))?;
    if theta.len() != k {
        return Err(input(format!(
            "{}: θ has {} entries, the family has {k} free parameters",
            path.display(),
            theta.len()
        )));
    }
    Ok(theta)
}

/// Accepts a bare list of points or `{"seeds": [...]}`.
fn load_seeds(path: &Path, n: usize) -> Run<Vec<Vec<f64>>> {
    let value: Value = serde_json::from_str(&read(path, "portrait")?)
        .map_err(|e| input(format!("{}: malformed JSON: {e}", path.display())))?;
    let list = value.get("seeds").cloned().unwrap_or(value);
    let seeds: Vec<Vec<f64>> = serde_json::from_value(list)
        .map_err(|e| input(format!("{}: expected a list of points: {e}", path.display())))?;
    if seeds.is_empty() {
        return Err(input(format!("{}: no seed points", path.display())));
    }
    if let Some(bad) = seeds.iter().find(|s| s.len() != n) {
        return Err(input(format!("{}: seed {bad:?} is not {n}-dimensional", path.display())));
    }
    Ok(seeds)
}

fn output_path(c: &Common, default: &str) -> Run<PathBuf> {
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(default));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(input(format!("output directory {} does not exist", parent.display())));
        }
    }
    Ok(out)
}

/// `traj.csv` -> `traj_3.csv`.
fn indexed(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("traj");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{k}.{ext}"),
        None => format!("{stem}_{k}"),
    };
    path.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, command: &str, seed: u64, f: &VectorField, result: &T) -> Run<()> {
    let env = Envelope {
        schema: SCHEMA,
        command,
        seed,
        system: f.to_dsl(),
        result,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| input(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_csv(path: &Path, traj: &Trajectory) -> Run<()> {
    let fail = |e: csv::Error| input(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim()).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(fail)?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let row = std::iter::once(t).chain(x).map(|v| v.to_string());
        w.write_record(row).map_err(fail)?;
    }
    w.flush().map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
