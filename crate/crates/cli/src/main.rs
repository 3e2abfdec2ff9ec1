//! Command-line driver: build the constructive nets, verify them against
//! oracles, emit capacity curves, generate datasets, and run training
//! sweeps. Outputs are UTF-8 JSON/CSV; sweeps are byte-replayable from the
//! manifest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use relukit::capacity::{deep_log_covering_bound, iso_capacity_curve, CapacityQuery};
use relukit::composite::{
    composite_depth, composite_net, eval_composite, partial_radial_net, radial_corollary_depth,
    radial_net, CompositeSpecFile,
};
use relukit::datagen::{self, MmiLog};
use relukit::erm::{train, RunReport, SplitData, TrainConfig};
use relukit::gates::{product_gate_depth, productl_gate, square_gate, GateConfig};
use relukit::net::ReluNet;
use relukit::poly::{eval_poly, sparse_poly_depth, sparse_poly_net, PolySpec};
use relukit::smooth::{psi, psi_net, smooth_depth, smooth_net, smoothness_split, target_by_name};
use relukit::sweep::{run_sweep, SweepManifest};

const EXIT_USAGE: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;
const EXIT_ALL_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "relukit", version, about = "Constructive deep ReLU nets, capacity bounds, and depth-selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a named network construction and write it as JSON.
    Construct(ConstructArgs),
    /// Evaluate a serialized net against a reference oracle.
    Verify(VerifyArgs),
    /// Covering-number bounds and iso-capacity (L, n) curves.
    Capacity(CapacityArgs),
    /// Generate a synthetic dataset as CSV.
    GenData(GenDataArgs),
    /// Train one configuration on a CSV dataset.
    Train(TrainArgs),
    /// Run a manifest-driven experiment sweep.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConstructArgs {
    /// psi | square | product | poly | smooth | composite | radial | partial-radial
    kind: String,
    /// Target accuracy epsilon.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Depth knob L~ of the product gates.
    #[arg(long, default_value_t = 3)]
    ltilde: u32,
    /// Trade-off exponent theta.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// Product-gate arity.
    #[arg(long, default_value_t = 2)]
    arity: u32,
    /// Polynomial or composite spec file (JSON).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Catalog target name for smooth/radial kinds.
    #[arg(long)]
    target: Option<String>,
    /// Input dimension for smooth/radial kinds.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Smoothness r for smooth/radial kinds.
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    /// Parameter budget for radial/partial-radial kinds.
    #[arg(long, default_value_t = 4)]
    n_budget: u64,
    /// Radial coordinate count d' for partial-radial.
    #[arg(long)]
    dprime: Option<usize>,
    /// Where to write the network JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional path for the size report (also printed to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    net: PathBuf,
    /// psi | square | product | product2 | zero | poly:<file> | smooth:<name>:<r> | composite:<file>
    #[arg(long)]
    oracle: String,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// random | grid (grid supported for 1-d and 2-d nets)
    #[arg(long, default_value = "random")]
    mode: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Declared accuracy; exit code 3 if the measured error exceeds it.
    #[arg(long)]
    eps: f64,
}

#[derive(Args)]
struct CapacityArgs {
    #[arg(long, default_value_t = 100)]
    n: u64,
    /// Depth range lo:hi for the iso-capacity curve.
    #[arg(long, default_value = "1:10")]
    l_range: String,
    #[arg(long, default_value_t = 8.0)]
    r_bound: f64,
    #[arg(long, default_value_t = 16.0)]
    d_max: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    c_dim: f64,
    /// Iso-capacity target (log2); defaults to the bound at (l_range.lo, n).
    #[arg(long)]
    target: Option<f64>,
    /// CSV output path (columns L, n, log2_bound).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// square | partial-radial | radial-noisy | mmi
    generator: String,
    #[arg(long, default_value_t = 3200)]
    m: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Magnitude range lo:hi for mmi.
    #[arg(long, default_value = "4:8")]
    mag_range: String,
    /// Distance range lo:hi for mmi.
    #[arg(long, default_value = "1:200")]
    dist_range: String,
    /// Use base-10 log in the MMI formula instead of natural log.
    #[arg(long, default_value_t = false)]
    log10: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file deserializing into the training config.
    #[arg(long)]
    config: PathBuf,
    /// CSV dataset (header x1..xd, y[, y_clean]).
    #[arg(long)]
    data: PathBuf,
    /// Train/test split point.
    #[arg(long)]
    m_train: usize,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML manifest describing data, runs, and trials.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads (defaults to the rayon heuristic).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize)]
struct SizeReport {
    kind: String,
    depth: usize,
    free_params: usize,
    param_bound: f64,
    formula_depth: f64,
    formula: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(
                e.downcast_ref::<relukit::Error>(),
                Some(relukit::Error::InvalidParam(_)) | Some(relukit::Error::DimMismatch(_))
            );
            ExitCode::from(if usage { EXIT_USAGE } else { 1 })
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Construct(args) => construct(args),
        Command::Verify(args) => verify(args),
        Command::Capacity(args) => capacity(args),
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
    }
}

fn parse_range(s: &str) -> anyhow::Result<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| anyhow::anyhow!("range must look like lo:hi, got '{s}'"))?;
    Ok((a.parse()?, b.parse()?))
}

fn construct(args: ConstructArgs) -> anyhow::Result<ExitCode> {
    let cfg = GateConfig::new(args.theta, args.ltilde, args.eps, args.arity.max(2))?;
    let lt = args.ltilde;
    let (net, report): (ReluNet, SizeReport) = match args.kind.as_str() {
        "psi" => {
            let net = psi_net();
            let report = size_report("psi", &net, 1.0, "one hidden layer, 8d+4 parameters", None);
            (net, report)
        }
        "square" => {
            let net = square_gate(&cfg)?;
            let d = (2 * lt + 8) as f64;
            let report = size_report("square", &net, d, "2*ltilde + 8", None);
            (net, report)
        }
        "product" => {
            let net = productl_gate(&GateConfig::new(args.theta, lt, args.eps, args.arity)?)?;
            let d = product_gate_depth(lt, args.arity) as f64;
            let report = size_report("product", &net, d, "(2*ltilde + 8) * arity", None);
            (net, report)
        }
        "poly" => {
            let path = args
                .spec
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("poly needs --spec <file.json>"))?;
            let spec = PolySpec::from_json(&std::fs::read_to_string(path)?)?;
            let (net, poly_report) = sparse_poly_net(&spec, &cfg)?;
            let d = sparse_poly_depth(spec.degree, lt) as f64;
            let report = size_report(
                "poly",
                &net,
                d,
                "2*beta*ltilde + 8*beta + 1",
                Some(format!(
                    "mu = {}, per-monomial accuracy = {}",
                    poly_report.sparsity, poly_report.per_monomial_accuracy
                )),
            );
            (net, report)
        }
        "smooth" => {
            let name = args
                .target
                .as_deref()
                .ok_or_else(|| anyhow::anyhow!("smooth needs --target <name>"))?;
            let f = target_by_name(name, args.dim, args.r)?;
            let build = smooth_net(&f, args.eps, &cfg)?;
            let (s, _) = smoothness_split(args.r)?;
            let d = smooth_depth(args.dim, s, lt) as f64;
            let report = size_report(
                "smooth",
                &build.net,
                d,
                "2(d+s)ltilde + 8(d+s) + 3",
                Some(format!(
                    "N = {}, nu = {}, branches = {}",
                    build.report.n_grid, build.report.per_gate_accuracy, build.report.branches
                )),
            );
            (build.net, report)
        }
        "composite" => {
            let path = args
                .spec
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("composite needs --spec <file.json>"))?;
            let file = CompositeSpecFile::from_json(&std::fs::read_to_string(path)?)?;
            let spec = file.resolve()?;
            let build = composite_net(&spec, args.eps, &cfg)?;
            let d = composite_depth(spec.n_blocks(), spec.outer.r, lt, spec.order())? as f64;
            let report = size_report(
                "composite",
                &build.net,
                d,
                "L(d*,r,ltilde) + 2*iota*ltilde + 8*iota + 1",
                Some(format!(
                    "nu1 = {}, nu2 = {}, assumption = {}",
                    build.report.nu_inner, build.report.nu_outer, build.report.assumption_holds
                )),
            );
            (build.net, report)
        }
        "radial" => {
            let name = args.target.as_deref().unwrap_or("sin_pi_x1");
            let g = target_by_name(name, 1, args.r)?;
            let build = radial_net(&g, args.dim, args.n_budget)?;
            let d = radial_corollary_depth(args.r)?;
            let report = size_report(
                "radial",
                &build.net,
                d,
                "4(1+s+2)(r+1)/tau + 8(1+s) + 20",
                Some(format!(
                    "epsilon = {}, ltilde = {}",
                    build.epsilon, build.cfg.l_tilde
                )),
            );
            (build.net, report)
        }
        "partial-radial" => {
            let d_prime = args
                .dprime
                .ok_or_else(|| anyhow::anyhow!("partial-radial needs --dprime"))?;
            anyhow::ensure!(d_prime <= args.dim, "need dprime <= dim");
            let d_star = args.dim - d_prime + 1;
            let name = args.target.as_deref().unwrap_or("sin_pi_x1");
            let g = target_by_name(name, d_star, args.r)?;
            let build = partial_radial_net(&g, args.dim, d_prime, args.n_budget)?;
            let d = composite_depth(d_star, args.r, build.cfg.l_tilde, 2)? as f64;
            let report = size_report(
                "partial-radial",
                &build.net,
                d,
                "L(d-d'+1,r,ltilde) + 4*ltilde + 17",
                Some(format!(
                    "epsilon = {}, ltilde = {}",
                    build.epsilon, build.cfg.l_tilde
                )),
            );
            (build.net, report)
        }
        other => anyhow::bail!("unknown construction kind '{other}'"),
    };

    std::fs::write(&args.out, net.to_json()?)?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = args.report {
        std::fs::write(path, &json)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn size_report(
    kind: &str,
    net: &ReluNet,
    formula_depth: f64,
    formula: &str,
    notes: Option<String>,
) -> SizeReport {
    SizeReport {
        kind: kind.into(),
        depth: net.depth(),
        free_params: net.count_free_params(),
        param_bound: net.param_bound(),
        formula_depth,
        formula: formula.into(),
        notes,
    }
}

struct Oracle {
    f: Box<dyn Fn(&[f64]) -> anyhow::Result<f64>>,
    lo: f64,
    hi: f64,
}

fn resolve_oracle(name: &str, input_dim: usize) -> anyhow::Result<Oracle> {
    if let Some(rest) = name.strip_prefix("poly:") {
        let spec = PolySpec::from_json(&std::fs::read_to_string(rest)?)?;
        anyhow::ensure!(spec.dim == input_dim, "poly dim != net input dim");
        return Ok(Oracle {
            f: Box::new(move |x| Ok(eval_poly(&spec, x)?)),
            lo: -1.0,
            hi: 1.0,
        });
    }
    if let Some(rest) = name.strip_prefix("smooth:") {
        let (tname, r) = rest
            .split_once(':')
            .map(|(a, b)| (a.to_string(), b.parse::<f64>()))
            .ok_or_else(|| anyhow::anyhow!("smooth oracle is smooth:<name>:<r>"))?;
        let f = target_by_name(&tname, input_dim, r?)?;
        return Ok(Oracle {
            f: Box::new(move |x| Ok(f.value(x))),
            lo: -1.0,
            hi: 1.0,
        });
    }
    if let Some(rest) = name.strip_prefix("composite:") {
        let spec = CompositeSpecFile::from_json(&std::fs::read_to_string(rest)?)?.resolve()?;
        anyhow::ensure!(
            spec.input_dim() == input_dim,
            "composite dim != net input dim"
        );
        return Ok(Oracle {
            f: Box::new(move |x| Ok(eval_composite(&spec, x)?)),
            lo: -1.0,
            hi: 1.0,
        });
    }
    match name {
        "psi" => Ok(Oracle {
            f: Box::new(|x| Ok(psi(x[0]))),
            lo: -3.0,
            hi: 3.0,
        }),
        "square" => Ok(Oracle {
            f: Box::new(|x| Ok(x[0] * x[0])),
            lo: 0.0,
            hi: 1.0,
        }),
        "product" => Ok(Oracle {
            f: Box::new(|x| Ok(x.iter().product())),
            lo: -1.0,
            hi: 1.0,
        }),
        "product2" => Ok(Oracle {
            f: Box::new(|x| Ok(x[0] * x[1])),
            lo: -2.0,
            hi: 2.0,
        }),
        "zero" => Ok(Oracle {
            f: Box::new(|_| Ok(0.0)),
            lo: -1.0,
            hi: 1.0,
        }),
        other => anyhow::bail!("unknown oracle '{other}'"),
    }
}

fn verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let net = ReluNet::from_json(&std::fs::read_to_string(&args.net)?)?;
    let oracle = resolve_oracle(&args.oracle, net.input_dim)?;
    let d = net.input_dim;

    let mut max_err: f64 = 0.0;
    let mut sum_err = 0.0;
    let mut count = 0usize;
    let mut scratch = relukit::net::Scratch::default();
    let mut check = |x: &[f64]| -> anyhow::Result<()> {
        let got = net.eval_scratch(x, &mut scratch)?[0];
        let want = (oracle.f)(x)?;
        let err = (got - want).abs();
        max_err = max_err.max(err);
        sum_err += err;
        count += 1;
        Ok(())
    };

    match args.mode.as_str() {
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let mut x = vec![0.0; d];
            for _ in 0..args.samples {
                for v in x.iter_mut() {
                    *v = rng.gen_range(oracle.lo..oracle.hi);
                }
                check(&x)?;
            }
        }
        "grid" => {
            anyhow::ensure!(d <= 2, "grid mode supports 1- and 2-d nets");
            let side = if d == 1 {
                args.samples.max(2)
            } else {
                (args.samples as f64).sqrt().ceil() as usize
            };
            let coord =
                |i: usize| oracle.lo + (oracle.hi - oracle.lo) * i as f64 / (side - 1) as f64;
            if d == 1 {
                for i in 0..side {
                    check(&[coord(i)])?;
                }
            } else {
                for i in 0..side {
                    for j in 0..side {
                        check(&[coord(i), coord(j)])?;
                    }
                }
            }
        }
        other => anyhow::bail!("unknown mode '{other}'"),
    }

    let pass = max_err <= args.eps;
    let out = serde_json::json!({
        "oracle": args.oracle,
        "mode": args.mode,
        "seed": args.seed,
        "samples": count,
        "max_abs_err": max_err,
        "mean_abs_err": sum_err / count as f64,
        "epsilon": args.eps,
        "pass": pass,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY_FAILED)
    })
}

fn capacity(args: CapacityArgs) -> anyhow::Result<ExitCode> {
    let (lo, hi) = parse_range(&args.l_range)?;
    let (lo, hi) = (lo as u32, hi as u32);
    anyhow::ensure!(lo >= 1 && hi >= lo, "bad l-range");
    let template = CapacityQuery {
        n: args.n,
        l: lo,
        r_bound: args.r_bound,
        d_max: args.d_max,
        epsilon: args.epsilon,
        c_dim: args.c_dim,
    };
    let target = match args.target {
        Some(t) => t,
        None => deep_log_covering_bound(&template)?,
    };
    let ls: Vec<u32> = (lo..=hi).collect();
    let curve = iso_capacity_curve(target, &template, &ls)?;
    let mut w = String::from("L,n,log2_bound\n");
    for p in &curve.points {
        w.push_str(&format!("{},{},{}\n", p.l, p.n, p.log2_bound));
    }
    std::fs::write(&args.out, w)?;
    for l in &curve.skipped {
        eprintln!("warning: no feasible n at L = {l} for target {target}");
    }
    println!(
        "{}",
        serde_json::json!({
            "target_log2": target,
            "points": curve.points.len(),
            "skipped": curve.skipped,
            "out": args.out,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<ExitCode> {
    let ds = match args.generator.as_str() {
        "square" => datagen::gen_square_feature(args.m, args.seed)?,
        "partial-radial" => datagen::gen_partial_radial(
            args.m,
            args.k
                .ok_or_else(|| anyhow::anyhow!("partial-radial needs --k"))?,
            args.seed,
        )?,
        "radial-noisy" => {
            datagen::gen_radial_noisy(args.m, args.sigma2.unwrap_or(0.1), args.seed)?
        }
        "mmi" => datagen::gen_mmi(
            args.m,
            args.seed,
            parse_range(&args.mag_range)?,
            parse_range(&args.dist_range)?,
            if args.log10 {
                MmiLog::Base10
            } else {
                MmiLog::Natural
            },
        )?,
        other => anyhow::bail!("unknown generator '{other}'"),
    };
    ds.write_csv_path(&args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "generator": args.generator,
            "m": ds.len(),
            "dim": ds.dim(),
            "seed": args.seed,
            "out": args.out,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let cfg: TrainConfig = toml::from_str(&std::fs::read_to_string(&args.config)?)?;
    let ds = relukit::datagen::Dataset::read_csv_path(&args.data)?;
    let (train_ds, test_ds) = ds.split(args.m_train)?;
    let data = SplitData::from_datasets(&train_ds, &test_ds)?;
    let report: RunReport = train(&cfg, &data)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "{}",
        serde_json::json!({
            "final_train_mse": report.final_train_mse,
            "test_mse": report.test.mse,
            "valid": report.valid,
            "out": args.out,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let manifest: SweepManifest = toml::from_str(&std::fs::read_to_string(&args.manifest)?)?;
    let result = run_sweep(&manifest, args.workers)?;
    result.write_outputs(Path::new(&args.out_dir))?;
    println!(
        "{}",
        serde_json::json!({
            "sweep": manifest.name,
            "manifest_hash": result.manifest_hash,
            "runs": result.outcomes.len(),
            "trials": manifest.trials,
            "out_dir": args.out_dir,
        })
    );
    if result.all_diverged() {
        eprintln!("warning: every run diverged");
        return Ok(ExitCode::from(EXIT_ALL_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}
