use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kqse::harness::{
    emit_plotdata, matched_grid, run_bounds, run_slopes, run_table1, run_table_s2, run_table_s3,
    run_table_s4, simulate_cf_grid, with_plan_workers, DataType, ExperimentPlan, Figure, SlopeKind,
};
use kqse::io;
use kqse::kcfe::{estimate_point, CFGrid};
use kqse::kde::{fd_histogram, kde_evaluate, BandwidthSpec, KernelSpec, UniformGrid};
use kqse::reconstruction::{
    overlap_with_reference, purity, reconstruct_rho, sup_error, trace_distance_pure, trace_power_3,
    validate_cf_grid, TailModel,
};
use kqse::sampling::{build_sampler_auto_with, derive_seed, mix_noise, SampleBatch};
use kqse::{KqseError, ReferenceState, Result};

#[derive(Parser)]
#[command(
    name = "kqse",
    version,
    about = "Kernel quantum state estimation experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Every flag overrides the matching key of the config file.
#[derive(Args)]
struct Global {
    /// TOML experiment plan
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repetitions L
    #[arg(long, global = true)]
    reps: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// 1000 repetitions
    #[arg(long, global = true)]
    full: bool,
    /// Samples per setting
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long = "n-mu", global = true)]
    n_mu: Option<usize>,
    #[arg(long = "mu-max", global = true)]
    mu_max: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// Phase setting for single-setting commands
    #[arg(long, global = true, allow_negative_numbers = true)]
    mu: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    nu: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw quadrature samples of the plan's state at its setting
    Sample {
        /// Mix in detection noise
        #[arg(long)]
        noisy: bool,
    },
    /// Kernel (or histogram) estimate of the tomogram
    Kde {
        /// Sample CSV; simulated from the plan when absent
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
        kernel: KernelArg,
        /// silverman, lscv, or a fixed width
        #[arg(long, default_value = "silverman")]
        bandwidth: String,
        #[arg(long)]
        histogram: bool,
    },
    /// KCFE at one batch, or a simulated CF lattice
    Kcfe {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Deconvolve detection noise (batch noise tag, else the plan's)
        #[arg(long)]
        deconvolve: bool,
        /// Data type of a simulated lattice
        #[arg(long, value_enum, default_value_t = DataArg::Corrected)]
        data: DataArg,
    },
    /// Density-matrix kernel from a CF lattice file, or from the exact CF
    Reconstruct {
        #[arg(long)]
        cf: Option<PathBuf>,
        /// Add the ground-state tail beyond mu_max
        #[arg(long)]
        tail: bool,
    },
    /// Purity, tr rho^3 and overlap with the plan's state
    Trace {
        #[arg(long)]
        cf: PathBuf,
    },
    /// Hermiticity, normalization and coherent-probe positivity
    Validate {
        #[arg(long)]
        cf: PathBuf,
    },
    /// Convergence slope: kde-mise, kcfe-mse or kqse-end2end
    Slopes { kind: String },
    /// Reproduce a results table
    Table {
        #[arg(value_enum)]
        which: TableArg,
    },
    /// Figure data: tomogram-kde, cf-corrected, rho-heatmap or wigner
    Plotdata { figure: String },
    /// Compare observed errors with the error bounds
    Bounds,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Gaussian,
    Epanechnikov,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataArg {
    Noiseless,
    Noisy,
    Corrected,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    #[value(name = "1")]
    One,
    S2,
    S3,
    S4,
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    command: &'a str,
    plan: &'a ExperimentPlan,
    #[serde(flatten)]
    result: T,
}

struct Ctx {
    plan: ExperimentPlan,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn sidecar<T: Serialize>(&self, stem: &str, command: &str, result: T) -> Result<()> {
        let path = self.path(&format!("{stem}.json"));
        io::write_json(
            &Sidecar {
                command,
                plan: &self.plan,
                result,
            },
            &path,
        )
    }

    /// Provenance next to outputs whose own sidecar holds data metadata.
    fn provenance(&self, stem: &str, command: &str) -> Result<()> {
        let path = self.path(&format!("{stem}.plan.json"));
        io::write_json(
            &Sidecar {
                command,
                plan: &self.plan,
                result: (),
            },
            &path,
        )
    }
}

fn resolve_plan(g: &Global) -> Result<ExperimentPlan> {
    let mut plan = match &g.config {
        Some(p) => ExperimentPlan::load(p)?,
        None => ExperimentPlan::default(),
    };
    if let Some(v) = g.seed {
        plan.run.seed = v;
    }
    if g.reps.is_some() {
        plan.run.reps = g.reps;
    }
    if g.workers.is_some() {
        plan.run.workers = g.workers;
    }
    plan.run.full |= g.full;
    if g.n.is_some() {
        plan.lattice.n = g.n;
        plan.lattice.n_values = None;
    }
    if g.n_mu.is_some() {
        plan.lattice.n_mu = g.n_mu;
    }
    if g.mu_max.is_some() {
        plan.lattice.mu_max = g.mu_max;
    }
    if let Some(k) = g.kappa {
        plan.noise.kappa = k;
    }
    if let Some(m) = g.mu {
        plan.setting.mu = m;
    }
    if let Some(v) = g.nu {
        plan.setting.nu = v;
    }
    plan.validate()?;
    Ok(plan)
}

fn load_batch(path: &Path, plan: &ExperimentPlan) -> Result<SampleBatch> {
    if io::sidecar_path(path).exists() {
        io::read_sample_batch(path)
    } else {
        io::import_samples(path, plan.phase_setting()?)
    }
}

fn simulated_batch(plan: &ExperimentPlan, noisy: bool) -> Result<SampleBatch> {
    let s = plan.phase_setting()?;
    let n = plan.lattice.n.unwrap_or(500);
    let seed = derive_seed(plan.run.seed, &[0]);
    let x = kqse::sampling::draw(
        &build_sampler_auto_with(plan.state, s, plan.run.sampler_points)?,
        n,
        seed,
    )?;
    Ok(if noisy {
        mix_noise(&x, &plan.noise_model()?, derive_seed(seed, &[1]))
    } else {
        x
    })
}

fn table1_lattice(plan: &ExperimentPlan) -> Result<kqse::harness::ResolvedLattice> {
    plan.lattice_for(plan.lattice.n.unwrap_or(415), Some((6.0, 36)))
}

fn probes() -> Vec<ReferenceState> {
    let mut v = Vec::new();
    for re in [-1.5, -0.75, 0.0, 0.75, 1.5] {
        for im in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            v.push(ReferenceState::coherent(re, im));
        }
    }
    v
}

fn run(cmd: &Cmd, ctx: &Ctx) -> Result<bool> {
    let plan = &ctx.plan;
    match cmd {
        Cmd::Sample { noisy } => {
            let b = simulated_batch(plan, *noisy)?;
            io::write_sample_batch(&b, &ctx.path("samples.csv"))?;
            ctx.provenance("samples", "sample")?;
            println!(
                "{} samples, mean {:.6}, variance {:.6}",
                b.len(),
                b.mean(),
                b.variance()
            );
        }
        Cmd::Kde {
            input,
            kernel,
            bandwidth,
            histogram,
        } => {
            let x = match input {
                Some(p) => load_batch(p, plan)?,
                None => simulated_batch(plan, false)?,
            };
            let est = if *histogram {
                fd_histogram(&x)?
            } else {
                let k = match kernel {
                    KernelArg::Gaussian => KernelSpec::GaussianStd,
                    KernelArg::Epanechnikov => KernelSpec::Epanechnikov,
                };
                let rule = match bandwidth.as_str() {
                    "silverman" => BandwidthSpec::Silverman,
                    "lscv" => BandwidthSpec::lscv_default(),
                    v => BandwidthSpec::Fixed(v.parse().map_err(|_| {
                        KqseError::Config(format!(
                            "bandwidth '{v}' is not silverman, lscv or a number"
                        ))
                    })?),
                };
                let h = rule.resolve(&x, k)?;
                let (lo, hi) = x
                    .sorted()
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
                let pad = 5.0 * h;
                kde_evaluate(&x, k, h, UniformGrid::new(lo - pad, hi + pad, 801)?)?
            };
            io::write_density_estimate(&est, Some(x.seed), &ctx.path("kde.csv"))?;
            ctx.provenance("kde", "kde")?;
            println!(
                "{} estimate, width {:.6}, n = {}",
                if *histogram { "histogram" } else { "kernel" },
                est.h_used,
                est.n
            );
        }
        Cmd::Kcfe {
            input,
            deconvolve,
            data,
        } => match input {
            Some(p) => {
                let x = load_batch(p, plan)?;
                let noise = if *deconvolve {
                    Some(x.noise_tag.map_or_else(|| plan.noise_model(), Ok)?)
                } else {
                    None
                };
                let est = estimate_point(&x, plan.run.kernel, noise.as_ref())?;
                ctx.sidecar("kcfe", "kcfe", est)?;
                println!(
                    "phi_hat = {:.6} {:+.6}i, h = {:.6}",
                    est.value.re, est.value.im, est.h_used
                );
            }
            None => {
                let lat = table1_lattice(plan)?;
                let d = match data {
                    DataArg::Noiseless => DataType::Noiseless,
                    DataArg::Noisy => DataType::Noisy,
                    DataArg::Corrected => DataType::Corrected,
                };
                let grid = simulate_cf_grid(plan, &lat, d, 0)?;
                io::write_cf_grid(&grid, &ctx.path("cf.csv"))?;
                ctx.provenance("cf", "kcfe")?;
                println!(
                    "CF lattice {} x {}, n = {}, T = {}",
                    grid.mu.len,
                    grid.nu.len,
                    lat.n,
                    lat.t_munu()
                );
            }
        },
        Cmd::Reconstruct { cf, tail } => {
            let tail = tail.then_some(TailModel::GroundState);
            let rho = match cf {
                Some(p) => {
                    let g = io::read_cf_grid(p)?;
                    reconstruct_rho(&g, &matched_grid(g.mu, g.nu)?, tail)?
                }
                None => {
                    let (_, _, grid) = table1_lattice(plan)?.axes()?;
                    reconstruct_rho(&plan.state, &grid, tail)?
                }
            };
            io::write_density_kernel(&rho, &ctx.path("rho.csv"))?;
            ctx.provenance("rho", "reconstruct")?;
            for w in &rho.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} x {} kernel, trace {:.6}, sup |rho - rho_{}|^2 = {:.3e}",
                rho.grid.points(),
                rho.grid.points(),
                rho.trace(),
                plan.state.label(),
                sup_error(&rho, &plan.state)
            );
        }
        Cmd::Trace { cf } => {
            // Sampling noise leaves an imaginary residue of order 1/sqrt(n)
            // that the Hermitian projection removes.
            let g = io::read_cf_grid(cf)?.hermitian_part();
            #[derive(Serialize)]
            struct Traces {
                overlap: f64,
                trace_distance: f64,
                purity: Option<f64>,
                trace_rho3: Option<f64>,
                notes: Vec<String>,
            }
            let mut notes = Vec::new();
            let mut keep = |r: Result<f64>| r.map_err(|e| notes.push(e.to_string())).ok();
            let ov = overlap_with_reference(&plan.state, &g, 1.0)?;
            let t = Traces {
                overlap: ov,
                trace_distance: trace_distance_pure(ov),
                purity: keep(purity(&g, 1.0)),
                trace_rho3: keep(trace_power_3(&g)),
                notes,
            };
            println!(
                "overlap with {} {:.6}, trace distance {:.6}",
                plan.state.label(),
                t.overlap,
                t.trace_distance
            );
            ctx.sidecar("trace", "trace", t)?;
        }
        Cmd::Validate { cf } => {
            let g: CFGrid = io::read_cf_grid(cf)?;
            let report = validate_cf_grid(&g, &probes());
            let ok = report.passed();
            println!(
                "hermitian {} ({:.2e}), normalized {}, positive {} ({:.2e}): {}",
                report.hermitian,
                report.worst_hermiticity,
                report.normalized,
                report.positive,
                report.worst_positivity,
                if ok { "valid" } else { "INVALID" }
            );
            ctx.sidecar("validation", "validate", &report)?;
            return Ok(ok);
        }
        Cmd::Slopes { kind } => {
            let kind: SlopeKind = kind.parse()?;
            let r = run_slopes(plan, kind)?;
            let stem = format!(
                "slopes_{}",
                serde_json::to_value(kind)?.as_str().unwrap_or("run")
            );
            io::write_rows(&r.rows, &ctx.path(&format!("{stem}.csv")))?;
            println!(
                "slope {:.3} (95% CI {:.3} .. {:.3})",
                r.fit.slope, r.fit.ci_low, r.fit.ci_high
            );
            ctx.sidecar(&stem, "slopes", &r)?;
        }
        Cmd::Table { which } => {
            let (stem, rows) = match which {
                TableArg::One => ("table_1", serde_json::to_value(run_table1(plan)?)?),
                TableArg::S2 => ("table_s2", serde_json::to_value(run_table_s2(plan)?)?),
                TableArg::S3 => ("table_s3", serde_json::to_value(run_table_s3(plan)?)?),
                TableArg::S4 => ("table_s4", serde_json::to_value(run_table_s4(plan)?)?),
            };
            write_value_rows(&rows, &ctx.path(&format!("{stem}.csv")))?;
            ctx.sidecar(
                stem,
                "table",
                serde_json::json!({ "rows": rows.as_array().map_or(0, |r| r.len()) }),
            )?;
            println!("{stem}.csv written");
        }
        Cmd::Plotdata { figure } => {
            let fig: Figure = figure.parse()?;
            let t = emit_plotdata(plan, fig)?;
            t.write_csv(&ctx.path(&format!("plot_{figure}.csv")))?;
            ctx.sidecar(
                &format!("plot_{figure}"),
                "plotdata",
                serde_json::json!({ "columns": t.columns }),
            )?;
            println!("plot_{figure}.csv: {} rows", t.rows.len());
        }
        Cmd::Bounds => {
            let r = run_bounds(plan)?;
            io::write_rows(&r.estimation, &ctx.path("bounds_estimation.csv"))?;
            io::write_rows(&r.total, &ctx.path("bounds_total.csv"))?;
            ctx.sidecar("bounds", "bounds", &r)?;
            let holds = r.estimation.iter().all(|x| x.observed <= x.bound)
                && r.total.iter().all(|x| x.observed <= x.bound);
            println!("bounds hold: {holds}");
        }
    }
    Ok(true)
}

/// Rows serialized through JSON so that the table variants share a writer.
fn write_value_rows(rows: &serde_json::Value, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let Some(rows) = rows.as_array() else {
        return Ok(());
    };
    if let Some(serde_json::Value::Object(first)) = rows.first() {
        w.write_record(first.keys())?;
    }
    for r in rows {
        if let serde_json::Value::Object(m) = r {
            w.write_record(m.values().map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            }))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn exit_code(e: &KqseError) -> u8 {
    match e {
        KqseError::Config(_) => 2,
        KqseError::NumericalGate(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve_plan(&cli.global).and_then(|plan| {
        std::fs::create_dir_all(&cli.global.out)?;
        let ctx = Ctx {
            plan,
            out: cli.global.out.clone(),
        };
        with_plan_workers(&ctx.plan, || run(&cli.cmd, &ctx))?
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
