//! Command-line front end for the shallow-water topography toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Logs go to stderr;
//! result paths and metrics go to stdout.

mod config;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use config::Config;
use swetopo_core::evaluation::{self, ExperimentConfig};
use swetopo_core::field::Field2D;
use swetopo_core::finn::FinnParams;
use swetopo_core::format;
use swetopo_core::inversion;
use swetopo_core::scenario::{self, Role};
use swetopo_core::solver;
use swetopo_core::training::{self, HSource};

#[derive(Parser)]
#[command(
    name = "swetopo",
    about = "Shallow-water wave datasets, stencil-network surrogates, and topography inversion",
    disable_help_subcommand = true
)]
struct Cli {
    /// Layered config file (`key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set sim.cfl=0.5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of simulated sequences plus a manifest.
    Generate {
        #[arg(long, value_name = "train|infer|test")]
        role: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run the reference solver once and store the sequence.
    Simulate {
        /// Topography container; mutually exclusive with --h-flat.
        #[arg(long, value_name = "FILE")]
        h_file: Option<PathBuf>,
        /// Constant depth in meters.
        #[arg(long, value_name = "METERS")]
        h_flat: Option<f64>,
        /// Bump center in meters, e.g. --ic 515625,515625.
        #[arg(long, value_name = "X0,Y0")]
        ic: String,
        /// Bump width in meters (defaults to ic.sigma_m).
        #[arg(long, value_name = "METERS")]
        sigma: Option<f64>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train surrogate parameters on a dataset.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Best-checkpoint output path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Loss log path (`epoch=<n> loss=<v>` lines).
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Reconstruct the topography from a dataset with frozen parameters.
    Infer {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Inferred-H output (field-only sequence container).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Iteration log path (`iter=<n> data=<v> smooth=<v> edge=<v>`).
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        /// Also store an H snapshot every K iterations.
        #[arg(long, value_name = "K")]
        snapshot_every: Option<usize>,
        /// Snapshot directory (defaults to `<out>.snapshots`).
        #[arg(long, value_name = "DIR")]
        snapshot_dir: Option<PathBuf>,
    },
    /// Rollout MSE of a checkpoint on a dataset.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Evaluate with this H instead of each sequence's stored truth.
        #[arg(long, value_name = "FILE")]
        h: Option<PathBuf>,
    },
    /// Run the full train-infer-evaluate experiment over several seeds.
    Report {
        /// Comma-separated seeds, e.g. --seeds 1,2,3.
        #[arg(long)]
        seeds: String,
        #[arg(long, value_name = "DIR")]
        workdir: PathBuf,
        /// Writes `<prefix>.txt` and `<prefix>.csv`.
        #[arg(long, value_name = "PREFIX")]
        out_prefix: PathBuf,
    },
    /// Render a stored field or sequence frame as PGM or CSV.
    Render {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Frame index for sequence containers.
        #[arg(long)]
        frame: Option<usize>,
        /// Which field to render: eta, u, v, or h.
        #[arg(long, default_value = "eta")]
        what: String,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, value_name = "pgm|csv")]
        fmt: String,
        /// Render -H instead of H (depth drawn downward).
        #[arg(long)]
        negate_depth: bool,
    },
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolved_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(usage)?;
    }
    for assignment in &cli.sets {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
        cfg.set(key, value).map_err(usage)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolved_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.print());
        return Ok(());
    }
    let command = cli
        .command
        .ok_or_else(|| usage("a subcommand is required (see --help)"))?;
    match command {
        Command::Generate {
            role,
            count,
            seed,
            out,
        } => cmd_generate(&cfg, &role, count, seed, &out),
        Command::Simulate {
            h_file,
            h_flat,
            ic,
            sigma,
            out,
        } => cmd_simulate(&cfg, h_file.as_deref(), h_flat, &ic, sigma, &out),
        Command::Train { data, out, log } => cmd_train(&cfg, &data, &out, log.as_deref()),
        Command::Infer {
            data,
            checkpoint,
            out,
            log,
            snapshot_every,
            snapshot_dir,
        } => cmd_infer(
            &cfg,
            &data,
            &checkpoint,
            &out,
            log.as_deref(),
            snapshot_every,
            snapshot_dir.as_deref(),
        ),
        Command::Eval {
            data,
            checkpoint,
            h,
        } => cmd_eval(&cfg, &data, &checkpoint, h.as_deref()),
        Command::Report {
            seeds,
            workdir,
            out_prefix,
        } => cmd_report(&cfg, &seeds, &workdir, &out_prefix),
        Command::Render {
            input,
            frame,
            what,
            out,
            fmt,
            negate_depth,
        } => cmd_render(&input, frame, &what, &out, &fmt, negate_depth),
    }
}

fn cmd_generate(
    cfg: &Config,
    role: &str,
    count: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let role = Role::parse(role).ok_or_else(|| usage(format!("bad role {role:?}")))?;
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let sim = cfg.sim().map_err(usage)?;
    eprintln!(
        "generating {count} {} sequences on a {}x{} grid, T = {} ...",
        role.as_str(),
        sim.grid.nx,
        sim.grid.ny,
        sim.steps
    );
    let manifest =
        scenario::generate_dataset(role, count, seed, &sim, cfg.sigma_m, &cfg.arctan(), out)
            .map_err(|e| anyhow!(e))?;
    println!("{}", scenario::manifest_path(&manifest.dir).display());
    Ok(())
}

fn read_h_field(path: &Path) -> Result<Field2D, CliError> {
    let seq = format::read_sequence(path)
        .with_context(|| format!("reading H from {}", path.display()))?;
    Ok(seq.h)
}

fn cmd_simulate(
    cfg: &Config,
    h_file: Option<&Path>,
    h_flat: Option<f64>,
    ic: &str,
    sigma: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let sim = cfg.sim().map_err(usage)?;
    let h = match (h_file, h_flat) {
        (Some(path), None) => {
            let h = read_h_field(path)?;
            if h.shape() != (sim.grid.nx, sim.grid.ny) {
                return Err(usage(format!(
                    "H in {} is {}x{}, config grid is {}x{}",
                    path.display(),
                    h.nx(),
                    h.ny(),
                    sim.grid.nx,
                    sim.grid.ny
                )));
            }
            h
        }
        (None, Some(depth)) => {
            if depth <= 0.0 {
                return Err(usage("--h-flat must be positive"));
            }
            Field2D::constant(sim.grid.nx, sim.grid.ny, depth)
        }
        _ => return Err(usage("exactly one of --h-file or --h-flat is required")),
    };

    let (x0, y0) = ic
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
        .ok_or_else(|| usage(format!("--ic expects X0,Y0 in meters, got {ic:?}")))?;
    let sigma_m = sigma.unwrap_or(cfg.sigma_m);
    let eta0 =
        scenario::gaussian_ic(&sim.grid, x0, y0, sigma_m).map_err(|e| usage(e.to_string()))?;

    eprintln!("integrating {} steps of dt = {:.1} s ...", sim.steps, sim.dt_s);
    let rollout = solver::reference_rollout(&eta0, &h, &sim).map_err(|e| anyhow!(e))?;
    let seq = format::Sequence {
        h,
        eta_frames: rollout.eta_frames,
        u_frames: rollout.u_frames,
        v_frames: rollout.v_frames,
        dx_m: sim.grid.dx_m(),
        dt_s: sim.dt_s,
        g_m_s2: sim.g_m_s2,
        x0_m: x0,
        y0_m: y0,
        sigma_m,
        phi: 0.0,
        beta: 1.0,
    };
    format::write_sequence(out, &seq).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_train(cfg: &Config, data: &Path, out: &Path, log: Option<&Path>) -> Result<(), CliError> {
    let manifest = scenario::read_manifest(data)
        .with_context(|| format!("reading manifest in {}", data.display()))?;
    let params = FinnParams::init(cfg.hidden_width, cfg.train.seed);
    let params = set_activation(params, cfg.activation);
    eprintln!(
        "training {} parameters on {} sequences for {} epochs ...",
        params.param_count(),
        manifest.count,
        cfg.train.epochs
    );
    let outcome = training::train(&manifest, &cfg.train, Some(params), Some(out))
        .map_err(|e| anyhow!(e))?;
    eprintln!(
        "best epoch {} with loss {:e}",
        outcome.best_epoch, outcome.best_loss
    );
    if let Some(log_path) = log {
        std::fs::write(log_path, training::format_loss_log(&outcome.log))
            .with_context(|| format!("writing {}", log_path.display()))?;
    }
    println!("{}", out.display());
    Ok(())
}

fn set_activation(
    mut params: FinnParams,
    activation: swetopo_core::finn::Activation,
) -> FinnParams {
    for net in params.nets_mut() {
        net.activation = activation;
    }
    params
}

fn cmd_infer(
    cfg: &Config,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    log: Option<&Path>,
    snapshot_every: Option<usize>,
    snapshot_dir: Option<&Path>,
) -> Result<(), CliError> {
    let manifest = scenario::read_manifest(data)
        .with_context(|| format!("reading manifest in {}", data.display()))?;
    let loaded = format::read_checkpoint(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;

    let mut icfg = cfg.infer.clone();
    if let Some(k) = snapshot_every {
        icfg.snapshot_every = k;
    }
    eprintln!(
        "inferring topography over {} iterations (batch {}) ...",
        icfg.iterations, icfg.batch_size
    );
    let outcome =
        inversion::infer_topography(&manifest, &loaded.params, &icfg).map_err(|e| anyhow!(e))?;
    if outcome.aborted {
        eprintln!("warning: objective went non-finite; best snapshot retained");
    }
    eprintln!(
        "minimum data term {:e} at iteration {} ({} clamped cells)",
        outcome.best_data_term, outcome.best_iteration, outcome.clamp_events
    );

    format::write_field_only(out, &outcome.h_best)
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(log_path) = log {
        std::fs::write(log_path, inversion::format_iter_log(&outcome.log))
            .with_context(|| format!("writing {}", log_path.display()))?;
    }
    if !outcome.snapshots.is_empty() {
        let dir = snapshot_dir
            .map(Path::to_path_buf)
            .unwrap_or_else(|| out.with_extension("snapshots"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (iter, h) in &outcome.snapshots {
            let path = dir.join(format!("iter_{iter:05}.swe"));
            format::write_field_only(&path, h)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        eprintln!("{} snapshots in {}", outcome.snapshots.len(), dir.display());
    }
    println!("{}", out.display());
    Ok(())
}

fn cmd_eval(
    cfg: &Config,
    data: &Path,
    checkpoint: &Path,
    h: Option<&Path>,
) -> Result<(), CliError> {
    let manifest = scenario::read_manifest(data)
        .with_context(|| format!("reading manifest in {}", data.display()))?;
    let loaded = format::read_checkpoint(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let provided = match h {
        Some(path) => Some(read_h_field(path)?),
        None => None,
    };
    let source = match &provided {
        Some(field) => HSource::Provided(field),
        None => HSource::True,
    };
    let mse = training::evaluate(&manifest, &loaded.params, source, cfg.eval_batch_size, None)
        .map_err(|e| anyhow!(e))?;
    println!("mse={mse}");
    Ok(())
}

fn cmd_report(
    cfg: &Config,
    seeds: &str,
    workdir: &Path,
    out_prefix: &Path,
) -> Result<(), CliError> {
    let seeds: Vec<u64> = seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("bad --seeds list {seeds:?}")))?;
    if seeds.is_empty() {
        return Err(usage("--seeds must name at least one seed"));
    }
    let sim = cfg.sim().map_err(usage)?;
    let experiment = ExperimentConfig {
        label: "FINN".into(),
        train_count: cfg.report_train_count,
        infer_count: cfg.report_infer_count,
        test_count: cfg.report_test_count,
        sim,
        sigma_m: cfg.sigma_m,
        arctan: cfg.arctan(),
        train: cfg.train,
        inverse: cfg.infer.clone(),
        eval_batch: cfg.eval_batch_size,
        concurrent_seeds: cfg.report_concurrent,
    };
    eprintln!(
        "running {} repetition(s): {} train / {} infer / {} test sequences each ...",
        seeds.len(),
        experiment.train_count,
        experiment.infer_count,
        experiment.test_count
    );
    let report =
        evaluation::run_experiment(&seeds, &experiment, workdir).map_err(|e| anyhow!(e))?;
    for (seed, error) in &report.failures {
        eprintln!("seed {seed} failed: {error}");
    }
    let text = evaluation::emit_text(&report).map_err(|e| anyhow!(e))?;
    let csv = evaluation::emit_csv(&report).map_err(|e| anyhow!(e))?;
    let txt_path = out_prefix.with_extension("txt");
    let csv_path = out_prefix.with_extension("csv");
    std::fs::write(&txt_path, &text).with_context(|| format!("writing {}", txt_path.display()))?;
    std::fs::write(&csv_path, &csv).with_context(|| format!("writing {}", csv_path.display()))?;
    eprint!("{text}");
    println!("{}", txt_path.display());
    println!("{}", csv_path.display());
    Ok(())
}

fn cmd_render(
    input: &Path,
    frame: Option<usize>,
    what: &str,
    out: &Path,
    fmt: &str,
    negate_depth: bool,
) -> Result<(), CliError> {
    let seq = format::read_sequence(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let field = match what {
        "h" => seq.h.clone(),
        "eta" | "u" | "v" => {
            let frames = match what {
                "eta" => &seq.eta_frames,
                "u" => &seq.u_frames,
                _ => &seq.v_frames,
            };
            if frames.is_empty() {
                // Field-only container: fall back to H so plain renders work.
                if what == "eta" && frame.is_none() {
                    seq.h.clone()
                } else {
                    return Err(usage(format!("{} holds no {what} frames", input.display())));
                }
            } else {
                let k = frame.unwrap_or(0);
                if k >= frames.len() {
                    return Err(usage(format!(
                        "frame {k} out of range (sequence has {} frames)",
                        frames.len()
                    )));
                }
                frames[k].clone()
            }
        }
        other => return Err(usage(format!("bad --what {other:?}"))),
    };
    let bytes = match fmt {
        "pgm" => render::to_pgm(&field, negate_depth),
        "csv" => {
            let field = if negate_depth { field.scale(-1.0) } else { field };
            render::to_csv(&field).into_bytes()
        }
        other => return Err(usage(format!("bad --fmt {other:?}, expected pgm or csv"))),
    };
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(())
}
