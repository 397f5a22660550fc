//! `metricmap` command-line front-end.
//!
//! Exit codes: 0 ok, 2 usage, 3 data error, 4 training divergence, 5 internal.
//! Failures print `error[<code>]: <message>` on stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metricmap::benchmark::{
    evaluate_model, parse_method_list, project, report_json, run_benchmark, summarize, write_report_csv, EvalReport,
};
use metricmap::contour::{
    cutoff_mask, grid_eval, normalize_projection, BBox, ContourEstimator, KernelSpec, Projection2D, DEFAULT_GRID,
    DEFAULT_TAU,
};
use metricmap::dataio::{
    check_compatible, load_checkpoint, load_config, load_dataset, save_checkpoint, save_dataset, Dataset,
};
use metricmap::model::{Mode, ModelState};
use metricmap::synthetic::{synthetic_task, SyntheticSpec};
use metricmap::trainer::{train_with_callback, TrainConfig};
use metricmap::{par, Error, ErrorClass};

#[derive(Parser)]
#[command(name = "metricmap", version, about = "Metric landscape maps for embedding datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a projection model; writes a checkpoint and a history file.
    Train(TrainArgs),
    /// Write the normalised 2D position of every point as CSV (id,x,y,score).
    Project {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a contour grid over the normalised map.
    Contour(ContourArgs),
    /// In- and out-of-sample errors plus trustworthiness for one model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// `.json` for JSON, anything else for CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare methods over several seeds.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Comma separated, e.g. `akrmap,akrmap_no_kr(silverman),pca_rbf(loocv,scale=0.5)`.
        #[arg(
            long,
            default_value = "akrmap,akrmap_no_gk,akrmap_no_kr(silverman),pca_rbf(silverman)"
        )]
        methods: String,
        /// Runs seeds `0..K`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Base training configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
    /// Generate the synthetic two-bump task.
    Synth {
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history (JSON) [default: checkpoint path with `.history.json`]
    #[arg(long)]
    history: Option<PathBuf>,
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// Capped at the dataset size [default: 1000]
    #[arg(long)]
    batch: Option<usize>,
    /// [default: 0.002]
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the regression term [default: 0.125]
    #[arg(long)]
    lambda: Option<f64>,
    /// Validation-query weight [default: 1.0]
    #[arg(long)]
    w1: Option<f64>,
    /// Training-query weight [default: 0.3]
    #[arg(long)]
    w2: Option<f64>,
    /// [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the regression term (neighbourhood loss only).
    #[arg(long)]
    no_kr: bool,
    /// Keep the kernel fixed at the standard t-kernel.
    #[arg(long)]
    fixed_kernel: bool,
    /// none, l1 or l2 [default: none]
    #[arg(long)]
    balance: Option<String>,
    /// [default: 2.0]
    #[arg(long)]
    mu: Option<f64>,
    /// [default: 1.0]
    #[arg(long)]
    mu1: Option<f64>,
    /// [default: 1.0]
    #[arg(long)]
    k: Option<f64>,
    /// Single thread, fixed reduction order: bit-identical reruns.
    #[arg(long)]
    deterministic: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig, Error> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { c.$f = v; })*};
        }
        set!(epochs, batch, lr, lambda, w1, w2, seed, balance, mu, mu1, k);
        c.ablate_kr |= self.no_kr;
        c.ablate_gk |= self.fixed_kernel;
        c.deterministic |= self.deterministic;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct ContourArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Grid export (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Cells per side.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// Normalised box `xmin,xmax,ymin,ymax`.
    #[arg(long, default_value = "0,1,0,1")]
    bbox: BBox,
    /// Cells farther than this from every point are masked.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Also write a PNG raster.
    #[arg(long)]
    image: Option<PathBuf>,
}

fn load_pair(model: &Path, data: &Path) -> Result<(ModelState, Dataset), Error> {
    let mut m = load_checkpoint(model)?;
    let ds = load_dataset(data)?;
    check_compatible(&m, &ds)?;
    m.mode = Mode::Inference;
    Ok((m, ds))
}

fn projection(model: &ModelState, ds: &Dataset) -> Result<Projection2D, Error> {
    normalize_projection(&project(model, ds.features().view())?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_reports(reports: &[EvalReport], out: &Path) -> Result<(), Error> {
    if out.extension().is_some_and(|e| e == "json") {
        std::fs::write(out, report_json(reports)?)?;
        Ok(())
    } else {
        write_report_csv(reports, create(out)?)
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let cfg = args.config()?;
    if cfg.deterministic && !par::force_single_thread() {
        return Err(Error::InvalidConfig(
            "could not restrict the thread pool to one thread".into(),
        ));
    }
    let ds = load_dataset(&args.data)?;
    let x = ds.features();
    let s = ds.scores_f64();
    log::info!("training on {} points, d={}", ds.n(), ds.d());
    let (model, history) = train_with_callback(x.view(), &s, &cfg, |r| {
        log::info!(
            "epoch {:>3}  loss {:.5}  kl {:.5}  mse {:.5}  alpha {:.4}  beta {:.4}  {:.1}s",
            r.epoch,
            r.loss.total,
            r.loss.kl,
            r.loss.mse_r,
            r.alpha,
            r.beta,
            r.seconds
        );
    })?;
    save_checkpoint(&model, &args.out)?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.json"));
    std::fs::write(&history_path, serde_json::to_string_pretty(&history)?)?;
    log::info!("wrote {} and {}", args.out.display(), history_path.display());
    Ok(())
}

fn cmd_project(model: &Path, data: &Path, out: &Path) -> Result<(), Error> {
    let (m, ds) = load_pair(model, data)?;
    let p = projection(&m, &ds)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["id", "x", "y", "score"])?;
    for (i, q) in p.normalized.iter().enumerate() {
        w.write_record([ds.id(i), q[0].to_string(), q[1].to_string(), ds.scores[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_contour(a: &ContourArgs) -> Result<(), Error> {
    let (m, ds) = load_pair(&a.model, &a.data)?;
    let p = projection(&m, &ds)?;
    let est = ContourEstimator::from_projection(&p, ds.scores_f64(), KernelSpec::generalized(m.kernel))?;
    let mut grid = grid_eval(&est, a.bbox, a.grid, a.grid)?;
    cutoff_mask(&mut grid, &p.normalized, a.tau)?;
    std::fs::write(&a.out, grid.to_json()?)?;
    if let Some(img) = &a.image {
        grid.write_png(img)?;
    }
    Ok(())
}

fn cmd_eval(model: &Path, train: &Path, test: &Path, out: &Path) -> Result<(), Error> {
    let (m, tr) = load_pair(model, train)?;
    let te = load_dataset(test)?;
    check_compatible(&m, &te)?;
    let report = evaluate_model(&m, &tr, &te)?;
    println!(
        "out-of-sample mae {:.6} rmse {:.6}  in-sample mae {:.6} rmse {:.6}",
        report.out_of_sample.mae, report.out_of_sample.rmse, report.in_sample.mae, report.in_sample.rmse
    );
    write_reports(&[report], out)
}

fn cmd_bench(
    data: &Path,
    test: &Path,
    methods: &str,
    seeds: u64,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), Error> {
    let methods = parse_method_list(methods)?;
    let base = match config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    let tr = load_dataset(data)?;
    let te = load_dataset(test)?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let reports = run_benchmark(&tr, &te, &methods, &seeds, &base)?;
    for s in summarize(&reports) {
        println!("{:<40} median out mae {:.6} rmse {:.6}", s.method, s.mae, s.rmse);
    }
    write_reports(&reports, out)
}

fn cmd_serve(model: &Path, data: &Path, host: IpAddr, port: u16) -> Result<(), Error> {
    let (m, ds) = load_pair(model, data)?;
    let state = metricmap_server::AppState::new(m, ds)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(metricmap_server::serve(state, SocketAddr::new(host, port)))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Project { model, data, out } => cmd_project(&model, &data, &out),
        Command::Contour(a) => cmd_contour(&a),
        Command::Eval {
            model,
            train,
            test,
            out,
        } => cmd_eval(&model, &train, &test, &out),
        Command::Bench {
            data,
            test,
            methods,
            seeds,
            config,
            out,
        } => cmd_bench(&data, &test, &methods, seeds, config.as_deref(), &out),
        Command::Serve {
            model,
            data,
            port,
            host,
        } => cmd_serve(&model, &data, host, port),
        Command::Synth {
            train_out,
            test_out,
            n_train,
            n_test,
            dim,
            seed,
        } => {
            let task = synthetic_task(&SyntheticSpec {
                n_train,
                n_test,
                dim,
                seed,
                ..Default::default()
            })?;
            save_dataset(&task.train, &train_out)?;
            save_dataset(&task.test, &test_out)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Divergence => 4,
        ErrorClass::Internal => 5,
    }
}

/// Parses `args` (including the program name) and runs the command. A failure
/// carries the exit code and the message for stderr.
fn execute<I, T>(args: I) -> Result<(), (u8, String)>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err((2, format!("error[usage]: {}\n{}", e.kind(), e.render()))),
    };
    run(cli).map_err(|e| (exit_code(&e), format!("error[{}]: {e}", e.code())))
}

fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match execute(args) {
        Ok(()) => 0,
        Err((code, message)) => {
            eprintln!("{message}");
            let _ = std::io::stderr().flush();
            code
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ExitCode::from(run_args(std::env::args_os()))
}

#[cfg(test)]
mod tests;
