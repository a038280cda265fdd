//! `ffact` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ffact::data::{write_cache, SequenceBatch};
use ffact::error::{Error, Result};
use ffact::eval::{classifier_accuracy, evaluate, export_grid, metrics_csv, relabel, traverse, Metric, Schedule};
use ffact::ot::{latent_transport_report, run_bb_demo, BbConfig};
use ffact::real::Real;
use ffact::train::{
    checkpoint_config, configure_threads, image_shape, load_checkpoint, objective_options, preset_bases, test_set,
    train, Mode, Precision, Preset, TrainConfig, TrainState,
};
use ffact::vae::encode_batch;

#[derive(Parser)]
#[command(
    name = "ffact",
    version,
    about = "Flow-factorized latent flows: training, evaluation and transport checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a `key = value` config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out sequences; writes CSV.
    Eval(EvalArgs),
    /// Decode latent traversals under a schedule into a PPM grid.
    Traverse(TraverseArgs),
    /// Transport diagnostics for a checkpoint, or the 1D transport demo.
    VerifyOt(VerifyOtArgs),
    /// Render a preset's sequences into a dataset cache.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set iterations=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// equiv-out, equiv-out-baseline, equiv-latent or elbo.
    #[arg(long)]
    metric: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraverseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Segments `k[+k..]:steps` separated by commas; `-` holds still.
    #[arg(long)]
    schedule: String,
    #[arg(long)]
    out: PathBuf,
    /// Held-out sequences whose first frames start the rows.
    #[arg(long, default_value_t = 4)]
    rows: usize,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct VerifyOtArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Train one potential to carry N(0,1) to N(2,1) and check the action.
    #[arg(long)]
    demo: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    /// `train` or `test`.
    #[arg(long, default_value = "test")]
    split: String,
    /// Number of base images for the train split (default: the preset's).
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long)]
    mnist_images: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads().and_then(|_| run(cli.command)) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => {
            let mut cfg = TrainConfig::load(&a.config)?;
            for o in &a.overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{o}'")))?;
                cfg.set(k.trim(), v.trim())
                    .map_err(|message| Error::Config { line: 0, message })?;
            }
            cfg.validate()?;
            match cfg.precision {
                Precision::F32 => run_train::<f32>(&cfg),
                Precision::F64 => run_train::<f64>(&cfg),
            }
        }
        Command::Eval(a) => {
            let metric = Metric::from_name(&a.metric)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown metric '{}'", a.metric)))?;
            let csv = match ckpt_precision(&a.ckpt)? {
                Precision::F32 => run_eval::<f32>(&a.ckpt, metric)?,
                Precision::F64 => run_eval::<f64>(&a.ckpt, metric)?,
            };
            emit(&csv, a.out.as_deref())
        }
        Command::Traverse(a) => {
            let schedule: Schedule = a.schedule.parse()?;
            match ckpt_precision(&a.ckpt)? {
                Precision::F32 => run_traverse::<f32>(&a, &schedule),
                Precision::F64 => run_traverse::<f64>(&a, &schedule),
            }
        }
        Command::VerifyOt(a) => match a.ckpt {
            Some(path) => {
                let csv = match ckpt_precision(&path)? {
                    Precision::F32 => run_transport_report::<f32>(&path)?,
                    Precision::F64 => run_transport_report::<f64>(&path)?,
                };
                emit(&csv, None)
            }
            None => run_demo(),
        },
        Command::GenData(a) => {
            let preset = Preset::from_name(&a.preset)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown preset '{}'", a.preset)))?;
            let mut cfg = TrainConfig::preset(preset);
            cfg.mnist_images = a.mnist_images.clone().or(cfg.mnist_images);
            if let Some(n) = a.bases {
                cfg.train_bases = n;
                cfg.test_bases = n;
            }
            cfg.validate()?;
            let batch: SequenceBatch<f32> = match a.split.as_str() {
                "test" => test_set(&cfg)?,
                "train" => train_split(&cfg)?,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "split must be train or test, got '{other}'"
                    )))
                }
            };
            write_cache(&batch, &a.out)?;
            eprintln!("wrote {} sequences to {}", batch.len(), a.out.display());
            Ok(())
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ckpt_precision(path: &Path) -> Result<Precision> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint_config(&bytes)?.precision)
}

fn run_train<R: Real>(cfg: &TrainConfig) -> Result<()> {
    let out = train::<R>(cfg)?;
    if let Some(last) = out.history.last() {
        eprintln!(
            "trained {} iterations; final loss {:.4}, elbo {:.4}",
            out.state.iteration,
            last.loss,
            last.elbo()
        );
    }
    match &cfg.out_dir {
        Some(dir) => eprintln!("checkpoint: {}", dir.join("checkpoint.ffckpt").display()),
        None => eprintln!("no out_dir set; nothing saved"),
    }
    Ok(())
}

/// The held-out batch with labels mapped onto the model's class indices.
fn eval_batch<R: Real>(state: &TrainState<R>) -> Result<SequenceBatch<R>> {
    let batch = test_set::<R>(&state.config)?;
    Ok(match state.config.mode {
        Mode::Supervised => batch,
        Mode::Weak => {
            let acc = classifier_accuracy(&state.model.vae, &batch)?;
            eprintln!(
                "classifier accuracy {:.4}, label mapping {:?}",
                acc.accuracy, acc.mapping
            );
            relabel(&batch, &acc.mapping)
        }
    })
}

fn run_eval<R: Real>(ckpt: &Path, metric: Metric) -> Result<String> {
    let state = load_checkpoint::<R>(ckpt)?;
    let batch = eval_batch(&state)?;
    let opts = objective_options(&state.config)?;
    let rows = evaluate(&state.model.vae, &state.model.bank, &batch, metric, &opts)?;
    Ok(metrics_csv(&rows))
}

fn run_traverse<R: Real>(a: &TraverseArgs, schedule: &Schedule) -> Result<()> {
    let state = load_checkpoint::<R>(&a.ckpt)?;
    let batch = test_set::<R>(&state.config)?;
    let clock = objective_options(&state.config)?.clock;
    let rows = batch
        .sequences
        .iter()
        .take(a.rows.max(1))
        .map(|s| Ok(traverse(&state.model.vae, &state.model.bank, s.frame(0), schedule, clock)?.frames))
        .collect::<Result<Vec<_>>>()?;
    export_grid(&rows, image_shape(&state.config), &a.out)?;
    eprintln!(
        "wrote {} x {} frames to {}",
        rows.len(),
        schedule.total_steps() + 1,
        a.out.display()
    );
    Ok(())
}

fn run_transport_report<R: Real>(ckpt: &Path) -> Result<String> {
    let state = load_checkpoint::<R>(ckpt)?;
    let batch = test_set::<R>(&state.config)?;
    let images: Vec<R> = batch
        .sequences
        .iter()
        .flat_map(|s| s.frame(0).iter().copied())
        .collect();
    let (mu, _) = encode_batch(&state.model.vae, &images, batch.len())?;
    let clock = objective_options(&state.config)?.clock;
    let rows = latent_transport_report(&state.model.bank, &mu, state.config.steps, clock)?;
    let mut csv = String::from("k,transport_cost,gaussian_half_w2,hj_residual\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.k, r.transport_cost, r.gaussian_half_w2, r.hj_residual
        ));
    }
    Ok(csv)
}

fn run_demo() -> Result<()> {
    let (_, r) = run_bb_demo(&BbConfig::default())?;
    let cost_err = (r.transport_cost - r.optimal_cost).abs() / r.optimal_cost;
    let hj_ratio = r.final_hj / r.initial_hj;
    println!("transport_cost,optimal_cost,relative_error,initial_hj,final_hj,hj_ratio,terminal_kl");
    println!(
        "{},{},{},{},{},{},{}",
        r.transport_cost, r.optimal_cost, cost_err, r.initial_hj, r.final_hj, hj_ratio, r.terminal_kl
    );
    if cost_err < 0.15 && hj_ratio < 0.1 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "transport demo out of tolerance: cost error {cost_err:.3}, HJ ratio {hj_ratio:.3}"
        )))
    }
}

fn train_split(cfg: &TrainConfig) -> Result<SequenceBatch<f32>> {
    use ffact::data::{all_pairs, build_sequences, standard_transforms};
    let transforms = standard_transforms(cfg.steps)?;
    let k = cfg.num_potentials.min(transforms.len());
    let bases = preset_bases::<f32>(cfg, cfg.data_seed, cfg.train_bases, 0)?;
    build_sequences(&bases, image_shape(cfg), &transforms[..k], &all_pairs(bases.len(), k))
}
