//! Command-line entry point: data generation, training, evaluation,
//! prediction, the missing-data robustness sweep, and the ablation
//! matrix.
//!
//! Every command resolves its effective configuration from defaults,
//! then an optional flat `key = value` config file, then flags (flags
//! win and overrides are echoed), prints it before doing any work, and
//! exits 0 on success, 1 on runtime failure, 2 on configuration errors.
//! Log verbosity comes from `MFTRAJ_LOG` (error | info | debug).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use mftraj::behavior::{behavior_tensor, write_feature_csv};
use mftraj::checkpoint::{
    checkpoint_from_model, model_from_checkpoint, Checkpoint,
};
use mftraj::config::{apply_kv, model_config_to_kv, parse_kv};
use mftraj::error::{MftrajError, Result};
use mftraj::eval::{
    ablation_matrix, evaluate, robustness_sweep, robustness_sweep_retrain, write_report_csv,
    ReportRow,
};
use mftraj::graph::{graph_series, write_adjacency_csv};
use mftraj::metrics::MetricReport;
use mftraj::model::{MfTrajModel, ModelConfig};
use mftraj::rng::split_seed;
use mftraj::scene::{drop_frames_scoped, impute_linear, split_history_future, TrajectoryScene};
use mftraj::scene_io::{load_scenes, save_mask_sidecar, save_scenes, CsvSchema};
use mftraj::synthetic::{generate_synthetic, ScenarioKind, SyntheticSpec, DEFAULT_NOISE_STD};
use mftraj::train::{train, write_loss_curve};

#[derive(Parser)]
#[command(
    name = "mftraj",
    about = "Map-free behavior-aware trajectory prediction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenario CSVs (train/val/test splits).
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus the loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a scene set.
    Eval(EvalArgs),
    /// Predict trajectories, optionally under the drop-k protocol.
    Predict(PredictArgs),
    /// Missing-data robustness sweep over drop counts.
    Robustness(RobustnessArgs),
    /// Train and evaluate ablation models A through F.
    Ablate(AblateArgs),
}

/// Model/run settings shared by all commands; flags override the config
/// file, which overrides defaults.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel workers for batch evaluation and training.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Base learning rate (the late rate stays at its configured value).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Interaction radius in meters.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    history_frames: Option<usize>,
    #[arg(long)]
    future_frames: Option<usize>,
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    beta_kl: Option<f64>,
    /// Use per-frame neighbor counts instead of the cumulative degree.
    #[arg(long)]
    instantaneous_degree: bool,
    /// Also drop frames from surrounding agents under the drop protocol.
    #[arg(long)]
    drop_all_agents: bool,
    // ablation toggles
    #[arg(long)]
    disable_behavior: bool,
    #[arg(long)]
    absolute_coords: bool,
    #[arg(long)]
    disable_interaction: bool,
    #[arg(long)]
    disable_linformer: bool,
    #[arg(long)]
    plain_gcn: bool,
}

impl ConfigArgs {
    /// Defaults -> config file -> flags, echoing flag overrides.
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                MftrajError::Config(format!("cannot read config {}: {}", path.display(), e))
            })?;
            for (key, value) in parse_kv(&text)? {
                apply_kv(&mut cfg, &key, &value)?;
            }
        }

        macro_rules! flag {
            ($field:ident, $value:expr) => {
                if let Some(v) = $value {
                    if cfg.$field != v && self.config.is_some() {
                        println!(
                            "# flag override: {} = {} (config file had {})",
                            stringify!($field),
                            v,
                            cfg.$field
                        );
                    }
                    cfg.$field = v;
                }
            };
        }
        flag!(seed, self.seed);
        flag!(workers, self.workers);
        flag!(epochs, self.epochs);
        flag!(learning_rate, self.lr);
        flag!(batch_size, self.batch);
        flag!(radius_m, self.radius);
        flag!(history_frames, self.history_frames);
        flag!(future_frames, self.future_frames);
        flag!(sample_rate_hz, self.sample_rate);
        flag!(hidden_dim, self.hidden_dim);
        flag!(beta_kl, self.beta_kl);
        cfg.instantaneous_degree |= self.instantaneous_degree;
        cfg.drop_all_agents |= self.drop_all_agents;
        cfg.disable_behavior |= self.disable_behavior;
        cfg.absolute_coords |= self.absolute_coords;
        cfg.disable_interaction |= self.disable_interaction;
        cfg.disable_linformer |= self.disable_linformer;
        cfg.plain_gcn |= self.plain_gcn;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn echo_config(cfg: &ModelConfig) {
    println!("effective configuration:");
    print!("{}", model_config_to_kv(cfg));
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Scenario kind: constant_velocity | lane_change | car_follow | merge.
    #[arg(long)]
    kind: String,
    /// Number of training scenes.
    #[arg(long)]
    scenes: usize,
    /// Validation scenes (default: scenes / 5).
    #[arg(long)]
    val_scenes: Option<usize>,
    /// Test scenes (default: scenes / 5).
    #[arg(long)]
    test_scenes: Option<usize>,
    /// Frames per scene (default: history + future).
    #[arg(long)]
    frames: Option<usize>,
    /// Gaussian position noise sigma in meters.
    #[arg(long)]
    noise: Option<f64>,
    /// Output directory for train.csv / val.csv / test.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training scene CSV.
    #[arg(long)]
    data: PathBuf,
    /// Optional validation scene CSV.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss-curve CSV (default: <checkpoint>.loss.csv).
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Dump the raw behavior feature tensors to this CSV.
    #[arg(long)]
    dump_features: Option<PathBuf>,
    /// Dump per-frame adjacency matrices to this CSV.
    #[arg(long)]
    dump_adjacency: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Prediction CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Drop this many interior history frames before predicting.
    #[arg(long)]
    drop: Option<usize>,
    /// Seed for the drop selection.
    #[arg(long, default_value_t = 0)]
    drop_seed: u64,
    /// Write the observation-mask sidecar here.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated drop counts.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0usize, 3, 5, 8, 10])]
    drops: Vec<usize>,
    /// Comma-separated drop seeds to average over.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Retrain per drop count on equally degraded training data.
    #[arg(long)]
    retrain: bool,
    /// Training CSV, required with --retrain.
    #[arg(long)]
    train_data: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Scene CSV; an 80/20 train/test split is derived internally.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("MFTRAJ_LOG", "info"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Robustness(args) => cmd_robustness(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    if let Err(err) = result {
        eprintln!("error: {}", err);
        std::process::exit(err.exit_code());
    }
}

/// Loads a scene CSV and splits each track into history + future per the
/// config. Tracks of exactly `history` frames stay inference-only.
fn load_split(path: &Path, cfg: &ModelConfig) -> Result<Vec<TrajectoryScene>> {
    let scenes = load_scenes(path, &CsvSchema::default(), cfg.sample_rate_hz)?;
    scenes
        .into_iter()
        .map(|s| {
            if s.history_len() == cfg.history_frames {
                Ok(s)
            } else if s.history_len() == cfg.history_frames + cfg.future_frames {
                split_history_future(&s, cfg.history_frames, cfg.future_frames)
            } else {
                Err(MftrajError::Config(format!(
                    "scene '{}' has {} frames; expected {} (history) or {} (history + future)",
                    s.scene_id,
                    s.history_len(),
                    cfg.history_frames,
                    cfg.history_frames + cfg.future_frames
                )))
            }
        })
        .collect()
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    echo_config(&cfg);
    let kind: ScenarioKind = args.kind.parse()?;
    let frames = args.frames.unwrap_or(cfg.history_frames + cfg.future_frames);
    let noise = args.noise.unwrap_or(DEFAULT_NOISE_STD);

    std::fs::create_dir_all(&args.out)?;
    let splits = [
        ("train.csv", args.scenes, "gen-train"),
        ("val.csv", args.val_scenes.unwrap_or(args.scenes / 5), "gen-val"),
        ("test.csv", args.test_scenes.unwrap_or(args.scenes / 5), "gen-test"),
    ];
    for (file, count, label) in splits {
        let spec = SyntheticSpec {
            kind,
            scenes: count,
            frames,
            sample_rate_hz: cfg.sample_rate_hz,
            noise_std: noise,
            seed: split_seed(cfg.seed, label),
        };
        let scenes = generate_synthetic(&spec)?;
        let path = args.out.join(file);
        save_scenes(&path, &scenes)?;
        println!("wrote {} scenes to {}", count, path.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    echo_config(&cfg);

    let train_scenes = load_split(&args.data, &cfg)?;
    let val_scenes = match &args.val {
        Some(p) => load_split(p, &cfg)?,
        None => Vec::new(),
    };

    let mut model = MfTrajModel::new(cfg.clone())?;
    println!("trainable parameters: {}", model.param_count());

    // sidecar so the run is reproducible from artifacts alone
    let sidecar = args.checkpoint.with_extension("config");
    std::fs::write(&sidecar, model_config_to_kv(&cfg))?;

    let outcome = train(&mut model, &train_scenes, &val_scenes)?;

    let ck = checkpoint_from_model(&model, Some(&outcome.optimizer));
    ck.save(&args.checkpoint)?;
    let curve_path = args
        .loss_curve
        .unwrap_or_else(|| args.checkpoint.with_extension("loss.csv"));
    write_loss_curve(&curve_path, &outcome.loss_curve)?;

    if let Some(last) = outcome.loss_curve.last() {
        println!("final train loss: {}", last.train_loss);
    }
    println!("checkpoint: {}", args.checkpoint.display());
    println!("loss curve: {}", curve_path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<MfTrajModel> {
    let ck = Checkpoint::load(path)?;
    model_from_checkpoint(&ck)
}

fn print_report(label: &str, r: &MetricReport) {
    println!(
        "{}: minADE {:.4} m, minFDE {:.4} m, MR {:.2}%, scenes {}",
        label,
        r.min_ade_m,
        r.min_fde_m,
        r.miss_rate * 100.0,
        r.scene_count
    );
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut model = load_model(&args.checkpoint)?;
    // worker count is a run-level knob, not part of the trained model
    if let Some(w) = args.config.workers {
        model.config.workers = w;
    }
    echo_config(&model.config);
    let scenes = load_split(&args.data, &model.config)?;

    if let Some(path) = &args.dump_features {
        let bcfg = model.config.behavior_config();
        let entries: Result<Vec<_>> = scenes
            .iter()
            .map(|s| Ok((s.scene_id.clone(), behavior_tensor(s, model.config.radius_m, &bcfg)?)))
            .collect();
        write_feature_csv(path, &entries?)?;
        println!("feature dump: {}", path.display());
    }
    if let Some(path) = &args.dump_adjacency {
        let entries: Result<Vec<_>> = scenes
            .iter()
            .map(|s| Ok((s.scene_id.clone(), graph_series(s, model.config.radius_m)?)))
            .collect();
        write_adjacency_csv(path, &entries?)?;
        println!("adjacency dump: {}", path.display());
    }

    let report = evaluate(&model, &scenes)?;
    print_report("complete", &report);
    write_report_csv(
        &args.out,
        &[ReportRow { label: "complete".into(), report }],
    )?;
    println!("report: {}", args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let mut model = load_model(&args.checkpoint)?;
    if let Some(w) = args.config.workers {
        model.config.workers = w;
    }
    echo_config(&model.config);
    let scenes = load_split(&args.data, &model.config)?;

    let inputs: Vec<TrajectoryScene> = match args.drop {
        None | Some(0) => scenes.clone(),
        Some(k) => {
            let mut masks = Vec::with_capacity(scenes.len());
            let mut degraded = Vec::with_capacity(scenes.len());
            for s in &scenes {
                let (dropped, mask) = drop_frames_scoped(
                    s,
                    k,
                    args.drop_seed,
                    model.config.drop_all_agents,
                )?;
                degraded.push(impute_linear(&dropped, &mask)?);
                masks.push(mask);
            }
            if let Some(path) = &args.mask_out {
                let entries: Vec<_> = scenes.iter().zip(masks.iter()).collect();
                save_mask_sidecar(path, &entries)?;
                println!("mask sidecar: {}", path.display());
            }
            degraded
        }
    };

    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(w, "scene_id,step,x,y")?;
    for scene in &inputs {
        let pred = model.predict(scene)?;
        for (i, p) in pred.iter().enumerate() {
            writeln!(w, "{},{},{},{}", scene.scene_id, i + 1, p.x, p.y)?;
        }
    }
    w.flush()?;
    println!("predictions: {}", args.out.display());
    Ok(())
}

fn cmd_robustness(args: RobustnessArgs) -> Result<()> {
    let mut model = load_model(&args.checkpoint)?;
    if let Some(w) = args.config.workers {
        model.config.workers = w;
    }
    echo_config(&model.config);
    let scenes = load_split(&args.data, &model.config)?;

    let rows = if args.retrain {
        let train_path = args.train_data.as_ref().ok_or_else(|| {
            MftrajError::Config("--retrain requires --train-data".into())
        })?;
        let train_scenes = load_split(train_path, &model.config)?;
        robustness_sweep_retrain(&model.config, &train_scenes, &scenes, &args.drops, &args.seeds)?
    } else {
        robustness_sweep(&model, &scenes, &args.drops, &args.seeds)?
    };
    for row in &rows {
        print_report(&row.label, &row.report);
    }
    write_report_csv(&args.out, &rows)?;
    println!("report: {}", args.out.display());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    echo_config(&cfg);
    let scenes = load_split(&args.data, &cfg)?;
    let rows = ablation_matrix(&scenes, &cfg)?;
    for row in &rows {
        print_report(&row.label, &row.report);
    }
    write_report_csv(&args.out, &rows)?;
    println!("report: {}", args.out.display());
    Ok(())
}
