use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use wsod_core::check;
use wsod_core::harness::ablation::{comparison_table, rows, run_ablation};
use wsod_core::harness::eval::detect_split;
use wsod_core::harness::{
    evaluate, format_detections, gen_dataset, train, train_observed, Model, PreparedScene,
    RunConfig, ScoreSource,
};
use wsod_core::inference::eval_ilc;
use wsod_core::Error;

#[derive(Parser)]
#[command(
    name = "wsod",
    version,
    about = "Weakly-supervised detection on a synthetic benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override one configuration key, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark and write `dataset.json`.
    GenData(Common),
    /// Train and write `checkpoint.bin` and `train_log.jsonl`.
    Train(Common),
    /// Evaluate a checkpoint; writes `metrics.json` and `detections.txt`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the detections stream for one split.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Train and evaluate the component ladder; writes `ablation.tsv`.
    Ablate(Common),
    /// Run the gradient, oracle and geometry suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// ILC accuracy against training iteration, written to `ilc_series.tsv`.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Iterations between samples.
        #[arg(long, default_value_t = 100)]
        every: usize,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_config(c: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, bytes)?;
    Ok(p)
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_model(path: &Path) -> std::result::Result<Model, Failure> {
    let mut f =
        fs::File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(Model::read_checkpoint(&mut f)?)
}

#[derive(Serialize)]
struct SceneDump<'a> {
    scene: &'a wsod_core::harness::SyntheticScene,
    proposals: &'a [wsod_core::boxgeom::BBox],
}

fn dump(scenes: &[PreparedScene]) -> Vec<SceneDump<'_>> {
    scenes
        .iter()
        .map(|p| SceneDump {
            scene: &p.scene,
            proposals: &p.proposals,
        })
        .collect()
}

#[derive(Serialize)]
struct DatasetDump<'a> {
    config_digest: String,
    train: Vec<SceneDump<'a>>,
    test: Vec<SceneDump<'a>>,
}

fn gen_data(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let data = gen_dataset(&cfg, cfg.seed);
    let doc = DatasetDump {
        config_digest: cfg.digest(),
        train: dump(&data.train),
        test: dump(&data.test),
    };
    let text = serde_json::to_string(&doc).expect("dataset serializes");
    write(&c.out, "config.toml", cfg.to_toml())?;
    let p = write(&c.out, "dataset.json", &text)?;
    println!("{}  {}", sha256(text.as_bytes()), p.display());
    Ok(())
}

fn run_train(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let data = gen_dataset(&cfg, cfg.seed);
    let outcome = train(&cfg, &data.train)?;
    write(&c.out, "config.toml", cfg.to_toml())?;
    write(&c.out, "train_log.jsonl", outcome.log_text())?;
    let bytes = outcome.model.checkpoint_bytes();
    let p = write(&c.out, "checkpoint.bin", &bytes)?;
    println!("{}  {}", sha256(&bytes), p.display());
    Ok(())
}

fn run_eval(c: &Common, checkpoint: Option<&Path>) -> Outcome {
    let cfg = load_config(c)?;
    let ckpt = checkpoint.map_or_else(|| c.out.join("checkpoint.bin"), Path::to_path_buf);
    let model = load_model(&ckpt)?;
    let data = gen_dataset(&cfg, cfg.seed);
    let ev = evaluate(&model, &cfg, &data)?;
    write(&c.out, "detections.txt", format_detections(&ev.detections))?;
    write(&c.out, "metrics.json", ev.metrics.to_json())?;
    print!("{}", ev.metrics.to_json());
    Ok(())
}

fn run_infer(c: &Common, checkpoint: Option<&Path>, split: Split) -> Outcome {
    let cfg = load_config(c)?;
    let ckpt = checkpoint.map_or_else(|| c.out.join("checkpoint.bin"), Path::to_path_buf);
    let model = load_model(&ckpt)?;
    let data = gen_dataset(&cfg, cfg.seed);
    let scenes = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let dets = detect_split(&model, &cfg, scenes, ScoreSource::Configured)?;
    let text = format_detections(&dets);
    let p = write(&c.out, "detections.txt", &text)?;
    println!("{}  {}", sha256(text.as_bytes()), p.display());
    Ok(())
}

fn run_ablate(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let data = gen_dataset(&cfg, cfg.seed);
    let runs = run_ablation(&cfg, &data)?;
    for r in &runs {
        let dir = c.out.join(r.name.replace('+', "plus_"));
        write(&dir, "config.toml", r.config.to_toml())?;
        write(&dir, "metrics.json", r.metrics.to_json())?;
    }
    let table = comparison_table(&rows(&runs));
    write(&c.out, "ablation.tsv", &table)?;
    print!("{table}");
    Ok(())
}

fn run_check(seed: u64) -> Outcome {
    let reports = check::run_all(seed);
    let mut failed = Vec::new();
    for r in &reports {
        println!("{}", r.summary());
        if let Some(f) = &r.first_failure {
            println!("  first failure: {f}");
        }
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "failed suites: {}",
            failed.join(", ")
        )))
    }
}

fn plot_data(c: &Common, every: usize) -> Outcome {
    if every == 0 {
        return Err(Failure::Usage("--every must be positive".into()));
    }
    let cfg = load_config(c)?;
    let data = gen_dataset(&cfg, cfg.seed);
    let truth = data.test_records();
    let mut table = String::from("iteration\tpipeline\tmidn\tscc\n");
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    train_observed(&cfg, &data.train, every, |step, model| {
        let mut row = step.to_string();
        for source in [
            ScoreSource::Pipeline,
            ScoreSource::Midn,
            ScoreSource::Corrected,
        ] {
            let dets = detect_split(model, &cfg, &data.test, source)?;
            row.push('\t');
            row.push_str(&cell(eval_ilc(&dets, &truth)?));
        }
        table.push_str(&row);
        table.push('\n');
        Ok(())
    })?;
    write(&c.out, "ilc_series.tsv", &table)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Train(c) => run_train(c),
        Command::Eval { common, checkpoint } => run_eval(common, checkpoint.as_deref()),
        Command::Infer {
            common,
            checkpoint,
            split,
        } => run_infer(common, checkpoint.as_deref(), *split),
        Command::Ablate(c) => run_ablate(c),
        Command::Check { seed } => run_check(*seed),
        Command::PlotData { common, every } => plot_data(common, *every),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(3)
        }
    }
}
