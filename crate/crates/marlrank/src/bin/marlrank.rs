//! Command-line entry point: toy-example reproduction, training, evaluation
//! and gradient checking.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 data error.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use marlrank::env::RewardSchedule;
use marlrank::letor::{self, Dataset, FoldLayout, FoldSplit, LabelPolicy, NormScheme};
use marlrank::nn::{self, Activation, ModelParams};
use marlrank::toy;
use marlrank::trainer::{self, EvalReport, TrainConfig, EVAL_CUTOFFS};

#[derive(Parser)]
#[command(name = "marlrank", version, about = "Multi-agent reinforced learning to rank")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduce the six-document averaging example and check it against the
    /// published score table.
    Toy {
        #[arg(long, default_value_t = 3)]
        steps: usize,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Pre-train and REINFORCE-train on a 5-fold LETOR layout.
    Train(TrainArgs),
    /// Evaluate a checkpoint: per-step NDCG trace and final summary.
    Evaluate(EvalArgs),
    /// Finite-difference gradient checks, network-level and end-to-end.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately corrupt one gradient entry (check must then fail).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Dataset root containing Fold1..Fold5.
    #[arg(long, env = "MARLRANK_DATA_ROOT")]
    data: PathBuf,
    /// Fold selection: 1..5 or `all`.
    #[arg(long, default_value = "all")]
    fold: String,
    /// Output directory for CSV files, checkpoints and the config echo.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Flat key=value config file; CLI flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Episode length for both training and evaluation.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accept labels > 2 by clamping them to 2.
    #[arg(long)]
    clamp_labels: bool,
    /// Disable rayon data parallelism at runtime.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stop patience on validation NDCG@10; 0 disables.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    update_per_query: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// A parameter file, or a directory holding fold<K>_best.json files.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

#[derive(Debug, Clone)]
struct Settings {
    train: TrainConfig,
    epochs: usize,
    patience: usize,
    normalization: NormScheme,
    label_policy: LabelPolicy,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig::default(),
            epochs: 50,
            patience: 0,
            normalization: NormScheme::QueryMinMax,
            label_policy: LabelPolicy::Strict,
        }
    }
}

impl Settings {
    fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = |what: &str| format!("invalid {what} value `{value}`");
        match key {
            "gamma" => self.train.gamma = value.parse().map_err(|_| bad(key))?,
            "lr" | "learning_rate" => {
                self.train.learning_rate = value.parse().map_err(|_| bad(key))?
            }
            "T" | "t" => {
                let t: usize = value.parse().map_err(|_| bad(key))?;
                self.train.t_train = t;
                self.train.t_eval = t;
            }
            "k" => self.train.k = value.parse().map_err(|_| bad(key))?,
            "cutoff" => self.train.reward_cutoff = value.parse().map_err(|_| bad(key))?,
            "hidden" => self.train.hidden = value.parse().map_err(|_| bad(key))?,
            "activation" => self.train.activation = value.parse().map_err(|e: String| e)?,
            "schedule" => self.train.schedule = value.parse().map_err(|e: String| e)?,
            "normalization" => self.normalization = value.parse().map_err(|e: String| e)?,
            "seed" => self.train.seed = value.parse().map_err(|_| bad(key))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "patience" => self.patience = value.parse().map_err(|_| bad(key))?,
            "pretrain_epochs" => {
                self.train.pretrain_epochs = value.parse().map_err(|_| bad(key))?
            }
            "pretrain_lr" => self.train.pretrain_lr = value.parse().map_err(|_| bad(key))?,
            "update_per_query" => {
                self.train.update_per_query = value.parse().map_err(|_| bad(key))?
            }
            "parallel" => self.train.parallel = value.parse().map_err(|_| bad(key))?,
            "clamp_labels" => {
                let v: bool = value.parse().map_err(|_| bad(key))?;
                self.label_policy = if v {
                    LabelPolicy::ClampHigh
                } else {
                    LabelPolicy::Strict
                };
            }
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
            self.apply_kv(key.trim(), value.trim())
                .map_err(|m| CliError::Usage(format!("config line {}: {m}", i + 1)))?;
        }
        Ok(())
    }

    fn apply_common(&mut self, args: &CommonArgs) -> Result<(), CliError> {
        if let Some(p) = &args.config {
            self.load_file(p)?;
        }
        let u = |m: String| CliError::Usage(m);
        if let Some(v) = args.gamma {
            self.train.gamma = v;
        }
        if let Some(v) = args.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = args.t {
            if v == 0 {
                return Err(u("T must be >= 1".into()));
            }
            self.train.t_train = v;
            self.train.t_eval = v;
        }
        if let Some(v) = args.k {
            self.train.k = v;
        }
        if let Some(v) = args.cutoff {
            self.train.reward_cutoff = v;
        }
        if let Some(v) = args.hidden {
            self.train.hidden = v;
        }
        if let Some(v) = &args.activation {
            self.train.activation = v.parse().map_err(u)?;
        }
        if let Some(v) = &args.schedule {
            self.train.schedule = v.parse().map_err(u)?;
        }
        if let Some(v) = &args.normalization {
            self.normalization = v.parse().map_err(u)?;
        }
        if let Some(v) = args.seed {
            self.train.seed = v;
        }
        if args.clamp_labels {
            self.label_policy = LabelPolicy::ClampHigh;
        }
        if args.sequential {
            self.train.parallel = false;
        }
        if !(0.0 < self.train.gamma && self.train.gamma <= 1.0) {
            return Err(u(format!("gamma must be in (0,1], got {}", self.train.gamma)));
        }
        if self.train.learning_rate <= 0.0 {
            return Err(u("learning rate must be > 0".into()));
        }
        Ok(())
    }

    fn echo(&self) -> String {
        let t = &self.train;
        let schedule = if t.schedule == RewardSchedule::OHSUMED {
            "ohsumed"
        } else {
            "mq2007"
        };
        format!(
            "gamma = {}\nlr = {}\nT = {}\nk = {}\ncutoff = {}\nhidden = {}\n\
             activation = {:?}\nschedule = {}\nnormalization = {:?}\nseed = {}\n\
             epochs = {}\npatience = {}\npretrain_epochs = {}\npretrain_lr = {}\n\
             update_per_query = {}\nparallel = {}\nclamp_labels = {}\n",
            t.gamma,
            t.learning_rate,
            t.t_train,
            t.k,
            t.reward_cutoff,
            t.hidden,
            t.activation,
            schedule,
            self.normalization,
            t.seed,
            self.epochs,
            self.patience,
            t.pretrain_epochs,
            t.pretrain_lr,
            t.update_per_query,
            t.parallel,
            matches!(self.label_policy, LabelPolicy::ClampHigh),
        )
    }
}

fn parse_folds(spec: &str) -> Result<Vec<usize>, CliError> {
    match spec {
        "all" => Ok((1..=5).collect()),
        s => {
            let k: usize = s
                .parse()
                .map_err(|_| CliError::Usage(format!("fold must be 1..5 or `all`, got `{s}`")))?;
            if !(1..=5).contains(&k) {
                return Err(CliError::Usage(format!("fold must be 1..5, got {k}")));
            }
            Ok(vec![k])
        }
    }
}

fn load_data(common: &CommonArgs, settings: &Settings) -> Result<Vec<FoldSplit>, CliError> {
    if !common.data.exists() {
        return Err(CliError::Usage(format!(
            "dataset path {} does not exist",
            common.data.display()
        )));
    }
    let folds = letor::load_folds(&common.data, &FoldLayout::default(), settings.label_policy)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let selected = parse_folds(&common.fold)?;
    Ok(folds
        .into_iter()
        .filter(|f| selected.contains(&f.fold_index))
        .map(|mut f| {
            f.train = letor::normalize_features(&f.train, settings.normalization);
            f.validation = letor::normalize_features(&f.validation, settings.normalization);
            f.test = letor::normalize_features(&f.test, settings.normalization);
            f
        })
        .collect())
}

fn prepare_out(common: &CommonArgs, settings: &Settings) -> Result<(), CliError> {
    fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", common.out.display())))?;
    fs::write(common.out.join("config.txt"), settings.echo())
        .map_err(|e| CliError::Data(format!("cannot write config echo: {e}")))?;
    Ok(())
}

struct MetricsCsv {
    file: File,
}

impl MetricsCsv {
    fn create(path: &Path) -> Result<Self, CliError> {
        let mut file = File::create(path)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        writeln!(file, "fold,epoch,split,step,metric,value")
            .map_err(|e| CliError::Data(e.to_string()))?;
        Ok(MetricsCsv { file })
    }

    fn row(&mut self, fold: &str, epoch: usize, split: &str, step: usize, metric: &str, value: f64) {
        writeln!(self.file, "{fold},{epoch},{split},{step},{metric},{value}")
            .expect("metrics csv write");
    }

    fn eval_rows(&mut self, fold: &str, epoch: usize, split: &str, report: &EvalReport, t_eval: usize) {
        for (c, &cut) in EVAL_CUTOFFS.iter().enumerate() {
            self.row(fold, epoch, split, t_eval, &format!("ndcg@{cut}"), report.final_means[c]);
        }
    }
}

fn cmd_toy(steps: usize, csv: bool) -> Result<u8, CliError> {
    let rows = toy::run_toy(steps);
    if csv {
        println!("step,d1,d2,d3,d4,d5,d6,ndcg@3");
        for r in &rows {
            let cells: Vec<String> = r.scores.iter().map(|s| format!("{s}")).collect();
            println!("{},{},{}", r.step, cells.join(","), r.ndcg3);
        }
    } else {
        println!("{:>4} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8}", "step", "d1", "d2", "d3", "d4", "d5", "d6", "ndcg@3");
        for r in &rows {
            print!("{:>4}", r.step);
            for s in r.scores {
                print!(" {s:>6.2}");
            }
            println!(" {:>8.4}", r.ndcg3);
        }
    }
    if toy::table_matches(&rows) {
        println!("MATCH");
        Ok(0)
    } else {
        println!("MISMATCH");
        Ok(1)
    }
}

fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
    nn::save_params(params, file).map_err(|e| CliError::Data(e.to_string()))
}

fn load_checkpoint(path: &Path, ds: &Dataset) -> Result<ModelParams, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let params = nn::load_params(file).map_err(|e| CliError::Data(e.to_string()))?;
    if params.feature_dim != ds.feature_dim {
        return Err(CliError::Data(format!(
            "checkpoint feature dim {} does not match dataset dim {}",
            params.feature_dim, ds.feature_dim
        )));
    }
    Ok(params)
}

fn cmd_train(args: &TrainArgs) -> Result<u8, CliError> {
    let mut settings = Settings::default();
    settings.apply_common(&args.common)?;
    if let Some(v) = args.epochs {
        settings.epochs = v;
    }
    if let Some(v) = args.patience {
        settings.patience = v;
    }
    if let Some(v) = args.pretrain_epochs {
        settings.train.pretrain_epochs = v;
    }
    if let Some(v) = args.pretrain_lr {
        settings.train.pretrain_lr = v;
    }
    if args.update_per_query {
        settings.train.update_per_query = true;
    }

    let folds = load_data(&args.common, &settings)?;
    prepare_out(&args.common, &settings)?;
    let mut csv = MetricsCsv::create(&args.common.out.join("metrics.csv"))?;
    let cfg = &settings.train;

    for fold in &folds {
        let fold_name = fold.fold_index.to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(fold.fold_index as u64));
        let mut params = ModelParams::init(
            fold.train.feature_dim,
            cfg.k,
            cfg.hidden,
            cfg.activation,
            &mut rng,
        );
        let ce = trainer::pretrain(&mut params, &fold.train, cfg)
            .map_err(|e| CliError::Data(e.to_string()))?;
        if cfg.pretrain_epochs > 0 {
            csv.row(&fold_name, 0, "train", 0, "pretrain_ce", ce);
        }
        eprintln!("fold {fold_name}: pretrain done (ce {ce:.4})");

        let ckpt_path = args.common.out.join(format!("fold{}_best.json", fold.fold_index));
        let mut strikes = 0usize;
        // the pre-trained model is checkpointed up front so evaluation works
        // even with epochs = 0
        let base_val = trainer::evaluate(&params, &fold.validation, cfg)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let mut best_val = base_val.final_means[3];
        save_checkpoint(&params, &ckpt_path)?;

        for epoch in 1..=settings.epochs {
            let stats = trainer::train_epoch(&mut params, &fold.train, cfg, epoch)
                .map_err(|e| CliError::Data(e.to_string()))?;
            csv.row(&fold_name, epoch, "train", cfg.t_train, "reward", stats.mean_terminal_reward);
            let val = trainer::evaluate(&params, &fold.validation, cfg)
                .map_err(|e| CliError::Data(e.to_string()))?;
            csv.eval_rows(&fold_name, epoch, "validation", &val, cfg.t_eval);
            if val.final_means[3] > best_val {
                best_val = val.final_means[3];
                save_checkpoint(&params, &ckpt_path)?;
                strikes = 0;
            } else {
                strikes += 1;
                if settings.patience > 0 && strikes >= settings.patience {
                    eprintln!("fold {fold_name}: early stop at epoch {epoch}");
                    break;
                }
            }
        }

        let best = load_checkpoint(&ckpt_path, &fold.test)?;
        let test = trainer::evaluate(&best, &fold.test, cfg)
            .map_err(|e| CliError::Data(e.to_string()))?;
        csv.eval_rows(&fold_name, settings.epochs, "test", &test, cfg.t_eval);
        eprintln!(
            "fold {fold_name}: test ndcg@10 {:.4} (best val {:.4})",
            test.final_means[3], best_val
        );
    }
    Ok(0)
}

fn cmd_evaluate(args: &EvalArgs) -> Result<u8, CliError> {
    let mut settings = Settings::default();
    settings.apply_common(&args.common)?;
    let folds = load_data(&args.common, &settings)?;
    prepare_out(&args.common, &settings)?;
    let cfg = &settings.train;

    let mut trace = MetricsCsv::create(&args.common.out.join("trace.csv"))?;
    let mut summary = File::create(args.common.out.join("summary.csv"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(summary, "fold,ndcg@1,ndcg@3,ndcg@5,ndcg@10").map_err(|e| CliError::Data(e.to_string()))?;

    let mut mean = [0.0f64; 4];
    for fold in &folds {
        let ckpt = if args.checkpoint.is_dir() {
            args.checkpoint.join(format!("fold{}_best.json", fold.fold_index))
        } else {
            args.checkpoint.clone()
        };
        let params = load_checkpoint(&ckpt, &fold.test)?;
        let report = trainer::evaluate(&params, &fold.test, cfg)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let fold_name = fold.fold_index.to_string();
        for (t, row) in report.per_step.iter().enumerate() {
            for (c, &cut) in EVAL_CUTOFFS.iter().enumerate() {
                trace.row(&fold_name, 0, "test", t + 1, &format!("ndcg@{cut}"), row[c]);
            }
        }
        writeln!(
            summary,
            "{fold_name},{},{},{},{}",
            report.final_means[0], report.final_means[1], report.final_means[2], report.final_means[3]
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
        for c in 0..4 {
            mean[c] += report.final_means[c] / folds.len() as f64;
        }
    }
    writeln!(summary, "mean,{},{},{},{}", mean[0], mean[1], mean[2], mean[3])
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "ndcg@1 {:.4}  ndcg@3 {:.4}  ndcg@5 {:.4}  ndcg@10 {:.4}",
        mean[0], mean[1], mean[2], mean[3]
    );
    Ok(0)
}

fn cmd_gradcheck(seed: u64, corrupt: bool) -> Result<u8, CliError> {
    let mut max_err: f64 = 0.0;
    if corrupt {
        max_err = trainer::grad_check_end_to_end(seed, true)
            .map_err(|e| CliError::Data(e.to_string()))?;
    } else {
        for s in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s));
            let params = ModelParams::init(3, 1, 5, Activation::Tanh, &mut rng);
            let obs: Vec<f64> = (0..ModelParams::obs_dim(3, 1))
                .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
                .collect();
            let err = nn::grad_check_policy(&params, &obs, (s % 3) as usize, 1e-5)
                .map_err(|e| CliError::Data(e.to_string()))?;
            max_err = max_err.max(err);
            let err = trainer::grad_check_end_to_end(seed.wrapping_add(s), false)
                .map_err(|e| CliError::Data(e.to_string()))?;
            max_err = max_err.max(err);
        }
    }
    println!("max_rel_err={max_err:e}");
    Ok(if max_err < 1e-4 { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Toy { steps, csv } => cmd_toy(*steps, *csv),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gradcheck { seed, corrupt } => cmd_gradcheck(*seed, *corrupt),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
