//! `seqmix` — train and analyze recurrent models with Sequence Mixup
//! regularization (Input Mixup, Pre-Output Mixup, Through-Time Mixup).
//!
//! Every run is deterministic given its flags: the seed fixes the model
//! initialization, the data order, and the mixing-coefficient draws. Outputs
//! are JSON/CSV files in `--out`; plotting is left to the caller.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqmix_core::analysis::{
    boundary_grid, dataset_spectra, memory_probe, moon_strip_points, overreg_probe,
    strip_mean_max_prob, subspace_orthogonality, ProbeConfig, MOON_BOUNDS,
};
use seqmix_core::crf::MixedCrfMode;
use seqmix_core::data::{
    generate_halfmoons, generate_tagging, load_conll, load_embeddings, Dataset, TaggingSpec,
};
use seqmix_core::lambda::sample_trajectory;
use seqmix_core::mixup::Head;
use seqmix_core::recurrent::{load_model, save_model, CellKind, Method, Model, ModelInit};
use seqmix_core::train::{evaluate, full_scale_baseline, sweep_rho, train_model, RunRecord};
use seqmix_core::{LambdaConfig, Rng, SeqMixError, TrainConfig};

#[derive(Parser)]
#[command(
    name = "seqmix",
    version,
    about = "Sequence Mixup training and analysis for recurrent networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write run.json, metrics.csv, and model.json.
    Train(TrainArgs),
    /// Sweep the λ-process correlation ρ across methods; write metrics.csv.
    SweepRho(SweepArgs),
    /// Per-class singular-value spectra of a checkpoint's hidden states.
    Spectrum(SpectrumArgs),
    /// Theorem probes: over-regularization (small H) and memorylessness.
    Probe(ProbeArgs),
    /// Half-moons demo: train, then export the decision-boundary grid.
    Halfmoons(HalfmoonsArgs),
    /// Sample one mixing-coefficient trajectory as CSV (columns t,lambda).
    Trajectory(TrajectoryArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Standard,
    Input,
    Pom,
    Ttm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Standard => Method::Standard,
            MethodArg::Input => Method::InputMixup,
            MethodArg::Pom => Method::Pom,
            MethodArg::Ttm => Method::Ttm,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CellArg {
    Rnn,
    Gru,
    Lstm,
}

impl From<CellArg> for CellKind {
    fn from(c: CellArg) -> CellKind {
        match c {
            CellArg::Rnn => CellKind::Rnn,
            CellArg::Gru => CellKind::Gru,
            CellArg::Lstm => CellKind::Lstm,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Halfmoons,
    Tagging,
    TaggingMem,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CrfModeArg {
    MixedScore,
    WeightedNll,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct CommonTrainArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Standard)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = CellArg::Gru)]
    cell: CellArg,
    /// Beta(α,α) concentration of the λ process.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Temporal correlation knob: ρ=0 keeps λ constant along a trajectory.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Halve the learning rate every this many epochs.
    #[arg(long, default_value_t = 10)]
    lr_halve_every: usize,
    /// Global-norm gradient clip; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding / dense-feature dimensionality.
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long)]
    bidirectional: bool,
    /// Use a linear-chain CRF head instead of per-step softmax.
    #[arg(long)]
    crf: bool,
    /// How the CRF head consumes mixed pairs.
    #[arg(long, value_enum, default_value_t = CrfModeArg::MixedScore)]
    crf_mode: CrfModeArg,
    /// Full-scale reference preset: bidirectional LSTM, hidden 256,
    /// 50 epochs. Meant for real corpora; slow at desk scale.
    #[arg(long)]
    paper_baseline: bool,
}

#[derive(Args)]
struct DataArgs {
    /// CoNLL-format file (token columns, tag last, blank-line sentences).
    #[arg(long, conflicts_with = "task")]
    data: Option<PathBuf>,
    /// Synthetic task instead of --data.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// GloVe-style text embeddings for --data vocabularies.
    #[arg(long, requires = "data")]
    embeddings: Option<PathBuf>,
    /// Sequences to generate (synthetic tasks).
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Sequence length (tagging tasks).
    #[arg(long, default_value_t = 10)]
    seq_len: usize,
    #[arg(long, default_value_t = 12)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Label-flip noise for the plain tagging rule.
    #[arg(long, default_value_t = 0.1)]
    flip: f64,
    /// Gaussian noise for half-moons.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    dev_frac: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    train: CommonTrainArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: CommonTrainArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated ρ values.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    rhos: Vec<f64>,
    /// Comma-separated methods.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "input,pom,ttm")]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// model.json checkpoint produced by `seqmix train`.
    #[arg(long)]
    model: PathBuf,
    /// CoNLL-format dataset to collect hidden states from.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    /// Center hidden states per class before the decomposition.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    center: OnOff,
    /// Subspace rank for pairwise principal-angle cosines.
    #[arg(long, default_value_t = 3)]
    angle_rank: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProbeKind {
    Overreg,
    Memory,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(value_enum)]
    kind: ProbeKind,
    /// Number of seeds (seed i runs with value 11·i).
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Pom)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = CellArg::Gru)]
    cell: CellArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    lr_halve_every: usize,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    seq_len: usize,
    #[arg(long, default_value_t = 10)]
    vocab_size: usize,
    /// Classes for the over-regularization task.
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Use the two-step-memory tag rule in the over-regularization task.
    #[arg(long)]
    memory_rule: bool,
    /// Comma-separated hidden sizes to probe.
    #[arg(long, value_delimiter = ',', default_value = "2,16")]
    hidden: Vec<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct HalfmoonsArgs {
    #[command(flatten)]
    train: CommonTrainArgs,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 100)]
    grid_res: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::SweepRho(args) => cmd_sweep(args),
        Command::Spectrum(args) => cmd_spectrum(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Halfmoons(args) => cmd_halfmoons(args),
        Command::Trajectory(args) => cmd_trajectory(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

impl CommonTrainArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method.into(),
            lr: self.lr,
            lr_halve_every: self.lr_halve_every,
            epochs: self.epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            rho: self.rho,
            clip: if self.clip > 0.0 { Some(self.clip) } else { None },
            seed: self.seed,
            ..Default::default()
        }
    }

    fn head(&self) -> Head {
        if self.crf {
            Head::Crf(match self.crf_mode {
                CrfModeArg::MixedScore => MixedCrfMode::MixedScore,
                CrfModeArg::WeightedNll => MixedCrfMode::WeightedNll,
            })
        } else {
            Head::Softmax
        }
    }
}

impl DataArgs {
    /// Build the full dataset and split it train/dev/test.
    fn load(&self, seed: u64) -> Result<(Dataset, Dataset, Dataset), SeqMixError> {
        let full = match (&self.data, self.task) {
            (Some(path), _) => load_conll(path)?,
            (None, Some(TaskArg::Halfmoons)) => generate_halfmoons(self.n, self.noise, seed)?,
            (None, Some(task)) => {
                let spec = TaggingSpec {
                    n: self.n,
                    t: self.seq_len,
                    vocab: self.vocab_size,
                    classes: self.classes,
                    flip: self.flip,
                    memory: task == TaskArg::TaggingMem,
                };
                generate_tagging(&spec, seed)?
            }
            (None, None) => {
                return Err(SeqMixError::Param("one of --data or --task is required".into()))
            }
        };
        let mut rng = Rng::new(seed.wrapping_add(0x5911));
        Ok(full.split(self.train_frac, self.dev_frac, &mut rng))
    }
}

fn ensure_dir(dir: &Path) -> Result<(), SeqMixError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_run_record(dir: &Path, record: &RunRecord) -> Result<(), SeqMixError> {
    let json = serde_json::to_string_pretty(record)
        .map_err(|e| SeqMixError::Param(format!("serializing run record: {e}")))?;
    fs::write(dir.join("run.json"), json)?;
    Ok(())
}

fn write_metrics_csv(dir: &Path, record: &RunRecord) -> Result<(), SeqMixError> {
    let mut csv = String::from("epoch,train_loss,dev_loss,dev_token_f1\n");
    for (epoch, train_loss) in record.train_loss.iter().enumerate() {
        let dev_loss = record.dev_loss.get(epoch).map(|v| v.to_string()).unwrap_or_default();
        let dev_f1 = record.dev_f1.get(epoch).map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{epoch},{train_loss},{dev_loss},{dev_f1}\n"));
    }
    fs::write(dir.join("metrics.csv"), csv)?;
    Ok(())
}

fn build_model(
    args: &TrainArgs,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, ModelInit), SeqMixError> {
    let classes = data.classes();
    let vocab_len = data.token_vocab.as_ref().map(|v| v.len());
    let (init, _) = if args.train.paper_baseline {
        full_scale_baseline(
            cfg.method,
            classes,
            vocab_len.unwrap_or(0),
            args.train.embed_dim,
            args.train.crf,
        )
    } else {
        (
            ModelInit {
                cell: args.train.cell.into(),
                input_dim: args.train.embed_dim,
                hidden: args.train.hidden,
                classes,
                vocab: vocab_len,
                bidirectional: args.train.bidirectional,
                crf: args.train.crf,
            },
            cfg.clone(),
        )
    };
    let mut rng = Rng::new(cfg.seed);
    let mut model = Model::init(&init, &mut rng);
    if let Some(path) = &args.data.embeddings {
        let vocab = data
            .token_vocab
            .as_ref()
            .ok_or_else(|| SeqMixError::Param("--embeddings needs a token dataset".into()))?;
        model.embedding = Some(load_embeddings(path, vocab, cfg.seed)?);
    }
    Ok((model, init))
}

fn cmd_train(args: TrainArgs) -> Result<(), SeqMixError> {
    ensure_dir(&args.out)?;
    let cfg = if args.train.paper_baseline {
        let (_, base_cfg) = full_scale_baseline(
            args.train.method.into(),
            2,
            0,
            args.train.embed_dim,
            args.train.crf,
        );
        TrainConfig { seed: args.train.seed, ..base_cfg }
    } else {
        args.train.train_config()
    };
    let head = args.train.head();
    let (train_set, dev_set, test_set) = args.data.load(cfg.seed)?;
    let (model, _) = build_model(&args, &train_set, &cfg)?;
    let dev = (!dev_set.is_empty()).then_some(&dev_set);
    let test = (!test_set.is_empty()).then_some(&test_set);
    let (model, record) = train_model(model, &cfg, head, &train_set, dev, test)?;
    if let Some(msg) = &record.numeric_failure {
        write_run_record(&args.out, &record)?;
        return Err(SeqMixError::Numeric(msg.clone()));
    }
    save_model(&model, &args.out.join("model.json"))?;
    write_run_record(&args.out, &record)?;
    write_metrics_csv(&args.out, &record)?;
    if let Some(test) = &record.test_metrics {
        println!(
            "test loss {:.4} accuracy {:.4}{}",
            test.loss,
            test.accuracy,
            test.token_f1
                .as_ref()
                .map(|f| format!(" token-F1 {:.4}", f.f1))
                .unwrap_or_default()
        );
    }
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), SeqMixError> {
    ensure_dir(&args.out)?;
    let cfg = args.train.train_config();
    let head = args.train.head();
    let (train_set, _, test_set) = args.data.load(cfg.seed)?;
    if test_set.is_empty() {
        return Err(SeqMixError::Param("sweep needs a non-empty test split".into()));
    }
    let init = ModelInit {
        cell: args.train.cell.into(),
        input_dim: args.train.embed_dim,
        hidden: args.train.hidden,
        classes: train_set.classes(),
        vocab: train_set.token_vocab.as_ref().map(|v| v.len()),
        bidirectional: args.train.bidirectional,
        crf: args.train.crf,
    };
    let methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    let cells =
        sweep_rho(&init, &cfg, head, &train_set, &test_set, &args.rhos, &methods, args.repeats)?;
    let mut csv = String::from("method,rho,repeats,mean_loss,std_loss,mean_f1,std_f1\n");
    for c in &cells {
        csv.push_str(&format!(
            "{:?},{},{},{},{},{},{}\n",
            c.method, c.rho, c.repeats, c.mean_loss, c.std_loss, c.mean_f1, c.std_f1
        ));
        println!(
            "{:?} rho={:.2}: loss {:.4} ± {:.4}, F1 {:.4} ± {:.4}",
            c.method, c.rho, c.mean_loss, c.std_loss, c.mean_f1, c.std_f1
        );
    }
    fs::write(args.out.join("metrics.csv"), csv)?;
    Ok(())
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<(), SeqMixError> {
    ensure_dir(&args.out)?;
    let model = load_model(&args.model)?;
    let data = load_conll(&args.data)?;
    let center = args.center == OnOff::On;
    let spectra = dataset_spectra(&model, &data, args.top_k, center)?;
    let mut csv = String::from("class,rank,sigma,energy_frac\n");
    for (class, report) in spectra.iter().enumerate() {
        if let Some(report) = report {
            for (i, (sigma, energy)) in
                report.singular_values.iter().zip(&report.energy_fractions).enumerate()
            {
                csv.push_str(&format!("{class},{},{sigma},{energy}\n", i + 1));
            }
        }
    }
    fs::write(args.out.join("spectrum.csv"), csv)?;

    let mats = seqmix_core::analysis::collect_hidden_by_class(&model, &data.samples)?;
    let angles = subspace_orthogonality(&mats, args.angle_rank)?;
    let mut csv = String::from("class_a,class_b,rank,cosine\n");
    for (a, b, cosines) in &angles {
        for (i, c) in cosines.iter().enumerate() {
            csv.push_str(&format!("{a},{b},{},{c}\n", i + 1));
        }
    }
    fs::write(args.out.join("angles.csv"), csv)?;
    println!("wrote spectrum.csv and angles.csv to {}", args.out.display());
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<(), SeqMixError> {
    ensure_dir(&args.out)?;
    let cfg = ProbeConfig {
        cell: args.cell.into(),
        method: args.method.into(),
        alpha: args.alpha,
        rho: args.rho,
        epochs: args.epochs,
        lr: args.lr,
        lr_halve_every: args.lr_halve_every,
        n: args.n,
        t: args.seq_len,
        vocab: args.vocab_size,
        memory_rule: args.memory_rule,
    };
    let seeds: Vec<u64> = (1..=args.seeds as u64).map(|i| 11 * i).collect();
    let json = match args.kind {
        ProbeKind::Overreg => {
            let runs = overreg_probe(&cfg, args.classes, &args.hidden, &seeds)?;
            for r in &runs {
                println!("H={} seed {}: train token error {:.4}", r.h, r.seed, r.value);
            }
            serde_json::to_string_pretty(&runs)
        }
        ProbeKind::Memory => {
            let report = memory_probe(&cfg, &args.hidden, &seeds)?;
            println!("memoryless-optimal baseline accuracy {:.4}", report.baseline);
            for r in &report.runs {
                println!("H={} seed {}: test accuracy {:.4}", r.h, r.seed, r.value);
            }
            serde_json::to_string_pretty(&report)
        }
    }
    .map_err(|e| SeqMixError::Param(format!("serializing probe report: {e}")))?;
    fs::write(args.out.join("probe.json"), json)?;
    Ok(())
}

fn cmd_halfmoons(args: HalfmoonsArgs) -> Result<(), SeqMixError> {
    ensure_dir(&args.out)?;
    let cfg = args.train.train_config();
    let data = generate_halfmoons(args.n, args.noise, cfg.seed)?;
    let test = generate_halfmoons(args.n, args.noise, cfg.seed.wrapping_add(1))?;
    let init = ModelInit {
        cell: args.train.cell.into(),
        input_dim: 1,
        hidden: args.train.hidden,
        classes: 2,
        vocab: None,
        bidirectional: false,
        crf: false,
    };
    let mut rng = Rng::new(cfg.seed);
    let model = Model::init(&init, &mut rng);
    let (model, record) = train_model(model, &cfg, Head::Softmax, &data, None, Some(&test))?;
    if let Some(msg) = &record.numeric_failure {
        return Err(SeqMixError::Numeric(msg.clone()));
    }
    save_model(&model, &args.out.join("model.json"))?;
    write_run_record(&args.out, &record)?;

    let grid = boundary_grid(&model, MOON_BOUNDS, args.grid_res)?;
    let (x0, x1, y0, y1) = grid.bounds;
    let (dx, dy) =
        ((x1 - x0) / args.grid_res as f64, (y1 - y0) / args.grid_res as f64);
    let mut csv = String::from("x,y,p_class0\n");
    for (i, cell) in grid.probs.iter().enumerate() {
        let (row, col) = (i / args.grid_res, i % args.grid_res);
        let x = x0 + (col as f64 + 0.5) * dx;
        let y = y0 + (row as f64 + 0.5) * dy;
        csv.push_str(&format!("{x},{y},{}\n", cell[0]));
    }
    fs::write(args.out.join("grid.csv"), csv)?;

    let strip = moon_strip_points(args.grid_res.max(20));
    let mean_max = strip_mean_max_prob(&model, &strip)?;
    let report = evaluate(&model, &test, Head::Softmax)?;
    println!(
        "test accuracy {:.4}; inter-moon strip mean max-class probability {:.4}",
        report.accuracy, mean_max
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_trajectory(args: TrajectoryArgs) -> Result<(), SeqMixError> {
    let cfg = LambdaConfig::new(args.alpha, args.rho, args.horizon)?;
    let mut rng = Rng::new(args.seed);
    let traj = sample_trajectory(&cfg, &mut rng)?;
    let mut csv = String::from("t,lambda\n");
    for (t, l) in traj.values.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", t + 1));
    }
    match args.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
