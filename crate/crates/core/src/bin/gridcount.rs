use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridcount::em::{
    self, check_bound_trace, fit_with_observer, init_grid, FitResult, PosteriorMap, TrainConfig,
};
use gridcount::embed::{
    self, loo_evaluate, predict_from_posterior, LabelKind, Targets, DEFAULT_ALPHA,
};
use gridcount::io::{self, Corpus, Model, TargetKind};
use gridcount::manifest::{GeometryRecord, RunManifest};
use gridcount::render::{self, FieldView, Shading};
use gridcount::synth::{self, Labeler, PlantedGrid, SynthSpec, WordsPerDoc};
use gridcount::{Error, GridGeometry, Histograms};

/// Bound slack allowed in training runs (pseudocount and floor active).
const TRAIN_BOUND_SLACK: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "gridcount",
    version,
    about = "Counting-grid models of bags of words"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a counting grid to a docword corpus.
    Train(TrainArgs),
    /// Embed targets on a trained grid and predict every bag of a corpus.
    EmbedPredict(EmbedPredictArgs),
    /// Leave-one-out evaluation of label readout.
    Loo(LooArgs),
    /// Sample a corpus from a planted grid.
    Synth(SynthArgs),
    /// Describe a model and export heatmaps.
    Info(InfoArgs),
}

#[derive(Args, Clone)]
struct GeometryArgs {
    /// Number of grid dimensions (defaults to the length of --extent).
    #[arg(long)]
    dims: Option<usize>,
    /// Grid extent per dimension.
    #[arg(long, num_args = 1..)]
    extent: Vec<usize>,
    /// Window size per dimension.
    #[arg(long, num_args = 1..)]
    window: Vec<usize>,
}

#[derive(Args, Clone)]
struct FitArgs {
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 1e-8)]
    pseudocount: f64,
}

#[derive(Args)]
struct TrainArgs {
    corpus: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    out: PathBuf,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Discrete,
    Continuous,
}

impl From<KindArg> for TargetKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Discrete => TargetKind::Discrete,
            KindArg::Continuous => TargetKind::Continuous,
        }
    }
}

#[derive(Args)]
struct EmbedPredictArgs {
    model: PathBuf,
    corpus: PathBuf,
    targets: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Predictions, one per line.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the model with its embedding (default: overwrite MODEL).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct LooArgs {
    corpus: PathBuf,
    targets: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Use a trained model instead of fitting one.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Write the metric report here as key=value lines.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Manifest path (default: <targets>.loo.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    #[arg(long)]
    vocab: usize,
    #[arg(long)]
    docs: usize,
    /// Words per document (lower bound when --words-max is given).
    #[arg(long)]
    words: usize,
    #[arg(long)]
    words_max: Option<usize>,
    #[arg(long, default_value_t = 15.0)]
    sharpness: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write planted-window labels.
    #[arg(long)]
    labels: bool,
    /// Output prefix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FieldArg {
    Auto,
    Pi,
    Gamma,
}

#[derive(Args)]
struct InfoArgs {
    model: PathBuf,
    /// Vocabulary file, one word per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Export a heatmap: CSV unless the path ends in .png.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FieldArg::Auto)]
    field: FieldArg,
    /// Channel (word id or class) to render.
    #[arg(long)]
    channel: Option<usize>,
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::BoundDecreased { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        return report(f);
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::EmbedPredict(a) => cmd_embed_predict(a),
        Command::Loo(a) => cmd_loo(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let (code, msg) = match f {
        Failure::Usage(m) => (2, m),
        Failure::Data(m) => (3, m),
        Failure::Numeric(m) => (4, m),
    };
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("GRIDCOUNT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        usage(format!(
            "GRIDCOUNT_THREADS must be a non-negative integer, got {raw:?}"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(usage)?;
    }
    Ok(())
}

impl GeometryArgs {
    fn resolve(&self) -> CliResult<GridGeometry> {
        if self.extent.is_empty() || self.window.is_empty() {
            return Err(usage("--extent and --window are required"));
        }
        let dims = self.dims.unwrap_or(self.extent.len());
        if self.extent.len() != dims {
            return Err(usage(format!(
                "--extent lists {} values but --dims is {dims}",
                self.extent.len()
            )));
        }
        if self.window.len() != dims {
            return Err(usage(format!(
                "--window lists {} values but --dims is {dims}",
                self.window.len()
            )));
        }
        GridGeometry::new(self.extent.clone(), self.window.clone()).map_err(usage)
    }
}

impl FitArgs {
    fn config(&self) -> CliResult<TrainConfig> {
        let config = TrainConfig {
            max_iters: self.iters,
            rel_tol: self.tol,
            seed: self.seed,
            init_noise: self.noise,
            pseudocount: self.pseudocount,
        };
        config.validate().map_err(usage)?;
        Ok(config)
    }
}

fn timed<T>(manifest: &mut RunManifest, phase: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    manifest
        .timings
        .insert(phase.to_string(), start.elapsed().as_secs_f64());
    out
}

fn train(
    corpus: &Corpus,
    geometry: GridGeometry,
    config: &TrainConfig,
    manifest: &mut RunManifest,
) -> CliResult<FitResult> {
    let grid = init_grid(geometry, corpus.vocab_size, config.seed, config.init_noise);
    let result = timed(manifest, "fit", || {
        fit_with_observer(&corpus.bags, grid, config, |state| {
            println!("iter {:>4} bound {:.12e}", state.iteration, state.bound);
        })
    })?;
    check_bound_trace(&result.bound_trace, TRAIN_BOUND_SLACK)?;
    manifest.iterations = Some(result.iterations);
    manifest.converged = Some(result.converged);
    manifest.final_bound = Some(result.final_bound);
    Ok(result)
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let geometry = args.geometry.resolve()?;
    let config = args.fit.config()?;
    let mut manifest = RunManifest::new("train");
    manifest.input("corpus", &args.corpus);
    let corpus = timed(&mut manifest, "read", || io::read_corpus(&args.corpus))?;

    manifest.geometry = Some(GeometryRecord::from(&geometry));
    manifest.vocab_size = Some(corpus.vocab_size);
    manifest.config = Some(config.clone());
    let result = train(&corpus, geometry.clone(), &config, &mut manifest)?;
    println!(
        "done: {} iterations, converged {}, final bound {:.12e}, capacity {}",
        result.iterations,
        result.converged,
        result.final_bound,
        geometry.capacity()
    );

    timed(&mut manifest, "write", || {
        io::write_model(&args.out, &Model::new(result.grid))
    })?;
    manifest.output("model", &args.out);
    let manifest_path = args
        .manifest
        .unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    manifest.output("manifest", &manifest_path);
    manifest.write(&manifest_path)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn posteriors_under(model: &Model, corpus: &Corpus) -> CliResult<Vec<PosteriorMap>> {
    if model.grid.vocab_size() != corpus.vocab_size {
        return Err(Failure::Data(format!(
            "vocabulary mismatch: model has {} words, corpus has {}",
            model.grid.vocab_size(),
            corpus.vocab_size
        )));
    }
    let h = Histograms::new(&model.grid);
    corpus
        .bags
        .iter()
        .map(|b| em::e_step(&h, b).map_err(Failure::from))
        .collect()
}

fn cmd_embed_predict(args: EmbedPredictArgs) -> CliResult<()> {
    let model = io::read_model(&args.model)?;
    let corpus = io::read_corpus(&args.corpus)?;
    let targets = io::read_targets(&args.targets, args.kind.into(), corpus.bags.len())?;
    let posteriors = posteriors_under(&model, &corpus)?;
    let embedding = embed::embed(&posteriors, &targets, args.alpha)?;
    let predictions = posteriors
        .iter()
        .map(|q| predict_from_posterior(&embedding, q))
        .collect::<Result<Vec<_>, _>>()?;
    io::write_predictions(&args.out, &predictions)?;
    let model_out = args.model_out.unwrap_or(args.model);
    io::write_model(&model_out, &Model::with_embedding(model.grid, embedding)?)?;
    println!(
        "wrote {} predictions to {}",
        predictions.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_loo(args: LooArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("loo");
    manifest.input("corpus", &args.corpus);
    manifest.input("targets", &args.targets);
    let corpus = timed(&mut manifest, "read", || io::read_corpus(&args.corpus))?;
    let targets = io::read_targets(&args.targets, args.kind.into(), corpus.bags.len())?;
    manifest.vocab_size = Some(corpus.vocab_size);

    let (grid, posteriors) = match &args.model {
        Some(path) => {
            manifest.input("model", path);
            let model = io::read_model(path)?;
            let posteriors = posteriors_under(&model, &corpus)?;
            (model.grid, posteriors)
        }
        None => {
            let geometry = args.geometry.resolve()?;
            let config = args.fit.config()?;
            manifest.config = Some(config.clone());
            let result = train(&corpus, geometry, &config, &mut manifest)?;
            (result.grid, result.posteriors)
        }
    };
    manifest.geometry = Some(GeometryRecord::from(grid.geometry()));

    let outcome = timed(&mut manifest, "loo", || {
        loo_evaluate(&grid, &posteriors, &targets, args.alpha)
    })?;
    print!("{}", outcome.report);
    if let Some(path) = &args.report {
        std::fs::write(path, outcome.report.to_string())
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        manifest.output("report", path);
    }
    manifest.metrics = Some(outcome.report);
    let manifest_path = args
        .manifest
        .unwrap_or_else(|| with_suffix(&args.targets, ".loo.manifest.json"));
    manifest.output("manifest", &manifest_path);
    manifest.write(&manifest_path)?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let geometry = args.geometry.resolve()?;
    let words = match args.words_max {
        None => WordsPerDoc::Fixed(args.words),
        Some(max) => WordsPerDoc::Range(args.words, max),
    };
    let spec = SynthSpec {
        geometry: geometry.clone(),
        vocab_size: args.vocab,
        planted: PlantedGrid::Blocky {
            sharpness: args.sharpness,
        },
        docs: args.docs,
        words,
        seed: args.seed,
        labeler: args.labels.then_some(Labeler::PlantedWindow),
    };
    let out = synth::generate(&spec).map_err(usage)?;

    let corpus = Corpus::new(out.bags, args.vocab)?;
    let docword = with_suffix(&args.out, ".docword.txt");
    io::write_corpus(&docword, &corpus)?;

    let anchors = with_suffix(&args.out, ".anchors.txt");
    let text: String = out
        .anchors
        .iter()
        .map(|&k| {
            let c: Vec<String> = geometry.coords(k).iter().map(|v| v.to_string()).collect();
            c.join(" ") + "\n"
        })
        .collect();
    std::fs::write(&anchors, text)
        .map_err(|e| Failure::Data(format!("{}: {e}", anchors.display())))?;

    if let Some(labels) = out.labels {
        let path = with_suffix(&args.out, ".labels.txt");
        io::write_targets(&path, &Targets::discrete(labels))?;
        println!("labels: {}", path.display());
    }
    let planted = with_suffix(&args.out, ".planted.model");
    io::write_model(&planted, &Model::new(out.grid))?;
    println!(
        "corpus: {}\nanchors: {}\nplanted grid: {}",
        docword.display(),
        anchors.display(),
        planted.display()
    );
    Ok(())
}

fn cmd_info(args: InfoArgs) -> CliResult<()> {
    let model = io::read_model(&args.model)?;
    let g = model.grid.geometry();
    let join = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("dims {}", g.dims());
    println!("extent {}", join(g.extents()));
    println!("window {}", join(g.window()));
    println!("capacity {}", g.capacity());
    println!("vocab {}", model.grid.vocab_size());
    match model.embedding.as_ref().map(|e| e.kind()) {
        None => println!("gamma none"),
        Some(LabelKind::Discrete { classes }) => println!("gamma discrete {classes}"),
        Some(LabelKind::Continuous) => println!("gamma continuous"),
    }

    if let Some(path) = &args.vocab {
        let vocab = io::read_vocab(path)?;
        if vocab.len() != model.grid.vocab_size() {
            return Err(Failure::Data(format!(
                "vocabulary file lists {} words, model has {}",
                vocab.len(),
                model.grid.vocab_size()
            )));
        }
        let pi = model.grid.pi();
        for cell in 0..g.cells() {
            let mut order: Vec<usize> = (0..vocab.len()).collect();
            let row = pi.row(cell);
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let words: Vec<String> = order
                .iter()
                .take(args.top)
                .map(|&z| format!("{}:{:.4}", vocab[z], row[z]))
                .collect();
            println!("cell {} {}", join(&g.coords(cell)), words.join(" "));
        }
    }

    if let Some(out) = &args.heatmap {
        export_heatmap(&model, out, args.field, args.channel)?;
    }
    Ok(())
}

fn export_heatmap(
    model: &Model,
    out: &Path,
    field: FieldArg,
    channel: Option<usize>,
) -> CliResult<()> {
    let g = model.grid.geometry();
    let use_gamma = match field {
        FieldArg::Pi => false,
        FieldArg::Gamma => {
            if model.embedding.is_none() {
                return Err(usage("model has no label embedding"));
            }
            true
        }
        FieldArg::Auto => model.embedding.is_some(),
    };
    let (values, channels, names, categorical) = match (&model.embedding, use_gamma) {
        (Some(e), true) => match e.kind() {
            LabelKind::Discrete { classes } => (
                e.gamma(),
                classes,
                (0..classes).map(|l| format!("gamma_{l}")).collect(),
                true,
            ),
            LabelKind::Continuous => (e.gamma(), 1, vec!["gamma".to_string()], false),
        },
        _ => {
            let z = model.grid.vocab_size();
            (
                model.grid.pi().values(),
                z,
                (0..z).map(|w| format!("pi_{w}")).collect::<Vec<_>>(),
                false,
            )
        }
    };
    let view = FieldView {
        geometry: g,
        channels,
        values,
        channel_names: names,
    };

    let is_png = out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let shading = match channel {
            Some(c) => Shading::Scalar(c),
            None if categorical => Shading::Categorical,
            None => Shading::Scalar(0),
        };
        let files = render::write_png(out, &view, shading).map_err(usage)?;
        for f in files {
            println!("heatmap {}", f.display());
        }
    } else {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(out)
                .map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?,
        );
        let write = match channel {
            Some(c) if c >= channels => {
                return Err(usage(format!(
                    "channel {c} out of range for {channels} channels"
                )))
            }
            Some(c) => {
                let single: Vec<f64> = (0..g.cells()).map(|i| values[i * channels + c]).collect();
                let name = view.channel_names[c].clone();
                render::write_csv(
                    &mut file,
                    &FieldView {
                        geometry: g,
                        channels: 1,
                        values: &single,
                        channel_names: vec![name],
                    },
                )
            }
            None => render::write_csv(&mut file, &view),
        };
        write
            .and_then(|_| std::io::Write::flush(&mut file))
            .map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
        println!("heatmap {}", out.display());
    }
    Ok(())
}
