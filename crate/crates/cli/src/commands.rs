use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use gma_core::agreement::{agreement_report, read_label_csv, Condition};
use gma_core::blur::{BlurError, FrameImage, MaskTrajectory};
use gma_core::features::{build_features, FeatureError, FeatureMode};
use gma_core::keypoints::{load_snippet_dir, SchemaMap, SnippetKeypoints, SNIPPET_FRAMES};
use gma_core::testkit::{dataset_specs, gen_snippet, render_frame, write_synth_dir, SynthSpec};
use gma_neural::ablation::{ablation_run, render_table, report_csv, AblationTable, ResultsStore};
use gma_neural::evaluation::{run_cv, ttest_two_sample, CvConfig, CvResult, TTestKind};
use gma_neural::train::{history_csv, train_all};
use gma_study::http::serve;
use gma_study::service::CreateStudy;
use gma_study::{PoolEntry, StudyService};

use crate::config::{Manifest, RunConfig, SyntheticSection};
use crate::data::{load_dataset, read_class_labels, snippet_dirs, write_class_labels};
use crate::error::{config, data, internal, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "gma-bench",
    version,
    about = "Face blurring, pose-feature classification and rating-study toolkit"
)]
pub struct Cli {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (falls back to the config file, then GMA_BENCH_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic keypoint snippets (and optionally rendered frames).
    Synth(SynthArgs),
    /// Blur the face region of one snippet's frames.
    Blur(BlurArgs),
    /// Build feature matrices from keypoint snippets.
    Features(FeaturesArgs),
    /// Train one network on a labelled dataset.
    Train(TrainArgs),
    /// Cross-validate the network for one or both feature conditions.
    Cv(CvArgs),
    /// Run the architecture sweeps, resuming from earlier results.
    Ablate(AblateArgs),
    /// Agreement report from exported label CSV files.
    Kappa(KappaArgs),
    /// Plan a rating study, optionally registering it in a journal.
    Study(StudyArgs),
    /// Serve the rating-study HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Snippets per class (default 200).
    #[arg(long)]
    pub n_per_class: Option<usize>,
    /// Canvas width in pixels (default 1920).
    #[arg(long)]
    pub width: Option<u32>,
    /// Canvas height in pixels (default 1080).
    #[arg(long)]
    pub height: Option<u32>,
    /// Also render 250 PNG frames per snippet.
    #[arg(long)]
    pub render: bool,
}

#[derive(Debug, Args)]
pub struct BlurArgs {
    /// Snippet keypoint directory (pose documents plus meta.json).
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Directory of frame_%06d.png files, or a raw RGB24 stream file.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
    /// Full ellipse width in pixels (default 150).
    #[arg(long)]
    pub ellipse_width: Option<f64>,
    /// Full ellipse height in pixels (default 68).
    #[arg(long)]
    pub ellipse_height: Option<f64>,
    /// Box filter side length in pixels, odd (default 25).
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Largest per-channel noise value (default 25).
    #[arg(long)]
    pub noise_max: Option<u8>,
    /// Weight of the previous smoothed centre (default 0.5).
    #[arg(long)]
    pub ema: Option<f64>,
    /// Minimum mean eye/nose reliability (default 0.35).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory of snippet keypoint directories.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Directory of <id>.gmaf feature files.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// CSV snippet_id,class with classes FM+ / FM-.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Use a generated dataset with this many snippets per class.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NetArgs {
    /// Convolution filter count (default 64).
    #[arg(long)]
    pub filters: Option<usize>,
    /// Convolution filter length in frames (default 7).
    #[arg(long)]
    pub filter_len: Option<usize>,
    /// Dense layer sizes, comma separated (default 200,100).
    #[arg(long, value_delimiter = ',')]
    pub fc: Option<Vec<usize>>,
    /// Mini-batch size (default 32).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping (default 10).
    #[arg(long)]
    pub patience: Option<u32>,
    /// Upper bound on epochs (default 500).
    #[arg(long)]
    pub max_epochs: Option<u32>,
    /// Adam step size (default 0.001).
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Share of the training data held out for validation (default 0.125).
    #[arg(long)]
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Snippet directory or a directory of them.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// with_head or without_head (default with_head).
    #[arg(long)]
    pub mode: Option<FeatureMode>,
    #[command(flatten)]
    pub out: OutArg,
    /// Also write a CSV copy of every matrix.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// with_head or without_head (default with_head).
    #[arg(long)]
    pub mode: Option<FeatureMode>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run only this condition (default: both).
    #[arg(long)]
    pub mode: Option<FeatureMode>,
    #[command(flatten)]
    pub net: NetArgs,
    /// Fold count (default 5).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Training repeats per fold, best on validation kept (default 10).
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Use Welch's test instead of the pooled-variance t-test.
    #[arg(long)]
    pub welch: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Tables to run: dense, convolution (default both).
    #[arg(long, value_delimiter = ',')]
    pub tables: Option<Vec<String>>,
    #[command(flatten)]
    pub net: NetArgs,
    /// Fold count (default 5).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Training repeats per fold (default 10).
    #[arg(long)]
    pub repeats: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Exported label CSV files.
    #[arg(long = "labels", required = true, num_args = 1..)]
    pub labels: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// CSV snippet_id,media listing the snippet pool.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Number of subsets (default 3).
    #[arg(long)]
    pub count: Option<usize>,
    /// Snippets per subset (default 280).
    #[arg(long)]
    pub size: Option<usize>,
    /// visible or blurred.
    #[arg(long, default_value = "blurred")]
    pub condition: String,
    /// Register the study in this journal.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Journal file; created when missing.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Listen address (default 127.0.0.1:8080).
    #[arg(long)]
    pub addr: Option<String>,
    /// Directory relative media paths resolve against.
    #[arg(long)]
    pub media_root: Option<PathBuf>,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gma-bench: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    cfg.resolve_seed(cli.seed)?;
    if let Some(j) = cli.jobs.or(cfg.jobs) {
        cfg.jobs = Some(j);
        // a second run in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Blur(a) => blur(cfg, a),
        Command::Features(a) => features(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Cv(a) => cv(cfg, a),
        Command::Ablate(a) => ablate(cfg, a),
        Command::Kappa(a) => kappa(cfg, a),
        Command::Study(a) => study(cfg, a),
        Command::Serve(a) => serve_cmd(cfg, a),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn out_dir(cfg: &mut RunConfig, out: OutArg) -> CliResult<PathBuf> {
    set(&mut cfg.paths.out, out.out.map(Some));
    let dir = cfg.paths.out.clone().ok_or_else(|| config("missing --out"))?;
    fs::create_dir_all(&dir).map_err(|e| internal(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn existing(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.clone().ok_or_else(|| config(format!("missing --{what}")))?;
    if !p.exists() {
        return Err(config(format!("{what} path {} does not exist", p.display())));
    }
    Ok(p)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn apply_data(cfg: &mut RunConfig, d: DataArgs) {
    set(&mut cfg.paths.keypoints, d.keypoints.map(Some));
    set(&mut cfg.paths.features, d.features.map(Some));
    set(&mut cfg.paths.labels, d.labels.map(Some));
    if let Some(n) = d.synthetic {
        let mut s = cfg.synthetic.take().unwrap_or_default();
        s.n_per_class = n;
        s.template.seed = cfg.seed();
        cfg.synthetic = Some(s);
    }
}

fn apply_net(cfg: &mut RunConfig, n: NetArgs) {
    set(&mut cfg.network.filters, n.filters);
    set(&mut cfg.network.filter_len, n.filter_len);
    set(&mut cfg.network.fc, n.fc);
    set(&mut cfg.train.batch_size, n.batch_size);
    set(&mut cfg.train.patience, n.patience);
    set(&mut cfg.train.max_epochs, n.max_epochs);
    set(&mut cfg.train.adam.step_size, n.step_size);
    set(&mut cfg.train.validation_fraction, n.validation_fraction);
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> CliResult<()> {
    let mut s = cfg.synthetic.take().unwrap_or_default();
    set(&mut s.n_per_class, a.n_per_class);
    if a.width.is_some() || a.height.is_some() {
        let w = a.width.unwrap_or(s.template.width);
        let h = a.height.unwrap_or(s.template.height);
        s.template = s.template.clone().scaled(w, h);
    }
    s.template.seed = cfg.seed();
    s.template.validate().map_err(config)?;
    cfg.synthetic = Some(s.clone());
    let out = out_dir(&mut cfg, a.out)?;

    let schema = SchemaMap::body25();
    let specs = dataset_specs(s.n_per_class, cfg.seed(), &s.template);
    let labels = specs
        .par_iter()
        .map(|spec: &SynthSpec| {
            let snippet = gen_snippet(spec);
            let dir = out.join(snippet.id());
            write_synth_dir(&snippet, spec, &schema, &dir).map_err(internal)?;
            if a.render {
                render_into(&snippet, spec.seed, &dir.join("frames"))?;
            }
            Ok((snippet.id().to_owned(), spec.class))
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_class_labels(&out.join("labels.csv"), &labels)?;
    Manifest::new("synth", &cfg).write(&out)?;
    info!("wrote {} snippets to {}", labels.len(), out.display());
    Ok(())
}

fn render_into(snippet: &SnippetKeypoints, seed: u64, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(internal)?;
    for i in 1..=SNIPPET_FRAMES as u32 {
        render_frame(snippet, i, seed)
            .write_png(&dir.join(frame_png_name(i)))
            .map_err(internal)?;
    }
    Ok(())
}

pub fn frame_png_name(index: u32) -> String {
    format!("frame_{index:06}.png")
}

const RAW_OUTPUT: &str = "frames.rgb";
const CHUNK: usize = 25;

fn blur_error(e: BlurError) -> CliError {
    match e {
        BlurError::InvalidParams(_) => config(e),
        BlurError::Io(_) => internal(e),
        _ => data(e),
    }
}

fn blur(mut cfg: RunConfig, a: BlurArgs) -> CliResult<()> {
    set(&mut cfg.paths.keypoints, a.keypoints.map(Some));
    set(&mut cfg.paths.frames, a.frames.map(Some));
    set(&mut cfg.blur.width, a.ellipse_width);
    set(&mut cfg.blur.height, a.ellipse_height);
    set(&mut cfg.blur.kernel, a.kernel);
    set(&mut cfg.blur.noise_max, a.noise_max);
    set(&mut cfg.blur.ema, a.ema);
    set(&mut cfg.blur.reliability_threshold, a.threshold);
    cfg.blur.validate().map_err(blur_error)?;
    let keypoints = existing(&cfg.paths.keypoints, "keypoints")?;
    let frames = existing(&cfg.paths.frames, "frames")?;
    let out = out_dir(&mut cfg, a.out)?;

    let snippet = load_snippet_dir(&keypoints, &SchemaMap::body25()).map_err(data)?;
    let trajectory = MaskTrajectory::plan(&snippet, &cfg.blur).map_err(blur_error)?;
    let (w, h) = (snippet.meta.width, snippet.meta.height);
    let check = |img: &FrameImage, i: u32| -> CliResult<()> {
        if (img.width(), img.height()) != (w, h) {
            return Err(data(format!(
                "frame {i} is {}x{}, metadata says {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    };

    if frames.is_dir() {
        for start in (1..=SNIPPET_FRAMES as u32).step_by(CHUNK) {
            let end = (start + CHUNK as u32).min(SNIPPET_FRAMES as u32 + 1);
            let mut chunk = (start..end)
                .into_par_iter()
                .map(|i| {
                    let path = frames.join(frame_png_name(i));
                    if !path.is_file() {
                        return Err(data(format!("missing frame {}", path.display())));
                    }
                    let img = FrameImage::read_png(&path).map_err(blur_error)?;
                    check(&img, i)?;
                    Ok(img)
                })
                .collect::<CliResult<Vec<_>>>()?;
            trajectory.apply_parallel(start, &mut chunk);
            chunk.par_iter().enumerate().try_for_each(|(k, img)| {
                img.write_png(&out.join(frame_png_name(start + k as u32)))
                    .map_err(blur_error)
            })?;
        }
    } else {
        let mut reader = BufReader::new(fs::File::open(&frames).map_err(internal)?);
        let mut writer = BufWriter::new(fs::File::create(out.join(RAW_OUTPUT)).map_err(internal)?);
        let mut index = 1u32;
        loop {
            let mut chunk = Vec::with_capacity(CHUNK);
            while chunk.len() < CHUNK {
                match FrameImage::read_raw(&mut reader, w, h).map_err(blur_error)? {
                    Some(img) => chunk.push(img),
                    None => break,
                }
            }
            if chunk.is_empty() {
                break;
            }
            trajectory.apply_parallel(index, &mut chunk);
            for img in &chunk {
                img.write_raw(&mut writer).map_err(blur_error)?;
            }
            index += chunk.len() as u32;
            if index as usize > SNIPPET_FRAMES {
                let mut probe = [0u8; 1];
                if std::io::Read::read(&mut reader, &mut probe).map_err(internal)? > 0 {
                    return Err(data(format!("raw stream holds more than {SNIPPET_FRAMES} frames")));
                }
                break;
            }
        }
        if index as usize != SNIPPET_FRAMES + 1 {
            return Err(data(format!(
                "raw stream holds {} frames, expected {SNIPPET_FRAMES}",
                index - 1
            )));
        }
        writer.flush().map_err(internal)?;
    }
    write(&out.join("trajectory.csv"), &trajectory.to_csv())?;
    write(&out.join("meta.json"), &snippet.meta.to_json())?;
    Manifest::new("blur", &cfg).write(&out)?;
    Ok(())
}

fn features(mut cfg: RunConfig, a: FeaturesArgs) -> CliResult<()> {
    set(&mut cfg.paths.keypoints, a.keypoints.map(Some));
    set(&mut cfg.mode, a.mode);
    let root = existing(&cfg.paths.keypoints, "keypoints")?;
    let out = out_dir(&mut cfg, a.out)?;
    let schema = SchemaMap::body25();
    let mode = cfg.mode;
    let skipped: Vec<String> = snippet_dirs(&root)?
        .par_iter()
        .map(|dir| {
            let snippet = load_snippet_dir(dir, &schema).map_err(|e| data(format!("{}: {e}", dir.display())))?;
            match build_features(&snippet, mode) {
                Ok(m) => {
                    m.save(&out.join(format!("{}.gmaf", snippet.id()))).map_err(internal)?;
                    if a.csv {
                        write(&out.join(format!("{}.csv", snippet.id())), &m.to_csv())?;
                    }
                    Ok(None)
                }
                Err(e @ FeatureError::DegenerateSnippet { .. }) => {
                    warn!("skipping {}: {e}", snippet.id());
                    Ok(Some(format!("{},{}", snippet.id(), e)))
                }
                Err(e) => Err(data(format!("{}: {e}", dir.display()))),
            }
        })
        .collect::<CliResult<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if !skipped.is_empty() {
        write(
            &out.join("skipped.csv"),
            &(String::from("snippet_id,reason\n") + &skipped.join("\n") + "\n"),
        )?;
    }
    Manifest::new("features", &cfg).write(&out)?;
    Ok(())
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> CliResult<()> {
    apply_data(&mut cfg, a.data);
    apply_net(&mut cfg, a.net);
    set(&mut cfg.mode, a.mode);
    let out = out_dir(&mut cfg, a.out)?;
    let samples = load_dataset(&cfg, cfg.mode)?;
    let spec = cfg.network.spec(cfg.mode);
    let outcome = train_all(&samples, &spec, &cfg.train)?;
    outcome.weights.save(&out.join("model.gmaw"))?;
    write(&out.join("history.csv"), &history_csv(&outcome.history))?;
    Manifest::new("train", &cfg).write(&out)?;
    println!(
        "best epoch {} of {}, validation accuracy {:.4}",
        outcome.best_epoch,
        outcome.epochs_run(),
        outcome.best_val_acc
    );
    Ok(())
}

fn cv_config(cfg: &RunConfig) -> CvConfig {
    CvConfig {
        train: cfg.train.clone(),
        folds: cfg.cv.folds,
        repeats: cfg.cv.repeats,
        seed: cfg.seed(),
        parallel: cfg.cv.parallel,
    }
}

/// Per-condition results and, with two conditions, the t-test between them.
pub fn cv_summary(results: &[(FeatureMode, CvResult)], kind: TTestKind) -> CliResult<String> {
    let mut out = String::new();
    for (mode, r) in results {
        let _ = writeln!(out, "{mode}: {r}");
    }
    if let [(_, a), (_, b)] = results {
        let t = ttest_two_sample(&a.fold_accuracies, &b.fold_accuracies, kind)?;
        let name = match kind {
            TTestKind::Pooled => "pooled",
            TTestKind::Welch => "welch",
        };
        let _ = writeln!(out, "t-test ({name}): {t}");
    }
    Ok(out)
}

fn cv(mut cfg: RunConfig, a: CvArgs) -> CliResult<()> {
    apply_data(&mut cfg, a.data);
    apply_net(&mut cfg, a.net);
    set(&mut cfg.cv.folds, a.folds);
    set(&mut cfg.cv.repeats, a.repeats);
    if a.welch {
        cfg.cv.ttest = TTestKind::Welch;
    }
    if let Some(m) = a.mode {
        cfg.cv.conditions = vec![m];
    }
    let out = out_dir(&mut cfg, a.out)?;
    let cv_cfg = cv_config(&cfg);
    let mut results = Vec::new();
    for &mode in &cfg.cv.conditions {
        let samples = load_dataset(&cfg, mode)?;
        let r = run_cv(&samples, &cfg.network.spec(mode), &cv_cfg, &())?;
        info!("{mode}: {r}");
        results.push((mode, r));
    }
    let k = cfg.cv.folds;
    let mut csv = String::from("condition");
    for i in 1..=k {
        let _ = write!(csv, ",acc_{i}");
    }
    csv.push_str(",mean,ci95\n");
    for (mode, r) in &results {
        let accs: Vec<String> = r.fold_accuracies.iter().map(f64::to_string).collect();
        let _ = writeln!(csv, "{mode},{},{},{}", accs.join(","), r.mean, r.ci95);
    }
    write(&out.join("cv_results.csv"), &csv)?;
    let summary = cv_summary(&results, cfg.cv.ttest)?;
    write(&out.join("summary.txt"), &summary)?;
    Manifest::new("cv", &cfg).write(&out)?;
    print!("{summary}");
    Ok(())
}

fn ablate(mut cfg: RunConfig, a: AblateArgs) -> CliResult<()> {
    apply_data(&mut cfg, a.data);
    apply_net(&mut cfg, a.net);
    set(&mut cfg.cv.folds, a.folds);
    set(&mut cfg.cv.repeats, a.repeats);
    set(&mut cfg.grid.tables, a.tables);
    let tables = cfg
        .grid
        .tables
        .iter()
        .map(|t| match t.as_str() {
            "dense" => Ok(AblationTable::dense_layers()),
            "convolution" => Ok(AblationTable::convolution()),
            other => Err(config(format!("unknown table {other:?}"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let out = out_dir(&mut cfg, a.out)?;
    let store = ResultsStore::open(&out.join("results.csv"))?;
    let with_head = load_dataset(&cfg, FeatureMode::WithHead)?;
    let without_head = load_dataset(&cfg, FeatureMode::WithoutHead)?;
    let computed = ablation_run(
        &with_head,
        &without_head,
        &tables,
        &cv_config(&cfg),
        &store,
        cfg.cv.parallel,
    )?;
    info!("computed {} cells", computed.len());
    let results = store.results();
    let text: String = tables.iter().map(|t| render_table(t, &results) + "\n").collect();
    write(&out.join("tables.txt"), &text)?;
    write(&out.join("report.csv"), &report_csv(&tables, &results))?;
    Manifest::new("ablate", &cfg).write(&out)?;
    print!("{text}");
    Ok(())
}

fn kappa(mut cfg: RunConfig, a: KappaArgs) -> CliResult<()> {
    let mut records = Vec::new();
    for path in &a.labels {
        let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        records.extend(read_label_csv(&text).map_err(|e| data(format!("{}: {e}", path.display())))?);
    }
    let report = agreement_report(&records);
    let text = report.to_text();
    if a.out.out.is_some() || cfg.paths.out.is_some() {
        let out = out_dir(&mut cfg, a.out)?;
        write(&out.join("kappa.txt"), &text)?;
        write(&out.join("kappa.csv"), &report.to_csv())?;
        Manifest::new("kappa", &cfg).write(&out)?;
    }
    print!("{text}");
    Ok(())
}

fn read_pool(path: &Path) -> CliResult<Vec<PoolEntry>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    reader
        .deserialize::<(String, String)>()
        .map(|row| {
            let (id, media) = row.map_err(|e| data(format!("{}: {e}", path.display())))?;
            Ok(PoolEntry { id, media })
        })
        .collect()
}

fn study(mut cfg: RunConfig, a: StudyArgs) -> CliResult<()> {
    set(&mut cfg.paths.pool, a.pool.map(Some));
    set(&mut cfg.paths.journal, a.journal.map(Some));
    set(&mut cfg.study.count, a.count);
    set(&mut cfg.study.size, a.size);
    let condition =
        Condition::parse(&a.condition).ok_or_else(|| config(format!("unknown condition {:?}", a.condition)))?;
    let pool = read_pool(&existing(&cfg.paths.pool, "pool")?)?;
    let request = CreateStudy {
        pool,
        count: cfg.study.count,
        size: cfg.study.size,
        seed: cfg.seed(),
        condition,
    };
    let subsets = gma_study::plan_subsets(
        &request.pool.iter().map(|e| e.id.clone()).collect::<Vec<_>>(),
        request.count,
        request.size,
        request.seed,
    )?;
    let mut plan = serde_json::json!({
        "seed": request.seed,
        "condition": condition,
        "subsets": subsets,
    });
    if let Some(journal) = &cfg.paths.journal {
        let svc = StudyService::open(journal)?;
        let summary = svc.create_study(request)?;
        plan["study_id"] = serde_json::Value::String(summary.study_id);
    }
    let text = serde_json::to_string_pretty(&plan).expect("json") + "\n";
    if a.out.out.is_some() || cfg.paths.out.is_some() {
        let out = out_dir(&mut cfg, a.out)?;
        write(&out.join("plan.json"), &text)?;
        Manifest::new("study", &cfg).write(&out)?;
    }
    print!("{text}");
    Ok(())
}

fn serve_cmd(mut cfg: RunConfig, a: ServeArgs) -> CliResult<()> {
    set(&mut cfg.paths.journal, a.journal.map(Some));
    set(&mut cfg.paths.media_root, a.media_root.map(Some));
    set(&mut cfg.study.addr, a.addr);
    let journal = cfg.paths.journal.clone().ok_or_else(|| config("missing --journal"))?;
    let mut svc = StudyService::open(&journal)?;
    if let Some(root) = &cfg.paths.media_root {
        svc = svc.with_media_root(root.clone());
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(internal)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.study.addr)
            .await
            .map_err(|e| config(format!("cannot listen on {}: {e}", cfg.study.addr)))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(internal)?);
        serve(listener, Arc::new(svc)).await.map_err(internal)
    })
}

/// Generated dataset settings used by `--synthetic`.
pub fn synthetic_section(n_per_class: usize) -> SyntheticSection {
    SyntheticSection {
        n_per_class,
        ..SyntheticSection::default()
    }
}

/// Classes of a labels file, for callers outside the CLI.
pub fn class_labels(path: &Path) -> CliResult<std::collections::BTreeMap<String, gma_core::features::FmClass>> {
    read_class_labels(path)
}
