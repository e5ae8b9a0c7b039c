//! `lhsi` command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lhsi_core::dataio::{list_images, load_image, load_manifest, save_image, save_pfm};
use lhsi_core::exec::try_par_map;
use lhsi_core::gradsuite;
use lhsi_core::lhsi::LhsiParams;
use lhsi_core::metrics::{score_pair, summarize, ImageScores};
use lhsi_core::refspaces::Space;
use lhsi_core::train::{train_loop, Checkpoint, Dataset, TrainConfig};
use lhsi_core::Error;

#[derive(Parser, Debug)]
#[command(name = "lhsi", version, about = "Learnable HSI color space and white-balance correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Round-trip an image through a color space, or dump its representation.
    Convert(ConvertArgs),
    /// Train a correction model.
    Train(TrainArgs),
    /// Correct every image in a directory.
    Correct(CorrectArgs),
    /// Score predictions against ground truth, paired by file name.
    Eval(EvalArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write the learned channel maps as CSV.
    DumpCurves(DumpCurvesArgs),
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long, default_value = "lhsi")]
    space: Space,
    /// Take the color-space parameters from a checkpoint (lhsi only).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Write the 3-channel representation as PFM instead of converting back.
    #[arg(long)]
    forward_only: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON training config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON manifest of training images. Without it a synthetic set is used.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of synthetic training scenes when no manifest is given.
    #[arg(long, default_value_t = 64)]
    synthetic: usize,
    /// Side of the synthetic scenes.
    #[arg(long, default_value_t = 64)]
    synthetic_size: usize,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training report; defaults to the checkpoint path with `.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorrectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Longer side of the working resolution; 0 keeps the native size.
    /// Defaults to the checkpoint's training setting.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DumpCurvesArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 101)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e if e.is_io() => Failure::Io(e.to_string()),
            e => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn convert(a: &ConvertArgs) -> CliResult<()> {
    let params = match &a.ckpt {
        Some(_) if a.space != Space::Lhsi => {
            return Err(Failure::Usage("--ckpt only applies to --space lhsi".into()));
        }
        Some(p) => Checkpoint::load(p)?.to_model()?.lhsi,
        None => LhsiParams::default(),
    };
    let img = load_image(&a.input)?;
    let rep = a.space.forward(&img, &params)?;
    if a.forward_only {
        save_pfm(&rep, &a.output)?;
    } else {
        save_image(&a.space.inverse(&rep, &params)?, &a.output)?;
    }
    Ok(())
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_json(&fs::read_to_string(p).map_err(|e| io_failure(p, e))?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let data = match &a.data {
        Some(m) => Dataset::from_manifest(&load_manifest(m)?, config.val_count, config.seed)?,
        None => Dataset::synthetic(a.synthetic, config.val_count, a.synthetic_size, config.seed),
    };
    eprintln!(
        "training {} epochs in {} on {} images ({} held out)",
        config.epochs,
        config.space,
        data.train.len(),
        data.val.len()
    );
    let out = train_loop(&config, &data, |l| {
        let loss = l.train_loss.map_or("-".to_string(), |v| format!("{v:.6}"));
        let val = l.val_de2000.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!("epoch {:>4}  lr {:.3e}  loss {loss}  val dE2000 {val}", l.epoch, l.lr);
    })?;
    out.checkpoint.save(&a.out)?;
    let report = a.report.clone().unwrap_or_else(|| a.out.with_extension("report.json"));
    out.report.save(&report)?;
    let axis = out.model.lhsi.axis.direction()?;
    println!(
        "axis {:.4} {:.4} {:.4}  val dE2000 {:?} -> {:?}",
        axis[0], axis[1], axis[2], out.report.initial_val_de2000, out.report.final_val_de2000
    );
    Ok(())
}

fn images_in(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Failure::Io(format!("{}: no PNG or PPM images", dir.display())));
    }
    Ok(files)
}

fn correct(a: &CorrectArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let size = a.size.unwrap_or(ckpt.config.net_size);
    let model = ckpt.to_model()?;
    let inputs = images_in(&a.input)?;
    fs::create_dir_all(&a.output).map_err(|e| io_failure(&a.output, e))?;
    let fixed = try_par_map(&inputs, |p| model.correct(&load_image(p)?, size))?;
    for (p, img) in inputs.iter().zip(&fixed) {
        save_image(img, a.output.join(file_name(p)))?;
    }
    eprintln!("corrected {} image(s)", fixed.len());
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let index = |dir: &Path| -> CliResult<BTreeMap<String, PathBuf>> {
        Ok(images_in(dir)?.into_iter().map(|p| (file_name(&p), p)).collect())
    };
    let (pred, gt) = (index(&a.pred)?, index(&a.gt)?);
    let missing: Vec<&str> = pred.keys().filter(|k| !gt.contains_key(*k)).map(String::as_str).collect();
    let orphans: Vec<&str> = gt.keys().filter(|k| !pred.contains_key(*k)).map(String::as_str).collect();
    if !missing.is_empty() || !orphans.is_empty() {
        return Err(Failure::Io(format!(
            "unmatched files: no ground truth for {missing:?}, no prediction for {orphans:?}"
        )));
    }
    let names: Vec<&String> = pred.keys().collect();
    let scores: Vec<ImageScores> = try_par_map(&names, |n| score_pair(&load_image(&pred[*n])?, &load_image(&gt[*n])?))?;

    let columns: [(&str, fn(&ImageScores) -> f64); 3] =
        [("mse", |s| s.mse), ("mae_deg", |s| s.mae_deg), ("de2000", |s| s.de2000)];
    let mut summaries = Vec::new();
    for (name, f) in columns {
        let values: Vec<f64> = scores.iter().map(f).collect();
        summaries.push((name, summarize(&values)?));
    }

    let mut w = csv::WriterBuilder::new().flexible(true).from_path(&a.report)?;
    w.write_record(["path", "mse", "mae_deg", "de2000"])?;
    for (n, s) in names.iter().zip(&scores) {
        w.write_record([n.to_string(), s.mse.to_string(), s.mae_deg.to_string(), s.de2000.to_string()])?;
    }
    w.write_record([""])?;
    w.write_record(["metric", "mean", "q1", "q2", "q3"])?;
    for (name, m) in &summaries {
        w.write_record([name.to_string(), m.mean.to_string(), m.q1.to_string(), m.q2.to_string(), m.q3.to_string()])?;
        println!("{name:>8}  mean {:.4}  q1 {:.4}  q2 {:.4}  q3 {:.4}", m.mean, m.q1, m.q2, m.q3);
    }
    w.flush().map_err(|e| io_failure(&a.report, e))?;
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let entries = gradsuite::run(a.seed)?;
    let mut failed = Vec::new();
    for e in &entries {
        let verdict = if e.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<16} worst rel. error {:.3e}  ({} coords)  {verdict}",
            e.name, e.report.max_rel_error, e.report.coords_checked
        );
        if !e.passed() {
            failed.push(e.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "gradient check above {:e} for {failed:?}",
            gradsuite::TOLERANCE
        )))
    }
}

fn dump_curves(a: &DumpCurvesArgs) -> CliResult<()> {
    if a.samples < 2 {
        return Err(Failure::Usage("--samples must be at least 2".into()));
    }
    let lhsi = Checkpoint::load(&a.ckpt)?.to_model()?.lhsi;
    let axis = lhsi.axis.direction()?;
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(&a.out)?;
    w.write_record(["axis".to_string(), axis[0].to_string(), axis[1].to_string(), axis[2].to_string()])?;
    w.write_record(["v", "map_t", "map_r", "map_theta"])?;
    for k in 0..a.samples {
        let v = k as f64 / (a.samples - 1) as f64;
        let row = [v, lhsi.map_t.forward(v)?, lhsi.map_r.forward(v)?, lhsi.map_theta.forward(v)?];
        w.write_record(row.map(|x| x.to_string()))?;
    }
    w.flush().map_err(|e| io_failure(&a.out, e))?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Convert(a) => convert(a),
        Command::Train(a) => train(a),
        Command::Correct(a) => correct(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::DumpCurves(a) => dump_curves(a),
    }
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
