use std::error::Error;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use sketchmesh::data::{Category, Dataset, DatasetConfig, Sample, Split};
use sketchmesh::geometry::check_watertight;
use sketchmesh::geometry::io::{read_mesh, write_mesh, MeshFormat};
use sketchmesh::image::GrayImage;
use sketchmesh::losses::LossReport;
use sketchmesh::training::{
    ablate, evaluate, evaluate_with, robustness_eval, Checkpoint, EvalReport, InferenceSession,
    TrainConfig, Trainer, ROBUSTNESS_LEVELS,
};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

const CHECKPOINT_FILE: &str = "model.d3sk";
const LOG_FILE: &str = "train_log.csv";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "sketchmesh", version, about = "Sketch to watertight 3D mesh")]
struct Cli {
    /// Key-value config file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (file or directory depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a procedural dataset.
    GenData(GenData),
    /// Train a model and write checkpoint, log and config.
    Train(Train),
    /// Voxel and silhouette IoU on a dataset split.
    Eval(Eval),
    /// Evaluate under partial-sketch corruption.
    Robustness(DataCkpt),
    /// Train baseline, SD and SD+SEM variants over several seeds.
    Ablate(Ablate),
    /// Sketch PNG to mesh file.
    Infer(Infer),
    /// Convert a mesh between OBJ and STL.
    Export(Export),
    /// Run the HTTP inference service.
    Serve(Serve),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 32)]
    n_train: usize,
    #[arg(long, default_value_t = 8)]
    n_test: usize,
    /// Defaults to the config resolution.
    #[arg(long)]
    resolution: Option<usize>,
    /// Comma-separated category names; all by default.
    #[arg(long, value_delimiter = ',')]
    categories: Vec<Category>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Overrides the config step count.
    #[arg(long)]
    steps: Option<u64>,
    /// Train one model per category into `<out>/<category>/`.
    #[arg(long)]
    per_class: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file, or a per-class output directory with `--per-class`.
    #[arg(long, required_unless_present = "gt")]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitArg,
    /// Score ground-truth meshes against themselves.
    #[arg(long)]
    gt: bool,
    #[arg(long)]
    per_class: bool,
}

#[derive(Args)]
struct DataCkpt {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Allowed shortfall in the ordering check.
    #[arg(long, default_value_t = 0.01)]
    slack: f64,
}

#[derive(Args)]
struct Infer {
    #[arg(long)]
    sketch: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Args)]
struct Export {
    /// Input mesh (.obj or .stl).
    #[arg(long)]
    mesh: PathBuf,
    /// Output format; defaults to the `--out` extension.
    #[arg(long)]
    format: Option<MeshFormat>,
}

#[derive(Args)]
struct Serve {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("config {}: {e}", p.display()))?;
            TrainConfig::parse_text(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    Ok(cli.out.as_deref().ok_or("this command needs --out")?)
}

fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    let ds = Dataset::load(dir)?;
    let samples: Vec<Sample> = ds.split(split).into_iter().cloned().collect();
    if samples.is_empty() {
        return Err(format!("no {split:?} samples in {}", dir.display()).into());
    }
    Ok(Dataset {
        resolution: ds.resolution,
        samples,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn train_one(cfg: &TrainConfig, samples: &[&Sample], out: &Path, quiet: bool) -> Result<String> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    let mut log = std::io::BufWriter::new(fs::File::create(out.join(LOG_FILE))?);
    writeln!(log, "{}", LossReport::CSV_HEADER)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let steps = cfg.steps;
    trainer.fit(samples, steps, |step, report, lr| {
        writeln!(log, "{}", report.csv_row(step, lr))
            .map_err(|e| sketchmesh::training::TrainError::Io(e.to_string()))?;
        if !quiet && (step % 50 == 0 || step + 1 == steps) {
            eprintln!(
                "step {step:>5}  total {:.5}  l_sp {:.5}  l_r {:.5}  lr {lr:.2e}",
                report.total, report.l_sp, report.l_r
            );
        }
        Ok(())
    })?;
    log.flush()?;
    let hash = Checkpoint::from_trainer(&trainer).save(&out.join(CHECKPOINT_FILE))?;
    Ok(hash)
}

fn cmd_train(cli: &Cli, a: &Train) -> Result<()> {
    let out = require_out(cli)?;
    let mut cfg = load_config(cli)?;
    if let Some(s) = a.steps {
        cfg.steps = s;
        cfg.validate()?;
    }
    let ds = load_split(&a.data, Split::Train)?;
    if ds.resolution != cfg.net.resolution {
        return Err(format!(
            "dataset resolution {} differs from config resolution {}",
            ds.resolution, cfg.net.resolution
        )
        .into());
    }
    eprint!("effective config:\n{}", cfg.to_text());
    let all: Vec<&Sample> = ds.samples.iter().collect();
    if a.per_class {
        for c in Category::ALL {
            let subset: Vec<&Sample> = all.iter().copied().filter(|s| s.category == c).collect();
            if subset.is_empty() {
                continue;
            }
            let hash = train_one(&cfg, &subset, &out.join(c.as_str()), a.quiet)?;
            println!("{c} {hash}");
        }
    } else {
        let hash = train_one(&cfg, &all, out, a.quiet)?;
        println!("{hash}");
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &Eval) -> Result<()> {
    let ds = load_split(&a.data, a.split.into())?;
    let samples: Vec<&Sample> = ds.samples.iter().collect();
    let report: EvalReport = if a.gt {
        evaluate_with(&samples, |s| Ok((s.gt_mesh.clone(), None)))?
    } else {
        let ckpt = a.ckpt.as_deref().expect("clap requires --ckpt");
        if a.per_class {
            let mut sessions = std::collections::BTreeMap::new();
            for s in &samples {
                if let std::collections::btree_map::Entry::Vacant(e) = sessions.entry(s.category) {
                    let p = ckpt.join(s.category.as_str()).join(CHECKPOINT_FILE);
                    e.insert(InferenceSession::load(&p)?);
                }
            }
            evaluate_with(&samples, |s| {
                Ok((sessions[&s.category].infer(&s.sketch)?.mesh, None))
            })?
        } else {
            let session = InferenceSession::load(ckpt)?;
            evaluate(session.model(), &samples)?
        }
    };
    print!("{}", report.to_table());
    if let Some(out) = &cli.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_robustness(cli: &Cli, a: &DataCkpt) -> Result<()> {
    let ds = load_split(&a.data, a.split.into())?;
    let samples: Vec<&Sample> = ds.samples.iter().collect();
    let session = InferenceSession::load(&a.ckpt)?;
    let levels = robustness_eval(session.model(), &samples, &ROBUSTNESS_LEVELS)?;
    println!(
        "{:<14} {:>9} {:>9} {:>9}",
        "missing", "voxel", "sil", "multiview"
    );
    for l in &levels {
        let r = &l.report;
        println!(
            "{:<14} {:>9.3} {:>9.3} {:>9.3}",
            format!("[{:.2},{:.2}]", l.lo, l.hi),
            r.mean_voxel_iou,
            r.mean_silhouette_iou,
            r.mean_multiview_iou
        );
    }
    if let Some(out) = &cli.out {
        write_json(out, &levels)?;
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, a: &Ablate) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(s) = a.steps {
        cfg.steps = s;
        cfg.validate()?;
    }
    let ds = Dataset::load(&a.data)?;
    let (train, test) = (ds.split(Split::Train), ds.split(Split::Test));
    if train.is_empty() || test.is_empty() {
        return Err("ablation needs both train and test samples".into());
    }
    let report = ablate(&cfg, &train, &test, &a.seeds, |r| {
        eprintln!(
            "{:<8} seed {:<4} multiview {:.4}",
            r.variant.name(),
            r.seed,
            r.multiview_iou
        );
    })?;
    print!("{}", report.to_table());
    if report.ordering_holds(a.slack) {
        println!("ordering: ok");
    } else {
        println!(
            "ordering: REGRESSION (sd+sem >= sd >= baseline - {} failed)",
            a.slack
        );
    }
    if let Some(out) = &cli.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_infer(cli: &Cli, a: &Infer) -> Result<()> {
    let out = require_out(cli)?;
    let session = InferenceSession::load(&a.ckpt)?;
    let img = GrayImage::decode_png(&fs::read(&a.sketch)?)?;
    let sketch = session.sketch_from_image(&img)?;
    let result = session.infer(&sketch)?;
    let format = format_for(out, None)?;
    write_mesh(&result.mesh, format, out)?;
    eprintln!(
        "{} vertices, {} faces in {:.2} ms",
        result.mesh.vertex_count(),
        result.mesh.face_count(),
        result.elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

fn format_for(path: &Path, explicit: Option<MeshFormat>) -> Result<MeshFormat> {
    if let Some(f) = explicit {
        return Ok(f);
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("obj");
    Ok(ext.parse()?)
}

fn cmd_export(cli: &Cli, a: &Export) -> Result<()> {
    let out = require_out(cli)?;
    let mesh = read_mesh(&a.mesh)?;
    let report = check_watertight(&mesh)?;
    if !report.is_watertight {
        return Err(format!("{} is not watertight", a.mesh.display()).into());
    }
    write_mesh(&mesh, format_for(out, a.format)?, out)?;
    Ok(())
}

fn cmd_serve(a: &Serve) -> Result<()> {
    let session = Arc::new(InferenceSession::load(&a.ckpt)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(sketchmesh::service::serve(session, a.bind))?;
    Ok(())
}

fn cmd_gen_data(cli: &Cli, a: &GenData) -> Result<()> {
    let out = require_out(cli)?;
    let cfg = load_config(cli)?;
    let dc = DatasetConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        categories: if a.categories.is_empty() {
            Category::ALL.to_vec()
        } else {
            a.categories.clone()
        },
        resolution: a.resolution.unwrap_or(cfg.net.resolution),
        seed: cfg.seed,
    };
    let records = Dataset::generate(&dc)?.write(out)?;
    println!("{} samples written to {}", records.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(cli, a),
        Cmd::Train(a) => cmd_train(cli, a),
        Cmd::Eval(a) => cmd_eval(cli, a),
        Cmd::Robustness(a) => cmd_robustness(cli, a),
        Cmd::Ablate(a) => cmd_ablate(cli, a),
        Cmd::Infer(a) => cmd_infer(cli, a),
        Cmd::Export(a) => cmd_export(cli, a),
        Cmd::Serve(a) => cmd_serve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let needs_out = matches!(
        cli.cmd,
        Cmd::GenData(_) | Cmd::Train(_) | Cmd::Infer(_) | Cmd::Export(_)
    );
    if needs_out && cli.out.is_none() {
        eprintln!("error: this command needs --out\n\nFor more information, try '--help'.");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
