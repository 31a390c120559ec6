//! Command-line surface. Each subcommand works inside a run directory
//! (`--out`, default `.`) holding these files:
//!
//! | file                 | written by          | columns                                    |
//! |----------------------|---------------------|--------------------------------------------|
//! | `config.cfg`         | gen-data, train     | `key = value` lines                        |
//! | `dataset.cyds`       | gen-data, train     | binary                                     |
//! | `checkpoint.cyck`    | train               | binary                                     |
//! | `train_log.csv`      | train               | step,epoch,lr,logit_scale,clip_loss,in_modal_loss,cross_modal_loss,total |
//! | `zeroshot.csv`       | eval-zeroshot       | k,accuracy (k = 1,3,5)                     |
//! | `consistency.csv`    | eval-consistency    | k,score (k = 1,3,5,10)                     |
//! | `geometry.csv`       | eval-geometry       | alignment,uniformity,paired_alignment,paired_uniformity,cross_modal_gap |
//! | `grained.csv`        | eval-grained        | fine,coarse                                |
//! | `linear_probe.csv`   | linear-probe        | accuracy                                   |
//! | `*.cyem`             | export-embeddings   | binary                                     |
//!
//! `report RUN_DIR... --out FILE` writes one row per run directory with
//! columns `variant,zs_top1,consistency_k1,alignment,uniformity`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{sample_dataset, SyntheticDataset};
use crate::error::{Error, Result};
use crate::eval::{Evaluator, CONSISTENCY_KS, ZERO_SHOT_KS};
use crate::io::{self, fmt_f64, RunConfig};
use crate::train::{train, DualEncoder};

pub const CONFIG_FILE: &str = "config.cfg";
pub const DATASET_FILE: &str = "dataset.cyds";
pub const CHECKPOINT_FILE: &str = "checkpoint.cyck";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Parser, Debug)]
#[command(
    name = "cyclip",
    version,
    about = "Cycle-consistent contrastive training on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run config file; defaults to `<out>/config.cfg` when present, else built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training seed (the data seed for gen-data).
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the synthetic dataset.
    GenData(Common),
    /// Train a dual encoder; generates the dataset first if missing.
    Train(Common),
    EvalZeroshot(Common),
    EvalConsistency(Common),
    /// Alignment, uniformity and the cross-modal gap.
    EvalGeometry(Common),
    EvalGrained(Common),
    LinearProbe(Common),
    /// Write test image, test text and class text embeddings as `.cyem` files.
    ExportEmbeddings(Common),
    /// Summarize several run directories into one CSV.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(c) => gen_data(&c),
        Command::Train(c) => train_cmd(&c),
        Command::EvalZeroshot(c) => {
            let (_, ev) = open_run(&c)?;
            let rows = Evaluator::new(&ev.model, &ev.dataset)?
                .zero_shot_topk(&ZERO_SHOT_KS)?
                .into_iter()
                .map(|(k, a)| vec![k.to_string(), fmt_f64(a)])
                .collect::<Vec<_>>();
            io::write_csv_file(c.out.join("zeroshot.csv"), &["k", "accuracy"], &rows)
        }
        Command::EvalConsistency(c) => {
            let (_, ev) = open_run(&c)?;
            let rows = Evaluator::new(&ev.model, &ev.dataset)?
                .consistency(&CONSISTENCY_KS)?
                .into_iter()
                .map(|(k, s)| vec![k.to_string(), fmt_f64(s)])
                .collect::<Vec<_>>();
            io::write_csv_file(c.out.join("consistency.csv"), &["k", "score"], &rows)
        }
        Command::EvalGeometry(c) => {
            let (_, ev) = open_run(&c)?;
            let g = Evaluator::new(&ev.model, &ev.dataset)?.geometry()?;
            io::write_csv_file(
                c.out.join("geometry.csv"),
                &[
                    "alignment",
                    "uniformity",
                    "paired_alignment",
                    "paired_uniformity",
                    "cross_modal_gap",
                ],
                &[[
                    g.alignment,
                    g.uniformity,
                    g.paired_alignment,
                    g.paired_uniformity,
                    g.cross_modal_gap,
                ]
                .into_iter()
                .map(fmt_f64)
                .collect()],
            )
        }
        Command::EvalGrained(c) => {
            let (_, ev) = open_run(&c)?;
            let (fine, coarse) = Evaluator::new(&ev.model, &ev.dataset)?.grained()?;
            io::write_csv_file(
                c.out.join("grained.csv"),
                &["fine", "coarse"],
                &[vec![fmt_f64(fine), fmt_f64(coarse)]],
            )
        }
        Command::LinearProbe(c) => {
            let (cfg, ev) = open_run(&c)?;
            let acc = Evaluator::new(&ev.model, &ev.dataset)?.linear_probe(&cfg.probe)?;
            io::write_csv_file(
                c.out.join("linear_probe.csv"),
                &["accuracy"],
                &[vec![fmt_f64(acc)]],
            )
        }
        Command::ExportEmbeddings(c) => export(&c),
        Command::Report { runs, out } => report(&runs, out.as_deref()),
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let path = c.config.clone().or_else(|| {
        let p = c.out.join(CONFIG_FILE);
        p.exists().then_some(p)
    });
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn gen_data(c: &Common) -> Result<()> {
    let mut cfg = resolve_config(c)?;
    if let Some(seed) = c.seed {
        cfg.data.seed = seed;
    }
    std::fs::create_dir_all(&c.out)?;
    let ds = sample_dataset(&cfg.data)?;
    io::write_dataset(c.out.join(DATASET_FILE), &ds)?;
    cfg.save(c.out.join(CONFIG_FILE))
}

/// Reuses the run directory's dataset when it was generated from `cfg`.
fn load_or_generate(cfg: &RunConfig, dir: &Path) -> Result<SyntheticDataset> {
    let path = dir.join(DATASET_FILE);
    if path.exists() {
        let ds = io::read_dataset(&path)?;
        if ds.config != cfg.data {
            return Err(Error::BadConfig(format!(
                "{} was generated with a different data config",
                path.display()
            )));
        }
        return Ok(ds);
    }
    let ds = sample_dataset(&cfg.data)?;
    io::write_dataset(&path, &ds)?;
    Ok(ds)
}

fn train_cmd(c: &Common) -> Result<()> {
    let mut cfg = resolve_config(c)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    cfg.train.validate()?;
    std::fs::create_dir_all(&c.out)?;
    let ds = load_or_generate(&cfg, &c.out)?;
    let out = train(&ds, &cfg.train)?;
    io::write_checkpoint(c.out.join(CHECKPOINT_FILE), &out.model)?;
    io::write_csv_file(
        c.out.join(TRAIN_LOG_FILE),
        &io::TRAIN_LOG_HEADER,
        &io::train_log_rows(&out.log),
    )?;
    cfg.save(c.out.join(CONFIG_FILE))
}

struct Run {
    model: DualEncoder,
    dataset: SyntheticDataset,
}

fn open_run(c: &Common) -> Result<(RunConfig, Run)> {
    let mut cfg = resolve_config(c)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    let run = open_dir(&c.out)?;
    Ok((cfg, run))
}

fn open_dir(dir: &Path) -> Result<Run> {
    let model = io::read_checkpoint(dir.join(CHECKPOINT_FILE))?;
    let dataset = io::read_dataset(dir.join(DATASET_FILE))?;
    if model.image_encoder.input_dim() != dataset.config.image_dim
        || model.text_encoder.input_dim() != dataset.config.text_dim
    {
        return Err(Error::ShapeMismatch(
            "checkpoint does not match dataset dimensions".into(),
        ));
    }
    Ok(Run { model, dataset })
}

fn export(c: &Common) -> Result<()> {
    let (_, run) = open_run(c)?;
    let ev = Evaluator::new(&run.model, &run.dataset)?;
    let labels: Vec<i64> = ev.test.labels.iter().map(|&l| l as i64).collect();
    io::write_embeddings(
        c.out.join("test_images.cyem"),
        &ev.test.images,
        Some(&labels),
    )?;
    io::write_embeddings(c.out.join("test_texts.cyem"), &ev.test.texts, Some(&labels))?;
    let class_ids: Vec<i64> = (0..ev.classes.n_classes() as i64).collect();
    io::write_embeddings(
        c.out.join("class_texts.cyem"),
        ev.classes.batch(),
        Some(&class_ids),
    )
}

fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        let cfg = RunConfig::load(dir.join(CONFIG_FILE))?;
        let run = open_dir(dir)?;
        let eval = Evaluator::new(&run.model, &run.dataset)?.evaluate()?;
        rows.push(io::report_row(cfg.train.variant.name(), &eval));
    }
    match out {
        Some(path) => io::write_csv_file(path, &io::REPORT_HEADER, &rows),
        None => io::write_csv(std::io::stdout().lock(), &io::REPORT_HEADER, &rows),
    }
}
