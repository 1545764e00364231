use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use layoutgen_core::codec::ElementConstraint;
use layoutgen_core::layout::Quantizer;
use layoutgen_core::model::{Preset, Strategy, TrainConfig};
use layoutgen_core::pipeline::{
    optimize_batch, read_jsonl, render_svg, save_edge, save_element, train_edge, train_element,
    write_jsonl, Conditioning, ModelKind, ModelSet, OptOutcome, PipelineError, RunReport,
    SampleOutcome, SampleRequest,
};
use layoutgen_core::stats::{compute_stats, StatReport, DEFAULT_CAP};
use layoutgen_core::synth::{generate_corpus, load_corpus, write_splits, GenConfig};
use layoutgen_core::tensor::AdamConfig;
use layoutgen_core::Layout;

#[derive(Parser)]
#[command(
    name = "layoutgen",
    version,
    about = "Generative layout modeling with constraint graphs"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed used by subcommands that do not get their own.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum CondArg {
    None,
    Boundary,
    Elements,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus and its train/val/test splits.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the element model or one edge model.
    Train {
        /// `element` or `edge:hadj|vadj|wall|door`.
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        condition: CondArg,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        warmup: u64,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Sample constraint sets from a checkpoint directory.
    Sample {
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Layout JSON holding only exterior rectangles.
        #[arg(long)]
        boundary: Option<PathBuf>,
        /// JSON list of `[type, w, h]` room triples in world units.
        #[arg(long)]
        elements: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        greedy: bool,
    },
    /// Filter, solve and validate sampled constraint sets.
    Optimize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare corpora with the layout statistics.
    Eval {
        #[arg(long)]
        ours: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Reference method; defaults to `ours`.
        #[arg(long)]
        theirs: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: f64,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a layout as SVG.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Record to render when the input holds several layouts.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

type Result<T> = std::result::Result<T, PipelineError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error\tcode=3\tkind=runtime\t{e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.exit_code() {
                1 => "usage",
                2 => "data",
                _ => "runtime",
            };
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\tcode={}\tkind={kind}\t{msg}", e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::GenData { config, out } => gen_data(config.as_deref(), &out, seed),
        Cmd::Train {
            model,
            data,
            preset,
            epochs,
            out,
            condition,
            batch_size,
            lr,
            warmup,
            max_steps,
        } => {
            let kind = ModelKind::parse(&model)
                .ok_or_else(|| PipelineError::Usage(format!("unknown model {model:?}")))?;
            let cfg = TrainConfig {
                epochs,
                batch_size,
                adam: AdamConfig {
                    lr,
                    warmup_steps: warmup,
                    ..AdamConfig::default()
                },
                seed: seed.unwrap_or(0),
                max_steps,
            };
            let preset = match preset {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Paper => Preset::Paper,
            };
            let cond = match condition {
                CondArg::None => Conditioning::None,
                CondArg::Boundary => Conditioning::Boundary,
                CondArg::Elements => Conditioning::Elements,
            };
            train(kind, &data, preset, cond, &cfg, &out)
        }
        Cmd::Sample {
            ckpt_dir,
            n,
            boundary,
            elements,
            out,
            top_p,
            temperature,
            greedy,
        } => {
            let strategy = if greedy {
                Strategy::Greedy
            } else if top_p < 1.0 {
                Strategy::Nucleus {
                    p: top_p,
                    temperature,
                }
            } else {
                Strategy::Temperature(temperature)
            };
            sample(
                &ckpt_dir,
                n,
                seed.unwrap_or(0),
                boundary.as_deref(),
                elements.as_deref(),
                strategy,
                &out,
            )
        }
        Cmd::Optimize { input, out } => optimize(&input, &out),
        Cmd::Eval {
            ours,
            gt,
            theirs,
            cap,
            out,
        } => eval(&ours, &gt, theirs.as_deref(), cap, out.as_deref()),
        Cmd::Render { input, out, index } => render(&input, &out, index),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))
}

fn gen_data(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(PipelineError::io(p))?;
            GenConfig::from_toml(&text)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))?
        }
        None => GenConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let layouts = generate_corpus(&cfg).map_err(|e| PipelineError::Data(e.to_string()))?;
    write_splits(out, &layouts).map_err(PipelineError::io(out))?;
    println!("wrote {} layouts to {}", layouts.len(), out.display());
    Ok(())
}

/// Corpus file inside a directory, or the path itself if it is a file.
fn corpus_path(path: &Path, names: &[&str]) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    names
        .iter()
        .map(|n| path.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| PipelineError::Data(format!("{}: none of {names:?} found", path.display())))
}

fn train(
    kind: ModelKind,
    data: &Path,
    preset: Preset,
    cond: Conditioning,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(&corpus_path(data, &["train.jsonl", "corpus.jsonl"])?)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let start = Instant::now();
    let log = match kind {
        ModelKind::Element => {
            let t = train_element(&corpus, preset, cond, cfg)?;
            save_element(&t, out)?;
            t.log
        }
        ModelKind::Edge(k) => {
            let t = train_edge(&corpus, preset, k, cond, cfg)?;
            save_edge(&t, out)?;
            t.log
        }
    };
    let csv = out.with_extension("loss.csv");
    let mut buf = Vec::new();
    log.write_csv(&mut buf).map_err(PipelineError::io(&csv))?;
    fs::write(&csv, buf).map_err(PipelineError::io(&csv))?;
    println!(
        "trained {} for {} steps in {:.1}s, final nll {:.4}",
        kind.label(),
        log.records.len(),
        start.elapsed().as_secs_f64(),
        log.last_nll().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn read_layout(path: &Path, index: usize) -> Result<Layout> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    let mut records = text.lines().filter(|l| !l.trim().is_empty());
    let record = if text.trim_start().starts_with('{')
        && text.lines().filter(|l| !l.trim().is_empty()).count() > 1
    {
        records.nth(index)
    } else {
        (index == 0).then_some(text.as_str())
    };
    let record = record
        .ok_or_else(|| PipelineError::Data(format!("{}: no record {index}", path.display())))?;
    Layout::from_json(record).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn read_elements(path: &Path) -> Result<Vec<ElementConstraint>> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    let triples: Vec<(usize, f64, f64)> = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let q = Quantizer::coord();
    triples
        .into_iter()
        .map(|(t, w, h)| {
            Ok(ElementConstraint::floorplan(
                t,
                q.quantize(w)? as u16,
                q.quantize(h)? as u16,
            ))
        })
        .collect()
}

fn sample(
    ckpt_dir: &Path,
    n: usize,
    seed: u64,
    boundary: Option<&Path>,
    elements: Option<&Path>,
    strategy: Strategy,
    out: &Path,
) -> Result<()> {
    let models = ModelSet::load(ckpt_dir)?;
    let req = SampleRequest {
        boundary: boundary.map(|p| read_layout(p, 0)).transpose()?,
        elements: elements.map(read_elements).transpose()?,
        strategy,
    };
    let start = Instant::now();
    let outcomes = models.sample_batch(&req, n, seed)?;
    let mut report = RunReport::default();
    report.record_samples(&outcomes);
    report
        .timings
        .insert("sample".into(), start.elapsed().as_secs_f64());
    let docs: Vec<_> = outcomes
        .iter()
        .filter_map(|o| match o {
            SampleOutcome::Ok(d) => Some(d.clone()),
            SampleOutcome::Ungrammatical { .. } => None,
        })
        .collect();
    create_dir(out)?;
    write_jsonl(&out.join("samples.jsonl"), &docs)?;
    write_jsonl(&out.join("sample_outcomes.jsonl"), &outcomes)?;
    report.artifacts = vec!["samples.jsonl".into(), "sample_outcomes.jsonl".into()];
    write_text(&out.join("sample_report.json"), &report.to_json())?;
    write_text(&out.join("timings.json"), &report.timings_json())?;
    println!("sampled {n}: {} grammatical", report.grammatical);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(PipelineError::io(path))
}

fn optimize(input: &Path, out: &Path) -> Result<()> {
    let docs = read_jsonl(&corpus_path(input, &["samples.jsonl"])?)?;
    let report_path = input.join("sample_report.json");
    let mut report: RunReport = if report_path.is_file() {
        let text = fs::read_to_string(&report_path).map_err(PipelineError::io(&report_path))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", report_path.display())))?
    } else {
        RunReport {
            attempted: docs.len(),
            grammatical: docs.len(),
            ..RunReport::default()
        }
    };
    let start = Instant::now();
    let outcomes = optimize_batch(&docs);
    report.record_optimization(&outcomes);
    report
        .timings
        .insert("optimize".into(), start.elapsed().as_secs_f64());
    report
        .check()
        .map_err(|e| PipelineError::Data(format!("inconsistent sample report: {e}")))?;

    create_dir(out)?;
    let mut layouts = String::new();
    let mut rejections = Vec::new();
    for o in &outcomes {
        match o {
            OptOutcome::Accepted { layout, .. } => {
                layouts.push_str(&layout.to_json());
                layouts.push('\n');
            }
            OptOutcome::Rejected {
                index,
                code,
                detail,
                ..
            } => rejections.push(serde_json::json!({
                "index": index,
                "reason": code,
                "detail": detail,
            })),
        }
    }
    write_text(&out.join("layouts.jsonl"), &layouts)?;
    write_jsonl(&out.join("rejections.jsonl"), &rejections)?;
    report.artifacts.extend([
        "layouts.jsonl".into(),
        "rejections.jsonl".into(),
        "report.json".into(),
    ]);
    write_text(&out.join("report.json"), &report.to_json())?;
    write_text(&out.join("timings.json"), &report.timings_json())?;
    println!(
        "optimized {} samples: {} feasible, {} degenerate, {} other rejections",
        docs.len(),
        report.feasible,
        report.degenerate_rejected,
        report.rejections.values().sum::<usize>() - report.degenerate_rejected
    );
    Ok(())
}

fn load_eval_corpus(path: &Path) -> Result<Vec<Layout>> {
    Ok(load_corpus(&corpus_path(
        path,
        &["layouts.jsonl", "test.jsonl", "corpus.jsonl"],
    )?)?)
}

fn eval(ours: &Path, gt: &Path, theirs: Option<&Path>, cap: f64, out: Option<&Path>) -> Result<()> {
    let gt_c = load_eval_corpus(gt)?;
    let first = gt_c
        .first()
        .ok_or_else(|| PipelineError::Data("ground-truth corpus is empty".into()))?;
    let (mode, types) = (first.mode, first.types.clone());
    let stats = |c: &[Layout]| {
        compute_stats(mode, &types, c).map_err(|e| PipelineError::Data(e.to_string()))
    };
    let ours_c = load_eval_corpus(ours)?;
    let theirs_c = match theirs {
        Some(p) => load_eval_corpus(p)?,
        None => ours_c.clone(),
    };
    let report = StatReport::new(stats(&ours_c)?, stats(&theirs_c)?, stats(&gt_c)?, cap)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    print!("{}", report.table());
    if let Some(p) = out {
        write_text(p, &report.to_json())?;
    }
    Ok(())
}

fn render(input: &Path, out: &Path, index: usize) -> Result<()> {
    let layout = read_layout(input, index)?;
    write_text(out, &render_svg(&layout))
}
