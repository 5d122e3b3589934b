use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pseudofuse::evalbench::bench::{run_benchmark, BenchConfig};
use pseudofuse::evalbench::synth::{generate_scene, SynthConfig};
use pseudofuse::evalbench::{benchmark_report, evaluate_ap, EvalConfig};
use pseudofuse::fusion::Tta;
use pseudofuse::geometry::Box7;
use pseudofuse::pipeline::io::{
    expand_glob, load_ground_truth, load_pseudo_labels, load_sequence, save_detection_records,
    save_detections, save_ground_truth, save_points, save_poses, save_pseudo_labels,
    DetectionRecord,
};
use pseudofuse::pipeline::{
    fuse_sequence, run_pipeline, static_boxes, track_streams, PipelineConfig, PseudoLabelSet,
    SequenceInput, Stream,
};
use pseudofuse::tracking::MotionState;

#[derive(Parser)]
#[command(
    name = "pseudofuse",
    version,
    about = "Fuse multi-detector 3D boxes into pseudo-labels"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Detection files; the file name may contain `*` and `?`. Repeatable.
    #[arg(long, required = true, num_args = 1..)]
    detections: Vec<String>,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    points: Option<PathBuf>,
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write pseudo-labels.
    Run(Inputs),
    /// Write the fused boxes of both streams (ego frame).
    Fuse(Inputs),
    /// Write the tracks of both streams with motion labels (world frame).
    Track(Inputs),
    /// Write refined and propagated static boxes (world frame).
    Refine(Inputs),
    /// Evaluate pseudo-labels against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON-lines record; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic sequence in the pipeline file formats.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare fusion methods and refinement windows on synthetic scenes.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_toml<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_inputs(inputs: &Inputs) -> Result<(SequenceInput, PipelineConfig)> {
    let cfg = match &inputs.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut paths = Vec::new();
    for pattern in &inputs.detections {
        paths.extend(expand_glob(pattern)?);
    }
    paths.sort();
    paths.dedup();
    let seq = load_sequence(&paths, &inputs.poses, inputs.points.as_deref())?;
    log::info!(
        "loaded {} frames from {} detection files",
        seq.frames.len(),
        paths.len()
    );
    Ok((seq, cfg))
}

#[derive(Serialize)]
struct TrackRecord {
    track_id: u64,
    stream: Stream,
    motion_state: MotionState,
    frame: u32,
    #[serde(rename = "box")]
    bbox: [f64; 7],
    score: f64,
    interpolated: bool,
}

fn params(b: &Box7) -> [f64; 7] {
    [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.heading]
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fuse(inputs: &Inputs) -> Result<()> {
    let (seq, cfg) = load_inputs(inputs)?;
    let fused = fuse_sequence(&seq, &cfg)?;
    let mut records = Vec::new();
    for f in &fused {
        for (stream, boxes) in [
            (Stream::OneFrame, &f.boxes_1f),
            (Stream::SixteenFrame, &f.boxes_16f),
        ] {
            records.extend(boxes.iter().map(|b| DetectionRecord {
                frame: f.frame_idx,
                detector: "fused".into(),
                tta: Tta::NONE,
                stream,
                bbox: params(b),
                score: b.score,
                class: b.class_id,
            }));
        }
    }
    save_detection_records(&records, &inputs.out)?;
    Ok(())
}

fn cmd_track(inputs: &Inputs) -> Result<()> {
    let (seq, cfg) = load_inputs(inputs)?;
    let fused = fuse_sequence(&seq, &cfg)?;
    let tracked = track_streams(&seq, &fused, &cfg)?;
    let mut records = Vec::new();
    for (stream, tracks) in [
        (Stream::OneFrame, &tracked.tracks_1f),
        (Stream::SixteenFrame, &tracked.tracks_16f),
    ] {
        for t in tracks {
            records.extend(t.entries.iter().map(|e| TrackRecord {
                track_id: t.track_id,
                stream,
                motion_state: t.motion_state,
                frame: e.frame_idx,
                bbox: params(&e.bbox),
                score: e.bbox.score,
                interpolated: e.interpolated,
            }));
        }
    }
    write_lines(&inputs.out, records)
}

fn cmd_refine(inputs: &Inputs) -> Result<()> {
    let (seq, cfg) = load_inputs(inputs)?;
    let fused = fuse_sequence(&seq, &cfg)?;
    let tracked = track_streams(&seq, &fused, &cfg)?;
    let mut labels = static_boxes(&tracked.tracks_16f, &seq.frame_indices(), &cfg)?;
    labels.sort_by(|a, b| {
        a.bbox
            .frame_idx
            .cmp(&b.bbox.frame_idx)
            .then(b.bbox.score.total_cmp(&a.bbox.score))
    });
    save_pseudo_labels(
        &PseudoLabelSet {
            config_hash: cfg.hash(),
            labels,
        },
        &inputs.out,
    )?;
    Ok(())
}

fn cmd_run(inputs: &Inputs) -> Result<()> {
    let (seq, cfg) = load_inputs(inputs)?;
    let labels = run_pipeline(&seq, &cfg)?;
    save_pseudo_labels(&labels, &inputs.out)?;
    log::info!(
        "wrote {} pseudo-labels to {}",
        labels.len(),
        inputs.out.display()
    );
    Ok(())
}

/// Align two box lists by frame over the union of their frames.
fn align(pred: Vec<Box7>, gt: Vec<Box7>) -> (Vec<Vec<Box7>>, Vec<Vec<Box7>>) {
    let mut frames: BTreeMap<u32, (Vec<Box7>, Vec<Box7>)> = BTreeMap::new();
    for b in pred {
        frames.entry(b.frame_idx).or_default().0.push(b);
    }
    for b in gt {
        frames.entry(b.frame_idx).or_default().1.push(b);
    }
    frames.into_values().unzip()
}

fn emit(report_lines: &[String], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            for l in report_lines {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
            Ok(())
        }
        None => {
            for l in report_lines {
                println!("{l}");
            }
            Ok(())
        }
    }
}

fn cmd_eval(pred: &Path, gt: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg: EvalConfig = read_toml(config)?;
    cfg.validate()?;
    let labels = load_pseudo_labels(pred)?;
    let truth = load_ground_truth(gt)?;
    let (p, g) = align(labels.labels.iter().map(|l| l.bbox).collect(), truth);
    let table = evaluate_ap(&p, &g, &cfg)?;
    let name = pred
        .file_stem()
        .map_or_else(|| "pred".to_string(), |s| s.to_string_lossy().into_owned());
    let report = benchmark_report(&BTreeMap::from([(name, table)]))?;
    print!("{}", report.text);
    emit(&report.json_lines, out)
}

fn cmd_synth(config: Option<&Path>, out_dir: &Path) -> Result<()> {
    let cfg: SynthConfig = read_toml(config)?;
    let scene = generate_scene(&cfg)?;
    std::fs::create_dir_all(out_dir)?;
    save_detections(&scene.input, &out_dir.join("detections.jsonl"))?;
    let poses: Vec<_> = scene.input.frames.iter().map(|f| f.pose).collect();
    save_poses(&poses, &out_dir.join("poses.jsonl"))?;
    save_points(
        scene
            .input
            .frames
            .iter()
            .filter_map(|f| f.points.as_deref().map(|p| (f.frame_idx, p))),
        &out_dir.join("points.bin"),
    )?;
    save_ground_truth(&scene.ground_truth_boxes(), &out_dir.join("gt.jsonl"))?;
    println!(
        "wrote {} frames, {} ground-truth boxes to {}",
        scene.input.frames.len(),
        scene.ground_truth_boxes().len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_bench(config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg: BenchConfig = read_toml(config)?;
    let results = run_benchmark(&cfg)?;
    let mut lines = Vec::new();
    for r in &results {
        for (title, table) in [
            ("fusion methods", &r.fusion),
            ("refinement window", &r.windows),
        ] {
            let report = benchmark_report(table)?;
            println!("## seed {} {title}\n{}", r.seed, report.text);
            lines.extend(report.json_lines.iter().map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["seed"] = r.seed.into();
                v["study"] = title.into();
                v.to_string()
            }));
        }
    }
    emit(&lines, out)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    match &cli.command {
        Command::Run(i) => cmd_run(i),
        Command::Fuse(i) => cmd_fuse(i),
        Command::Track(i) => cmd_track(i),
        Command::Refine(i) => cmd_refine(i),
        Command::Eval {
            pred,
            gt,
            config,
            out,
        } => cmd_eval(pred, gt, config.as_deref(), out.as_deref()),
        Command::Synth { config, out_dir } => cmd_synth(config.as_deref(), out_dir),
        Command::Bench { config, out } => cmd_bench(config.as_deref(), out.as_deref()),
    }
}
