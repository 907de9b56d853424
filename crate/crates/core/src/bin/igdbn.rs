//! Command line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
//! 3 no confirmed tracks, 4 model store missing or corrupt.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use igdbn::config::RunConfig;
use igdbn::io::{self, ModelStore};
use igdbn::pipeline::{self, Input, TrackSelection};
use igdbn::scene::{generate_scene, load_frames, write_frames};
use igdbn::{plot, Error};

#[derive(Parser)]
#[command(name = "igdbn", version, about = "LiDAR blockage prediction with coupled dynamic Bayesian networks")]
struct Cli {
    /// Replaces every random seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, env = "IGDBN_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InputArgs {
    /// Frame file (`frame <t>` headers followed by `x y z` lines).
    #[arg(long)]
    frames: Option<PathBuf>,

    /// Track file (`track_id timestamp x y z visible_flag`).
    #[arg(long)]
    tracks: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: frames and ground-truth tracks.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Learn models and the word book, writing a model store to the output directory.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Select a model per track and run the particle filter.
    Test {
        #[command(flatten)]
        input: InputArgs,
        /// Model store written by `train`.
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render SVG figures from a model store, a test output directory, an
    /// inference log or a selection report.
    Plot {
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        #[arg(long, env = "IGDBN_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::NoTracks => 3,
            Error::Store(..) => 4,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: String) -> Failure {
    Failure { code: 2, msg }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Written by every command so a rerun can tell whether the configuration changed.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    command: String,
    version: String,
    config_hash: String,
    outputs: Vec<String>,
}

const RUN_MANIFEST: &str = "run.json";

fn load_config(common_config: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match common_config {
        Some(p) => RunConfig::load(p).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn make_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(dir.to_path_buf(), e).into())
}

fn write_file(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> CliResult {
    io::write(&dir.join(name), contents)?;
    outputs.push(name.to_owned());
    Ok(())
}

fn finish_run(dir: &Path, command: &str, cfg: &RunConfig, mut outputs: Vec<String>) -> CliResult {
    let path = dir.join(RUN_MANIFEST);
    let hash = cfg.hash();
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(prev) = serde_json::from_str::<RunManifest>(&text) {
            if prev.command == command && prev.config_hash == hash {
                eprintln!("note: same configuration as the previous {command} run in {}", dir.display());
            }
        }
    }
    outputs.sort();
    let m = RunManifest {
        command: command.to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: hash,
        outputs,
    };
    io::write(&path, &json(&m))?;
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn read_input(input: &InputArgs) -> CliResult<Input> {
    match (&input.frames, &input.tracks) {
        (Some(f), None) => Ok(Input::Frames(load_frames(f)?)),
        (None, Some(t)) => Ok(Input::Tracks(io::load_tracks(t)?)),
        _ => Err(usage("give exactly one of --frames or --tracks".into())),
    }
}

fn simulate(common: &Common, seed: Option<u64>) -> CliResult {
    let cfg = load_config(common.config.as_deref(), seed)?;
    let out = generate_scene(&cfg.scene)?;
    let dir = &common.out_dir;
    make_dir(dir)?;
    let mut outputs = Vec::new();
    write_file(dir, "frames.txt", &write_frames(&out.frames), &mut outputs)?;
    let truth: Vec<_> = out.truth.iter().filter_map(|t| t.to_track()).collect();
    io::save_tracks(&dir.join("truth.tracks"), &truth)?;
    outputs.extend(["truth.tracks".to_owned(), "truth.appearance".to_owned()]);
    println!("{} frames, {} visible objects -> {}", out.frames.len(), truth.len(), dir.display());
    finish_run(dir, "simulate", &cfg, outputs)
}

fn train(input: &InputArgs, common: &Common, seed: Option<u64>) -> CliResult {
    let cfg = load_config(common.config.as_deref(), seed)?;
    let data = read_input(input)?;
    let out = pipeline::train(&data, &cfg)?;
    let dir = &common.out_dir;
    make_dir(dir)?;
    let mut outputs = Vec::new();
    io::save_tracks(&dir.join("tracks.tracks"), &out.tracks)?;
    outputs.extend(["tracks.tracks".to_owned(), "tracks.appearance".to_owned()]);
    write_file(dir, "states.gs", &io::write_states(&out.states), &mut outputs)?;
    let store = ModelStore::new(out.models, out.book, &cfg.hash())?;
    store.save(dir)?;
    outputs.push("manifest.json".into());
    let dummies = store.models.iter().filter(|m| m.is_dummy()).count();
    println!(
        "{} tracks, {} normal and {dummies} dummy models, {} words -> {}",
        out.tracks.len(),
        store.models.len() - dummies,
        store.book.len(),
        dir.display()
    );
    finish_run(dir, "train", &cfg, outputs)
}

fn error_table(selections: &[TrackSelection]) -> String {
    let mut s = String::new();
    for sel in selections {
        let _ = writeln!(s, "track {}: selected model {}", sel.track_id, sel.report.selected);
        for m in &sel.report.models {
            let mark = if m.model_id == sel.report.selected { "*" } else { " " };
            let _ = writeln!(s, "  {mark} model {:>5}  overall error {:>12.3} m", m.model_id, m.total);
        }
    }
    s
}

fn test(input: &InputArgs, store_dir: &Path, common: &Common, seed: Option<u64>) -> CliResult {
    let cfg = load_config(common.config.as_deref(), seed)?;
    let store = ModelStore::load(store_dir)?;
    if store.manifest.config_hash != cfg.hash() {
        eprintln!("note: configuration differs from the one the store was trained with");
    }
    let data = read_input(input)?;
    let out = pipeline::test(&data, &store.models, &store.book, &cfg)?;
    let dir = &common.out_dir;
    make_dir(dir)?;
    let mut outputs = Vec::new();
    write_file(dir, "selection.json", &json(&out.selections), &mut outputs)?;
    write_file(dir, "inference.log", &io::write_inference_log(&out.steps), &mut outputs)?;
    write_file(dir, "summary.json", &json(&out.summary), &mut outputs)?;
    write_file(dir, "states.gs", &io::write_states(&out.states), &mut outputs)?;
    print!("{}", error_table(&out.selections));
    let s = &out.summary;
    println!(
        "{} frames, {} anomalies (rate {:.4}), {} frames with untrained words",
        s.total_frames, s.anomaly_count, s.anomaly_rate, s.unknown_word_frames
    );
    finish_run(dir, "test", &cfg, outputs)
}

fn plot(artifacts: &[PathBuf], out_dir: &Path) -> CliResult {
    make_dir(out_dir)?;
    let mut written = 0usize;
    for a in artifacts {
        let mut emit = |name: String, svg: String| -> CliResult {
            io::write(&out_dir.join(&name), &svg)?;
            written += 1;
            Ok(())
        };
        if a.is_dir() && a.join("manifest.json").exists() {
            let store = ModelStore::load(a)?;
            for m in &store.models {
                emit(format!("model_{}_clusters.svg", m.model_id), plot::cluster_map(m))?;
                emit(format!("model_{}_tm.svg", m.model_id), plot::tm_heatmap(m))?;
            }
        } else if a.is_dir() && a.join("inference.log").exists() {
            plot_log(&a.join("inference.log"), &mut emit)?;
            if a.join("selection.json").exists() {
                plot_selection(&a.join("selection.json"), &mut emit)?;
            }
        } else if a.extension().is_some_and(|e| e == "log") {
            plot_log(a, &mut emit)?;
        } else if a.extension().is_some_and(|e| e == "json") {
            plot_selection(a, &mut emit)?;
        } else {
            return Err(usage(format!("{}: unknown artifact type", a.display())));
        }
    }
    println!("{written} figures -> {}", out_dir.display());
    Ok(())
}

fn plot_log(path: &Path, emit: &mut impl FnMut(String, String) -> CliResult) -> CliResult {
    let steps = io::parse_inference_log(&io::read_text(path)?, path)?;
    emit("timeline.svg".into(), plot::word_timeline(&steps))
}

fn plot_selection(path: &Path, emit: &mut impl FnMut(String, String) -> CliResult) -> CliResult {
    let sels: Vec<TrackSelection> = serde_json::from_str(&io::read_text(path)?)
        .map_err(|e| usage(format!("{}: unknown artifact type ({e})", path.display())))?;
    for s in &sels {
        emit(format!("errors_track_{}.svg", s.track_id), plot::selection_errors(s))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Simulate { common } => simulate(common, cli.seed),
        Command::Train { input, common } => train(input, common, cli.seed),
        Command::Test { input, store, common } => test(input, store, common, cli.seed),
        Command::Plot { artifacts, out_dir } => plot(artifacts, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
