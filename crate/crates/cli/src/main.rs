//! `sg3d`: build, update, prune, export and evaluate 3D scene graphs.
//!
//! Exit codes: 0 success, 2 configuration or usage, 3 perception backend,
//! 4 I/O, 5 validation, 6 no goal candidate for a prune query.

mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use sg3d_core::config::PipelineConfig;
use sg3d_core::dataset::{self, SceneManifest, POSE_RENORMALIZE_TOLERANCE};
use sg3d_core::evaluation::{self, summarize_timings};
use sg3d_core::fusion::{ingest_chunk, ChunkReport, IngestOptions};
use sg3d_core::perception::{BackendDescriptor, PerceptionBackend, RecordingBackend};
use sg3d_core::persistence::{self, append_jsonl};
use sg3d_core::pruning::{prune, PruneQuery};
use sg3d_core::synthetic::SyntheticScene;
use sg3d_core::{Point3, Pose, SceneGraph3D, UnitQuat};

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "sg3d",
    version,
    about = "Incremental 3D scene graphs from posed RGB-D scenes"
)]
struct Cli {
    /// Pipeline configuration file (TOML); command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Emit logs as JSON lines on stderr.
    #[arg(long, global = true)]
    log_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a graph from a scene directory, chunk by chunk.
    Build(BuildArgs),
    /// Resume or extend ingestion into an existing graph.
    Update(UpdateArgs),
    /// Extract a goal-centred subgraph for a navigation query.
    Prune(PruneArgs),
    /// Export a graph or pruned graph for visualization.
    Export(ExportArgs),
    /// Score a graph against annotations.
    Eval(EvalArgs),
    /// Run a scene through a backend and freeze its responses as fixtures.
    Record(RecordArgs),
    /// Write the synthetic test scene, its fixtures and annotations.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Replay,
    Http,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// Perception backend.
    #[arg(long, value_enum, default_value = "replay")]
    backend: BackendChoice,
    /// Base URL of the perception service (http backend).
    #[arg(long, env = "ZING3D_ENDPOINT", value_name = "URL")]
    endpoint: Option<String>,
    /// Recorded responses for the replay backend [default: <SCENE_DIR>/fixtures].
    #[arg(long, value_name = "DIR")]
    fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Scene directory holding manifest.json, poses.jsonl, rgb/ and depth/.
    scene_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Frames per perception request [default: 10, or the config value].
    #[arg(long, value_name = "N")]
    chunk_size: Option<usize>,
    /// Output graph file.
    #[arg(long, default_value = "graph.json")]
    out: PathBuf,
    /// Chunk report log [default: next to the graph, <OUT stem>.reports.jsonl].
    #[arg(long, value_name = "FILE")]
    reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct UpdateArgs {
    /// Existing graph file; rewritten in place unless --out is given.
    graph: PathBuf,
    scene_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// First chunk to ingest [default: the graph's resume point].
    #[arg(long, value_name = "K")]
    from_chunk: Option<usize>,
    #[arg(long, value_name = "N")]
    chunk_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PruneArgs {
    graph: PathBuf,
    /// Navigation query, e.g. "Go near the sofa".
    #[arg(long)]
    query: String,
    /// Robot pose as x,y,z,qw,qx,qy,qz.
    #[arg(long, value_name = "POSE", allow_hyphen_values = true)]
    pose: Option<String>,
    /// Node cap, goal included [default: 8, or the config value].
    #[arg(long, value_name = "N")]
    max_nodes: Option<usize>,
    /// Keep only neighbours within this many meters of the robot (needs --pose).
    #[arg(long, value_name = "M")]
    max_radius: Option<f64>,
    #[arg(long, default_value = "pruned.json")]
    out: PathBuf,
    /// Ask a perception backend to choose the goal instead of lexical matching.
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    #[arg(long, env = "ZING3D_ENDPOINT", value_name = "URL")]
    endpoint: Option<String>,
    #[arg(long, value_name = "DIR")]
    fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Dot,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Graph or pruned-graph file; the goal of a pruned graph is highlighted.
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "dot")]
    format: ExportFormat,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    graph: PathBuf,
    annotations: PathBuf,
    /// Chunk report log to summarize stage timings from.
    #[arg(long, value_name = "FILE")]
    reports: Option<PathBuf>,
    /// Node-to-annotation match radius in meters [default: 0.5, or the config value].
    #[arg(long, value_name = "M")]
    match_radius: Option<f64>,
    /// Also write the report as JSON.
    #[arg(long, value_name = "FILE")]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecordArgs {
    scene_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Directory to write fixtures into; existing fixtures must match.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    chunk_size: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; receives scene/, fixtures/ and annotations.json.
    out: PathBuf,
}

fn init_logging(json: bool) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.init();
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn open_backend(
    choice: BackendChoice,
    endpoint: Option<&str>,
    fixtures: Option<&Path>,
    scene_dir: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<Box<dyn PerceptionBackend>, CliError> {
    let desc = match choice {
        BackendChoice::Replay => {
            let dir = match (fixtures, scene_dir) {
                (Some(f), _) => f.to_path_buf(),
                (None, Some(s)) => s.join("fixtures"),
                (None, None) => {
                    return Err(CliError::config("the replay backend needs --fixtures"))
                }
            };
            BackendDescriptor::replay(dir)
        }
        BackendChoice::Http => {
            let url = endpoint.ok_or_else(|| {
                CliError::config("the http backend needs --endpoint or ZING3D_ENDPOINT")
            })?;
            BackendDescriptor::http(url, cfg.perception.timeout_s, cfg.perception.retries)
        }
    };
    Ok(desc.open()?)
}

fn default_reports_path(graph: &Path) -> PathBuf {
    let stem = graph
        .file_stem()
        .map_or_else(|| "graph".into(), |s| s.to_string_lossy().into_owned());
    graph.with_file_name(format!("{stem}.reports.jsonl"))
}

fn parse_pose(text: &str) -> Result<Pose, CliError> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(format!("--pose {text:?}: {e}")))?;
    if v.len() != 7 {
        return Err(CliError::config(format!(
            "--pose needs 7 comma-separated numbers x,y,z,qw,qx,qy,qz, got {}",
            v.len()
        )));
    }
    Pose::renormalized(
        Point3::new(v[0], v[1], v[2]),
        UnitQuat::new(v[3], v[4], v[5], v[6]),
        POSE_RENORMALIZE_TOLERANCE,
    )
    .map_err(|e| CliError::config(format!("--pose: {e}")))
}

struct IngestRun<'a> {
    manifest: &'a SceneManifest,
    backend: &'a dyn PerceptionBackend,
    opts: IngestOptions,
    chunk_size: usize,
    out: Option<&'a Path>,
    reports: Option<&'a Path>,
}

/// Ingests chunks from `first` on, saving the graph and appending the chunk
/// report after each one, so a failure leaves a resumable graph behind.
fn run_ingest(
    run: &IngestRun,
    graph: &mut SceneGraph3D,
    first: usize,
) -> Result<Vec<ChunkReport>, CliError> {
    let mut reports = Vec::new();
    let total = run.manifest.chunk_count(run.chunk_size);
    for chunk in dataset::stream_chunks(run.manifest, run.chunk_size)?.starting_at(first) {
        let chunk = chunk?;
        let report = ingest_chunk(graph, chunk.chunk_id, &chunk.frames, run.backend, &run.opts)
            .map_err(|e| {
                CliError::from(e).context(format!("chunk {} of {total}", chunk.chunk_id))
            })?;
        if let Some(out) = run.out {
            persistence::save_graph(graph, out)?;
        }
        if let Some(path) = run.reports {
            append_jsonl(path, std::slice::from_ref(&report))?;
        }
        reports.push(report);
    }
    Ok(reports)
}

fn ingest_options(
    cfg: &PipelineConfig,
    chunk_size: usize,
    manifest: &SceneManifest,
) -> IngestOptions {
    let mut perception = cfg.perception.clone();
    perception.chunk_size = chunk_size;
    IngestOptions {
        fusion: cfg.fusion.clone(),
        perception,
        flip_z: manifest.flip_z,
    }
}

fn chunk_size(flag: Option<usize>, cfg: &PipelineConfig) -> Result<usize, CliError> {
    match flag.unwrap_or(cfg.perception.chunk_size) {
        0 => Err(CliError::config("--chunk-size must be at least 1")),
        n => Ok(n),
    }
}

fn summarize(graph: &SceneGraph3D, reports: &[ChunkReport], out: &Path) {
    let created: usize = reports.iter().map(|r| r.nodes_created).sum();
    let merged: usize = reports.iter().map(|r| r.nodes_merged).sum();
    println!(
        "{}: {} chunk(s) ingested, {} node(s) created, {} merged; graph has {} nodes and {} edges",
        out.display(),
        reports.len(),
        created,
        merged,
        graph.node_count(),
        graph.edge_count()
    );
}

fn build(a: BuildArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let manifest = dataset::load_manifest(&a.scene_dir)?;
    let n = chunk_size(a.chunk_size, cfg)?;
    let backend = open_backend(
        a.backend.backend,
        a.backend.endpoint.as_deref(),
        a.backend.fixtures.as_deref(),
        Some(&a.scene_dir),
        cfg,
    )?;
    let reports_path = a
        .reports
        .clone()
        .unwrap_or_else(|| default_reports_path(&a.out));
    if reports_path.exists() {
        fs::remove_file(&reports_path)?;
    }
    let mut graph = SceneGraph3D::new(manifest.scene_id.clone());
    let run = IngestRun {
        manifest: &manifest,
        backend: backend.as_ref(),
        opts: ingest_options(cfg, n, &manifest),
        chunk_size: n,
        out: Some(&a.out),
        reports: Some(&reports_path),
    };
    let reports = run_ingest(&run, &mut graph, 0)?;
    persistence::save_graph(&graph, &a.out)?;
    summarize(&graph, &reports, &a.out);
    Ok(())
}

fn update(a: UpdateArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut graph = persistence::load_graph(&a.graph)?;
    let manifest = dataset::load_manifest(&a.scene_dir)?;
    if graph.scene_id != manifest.scene_id {
        return Err(CliError::validation(format!(
            "graph belongs to scene {:?} but {} is scene {:?}",
            graph.scene_id,
            a.scene_dir.display(),
            manifest.scene_id
        )));
    }
    let n = chunk_size(a.chunk_size, cfg)?;
    let first = a.from_chunk.unwrap_or(graph.chunks_ingested as usize);
    let backend = open_backend(
        a.backend.backend,
        a.backend.endpoint.as_deref(),
        a.backend.fixtures.as_deref(),
        Some(&a.scene_dir),
        cfg,
    )?;
    let out = a.out.clone().unwrap_or_else(|| a.graph.clone());
    let reports_path = a
        .reports
        .clone()
        .unwrap_or_else(|| default_reports_path(&out));
    let run = IngestRun {
        manifest: &manifest,
        backend: backend.as_ref(),
        opts: ingest_options(cfg, n, &manifest),
        chunk_size: n,
        out: Some(&out),
        reports: Some(&reports_path),
    };
    let reports = run_ingest(&run, &mut graph, first)?;
    persistence::save_graph(&graph, &out)?;
    summarize(&graph, &reports, &out);
    Ok(())
}

fn prune_cmd(a: PruneArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let graph = persistence::load_graph(&a.graph)?;
    let mut q = PruneQuery::new(a.query.clone());
    q.robot_pose = a.pose.as_deref().map(parse_pose).transpose()?;
    q.max_nodes = a.max_nodes.unwrap_or(cfg.pruning.max_nodes);
    q.max_radius = a.max_radius.or(cfg.pruning.max_radius);
    if q.max_radius.is_some() && q.robot_pose.is_none() {
        return Err(CliError::config("--max-radius needs --pose"));
    }
    let backend = a
        .backend
        .map(|b| open_backend(b, a.endpoint.as_deref(), a.fixtures.as_deref(), None, cfg))
        .transpose()?;
    let pruned = prune(&graph, &q, backend.as_deref())?;
    persistence::save_pruned(&pruned, &a.out)?;
    let goal = &pruned.graph.nodes[&pruned.goal_node_id];
    println!(
        "{}: goal {} ({}), {} node(s), {} edge(s)",
        a.out.display(),
        pruned.goal_node_id,
        goal.label,
        pruned.graph.node_count(),
        pruned.graph.edge_count()
    );
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), CliError> {
    let bytes = fs::read(&a.graph).map_err(|e| CliError::from(e).context(a.graph.display()))?;
    let is_pruned = serde_json::from_slice::<serde_json::Value>(&bytes)
        .map(|v| v.get("goal_node_id").is_some())
        .unwrap_or(false);
    let (graph, goal) = if is_pruned {
        let p = persistence::load_pruned(&a.graph)?;
        (p.graph, Some(p.goal_node_id))
    } else {
        (persistence::graph_from_bytes(&bytes)?, None)
    };
    match a.format {
        ExportFormat::Dot => match &a.out {
            Some(out) => persistence::export_dot(&graph, goal, out)?,
            None => print!("{}", persistence::dot_string(&graph, goal)),
        },
    }
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<ChunkReport>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CliError::validation(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

fn eval(a: EvalArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let graph = persistence::load_graph(&a.graph)?;
    let annotations = evaluation::load_annotations(&a.annotations)?;
    let radius = a.match_radius.unwrap_or(cfg.evaluation.match_radius);
    let mut report = evaluation::evaluate(&graph, &annotations, radius)?;
    if let Some(path) = &a.reports {
        report.timings = Some(summarize_timings(&read_reports(path)?));
    }
    print!("{}", report.to_table());
    if let Some(path) = &a.json_out {
        let mut bytes = serde_json::to_vec_pretty(&report).expect("reports serialize");
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| CliError::from(e).context(path.display()))?;
    }
    Ok(())
}

fn record(a: RecordArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let manifest = dataset::load_manifest(&a.scene_dir)?;
    let n = chunk_size(a.chunk_size, cfg)?;
    let inner = open_backend(
        a.backend.backend,
        a.backend.endpoint.as_deref(),
        a.backend.fixtures.as_deref(),
        Some(&a.scene_dir),
        cfg,
    )?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::from(e).context(a.out.display()))?;
    let backend = RecordingBackend::new(inner, &a.out);
    let mut graph = SceneGraph3D::new(manifest.scene_id.clone());
    let run = IngestRun {
        manifest: &manifest,
        backend: &backend,
        opts: ingest_options(cfg, n, &manifest),
        chunk_size: n,
        out: None,
        reports: None,
    };
    let reports = run_ingest(&run, &mut graph, 0)?;
    println!(
        "{}: fixtures for {} chunk(s)",
        a.out.display(),
        reports.len()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    SyntheticScene::standard().write(&a.out)?;
    println!("{}: synthetic scene written", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Build(a) => build(a, &cfg),
        Command::Update(a) => update(a, &cfg),
        Command::Prune(a) => prune_cmd(a, &cfg),
        Command::Export(a) => export(a),
        Command::Eval(a) => eval(a, &cfg),
        Command::Record(a) => record(a, &cfg),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_json);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
