use std::collections::BTreeMap;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use som_bench::{aggregate_report, run_benchmark, write_report, BenchError, BenchSpec};
use som_core::alloc::{allocate_marks, AllocationConfig, MarkLocation};
use som_core::ingest::{filter_regions, load_regions, IngestConfig, PartitionSource, SegmenterResponse};
use som_core::prompt::{build_task_prompt_with, with_format_hint, TaskInputs, Templates};
use som_core::render::{assign_mark_ids, render_with_texts, Manifest, MarkStyle};
use som_core::{RegionSet, TaskKind};
use som_gateway::{
    CacheMode, ChatTransport, DiskCache, Gateway, OpenAiTransport, RefusingTransport, SegmenterClient,
};
use som_playground::{router, AppState, ContextPolicy, PlaygroundConfig};

const DEFAULT_ENDPOINT: &str = "https://api.openai.com";

#[derive(Parser)]
#[command(name = "som", version, about = "Mark image regions, prompt a multimodal model, score its answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ImageArgs {
    #[arg(long)]
    image: PathBuf,
    /// Regions file in the segmenter response format.
    #[arg(long)]
    regions: PathBuf,
    /// Mark style JSON; defaults to numeric labels over mask fills.
    #[arg(long)]
    style: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Directory holding `runs/` and the default cache.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Chat endpoint base URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Most network requests this run may make.
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    #[arg(long, default_value = "record")]
    mode: CacheMode,
    #[arg(long, default_value = "cache")]
    cache_dir: PathBuf,
    /// Root for relative partition paths.
    #[arg(long, default_value = ".")]
    data_root: PathBuf,
    #[arg(long, default_value = "exports")]
    export_dir: PathBuf,
    /// Start each chat turn without earlier turns.
    #[arg(long)]
    fresh: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load a partition and write it as a regions file.
    Ingest {
        #[arg(long)]
        image: PathBuf,
        /// Partition source JSON, e.g. {"kind": "coco_json", "path": "...", "image_id": 1}.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        score_threshold: Option<f64>,
        #[arg(long)]
        max_regions: Option<usize>,
        /// Keep every region and its id.
        #[arg(long)]
        no_filter: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose a mark location for every region.
    Allocate {
        #[command(flatten)]
        input: ImageArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the marks; also writes `<out stem>.som.json`.
    Render {
        #[command(flatten)]
        input: ImageArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the prompt for a task.
    Prompt {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        manifest: PathBuf,
        /// Task inputs JSON, e.g. {"kind": "expressions", "expressions": ["the red cup"]}.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        format_hint: bool,
        #[arg(long)]
        template_dir: Option<PathBuf>,
    },
    /// Run a benchmark spec.
    Run {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long)]
        mode: Option<CacheMode>,
    },
    /// Rerun a spec from the cache alone.
    Replay {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Recompute the report of a run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
    },
    /// Serve the playground API.
    Serve(ServeArgs),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_image(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8())
}

struct Prepared {
    image: image::RgbImage,
    regions: RegionSet,
    style: MarkStyle,
    texts: Vec<String>,
    locations: Vec<MarkLocation>,
}

fn prepare(input: &ImageArgs) -> Result<Prepared> {
    let image = load_image(&input.image)?;
    let regions = read_json::<SegmenterResponse>(&input.regions)?.into_region_set()?;
    if regions.dims() != image.dimensions() {
        bail!(
            "regions are {:?} but the image is {:?}",
            regions.dims(),
            image.dimensions()
        );
    }
    let style: MarkStyle = match &input.style {
        Some(p) => read_json(p)?,
        None => MarkStyle::default(),
    };
    style.validate()?;
    let (w, h) = image.dimensions();
    let texts = assign_mark_ids(regions.len(), style.scheme())?;
    let alloc = AllocationConfig::for_font(style.font_px_for(w, h) as f64);
    let locations = allocate_marks(&regions, &alloc, &texts)?;
    Ok(Prepared {
        image,
        regions,
        style,
        texts,
        locations,
    })
}

async fn ingest(
    image: &Path,
    source: &Path,
    threshold: Option<f64>,
    max_regions: Option<usize>,
    no_filter: bool,
    out: &Path,
) -> Result<()> {
    let img = load_image(image)?;
    let source: PartitionSource = read_json(source)?;
    let rs = match &source {
        PartitionSource::Remote { .. } => {
            let png = som_core::render::encode_png(&img)?;
            SegmenterClient::new(1, Duration::from_secs(120))
                .fetch_source(&source, &png)
                .await?
        }
        other => load_regions(other, img.dimensions())?,
    };
    let rs = if no_filter {
        rs
    } else {
        let defaults = IngestConfig::default();
        let cfg = IngestConfig {
            score_threshold: threshold.unwrap_or(defaults.score_threshold),
            max_regions: max_regions.unwrap_or(defaults.max_regions),
            ..defaults
        };
        cfg.validate().map_err(anyhow::Error::msg)?;
        filter_regions(&rs, &cfg)
    };
    write_json(out, &SegmenterResponse::from_region_set(&rs))?;
    println!("{} regions", rs.len());
    Ok(())
}

fn transport(mode: CacheMode, endpoint: &str) -> Result<Arc<dyn ChatTransport>> {
    Ok(match mode {
        CacheMode::ReplayOnly => Arc::new(RefusingTransport::default()),
        _ => Arc::new(OpenAiTransport::from_env(endpoint)?),
    })
}

/// `Ok(true)` when some items failed.
async fn run(args: RunArgs, mode: Option<CacheMode>) -> Result<bool> {
    let mut spec = BenchSpec::load(&args.spec)?;
    if let Some(m) = mode {
        spec.mode = m;
    }
    if args.budget.is_some() {
        spec.budget = args.budget;
    }
    if args.endpoint.is_some() {
        spec.endpoint = args.endpoint;
    }
    spec.validate()?;
    let endpoint = spec.endpoint.clone().unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
    let transport = transport(spec.mode, &endpoint).map_err(|e| BenchError::Config(format!("{e:#}")))?;
    let summary = run_benchmark(&spec, &args.out, transport).await?;
    println!(
        "run {}: {} sampled, {} new, {} already done, {} failed, {} network calls",
        summary.run_dir.display(),
        summary.sampled,
        summary.written,
        summary.skipped,
        summary.failures.len(),
        summary.network_calls
    );
    for f in &summary.failures {
        println!("  failed {} at {}: {}", f.instance_id, f.stage, f.error);
    }
    if let Some((_, table)) = &summary.reports {
        print!("{table}");
    }
    Ok(!summary.failures.is_empty())
}

async fn serve(args: ServeArgs) -> Result<()> {
    let gateway = Gateway::builder(transport(args.mode, &args.endpoint)?)
        .cache(DiskCache::new(args.cache_dir))
        .mode(args.mode)
        .build()?;
    let config = PlaygroundConfig {
        model: args.model,
        data_root: args.data_root,
        export_dir: args.export_dir,
        default_context: if args.fresh { ContextPolicy::Fresh } else { ContextPolicy::Accumulated },
    };
    let state = AppState::new(gateway, SegmenterClient::new(4, Duration::from_secs(120)), config);
    let listener = tokio::net::TcpListener::bind(args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// `Ok(true)` means partial failure.
async fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Ingest {
            image,
            source,
            score_threshold,
            max_regions,
            no_filter,
            out,
        } => ingest(&image, &source, score_threshold, max_regions, no_filter, &out).await?,
        Command::Allocate { input, out } => {
            let p = prepare(&input)?;
            let marks: Vec<BTreeMap<&str, serde_json::Value>> = p
                .texts
                .iter()
                .zip(&p.locations)
                .map(|(t, l)| {
                    BTreeMap::from([
                        ("mark_text", serde_json::json!(t)),
                        ("location", serde_json::to_value(l).expect("serializable")),
                    ])
                })
                .collect();
            write_json(&out, &marks)?;
        }
        Command::Render { input, out } => {
            let p = prepare(&input)?;
            let marked = render_with_texts(&p.image, &p.regions, &p.locations, &p.texts, &p.style)?;
            let manifest = marked.save(&out)?;
            println!("{} and {}", out.display(), manifest.display());
        }
        Command::Prompt {
            task,
            manifest,
            inputs,
            format_hint,
            template_dir,
        } => {
            let manifest: Manifest = read_json(&manifest)?;
            let inputs: TaskInputs = read_json(&inputs)?;
            let templates = match template_dir {
                Some(d) => Templates::load_dir(&d)?,
                None => Templates::default(),
            };
            let mut spec = build_task_prompt_with(&templates, task, &manifest, &inputs)?;
            if format_hint {
                spec = with_format_hint(spec, &templates);
            }
            println!("{}", spec.text);
        }
        Command::Run { args, mode } => return run(args, mode).await,
        Command::Replay { args } => return run(args, Some(CacheMode::ReplayOnly)).await,
        Command::Eval { run } => {
            let spec = BenchSpec::load(&run.join("spec.json"))?;
            let (reports, table) = aggregate_report(&run)?;
            write_report(&run, &spec, &reports, &table)?;
            print!("{table}");
        }
        Command::Serve(args) => serve(args).await?,
    }
    Ok(false)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command).await {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::from(1)
        }
    }
}
