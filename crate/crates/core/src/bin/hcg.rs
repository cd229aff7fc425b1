//! `hcg`: command-line front end for every pipeline stage.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use hcg::baselines::Method;
use hcg::canonical::{sig6, to_canonical_json};
use hcg::cloud::CloudServer;
use hcg::discriminator::{discriminate, CaseLabel};
use hcg::edge::{run_edge, EdgeConfig};
use hcg::eval::{calibrate_dataset, end_to_end, label_cases, ApMode, DatasetCalibration, MetricsReport};
use hcg::ingest::{import_voc_xml, write_labels, write_truths, Dataset};
use hcg::sim::{
    method_scores, route_by_score, route_semantic, simulate, sweep, uniform_routes, BytesPerImage, ChannelModel,
    RouteDecision,
};
use hcg::synth::{generate, generate_planted, SynthConfig};
use hcg::{Route, ThresholdSet, REPORT_CUTOFF};

#[derive(Parser)]
#[command(name = "hcg", version, about = "Small/big model edge-cloud detection offloading toolkit")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest plus JSONL traces).
    SynthGen(SynthGenArgs),
    /// Convert a directory of VOC XML annotations to a truths JSONL file.
    ImportVoc(ImportVocArgs),
    /// Label each image easy or difficult from the small and big traces.
    LabelCases(ManifestOut),
    /// Calibrate tau_s, tau_n and tau_a and write the threshold file.
    Calibrate(ManifestOut),
    /// Label each image with the discriminator.
    Discriminate(ThresholdArgs),
    /// Per-image difficulty scores as CSV.
    Scores(ScoresArgs),
    /// Evaluate routed results against ground truth.
    Evaluate(EvaluateArgs),
    /// Simulate one routing policy with the channel model.
    Simulate(SimulateArgs),
    /// Simulate a range of upload ratios for one ranking method.
    Sweep(SweepArgs),
    /// Serve big-model results over TCP.
    ServeCloud(ServeArgs),
    /// Run the edge agent against a cloud server.
    RunEdge(RunEdgeArgs),
}

#[derive(Args)]
struct ManifestOut {
    #[arg(long)]
    manifest: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    io: ManifestOut,
    #[arg(long)]
    thresholds: PathBuf,
}

#[derive(Args)]
struct SynthGenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    images: usize,
    /// Plant the difficulty structure at --tau-n / --tau-a.
    #[arg(long)]
    planted: bool,
    #[arg(long, default_value_t = 2, requires = "planted")]
    tau_n: u32,
    #[arg(long, default_value_t = 0.31, requires = "planted")]
    tau_a: f64,
    /// Also write labels.csv and reference it from the manifest.
    #[arg(long)]
    with_labels: bool,
}

#[derive(Args)]
struct ImportVocArgs {
    /// Directory of VOC XML files.
    #[arg(long)]
    annotations: PathBuf,
    /// Comma-separated class names, in class-id order.
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoresArgs {
    #[command(flatten)]
    io: ManifestOut,
    #[arg(long, default_value = "semantic")]
    method: Method,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Needed by the semantic method.
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Policy {
    EdgeOnly,
    CloudOnly,
    Semantic,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    io: ManifestOut,
    /// Which results to evaluate.
    #[arg(long, value_enum, default_value = "edge-only")]
    policy: Policy,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, default_value = "11pt")]
    mode: ApMode,
    /// Per-class AP CSV.
    #[arg(long)]
    ap_out: Option<PathBuf>,
}

#[derive(Args)]
struct ChannelArgs {
    /// JSON channel model; built-in defaults when omitted.
    #[arg(long)]
    channel: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    io: ManifestOut,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long, value_enum, default_value = "semantic")]
    policy: Policy,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Route the top fraction by --method scores instead of by policy.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value = "semantic", requires = "ratio")]
    method: Method,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "11pt")]
    mode: ApMode,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    io: ManifestOut,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long, default_value = "semantic")]
    method: Method,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated ascending ratios; 0, 0.1, ..., 1 when omitted.
    #[arg(long = "ratio", value_delimiter = ',')]
    ratios: Vec<f64>,
    #[arg(long, default_value = "11pt")]
    mode: ApMode,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[arg(long, default_value_t = REPORT_CUTOFF)]
    cutoff: f64,
}

#[derive(Args)]
struct RunEdgeArgs {
    #[command(flatten)]
    io: ManifestOut,
    #[arg(long)]
    thresholds: PathBuf,
    #[arg(long, required_unless_present = "offline")]
    connect: Option<String>,
    /// Upload padding per image; the manifest sizes or the default channel
    /// size when omitted.
    #[arg(long)]
    padding_bytes: Option<u64>,
    #[arg(long)]
    offline: bool,
    #[arg(long, default_value = "11pt")]
    mode: ApMode,
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
}

/// Usage errors exit 1, everything else 2.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json_line<T: serde::Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    let mut s = to_canonical_json(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn load(manifest: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(manifest).context("loading dataset")
}

fn load_thresholds(path: &Path) -> anyhow::Result<ThresholdSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing thresholds {}", path.display()))
}

fn required_thresholds(path: Option<&PathBuf>, what: &str) -> Result<ThresholdSet, Failure> {
    match path {
        Some(p) => Ok(load_thresholds(p)?),
        None => usage(format!("{what} needs --thresholds")),
    }
}

fn load_channel(args: &ChannelArgs, ds: &Dataset) -> anyhow::Result<ChannelModel> {
    let ch = match &args.channel {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing channel {}", p.display()))?
        }
        None => ChannelModel::default().for_dataset(ds),
    };
    ch.validate()?;
    Ok(ch)
}

fn labels_csv(labels: &BTreeMap<String, CaseLabel>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_labels(&mut buf, labels)?;
    Ok(buf)
}

fn policy_routes(ds: &Dataset, policy: Policy, thresholds: Option<&PathBuf>) -> Result<Vec<RouteDecision>, Failure> {
    Ok(match policy {
        Policy::EdgeOnly => uniform_routes(ds, Route::Edge),
        Policy::CloudOnly => uniform_routes(ds, Route::Cloud),
        Policy::Semantic => {
            let t = required_thresholds(thresholds, "the semantic policy")?;
            route_semantic(ds, &t).map_err(anyhow::Error::from)?
        }
    })
}

fn ap_csv(report: &MetricsReport, class_names: &[String]) -> Vec<u8> {
    let mut s = String::from("class_id,class_name,ap\n");
    for (c, ap) in &report.per_class_ap {
        let name = class_names.get(*c).map_or("", String::as_str);
        s.push_str(&format!("{c},{name},{}\n", sig6(*ap)));
    }
    s.into_bytes()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SynthGen(a) => {
            let cfg = SynthConfig {
                seed: a.seed,
                image_count: a.images,
                ..if a.planted { SynthConfig::planted() } else { SynthConfig::default() }
            };
            let mut ds = if a.planted { generate_planted(&cfg, a.tau_n, a.tau_a) } else { generate(&cfg) }
                .map_err(anyhow::Error::from)?;
            if a.with_labels {
                ds.labels = Some(label_cases(&ds.small, &ds.big, REPORT_CUTOFF).map_err(anyhow::Error::from)?);
            }
            let path = ds.save(&a.out).map_err(anyhow::Error::from)?;
            println!("{}", path.display());
        }
        Command::ImportVoc(a) => {
            let imported = import_voc_xml(&a.annotations, &a.classes).map_err(anyhow::Error::from)?;
            if imported.skipped > 0 {
                eprintln!("skipped {} objects of classes outside --classes", imported.skipped);
            }
            let mut buf = Vec::new();
            write_truths(&mut buf, imported.truths.values()).map_err(anyhow::Error::from)?;
            emit(a.out.as_deref(), &buf)?;
        }
        Command::LabelCases(a) => {
            let ds = load(&a.manifest)?;
            if ds.big.is_empty() {
                return Err(anyhow!("label-cases needs big-model traces").into());
            }
            let labels = label_cases(&ds.small, &ds.big, REPORT_CUTOFF).map_err(anyhow::Error::from)?;
            emit(a.out.as_deref(), &labels_csv(&labels)?)?;
        }
        Command::Calibrate(a) => {
            let ds = load(&a.manifest)?;
            let DatasetCalibration { thresholds: t, noise, decision } = calibrate_dataset(&ds).map_err(anyhow::Error::from)?;
            eprintln!(
                "tau_s {} (loss {}), tau_n {}, tau_a {}: accuracy {}, precision {}, recall {}, f1 {}",
                t.tau_s,
                noise.loss,
                t.tau_n,
                t.tau_a,
                sig6(decision.accuracy),
                sig6(decision.precision),
                sig6(decision.recall),
                sig6(decision.f1)
            );
            emit(a.out.as_deref(), &json_line(&t)?)?;
        }
        Command::Discriminate(a) => {
            let ds = load(&a.io.manifest)?;
            let t = load_thresholds(&a.thresholds)?;
            let mut labels = BTreeMap::new();
            for id in ds.image_ids() {
                let r = ds.small.get(id).ok_or_else(|| anyhow!("no small-model trace for {id:?}"))?;
                labels.insert(id.clone(), discriminate(r, &t));
            }
            emit(a.io.out.as_deref(), &labels_csv(&labels)?)?;
        }
        Command::Scores(a) => {
            let ds = load(&a.io.manifest)?;
            let t = match (a.method, &a.thresholds) {
                (Method::Semantic, p) => Some(required_thresholds(p.as_ref(), "the semantic method")?),
                (_, Some(p)) => Some(load_thresholds(p)?),
                (_, None) => None,
            };
            let scores = method_scores(&ds, a.method, a.seed, t.as_ref()).map_err(anyhow::Error::from)?;
            let mut s = String::from("image_id,method,score\n");
            for d in &scores {
                s.push_str(&format!("{},{},{}\n", d.image_id, d.method, sig6(d.score)));
            }
            emit(a.io.out.as_deref(), s.as_bytes())?;
        }
        Command::Evaluate(a) => {
            let ds = load(&a.io.manifest)?;
            let routes = policy_routes(&ds, a.policy, a.thresholds.as_ref())?;
            let report = end_to_end(&routes, &ds.small, &ds.big, &ds.truths, ds.class_count(), a.mode)
                .map_err(anyhow::Error::from)?;
            emit(a.io.out.as_deref(), &json_line(&report)?)?;
            if let Some(p) = &a.ap_out {
                emit(Some(p), &ap_csv(&report, &ds.class_names))?;
            }
        }
        Command::Simulate(a) => {
            let ds = load(&a.io.manifest)?;
            let channel = load_channel(&a.channel, &ds)?;
            let routes = match a.ratio {
                Some(r) => {
                    let t = match a.method {
                        Method::Semantic => Some(required_thresholds(a.thresholds.as_ref(), "the semantic method")?),
                        _ => None,
                    };
                    let scores = method_scores(&ds, a.method, a.seed, t.as_ref()).map_err(anyhow::Error::from)?;
                    route_by_score(&scores, r).map_err(anyhow::Error::from)?
                }
                None => policy_routes(&ds, a.policy, a.thresholds.as_ref())?,
            };
            let report = simulate(&ds, &routes, &channel, a.mode).map_err(anyhow::Error::from)?;
            emit(a.io.out.as_deref(), &json_line(&report)?)?;
        }
        Command::Sweep(a) => {
            let ds = load(&a.io.manifest)?;
            let channel = load_channel(&a.channel, &ds)?;
            let t = match a.method {
                Method::Semantic => Some(required_thresholds(a.thresholds.as_ref(), "the semantic method")?),
                _ => None,
            };
            let ratios = if a.ratios.is_empty() { (0..=10).map(|i| f64::from(i) / 10.0).collect() } else { a.ratios };
            let scores = method_scores(&ds, a.method, a.seed, t.as_ref()).map_err(anyhow::Error::from)?;
            let points = sweep(&ds, &scores, &channel, &ratios, a.mode).map_err(anyhow::Error::from)?;
            let mut s = String::from("target_ratio,achieved_ratio,map,detected_objects,total_time_s,uploaded_bytes\n");
            for p in &points {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    sig6(p.target_ratio),
                    sig6(p.achieved_ratio),
                    sig6(p.map_value),
                    p.detected_objects,
                    sig6(p.total_time_s),
                    p.uploaded_bytes
                ));
            }
            emit(a.io.out.as_deref(), s.as_bytes())?;
        }
        Command::ServeCloud(a) => {
            let ds = load(&a.manifest)?;
            if ds.big.is_empty() {
                return Err(anyhow!("serve-cloud needs big-model traces").into());
            }
            let server = CloudServer::bind(a.bind.as_str(), &ds.big, a.cutoff)
                .with_context(|| format!("binding {}", a.bind))?;
            println!("listening on {}", server.local_addr().map_err(anyhow::Error::from)?);
            io::stdout().flush().map_err(anyhow::Error::from)?;
            server.serve().context("serving")?;
        }
        Command::RunEdge(a) => {
            let ds = load(&a.io.manifest)?;
            let t = load_thresholds(&a.thresholds)?;
            let mut cfg = EdgeConfig::new(t, a.connect);
            cfg.offline = a.offline;
            cfg.mode = a.mode;
            cfg.max_attempts = a.max_attempts;
            cfg.padding = match a.padding_bytes {
                Some(b) => BytesPerImage::Fixed(b),
                None => ChannelModel::default().for_dataset(&ds).bytes_per_image,
            };
            let report = run_edge(&ds, &cfg).map_err(anyhow::Error::from)?;
            eprintln!(
                "{} frames, {} bytes sent, {} fallbacks, {:.3} s",
                report.frames_sent, report.wire_bytes_sent, report.fallback_count, report.wall_time_s
            );
            emit(a.io.out.as_deref(), &json_line(&report)?)?;
        }
    }
    Ok(())
}
