//! `dynega` command-line interface.
//!
//! Every flag can also be given in a `--config` file as `key = value` (TOML), using the
//! flag name with or without dashes replaced by underscores. Flags on the command line
//! win over the file. A `manifest.json` written by an earlier run is accepted as a config
//! file too, which replays that run.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::glla::GllaConfig;
use crate::ingest::{self, EmbeddingClient, EmbeddingMatrix, IngestError, ItemPool};
use crate::landscape::{self, CompositeWeights, LandscapeError, LandscapeTrace, SweepConfig};
use crate::pipeline::{self, EstimatorOptions, TefiSource};
use crate::simgen::{self, Band, McResults, MonteCarloConfig, MonteCarloError, SyntheticSpec};
use crate::svg;
use crate::walktrap::Partition;

pub const API_KEY_ENV: &str = "EGA_API_KEY";
pub const MANIFEST_FILE: &str = "manifest.json";
const DEFAULT_OUT: &str = "out";
const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
const DEFAULT_MODEL: &str = "text-embedding-3-small";
const SVG_ARROW_LIMIT: usize = 20_000;

#[derive(Debug, Parser)]
#[command(name = "dynega", version, about = "Embedding-depth landscape search with DynEGA")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML `key = value` file mirroring the flags, or an earlier manifest.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// DynEGA over a depth grid of one embedding matrix.
    Sweep(SweepArgs),
    /// Cross-sectional EGA over full embedding vectors.
    Ega(EgaArgs),
    /// Baseline versus optimized NMI per item count from Monte Carlo results.
    Compare(ResultsArgs),
    /// Synthetic Monte Carlo grid over item counts and iterations.
    Montecarlo(MonteCarloArgs),
    /// GLLA arrows along the (TEFI, NMI) trajectories of Monte Carlo results.
    Vectorfield(VectorFieldArgs),
    /// Embed an item pool through an OpenAI-compatible API.
    FetchEmbeddings(FetchArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Item pool (CSV or JSONL).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Embedding matrix (CSV or JSONL). Without it, embeddings are fetched.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Score NMI against the pool's dimension labels.
    #[arg(long)]
    truth_from_pool: bool,
    #[command(flatten)]
    fetch: FetchOptions,
}

#[derive(Debug, Args)]
struct FetchOptions {
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Embedding cache directory (default: <out>/cache).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EstimatorArgs {
    /// GLLA window size.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    delta_t: Option<f64>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    use_order: Option<usize>,
    #[arg(long)]
    walktrap_steps: Option<usize>,
    /// Matrix TEFI is computed on: correlation or network.
    #[arg(long)]
    tefi_source: Option<String>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    depth_min: Option<usize>,
    #[arg(long)]
    depth_max: Option<usize>,
    #[arg(long)]
    depth_step: Option<usize>,
    /// Composite weights `w_nmi,w_tefi`.
    #[arg(long)]
    weights: Option<String>,
    /// Use raw NMI in the composite instead of min-max normalized NMI.
    #[arg(long)]
    raw_nmi: bool,
    #[command(flatten)]
    estimator: EstimatorArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct EgaArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    walktrap_steps: Option<usize>,
    #[arg(long)]
    tefi_source: Option<String>,
}

#[derive(Debug, Args)]
struct ResultsArgs {
    /// Directory written by `montecarlo`.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VectorFieldArgs {
    #[command(flatten)]
    results: ResultsArgs,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    delta_t: Option<f64>,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    /// Item counts per dimension: `4`, `5,10,20` or `3-40`.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    dimensions: Option<usize>,
    #[arg(long)]
    total_depth: Option<usize>,
    /// Coordinates carrying the block structure, `start,end`.
    #[arg(long)]
    signal_band: Option<String>,
    #[arg(long)]
    within_load: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Weaker deeper bands `start-end:load;...`, or `none`.
    #[arg(long)]
    secondary_bands: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    #[command(flatten)]
    fetch: FetchOptions,
}

/// Failure classes, each mapped to an exit code.
#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Data(m) | Self::Internal(m) => m,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::EmptyApiKey => Self::Config(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<LandscapeError> for CliError {
    fn from(e: LandscapeError) -> Self {
        match e {
            LandscapeError::EmptyGrid
            | LandscapeError::InvalidWeights(_)
            | LandscapeError::InvalidConfig(_)
            | LandscapeError::Glla(_) => Self::Config(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::Config(_) => Self::Config(e.to_string()),
            MonteCarloError::Cell { .. } => Self::Data(e.to_string()),
            MonteCarloError::Io { .. } => Self::Internal(e.to_string()),
        }
    }
}

fn one_line(s: impl Display) -> String {
    s.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Resolves settings from the command line, then the config file, then defaults, and
/// records every resolved value for the manifest.
struct Resolver {
    file: BTreeMap<String, String>,
    /// Lowest layer, e.g. settings of the run that produced an input directory.
    fallback: BTreeMap<String, String>,
    resolved: BTreeMap<String, Value>,
}

fn normalise_key(key: &str) -> String {
    key.replace('-', "_")
}

fn scalar_text(v: &toml::Value) -> Option<String> {
    Some(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(a) => a
            .iter()
            .map(scalar_text)
            .collect::<Option<Vec<_>>>()?
            .join(","),
        _ => return None,
    })
}

fn json_text(v: &Value) -> Option<String> {
    Some(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Null => return None,
        _ => return None,
    })
}

impl Resolver {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            if path.extension().is_some_and(|e| e == "json") {
                let manifest: Value = serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("{}: {}", path.display(), one_line(e)))
                })?;
                let Some(cfg) = manifest.get("config").and_then(Value::as_object) else {
                    return Err(CliError::Config(format!(
                        "{}: manifest has no config object",
                        path.display()
                    )));
                };
                for (k, v) in cfg {
                    if let Some(t) = json_text(v) {
                        file.insert(normalise_key(k), t);
                    }
                }
            } else {
                let table: toml::Table = text.parse().map_err(|e| {
                    CliError::Config(format!("{}: {}", path.display(), one_line(e)))
                })?;
                for (k, v) in table {
                    let t = scalar_text(&v).ok_or_else(|| {
                        CliError::Config(format!(
                            "{}: key {k:?} must be a scalar or a list",
                            path.display()
                        ))
                    })?;
                    file.insert(normalise_key(&k), t);
                }
            }
        }
        Ok(Self {
            file,
            fallback: BTreeMap::new(),
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .or_else(|| self.fallback.get(key))
            .map(|s| {
                s.parse::<T>().map_err(|e| {
                    CliError::Config(format!("config key {key}: cannot parse {s:?}: {e}"))
                })
            })
            .transpose()
    }

    fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        self.resolved.insert(
            key.to_string(),
            serde_json::to_value(v).expect("serializable setting"),
        );
    }

    fn opt<T: FromStr + Serialize>(&mut self, key: &str, cli: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match cli {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        self.record(key, &v);
        Ok(v)
    }

    fn get<T: FromStr + Serialize>(&mut self, key: &str, cli: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match cli {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    fn flag(&mut self, key: &str, cli: bool) -> Result<bool> {
        let v = cli || self.from_file::<bool>(key)?.unwrap_or(false);
        self.record(key, &v);
        Ok(v)
    }

    /// Fails on config keys that no setting of this command consumed.
    fn check_unused(&self) -> Result<()> {
        let unused: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.resolved.contains_key(*k) && *k != "command")
            .map(String::as_str)
            .collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "unknown config keys for this command: {}",
                unused.join(", ")
            )))
        }
    }
}

fn config_err(e: impl Display) -> CliError {
    CliError::Config(one_line(e))
}

fn resolve_estimator(r: &mut Resolver, a: &EstimatorArgs) -> Result<(GllaConfig, EstimatorOptions)> {
    let d = GllaConfig::default();
    let glla = GllaConfig {
        n: r.get("window", a.window, d.n)?,
        tau: r.get("tau", a.tau, d.tau)?,
        delta_t: r.get("delta_t", a.delta_t, d.delta_t)?,
        max_order: r.get("max_order", a.max_order, d.max_order)?,
        use_order: r.get("use_order", a.use_order, d.use_order)?,
    };
    glla.validate().map_err(config_err)?;
    let opts = resolve_estimator_options(r, a.walktrap_steps, a.tefi_source.as_deref())?;
    Ok((glla, opts))
}

fn resolve_estimator_options(
    r: &mut Resolver,
    steps: Option<usize>,
    source: Option<&str>,
) -> Result<EstimatorOptions> {
    let d = EstimatorOptions::default();
    let walktrap_steps = r.get("walktrap_steps", steps, d.walktrap_steps)?;
    if walktrap_steps == 0 {
        return Err(CliError::Config("walktrap_steps must be at least 1".into()));
    }
    let source = source.map(TefiSource::from_str).transpose().map_err(config_err)?;
    let tefi_source = r.get("tefi_source", source, d.tefi_source)?;
    Ok(EstimatorOptions {
        walktrap_steps,
        tefi_source,
    })
}

fn resolve_sweep(r: &mut Resolver, a: &GridArgs) -> Result<SweepConfig> {
    let d = SweepConfig::default();
    let depth_min = r.get("depth_min", a.depth_min, d.depth_min)?;
    let depth_max = r.opt("depth_max", a.depth_max)?;
    let depth_step = r.get("depth_step", a.depth_step, d.depth_step)?;
    let weights_text = r.get("weights", a.weights.clone(), "0.7,0.3".to_string())?;
    let weights = CompositeWeights::parse(&weights_text).map_err(config_err)?;
    let raw_nmi = r.flag("raw_nmi", a.raw_nmi)?;
    let (glla, estimator) = resolve_estimator(r, &a.estimator)?;
    Ok(SweepConfig {
        depth_min,
        depth_max,
        depth_step,
        glla,
        weights,
        estimator,
        normalize_nmi: !raw_nmi,
    })
}

fn resolve_client(r: &mut Resolver, a: &FetchOptions, out: &Path) -> Result<EmbeddingClient> {
    let endpoint = r.get("endpoint", a.endpoint.clone(), DEFAULT_ENDPOINT.to_string())?;
    let model = r.get("model", a.model.clone(), DEFAULT_MODEL.to_string())?;
    let cache = r.get("cache_dir", a.cache_dir.clone(), out.join("cache"))?;
    let batch = r.get("batch_size", a.batch_size, ingest::FETCH_BATCH_SIZE)?;
    let key = std::env::var(API_KEY_ENV)
        .map_err(|_| CliError::Config(format!("{API_KEY_ENV} is not set")))?;
    Ok(EmbeddingClient::new(&endpoint, &model, &key)?
        .with_cache_dir(cache)
        .with_batch_size(batch))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Digest over every cell file name and content of a results directory.
fn sha256_cells(dir: &Path) -> Result<String> {
    let cells = dir.join(simgen::CELLS_DIR);
    let mut names: Vec<PathBuf> = fs::read_dir(&cells)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", cells.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update(
            fs::read(&p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?,
        );
    }
    Ok(hex::encode(h.finalize()))
}

/// Collects what a command wrote and the manifest describing it.
struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    inputs: BTreeMap<String, Value>,
    extra: BTreeMap<String, Value>,
}

impl Run {
    fn new(command: &'static str, out: PathBuf, seed: u64) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| {
            CliError::Internal(format!("cannot create {}: {e}", out.display()))
        })?;
        Ok(Self {
            command,
            out,
            seed,
            inputs: BTreeMap::new(),
            extra: BTreeMap::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(
            path.display().to_string(),
            json!({ "sha256": digest }),
        );
        Ok(())
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        let tmp = self.out.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    fn manifest(&self, resolver: &Resolver) -> Value {
        let mut config: serde_json::Map<String, Value> = resolver
            .resolved
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        config.insert("command".into(), json!(self.command));
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "timestamp": humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
            "seeds": { "seed": self.seed },
            "config": config,
            "inputs": self.inputs,
            "details": self.extra,
        })
    }

    fn finish(&self, resolver: &Resolver) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest(resolver)).expect("json");
        self.write(MANIFEST_FILE, text + "\n")?;
        Ok(())
    }
}

fn load_pool(r: &mut Resolver, cli: Option<PathBuf>) -> Result<PathBuf> {
    r.opt("pool", cli)?
        .ok_or_else(|| CliError::Config("an item pool is required (--pool)".into()))
}

fn load_inputs(
    r: &mut Resolver,
    a: &InputArgs,
    run: &mut Run,
) -> Result<(ItemPool, EmbeddingMatrix, Option<Partition>)> {
    let pool_path = load_pool(r, a.pool.clone())?;
    let emb_path = r.opt("embeddings", a.embeddings.clone())?;
    let truth_from_pool = r.flag("truth_from_pool", a.truth_from_pool)?;
    let pool = ingest::load_item_pool(&pool_path)?;
    run.input(&pool_path)?;
    let embeddings = match emb_path {
        Some(p) => {
            let m = ingest::load_embeddings(&p, &pool)?;
            run.input(&p)?;
            m
        }
        None => {
            let client = resolve_client(r, &a.fetch, &run.out)?;
            let (m, stats) = client.fetch(&pool)?;
            run.extra.insert(
                "fetch".into(),
                json!({ "requests": stats.requests, "retries": stats.retries, "cache_hits": stats.cache_hits }),
            );
            m
        }
    };
    let truth = truth_from_pool.then(|| pool.truth());
    Ok((pool, embeddings, truth))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.3}"))
}

fn cmd_sweep(a: &SweepArgs, r: &mut Resolver, mut run: Run) -> Result<()> {
    let (pool, embeddings, truth) = load_inputs(r, &a.input, &mut run)?;
    let cfg = resolve_sweep(r, &a.grid)?;
    r.check_unused()?;
    let trace = landscape::sweep(&embeddings, truth.as_ref(), &cfg)?;
    run.write("trace.csv", trace.to_csv())?;
    let optima = serde_json::to_string_pretty(&trace.optima_json()).expect("json");
    run.write("optima.json", optima + "\n")?;
    let title = match pool.items_per_dimension() {
        Some(k) => format!("Landscape search, {k} items per dimension"),
        None => "Landscape search".to_string(),
    };
    run.write("landscape.svg", svg::landscape_svg(&trace, &title))?;
    run.finish(r)?;
    if let Some(o) = &trace.argmax_nmi {
        println!("NMI-only optimum: depth {} (NMI {}, TEFI {:.3})", o.depth, fmt_opt(o.nmi), o.tefi);
    }
    let t = &trace.argmin_tefi;
    println!("TEFI-only optimum: depth {} (NMI {}, TEFI {:.3})", t.depth, fmt_opt(t.nmi), t.tefi);
    let c = &trace.composite_opt;
    println!("composite optimum: depth {} (NMI {}, TEFI {:.3})", c.depth, fmt_opt(c.nmi), c.tefi);
    println!("wrote {}", run.out.display());
    Ok(())
}

fn cmd_ega(a: &EgaArgs, r: &mut Resolver, mut run: Run) -> Result<()> {
    let (pool, embeddings, truth) = load_inputs(r, &a.input, &mut run)?;
    let opts = resolve_estimator_options(r, a.walktrap_steps, a.tefi_source.as_deref())?;
    r.check_unused()?;
    let result = pipeline::ega_cross_sectional(&embeddings, truth.as_ref(), &opts)
        .map_err(|e| CliError::Data(one_line(e)))?;
    let partition = result.partition.as_ref().expect("ok result has a partition");
    let mut csv = String::from("item_id,dimension,community\n");
    for (item, label) in pool.items().iter().zip(partition.labels()) {
        csv.push_str(&format!(
            "{},{},{label}\n",
            csv_field(&item.id),
            csv_field(&item.dimension_label)
        ));
    }
    run.write("partition.csv", csv)?;
    let summary = json!({
        "depth": result.depth,
        "n_communities": result.n_communities,
        "tefi": result.tefi,
        "nmi": result.nmi,
    });
    run.write(
        "ega.json",
        serde_json::to_string_pretty(&summary).expect("json") + "\n",
    )?;
    run.finish(r)?;
    println!(
        "{} communities, TEFI {}, NMI {}",
        result.n_communities.unwrap_or(0),
        fmt_opt(result.tefi),
        fmt_opt(result.nmi)
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn parse_k_grid(s: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Config(format!("cannot parse k grid {s:?}"));
    let mut ks = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            ks.extend(a..=b);
        } else {
            ks.push(part.parse().map_err(|_| bad())?);
        }
    }
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(bad());
    }
    Ok(ks)
}

fn parse_band(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Config(format!("cannot parse band {s:?}, expected start,end"));
    let (a, b) = s.split_once([',', '-']).ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_secondary(s: &str) -> Result<Vec<Band>> {
    if s.trim() == "none" || s.trim().is_empty() {
        return Ok(vec![]);
    }
    s.split(';')
        .map(|part| {
            let bad = || CliError::Config(format!("cannot parse band {part:?}, expected start-end:load"));
            let (range, load) = part.split_once(':').ok_or_else(bad)?;
            let (start, end) = parse_band(range).map_err(|_| bad())?;
            Ok(Band {
                start,
                end,
                load: load.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn format_secondary(bands: &[Band]) -> String {
    if bands.is_empty() {
        return "none".into();
    }
    bands
        .iter()
        .map(|b| format!("{}-{}:{}", b.start, b.end, b.load))
        .collect::<Vec<_>>()
        .join(";")
}

fn cmd_montecarlo(a: &MonteCarloArgs, r: &mut Resolver, mut run: Run) -> Result<()> {
    let t = SyntheticSpec::shallow_signal(3, 0);
    let k_text = r.get("k", a.k.clone(), "3-40".to_string())?;
    let k_grid = parse_k_grid(&k_text)?;
    let iterations = r.get("iterations", a.iterations, MonteCarloConfig::default().iterations)?;
    let band_text = r.get(
        "signal_band",
        a.signal_band.clone(),
        format!("{},{}", t.signal_band.0, t.signal_band.1),
    )?;
    let secondary_text = r.get(
        "secondary_bands",
        a.secondary_bands.clone(),
        format_secondary(&t.secondary_bands),
    )?;
    let template = SyntheticSpec {
        n_dimensions: r.get("dimensions", a.dimensions, t.n_dimensions)?,
        items_per_dimension: k_grid[0],
        total_depth: r.get("total_depth", a.total_depth, t.total_depth)?,
        signal_band: parse_band(&band_text)?,
        within_load: r.get("within_load", a.within_load, t.within_load)?,
        noise_sd: r.get("noise_sd", a.noise_sd, t.noise_sd)?,
        secondary_bands: parse_secondary(&secondary_text)?,
        seed: run.seed,
    };
    template.validate().map_err(CliError::Config)?;
    let sweep = resolve_sweep(r, &a.grid)?;
    sweep.grid(template.total_depth)?;
    r.check_unused()?;
    let cfg = MonteCarloConfig {
        k_grid,
        iterations,
        sweep,
        base_seed: run.seed,
    };
    check_resume(&run.out, r)?;
    // the manifest goes first so an interrupted run can be resumed with the same config
    run.extra.insert("cells".into(), json!(cfg.k_grid.len() * cfg.iterations));
    run.finish(r)?;
    let results = simgen::monte_carlo(&cfg, &template, Some(&run.out))?;
    for g in &results.aggregates {
        println!(
            "k={:<3} cells={:<4} baseline NMI {}  optimized NMI {}  NMI-shallower share {}",
            g.k,
            g.cells,
            fmt_opt(g.mean_baseline_nmi),
            fmt_opt(g.mean_optimized_nmi),
            fmt_opt(g.share_nmi_shallower)
        );
    }
    println!("wrote {}", run.out.display());
    Ok(())
}

/// Refuses to resume into a results directory produced with a different configuration.
fn check_resume(out: &Path, r: &Resolver) -> Result<()> {
    let path = out.join(MANIFEST_FILE);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(());
    };
    let old: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), one_line(e))))?;
    // cells are keyed by (k, iteration), so the grid may grow between runs
    let relevant = |k: &str| !matches!(k, "threads" | "out" | "k" | "iterations");
    let mut now: BTreeMap<String, Value> = r
        .resolved
        .iter()
        .filter(|(k, _)| relevant(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    now.insert("command".into(), json!("montecarlo"));
    let before: Option<BTreeMap<String, Value>> =
        old.get("config").and_then(Value::as_object).map(|m| {
            m.iter()
                .filter(|(k, _)| relevant(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        });
    if before.as_ref() != Some(&now) {
        return Err(CliError::Config(format!(
            "{} holds results for a different configuration; use a fresh --out",
            out.display()
        )));
    }
    Ok(())
}

/// Settings recorded by the `montecarlo` run that produced `dir`, used as a fallback
/// layer below the command line and config file.
fn results_layer(r: &mut Resolver, dir: &Path) {
    let Ok(text) = fs::read_to_string(dir.join(MANIFEST_FILE)) else {
        return;
    };
    let Ok(manifest) = serde_json::from_str::<Value>(&text) else {
        return;
    };
    let Some(cfg) = manifest.get("config").and_then(Value::as_object) else {
        return;
    };
    for key in ["weights", "raw_nmi", "window", "tau", "delta_t"] {
        if let Some(t) = cfg.get(key).and_then(json_text) {
            r.fallback.insert(key.to_string(), t);
        }
    }
}

fn resolve_mc(r: &mut Resolver, a: &ResultsArgs) -> Result<(PathBuf, SweepConfig)> {
    let dir = r
        .opt("results", a.results.clone())?
        .ok_or_else(|| CliError::Config("a results directory is required (--results)".into()))?;
    results_layer(r, &dir);
    let mut sweep = SweepConfig::default();
    let weights_text = r.get("weights", None, "0.7,0.3".to_string())?;
    sweep.weights = CompositeWeights::parse(&weights_text).map_err(config_err)?;
    sweep.normalize_nmi = !r.flag("raw_nmi", false)?;
    Ok((dir, sweep))
}

fn load_mc(dir: &Path, sweep: &SweepConfig) -> Result<McResults> {
    let empty = || CliError::Data(format!("{} contains no Monte Carlo cells", dir.display()));
    if !dir.join(simgen::CELLS_DIR).is_dir() {
        return Err(empty());
    }
    let results = simgen::load_results(dir, sweep)?;
    if results.cells.is_empty() {
        return Err(empty());
    }
    Ok(results)
}

fn cmd_compare(a: &ResultsArgs, r: &mut Resolver, mut run: Run) -> Result<()> {
    let (dir, sweep) = resolve_mc(r, a)?;
    r.check_unused()?;
    let results = load_mc(&dir, &sweep)?;
    run.inputs.insert(
        dir.display().to_string(),
        json!({ "cells": results.cells.len(), "sha256": sha256_cells(&dir)? }),
    );
    let mut csv = String::from("k,cells,baseline_nmi,optimized_nmi,delta\n");
    let mut rows = Vec::new();
    let cell = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
    for g in &results.aggregates {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            g.k,
            g.cells,
            cell(g.mean_baseline_nmi),
            cell(g.mean_optimized_nmi),
            cell(g.delta_nmi())
        ));
        rows.push(svg::CompareRow {
            k: g.k,
            baseline_nmi: g.mean_baseline_nmi.unwrap_or(f64::NAN),
            optimized_nmi: g.mean_optimized_nmi.unwrap_or(f64::NAN),
        });
        println!(
            "k={:<3} baseline {}  optimized {}  delta {}",
            g.k,
            fmt_opt(g.mean_baseline_nmi),
            fmt_opt(g.mean_optimized_nmi),
            fmt_opt(g.delta_nmi())
        );
    }
    run.write("compare.csv", csv)?;
    run.write(
        "compare.svg",
        svg::compare_svg(&rows, "Cross-sectional EGA versus landscape-optimized DynEGA"),
    )?;
    run.finish(r)?;
    Ok(())
}

fn cmd_vectorfield(a: &VectorFieldArgs, r: &mut Resolver, mut run: Run) -> Result<()> {
    let (dir, sweep) = resolve_mc(r, &a.results)?;
    let d = GllaConfig::default();
    let glla = GllaConfig {
        n: r.get("window", a.window, d.n)?,
        tau: r.get("tau", a.tau, d.tau)?,
        delta_t: r.get("delta_t", a.delta_t, d.delta_t)?,
        ..d
    };
    glla.validate().map_err(config_err)?;
    r.check_unused()?;
    let results = load_mc(&dir, &sweep)?;
    run.inputs.insert(
        dir.display().to_string(),
        json!({ "cells": results.cells.len(), "sha256": sha256_cells(&dir)? }),
    );
    let traces: Vec<(usize, &LandscapeTrace)> = results
        .cells
        .iter()
        .filter_map(|c| Some((c.k, c.trace.as_ref()?)))
        .collect();
    let arrows = landscape::vector_field(&traces, &glla)?;
    run.write("arrows.csv", landscape::arrows_csv(&arrows))?;
    let stride = arrows.len().div_ceil(SVG_ARROW_LIMIT).max(1);
    let shown: Vec<_> = arrows.iter().step_by(stride).copied().collect();
    run.extra.insert("svg_arrow_stride".into(), json!(stride));
    run.write(
        "vectorfield.svg",
        svg::vector_field_svg(&shown, "TEFI and NMI dynamics across the embedding landscape"),
    )?;
    run.finish(r)?;
    println!("{} arrows from {} traces", arrows.len(), traces.len());
    Ok(())
}

fn cmd_fetch(a: &FetchArgs, r: &mut Resolver, mut run: Run) -> Result<()> {
    let pool_path = load_pool(r, a.pool.clone())?;
    let client = resolve_client(r, &a.fetch, &run.out)?;
    r.check_unused()?;
    let pool = ingest::load_item_pool(&pool_path)?;
    run.input(&pool_path)?;
    let (m, stats) = client.fetch(&pool)?;
    let path = run.out.join("embeddings.csv");
    m.save_csv(&path)
        .map_err(|e| CliError::Internal(one_line(e)))?;
    run.extra.insert(
        "fetch".into(),
        json!({ "requests": stats.requests, "retries": stats.retries, "cache_hits": stats.cache_hits }),
    );
    run.finish(r)?;
    println!(
        "{} items x {} coordinates ({} requests, {} retries, {} cached)",
        m.n_items(),
        m.depth(),
        stats.requests,
        stats.retries,
        stats.cache_hits
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut r = Resolver::load(cli.config.as_deref())?;
    let seed = r.get("seed", cli.seed, 0u64)?;
    let out = r.get("out", cli.out, PathBuf::from(DEFAULT_OUT))?;
    let threads = r.opt("threads", cli.threads)?;
    let name = match &cli.command {
        Command::Sweep(_) => "sweep",
        Command::Ega(_) => "ega",
        Command::Compare(_) => "compare",
        Command::Montecarlo(_) => "montecarlo",
        Command::Vectorfield(_) => "vectorfield",
        Command::FetchEmbeddings(_) => "fetch-embeddings",
    };
    if let Some(c) = r.file.get("command") {
        if c != name {
            return Err(CliError::Config(format!(
                "config was written for `{c}`, not `{name}`"
            )));
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let workers = builder
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker pool: {e}")))?;
    let run = Run::new(name, out, seed)?;
    workers.install(|| match &cli.command {
        Command::Sweep(a) => cmd_sweep(a, &mut r, run),
        Command::Ega(a) => cmd_ega(a, &mut r, run),
        Command::Compare(a) => cmd_compare(a, &mut r, run),
        Command::Montecarlo(a) => cmd_montecarlo(a, &mut r, run),
        Command::Vectorfield(a) => cmd_vectorfield(a, &mut r, run),
        Command::FetchEmbeddings(a) => cmd_fetch(a, &mut r, run),
    })
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().next().unwrap_or("invalid arguments");
                    eprintln!("{}", first.trim());
                    1
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(e.message()));
            e.code()
        }
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_grids() {
        assert_eq!(parse_k_grid("4").unwrap(), vec![4]);
        assert_eq!(parse_k_grid("20, 5,10").unwrap(), vec![5, 10, 20]);
        assert_eq!(parse_k_grid("3-6").unwrap(), vec![3, 4, 5, 6]);
        assert!(parse_k_grid("6-3").is_err());
        assert!(parse_k_grid("x").is_err());
    }

    #[test]
    fn secondary_bands_round_trip() {
        let bands = parse_secondary("700-740:0.3;800-810:0.1").unwrap();
        assert_eq!(bands.len(), 2);
        assert_eq!(format_secondary(&bands), "700-740:0.3;800-810:0.1");
        assert!(parse_secondary("none").unwrap().is_empty());
        assert!(parse_secondary("700:0.3").is_err());
    }

    #[test]
    fn toml_layer_and_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "depth-max = 113\nweights = \"0.6,0.4\"\nraw_nmi = true\n").unwrap();
        let mut r = Resolver::load(Some(&path)).unwrap();
        assert_eq!(r.opt::<usize>("depth_max", None).unwrap(), Some(113));
        assert_eq!(r.opt("depth_max", Some(50usize)).unwrap(), Some(50));
        assert_eq!(r.get("weights", None, String::new()).unwrap(), "0.6,0.4");
        assert!(r.flag("raw_nmi", false).unwrap());
        assert!(r.check_unused().is_ok());
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "depth_mix = 3\n").unwrap();
        let r = Resolver::load(Some(&path)).unwrap();
        assert!(matches!(r.check_unused(), Err(CliError::Config(_))));
    }

    #[test]
    fn bad_config_value_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "depth_max = \"deep\"\n").unwrap();
        let mut r = Resolver::load(Some(&path)).unwrap();
        let e = r.opt::<usize>("depth_max", None).unwrap_err();
        assert_eq!(e.code(), 1);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["dynega", "sweep", "--no-such-flag"]), 1);
        assert_eq!(run(["dynega"]), 1);
        assert_eq!(run(["dynega", "--help"]), 0);
    }
}
