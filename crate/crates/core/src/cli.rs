//! The `scom` command line: configuration loading and subcommands.
//!
//! Exit codes: 0 on success, 2 for caller errors (bad flags, missing files,
//! infeasible constraints, busy port), 3 for internal failures.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, load_dataset, ConceptDataset, ConceptSchema, Generator, OracleKind, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::intervention::{intervention_sweep, InterventionOrder, InterventionPlan};
use crate::model::{train_output_model, OutputModel, TrainConfig};
use crate::report::{accuracy_report, evaluate_selection_file, AccuracyReport, ReportSpec, SelectionFile};
use crate::selection::{select, Level, Method, SelectionRequest, SelectionTrace};
use crate::service::{self, ServiceState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable that overrides the training and selection seeds.
pub const SEED_ENV: &str = "SCOM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionDefaults {
    #[serde(default = "SelectionDefaults::default_method")]
    pub method: Method,
    #[serde(default)]
    pub level: Level,
    #[serde(default)]
    pub k: Option<usize>,
    /// Group names.
    #[serde(default)]
    pub locked_in: Vec<String>,
    #[serde(default)]
    pub excluded: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

impl SelectionDefaults {
    fn default_method() -> Method {
        Method::Backward
    }
}

impl Default for SelectionDefaults {
    fn default() -> Self {
        Self {
            method: Self::default_method(),
            level: Level::Dataset,
            k: None,
            locked_in: Vec::new(),
            excluded: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "ServiceConfig::default_bind")]
    pub bind: IpAddr,
    #[serde(default = "ServiceConfig::default_port")]
    pub port: u32,
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
}

impl ServiceConfig {
    fn default_bind() -> IpAddr {
        IpAddr::from([127, 0, 0, 1])
    }
    fn default_port() -> u32 {
        8080
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: Self::default_bind(),
            port: Self::default_port(),
            ui_dir: None,
        }
    }
}

/// Contents of a `--config` TOML file. Relative paths are resolved against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: PathBuf,
    pub data: PathBuf,
    #[serde(default = "RunConfig::default_checkpoint")]
    pub checkpoint: PathBuf,
    #[serde(default = "RunConfig::default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selection: SelectionDefaults,
    #[serde(default)]
    pub service: ServiceConfig,
}

impl RunConfig {
    fn default_checkpoint() -> PathBuf {
        PathBuf::from("model.json")
    }
    fn default_out_dir() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn from_toml_str(s: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.schema, &mut cfg.data, &mut cfg.checkpoint, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if let Some(ui) = cfg.service.ui_dir.as_mut() {
            if ui.is_relative() {
                *ui = base_dir.join(&*ui);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads, resolves paths, and checks that the input files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.schema, &self.data] {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        if !(1..=65535).contains(&self.service.port) {
            return Err(Error::Config(format!(
                "service port must be in 1..=65535, got {}",
                self.service.port
            )));
        }
        self.train.validate()
    }

    /// Applies `SCOM_SEED` when it is set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
            self.train.seed = seed;
            self.selection.seed = seed;
        }
        Ok(())
    }

    /// sha256 of the effective configuration, for report provenance.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn load_dataset(&self) -> Result<ConceptDataset> {
        load_dataset(&self.schema, &self.data, self.split_seed)
    }

    pub fn load_checkpoint(&self) -> Result<OutputModel> {
        OutputModel::load(&self.checkpoint)
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        Ok(self.out_dir.join(name))
    }
}

#[derive(Debug, Parser)]
#[command(name = "scom", version, about = "Selective concept models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConstraintArgs {
    /// Groups that must be selected (names or indices, comma separated).
    #[arg(long, value_delimiter = ',')]
    pub locked_in: Option<Vec<String>>,
    /// Groups that must not be selected.
    #[arg(long, value_delimiter = ',')]
    pub excluded: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the output model and write the checkpoint and training log.
    Train(ConfigArg),
    /// Run greedy or random selection and write the full trace.
    Select {
        #[command(flatten)]
        config: ConfigArg,
        /// forward, backward or random; defaults to the config value.
        #[arg(long)]
        method: Option<Method>,
        /// dataset or instance; defaults to the config value.
        #[arg(long)]
        level: Option<Level>,
        /// Also print the size-k set.
        #[arg(long)]
        k: Option<usize>,
        /// Instance identifier for instance-level selection.
        #[arg(long)]
        instance: Option<String>,
        #[command(flatten)]
        constraints: ConstraintArgs,
        /// Seed for random selection; defaults to the config value.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path; defaults to `<out_dir>/trace_<method>_<level>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy-vs-k table for selection methods and selection files.
    Report {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_delimiter = ',', default_value = "backward,forward,random")]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_value = "dataset")]
        levels: Vec<Level>,
        /// Set sizes; default is every reachable size.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Seeds for random selection.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[command(flatten)]
        constraints: ConstraintArgs,
        /// External selection files, reported as method "external".
        #[arg(long)]
        selections: Vec<PathBuf>,
        /// Output stem; writes `<stem>.csv` and `<stem>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy after oracle interventions on the selected sets.
    InterveneSweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Trace to read sets from; computed from the config when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Method for the computed trace; defaults to the config value.
        #[arg(long)]
        method: Option<Method>,
        /// Set sizes; default is every non-empty size in the trace.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// class_level or soft.
        #[arg(long, default_value = "class_level")]
        oracle: OracleKind,
        /// Fixed intervention order (group names); random when absent.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<String>>,
        /// Number of random intervention orders.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Base seed of the random orders.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest number of interventions per set; default is the set size.
        #[arg(long)]
        max_interventions: Option<usize>,
        /// Output stem; writes `<stem>.csv` and `<stem>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic schema, dataset and starter config.
    GenSynthetic {
        /// duplicated, xor_distractor, informative_zero or correlated_blocks.
        #[arg(long)]
        generator: Generator,
        /// Number of instances.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Probability of flipping each observed concept.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of blocks (correlated_blocks only).
        #[arg(long, default_value_t = 3)]
        blocks: usize,
        /// Concepts per block (correlated_blocks only).
        #[arg(long, default_value_t = 2)]
        block_size: usize,
        /// Directory for schema.json, data.csv and scom.toml.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate external per-instance selections.
    EvalSelections {
        #[command(flatten)]
        config: ConfigArg,
        /// Selection CSV files with columns instance_id and selected.
        #[arg(long, required = true)]
        selections: Vec<PathBuf>,
        /// Output stem; writes `<stem>.csv` and `<stem>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the JSON API (and an optional UI bundle).
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        /// Address to bind; defaults to the config value (127.0.0.1).
        #[arg(long)]
        bind: Option<IpAddr>,
        /// Port; defaults to the config value (8080).
        #[arg(long)]
        port: Option<u32>,
    },
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&arg.config)?;
    cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    Ok(cfg)
}

fn resolve_groups(schema: &ConceptSchema, names: &[String]) -> Result<BTreeSet<usize>> {
    names
        .iter()
        .map(|name| {
            schema
                .group_index(name)
                .or_else(|| name.parse::<usize>().ok().filter(|&g| g < schema.num_groups()))
                .ok_or_else(|| Error::InvalidInput(format!("unknown concept group `{name}`")))
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn open_pair(cfg: &RunConfig) -> Result<(OutputModel, ConceptDataset)> {
    let dataset = cfg.load_dataset()?;
    let model = cfg.load_checkpoint()?;
    model.ensure_compatible(dataset.schema())?;
    Ok((model, dataset))
}

fn selection_request(
    cfg: &RunConfig,
    dataset: &ConceptDataset,
    method: Method,
    level: Level,
    instance: Option<&str>,
    constraints: &ConstraintArgs,
    seed: u64,
) -> Result<SelectionRequest> {
    let schema = dataset.schema();
    let locked = constraints.locked_in.as_ref().unwrap_or(&cfg.selection.locked_in);
    let excluded = constraints.excluded.as_ref().unwrap_or(&cfg.selection.excluded);
    let mut req = SelectionRequest::new(method, 0)
        .locked(resolve_groups(schema, locked)?)
        .exclude(resolve_groups(schema, excluded)?)
        .seed(seed);
    match (level, instance) {
        (Level::Instance, Some(id)) => {
            let r = dataset
                .resolve_instance(id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown instance `{id}`")))?;
            req = req.instance(r);
        }
        (Level::Instance, None) => {
            return Err(Error::Infeasible("instance-level selection needs --instance".into()))
        }
        (Level::Dataset, Some(_)) => {
            return Err(Error::Infeasible("--instance is only valid with --level instance".into()))
        }
        (Level::Dataset, None) => {}
    }
    Ok(req.full_trace(schema.num_groups()))
}

fn write_report(report: &AccuracyReport, stem: &Path, out: &mut dyn std::io::Write) -> Result<()> {
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");
    write_file(&csv_path, &report.to_csv())?;
    write_file(&json_path, &report.to_json()?)?;
    let _ = writeln!(out, "{}\n{}", csv_path.display(), json_path.display());
    Ok(())
}

/// Runs one parsed command, writing human-readable progress to `out`.
pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<()> {
    match command {
        Command::Train(arg) => {
            let cfg = load_config(&arg)?;
            let dataset = cfg.load_dataset()?;
            let (model, log) = train_output_model(&dataset, &cfg.train)?;
            model.save(&cfg.checkpoint)?;
            let log_path = cfg
                .checkpoint
                .parent()
                .unwrap_or(Path::new("."))
                .join("train_log.csv");
            write_file(&log_path, &log.to_csv())?;
            let _ = writeln!(out, "checkpoint {}", cfg.checkpoint.display());
            let _ = writeln!(out, "sha256 {}", model.content_hash()?);
            let _ = writeln!(out, "log {}", log_path.display());
        }
        Command::Select {
            config,
            method,
            level,
            k,
            instance,
            constraints,
            seed,
            out: out_path,
        } => {
            let cfg = load_config(&config)?;
            let (model, dataset) = open_pair(&cfg)?;
            let method = method.unwrap_or(cfg.selection.method);
            let level = level.unwrap_or(cfg.selection.level);
            let req = selection_request(
                &cfg,
                &dataset,
                method,
                level,
                instance.as_deref(),
                &constraints,
                seed.unwrap_or(cfg.selection.seed),
            )?;
            let trace = select(&model, &dataset, &req)?;
            let path = match out_path {
                Some(p) => p,
                None => cfg.out_path(&format!("trace_{method}_{}.json", level.as_str()))?,
            };
            write_file(&path, &trace.to_json()?)?;
            let _ = writeln!(out, "trace {}", path.display());
            if let Some(k) = k.or(cfg.selection.k) {
                let set = trace.set_of_size(k).ok_or_else(|| {
                    let (lo, hi) = trace.size_range();
                    Error::Infeasible(format!("k = {k} is outside the reachable sizes {lo}..={hi}"))
                })?;
                let names: Vec<&str> = set
                    .iter()
                    .map(|&g| dataset.schema().groups[g].name.as_str())
                    .collect();
                let _ = writeln!(out, "k={k} {}", names.join(";"));
            }
        }
        Command::Report {
            config,
            methods,
            levels,
            ks,
            seeds,
            constraints,
            selections,
            out: out_path,
        } => {
            let cfg = load_config(&config)?;
            let (model, dataset) = open_pair(&cfg)?;
            let schema = dataset.schema();
            let locked = constraints.locked_in.as_ref().unwrap_or(&cfg.selection.locked_in);
            let excluded = constraints.excluded.as_ref().unwrap_or(&cfg.selection.excluded);
            let spec = ReportSpec::new(methods, levels, seeds)
                .with_ks(ks.unwrap_or_default())
                .with_constraints(resolve_groups(schema, locked)?, resolve_groups(schema, excluded)?);
            let hash = Some(cfg.hash());
            let mut report = accuracy_report(&model, &dataset, &spec, hash.clone())?;
            for path in &selections {
                let file = SelectionFile::load(path)?;
                let ext = evaluate_selection_file(&model, &dataset, &file, hash.clone())?;
                report.rows.extend(ext.rows);
            }
            let stem = match out_path {
                Some(p) => p,
                None => cfg.out_path("report")?,
            };
            write_report(&report, &stem, out)?;
        }
        Command::InterveneSweep {
            config,
            trace,
            method,
            ks,
            oracle,
            order,
            seeds,
            seed,
            max_interventions,
            out: out_path,
        } => {
            let cfg = load_config(&config)?;
            let (model, dataset) = open_pair(&cfg)?;
            let trace: SelectionTrace = match trace {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str(&text)?
                }
                None => {
                    let m = method.unwrap_or(cfg.selection.method);
                    let none = ConstraintArgs {
                        locked_in: None,
                        excluded: None,
                    };
                    let req =
                        selection_request(&cfg, &dataset, m, Level::Dataset, None, &none, cfg.selection.seed)?;
                    select(&model, &dataset, &req)?
                }
            };
            if trace.schema_fingerprint != model.schema_fingerprint {
                return Err(Error::IncompatibleCheckpoint(
                    "trace was produced for a different schema".into(),
                ));
            }
            let ks = match ks {
                Some(ks) => ks,
                None => {
                    let (lo, hi) = trace.size_range();
                    (lo.max(1)..=hi).collect()
                }
            };
            let order = match order {
                Some(names) => InterventionOrder::User {
                    indices: names
                        .iter()
                        .map(|n| {
                            dataset
                                .schema()
                                .group_index(n)
                                .ok_or_else(|| Error::InvalidInput(format!("unknown concept group `{n}`")))
                        })
                        .collect::<Result<_>>()?,
                },
                None => InterventionOrder::Random { seed },
            };
            let plan = InterventionPlan {
                order,
                oracle,
                max_interventions,
            };
            let report =
                intervention_sweep(&model, &dataset, &trace, &ks, &plan, seeds)?.with_config_hash(Some(cfg.hash()));
            let stem = match out_path {
                Some(p) => p,
                None => cfg.out_path("sweep")?,
            };
            let csv_path = stem.with_extension("csv");
            let json_path = stem.with_extension("json");
            write_file(&csv_path, &report.to_csv())?;
            write_file(&json_path, &serde_json::to_string_pretty(&report)?)?;
            let _ = writeln!(out, "{}\n{}", csv_path.display(), json_path.display());
        }
        Command::GenSynthetic {
            generator,
            n,
            noise,
            seed,
            blocks,
            block_size,
            out_dir,
        } => {
            let spec = SyntheticSpec::new(generator, n, seed)
                .with_noise(noise)
                .with_blocks(blocks, block_size);
            let dataset = generate_synthetic(&spec)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let schema_path = out_dir.join("schema.json");
            let data_path = out_dir.join("data.csv");
            dataset.save(&schema_path, &data_path)?;
            let cfg_path = out_dir.join("scom.toml");
            if !cfg_path.exists() {
                write_file(
                    &cfg_path,
                    &format!(
                        "schema = \"schema.json\"\ndata = \"data.csv\"\ncheckpoint = \"model.json\"\nout_dir = \"out\"\nsplit_seed = {seed}\n\n[train]\nseed = {seed}\n"
                    ),
                )?;
            }
            let _ = writeln!(out, "schema {}", schema_path.display());
            let _ = writeln!(out, "data {}", data_path.display());
            let _ = writeln!(out, "config {}", cfg_path.display());
        }
        Command::EvalSelections {
            config,
            selections,
            out: out_path,
        } => {
            let cfg = load_config(&config)?;
            let (model, dataset) = open_pair(&cfg)?;
            let mut merged = SelectionFile::default();
            for path in &selections {
                merged.rows.extend(SelectionFile::load(path)?.rows);
            }
            let report = evaluate_selection_file(&model, &dataset, &merged, Some(cfg.hash()))?;
            let stem = match out_path {
                Some(p) => p,
                None => cfg.out_path("selections_report")?,
            };
            write_report(&report, &stem, out)?;
        }
        Command::Serve { config, bind, port } => {
            let mut cfg = load_config(&config)?;
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            if let Some(p) = port {
                cfg.service.port = p;
            }
            cfg.validate()?;
            let (model, dataset) = open_pair(&cfg)?;
            let state = Arc::new(ServiceState::new(model, dataset)?);
            let addr = SocketAddr::new(cfg.service.bind, cfg.service.port as u16);
            let app = service::router(state, cfg.service.ui_dir.clone());
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime.block_on(async {
                let listener = service::bind(addr).await?;
                let _ = writeln!(out, "listening on http://{addr}");
                let _ = out.flush();
                service::serve(listener, app, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli.command, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                EXIT_USER
            } else {
                EXIT_INTERNAL
            }
        }
    }
}
