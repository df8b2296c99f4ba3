//! Command-line front end. Settings come from, in increasing precedence:
//! built-in defaults, the JSON file given by `--config`, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{
    correlation_with_stimulus, dominant_input, emit_selected_layer_maps, half_max_width, hue_circle_with_radii,
    reconstruction_experiment, tuning_sweep_all, ReconstructionSettings, DEFAULT_INNER_RADIUS,
    DEFAULT_OUTER_RADIUS, DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_WINDOW,
};
use crate::imaging::RgbImage;
use crate::model::{Layer, Model, ModelConfig, OPPONENT_TYPES};
use crate::regression::StepwiseOptions;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_HUE: f64 = 360.0;

#[derive(Debug, Parser)]
#[command(name = "huecortex", version, about = "Hierarchical color-opponent model and hue experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run the model on a PNG and write every layer map
    Run(Flags),
    /// 60-hue tuning sweep, one CSV per layer
    Tuning(Flags),
    /// Hue-circle peak distance correlation
    Correlate(Flags),
    /// Hue reconstruction by stepwise regression
    Reconstruct(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Input PNG (run only)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory, created if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON settings file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stimulus hue in degrees, (0, 360]
    #[arg(long)]
    pub hue: Option<f64>,
    /// Number of saturation/lightness samples
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict output to one layer (LGN, V1, V2, V4)
    #[arg(long)]
    pub layer: Option<String>,
    /// Progress on stderr; repeat for more
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Run,
    Tuning,
    Correlate,
    Reconstruct,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Tuning => "tuning",
            Command::Correlate => "correlate",
            Command::Reconstruct => "reconstruct",
        }
    }
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub hue: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub layer: Option<String>,
    pub window: Option<usize>,
    pub inner_radius: Option<f64>,
    pub outer_radius: Option<f64>,
    pub p_enter: Option<f64>,
    pub p_remove: Option<f64>,
    pub model: Option<ModelConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub hue: f64,
    pub samples: usize,
    pub seed: u64,
    pub layer: Option<Layer>,
    pub window: usize,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub stepwise: StepwiseOptions,
    #[serde(skip)]
    pub verbosity: u8,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            input: None,
            out: PathBuf::from(DEFAULT_OUT_DIR),
            model: ModelConfig::default(),
            hue: DEFAULT_HUE,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            layer: None,
            window: DEFAULT_WINDOW,
            inner_radius: DEFAULT_INNER_RADIUS,
            outer_radius: DEFAULT_OUTER_RADIUS,
            stepwise: StepwiseOptions::default(),
            verbosity: 0,
        }
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(command: Command, flags: &Flags) -> Result<Self> {
        let mut c = Self::defaults(command);
        if let Some(path) = &flags.config {
            let f = ConfigFile::load(path)?;
            c.input = f.input.or(c.input);
            c.out = f.out.unwrap_or(c.out);
            c.hue = f.hue.unwrap_or(c.hue);
            c.samples = f.samples.unwrap_or(c.samples);
            c.seed = f.seed.unwrap_or(c.seed);
            c.layer = f.layer.as_deref().map(parse_layer).transpose()?.or(c.layer);
            c.window = f.window.unwrap_or(c.window);
            c.inner_radius = f.inner_radius.unwrap_or(c.inner_radius);
            c.outer_radius = f.outer_radius.unwrap_or(c.outer_radius);
            c.stepwise.p_enter = f.p_enter.unwrap_or(c.stepwise.p_enter);
            c.stepwise.p_remove = f.p_remove.unwrap_or(c.stepwise.p_remove);
            c.model = f.model.unwrap_or(c.model);
        }
        c.input = flags.input.clone().or(c.input);
        c.out = flags.out.clone().unwrap_or(c.out);
        c.hue = flags.hue.unwrap_or(c.hue);
        c.samples = flags.samples.unwrap_or(c.samples);
        c.seed = flags.seed.unwrap_or(c.seed);
        c.layer = flags.layer.as_deref().map(parse_layer).transpose()?.or(c.layer);
        c.verbosity = flags.verbose;
        if c.window == 0 {
            return Err(Error::Config("window must be at least 1 pixel".into()));
        }
        Ok(c)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbosity > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn layers(&self) -> Vec<Layer> {
        match self.layer {
            Some(l) => vec![l],
            None => Layer::ALL.to_vec(),
        }
    }
}

fn parse_layer(s: &str) -> Result<Layer> {
    Layer::parse(s).ok_or_else(|| Error::Config(format!("unknown layer {s:?}; expected LGN, V1, V2 or V4")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Every file a command wrote, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

fn write_manifest(cfg: &RunConfig, files: &[PathBuf]) -> Result<RunManifest> {
    let mut entries = files
        .iter()
        .map(|p| {
            let (bytes, sha256) = sha256_file(p)?;
            let rel = p.strip_prefix(&cfg.out).unwrap_or(p);
            Ok(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes,
                sha256,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        command: cfg.command,
        files: entries,
    };
    write_json(&cfg.out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn prepare(cfg: &RunConfig) -> Result<Model> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    Model::new(cfg.model.clone())
}

/// Layer maps for one input image.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunManifest> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("run needs --input".into()))?;
    let img = RgbImage::load_png(input)?;
    let model = prepare(cfg)?;
    cfg.log(format!("running model on {}", input.display()));
    let h = model.run(&img)?;
    let (_, files) = emit_selected_layer_maps(&h, &cfg.layers(), &cfg.out)?;
    write_manifest(cfg, &files)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CurveSummary {
    layer: Layer,
    #[serde(rename = "type")]
    type_name: String,
    peak_hue_deg: f64,
    peak_response: f64,
    half_max_width_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TuningSummary {
    window: usize,
    mb_l_scale: f64,
    mb_s_scale: f64,
    curves: Vec<CurveSummary>,
    /// V4 type, its dominant V2 input, and both half-maximum widths.
    v4_vs_dominant_v2: Vec<(String, String, Option<f64>, Option<f64>)>,
}

/// Tuning CSVs for every layer plus a summary.
pub fn cmd_tuning(cfg: &RunConfig) -> Result<RunManifest> {
    let model = prepare(cfg)?;
    cfg.log("running 60-hue sweep");
    let sweeps = tuning_sweep_all(&model, cfg.window)?;
    let mut files = Vec::new();
    let mut curves = Vec::new();
    for s in sweeps.iter().filter(|s| cfg.layers().contains(&s.layer)) {
        let path = cfg.out.join(format!("tuning_{}.csv", s.layer.name()));
        s.write_csv(&path)?;
        files.push(path);
        for c in &s.curves {
            let (i, &peak) = c
                .responses
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("60 samples");
            curves.push(CurveSummary {
                layer: s.layer,
                type_name: c.name.clone(),
                peak_hue_deg: s.hsl_hues[i],
                peak_response: peak,
                half_max_width_deg: half_max_width(&c.responses),
            });
        }
    }
    let v2 = &sweeps[2];
    let v4 = &sweeps[3];
    let v4_vs_dominant_v2 = model
        .config()
        .v4_weights
        .iter()
        .map(|w| {
            let dom = OPPONENT_TYPES[dominant_input(w)];
            let own = v4.curve(&w.name).and_then(|c| half_max_width(&c.responses));
            let input = v2.curve(dom).and_then(|c| half_max_width(&c.responses));
            (w.name.clone(), dom.to_string(), own, input)
        })
        .collect();
    let summary = TuningSummary {
        window: cfg.window,
        mb_l_scale: sweeps[0].scaling.l_scale,
        mb_s_scale: sweeps[0].scaling.s_scale,
        curves,
        v4_vs_dominant_v2,
    };
    let spath = cfg.out.join("tuning_summary.json");
    write_json(&spath, &summary)?;
    files.push(spath);
    write_manifest(cfg, &files)
}

/// Pair CSV and a JSON summary with r and p.
pub fn cmd_correlate(cfg: &RunConfig) -> Result<RunManifest> {
    let model = prepare(cfg)?;
    let stim = hue_circle_with_radii(cfg.inner_radius, cfg.outer_radius).map_err(|e| match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    })?;
    cfg.log("running hue-circle correlation");
    let report = correlation_with_stimulus(&model, &stim)?;
    cfg.log(format!("r = {}, p = {}", report.r, report.p_value));
    let csv = cfg.out.join("correlation_pairs.csv");
    report.write_csv(&csv)?;
    let summary = cfg.out.join("correlation_summary.json");
    write_json(&summary, &report)?;
    write_manifest(cfg, &[csv, summary])
}

/// Dataset CSV and fitted-model report.
pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<RunManifest> {
    let model = prepare(cfg)?;
    let settings = ReconstructionSettings {
        hue_deg: cfg.hue,
        samples: cfg.samples,
        seed: cfg.seed,
        window: cfg.window,
        options: cfg.stepwise,
    };
    cfg.log(format!("sampling {} colors of hue {}", cfg.samples, cfg.hue));
    let (data, report) = reconstruction_experiment(&model, &settings).map_err(|e| match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    })?;
    cfg.log(format!("selected {:?}, rms {}", report.selected_types, report.model.rms));
    let csv = cfg.out.join("reconstruction_dataset.csv");
    data.write_csv(&csv)?;
    let json = cfg.out.join("reconstruction_report.json");
    write_json(&json, &report)?;
    write_manifest(cfg, &[csv, json])
}

pub fn execute(cfg: &RunConfig) -> Result<RunManifest> {
    match cfg.command {
        Command::Run => cmd_run(cfg),
        Command::Tuning => cmd_tuning(cfg),
        Command::Correlate => cmd_correlate(cfg),
        Command::Reconstruct => cmd_reconstruct(cfg),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (command, flags) = match &cli.command {
        CliCommand::Run(f) => (Command::Run, f),
        CliCommand::Tuning(f) => (Command::Tuning, f),
        CliCommand::Correlate(f) => (Command::Correlate, f),
        CliCommand::Reconstruct(f) => (Command::Reconstruct, f),
    };
    match RunConfig::resolve(command, flags).and_then(|cfg| execute(&cfg)) {
        Ok(m) => {
            println!("{}: wrote {} files", command.name(), m.files.len() + 1);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
