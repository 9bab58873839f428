// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Every subcommand reads an optional TOML config file with one table per
//! subcommand (`[detect]`, `[predict_detect]`, `[evaluate]`, `[gridsearch]`,
//! `[bench]`, `[simulate]`). Flags mirror the table keys one-to-one
//! (`delay_c` is `--delay-c`) and win over file values. The resolved
//! configuration is written next to the primary output as
//! `<output>.config.toml`, in the same format, so it can be fed back with
//! `--config` to repeat the run.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or parse error,
//! 4 numeric runtime error, 5 predictor fit error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, SegmentLength, SyntheticSpec};
use crate::engine::{BocdEngine, Detection, EngineConfig, HazardSpec, Scheme};
use crate::error::{Error, Result};
use crate::evaluation::{apply_delay, grid_search, margin_f_score, ChangepointSet, GridSpec, ModelKind};
use crate::io::{self, SeriesFormat};
use crate::predictive::{detect_by_threshold, fit_predictor, score_stream, PredictorKind, PredictorSpec};
use crate::preprocess::{prepare, Observation, PreprocessConfig, Scaling};

pub const CONFIG_ENV: &str = "BOCPD_CONFIG";

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_FIT: u8 = 5;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Fit(_) => EXIT_FIT,
        Error::Domain(_)
        | Error::Dimension { .. }
        | Error::Degenerate(_)
        | Error::TimeOrder { .. }
        | Error::MissingPrediction(_) => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "bocpd", version, about = "Bayesian online changepoint detection")]
pub struct Cli {
    /// TOML config file with one table per subcommand.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the run-length filter over a series and write detections.
    Detect(DetectArgs),
    /// Forecast-error detector: fit a predictor, score, threshold.
    PredictDetect(PredictDetectArgs),
    /// Score detections against a truth set.
    Evaluate(EvaluateArgs),
    /// Evaluate a hyperparameter grid on a labeled series.
    Gridsearch(GridsearchArgs),
    /// Time the factorized and joint models on a synthetic stream.
    Bench(BenchArgs),
    /// Generate a labeled synthetic stream.
    Simulate(SimulateArgs),
}

/// Declares a flag/file struct whose fields are all optional, plus a merge
/// where the receiver's values win.
macro_rules! layered {
    ($(#[$m:meta])* pub struct $name:ident { $($(#[$fm:meta])* pub $field:ident: Option<$ty:ty>,)* }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $(
                $(#[$fm])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            pub fn or(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field),)* }
            }
        }
    };
}

layered! {
    pub struct DetectArgs {
        /// Input series (CSV `t,dim_0,...` or NDJSON).
        #[arg(long)]
        pub input: Option<PathBuf>,
        /// csv | ndjson; defaults to the input extension.
        #[arg(long)]
        pub format: Option<String>,
        /// Detections NDJSON.
        #[arg(long)]
        pub output: Option<PathBuf>,
        /// Optional run-length posterior matrix CSV.
        #[arg(long)]
        pub posterior: Option<PathBuf>,
        /// factorized | multivariate
        #[arg(long)]
        pub model: Option<String>,
        /// Expected segment length; the hazard is 1/lambda.
        #[arg(long)]
        pub lambda: Option<f64>,
        #[arg(long)]
        pub mu0: Option<f64>,
        #[arg(long)]
        pub kappa0: Option<f64>,
        #[arg(long)]
        pub alpha0: Option<f64>,
        #[arg(long)]
        pub beta0: Option<f64>,
        #[arg(long)]
        pub truncation: Option<usize>,
        /// threshold | max_prob | map_set
        #[arg(long)]
        pub scheme: Option<String>,
        /// Probability level for the threshold scheme.
        #[arg(long)]
        pub threshold_p: Option<f64>,
        /// Steps subtracted from each reported location.
        #[arg(long)]
        pub delay_c: Option<usize>,
        /// Locations within this many steps of an earlier one are not re-reported.
        #[arg(long)]
        pub dedup_margin: Option<usize>,
        #[arg(long)]
        pub difference: Option<bool>,
        /// z_score | literal | none
        #[arg(long)]
        pub scaling: Option<String>,
        #[arg(long)]
        pub calibration_fraction: Option<f64>,
    }
}

layered! {
    pub struct PredictDetectArgs {
        #[arg(long)]
        pub input: Option<PathBuf>,
        #[arg(long)]
        pub format: Option<String>,
        /// Detections NDJSON.
        #[arg(long)]
        pub output: Option<PathBuf>,
        /// Anomaly-score CSV `t,score`.
        #[arg(long)]
        pub scores: Option<PathBuf>,
        /// persistence | linear_ar | external
        #[arg(long)]
        pub predictor: Option<String>,
        #[arg(long)]
        pub ar_order: Option<usize>,
        /// Prediction CSV replayed by the external predictor.
        #[arg(long)]
        pub predictions: Option<PathBuf>,
        /// Window length.
        #[arg(long)]
        pub k: Option<usize>,
        #[arg(long)]
        pub thr: Option<f64>,
        /// Minimum spacing between flags; defaults to k.
        #[arg(long)]
        pub refractory: Option<usize>,
        #[arg(long)]
        pub difference: Option<bool>,
        #[arg(long)]
        pub scaling: Option<String>,
        #[arg(long)]
        pub calibration_fraction: Option<f64>,
    }
}

layered! {
    pub struct EvaluateArgs {
        /// Truth CSV with header `t`.
        #[arg(long)]
        pub truth: Option<PathBuf>,
        /// Detections NDJSON; `located_at` is scored.
        #[arg(long)]
        pub detections: Option<PathBuf>,
        #[arg(long)]
        pub margin: Option<usize>,
        #[arg(long)]
        pub delay_c: Option<usize>,
        /// Optional report JSON file (also printed to stdout).
        #[arg(long)]
        pub output: Option<PathBuf>,
    }
}

layered! {
    pub struct GridsearchArgs {
        #[arg(long)]
        pub input: Option<PathBuf>,
        #[arg(long)]
        pub format: Option<String>,
        #[arg(long)]
        pub truth: Option<PathBuf>,
        /// Ranked CSV.
        #[arg(long)]
        pub output: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        pub lambda_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        pub alpha0_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        pub beta0_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        pub delay_c_values: Option<Vec<usize>>,
        #[arg(long)]
        pub mu0: Option<f64>,
        #[arg(long)]
        pub kappa0: Option<f64>,
        #[arg(long)]
        pub model: Option<String>,
        #[arg(long)]
        pub truncation: Option<usize>,
        #[arg(long)]
        pub scheme: Option<String>,
        #[arg(long)]
        pub threshold_p: Option<f64>,
        #[arg(long)]
        pub dedup_margin: Option<usize>,
        #[arg(long)]
        pub margin: Option<usize>,
        #[arg(long)]
        pub difference: Option<bool>,
        #[arg(long)]
        pub scaling: Option<String>,
        #[arg(long)]
        pub calibration_fraction: Option<f64>,
    }
}

layered! {
    pub struct BenchArgs {
        /// Timing table CSV `T,model1_seconds,model2_seconds,ratio`.
        #[arg(long)]
        pub output: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        pub t_values: Option<Vec<usize>>,
        #[arg(long)]
        pub d: Option<usize>,
        #[arg(long)]
        pub truncation: Option<usize>,
        #[arg(long)]
        pub lambda: Option<f64>,
        #[arg(long)]
        pub alpha0: Option<f64>,
        #[arg(long)]
        pub beta0: Option<f64>,
        /// Each timing is the fastest of this many runs.
        #[arg(long)]
        pub repeats: Option<usize>,
        #[arg(long)]
        pub seed: Option<u64>,
    }
}

layered! {
    pub struct SimulateArgs {
        /// Series file.
        #[arg(long)]
        pub output: Option<PathBuf>,
        /// Truth CSV.
        #[arg(long)]
        pub truth: Option<PathBuf>,
        #[arg(long)]
        pub format: Option<String>,
        #[arg(long)]
        pub d: Option<usize>,
        #[arg(long)]
        pub segment_count: Option<usize>,
        /// fixed | geometric
        #[arg(long)]
        pub segment_law: Option<String>,
        /// Fixed length, or mean length of the geometric law.
        #[arg(long)]
        pub segment_length: Option<f64>,
        /// Mean jump per dimension in units of noise_sigma.
        #[arg(long)]
        pub mean_shift: Option<f64>,
        #[arg(long)]
        pub noise_sigma: Option<f64>,
        #[arg(long)]
        pub seed: Option<u64>,
    }
}

/// Parsed config file: one optional table per subcommand.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub detect: DetectArgs,
    pub predict_detect: PredictDetectArgs,
    pub evaluate: EvaluateArgs,
    pub gridsearch: GridsearchArgs,
    pub bench: BenchArgs,
    pub simulate: SimulateArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn required<T: Clone>(value: &Option<T>, key: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
}

fn parse_model(s: &str) -> Result<ModelKind> {
    match s {
        "factorized" => Ok(ModelKind::Factorized),
        "multivariate" => Ok(ModelKind::Multivariate),
        other => Err(Error::Config(format!("unknown model {other:?}"))),
    }
}

fn parse_scheme(s: &str, p: f64) -> Result<Scheme> {
    match s {
        "threshold" => Ok(Scheme::Threshold(p)),
        "max_prob" => Ok(Scheme::MaxProb),
        "map_set" => Ok(Scheme::MapSet),
        other => Err(Error::Config(format!("unknown scheme {other:?}"))),
    }
}

fn parse_scaling(s: &str) -> Result<Scaling> {
    match s {
        "z_score" => Ok(Scaling::ZScore),
        "literal" => Ok(Scaling::Literal),
        "none" => Ok(Scaling::None),
        other => Err(Error::Config(format!("unknown scaling {other:?}"))),
    }
}

fn format_for(format: &Option<String>, path: &Path) -> Result<SeriesFormat> {
    match format {
        Some(f) => f.parse(),
        None => Ok(SeriesFormat::from_path(path)),
    }
}

fn format_name(format: SeriesFormat) -> String {
    match format {
        SeriesFormat::Csv => "csv",
        SeriesFormat::Ndjson => "ndjson",
    }
    .to_string()
}

/// Write `args` as a single-table TOML file next to `output`.
fn echo_config<T: Serialize>(output: &Path, table: &str, args: &T) -> Result<()> {
    let mut doc = toml::Table::new();
    let value = toml::Table::try_from(args).map_err(|e| Error::Config(e.to_string()))?;
    doc.insert(table.to_string(), toml::Value::Table(value));
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    let mut path = output.as_os_str().to_owned();
    path.push(".config.toml");
    io::write_atomic(Path::new(&path), text.as_bytes())
}

const DEFAULT_LAMBDA: f64 = 10.0;
const DEFAULT_ALPHA0: f64 = 0.01;
const DEFAULT_BETA0: f64 = 0.1;
const DEFAULT_TRUNCATION: usize = 500;
const DEFAULT_MARGIN: usize = 5;

fn preprocess_config(
    difference: &Option<bool>,
    scaling: &Option<String>,
    calibration_fraction: &Option<f64>,
) -> Result<PreprocessConfig> {
    let defaults = PreprocessConfig::default();
    Ok(PreprocessConfig {
        difference: difference.unwrap_or(defaults.difference),
        scaling: scaling.as_deref().map_or(Ok(defaults.scaling), parse_scaling)?,
        calibration_fraction: calibration_fraction.unwrap_or(defaults.calibration_fraction),
    })
}

fn scaling_name(s: Scaling) -> String {
    match s {
        Scaling::ZScore => "z_score",
        Scaling::Literal => "literal",
        Scaling::None => "none",
    }
    .to_string()
}

impl DetectArgs {
    /// Fill every unset key with its default.
    pub fn resolve(&self) -> Result<Self> {
        let input = required(&self.input, "input")?;
        let pre = preprocess_config(&self.difference, &self.scaling, &self.calibration_fraction)?;
        Ok(Self {
            format: Some(format_name(format_for(&self.format, &input)?)),
            input: Some(input),
            output: Some(required(&self.output, "output")?),
            posterior: self.posterior.clone(),
            model: Some(self.model.clone().unwrap_or_else(|| "factorized".into())),
            lambda: Some(self.lambda.unwrap_or(DEFAULT_LAMBDA)),
            mu0: Some(self.mu0.unwrap_or(0.0)),
            kappa0: Some(self.kappa0.unwrap_or(1.0)),
            alpha0: Some(self.alpha0.unwrap_or(DEFAULT_ALPHA0)),
            beta0: Some(self.beta0.unwrap_or(DEFAULT_BETA0)),
            truncation: Some(self.truncation.unwrap_or(DEFAULT_TRUNCATION)),
            scheme: Some(self.scheme.clone().unwrap_or_else(|| "map_set".into())),
            threshold_p: Some(self.threshold_p.unwrap_or(0.5)),
            delay_c: Some(self.delay_c.unwrap_or(0)),
            dedup_margin: Some(self.dedup_margin.unwrap_or(DEFAULT_MARGIN)),
            difference: Some(pre.difference),
            scaling: Some(scaling_name(pre.scaling)),
            calibration_fraction: Some(pre.calibration_fraction),
        })
    }
}

/// Resolved `detect` run: engine settings plus preprocessing.
fn detect_engine_config(args: &DetectArgs, d: usize) -> Result<EngineConfig> {
    let model = parse_model(args.model.as_deref().unwrap_or("factorized"))?.build(
        d,
        args.mu0.unwrap_or(0.0),
        args.kappa0.unwrap_or(1.0),
        args.alpha0.unwrap_or(DEFAULT_ALPHA0),
        args.beta0.unwrap_or(DEFAULT_BETA0),
    )?;
    let scheme = parse_scheme(
        args.scheme.as_deref().unwrap_or("map_set"),
        args.threshold_p.unwrap_or(0.5),
    )?;
    Ok(EngineConfig::new(
        model,
        HazardSpec::new(args.lambda.unwrap_or(DEFAULT_LAMBDA))?,
        args.truncation.unwrap_or(DEFAULT_TRUNCATION),
        scheme,
        args.delay_c.unwrap_or(0),
    )?
    .with_dedup_margin(args.dedup_margin.unwrap_or(DEFAULT_MARGIN)))
}

fn read_input(input: &Path, format: &Option<String>) -> Result<Vec<Observation>> {
    let stream = io::read_series(input, format_for(format, input)?)?;
    if stream.is_empty() {
        return Err(Error::Degenerate(format!("{} holds no observations", input.display())));
    }
    Ok(stream)
}

/// Run `detect`; returns the detections written.
pub fn cmd_detect(args: &DetectArgs) -> Result<Vec<Detection>> {
    let args = args.resolve()?;
    let input = required(&args.input, "input")?;
    let output = required(&args.output, "output")?;
    let raw = read_input(&input, &args.format)?;
    let pre = preprocess_config(&args.difference, &args.scaling, &args.calibration_fraction)?;
    let stream = prepare(&raw, &pre)?;
    let mut engine = BocdEngine::new(detect_engine_config(&args, raw[0].dim())?)?;
    let mut detections = Vec::new();
    let mut history = Vec::new();
    if args.posterior.is_some() {
        history.push(engine.posterior().clone());
    }
    for z in &stream {
        if let Some(det) = engine.step(z)? {
            detections.push(det);
        }
        if args.posterior.is_some() {
            history.push(engine.posterior().clone());
        }
    }
    io::write_detections(&output, &detections)?;
    if let Some(path) = &args.posterior {
        io::write_posterior_matrix(path, &history)?;
    }
    echo_config(&output, "detect", &args)?;
    Ok(detections)
}

impl PredictDetectArgs {
    pub fn resolve(&self) -> Result<Self> {
        let input = required(&self.input, "input")?;
        let pre = preprocess_config(&self.difference, &self.scaling, &self.calibration_fraction)?;
        let k = self.k.unwrap_or(5);
        let predictor = self.predictor.clone().unwrap_or_else(|| "persistence".into());
        Ok(Self {
            format: Some(format_name(format_for(&self.format, &input)?)),
            input: Some(input),
            output: Some(required(&self.output, "output")?),
            scores: Some(required(&self.scores, "scores")?),
            ar_order: (predictor == "linear_ar").then(|| self.ar_order.unwrap_or(2)),
            predictions: match predictor.as_str() {
                "external" => Some(required(&self.predictions, "predictions")?),
                _ => None,
            },
            predictor: Some(predictor),
            k: Some(k),
            thr: Some(self.thr.unwrap_or(2.0)),
            refractory: Some(self.refractory.unwrap_or(k)),
            difference: Some(pre.difference),
            scaling: Some(scaling_name(pre.scaling)),
            calibration_fraction: Some(pre.calibration_fraction),
        })
    }

    fn predictor_spec(&self) -> Result<PredictorSpec> {
        let kind = match self.predictor.as_deref().unwrap_or("persistence") {
            "persistence" => PredictorKind::Persistence,
            "linear_ar" => PredictorKind::LinearAr {
                order: self.ar_order.unwrap_or(2),
            },
            "external" => PredictorKind::External {
                path: required(&self.predictions, "predictions")?,
            },
            other => return Err(Error::Config(format!("unknown predictor {other:?}"))),
        };
        Ok(PredictorSpec {
            kind,
            window_k: self.k.unwrap_or(5),
        })
    }
}

/// Run `predict-detect`; returns the detections written.
pub fn cmd_predict_detect(args: &PredictDetectArgs) -> Result<Vec<Detection>> {
    let args = args.resolve()?;
    let input = required(&args.input, "input")?;
    let output = required(&args.output, "output")?;
    let scores_path = required(&args.scores, "scores")?;
    let thr = required(&args.thr, "thr")?;
    if !thr.is_finite() {
        return Err(Error::Config(format!("thr must be finite, got {thr}")));
    }
    let raw = read_input(&input, &args.format)?;
    let pre = preprocess_config(&args.difference, &args.scaling, &args.calibration_fraction)?;
    let stream = prepare(&raw, &pre)?;
    let spec = args.predictor_spec()?;
    let n_cal = ((stream.len() as f64 * pre.calibration_fraction).floor() as usize).min(stream.len());
    let (calibration, rest) = stream.split_at(n_cal);
    let predictor = fit_predictor(&spec, calibration)?;
    let scores = score_stream(&predictor, rest, spec.window_k)?;
    let flagged = detect_by_threshold(&scores, thr, required(&args.refractory, "refractory")?);
    let detections: Vec<Detection> = flagged
        .times()
        .iter()
        .map(|&t| Detection {
            flagged_at: t,
            located_at: t,
            scheme: "predictor".into(),
        })
        .collect();
    io::write_scores(&scores_path, &scores)?;
    io::write_detections(&output, &detections)?;
    echo_config(&output, "predict_detect", &args)?;
    Ok(detections)
}

impl EvaluateArgs {
    pub fn resolve(&self) -> Result<Self> {
        Ok(Self {
            truth: Some(required(&self.truth, "truth")?),
            detections: Some(required(&self.detections, "detections")?),
            margin: Some(self.margin.unwrap_or(DEFAULT_MARGIN)),
            delay_c: Some(self.delay_c.unwrap_or(0)),
            output: self.output.clone(),
        })
    }
}

/// Run `evaluate`; returns the report JSON that is printed.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String> {
    let args = args.resolve()?;
    let truth = io::read_truth(&required(&args.truth, "truth")?)?;
    let detections = io::read_detections(&required(&args.detections, "detections")?)?;
    let located = ChangepointSet::from_unsorted(detections.iter().map(|d| d.located_at).collect());
    let delayed = apply_delay(&located, required(&args.delay_c, "delay_c")?);
    let report = margin_f_score(&truth, &delayed, required(&args.margin, "margin")?);
    let json = report.to_json();
    if let Some(path) = &args.output {
        io::write_atomic(path, format!("{json}\n").as_bytes())?;
        echo_config(path, "evaluate", &args)?;
    }
    Ok(json)
}

impl GridsearchArgs {
    pub fn resolve(&self) -> Result<Self> {
        let input = required(&self.input, "input")?;
        let pre = preprocess_config(&self.difference, &self.scaling, &self.calibration_fraction)?;
        let reference = GridSpec::reference();
        Ok(Self {
            format: Some(format_name(format_for(&self.format, &input)?)),
            input: Some(input),
            truth: Some(required(&self.truth, "truth")?),
            output: Some(required(&self.output, "output")?),
            lambda_values: Some(self.lambda_values.clone().unwrap_or(reference.lambda_values)),
            alpha0_values: Some(self.alpha0_values.clone().unwrap_or(reference.alpha0_values)),
            beta0_values: Some(self.beta0_values.clone().unwrap_or(reference.beta0_values)),
            delay_c_values: Some(self.delay_c_values.clone().unwrap_or(reference.delay_c_values)),
            mu0: Some(self.mu0.unwrap_or(reference.mu0)),
            kappa0: Some(self.kappa0.unwrap_or(reference.kappa0)),
            model: Some(self.model.clone().unwrap_or_else(|| reference.model.name().into())),
            truncation: Some(self.truncation.unwrap_or(reference.truncation)),
            scheme: Some(self.scheme.clone().unwrap_or_else(|| reference.scheme.name().into())),
            threshold_p: Some(self.threshold_p.unwrap_or(0.5)),
            dedup_margin: Some(self.dedup_margin.unwrap_or(reference.dedup_margin)),
            margin: Some(self.margin.unwrap_or(DEFAULT_MARGIN)),
            difference: Some(pre.difference),
            scaling: Some(scaling_name(pre.scaling)),
            calibration_fraction: Some(pre.calibration_fraction),
        })
    }

    fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec {
            lambda_values: required(&self.lambda_values, "lambda_values")?,
            alpha0_values: required(&self.alpha0_values, "alpha0_values")?,
            beta0_values: required(&self.beta0_values, "beta0_values")?,
            delay_c_values: required(&self.delay_c_values, "delay_c_values")?,
            mu0: required(&self.mu0, "mu0")?,
            kappa0: required(&self.kappa0, "kappa0")?,
            model: parse_model(&required(&self.model, "model")?)?,
            truncation: required(&self.truncation, "truncation")?,
            scheme: parse_scheme(&required(&self.scheme, "scheme")?, required(&self.threshold_p, "threshold_p")?)?,
            dedup_margin: required(&self.dedup_margin, "dedup_margin")?,
        })
    }
}

/// Run `gridsearch`; returns the ranked CSV text that is written.
pub fn cmd_gridsearch(args: &GridsearchArgs) -> Result<String> {
    let args = args.resolve()?;
    let input = required(&args.input, "input")?;
    let output = required(&args.output, "output")?;
    let raw = read_input(&input, &args.format)?;
    let truth = io::read_truth(&required(&args.truth, "truth")?)?;
    let pre = preprocess_config(&args.difference, &args.scaling, &args.calibration_fraction)?;
    let stream = prepare(&raw, &pre)?;
    let results = grid_search(&args.grid()?, &stream, &truth, required(&args.margin, "margin")?)?;
    let mut csv = String::from("rank,lambda,alpha0,beta0,delay_c,precision,recall,f_score,error\n");
    for (rank, r) in results.iter().enumerate() {
        let c = &r.cell;
        let _ = write!(
            csv,
            "{},{},{},{},{},",
            rank + 1,
            io::format_f64(c.lambda),
            io::format_f64(c.alpha0),
            io::format_f64(c.beta0),
            c.delay_c
        );
        match &r.outcome {
            Ok(rep) => {
                let _ = writeln!(csv, "{:.6},{:.6},{:.6},", rep.precision, rep.recall, rep.f_score);
            }
            Err(e) => {
                let _ = writeln!(csv, ",,,\"{}\"", e.to_string().replace('"', "'"));
            }
        }
    }
    io::write_atomic(&output, csv.as_bytes())?;
    echo_config(&output, "gridsearch", &args)?;
    Ok(csv)
}

/// One row of the timing table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub t: usize,
    pub model1_seconds: f64,
    pub model2_seconds: f64,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.model2_seconds / self.model1_seconds
    }
}

impl BenchArgs {
    pub fn resolve(&self) -> Result<Self> {
        Ok(Self {
            output: self.output.clone(),
            t_values: Some(self.t_values.clone().unwrap_or_else(|| vec![1000, 2000, 3000, 4000])),
            d: Some(self.d.unwrap_or(4)),
            truncation: Some(self.truncation.unwrap_or(DEFAULT_TRUNCATION)),
            lambda: Some(self.lambda.unwrap_or(DEFAULT_LAMBDA)),
            alpha0: Some(self.alpha0.unwrap_or(DEFAULT_ALPHA0)),
            beta0: Some(self.beta0.unwrap_or(DEFAULT_BETA0)),
            repeats: Some(self.repeats.unwrap_or(5).max(1)),
            seed: Some(self.seed.unwrap_or(1)),
        })
    }
}

/// Engine-step wall time over `stream`, checking the posterior stays
/// normalized after every step (outside the timed region).
fn time_engine(config: &EngineConfig, stream: &[Observation]) -> Result<Duration> {
    let mut engine = BocdEngine::new(config.clone())?;
    let mut total = Duration::ZERO;
    for z in stream {
        let start = Instant::now();
        engine.step(z)?;
        total += start.elapsed();
        let norm = engine.posterior().log_normalizer();
        if norm.abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "posterior log-normalizer {norm:e} at t={}",
                z.t
            )));
        }
    }
    Ok(total)
}

/// Time both models on prefixes of one synthetic stream.
pub fn run_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let args = args.resolve()?;
    let t_values = required(&args.t_values, "t_values")?;
    let d = required(&args.d, "d")?;
    let max_t = t_values.iter().copied().max().unwrap_or(0);
    if max_t == 0 {
        return Err(Error::Config("t_values must hold a positive length".into()));
    }
    let mut spec = SyntheticSpec {
        d,
        segment_count: max_t / 100 + 2,
        segment_length: SegmentLength::Geometric(100.0),
        mean_shift: 5.0,
        noise_sigma: 1.0,
        seed: required(&args.seed, "seed")?,
    };
    let stream = loop {
        let s = generate(&spec)?;
        if s.observations.len() >= max_t {
            break s.observations;
        }
        spec.segment_count *= 2;
    };
    let alpha0 = required(&args.alpha0, "alpha0")?;
    let beta0 = required(&args.beta0, "beta0")?;
    let config = |kind: ModelKind| -> Result<EngineConfig> {
        EngineConfig::new(
            kind.build(d, 0.0, 1.0, alpha0, beta0)?,
            HazardSpec::new(required(&args.lambda, "lambda")?)?,
            required(&args.truncation, "truncation")?,
            Scheme::MapSet,
            0,
        )
    };
    let (m1, m2) = (config(ModelKind::Factorized)?, config(ModelKind::Multivariate)?);
    let repeats = required(&args.repeats, "repeats")?;
    let fastest = |cfg: &EngineConfig, t: usize| -> Result<f64> {
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            best = best.min(time_engine(cfg, &stream[..t])?.as_secs_f64());
        }
        Ok(best)
    };
    t_values
        .iter()
        .map(|&t| {
            Ok(BenchRow {
                t,
                model1_seconds: fastest(&m1, t)?,
                model2_seconds: fastest(&m2, t)?,
            })
        })
        .collect()
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("T,model1_seconds,model2_seconds,ratio\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.2}", r.t, r.model1_seconds, r.model2_seconds, r.ratio());
    }
    s
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<Self> {
        let output = required(&self.output, "output")?;
        Ok(Self {
            format: Some(format_name(format_for(&self.format, &output)?)),
            output: Some(output),
            truth: Some(required(&self.truth, "truth")?),
            d: Some(self.d.unwrap_or(4)),
            segment_count: Some(self.segment_count.unwrap_or(20)),
            segment_law: Some(self.segment_law.clone().unwrap_or_else(|| "geometric".into())),
            segment_length: Some(self.segment_length.unwrap_or(100.0)),
            mean_shift: Some(self.mean_shift.unwrap_or(5.0)),
            noise_sigma: Some(self.noise_sigma.unwrap_or(1.0)),
            seed: Some(self.seed.unwrap_or(0)),
        })
    }

    pub fn spec(&self) -> Result<SyntheticSpec> {
        let length = self.segment_length.unwrap_or(100.0);
        let segment_length = match self.segment_law.as_deref().unwrap_or("geometric") {
            "geometric" => SegmentLength::Geometric(length),
            "fixed" if length >= 1.0 && length.fract() == 0.0 => SegmentLength::Fixed(length as usize),
            "fixed" => return Err(Error::Config(format!("fixed segment length must be a positive integer, got {length}"))),
            other => return Err(Error::Config(format!("unknown segment law {other:?}"))),
        };
        Ok(SyntheticSpec {
            d: self.d.unwrap_or(4),
            segment_count: self.segment_count.unwrap_or(20),
            segment_length,
            mean_shift: self.mean_shift.unwrap_or(5.0),
            noise_sigma: self.noise_sigma.unwrap_or(1.0),
            seed: self.seed.unwrap_or(0),
        })
    }
}

/// Run `simulate`; returns the number of observations and changepoints.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<(usize, usize)> {
    let args = args.resolve()?;
    let output = required(&args.output, "output")?;
    let stream = generate(&args.spec()?)?;
    let format = format_for(&args.format, &output)?;
    io::write_series(&output, &stream.observations, format)?;
    io::write_truth(&required(&args.truth, "truth")?, &stream.truth)?;
    echo_config(&output, "simulate", &args)?;
    Ok((stream.observations.len(), stream.truth.len()))
}

/// Dispatch a parsed command line; prints results to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Detect(a) => {
            let dets = cmd_detect(&a.or(file.detect))?;
            println!("detections: {}", dets.len());
        }
        Command::PredictDetect(a) => {
            let dets = cmd_predict_detect(&a.or(file.predict_detect))?;
            println!("detections: {}", dets.len());
        }
        Command::Evaluate(a) => println!("{}", cmd_evaluate(&a.or(file.evaluate))?),
        Command::Gridsearch(a) => {
            let csv = cmd_gridsearch(&a.or(file.gridsearch))?;
            if let Some(best) = csv.lines().nth(1) {
                println!("best: {best}");
            }
        }
        Command::Bench(a) => {
            let args = a.or(file.bench).resolve()?;
            let rows = run_bench(&args)?;
            for r in &rows {
                println!(
                    "T={} model1={:.4}s model2={:.4}s ratio={:.1}",
                    r.t,
                    r.model1_seconds,
                    r.model2_seconds,
                    r.ratio()
                );
            }
            if let Some(out) = &args.output {
                io::write_atomic(out, bench_to_csv(&rows).as_bytes())?;
                echo_config(out, "bench", &args)?;
            }
        }
        Command::Simulate(a) => {
            let (n, k) = cmd_simulate(&a.or(file.simulate))?;
            println!("observations: {n}, changepoints: {k}");
        }
    }
    Ok(())
}

/// Binary entry point.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
