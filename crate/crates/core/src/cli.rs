//! Command-line front end: identification, trial simulation and recording
//! analysis, each writing CSV/JSON (and optionally SVG) into an output
//! directory.

use crate::config::{ConfigError, RunConfig};
use crate::controller::{DirectionalRegression, TensionController};
use crate::exec::Exec;
use crate::identification::identify_with;
use crate::metrics::{
    emg_envelope, iemg, normalize_and_average, reference_peak, sparc, trial_metrics, MetricsConfig, PhaseSplitStat,
    TrialMetrics,
};
use crate::plantsim::{run_identification_protocol, run_trial_grid, TrialCondition, TrialLog};
use crate::plot::{Plot, Series};
use crate::transmission::Direction;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "bowden-exo", version, about = "Bowden-cable tension control: identify, simulate, evaluate")]
pub struct Cli {
    /// Overrides rng_seed from the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run on one thread
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Also write SVG plots
    #[arg(long, global = true)]
    pub svg: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the mannequin identification protocol and fit the directional lines
    Identify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the speed x support trial grid with an identified regression
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// regression.json from `identify`; defaults to the lines in the controller block
        #[arg(long)]
        regression: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Envelopes, iEMG and SPARC of recorded channels
    Metrics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        recordings: PathBuf,
        /// No-suit recording whose mean envelope peaks normalise each channel
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses arguments from the process and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("wrote {}", out.display());
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Runs one command, returning the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let (config, out) = match &cli.command {
        Command::Identify { config, out } => (config, out),
        Command::Simulate { config, out, .. } => (config, out),
        Command::Metrics { config, out, .. } => (config, out),
    };
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    let out = out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| ConfigError {
            path: "output_dir".into(),
            message: "no --out given and no output_dir in the config".into(),
        })?;
    fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let ctx = Context { cfg, out, exec, svg: cli.svg };
    match &cli.command {
        Command::Identify { .. } => cmd_identify(&ctx)?,
        Command::Simulate { regression, .. } => cmd_simulate(&ctx, regression.as_deref())?,
        Command::Metrics {
            recordings, reference, ..
        } => cmd_metrics(&ctx, recordings, reference.as_deref())?,
    }
    Ok(ctx.out)
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    exec: Exec,
    svg: bool,
}

impl Context {
    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.write(name, text)
    }

    fn write_effective_config(&self) -> Result<(), CliError> {
        let mut text = self.cfg.to_json();
        text.push('\n');
        self.write("run_config.json", text)
    }
}

/// Comma-joined row, floats in shortest round-trip form.
fn csv_line(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Evenly thinned copy for plotting.
fn thin<T: Copy>(x: &[T], max: usize) -> Vec<T> {
    let step = x.len().div_ceil(max.max(1)).max(1);
    x.iter().step_by(step).copied().collect()
}

#[derive(Serialize)]
struct SampleCounts {
    total: usize,
    raising: usize,
    lowering: usize,
}

#[derive(Serialize)]
struct AnalyticSlopes {
    m_raise: f64,
    m_lower: f64,
}

#[derive(Serialize)]
struct IdentifySummary {
    regression: DirectionalRegression,
    raising: crate::identification::FitResult,
    lowering: crate::identification::FitResult,
    samples: SampleCounts,
    /// Inverse slopes of the configured transmission
    analytic: AnalyticSlopes,
    infeasible: Vec<crate::plantsim::InfeasibleCondition>,
    seed: u64,
}

fn cmd_identify(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let model = cfg.model();
    let run = run_identification_protocol(&model, &cfg.plant, &cfg.protocol.identification, cfg.rng_seed, ctx.exec)
        .map_err(runtime)?;
    let ident = identify_with(&run.log, &cfg.protocol.steady_state, &cfg.protocol.lowpass, ctx.exec).map_err(runtime)?;

    let mut log_csv = Vec::new();
    run.log.write_csv(&mut log_csv).map_err(runtime)?;
    ctx.write("sample_log.csv", log_csv)?;
    ctx.write_json("regression.json", &ident.regression)?;

    let summary = IdentifySummary {
        regression: ident.regression,
        raising: ident.raising,
        lowering: ident.lowering,
        samples: SampleCounts {
            total: run.log.len(),
            raising: ident.selection.raising.len(),
            lowering: ident.selection.lowering.len(),
        },
        analytic: AnalyticSlopes {
            m_raise: model.inverse_slope(Direction::Raising),
            m_lower: model.inverse_slope(Direction::Lowering),
        },
        infeasible: run.infeasible.clone(),
        seed: cfg.rng_seed,
    };
    ctx.write_json("regression_summary.json", &summary)?;

    let mut scatter = String::from("direction,tension_n,torque_nm,fit_torque_nm\n");
    let mut plot = Plot::new("Identified transmission", "output tension [N]", "motor torque [Nm]");
    for direction in [Direction::Raising, Direction::Lowering] {
        let points = ident.selection.points(&ident.filtered, direction);
        for &(t, q) in &points {
            let fit = ident.regression.line(direction, t);
            scatter.push_str(&csv_line(&[direction.to_string(), num(t), num(q), num(fit)]));
        }
        if ctx.svg && !points.is_empty() {
            let shown = thin(&points, 1500);
            plot.series.push(Series::points(
                direction.as_str(),
                shown.iter().map(|p| p.0).collect(),
                shown.iter().map(|p| p.1).collect(),
            ));
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
            plot.series.push(Series::line(
                &format!("{direction} fit"),
                vec![lo, hi],
                vec![ident.regression.line(direction, lo), ident.regression.line(direction, hi)],
            ));
        }
    }
    ctx.write("scatter.csv", scatter)?;
    if ctx.svg {
        ctx.write("scatter.svg", plot.to_svg())?;
    }
    ctx.write_effective_config()
}

fn load_regression(ctx: &Context, path: Option<&Path>) -> Result<DirectionalRegression, CliError> {
    let reg = match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ConfigError {
                path: "regression".into(),
                message: format!("{}: {e}", path.display()),
            })?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, DirectionalRegression>(de).map_err(|e| ConfigError {
                path: format!("regression.{}", e.path()),
                message: e.into_inner().to_string(),
            })?
        }
        None => ctx.cfg.regression().ok_or_else(|| ConfigError {
            path: "regression".into(),
            message: "no --regression file and no m_raise/b_raise/m_lower/b_lower in the controller block".into(),
        })?,
    };
    reg.validate().map_err(|e| ConfigError {
        path: "regression".into(),
        message: e.to_string(),
    })?;
    Ok(reg)
}

/// File-name stem of a grid cell, e.g. `120dps_25pct`.
pub fn condition_stem(peak_speed_deg_s: f64, label: &str) -> String {
    let label: String = label
        .replace('%', "pct")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{}dps_{label}", num(peak_speed_deg_s))
}

pub const METRICS_TABLE_HEADER: [&str; 20] = [
    "peak_speed_deg_s",
    "support",
    "support_fraction",
    "tension_rmse_entire_n",
    "tension_rmse_raise_n",
    "tension_rmse_lower_n",
    "torque_rmse_entire_nm",
    "torque_rmse_raise_nm",
    "torque_rmse_lower_nm",
    "tension_pct_rmse_entire",
    "tension_pct_rmse_raise",
    "tension_pct_rmse_lower",
    "torque_pct_rmse_entire",
    "torque_pct_rmse_raise",
    "torque_pct_rmse_lower",
    "angle_rmse_deg",
    "sparc",
    "peak_error_time",
    "repetitions",
    "seed",
];

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub peak_speed_deg_s: f64,
    pub support: String,
    pub support_fraction: f64,
    #[serde(flatten)]
    pub metrics: TrialMetrics,
}

fn split_cells(s: &PhaseSplitStat) -> [String; 3] {
    [num(s.entire), num(s.raising), num(s.lowering)]
}

/// Table rows for a simulated grid, in grid order.
pub fn metrics_rows(conditions: &[TrialCondition], cfg: &MetricsConfig, exec: Exec) -> Result<Vec<MetricsRow>, CliError> {
    let metrics = exec.map(conditions, |c| trial_metrics(&c.log, cfg));
    conditions
        .iter()
        .zip(metrics)
        .map(|(c, m)| {
            let m = m.map_err(|e| runtime(format!("{}: {e}", condition_stem(c.peak_speed_deg_s, &c.support.label))))?;
            Ok(MetricsRow {
                peak_speed_deg_s: c.peak_speed_deg_s,
                support: c.support.label.clone(),
                support_fraction: c.support.support_fraction,
                metrics: m,
            })
        })
        .collect()
}

pub fn metrics_table_csv(rows: &[MetricsRow], seed: u64) -> String {
    let mut out = csv_line(&METRICS_TABLE_HEADER.map(String::from));
    for r in rows {
        let m = &r.metrics;
        let mut fields = vec![num(r.peak_speed_deg_s), r.support.clone(), num(r.support_fraction)];
        fields.extend(split_cells(&m.tension_rmse));
        fields.extend(split_cells(&m.torque_rmse));
        fields.extend(split_cells(&m.tension_percentage_rmse));
        fields.extend(split_cells(&m.torque_percentage_rmse));
        fields.extend([
            num(m.angle_rmse_deg),
            num(m.sparc),
            num(m.peak_error_time),
            m.repetitions.to_string(),
            seed.to_string(),
        ]);
        out.push_str(&csv_line(&fields));
    }
    out
}

/// Normalised-time mean and sd of the desired and applied tension and the angle.
fn averaged_traces(log: &TrialLog, cfg: &MetricsConfig) -> Option<(String, Plot)> {
    let ranges = log.repetition_ranges();
    let pick = |x: &[f64], scale: f64| -> Vec<Vec<f64>> {
        ranges.iter().map(|r| x[r.clone()].iter().map(|v| v * scale).collect()).collect()
    };
    let avg = |x: &[f64], scale: f64| normalize_and_average(&pick(x, scale), cfg.resample_points, cfg.drop_first).ok();
    let desired = avg(&log.desired_tension, 1.0)?;
    let applied = avg(&log.applied_tension, 1.0)?;
    let theta = avg(&log.theta, 1f64.to_degrees())?;
    let mut csv = String::from(
        "normalized_time,desired_tension_mean_n,desired_tension_sd_n,applied_tension_mean_n,applied_tension_sd_n,theta_mean_deg,theta_sd_deg\n",
    );
    for j in 0..desired.time.len() {
        csv.push_str(&csv_line(&[
            num(desired.time[j]),
            num(desired.mean[j]),
            num(desired.sd[j]),
            num(applied.mean[j]),
            num(applied.sd[j]),
            num(theta.mean[j]),
            num(theta.sd[j]),
        ]));
    }
    let plot = Plot::new("Mean tension over a repetition", "normalized time", "tension [N]")
        .with(Series::line("desired", desired.time.clone(), desired.mean))
        .with(Series::line("applied", applied.time, applied.mean));
    Some((csv, plot))
}

fn cmd_simulate(ctx: &Context, regression: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let reg = load_regression(ctx, regression)?;
    let controller = TensionController::new(cfg.assist(), reg, cfg.blend()).map_err(|e| ConfigError {
        path: "controller".into(),
        message: e.to_string(),
    })?;
    let conditions = run_trial_grid(
        &controller,
        &cfg.model(),
        &cfg.plant,
        &cfg.protocol.trial,
        cfg.rng_seed,
        ctx.exec,
    )
    .map_err(runtime)?;
    let rows = metrics_rows(&conditions, &cfg.metrics, ctx.exec)?;

    let logs = ctx.exec.map(&conditions, |c| {
        let mut buf = Vec::new();
        c.log.write_csv(&mut buf).map(|_| buf)
    });
    let traces = ctx.exec.map(&conditions, |c| averaged_traces(&c.log, &cfg.metrics));
    for ((c, log), trace) in conditions.iter().zip(logs).zip(traces) {
        let stem = condition_stem(c.peak_speed_deg_s, &c.support.label);
        ctx.write(&format!("trials/{stem}.csv"), log.map_err(runtime)?)?;
        if let Some((csv, mut plot)) = trace {
            ctx.write(&format!("averages/{stem}.csv"), csv)?;
            if ctx.svg {
                plot.title = format!("{} deg/s, {}", num(c.peak_speed_deg_s), c.support.label);
                ctx.write(&format!("averages/{stem}.svg"), plot.to_svg())?;
            }
        }
    }
    ctx.write("metrics_table.csv", metrics_table_csv(&rows, cfg.rng_seed))?;
    ctx.write_json("metrics_table.json", &rows)?;
    ctx.write_json("regression.json", &reg)?;
    ctx.write_effective_config()
}

/// Multichannel recording: time first, optional `repetition` and `phase`
/// columns, everything else a signal channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sample_rate: f64,
    pub time: Vec<f64>,
    pub repetition: Option<Vec<i64>>,
    pub phase: Option<Vec<Direction>>,
    pub channels: Vec<(String, Vec<f64>)>,
}

impl Recording {
    pub fn read_csv(path: &Path) -> Result<Self, CliError> {
        let file = fs::File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: std::io::Read>(reader: R, name: &str) -> Result<Self, CliError> {
        let err = |msg: String| runtime(format!("{name}: {msg}"));
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| err(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.len() < 2 {
            return Err(err("need a time column and at least one channel".into()));
        }
        for (i, h) in headers.iter().enumerate() {
            if h.is_empty() {
                return Err(err(format!("column {} has an empty name", i + 1)));
            }
            if headers[..i].contains(h) {
                return Err(err(format!("column {} duplicates the name '{h}'", i + 1)));
            }
        }
        let rep_col = headers.iter().position(|h| h == "repetition");
        let phase_col = headers.iter().position(|h| h == "phase");
        if rep_col == Some(0) || phase_col == Some(0) {
            return Err(err("first column must be time in seconds".into()));
        }
        let channel_cols: Vec<usize> = (1..headers.len()).filter(|&i| Some(i) != rep_col && Some(i) != phase_col).collect();
        if channel_cols.is_empty() {
            return Err(err("no signal channels".into()));
        }

        let mut time = Vec::new();
        let mut reps = Vec::new();
        let mut phases = Vec::new();
        let mut data: Vec<Vec<f64>> = vec![Vec::new(); channel_cols.len()];
        for (row, record) in rdr.records().enumerate() {
            // header is line 1
            let line = row + 2;
            let record = record.map_err(|e| err(format!("line {line}: {e}")))?;
            if record.len() != headers.len() {
                return Err(err(format!(
                    "line {line}: {} fields, header has {}",
                    record.len(),
                    headers.len()
                )));
            }
            let number = |col: usize| -> Result<f64, CliError> {
                let cell = &record[col];
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("line {line}, column '{}': '{cell}' is not a finite number", headers[col])))
            };
            time.push(number(0)?);
            if let Some(c) = rep_col {
                let cell = &record[c];
                reps.push(
                    cell.parse::<i64>()
                        .map_err(|_| err(format!("line {line}, column 'repetition': '{cell}' is not an integer")))?,
                );
            }
            if let Some(c) = phase_col {
                let cell = &record[c];
                phases.push(match cell.to_ascii_lowercase().as_str() {
                    "raising" | "raise" => Direction::Raising,
                    "lowering" | "lower" => Direction::Lowering,
                    _ => {
                        return Err(err(format!(
                            "line {line}, column 'phase': '{cell}' is not raising or lowering"
                        )))
                    }
                });
            }
            for (k, &c) in channel_cols.iter().enumerate() {
                data[k].push(number(c)?);
            }
        }
        if time.len() < 2 {
            return Err(err("need at least two rows".into()));
        }
        let sample_rate = crate::dsp::infer_sample_rate(&time)
            .ok_or_else(|| err(format!("column '{}': time must increase strictly", headers[0])))?;
        Ok(Recording {
            sample_rate,
            time,
            repetition: rep_col.map(|_| reps),
            phase: phase_col.map(|_| phases),
            channels: channel_cols.iter().map(|&c| headers[c].clone()).zip(data).collect(),
        })
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Contiguous runs of equal repetition index, or the whole recording.
    #[allow(clippy::single_range_in_vec_init)]
    pub fn repetition_ranges(&self) -> Vec<Range<usize>> {
        let Some(reps) = &self.repetition else {
            return vec![0..self.time.len()];
        };
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=reps.len() {
            if i == reps.len() || reps[i] != reps[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Repetitions used for analysis.
    fn kept_ranges(&self, drop_first: bool) -> Result<Vec<Range<usize>>, CliError> {
        let ranges = self.repetition_ranges();
        let drop = usize::from(drop_first && self.repetition.is_some());
        let total = ranges.len();
        let kept: Vec<_> = ranges.into_iter().skip(drop).collect();
        if kept.is_empty() {
            return Err(runtime(format!("need at least {} repetitions, got {total}", drop + 1)));
        }
        Ok(kept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelIemg {
    pub channel: String,
    pub entire: f64,
    pub raising: Option<f64>,
    pub lowering: Option<f64>,
    /// Divisor applied to the envelope before averaging
    pub normalization: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSparc {
    pub channel: String,
    pub sparc: f64,
    pub per_repetition: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingAnalysis {
    pub envelopes: Vec<(String, Vec<f64>)>,
    pub iemg: Vec<ChannelIemg>,
    pub sparc: Vec<ChannelSparc>,
}

fn emg_channels<'a>(rec: &'a Recording, cfg: &'a MetricsConfig) -> impl Iterator<Item = &'a (String, Vec<f64>)> + 'a {
    rec.channels.iter().filter(|(n, _)| !cfg.speed_channels.contains(n))
}

/// Per channel, the mean over kept repetitions of the envelope peak.
pub fn reference_peaks(reference: &Recording, cfg: &MetricsConfig, exec: Exec) -> Result<Vec<(String, f64)>, CliError> {
    let kept = reference.kept_ranges(cfg.drop_first)?;
    let channels: Vec<_> = emg_channels(reference, cfg).collect();
    let peaks = exec.map(&channels, |(name, raw)| {
        let env = emg_envelope(raw, reference.sample_rate, &cfg.envelope)?;
        let reps: Vec<&[f64]> = kept.iter().map(|r| &env[r.clone()]).collect();
        reference_peak(&reps).map(|p| (name.clone(), p))
    });
    peaks
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| runtime(format!("reference: {e}")))
}

/// Envelopes, iEMG and SPARC of a recording.
pub fn analyze_recording(
    rec: &Recording,
    cfg: &MetricsConfig,
    normalization: Option<&[(String, f64)]>,
    exec: Exec,
) -> Result<RecordingAnalysis, CliError> {
    for name in &cfg.speed_channels {
        if rec.channel(name).is_none() {
            return Err(runtime(format!("speed channel '{name}' is not a column of the recording")));
        }
    }
    let kept = rec.kept_ranges(cfg.drop_first)?;
    let channels: Vec<_> = emg_channels(rec, cfg).collect();
    let scales = channels
        .iter()
        .map(|(name, _)| match normalization {
            None => Ok(1.0),
            Some(peaks) => peaks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, p)| *p)
                .ok_or_else(|| runtime(format!("channel '{name}' is missing from the reference recording"))),
        })
        .collect::<Result<Vec<f64>, _>>()?;

    let results = exec.map(&channels, |(name, raw)| -> Result<_, CliError> {
        let scale = scales[channels.iter().position(|(n, _)| n == name).expect("own channel")];
        let env: Vec<f64> = emg_envelope(raw, rec.sample_rate, &cfg.envelope)
            .map_err(|e| runtime(format!("channel '{name}': {e}")))?
            .into_iter()
            .map(|v| v / scale)
            .collect();
        let mut sum = [0.0; 3];
        for r in &kept {
            let seg = &env[r.clone()];
            match &rec.phase {
                Some(phases) => {
                    let s = iemg(seg, &phases[r.clone()]).map_err(|e| runtime(format!("channel '{name}': {e}")))?;
                    sum[0] += s.entire;
                    sum[1] += s.raising;
                    sum[2] += s.lowering;
                }
                None => sum[0] += seg.iter().sum::<f64>() / seg.len() as f64,
            }
        }
        let k = kept.len() as f64;
        let has_phase = rec.phase.is_some();
        let stat = ChannelIemg {
            channel: name.clone(),
            entire: sum[0] / k,
            raising: has_phase.then(|| sum[1] / k),
            lowering: has_phase.then(|| sum[2] / k),
            normalization: scale,
            repetitions: kept.len(),
        };
        Ok(((name.clone(), env), stat))
    });
    let mut envelopes = Vec::new();
    let mut iemgs = Vec::new();
    for r in results {
        let (env, stat) = r?;
        envelopes.push(env);
        iemgs.push(stat);
    }

    let mut sparcs = Vec::new();
    for name in &cfg.speed_channels {
        let speed = rec.channel(name).expect("checked above");
        let per_repetition = kept
            .iter()
            .map(|r| {
                let mag: Vec<f64> = speed[r.clone()].iter().map(|v| v.abs()).collect();
                sparc(&mag, rec.sample_rate, &cfg.sparc).map_err(|e| runtime(format!("channel '{name}': {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        sparcs.push(ChannelSparc {
            channel: name.clone(),
            sparc: per_repetition.iter().sum::<f64>() / per_repetition.len() as f64,
            per_repetition,
        });
    }
    Ok(RecordingAnalysis {
        envelopes,
        iemg: iemgs,
        sparc: sparcs,
    })
}

fn cmd_metrics(ctx: &Context, recordings: &Path, reference: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.cfg.metrics;
    let rec = Recording::read_csv(recordings)?;
    cfg.envelope.validate(rec.sample_rate).map_err(|e| ConfigError {
        path: "metrics.envelope".into(),
        message: format!("{e} (recording sampled at {} Hz)", num(rec.sample_rate)),
    })?;
    let peaks = match reference {
        Some(path) => Some(reference_peaks(&Recording::read_csv(path)?, cfg, ctx.exec)?),
        None => None,
    };
    let analysis = analyze_recording(&rec, cfg, peaks.as_deref(), ctx.exec)?;

    let mut header = vec!["t_s".to_string()];
    if rec.repetition.is_some() {
        header.push("repetition".into());
    }
    if rec.phase.is_some() {
        header.push("phase".into());
    }
    header.extend(analysis.envelopes.iter().map(|(n, _)| n.clone()));
    let mut env_csv = csv_line(&header);
    for i in 0..rec.time.len() {
        let mut row = vec![num(rec.time[i])];
        if let Some(r) = &rec.repetition {
            row.push(r[i].to_string());
        }
        if let Some(p) = &rec.phase {
            row.push(p[i].to_string());
        }
        row.extend(analysis.envelopes.iter().map(|(_, e)| num(e[i])));
        env_csv.push_str(&csv_line(&row));
    }
    ctx.write("envelopes.csv", env_csv)?;

    let mut iemg_csv = String::from("channel,entire,raising,lowering,normalization,repetitions\n");
    for s in &analysis.iemg {
        iemg_csv.push_str(&csv_line(&[
            s.channel.clone(),
            num(s.entire),
            opt(s.raising),
            opt(s.lowering),
            num(s.normalization),
            s.repetitions.to_string(),
        ]));
    }
    ctx.write("iemg.csv", iemg_csv)?;
    ctx.write_json("iemg.json", &analysis.iemg)?;
    ctx.write_json("sparc.json", &analysis.sparc)?;

    // normalised-time averages need at least two kept repetitions
    let kept = rec.kept_ranges(cfg.drop_first)?;
    if kept.len() >= 2 && !analysis.envelopes.is_empty() {
        let mut cols = vec!["normalized_time".to_string()];
        let mut averages = Vec::new();
        for (name, env) in &analysis.envelopes {
            let reps: Vec<&[f64]> = kept.iter().map(|r| &env[r.clone()]).collect();
            let avg = normalize_and_average(&reps, cfg.resample_points, false).map_err(runtime)?;
            cols.push(format!("{name}_mean"));
            cols.push(format!("{name}_sd"));
            averages.push(avg);
        }
        let mut csv = csv_line(&cols);
        for j in 0..cfg.resample_points {
            let mut row = vec![num(averages[0].time[j])];
            for a in &averages {
                row.push(num(a.mean[j]));
                row.push(num(a.sd[j]));
            }
            csv.push_str(&csv_line(&row));
        }
        ctx.write("envelope_average.csv", csv)?;
        if ctx.svg {
            let mut plot = Plot::new("Mean envelope over a repetition", "normalized time", "envelope");
            for ((name, _), a) in analysis.envelopes.iter().zip(&averages) {
                plot.series.push(Series::line(name, a.time.clone(), a.mean.clone()));
            }
            ctx.write("envelope_average.svg", plot.to_svg())?;
        }
    }
    ctx.write_effective_config()
}
