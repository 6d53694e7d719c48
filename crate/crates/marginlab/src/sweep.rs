//! Seeded parameter sweeps: a grid over model parameters, repeated trials
//! with deterministic per-trial seeds, CSV emission at full precision and
//! self-contained SVG line plots of grid-point means.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::ls_interpolator;
use crate::error::{Error, Result};
use crate::events::{em_event_parameters, event_report};
use crate::geometry::clean_noisy_decomposition;
use crate::model::{sample_dataset, GLaw, ModelSpec, MuSpec, SigmaSpec};
use crate::risk::{
    predicted_zeta_sq, risk_bounds, test_error_exact_spec, test_error_mc, zeta, Regime,
};
use crate::rng;

/// A sweepable parameter of the model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ParamPath {
    MuNorm,
    P,
    N,
    Eta,
    LambdaMax,
    LambdaMin,
    GParam,
}

impl ParamPath {
    pub fn name(&self) -> &'static str {
        match self {
            ParamPath::MuNorm => "mu_norm",
            ParamPath::P => "p",
            ParamPath::N => "n",
            ParamPath::Eta => "eta",
            ParamPath::LambdaMax => "lambda_max",
            ParamPath::LambdaMin => "lambda_min",
            ParamPath::GParam => "g_param",
        }
    }
}

/// One sweep axis: a parameter and its value grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Axis {
    pub parameter: ParamPath,
    pub values: Vec<f64>,
}

/// A measured quantity emitted per trial.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    TestErrorExact,
    TestErrorMc,
    ZetaSqObserved,
    ZetaSqPredicted,
    EventE1,
    EventE2,
    EventE3,
    EventE4,
    EventE5,
    NuC,
    NuN,
    BoundNoiseless,
    BoundNoisy,
    MinMargin,
}

impl OutputKind {
    pub fn name(&self) -> &'static str {
        match self {
            OutputKind::TestErrorExact => "test_error_exact",
            OutputKind::TestErrorMc => "test_error_mc",
            OutputKind::ZetaSqObserved => "zeta_sq_observed",
            OutputKind::ZetaSqPredicted => "zeta_sq_predicted",
            OutputKind::EventE1 => "event_e1",
            OutputKind::EventE2 => "event_e2",
            OutputKind::EventE3 => "event_e3",
            OutputKind::EventE4 => "event_e4",
            OutputKind::EventE5 => "event_e5",
            OutputKind::NuC => "nu_c",
            OutputKind::NuN => "nu_n",
            OutputKind::BoundNoiseless => "bound_noiseless",
            OutputKind::BoundNoisy => "bound_noisy",
            OutputKind::MinMargin => "min_margin",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base_spec: ModelSpec,
    pub axes: Vec<Axis>,
    pub reps: usize,
    pub master_seed: u64,
    pub outputs: Vec<OutputKind>,
    /// Monte Carlo samples per trial for test_error_mc.
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    /// Probability level used for event thresholds.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_mc() -> usize {
    10_000
}

fn default_delta() -> f64 {
    0.1
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.iter().any(|a| a.values.is_empty()) {
            return Err(Error::InvalidArgument("sweep grid must be non-empty".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be >= 1".into()));
        }
        if self.outputs.is_empty() {
            return Err(Error::InvalidArgument("at least one output is required".into()));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("bad sweep config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One executed trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid_index: usize,
    /// One value per axis, in axis order.
    pub coords: Vec<f64>,
    pub rep: usize,
    pub trial_seed: u64,
    /// "ok" or an error label; non-ok rows have NaN outputs.
    pub status: String,
    /// One value per requested output, in output order.
    pub values: Vec<f64>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis_names: Vec<String>,
    pub output_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

fn grid_coords(config: &SweepConfig, grid_index: usize) -> Vec<f64> {
    let mut idx = grid_index;
    let mut coords = vec![0.0; config.axes.len()];
    for (a, axis) in config.axes.iter().enumerate().rev() {
        coords[a] = axis.values[idx % axis.values.len()];
        idx /= axis.values.len();
    }
    coords
}

fn apply_param(spec: &mut ModelSpec, param: ParamPath, value: f64) -> Result<()> {
    match param {
        ParamPath::MuNorm => match &mut spec.mu {
            MuSpec::Axis { norm } => *norm = value,
            MuSpec::Direction { norm, .. } => *norm = value,
            MuSpec::Explicit { values } => {
                let cur: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                if cur == 0.0 {
                    return Err(Error::InvalidArgument(
                        "cannot rescale a zero signal vector".into(),
                    ));
                }
                for v in values.iter_mut() {
                    *v *= value / cur;
                }
            }
        },
        ParamPath::P => {
            let p = value as usize;
            if p == 0 || (p as f64 - value).abs() > 0.0 {
                return Err(Error::InvalidArgument(format!("p must be a positive integer; got {value}")));
            }
            spec.p = p;
            match &mut spec.sigma {
                SigmaSpec::Identity { p: sp } | SigmaSpec::Spiked { p: sp, .. } => *sp = p,
                _ => {
                    return Err(Error::InvalidArgument(
                        "sweeping p needs an identity or spiked covariance".into(),
                    ))
                }
            }
        }
        ParamPath::N => {
            let n = value as usize;
            if n == 0 || (n as f64 - value).abs() > 0.0 {
                return Err(Error::InvalidArgument(format!("n must be a positive integer; got {value}")));
            }
            spec.n = n;
        }
        ParamPath::Eta => spec.eta = value,
        ParamPath::LambdaMax => match &mut spec.sigma {
            SigmaSpec::Spiked { lambda_max, .. } => *lambda_max = value,
            _ => {
                return Err(Error::InvalidArgument(
                    "sweeping lambda_max needs a spiked covariance".into(),
                ))
            }
        },
        ParamPath::LambdaMin => match &mut spec.sigma {
            SigmaSpec::Spiked { lambda_min, .. } => *lambda_min = value,
            _ => {
                return Err(Error::InvalidArgument(
                    "sweeping lambda_min needs a spiked covariance".into(),
                ))
            }
        },
        ParamPath::GParam => match &mut spec.g.law {
            GLaw::LogNormal { sigma } => *sigma = value,
            _ => {
                return Err(Error::InvalidArgument(
                    "sweeping the g parameter needs a log-normal g law".into(),
                ))
            }
        },
    }
    Ok(())
}

fn run_trial(config: &SweepConfig, spec: &ModelSpec, trial_seed: u64) -> Result<Vec<f64>> {
    let dataset = sample_dataset(spec, trial_seed)?;
    let classifier = ls_interpolator(&dataset)?;
    let mu = spec.mu_vector();
    let rho = spec.g.law.moment(-2.0) / spec.sigma.trace();
    let n_rho = spec.n as f64 * rho;

    let mut lazy_events: Option<crate::events::EventHolds> = None;
    let mut out = Vec::with_capacity(config.outputs.len());
    for kind in &config.outputs {
        let v = match kind {
            OutputKind::TestErrorExact => test_error_exact_spec(&classifier.w, spec)?.value,
            OutputKind::TestErrorMc => {
                test_error_mc(&classifier.w, spec, config.mc_samples, trial_seed ^ 0x3c3c)?.value
            }
            OutputKind::ZetaSqObserved => {
                let z = zeta(&classifier.w, &mu)?;
                z * z
            }
            OutputKind::ZetaSqPredicted => {
                let regime = if spec.eta > 0.0 { Regime::Noisy } else { Regime::Noiseless };
                predicted_zeta_sq(spec.eta, n_rho, mu.norm(), regime)?.total
            }
            OutputKind::EventE1
            | OutputKind::EventE2
            | OutputKind::EventE3
            | OutputKind::EventE4
            | OutputKind::EventE5 => {
                if lazy_events.is_none() {
                    let pred = em_event_parameters(spec, config.delta)?;
                    let report = event_report(&dataset, &pred.thresholds())?;
                    lazy_events = Some(report.holds);
                }
                let holds = lazy_events.as_ref().unwrap();
                let b = match kind {
                    OutputKind::EventE1 => holds.e1,
                    OutputKind::EventE2 => holds.e2,
                    OutputKind::EventE3 => holds.e3,
                    OutputKind::EventE4 => holds.e4,
                    _ => holds.e5,
                };
                if b {
                    1.0
                } else {
                    0.0
                }
            }
            OutputKind::NuC => clean_noisy_decomposition(&dataset, &classifier)?.nu_c,
            OutputKind::NuN => clean_noisy_decomposition(&dataset, &classifier)?.nu_n,
            OutputKind::BoundNoiseless => {
                risk_bounds(spec.eta, n_rho, mu.norm(), spec.sigma.op_norm(), &BTreeMap::new())?
                    .noiseless_bound
                    .value
            }
            OutputKind::BoundNoisy => {
                let b = risk_bounds(
                    spec.eta,
                    n_rho,
                    mu.norm(),
                    spec.sigma.op_norm(),
                    &BTreeMap::new(),
                )?;
                b.noisy_bound.map(|v| v.value).unwrap_or(f64::NAN)
            }
            OutputKind::MinMargin => classifier.min_margin(),
        };
        out.push(v);
    }
    Ok(out)
}

/// Executes the sweep. Rows run in parallel; the result is sorted by
/// (grid index, rep) and every trial seed is a pure function of the master
/// seed and the row coordinates, so the table is schedule-independent.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepTable> {
    config.validate()?;
    let grid = config.grid_size();
    let jobs: Vec<(usize, usize)> = (0..grid)
        .flat_map(|g| (0..config.reps).map(move |r| (g, r)))
        .collect();

    let mut rows: Vec<SweepRow> = jobs
        .into_par_iter()
        .map(|(g, rep)| {
            let start = Instant::now();
            let coords = grid_coords(config, g);
            let trial_seed = rng::mix(config.master_seed, &[g as u64, rep as u64]);
            let mut spec = config.base_spec.clone();
            let mut status = "ok".to_string();
            let mut values = vec![f64::NAN; config.outputs.len()];
            let applied: Result<()> = config
                .axes
                .iter()
                .zip(coords.iter())
                .try_for_each(|(axis, &v)| apply_param(&mut spec, axis.parameter, v));
            match applied.and_then(|_| run_trial(config, &spec, trial_seed)) {
                Ok(v) => values = v,
                Err(e) => status = e.to_string(),
            }
            SweepRow {
                grid_index: g,
                coords,
                rep,
                trial_seed,
                status,
                values,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.grid_index, r.rep));
    Ok(SweepTable {
        axis_names: config.axes.iter().map(|a| a.parameter.name().to_string()).collect(),
        output_names: config.outputs.iter().map(|o| o.name().to_string()).collect(),
        rows,
    })
}

/// Formats a float with 17 significant digits, round-trip safe.
pub fn full_precision(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Writes the raw trial table as RFC-4180 CSV.
pub fn emit_csv(table: &SweepTable, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    let mut header: Vec<String> = table.axis_names.clone();
    header.extend(["rep".to_string(), "trial_seed".to_string(), "status".to_string()]);
    header.extend(table.output_names.iter().cloned());
    header.push("wall_time_ms".to_string());
    writer.write_record(&header)?;
    for row in &table.rows {
        let mut record: Vec<String> = row.coords.iter().map(|&c| full_precision(c)).collect();
        record.push(row.rep.to_string());
        record.push(row.trial_seed.to_string());
        record.push(row.status.clone());
        record.extend(row.values.iter().map(|&v| full_precision(v)));
        record.push(full_precision(row.wall_time_ms));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}

/// Per-grid-point means and standard errors over ok rows.
#[derive(Debug, Clone)]
pub struct GridSummary {
    pub grid_index: usize,
    pub coords: Vec<f64>,
    pub count_ok: usize,
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

/// Aggregates the table by grid point (deterministic fold over the sorted
/// rows).
pub fn summarize(table: &SweepTable) -> Vec<GridSummary> {
    let k = table.output_names.len();
    let mut out: Vec<GridSummary> = Vec::new();
    for row in &table.rows {
        if out.last().map(|s| s.grid_index) != Some(row.grid_index) {
            out.push(GridSummary {
                grid_index: row.grid_index,
                coords: row.coords.clone(),
                count_ok: 0,
                means: vec![0.0; k],
                standard_errors: vec![0.0; k],
            });
        }
        if row.status == "ok" {
            let s = out.last_mut().unwrap();
            s.count_ok += 1;
            for j in 0..k {
                // Accumulate sums first; finalized below.
                s.means[j] += row.values[j];
                s.standard_errors[j] += row.values[j] * row.values[j];
            }
        }
    }
    for s in &mut out {
        let c = s.count_ok as f64;
        if s.count_ok > 0 {
            for j in 0..s.means.len() {
                let mean = s.means[j] / c;
                let var = (s.standard_errors[j] / c - mean * mean).max(0.0);
                s.means[j] = mean;
                s.standard_errors[j] = if s.count_ok > 1 { (var / (c - 1.0)).sqrt() } else { 0.0 };
            }
        } else {
            for j in 0..s.means.len() {
                s.means[j] = f64::NAN;
                s.standard_errors[j] = f64::NAN;
            }
        }
    }
    out
}

/// Writes the per-grid-point summary CSV.
pub fn emit_summary_csv(table: &SweepTable, path: &Path) -> Result<()> {
    let summaries = summarize(table);
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    let mut header: Vec<String> = table.axis_names.clone();
    header.push("count_ok".to_string());
    for name in &table.output_names {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_se"));
    }
    writer.write_record(&header)?;
    for s in &summaries {
        let mut record: Vec<String> = s.coords.iter().map(|&c| full_precision(c)).collect();
        record.push(s.count_ok.to_string());
        for j in 0..table.output_names.len() {
            record.push(full_precision(s.means[j]));
            record.push(full_precision(s.standard_errors[j]));
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}

/// Axis scaling for the SVG plot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct PlotScales {
    pub x_log: bool,
    pub y_log: bool,
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 140.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const SERIES_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Renders grid-point means of the selected outputs against one axis as a
/// self-contained SVG with one polyline per output.
pub fn emit_svg(
    table: &SweepTable,
    x_axis: &str,
    y_axes: &[&str],
    scales: PlotScales,
    path: &Path,
) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument("cannot plot an empty table".into()));
    }
    if y_axes.is_empty() {
        return Err(Error::InvalidArgument("at least one y series is required".into()));
    }
    let xi = table
        .axis_names
        .iter()
        .position(|a| a == x_axis)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown sweep axis `{x_axis}`")))?;
    let yidx: Vec<usize> = y_axes
        .iter()
        .map(|name| {
            table
                .output_names
                .iter()
                .position(|o| o == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown output `{name}`")))
        })
        .collect::<Result<_>>()?;

    let summaries = summarize(table);
    // Collect (x, mean...) points, sorted by x for a well-formed polyline.
    let mut points: Vec<(f64, Vec<f64>)> = summaries
        .iter()
        .filter(|s| s.count_ok > 0)
        .map(|s| (s.coords[xi], yidx.iter().map(|&j| s.means[j]).collect()))
        .collect();
    if points.is_empty() {
        return Err(Error::InvalidArgument("no successful rows to plot".into()));
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let tx = |v: f64| if scales.x_log { v.ln() } else { v };
    let ty = |v: f64| if scales.y_log { v.ln() } else { v };
    let finite = |v: f64| v.is_finite();

    let xs: Vec<f64> = points.iter().map(|(x, _)| tx(*x)).filter(|v| finite(*v)).collect();
    let ys: Vec<f64> = points
        .iter()
        .flat_map(|(_, m)| m.iter().map(|&v| ty(v)))
        .filter(|v| finite(*v))
        .collect();
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument(
            "no finite values to plot (log scale over nonpositive data?)".into(),
        ));
    }
    let (x_min, x_max) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let (y_min, y_max) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let x_span = (x_max - x_min).max(1e-300);
    let y_span = (y_max - y_min).max(1e-300);
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let px = |v: f64| MARGIN_L + (tx(v) - x_min) / x_span * plot_w;
    let py = |v: f64| MARGIN_T + plot_h - (ty(v) - y_min) / y_span * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h
    ));
    let x_label = if scales.x_log { format!("{x_axis} (log)") } else { x_axis.to_string() };
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>\n",
        MARGIN_L + plot_w / 2.0,
        SVG_H - 12.0
    ));
    if scales.y_log {
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 16 {})\">log scale</text>\n",
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0
        ));
    }

    for (s, (&j, name)) in yidx.iter().zip(y_axes.iter()).enumerate() {
        let color = SERIES_COLORS[s % SERIES_COLORS.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|(x, m)| finite(tx(*x)) && finite(ty(m[s])))
            .map(|(x, m)| format!("{:.2},{:.2}", px(*x), py(m[s])))
            .collect();
        let _ = j;
        if coords.is_empty() {
            continue;
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        let ly = MARGIN_T + 16.0 * (s as f64 + 1.0);
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"3\" fill=\"{color}\"/>\n",
            MARGIN_L + plot_w + 10.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">{name}</text>\n",
            MARGIN_L + plot_w + 28.0,
            ly
        ));
    }
    svg.push_str("</svg>\n");

    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    file.write_all(svg.as_bytes())
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}
