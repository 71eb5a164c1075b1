//! Time-series container and its CSV schema.
//!
//! CSV layout: an optional `# config_hash=<hex>` comment line, a header
//! `t,u1,...,uK[,w1,...,wM][,phase]`, then rows in time order. Floats are
//! written with 17 significant digits so parsing returns bit-identical f64s.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::systems::{ObservationSpec, SystemSpec};

/// Ordered real-vector samples plus the provenance needed to evaluate them.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    /// Rows are samples, columns the K series dimensions.
    pub values: Array2<f64>,
    /// Sampling interval for flow data; `None` for maps (unit steps).
    pub dt: Option<f64>,
    pub meta: SeriesMeta,
    /// Underlying states w_n aligned row-for-row with `values`, kept for
    /// evaluation and full-state readout targets only — never fed forward.
    pub hidden_truth: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct SeriesMeta {
    pub system: Option<SystemSpec>,
    pub observation: Option<ObservationSpec>,
}

impl TimeSeries {
    pub fn new(values: Array2<f64>, dt: Option<f64>) -> Self {
        TimeSeries {
            values,
            dt,
            meta: SeriesMeta::default(),
            hidden_truth: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Series dimension K.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.values.row(n)
    }

    /// Time coordinate of sample n (index for maps, n·dt for flows).
    pub fn time_at(&self, n: usize) -> f64 {
        match self.dt {
            Some(dt) => n as f64 * dt,
            None => n as f64,
        }
    }

    /// Copy of the sample range [start, end), keeping dt, meta, and the
    /// aligned hidden-truth rows.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidConfig(format!(
                "row range {start}..{end} out of bounds for {} samples",
                self.len()
            )));
        }
        let mut out = TimeSeries::new(
            self.values.slice(ndarray::s![start..end, ..]).to_owned(),
            self.dt,
        );
        out.meta = self.meta.clone();
        out.hidden_truth = self
            .hidden_truth
            .as_ref()
            .map(|w| w.slice(ndarray::s![start..end, ..]).to_owned());
        Ok(out)
    }
}

/// Row tag distinguishing teacher-forced warmup from closed-loop output in
/// forecast CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Forecast,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Forecast => "forecast",
        }
    }
}

/// One parsed CSV file.
#[derive(Debug)]
pub struct CsvContents {
    pub series: TimeSeries,
    pub config_hash: Option<String>,
    /// Present only when the file carried a `phase` column.
    pub phases: Option<Vec<Phase>>,
}

/// 17 significant digits: enough to reproduce any f64 exactly on re-parse.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_header<W: Write>(out: &mut W, k: usize, m: usize, phase: bool) -> Result<()> {
    let mut cols = Vec::with_capacity(1 + k + m + usize::from(phase));
    cols.push("t".to_string());
    cols.extend((1..=k).map(|i| format!("u{i}")));
    cols.extend((1..=m).map(|i| format!("w{i}")));
    if phase {
        cols.push("phase".to_string());
    }
    writeln!(out, "{}", cols.join(","))?;
    Ok(())
}

fn write_row<W: Write>(
    out: &mut W,
    t: f64,
    u: ArrayView1<'_, f64>,
    w: Option<ArrayView1<'_, f64>>,
    phase: Option<Phase>,
) -> Result<()> {
    let mut line = format_float(t);
    for v in u {
        line.push(',');
        line.push_str(&format_float(*v));
    }
    if let Some(w) = w {
        for v in w {
            line.push(',');
            line.push_str(&format_float(*v));
        }
    }
    if let Some(p) = phase {
        line.push(',');
        line.push_str(p.as_str());
    }
    writeln!(out, "{line}")?;
    Ok(())
}

/// Write a series (with hidden-truth columns when present).
pub fn write_series<W: Write>(
    out: &mut W,
    series: &TimeSeries,
    config_hash: Option<&str>,
) -> Result<()> {
    if let Some(h) = config_hash {
        writeln!(out, "# config_hash={h}")?;
    }
    let m = series.hidden_truth.as_ref().map_or(0, |w| w.ncols());
    write_header(out, series.dim(), m, false)?;
    for n in 0..series.len() {
        let w = series.hidden_truth.as_ref().map(|w| w.row(n));
        write_row(out, series.time_at(n), series.row(n), w, None)?;
    }
    Ok(())
}

pub fn write_series_csv(path: &Path, series: &TimeSeries, config_hash: Option<&str>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_series(&mut out, series, config_hash)?;
    out.flush()?;
    Ok(())
}

/// Write a forecast CSV: warmup rows (the teacher-forced inputs) followed by
/// the closed-loop forecast, with a trailing `phase` column. The time column
/// continues across the boundary.
pub fn write_forecast_csv(
    path: &Path,
    warmup: &TimeSeries,
    forecast: &TimeSeries,
    config_hash: Option<&str>,
) -> Result<()> {
    if warmup.dim() != forecast.dim() {
        return Err(Error::DimensionMismatch {
            expected: warmup.dim(),
            got: forecast.dim(),
        });
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    if let Some(h) = config_hash {
        writeln!(out, "# config_hash={h}")?;
    }
    write_header(&mut out, warmup.dim(), 0, true)?;
    for n in 0..warmup.len() {
        write_row(
            &mut out,
            warmup.time_at(n),
            warmup.row(n),
            None,
            Some(Phase::Warmup),
        )?;
    }
    let step = warmup.dt.unwrap_or(1.0);
    let t0 = warmup.len() as f64 * step;
    for n in 0..forecast.len() {
        write_row(
            &mut out,
            t0 + n as f64 * step,
            forecast.row(n),
            None,
            Some(Phase::Forecast),
        )?;
    }
    out.flush()?;
    Ok(())
}

fn parse_field(what: &'static str, line_no: usize, field: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|e| Error::Parse {
        what,
        line: line_no,
        detail: format!("`{field}`: {e}"),
    })
}

/// Parse a CSV written by [`write_series`] or [`write_forecast_csv`].
pub fn read_series_csv(path: &Path) -> Result<CsvContents> {
    let text = fs::read_to_string(path)?;
    parse_series(&text)
}

pub fn parse_series(text: &str) -> Result<CsvContents> {
    let mut lines = text.lines().enumerate().peekable();

    let mut config_hash = None;
    while let Some((_, line)) = lines.peek() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(h) = rest.trim().strip_prefix("config_hash=") {
                config_hash = Some(h.trim().to_string());
            }
            lines.next();
        } else {
            break;
        }
    }

    let (header_no, header) = lines.next().ok_or(Error::Parse {
        what: "csv",
        line: 1,
        detail: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Parse {
            what: "csv header",
            line: header_no + 1,
            detail: format!("expected leading `t`, got `{header}`"),
        });
    }
    let has_phase = cols.last() == Some(&"phase");
    let data_cols = &cols[1..cols.len() - usize::from(has_phase)];
    let k = data_cols.iter().take_while(|c| c.starts_with('u')).count();
    let m = data_cols.len() - k;
    if k == 0 || !data_cols[k..].iter().all(|c| c.starts_with('w')) {
        return Err(Error::Parse {
            what: "csv header",
            line: header_no + 1,
            detail: format!("expected u1..uK then w1..wM, got `{header}`"),
        });
    }

    let mut times = Vec::new();
    let mut u_flat = Vec::new();
    let mut w_flat = Vec::new();
    let mut phases = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                what: "csv row",
                line: line_no,
                detail: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        times.push(parse_field("csv time", line_no, fields[0])?);
        for f in &fields[1..1 + k] {
            u_flat.push(parse_field("csv value", line_no, f)?);
        }
        for f in &fields[1 + k..1 + k + m] {
            w_flat.push(parse_field("csv value", line_no, f)?);
        }
        if has_phase {
            phases.push(match fields[cols.len() - 1] {
                "warmup" => Phase::Warmup,
                "forecast" => Phase::Forecast,
                other => {
                    return Err(Error::Parse {
                        what: "csv phase",
                        line: line_no,
                        detail: format!("unknown phase `{other}`"),
                    })
                }
            });
        }
    }

    let n = times.len();
    let values = Array2::from_shape_vec((n, k), u_flat).expect("row-major fill");
    let hidden = if m > 0 {
        Some(Array2::from_shape_vec((n, m), w_flat).expect("row-major fill"))
    } else {
        None
    };
    // Unit-step time columns mean map data; anything else is a sampled flow.
    let dt = if n >= 2 {
        let d = times[1] - times[0];
        if (d - 1.0).abs() > 1e-12 {
            Some(d)
        } else {
            None
        }
    } else {
        None
    };

    let mut series = TimeSeries::new(values, dt);
    series.hidden_truth = hidden;
    Ok(CsvContents {
        series,
        config_hash,
        phases: has_phase.then_some(phases),
    })
}
