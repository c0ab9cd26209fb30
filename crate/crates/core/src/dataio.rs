//! Grid stacks, target series, prediction files and the synthetic case generator.
//!
//! On-disk layout of a grid stack directory:
//!
//! ```text
//! geometry.json   origin_lon, origin_lat, cell_size, n_rows, n_cols,
//!                 variables (ordered), start_date, n_weeks
//! <var>.csv       date,cell_0_0,...,cell_{R-1}_{C-1}   (row-major cells)
//! ```
//!
//! The origin is the south-west corner of the grid; row 0 is the southernmost
//! row and column 0 the westernmost column.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";
pub const SIDECAR_FILE: &str = "geometry.json";

/// First week of every synthetic case (a Monday).
pub fn synthetic_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2008, 1, 7).expect("valid date")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GridGeometry {
    pub fn new(origin_lon: f64, origin_lat: f64, cell_size: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        let g = Self {
            origin_lon,
            origin_lat,
            cell_size,
            n_rows,
            n_cols,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Invalid(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Invalid(format!(
                "grid needs at least one row and column, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        Ok(())
    }

    /// `(lon, lat)` of the center of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_lon + (col as f64 + 0.5) * self.cell_size,
            self.origin_lat + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }
}

/// Weekly stack of multi-variable grids, stored as `(time, row, col, variable)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterSeries {
    pub geometry: GridGeometry,
    pub variables: Vec<String>,
    pub timestamps: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl RasterSeries {
    pub fn new(
        geometry: GridGeometry,
        variables: Vec<String>,
        timestamps: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self> {
        geometry.validate()?;
        if variables.is_empty() {
            return Err(Error::Invalid("raster needs at least one variable".into()));
        }
        check_weekly(&timestamps)?;
        let expected = timestamps.len() * geometry.n_cells() * variables.len();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "raster holds {} values, expected {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let frame = geometry.n_cells() * variables.len();
            return Err(Error::Invalid(format!(
                "non-finite value at week {}",
                timestamps[i / frame]
            )));
        }
        Ok(Self {
            geometry,
            variables,
            timestamps,
            values,
        })
    }

    pub fn n_times(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn frame_len(&self) -> usize {
        self.geometry.n_cells() * self.n_vars()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n_times(), self.geometry.n_rows, self.geometry.n_cols, self.n_vars())
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, row: usize, col: usize, var: usize) -> f64 {
        self.values[self.index(t, row, col, var)]
    }

    pub fn index(&self, t: usize, row: usize, col: usize, var: usize) -> usize {
        ((t * self.geometry.n_rows + row) * self.geometry.n_cols + col) * self.n_vars() + var
    }

    pub fn time_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.timestamps.first()?;
        let days = (date - first).num_days();
        if days < 0 || days % 7 != 0 {
            return None;
        }
        let i = (days / 7) as usize;
        (i < self.n_times()).then_some(i)
    }
}

fn check_weekly(timestamps: &[NaiveDate]) -> Result<()> {
    for w in timestamps.windows(2) {
        if (w[1] - w[0]).num_days() != 7 {
            return Err(Error::TimestampMisalignment(format!(
                "{} follows {}, expected a 7-day step",
                w[1], w[0]
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Weekly water-table depth in meters; missing weeks stay missing.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSeries {
    pub sensor_id: String,
    pub timestamps: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
    /// Training-period statistics, filled in once a split has been fitted.
    pub stats: Option<TargetStats>,
}

impl TargetSeries {
    pub fn new(sensor_id: impl Into<String>, timestamps: Vec<NaiveDate>, values: Vec<Option<f64>>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::TimestampsNotIncreasing(format!("{} follows {}", w[1], w[0])));
            }
        }
        if let Some((d, v)) = timestamps
            .iter()
            .zip(&values)
            .find_map(|(d, v)| v.filter(|x| !(x.is_finite() && *x > 0.0)).map(|x| (d, x)))
        {
            return Err(Error::Invalid(format!("depth must be positive, got {v} at {d}")));
        }
        Ok(Self {
            sensor_id: sensor_id.into(),
            timestamps,
            values,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn with_stats(mut self, stats: TargetStats) -> Self {
        self.stats = Some(stats);
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    origin_lon: f64,
    origin_lat: f64,
    cell_size: f64,
    n_rows: usize,
    n_cols: usize,
    variables: Vec<String>,
    start_date: NaiveDate,
    n_weeks: usize,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_date(path: &Path, line: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
        .map_err(|e| Error::parse(path, line, format!("bad date {s:?}: {e}")))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, 0, format!("{other:?}")),
        })
}

fn csv_record(path: &Path, rec: std::result::Result<csv::StringRecord, csv::Error>) -> Result<csv::StringRecord> {
    rec.map_err(|e| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::parse(path, line, e.to_string())
    })
}

/// Loads a grid stack directory. Fails without partial results on any
/// missing file, misaligned week or non-finite cell.
pub fn load_grid_stack(dir: impl AsRef<Path>) -> Result<RasterSeries> {
    let dir = dir.as_ref();
    let sidecar_path = dir.join(SIDECAR_FILE);
    if !sidecar_path.is_file() {
        return Err(Error::Invalid(format!(
            "missing sidecar {}",
            sidecar_path.display()
        )));
    }
    let sidecar: Sidecar = serde_json::from_str(&read_to_string(&sidecar_path)?)
        .map_err(|e| Error::parse(&sidecar_path, e.line(), e.to_string()))?;
    let geometry = GridGeometry::new(
        sidecar.origin_lon,
        sidecar.origin_lat,
        sidecar.cell_size,
        sidecar.n_rows,
        sidecar.n_cols,
    )?;
    let n_vars = sidecar.variables.len();
    if n_vars == 0 {
        return Err(Error::Invalid("sidecar lists no variables".into()));
    }
    let timestamps: Vec<NaiveDate> = (0..sidecar.n_weeks)
        .map(|k| sidecar.start_date + Duration::weeks(k as i64))
        .collect();
    let n_cells = geometry.n_cells();
    let mut values = vec![0.0; sidecar.n_weeks * n_cells * n_vars];

    for (v, var) in sidecar.variables.iter().enumerate() {
        let path = dir.join(format!("{var}.csv"));
        let mut reader = csv_reader(&path)?;
        let header = reader
            .headers()
            .map_err(|e| Error::parse(&path, 1, e.to_string()))?
            .clone();
        if header.len() != n_cells + 1 || header.get(0) != Some("date") {
            return Err(Error::parse(
                &path,
                1,
                format!("expected date plus {n_cells} cell columns, got {} columns", header.len()),
            ));
        }
        let mut rows = 0;
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = csv_record(&path, rec)?;
            let date = parse_date(&path, line, &rec[0])?;
            if i >= timestamps.len() || date != timestamps[i] {
                let expected = timestamps
                    .get(i)
                    .map_or_else(|| "end of file".to_string(), |d| d.to_string());
                return Err(Error::TimestampMisalignment(format!(
                    "{}:{line}: found {date}, expected {expected}",
                    path.display()
                )));
            }
            if rec.len() != n_cells + 1 {
                return Err(Error::parse(&path, line, format!("expected {} fields, got {}", n_cells + 1, rec.len())));
            }
            for cell in 0..n_cells {
                let field = rec[cell + 1].trim();
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(&path, line, format!("bad value {field:?} in column {}", cell + 1)))?;
                if !x.is_finite() {
                    return Err(Error::parse(&path, line, format!("non-finite value in column {}", cell + 1)));
                }
                values[(i * n_cells + cell) * n_vars + v] = x;
            }
            rows += 1;
        }
        if rows != timestamps.len() {
            return Err(Error::TimestampMisalignment(format!(
                "{} has {rows} weeks, sidecar declares {}",
                path.display(),
                timestamps.len()
            )));
        }
    }
    RasterSeries::new(geometry, sidecar.variables, timestamps, values)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_grid_stack(raster: &RasterSeries, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &raster.geometry;
    let sidecar = Sidecar {
        origin_lon: g.origin_lon,
        origin_lat: g.origin_lat,
        cell_size: g.cell_size,
        n_rows: g.n_rows,
        n_cols: g.n_cols,
        variables: raster.variables.clone(),
        start_date: raster.timestamps.first().copied().unwrap_or_else(synthetic_start_date),
        n_weeks: raster.n_times(),
    };
    let sidecar_path = dir.join(SIDECAR_FILE);
    fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)? + "\n")
        .map_err(|e| Error::io(&sidecar_path, e))?;

    for (v, var) in raster.variables.iter().enumerate() {
        let path = dir.join(format!("{var}.csv"));
        let mut w = create(&path)?;
        let io = |e| Error::io(&path, e);
        let mut header = String::from("date");
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                header.push_str(&format!(",cell_{r}_{c}"));
            }
        }
        writeln!(w, "{header}").map_err(io)?;
        for (t, date) in raster.timestamps.iter().enumerate() {
            let mut line = date.format(DATE_FORMAT).to_string();
            for r in 0..g.n_rows {
                for c in 0..g.n_cols {
                    line.push(',');
                    line.push_str(&raster.get(t, r, c, v).to_string());
                }
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    Ok(())
}

/// Loads `<sensor_id>.csv` with header `date,depth_m`; an empty depth is a missing week.
pub fn load_target_series(path: impl AsRef<Path>) -> Result<TargetSeries> {
    let path = path.as_ref();
    let sensor_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let mut reader = csv_reader(path)?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["date", "depth_m"] {
        return Err(Error::parse(path, 1, "expected header date,depth_m"));
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = csv_record(path, rec)?;
        let date = parse_date(path, line, &rec[0])?;
        if let Some(prev) = timestamps.last() {
            if date <= *prev {
                return Err(Error::TimestampsNotIncreasing(format!(
                    "{}:{line}: {date} follows {prev}",
                    path.display()
                )));
            }
        }
        let field = rec.get(1).unwrap_or("").trim();
        let value = if field.is_empty() {
            None
        } else {
            let x: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad depth {field:?}")))?;
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::parse(path, line, format!("depth must be positive, got {x}")));
            }
            Some(x)
        };
        timestamps.push(date);
        values.push(value);
    }
    TargetSeries::new(sensor_id, timestamps, values)
}

pub fn write_target_series(target: &TargetSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "date,depth_m").map_err(io)?;
    for (d, v) in target.timestamps.iter().zip(&target.values) {
        match v {
            Some(x) => writeln!(w, "{},{x}", d.format(DATE_FORMAT)),
            None => writeln!(w, "{},", d.format(DATE_FORMAT)),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub mean: f64,
    pub std: f64,
}

pub fn predictions_file_name(sensor: &str, model: &str) -> String {
    format!("predictions_{sensor}_{model}.csv")
}

pub fn write_predictions(
    dates: &[NaiveDate],
    means: &[f64],
    stds: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if dates.len() != means.len() || dates.len() != stds.len() {
        return Err(Error::Shape(format!(
            "{} dates, {} means and {} stds",
            dates.len(),
            means.len(),
            stds.len()
        )));
    }
    if let Some(s) = stds.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Invalid(format!("ensemble std must be non-negative, got {s}")));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "date,ensemble_mean_m,ensemble_std_m").map_err(io)?;
    for ((d, m), s) in dates.iter().zip(means).zip(stds) {
        writeln!(w, "{},{m},{s}", d.format(DATE_FORMAT)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = csv_record(path, rec)?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad number in column {}", k + 1)))
        };
        rows.push(PredictionRow {
            date: parse_date(path, line, &rec[0])?,
            mean: num(1)?,
            std: num(2)?,
        });
    }
    Ok(rows)
}

/// Knobs of the synthetic generator. The target is
/// `level + memory_coef * m~_t + seasonal_amp * sin(2 pi t / 52.1775 + seasonal_phase) + noise`
/// where `m~_t` is the standardized mean of channel 0 over all cells and the
/// `memory_weeks` weeks before `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub window: usize,
    pub memory_weeks: usize,
    pub level: f64,
    pub memory_coef: f64,
    pub seasonal_amp: f64,
    pub seasonal_phase: f64,
    pub target_noise: f64,
    pub missing_fraction: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            window: 104,
            memory_weeks: 26,
            level: 4.4,
            memory_coef: -0.65,
            seasonal_amp: 0.35,
            seasonal_phase: 2.2,
            target_noise: 0.03,
            missing_fraction: 0.02,
        }
    }
}

pub const WEEKS_PER_YEAR: f64 = 52.1775;

struct WeatherVariable {
    name: &'static str,
    base: f64,
    amp: f64,
    phase: f64,
    noise: f64,
    floor: Option<f64>,
}

const SYNTHETIC_VARIABLES: [WeatherVariable; 3] = [
    WeatherVariable { name: "tp", base: 2.6, amp: 1.2, phase: 1.0, noise: 1.0, floor: Some(0.0) },
    WeatherVariable { name: "tmax", base: 17.0, amp: 9.0, phase: -1.9, noise: 2.0, floor: None },
    WeatherVariable { name: "tmin", base: 6.0, amp: 7.5, phase: -1.9, noise: 1.6, floor: None },
];

pub fn generate_synthetic_case(seed: u64, geometry: &GridGeometry, n_weeks: usize) -> Result<(RasterSeries, TargetSeries)> {
    generate_synthetic_case_with(seed, geometry, n_weeks, &SyntheticOptions::default())
}

/// Deterministic synthetic weather stack and target series.
///
/// Weather channels are an annual sinusoid plus spatially smooth noise built
/// from three AR(1) modes (level, north-south and east-west gradients).
pub fn generate_synthetic_case_with(
    seed: u64,
    geometry: &GridGeometry,
    n_weeks: usize,
    opts: &SyntheticOptions,
) -> Result<(RasterSeries, TargetSeries)> {
    geometry.validate()?;
    if n_weeks < 3 * opts.window {
        return Err(Error::Invalid(format!(
            "synthetic case needs at least {} weeks (3 x window {}), got {n_weeks}",
            3 * opts.window,
            opts.window
        )));
    }
    if n_weeks <= opts.memory_weeks + 1 {
        return Err(Error::Invalid("too few weeks for the target memory".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (geometry.n_rows, geometry.n_cols);
    let n_vars = SYNTHETIC_VARIABLES.len();
    let phi: f64 = 0.85;
    let innovation = (1.0 - phi * phi).sqrt();

    let start = synthetic_start_date();
    let timestamps: Vec<NaiveDate> = (0..n_weeks).map(|k| start + Duration::weeks(k as i64)).collect();
    let mut values = vec![0.0; n_weeks * rows * cols * n_vars];
    let mut modes = [[0.0f64; 3]; 3];
    for var_modes in modes.iter_mut() {
        for m in var_modes.iter_mut() {
            *m = rng.sample(StandardNormal);
        }
    }
    for t in 0..n_weeks {
        let season = 2.0 * std::f64::consts::PI * t as f64 / WEEKS_PER_YEAR;
        for (v, var) in SYNTHETIC_VARIABLES.iter().enumerate() {
            if t > 0 {
                for m in 0..3 {
                    let e: f64 = rng.sample(StandardNormal);
                    modes[v][m] = phi * modes[v][m] + innovation * e;
                }
            }
            let seasonal = var.base + var.amp * (season + var.phase).sin();
            for r in 0..rows {
                let ns = (std::f64::consts::PI * (r as f64 + 0.5) / rows as f64).cos();
                for c in 0..cols {
                    let ew = (std::f64::consts::PI * (c as f64 + 0.5) / cols as f64).cos();
                    let noise = var.noise * (modes[v][0] + 0.5 * modes[v][1] * ns + 0.5 * modes[v][2] * ew);
                    let mut x = seasonal + noise;
                    if let Some(floor) = var.floor {
                        x = x.max(floor);
                    }
                    values[((t * rows + r) * cols + c) * n_vars + v] = x;
                }
            }
        }
    }

    // trailing spatial mean of channel 0
    let n_cells = (rows * cols) as f64;
    let spatial_mean: Vec<f64> = (0..n_weeks)
        .map(|t| {
            (0..rows * cols)
                .map(|cell| values[(t * rows * cols + cell) * n_vars])
                .sum::<f64>()
                / n_cells
        })
        .collect();
    let mw = opts.memory_weeks;
    let memory: Vec<f64> = (mw..n_weeks)
        .map(|t| spatial_mean[t - mw..t].iter().sum::<f64>() / mw as f64)
        .collect();
    let mu = memory.iter().sum::<f64>() / memory.len() as f64;
    let sd = (memory.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / memory.len() as f64).sqrt();

    let mut target = vec![None; n_weeks];
    for t in mw..n_weeks {
        let standardized = (memory[t - mw] - mu) / sd;
        let season = 2.0 * std::f64::consts::PI * t as f64 / WEEKS_PER_YEAR + opts.seasonal_phase;
        let e: f64 = rng.sample(StandardNormal);
        let missing = rng.random::<f64>() < opts.missing_fraction;
        let y = opts.level + opts.memory_coef * standardized + opts.seasonal_amp * season.sin() + opts.target_noise * e;
        if !missing {
            target[t] = Some(y.max(0.05));
        }
    }

    let raster = RasterSeries::new(
        geometry.clone(),
        SYNTHETIC_VARIABLES.iter().map(|v| v.name.to_string()).collect(),
        timestamps.clone(),
        values,
    )?;
    let target = TargetSeries::new("synthetic", timestamps, target)?;
    Ok((raster, target))
}

/// Default geometry of synthetic cases: a `side x side` grid at 0.125 degrees
/// whose south-west corner sits at the corner of the reference bounding box.
pub fn synthetic_geometry(side: usize) -> GridGeometry {
    GridGeometry {
        origin_lon: 6.84,
        origin_lat: 44.25,
        cell_size: 0.125,
        n_rows: side,
        n_cols: side,
    }
}

/// Convenience used by the CLI: grid stack under `dir/weather`, target under
/// `dir/target/synthetic.csv`.
pub fn write_synthetic_case(raster: &RasterSeries, target: &TargetSeries, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let weather = dir.join("weather");
    let target_path = dir.join("target").join(format!("{}.csv", target.sensor_id));
    write_grid_stack(raster, &weather)?;
    write_target_series(target, &target_path)?;
    Ok((weather, target_path))
}

pub fn is_week_start(date: NaiveDate) -> bool {
    date.weekday() == chrono::Weekday::Mon
}
