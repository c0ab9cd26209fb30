//! Clipping, squaring, weekly aggregation, z-scores, month encoding,
//! gap-separated splits and sliding-window samples.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::dataio::{GridGeometry, RasterSeries, TargetSeries, TargetStats};
use crate::error::{Error, Result};

/// Months January..November map to unit vectors; December is the dropped category.
pub const MONTH_FEATURES: usize = 11;

pub fn one_hot_month(month: u32) -> [f64; MONTH_FEATURES] {
    let mut v = [0.0; MONTH_FEATURES];
    if (1..=11).contains(&month) {
        v[(month - 1) as usize] = 1.0;
    }
    v
}

pub fn month_one_hot(date: NaiveDate) -> [f64; MONTH_FEATURES] {
    one_hot_month(date.month())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    /// Grana-Maira region of interest.
    pub fn reference_roi() -> Self {
        Self {
            min_lon: 6.90,
            min_lat: 44.35,
            max_lon: 7.79,
            max_lat: 44.84,
        }
    }

    fn contains(&self, lon: f64, lat: f64) -> bool {
        const EPS: f64 = 1e-9;
        lon >= self.min_lon - EPS
            && lon <= self.max_lon + EPS
            && lat >= self.min_lat - EPS
            && lat <= self.max_lat + EPS
    }
}

/// Keeps every cell whose center lies inside the closed box.
pub fn clip_to_bbox(raster: &RasterSeries, bbox: &BoundingBox) -> Result<RasterSeries> {
    let g = &raster.geometry;
    let rows: Vec<usize> = (0..g.n_rows)
        .filter(|&r| bbox.contains(bbox.min_lon, g.cell_center(r, 0).1))
        .collect();
    let cols: Vec<usize> = (0..g.n_cols)
        .filter(|&c| bbox.contains(g.cell_center(0, c).0, bbox.min_lat))
        .collect();
    let (Some(&r0), Some(&c0)) = (rows.first(), cols.first()) else {
        return Err(Error::Invalid(format!(
            "bounding box {bbox:?} does not contain any cell center of the grid"
        )));
    };
    let geometry = GridGeometry {
        origin_lon: g.origin_lon + c0 as f64 * g.cell_size,
        origin_lat: g.origin_lat + r0 as f64 * g.cell_size,
        cell_size: g.cell_size,
        n_rows: rows.len(),
        n_cols: cols.len(),
    };
    let p = raster.n_vars();
    let mut values = Vec::with_capacity(raster.n_times() * rows.len() * cols.len() * p);
    for t in 0..raster.n_times() {
        for &r in &rows {
            for &c in &cols {
                let i = raster.index(t, r, c, 0);
                values.extend_from_slice(&raster.values[i..i + p]);
            }
        }
    }
    RasterSeries::new(geometry, raster.variables.clone(), raster.timestamps.clone(), values)
}

/// Smallest square side that fits the grid and still leaves room for the
/// encoder's four 2x2 valid convolutions.
pub fn default_square_side(n_rows: usize, n_cols: usize) -> usize {
    n_rows.max(n_cols).max(5)
}

/// Zero-pads the grid symmetrically to `side x side`; when the padding is odd
/// the extra cell goes to the high-index end (last row / last column).
pub fn pad_to_square(raster: &RasterSeries, side: usize) -> Result<RasterSeries> {
    let g = &raster.geometry;
    if side < g.n_rows || side < g.n_cols {
        return Err(Error::Invalid(format!(
            "square side {side} is smaller than the {}x{} grid",
            g.n_rows, g.n_cols
        )));
    }
    let top = (side - g.n_rows) / 2;
    let left = (side - g.n_cols) / 2;
    let geometry = GridGeometry {
        origin_lon: g.origin_lon - left as f64 * g.cell_size,
        origin_lat: g.origin_lat - top as f64 * g.cell_size,
        cell_size: g.cell_size,
        n_rows: side,
        n_cols: side,
    };
    let p = raster.n_vars();
    let mut values = vec![0.0; raster.n_times() * side * side * p];
    for t in 0..raster.n_times() {
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                let src = raster.index(t, r, c, 0);
                let dst = ((t * side + r + top) * side + c + left) * p;
                values[dst..dst + p].copy_from_slice(&raster.values[src..src + p]);
            }
        }
    }
    RasterSeries::new(geometry, raster.variables.clone(), raster.timestamps.clone(), values)
}

pub fn week_start(date: NaiveDate) -> NaiveDate {
    date.week(Weekday::Mon).first_day()
}

/// Monday-anchored weekly means of a daily series. Every week between the
/// first and the last day is reported; weeks with no present value are missing.
pub fn aggregate_weekly(days: &[(NaiveDate, Option<f64>)]) -> Vec<(NaiveDate, Option<f64>)> {
    let (Some(first), Some(last)) = (days.iter().map(|d| d.0).min(), days.iter().map(|d| d.0).max()) else {
        return Vec::new();
    };
    let start = week_start(first);
    let n_weeks = ((week_start(last) - start).num_days() / 7 + 1) as usize;
    let mut sums = vec![(0.0, 0usize); n_weeks];
    for &(d, v) in days {
        if let Some(x) = v {
            let w = ((week_start(d) - start).num_days() / 7) as usize;
            sums[w].0 += x;
            sums[w].1 += 1;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(w, (s, n))| {
            let date = start + Duration::weeks(w as i64);
            (date, (n > 0).then(|| s / n as f64))
        })
        .collect()
}

/// Weekly means of daily gap-free raster frames (each frame `frame_len` values).
pub fn aggregate_weekly_frames(dates: &[NaiveDate], values: &[f64], frame_len: usize) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    if values.len() != dates.len() * frame_len {
        return Err(Error::Shape(format!(
            "{} values for {} daily frames of {frame_len}",
            values.len(),
            dates.len()
        )));
    }
    let Some(&first) = dates.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let start = week_start(first);
    let mut weeks: Vec<NaiveDate> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (d, frame) in dates.iter().zip(values.chunks_exact(frame_len)) {
        let w = ((week_start(*d) - start).num_days() / 7) as usize;
        while weeks.len() <= w {
            weeks.push(start + Duration::weeks(weeks.len() as i64));
            sums.extend(std::iter::repeat_n(0.0, frame_len));
            counts.push(0);
        }
        for (s, v) in sums[w * frame_len..(w + 1) * frame_len].iter_mut().zip(frame) {
            *s += v;
        }
        counts[w] += 1;
    }
    if let Some(w) = counts.iter().position(|&c| c == 0) {
        return Err(Error::TimestampMisalignment(format!("no daily frames in week {}", weeks[w])));
    }
    for (w, &n) in counts.iter().enumerate() {
        for s in &mut sums[w * frame_len..(w + 1) * frame_len] {
            *s /= n as f64;
        }
    }
    Ok((weeks, sums))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Membership {
    Train,
    Val,
    Test,
    DroppedGap,
    DroppedMissing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSet {
    Train,
    Val,
    Test,
}

impl SplitSet {
    pub fn name(self) -> &'static str {
        match self {
            SplitSet::Train => "train",
            SplitSet::Val => "val",
            SplitSet::Test => "test",
        }
    }

    fn membership(self) -> Membership {
        match self {
            SplitSet::Train => Membership::Train,
            SplitSet::Val => Membership::Val,
            SplitSet::Test => Membership::Test,
        }
    }
}

impl std::str::FromStr for SplitSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitSet::Train),
            "val" => Ok(SplitSet::Val),
            "test" => Ok(SplitSet::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}, expected train, val or test"))),
        }
    }
}

/// Membership of every target date.
///
/// A prediction at week index `i` occupies the weeks `i - T ..= i`: its input
/// window plus its own target week. A later set keeps a date only if that
/// footprint starts after every footprint kept in the earlier sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitIndex {
    pub dates: Vec<NaiveDate>,
    /// Week offset of each date from the first target date.
    pub week_index: Vec<i64>,
    pub membership: Vec<Membership>,
    pub window: usize,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
}

impl SplitIndex {
    pub fn count(&self, m: Membership) -> usize {
        self.membership.iter().filter(|&&x| x == m).count()
    }

    pub fn positions(&self, set: SplitSet) -> Vec<usize> {
        let m = set.membership();
        (0..self.dates.len()).filter(|&i| self.membership[i] == m).collect()
    }

    /// Week indices of the input window of the date at position `pos`.
    pub fn input_window(&self, pos: usize) -> std::ops::Range<i64> {
        let i = self.week_index[pos];
        i - self.window as i64..i
    }
}

pub fn split_with_gaps(
    target: &TargetSeries,
    train_end: NaiveDate,
    test_start: NaiveDate,
    window: usize,
) -> Result<SplitIndex> {
    if window == 0 {
        return Err(Error::Invalid("window length T must be at least 1".into()));
    }
    if train_end >= test_start {
        return Err(Error::Invalid(format!(
            "train end {train_end} must precede test start {test_start}"
        )));
    }
    let Some(&first) = target.timestamps.first() else {
        return Err(Error::EmptySplit("target series is empty".into()));
    };
    let mut week_index = Vec::with_capacity(target.len());
    for d in &target.timestamps {
        let days = (*d - first).num_days();
        if days % 7 != 0 {
            return Err(Error::TimestampMisalignment(format!(
                "target date {d} is not a whole number of weeks after {first}"
            )));
        }
        week_index.push(days / 7);
    }

    let mut membership: Vec<Membership> = target
        .timestamps
        .iter()
        .zip(&target.values)
        .map(|(d, v)| match v {
            None => Membership::DroppedMissing,
            Some(_) if *d <= train_end => Membership::Train,
            Some(_) if *d < test_start => Membership::Val,
            Some(_) => Membership::Test,
        })
        .collect();

    let t = window as i64;
    let mut frontier: Option<i64> = None;
    for set in [Membership::Train, Membership::Val, Membership::Test] {
        let mut latest = frontier;
        for pos in 0..membership.len() {
            if membership[pos] != set {
                continue;
            }
            let i = week_index[pos];
            if frontier.is_some_and(|f| i - t <= f) {
                membership[pos] = Membership::DroppedGap;
            } else {
                latest = Some(latest.map_or(i, |l| l.max(i)));
            }
        }
        frontier = latest;
    }

    let split = SplitIndex {
        dates: target.timestamps.clone(),
        week_index,
        membership,
        window,
        train_end,
        test_start,
    };
    let (n_train, n_val, n_test) = (
        split.count(Membership::Train),
        split.count(Membership::Val),
        split.count(Membership::Test),
    );
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::EmptySplit(format!(
            "train {n_train}, val {n_val}, test {n_test} (dropped for gaps {}, missing {})",
            split.count(Membership::DroppedGap),
            split.count(Membership::DroppedMissing)
        )));
    }
    Ok(split)
}

/// Marks as missing every target date whose input window is not fully
/// covered by the weather record.
pub fn restrict_to_weather(target: &TargetSeries, weather: &RasterSeries, window: usize) -> TargetSeries {
    let mut out = target.clone();
    for (d, v) in out.timestamps.iter().zip(out.values.iter_mut()) {
        let covered = weather.time_index(*d).is_some_and(|i| i >= window);
        if !covered {
            *v = None;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub weather_mean: Vec<f64>,
    pub weather_std: Vec<f64>,
    pub target: TargetStats,
}

impl NormStats {
    pub fn normalize_target(&self, y: f64) -> f64 {
        (y - self.target.mean) / self.target.std
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        z * self.target.std + self.target.mean
    }

    pub fn normalize_weather(&self, var: usize, x: f64) -> f64 {
        (x - self.weather_mean[var]) / self.weather_std[var]
    }

    pub fn denormalize_weather(&self, var: usize, z: f64) -> f64 {
        z * self.weather_std[var] + self.weather_mean[var]
    }

    pub fn normalize_raster(&self, raster: &RasterSeries) -> Result<RasterSeries> {
        let p = raster.n_vars();
        if p != self.weather_mean.len() {
            return Err(Error::Shape(format!(
                "statistics for {} variables, raster has {p}",
                self.weather_mean.len()
            )));
        }
        let values = raster
            .values
            .iter()
            .enumerate()
            .map(|(i, &x)| self.normalize_weather(i % p, x))
            .collect();
        RasterSeries::new(
            raster.geometry.clone(),
            raster.variables.clone(),
            raster.timestamps.clone(),
            values,
        )
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    let collected: Vec<f64> = values.collect();
    for &v in &collected {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    for &v in &collected {
        sq += (v - mean) * (v - mean);
    }
    Some((mean, (sq / n as f64).sqrt()))
}

/// Per-channel weather statistics over all cells and the weeks up to the
/// training boundary; target statistics over the training targets.
/// Standard deviations use the population (1/N) convention.
pub fn fit_normalizer(weather: &RasterSeries, target: &TargetSeries, split: &SplitIndex) -> Result<NormStats> {
    let train_values: Vec<f64> = split
        .positions(SplitSet::Train)
        .into_iter()
        .filter_map(|pos| target.values[pos])
        .collect();
    if train_values.len() < 2 {
        return Err(Error::EmptySplit(format!(
            "need at least 2 training targets to fit the normalizer, got {}",
            train_values.len()
        )));
    }
    let n_weeks = weather
        .timestamps
        .iter()
        .take_while(|d| **d <= split.train_end)
        .count();
    if n_weeks == 0 {
        return Err(Error::EmptySplit("no weather weeks inside the training period".into()));
    }
    let p = weather.n_vars();
    let frame = weather.frame_len();
    let mut weather_mean = Vec::with_capacity(p);
    let mut weather_std = Vec::with_capacity(p);
    for v in 0..p {
        let (m, s) = mean_std(weather.values[..n_weeks * frame].iter().skip(v).step_by(p).copied())
            .expect("non-empty");
        if !(s > 0.0) {
            return Err(Error::ZeroVariance(format!("weather variable {}", weather.variables[v])));
        }
        weather_mean.push(m);
        weather_std.push(s);
    }
    let (mean, std) = mean_std(train_values.iter().copied()).expect("non-empty");
    if !(std > 0.0) {
        return Err(Error::ZeroVariance("training targets".into()));
    }
    let min = train_values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = train_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(NormStats {
        weather_mean,
        weather_std,
        target: TargetStats { mean, std, min, max },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub date: NaiveDate,
    /// Weather index of the prediction date; the window is `end - T .. end`.
    pub end: usize,
    pub set: SplitSet,
    /// Normalized target.
    pub z: f64,
    /// Target in meters.
    pub y: f64,
}

/// Normalized, squared weather frames plus one sample per usable prediction date.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    pub frames: Vec<f64>,
    pub months: Vec<u32>,
    pub weather_dates: Vec<NaiveDate>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub window: usize,
    pub samples: Vec<Sample>,
    pub stats: NormStats,
    pub sensor_id: String,
}

impl WindowedDataset {
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn n_frames(&self) -> usize {
        self.months.len()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    /// The `(T, H, W, P)` input video of a sample.
    pub fn window(&self, sample: &Sample) -> &[f64] {
        let n = self.frame_len();
        &self.frames[(sample.end - self.window) * n..sample.end * n]
    }

    pub fn window_months(&self, sample: &Sample) -> &[u32] {
        &self.months[sample.end - self.window..sample.end]
    }

    pub fn indices(&self, set: SplitSet) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].set == set).collect()
    }

    pub fn count(&self, set: SplitSet) -> usize {
        self.samples.iter().filter(|s| s.set == set).count()
    }
}

/// Normalizes the weather with `stats`, pads it to `side x side` (zero equals
/// the training mean after normalization) and cuts one window per kept date.
pub fn build_windows(
    weather: &RasterSeries,
    target: &TargetSeries,
    split: &SplitIndex,
    stats: &NormStats,
    side: usize,
) -> Result<WindowedDataset> {
    let window = split.window;
    let normalized = stats.normalize_raster(weather)?;
    let squared = pad_to_square(&normalized, side)?;
    let mut samples = Vec::new();
    for (pos, (&date, m)) in split.dates.iter().zip(&split.membership).enumerate() {
        let set = match m {
            Membership::Train => SplitSet::Train,
            Membership::Val => SplitSet::Val,
            Membership::Test => SplitSet::Test,
            _ => continue,
        };
        let y = target.values[pos].ok_or_else(|| Error::Invalid(format!("kept date {date} has no target")))?;
        let end = weather.time_index(date).ok_or_else(|| {
            Error::TimestampMisalignment(format!("prediction date {date} is not a week of the weather record"))
        })?;
        if end < window {
            return Err(Error::TooShort {
                required: window,
                actual: end,
            });
        }
        samples.push(Sample {
            date,
            end,
            set,
            z: stats.normalize_target(y),
            y,
        });
    }
    Ok(WindowedDataset {
        frames: squared.values,
        months: weather.timestamps.iter().map(|d| d.month()).collect(),
        weather_dates: weather.timestamps.clone(),
        height: side,
        width: side,
        channels: weather.n_vars(),
        window,
        samples,
        stats: stats.clone(),
        sensor_id: target.sensor_id.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepConfig {
    pub window: usize,
    pub bbox: Option<BoundingBox>,
    pub square_side: Option<usize>,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
}

/// Clip, split with gaps, fit statistics and build windows in one go.
pub fn prepare_dataset(weather: &RasterSeries, target: &TargetSeries, cfg: &PrepConfig) -> Result<WindowedDataset> {
    let weather = match &cfg.bbox {
        Some(b) => clip_to_bbox(weather, b)?,
        None => weather.clone(),
    };
    let g = &weather.geometry;
    let side = cfg.square_side.unwrap_or_else(|| default_square_side(g.n_rows, g.n_cols));
    let target = restrict_to_weather(target, &weather, cfg.window);
    let split = split_with_gaps(&target, cfg.train_end, cfg.test_start, cfg.window)?;
    let stats = fit_normalizer(&weather, &target, &split)?;
    let target = target.with_stats(stats.target);
    build_windows(&weather, &target, &split, &stats, side)
}

/// Split boundaries for a synthetic case of `n_weeks` with window `T`: the
/// weeks left after the warm-up and two gaps are shared 70/10/20.
pub fn synthetic_split_dates(start: NaiveDate, n_weeks: usize, window: usize) -> Result<(NaiveDate, NaiveDate)> {
    let usable = n_weeks.saturating_sub(3 * window);
    if usable < 3 {
        return Err(Error::Invalid(format!(
            "{n_weeks} weeks leave no room for three sets with window {window}"
        )));
    }
    let n_val = (usable / 10).max(1);
    let n_train = (usable * 7 / 10).max(1);
    let train_end = window + n_train - 1;
    let test_start = train_end + 1 + window + n_val;
    Ok((
        start + Duration::weeks(train_end as i64),
        start + Duration::weeks(test_start as i64),
    ))
}
