//! Per-case records, cohort statistics and their JSON/CSV renderings.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorClass, Result};
use crate::pcat::{Histogram, PcatMeasurement};
use crate::volume::{BinaryMask, Point3};

pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of one territory (or one case).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Truncated,
    IoError,
    SplitFailed,
    NoBifurcation,
    ShortCenterline,
    NoCenterline,
    ConfigInvalid,
    GeometryMismatch,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Truncated => "truncated",
            Status::IoError => "io-error",
            Status::SplitFailed => "split-failed",
            Status::NoBifurcation => "no-bifurcation",
            Status::ShortCenterline => "short-centerline",
            Status::NoCenterline => "no-centerline",
            Status::ConfigInvalid => "config-invalid",
            Status::GeometryMismatch => "geometry-mismatch",
        }
    }

    pub fn is_failure(self) -> bool {
        !matches!(self, Status::Ok | Status::Truncated)
    }
}

impl From<ErrorClass> for Status {
    fn from(c: ErrorClass) -> Self {
        match c {
            ErrorClass::Io => Status::IoError,
            ErrorClass::SplitFailed => Status::SplitFailed,
            ErrorClass::NoBifurcation => Status::NoBifurcation,
            ErrorClass::ShortCenterline => Status::ShortCenterline,
            ErrorClass::NoCenterline => Status::NoCenterline,
            ErrorClass::ConfigInvalid => Status::ConfigInvalid,
            ErrorClass::GeometryMismatch => Status::GeometryMismatch,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result for one territory of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerritoryRecord {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<PcatMeasurement>,
    /// World position of the detected ostium.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ostium_mm: Option<Point3>,
    /// World position of the LM bifurcation (left side only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bifurcation_mm: Option<Point3>,
    /// Arc length of each swept centerline piece, by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub segments_mm: BTreeMap<String, f64>,
}

impl TerritoryRecord {
    pub fn failed(err: &Error) -> Self {
        Self {
            status: err.class().into(),
            error: Some(err.to_string()),
            measurement: None,
            ostium_mm: None,
            bifurcation_mm: None,
            segments_mm: BTreeMap::new(),
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.status == Status::Ok)
            .then_some(self.measurement.as_ref()?.mean_attenuation_hu)
            .flatten()
    }

    fn volume(&self) -> Option<f64> {
        (self.status == Status::Ok).then_some(self.measurement.as_ref()?.volume_ml)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub status: Status,
    pub rpcat: TerritoryRecord,
    pub lpcat: TerritoryRecord,
}

impl CaseRecord {
    /// Case status is the worse of the two territories (failure over
    /// truncation over ok), the right side winning ties.
    pub fn new(case_id: impl Into<String>, rpcat: TerritoryRecord, lpcat: TerritoryRecord) -> Self {
        let rank = |s: Status| match s {
            Status::Ok => 0,
            Status::Truncated => 1,
            _ => 2,
        };
        let status = if rank(lpcat.status) > rank(rpcat.status) {
            lpcat.status
        } else {
            rpcat.status
        };
        Self {
            case_id: case_id.into(),
            status,
            rpcat,
            lpcat,
        }
    }

    /// Both territories failed with the same error.
    pub fn failed(case_id: impl Into<String>, err: &Error) -> Self {
        Self::new(case_id, TerritoryRecord::failed(err), TerritoryRecord::failed(err))
    }
}

/// Sørensen-Dice overlap. Two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.geometry().ensure_same(b.geometry(), "dice operands")?;
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as u64;
        nb += y as u64;
        both += (x && y) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Squared Pearson correlation. `None` for fewer than two pairs, unequal
/// lengths or zero variance in either series.
pub fn pearson_r2(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

/// Mean, population standard deviation and five-number summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty series. Quartiles interpolate linearly between
    /// order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            n: values.len(),
            mean,
            sd: var.sqrt(),
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerritoryStats {
    /// Territories with status ok.
    pub n_ok: usize,
    pub status_counts: BTreeMap<Status, usize>,
    pub attenuation_hu: Option<Summary>,
    pub volume_ml: Option<Summary>,
    /// Pooled in-window HU histogram over ok territories.
    pub histogram: Option<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub rpcat_vs_lpcat_attenuation: Option<f64>,
    pub rpcat_attenuation_vs_volume: Option<f64>,
    pub lpcat_attenuation_vs_volume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub schema_version: u32,
    pub n_cases: usize,
    /// Case-level status tally; sums to `n_cases`.
    pub status_counts: BTreeMap<Status, usize>,
    pub sd_convention: String,
    pub rpcat: TerritoryStats,
    pub lpcat: TerritoryStats,
    pub r2: Correlations,
    pub cases: Vec<CaseRecord>,
}

fn territory_stats<'a>(records: impl Iterator<Item = &'a TerritoryRecord>) -> Result<TerritoryStats> {
    let mut counts = BTreeMap::new();
    let (mut att, mut vol) = (Vec::new(), Vec::new());
    let mut histogram: Option<Histogram> = None;
    let mut n_ok = 0;
    for r in records {
        *counts.entry(r.status).or_insert(0) += 1;
        if r.status != Status::Ok {
            continue;
        }
        n_ok += 1;
        if let Some(m) = r.mean() {
            att.push(m);
        }
        if let Some(v) = r.volume() {
            vol.push(v);
        }
        if let Some(m) = &r.measurement {
            match &mut histogram {
                Some(h) => h.merge(&m.histogram)?,
                None => histogram = Some(m.histogram.clone()),
            }
        }
    }
    Ok(TerritoryStats {
        n_ok,
        status_counts: counts,
        attenuation_hu: Summary::of(&att),
        volume_ml: Summary::of(&vol),
        histogram,
    })
}

fn paired(records: &[CaseRecord], f: impl Fn(&CaseRecord) -> (Option<f64>, Option<f64>)) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|c| match f(c) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        })
        .unzip();
    pearson_r2(&x, &y)
}

/// Cohort statistics over ok territories; every other status is only
/// tallied. Records are sorted by case id first so the result does not
/// depend on input order.
pub fn aggregate(records: &[CaseRecord]) -> Result<CohortReport> {
    if records.is_empty() {
        return Err(Error::InvalidManifest("no case records to aggregate".into()));
    }
    let mut cases = records.to_vec();
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut status_counts = BTreeMap::new();
    for c in &cases {
        *status_counts.entry(c.status).or_insert(0) += 1;
    }
    let rpcat = territory_stats(cases.iter().map(|c| &c.rpcat))?;
    let lpcat = territory_stats(cases.iter().map(|c| &c.lpcat))?;
    let r2 = Correlations {
        rpcat_vs_lpcat_attenuation: paired(&cases, |c| (c.rpcat.mean(), c.lpcat.mean())),
        rpcat_attenuation_vs_volume: paired(&cases, |c| (c.rpcat.mean(), c.rpcat.volume())),
        lpcat_attenuation_vs_volume: paired(&cases, |c| (c.lpcat.mean(), c.lpcat.volume())),
    };
    Ok(CohortReport {
        schema_version: SCHEMA_VERSION,
        n_cases: cases.len(),
        status_counts,
        sd_convention: "population".into(),
        rpcat,
        lpcat,
        r2,
        cases,
    })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::InvalidManifest(format!("{other:?}")),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CohortReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per case.
    pub fn write_cases_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["case_id".to_string(), "status".into()];
        for t in ["rpcat", "lpcat"] {
            for f in ["status", "mean_hu", "volume_ml", "voxel_count", "truncated", "error"] {
                header.push(format!("{t}_{f}"));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for c in &self.cases {
            let mut row = vec![c.case_id.clone(), c.status.to_string()];
            for t in [&c.rpcat, &c.lpcat] {
                let m = t.measurement.as_ref();
                row.push(t.status.to_string());
                row.push(opt(m.and_then(|m| m.mean_attenuation_hu)));
                row.push(opt(m.map(|m| m.volume_ml)));
                row.push(m.map(|m| m.voxel_count.to_string()).unwrap_or_default());
                row.push(m.map(|m| m.truncated.to_string()).unwrap_or_default());
                row.push(t.error.clone().unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Pooled histogram bins per territory.
    pub fn write_histogram_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["territory", "bin_lo_hu", "bin_hi_hu", "count"]).map_err(csv_err)?;
        for (name, stats) in [("RPCAT", &self.rpcat), ("LPCAT", &self.lpcat)] {
            if let Some(h) = &stats.histogram {
                for (i, count) in h.counts.iter().enumerate() {
                    let (lo, hi) = h.bin_edges(i);
                    w.write_record([name.to_string(), lo.to_string(), hi.to_string(), count.to_string()])
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Box-plot summaries per territory and quantity.
    pub fn write_boxplot_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["territory", "quantity", "n", "mean", "sd", "min", "q1", "median", "q3", "max"])
            .map_err(csv_err)?;
        for (name, stats) in [("RPCAT", &self.rpcat), ("LPCAT", &self.lpcat)] {
            for (q, s) in [("attenuation_hu", &stats.attenuation_hu), ("volume_ml", &stats.volume_ml)] {
                if let Some(s) = s {
                    let vals = [s.mean, s.sd, s.min, s.q1, s.median, s.q3, s.max];
                    let mut row = vec![name.to_string(), q.to_string(), s.n.to_string()];
                    row.extend(vals.iter().map(|v| v.to_string()));
                    w.write_record(&row).map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}
