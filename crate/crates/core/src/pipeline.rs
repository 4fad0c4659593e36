//! Per-case and batch drivers: load inputs, split arteries, measure both
//! territories and write reports.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{MaskMode, RunConfig};
use crate::error::{Error, Result};
use crate::nifti;
use crate::pcat::{measure_lpcat, measure_rpcat, split_arteries, PcatMeasurement, ProtocolParams, SplitOptions};
use crate::report::{aggregate, CaseRecord, CohortReport, Status, TerritoryRecord, SCHEMA_VERSION};
use crate::volume::{BinaryMask, Geometry, VoxelGrid};

/// One row of a batch manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseInput {
    pub case_id: String,
    pub image: PathBuf,
    pub coronary_mask: PathBuf,
    #[serde(default)]
    pub aorta_mask: Option<PathBuf>,
}

/// Everything a run was configured with that affects its numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEcho {
    pub protocol: ProtocolParams,
    pub mask_mode: MaskMode,
    pub distance_along_centerline: String,
    pub histogram_bin_width_hu: f64,
    pub sd_convention: String,
}

impl ParameterEcho {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            protocol: cfg.protocol,
            mask_mode: cfg.mask_mode,
            distance_along_centerline: "arc-length".into(),
            histogram_bin_width_hu: 5.0,
            sd_convention: "population".into(),
        }
    }
}

/// Run provenance; the only part of a report that varies between
/// identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub generated_at: String,
}

impl Metadata {
    /// Timestamp from `SOURCE_DATE_EPOCH` when set, else the clock.
    pub fn now() -> Self {
        let at = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .map(|s| UNIX_EPOCH + Duration::from_secs(s))
            .unwrap_or_else(SystemTime::now);
        Self {
            tool: "pcat".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            generated_at: humantime::format_rfc3339_seconds(at).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub schema_version: u32,
    #[serde(flatten)]
    pub case: CaseRecord,
    pub parameters: ParameterEcho,
    pub metadata: Metadata,
}

impl CaseReport {
    pub fn new(case: CaseRecord, cfg: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            case,
            parameters: ParameterEcho::new(cfg),
            metadata: Metadata::now(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Masks produced while measuring, for inspection.
#[derive(Debug, Clone, Default)]
pub struct CaseArtifacts {
    pub rca: Option<BinaryMask>,
    pub lca: Option<BinaryMask>,
    pub rpcat_region: Option<BinaryMask>,
    pub lpcat_region: Option<BinaryMask>,
    /// Centerlines, 1 = RCA and 2 = LCA.
    pub centerlines: Option<VoxelGrid<u8>>,
}

fn has_label(labels: &VoxelGrid<u32>, l: u32) -> bool {
    labels.data().iter().any(|&v| v == l)
}

/// RCA and LCA masks from a coronary label volume according to `cfg`.
pub fn artery_masks(coronary: &VoxelGrid<u32>, aorta: Option<&BinaryMask>, cfg: &RunConfig) -> Result<(BinaryMask, BinaryMask)> {
    let labeled = has_label(coronary, 1) && has_label(coronary, 2);
    let use_labels = match cfg.mask_mode {
        MaskMode::Auto => labeled,
        MaskMode::Labels if labeled => true,
        MaskMode::Labels => {
            return Err(Error::SplitFailed("label mode needs both label 1 (RCA) and label 2 (LCA)".into()))
        }
        MaskMode::Split => false,
    };
    if use_labels {
        return Ok((coronary.select(1), coronary.select(2)));
    }
    let binary = coronary.map(|&v| v != 0);
    let opts = SplitOptions {
        min_component_voxels: cfg.protocol.min_component_voxels,
        seeds: cfg.seeds(),
    };
    let split = split_arteries(&binary, aorta, &opts)?;
    Ok((split.rca, split.lca))
}

fn status_of(m: &PcatMeasurement) -> Status {
    if m.truncated {
        Status::Truncated
    } else {
        Status::Ok
    }
}

fn world(g: &Geometry, ijk: crate::volume::Ijk) -> Option<crate::volume::Point3> {
    g.index_to_world(ijk).ok()
}

/// Measure one case from in-memory volumes. Territory failures are
/// recorded, never propagated.
pub fn measure_arrays(
    case_id: &str,
    image: &VoxelGrid<f32>,
    coronary: &VoxelGrid<u32>,
    aorta: Option<&BinaryMask>,
    cfg: &RunConfig,
) -> (CaseRecord, CaseArtifacts) {
    let mut art = CaseArtifacts::default();
    let g = *image.geometry();
    let checked = g
        .ensure_same(coronary.geometry(), "image vs coronary mask")
        .and_then(|_| aorta.map_or(Ok(()), |a| g.ensure_same(a.geometry(), "image vs aorta mask")))
        .and_then(|_| cfg.validate());
    let (rca, lca) = match checked.and_then(|_| artery_masks(coronary, aorta, cfg)) {
        Ok(m) => m,
        Err(e) => return (CaseRecord::failed(case_id, &e), art),
    };
    let p = &cfg.protocol;
    let mut centerlines = VoxelGrid::filled(g, 0u8);

    let rpcat = match measure_rpcat(image, &rca, aorta, p) {
        Ok(r) => {
            for l in r.centerline.to_mask().indices() {
                centerlines.data_mut()[l] = 1;
            }
            art.rpcat_region = Some(r.region.to_mask());
            TerritoryRecord {
                status: status_of(&r.measurement),
                error: None,
                ostium_mm: world(&g, r.ostium),
                bifurcation_mm: None,
                segments_mm: [("RCA".to_string(), r.path.length_mm())].into(),
                measurement: Some(r.measurement),
            }
        }
        Err(e) => TerritoryRecord::failed(&e),
    };
    let lpcat = match measure_lpcat(image, &lca, aorta, p) {
        Ok(r) => {
            for l in r.centerline.to_mask().indices() {
                centerlines.data_mut()[l] = 2;
            }
            art.lpcat_region = Some(r.region.to_mask());
            let mut segments: std::collections::BTreeMap<String, f64> =
                [("LM".to_string(), r.lm_path.length_mm())].into();
            for (t, path) in &r.daughters {
                segments.insert(format!("{t:?}").to_uppercase(), path.length_mm());
            }
            TerritoryRecord {
                status: status_of(&r.measurement),
                error: None,
                ostium_mm: world(&g, r.ostium),
                bifurcation_mm: world(&g, r.bifurcation),
                segments_mm: segments,
                measurement: Some(r.measurement),
            }
        }
        Err(e) => TerritoryRecord::failed(&e),
    };
    art.rca = Some(rca);
    art.lca = Some(lca);
    art.centerlines = Some(centerlines);
    (CaseRecord::new(case_id, rpcat, lpcat), art)
}

/// Load and measure one case. Load failures become an io-error record.
pub fn measure_case(input: &CaseInput, cfg: &RunConfig) -> (CaseRecord, CaseArtifacts) {
    let loaded = (|| -> Result<_> {
        let image = nifti::load_volume(&input.image)?;
        let coronary = nifti::load_labels(&input.coronary_mask)?;
        let aorta = input.aorta_mask.as_ref().map(|p| nifti::load_mask(p, None)).transpose()?;
        Ok((image, coronary, aorta))
    })();
    match loaded {
        Ok((image, coronary, aorta)) => measure_arrays(&input.case_id, &image, &coronary, aorta.as_ref(), cfg),
        Err(e) => (CaseRecord::failed(&input.case_id, &e), CaseArtifacts::default()),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write `<case_id>.json` (and debug masks if configured) into `dir`.
pub fn write_case_outputs(dir: &Path, report: &CaseReport, artifacts: &CaseArtifacts, cfg: &RunConfig) -> Result<PathBuf> {
    let id = &report.case.case_id;
    let json = dir.join(format!("{id}.json"));
    write_file(&json, report.to_json().as_bytes())?;
    if cfg.emit_debug_masks {
        let masks = [
            ("rca", &artifacts.rca),
            ("lca", &artifacts.lca),
            ("rpcat_region", &artifacts.rpcat_region),
            ("lpcat_region", &artifacts.lpcat_region),
        ];
        for (name, mask) in masks {
            if let Some(m) = mask {
                nifti::save_mask(m, dir.join(format!("{id}_{name}.nii.gz")))?;
            }
        }
        if let Some(c) = &artifacts.centerlines {
            nifti::save_labels(c, dir.join(format!("{id}_centerlines.nii.gz")))?;
        }
    }
    Ok(json)
}

fn validate_case_id(id: &str) -> Result<()> {
    let bad = id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']);
    if bad {
        return Err(Error::InvalidManifest(format!("invalid case id {id:?}")));
    }
    Ok(())
}

/// Read a CSV manifest with columns `case_id, image, coronary_mask` and an
/// optional `aorta_mask`. Relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<CaseInput>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_slice());
    let mut cases = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.deserialize::<CaseInput>() {
        let mut case = row.map_err(|e| Error::InvalidManifest(format!("{}: {e}", path.display())))?;
        validate_case_id(&case.case_id)?;
        if !seen.insert(case.case_id.clone()) {
            return Err(Error::InvalidManifest(format!("duplicate case id {:?}", case.case_id)));
        }
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        case.image = resolve(&case.image);
        case.coronary_mask = resolve(&case.coronary_mask);
        case.aorta_mask = case
            .aorta_mask
            .filter(|p| !p.as_os_str().is_empty())
            .map(|p| resolve(&p));
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(Error::InvalidManifest(format!("{}: empty manifest", path.display())));
    }
    Ok(cases)
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Per-case reports sorted by case id.
    pub cases: Vec<CaseReport>,
    pub cohort: CohortReport,
}

impl BatchOutcome {
    pub fn failures(&self) -> usize {
        self.cases.iter().filter(|c| c.case.status.is_failure()).count()
    }
}

/// Measure every case on a pool of `workers` threads (all cores when
/// `None`), write per-case and cohort outputs under `out_dir` when given.
/// Case failures are recorded and do not stop the batch.
pub fn run_batch(cases: &[CaseInput], cfg: &RunConfig, out_dir: Option<&Path>) -> Result<BatchOutcome> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::InvalidManifest("empty manifest".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let case_dir = out_dir.map(|d| d.join("cases"));
    let results: Vec<Result<CaseReport>> = pool.install(|| {
        cases
            .par_iter()
            .map(|input| {
                let (record, artifacts) = measure_case(input, cfg);
                let report = CaseReport::new(record, cfg);
                if let Some(dir) = &case_dir {
                    write_case_outputs(dir, &report, &artifacts, cfg)?;
                }
                Ok(report)
            })
            .collect()
    });
    let mut reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| a.case.case_id.cmp(&b.case.case_id));
    let records: Vec<CaseRecord> = reports.iter().map(|r| r.case.clone()).collect();
    let cohort = aggregate(&records)?;
    if let Some(dir) = out_dir {
        write_cohort_outputs(dir, &cohort, &ParameterEcho::new(cfg))?;
    }
    Ok(BatchOutcome { cases: reports, cohort })
}

/// Cohort report as JSON with the parameter echo and metadata attached.
pub fn cohort_json(cohort: &CohortReport, parameters: &ParameterEcho) -> String {
    let mut v = serde_json::to_value(cohort).expect("report serializes");
    if let Value::Object(map) = &mut v {
        map.insert("parameters".into(), serde_json::to_value(parameters).expect("params serialize"));
        map.insert("metadata".into(), serde_json::to_value(Metadata::now()).expect("metadata serializes"));
    }
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

/// Write `cohort.json`, `cases.csv`, `histograms.csv` and `boxplots.csv`.
pub fn write_cohort_outputs(dir: &Path, cohort: &CohortReport, parameters: &ParameterEcho) -> Result<()> {
    write_file(&dir.join("cohort.json"), cohort_json(cohort, parameters).as_bytes())?;
    let mut buf = Vec::new();
    cohort.write_cases_csv(&mut buf)?;
    write_file(&dir.join("cases.csv"), &buf)?;
    buf.clear();
    cohort.write_histogram_csv(&mut buf)?;
    write_file(&dir.join("histograms.csv"), &buf)?;
    buf.clear();
    cohort.write_boxplot_csv(&mut buf)?;
    write_file(&dir.join("boxplots.csv"), &buf)
}

/// Read per-case JSON reports (as written by [`write_case_outputs`]).
pub fn read_case_reports(paths: &[PathBuf]) -> Result<Vec<CaseReport>> {
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidManifest(format!("{}: {e}", p.display())))
        })
        .collect()
}
