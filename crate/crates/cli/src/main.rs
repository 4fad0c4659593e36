//! `pcat`: pericoronary adipose tissue measurement from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcat_core::config::{MaskMode, RunConfig};
use pcat_core::nifti;
use pcat_core::pcat::{split_arteries, DaughterBudget, HuWindow, RegionMode, SplitOptions};
use pcat_core::phantom::{render, PhantomSpec};
use pcat_core::pipeline::{
    self, read_case_reports, read_manifest, run_batch, CaseInput, CaseReport, ParameterEcho,
};
use pcat_core::report::{aggregate, Status};
use pcat_core::{Error, ErrorClass};

/// Exit status for a case whose measurement failed (split, centerline or
/// bifurcation errors).
const EXIT_MEASUREMENT: u8 = 4;

#[derive(Parser)]
#[command(name = "pcat", version, about = "Pericoronary adipose tissue attenuation and volume from CCTA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure RPCAT and LPCAT for one case.
    Measure(MeasureArgs),
    /// Measure every case of a CSV manifest and aggregate a cohort report.
    Batch(BatchArgs),
    /// Split a coronary mask into RCA (label 1) and LCA (label 2).
    Split(SplitArgs),
    /// Write a synthetic phantom (image, coronary mask, aorta mask, spec).
    Phantom(PhantomArgs),
    /// Aggregate per-case JSON reports into cohort tables.
    Report(ReportArgs),
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML configuration file; command-line flags override it.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Arc length skipped distal to the RCA ostium (mm).
    #[arg(long)]
    skip_mm: Option<f64>,
    /// Measured segment length (mm).
    #[arg(long)]
    segment_mm: Option<f64>,
    /// Lower HU bound of the fat window (inclusive).
    #[arg(long)]
    hu_lo: Option<f64>,
    /// Upper HU bound of the fat window (inclusive).
    #[arg(long)]
    hu_hi: Option<f64>,
    /// Centerline spurs shorter than this are pruned (mm).
    #[arg(long)]
    spur_mm: Option<f64>,
    /// Search length for the LM bifurcation (mm).
    #[arg(long)]
    lm_search_mm: Option<f64>,
    #[arg(long, value_enum)]
    region_mode: Option<RegionModeArg>,
    /// Margin beyond the wall in fixed-annulus mode (mm).
    #[arg(long)]
    annulus_mm: Option<f64>,
    #[arg(long, value_enum)]
    daughter_budget: Option<BudgetArg>,
    /// Minimum voxels for a component to count as an artery.
    #[arg(long)]
    min_component_voxels: Option<usize>,
    #[arg(long, value_enum)]
    mask_mode: Option<MaskModeArg>,
    /// RCA seed point "x,y,z" in world mm for the artery split.
    #[arg(long, value_parser = parse_point)]
    rca_seed: Option<[f64; 3]>,
    /// LCA seed point "x,y,z" in world mm for the artery split.
    #[arg(long, value_parser = parse_point)]
    lca_seed: Option<[f64; 3]>,
    /// Also write region, artery and centerline masks.
    #[arg(long)]
    emit_debug_masks: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionModeArg {
    SphereOfDiameter,
    FixedAnnulus,
}

#[derive(Clone, Copy, ValueEnum)]
enum BudgetArg {
    PerBranch,
    Shared,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskModeArg {
    Auto,
    Labels,
    Split,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct MeasureArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    /// Coronary mask: labels 1/2 or a binary mask to split.
    #[arg(long)]
    coronary_mask: Option<PathBuf>,
    #[arg(long)]
    aorta_mask: Option<PathBuf>,
    /// Directory for `<case-id>.json`; the report goes to stdout when absent.
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    /// Case identifier; defaults to the image file name without extension.
    #[arg(long)]
    case_id: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct BatchArgs {
    /// CSV with columns case_id, image, coronary_mask[, aorta_mask].
    #[arg(long, short = 'm')]
    manifest: PathBuf,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "PCAT_WORKERS")]
    workers: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SplitArgs {
    #[arg(long)]
    coronary_mask: PathBuf,
    #[arg(long)]
    aorta_mask: Option<PathBuf>,
    /// Output label volume (1 = RCA, 2 = LCA).
    #[arg(long, short = 'o')]
    output: PathBuf,
    #[arg(long, default_value_t = 100)]
    min_component_voxels: usize,
    #[arg(long, value_parser = parse_point, requires = "lca_seed")]
    rca_seed: Option<[f64; 3]>,
    #[arg(long, value_parser = parse_point, requires = "rca_seed")]
    lca_seed: Option<[f64; 3]>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    /// Straight tube along z.
    Straight,
    /// Left main splitting into two daughters.
    Y,
    /// Aorta with a right and a branching left artery.
    Pair,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct PhantomArgs {
    #[arg(long, value_enum, default_value = "pair", conflicts_with = "spec")]
    kind: PhantomKind,
    /// JSON phantom specification instead of a built-in kind.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Isotropic voxel spacing (mm) for built-in kinds.
    #[arg(long, default_value_t = 0.5)]
    spacing: f64,
    /// Vessel length for the straight kind (mm).
    #[arg(long, default_value_t = 60.0)]
    length_mm: f64,
    /// Background HU override.
    #[arg(long)]
    hu_background: Option<f64>,
    /// Fat HU override.
    #[arg(long)]
    hu_fat: Option<f64>,
    #[arg(long, short = 'o')]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-case JSON files, or directories containing them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short = 'o')]
    output_dir: PathBuf,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated numbers".to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> pcat_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let p = &mut cfg.protocol;
        set(&mut p.skip_mm, self.skip_mm);
        set(&mut p.segment_mm, self.segment_mm);
        set(&mut p.spur_mm, self.spur_mm);
        set(&mut p.lm_search_mm, self.lm_search_mm);
        set(&mut p.annulus_mm, self.annulus_mm);
        set(&mut p.min_component_voxels, self.min_component_voxels);
        if self.hu_lo.is_some() || self.hu_hi.is_some() {
            p.window = HuWindow::new(self.hu_lo.unwrap_or(p.window.lo), self.hu_hi.unwrap_or(p.window.hi))?;
        }
        if let Some(m) = self.region_mode {
            p.region_mode = match m {
                RegionModeArg::SphereOfDiameter => RegionMode::SphereOfDiameter,
                RegionModeArg::FixedAnnulus => RegionMode::FixedAnnulus,
            };
        }
        if let Some(b) = self.daughter_budget {
            p.daughter_budget = match b {
                BudgetArg::PerBranch => DaughterBudget::PerBranch,
                BudgetArg::Shared => DaughterBudget::Shared,
            };
        }
        if let Some(m) = self.mask_mode {
            cfg.mask_mode = match m {
                MaskModeArg::Auto => MaskMode::Auto,
                MaskModeArg::Labels => MaskMode::Labels,
                MaskModeArg::Split => MaskMode::Split,
            };
        }
        if self.rca_seed.is_some() {
            cfg.rca_seed = self.rca_seed;
        }
        if self.lca_seed.is_some() {
            cfg.lca_seed = self.lca_seed;
        }
        cfg.emit_debug_masks |= self.emit_debug_masks;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Io => 2,
        ErrorClass::ConfigInvalid => 3,
        _ => EXIT_MEASUREMENT,
    }
}

fn report_error(class: &str, message: &str) {
    let line = serde_json::json!({ "error_class": class, "message": message });
    eprintln!("{line}");
}

fn fail(err: &Error) -> ExitCode {
    let class = err.class();
    report_error(class.as_str(), &err.to_string());
    ExitCode::from(exit_code(class))
}

fn required(value: Option<PathBuf>, name: &str) -> pcat_core::Result<PathBuf> {
    value.ok_or_else(|| Error::InvalidConfig(format!("missing {name} (flag or config file)")))
}

fn case_id_from(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".gz").unwrap_or(&name);
    stem.strip_suffix(".nii").unwrap_or(stem).to_string()
}

fn cmd_measure(args: MeasureArgs) -> pcat_core::Result<ExitCode> {
    let mut cfg = args.config.resolve()?;
    set(&mut cfg.image, args.image.map(Some));
    set(&mut cfg.coronary_mask, args.coronary_mask.map(Some));
    set(&mut cfg.aorta_mask, args.aorta_mask.map(Some));
    set(&mut cfg.output_dir, args.output_dir.map(Some));
    let image = required(cfg.image.clone(), "--image")?;
    let input = CaseInput {
        case_id: args.case_id.unwrap_or_else(|| case_id_from(&image)),
        image,
        coronary_mask: required(cfg.coronary_mask.clone(), "--coronary-mask")?,
        aorta_mask: cfg.aorta_mask.clone(),
    };
    let (record, artifacts) = pipeline::measure_case(&input, &cfg);
    let report = CaseReport::new(record, &cfg);
    match &cfg.output_dir {
        Some(dir) => {
            let path = pipeline::write_case_outputs(dir, &report, &artifacts, &cfg)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", report.to_json()),
    }
    let case = &report.case;
    if !case.status.is_failure() {
        return Ok(ExitCode::SUCCESS);
    }
    // first failing territory decides the error class
    let failed = [("RPCAT", &case.rpcat), ("LPCAT", &case.lpcat)]
        .into_iter()
        .find(|(_, t)| t.status.is_failure())
        .expect("a failing territory");
    let message = format!("{}: {}", failed.0, failed.1.error.as_deref().unwrap_or(""));
    report_error(failed.1.status.as_str(), &message);
    Ok(ExitCode::from(match failed.1.status {
        Status::IoError => 2,
        Status::ConfigInvalid => 3,
        _ => EXIT_MEASUREMENT,
    }))
}

fn cmd_batch(args: BatchArgs) -> pcat_core::Result<ExitCode> {
    let mut cfg = args.config.resolve()?;
    set(&mut cfg.workers, args.workers.map(Some));
    set(&mut cfg.output_dir, args.output_dir.map(Some));
    cfg.validate()?;
    let cases = read_manifest(&args.manifest)?;
    let out = run_batch(&cases, &cfg, cfg.output_dir.as_deref())?;
    let failures = out.failures();
    for c in out.cases.iter().filter(|c| c.case.status.is_failure()) {
        eprintln!("warning: case {} failed: {}", c.case.case_id, c.case.status);
    }
    eprintln!("{} cases, {} ok, {} warnings", out.cases.len(), out.cases.len() - failures, failures);
    if cfg.output_dir.is_none() {
        print!("{}", pipeline::cohort_json(&out.cohort, &ParameterEcho::new(&cfg)));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_split(args: SplitArgs) -> pcat_core::Result<ExitCode> {
    let coronary = nifti::load_mask(&args.coronary_mask, None)?;
    let aorta = args.aorta_mask.as_ref().map(|p| nifti::load_mask(p, None)).transpose()?;
    let opts = SplitOptions {
        min_component_voxels: args.min_component_voxels,
        seeds: args.rca_seed.zip(args.lca_seed),
    };
    let split = split_arteries(&coronary, aorta.as_ref(), &opts)?;
    nifti::save_labels(&split.labels(), &args.output)?;
    let g = coronary.geometry();
    let summary = serde_json::json!({
        "rca_voxels": split.rca.count(),
        "lca_voxels": split.lca.count(),
        "rca_ostium_mm": g.index_to_world(split.rca_ostium)?,
        "lca_ostium_mm": g.index_to_world(split.lca_ostium)?,
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_phantom(args: PhantomArgs) -> pcat_core::Result<ExitCode> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| Error::InvalidPhantom(format!("{}: {e}", p.display())))?
        }
        None => match args.kind {
            PhantomKind::Straight => {
                let margin = 8.0;
                let n_xy = (2.0 * margin / args.spacing).ceil() as usize + 1;
                let n_z = ((args.length_mm + 2.0 * margin) / args.spacing).ceil() as usize + 1;
                PhantomSpec::straight_z([n_xy, n_xy, n_z], args.spacing, args.length_mm, margin)
            }
            PhantomKind::Y => PhantomSpec::y_branch(args.spacing, 10.0, 50.0, 35.0, 8.0),
            PhantomKind::Pair => PhantomSpec::artery_pair(args.spacing),
        },
    };
    set(&mut spec.hu_background, args.hu_background);
    set(&mut spec.hu_fat, args.hu_fat);
    let ph = render(&spec)?;
    let dir = &args.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    nifti::save_volume(&ph.image, dir.join("image.nii.gz"))?;
    nifti::save_mask(&ph.vessel_mask, dir.join("coronary.nii.gz"))?;
    nifti::save_mask(&ph.aorta_mask, dir.join("aorta.nii.gz"))?;
    let spec_path = dir.join("spec.json");
    let json = serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n";
    std::fs::write(&spec_path, json).map_err(|e| Error::Io {
        path: spec_path,
        source: e,
    })?;
    eprintln!("wrote phantom to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> pcat_core::Result<ExitCode> {
    let mut files = Vec::new();
    for input in &args.inputs {
        if input.is_dir() {
            let entries = std::fs::read_dir(input).map_err(|e| Error::Io {
                path: input.clone(),
                source: e,
            })?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    let reports = read_case_reports(&files)?;
    let parameters = match reports.first() {
        Some(r) => r.parameters.clone(),
        None => return Err(Error::InvalidManifest("no case reports found".into())),
    };
    if reports.iter().any(|r| r.parameters != parameters) {
        eprintln!("warning: case reports were produced with differing parameters");
    }
    let records: Vec<_> = reports.into_iter().map(|r| r.case).collect();
    let cohort = aggregate(&records)?;
    pipeline::write_cohort_outputs(&args.output_dir, &cohort, &parameters)?;
    eprintln!("aggregated {} cases into {}", cohort.n_cases, args.output_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Measure(a) => cmd_measure(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Split(a) => cmd_split(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}
