//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::*;
use pcat_core::config::RunConfig;
use pcat_core::morphology::{distance_transform, skeletonize};
use pcat_core::nifti;
use pcat_core::pcat::{
    measure, measure_lpcat, measure_rpcat, split_arteries, HuWindow, PcatRegion, ProtocolParams, SplitOptions,
};
use pcat_core::phantom::{render, PhantomSpec};
use pcat_core::pipeline::{measure_arrays, run_batch, CaseInput};
use pcat_core::report::{dice, pearson_r2, Status};
use pcat_core::volume::{BinaryMask, Geometry, Ijk, VoxelGrid};
use pcat_core::ErrorClass;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn large_straight_spec() -> PhantomSpec {
    PhantomSpec::straight_z([256, 256, 256], 0.5, 110.0, 8.0)
}

/// Endpoint of a curve mask with the largest z (then largest x, then the
/// smallest linear index).
fn top_endpoint(curve: &BinaryMask) -> Ijk {
    let g = *curve.geometry();
    let mut best: Option<Ijk> = None;
    for l in curve.indices() {
        let p = g.ijk(l);
        let mut n = 0;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx, dy, dz) != (0, 0, 0) {
                        if let Some(q) = g.offset(p, [dx, dy, dz]) {
                            n += curve.get(q) as usize;
                        }
                    }
                }
            }
        }
        if n != 1 {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => (p[2], p[0]) > (b[2], b[0]),
        };
        if better {
            best = Some(p);
        }
    }
    best.expect("curve has an endpoint")
}

fn criterion_1() -> Outcome {
    let spec = large_straight_spec();
    let t0 = Instant::now();
    let ph = render(&spec).map_err(|e| e.to_string())?;
    let render_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let r = measure_rpcat(&ph.image, &ph.vessel_mask, None, &ProtocolParams::default()).map_err(|e| e.to_string())?;
    let secs = t1.elapsed().as_secs_f64();
    let mean = r.measurement.mean_attenuation_hu.ok_or("no fat voxels selected")?;
    ensure!((mean - (-100.0)).abs() <= 1e-6, "mean {mean} HU");
    ensure!(secs < 10.0, "measure_rpcat took {secs:.2} s");
    Ok(format!(
        "mean {mean:.6} HU over {} voxels; measure_rpcat {secs:.2} s on 256^3 (render {render_s:.2} s)",
        r.measurement.voxel_count
    ))
}

fn criterion_2() -> Outcome {
    let spec = large_straight_spec();
    let ph = render(&spec).map_err(|e| e.to_string())?;
    let params = ProtocolParams::default();
    let r = measure_rpcat(&ph.image, &ph.vessel_mask, None, &params).map_err(|e| e.to_string())?;
    let g = *ph.image.geometry();

    // oracle: walk the thinned curve from its top end, window by arc length,
    // brute-force radii and sphere membership
    let curve = skeletonize(&ph.vessel_mask);
    let walk = walk_curve(&curve, top_endpoint(&curve));
    let window = arc_window(&walk, params.skip_mm, params.segment_mm);
    let points: Vec<Ijk> = window.iter().map(|w| w.0).collect();
    ensure!(points == r.path.points, "path differs: oracle {} points, production {}", points.len(), r.path.len());
    let radii: Vec<f64> = points.iter().map(|&p| brute_radius_at(&ph.vessel_mask, p)).collect();
    ensure!(radii == r.path.radius, "radii differ");
    let oracle = brute_sweep(&g, &points, &radii, 2.0);
    let production: BTreeSet<usize> = r.region.voxels.iter().copied().collect();
    let missing = oracle.difference(&production).count();
    let extra = production.difference(&oracle).count();
    ensure!(missing == 0 && extra == 0, "region differs: {missing} missing, {extra} extra");

    let hu = params.window;
    let (count, mean) = window_stats(&ph.image, oracle.iter().copied(), hu.lo, hu.hi);
    let oracle_ml = count as f64 * g.voxel_volume_mm3() / 1000.0;
    ensure!(count == r.measurement.voxel_count, "fat count {count} vs {}", r.measurement.voxel_count);
    ensure!(oracle_ml == r.measurement.volume_ml, "volume {oracle_ml} vs {}", r.measurement.volume_ml);
    ensure!(mean == r.measurement.mean_attenuation_hu, "mean differs");
    Ok(format!(
        "region {} voxels identical to oracle; fat {} voxels, {:.6} ml both",
        oracle.len(),
        count,
        oracle_ml
    ))
}

fn criterion_3() -> Outcome {
    let spec = PhantomSpec::y_branch(0.5, 10.0, 50.0, 35.0, 8.0);
    let ph = render(&spec).map_err(|e| e.to_string())?;
    let g = *ph.image.geometry();
    let r = measure_lpcat(&ph.image, &ph.vessel_mask, None, &ProtocolParams::default()).map_err(|e| e.to_string())?;

    let analytic = spec.vessels[0][1];
    let b = g.index_to_world(r.bifurcation).unwrap();
    let off_vox = (0..3).map(|a| ((b[a] - analytic[a]) / g.spacing[a]).powi(2)).sum::<f64>().sqrt();
    ensure!(off_vox <= 2.0, "bifurcation {off_vox:.2} voxels from the analytic point");

    // every lumen voxel along the LM segment lies in the region
    let (top, bp) = (spec.vessels[0][0], spec.vessels[0][1]);
    let region: BTreeSet<usize> = r.region.voxels.iter().copied().collect();
    let mut lm_voxels = 0;
    for l in ph.vessel_mask.indices() {
        let w = world(&g, g.ijk(l));
        let t = (top[2] - w[2]) / (top[2] - bp[2]);
        let radial = ((w[0] - top[0]).powi(2) + (w[1] - top[1]).powi(2)).sqrt();
        if (0.0..=1.0).contains(&t) && radial <= spec.lumen_radius_mm {
            lm_voxels += 1;
            ensure!(region.contains(&l), "LM lumen voxel {:?} not covered", g.ijk(l));
        }
    }

    // arc-length audit: re-sum world steps of each swept daughter path
    let mut lengths = Vec::new();
    ensure!(r.daughters.len() == 2, "{} daughters", r.daughters.len());
    for (t, path) in &r.daughters {
        let resummed: f64 = path.points.windows(2).map(|w| dist_sq(&g, w[0], w[1]).sqrt()).sum();
        ensure!((resummed - path.length_mm()).abs() < 1e-9, "{t:?} arc bookkeeping off");
        ensure!((resummed - 40.0).abs() <= 1.0, "{t:?} daughter swept over {resummed:.3} mm");
        ensure!(path.points[0] == r.bifurcation, "{t:?} does not start at the bifurcation");
        lengths.push(format!("{t:?} {resummed:.3} mm"));
    }
    ensure!(
        r.lm_path.points.first() == Some(&r.ostium) && r.lm_path.points.last() == Some(&r.bifurcation),
        "LM path does not run ostium to bifurcation"
    );
    Ok(format!(
        "bifurcation {off_vox:.2} voxels from analytic; {lm_voxels} LM lumen voxels covered; {}",
        lengths.join(", ")
    ))
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let g = Geometry::isotropic([12, 12, 12], 0.5).unwrap();
    let window = HuWindow::FAT;
    let specials = [-190.0f32, -30.0, -29.999, -190.001, -29.0, -191.0];
    for trial in 0..100 {
        let mut data: Vec<f32> = (0..g.len())
            .map(|_| match r.random_range(0..4) {
                0 => specials[r.random_range(0..specials.len())],
                1 => r.random_range(-190.0f32..=-30.0),
                _ => r.random_range(-1000.0f32..1000.0),
            })
            .collect();
        // at least one exact bound of each kind inside the region
        data[0] = -190.0;
        data[1] = -30.0;
        let image = VoxelGrid::from_vec(g, data).unwrap();
        let mut voxels: Vec<usize> = (2..g.len()).filter(|_| r.random_bool(0.5)).collect();
        voxels.extend([0, 1]);
        voxels.sort_unstable();
        let region = PcatRegion {
            geometry: g,
            voxels: voxels.clone(),
            parts: Vec::new(),
        };
        let m = measure(&region, &image, window).map_err(|e| e.to_string())?;
        let (n, mean) = window_stats(&image, voxels.iter().copied(), window.lo, window.hi);
        ensure!(m.voxel_count == n, "trial {trial}: count {} vs oracle {n}", m.voxel_count);
        let (a, b) = (m.mean_attenuation_hu.unwrap(), mean.unwrap());
        ensure!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "trial {trial}: mean {a} vs oracle {b}");
        ensure!(m.histogram.total() == n, "trial {trial}: histogram total");
        ensure!((window.lo..=window.hi).contains(&a), "trial {trial}: mean {a} outside window");

        // scrambling every out-of-window value changes nothing
        let scrambled = image.map(|&v| if window.contains(v as f64) { v } else { -v.signum() * 5000.0 - 1.0 });
        let m2 = measure(&region, &scrambled, window).map_err(|e| e.to_string())?;
        ensure!(m2 == m, "trial {trial}: out-of-window values influenced the result");
    }
    let boundary = |hu: f32| {
        let image = VoxelGrid::from_vec(g, vec![hu; g.len()]).unwrap();
        let region = PcatRegion {
            geometry: g,
            voxels: vec![0],
            parts: Vec::new(),
        };
        measure(&region, &image, window).unwrap().voxel_count
    };
    ensure!(boundary(-190.0) == 1 && boundary(-30.0) == 1, "closed bounds not included");
    ensure!(boundary(-29.0) == 0 && boundary(-191.0) == 0, "values outside included");
    Ok("100 random images match the window oracle; -190 and -30 included, -29 and -191 excluded".into())
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let mut voxels = 0;
    for trial in 0..50 {
        let dims = [0, 1, 2].map(|_| r.random_range(1..=20usize));
        let spacing = dyadic_spacing(&mut r);
        let g = Geometry::new(dims, spacing, [0.0; 3]).unwrap();
        let density = r.random_range(0.3..0.98);
        let data: Vec<bool> = (0..g.len()).map(|_| r.random_bool(density)).collect();
        let mask = BinaryMask::from_vec(g, data).unwrap();
        let fast = distance_transform(&mask);
        let brute = brute_edt(&mask);
        for (l, (&a, &b)) in fast.data().iter().zip(&brute).enumerate() {
            ensure!(a == b, "trial {trial} dims {dims:?} spacing {spacing:?} voxel {:?}: {a} vs {b}", g.ijk(l));
        }
        voxels += g.len();
    }
    Ok(format!("50 random anisotropic grids ({voxels} voxels) equal to all-pairs brute force"))
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    for trial in 0..50 {
        let dims = [0, 1, 2].map(|_| r.random_range(4..=16usize));
        let spacing = dyadic_spacing(&mut r);
        let blob = random_blobs(&mut r, dims, spacing);
        let skel = skeletonize(&blob);
        ensure!(
            skel.indices().iter().all(|&l| blob.data()[l]),
            "trial {trial}: skeleton not a subset"
        );
        let (a, b) = (count_components26(&blob), count_components26(&skel));
        ensure!(a == b, "trial {trial}: {a} components became {b}");
    }
    for trial in 0..50 {
        let dims = [0, 1, 2].map(|_| r.random_range(5..=16usize));
        let spacing = dyadic_spacing(&mut r);
        let curve = random_thin_curve(&mut r, dims, spacing, 40);
        ensure!(skeletonize(&curve) == curve, "curve trial {trial} ({} voxels) was altered", curve.count());
    }
    Ok("50 blobs: subset with preserved 26-components; 50 thin curves unchanged".into())
}

fn rasterize_lumen(spec: &PhantomSpec, lines: &[Vec<[f64; 3]>], aorta: &BinaryMask) -> BinaryMask {
    let single = PhantomSpec {
        vessels: lines.to_vec(),
        branches: Vec::new(),
        ..spec.clone()
    };
    let g = spec.geometry().unwrap();
    let mut m = BinaryMask::empty(g);
    for l in 0..g.len() {
        let p = g.ijk(l);
        if !aorta.get(p) && single.distance_to_vessels(world(&g, p)) <= spec.lumen_radius_mm {
            m.set(p, true);
        }
    }
    m
}

fn criterion_7() -> Outcome {
    let spec = PhantomSpec::artery_pair(0.5);
    let ph = render(&spec).map_err(|e| e.to_string())?;
    let truth_rca = rasterize_lumen(&spec, &spec.vessels[..1], &ph.aorta_mask);
    let mut left = vec![spec.vessels[1].clone()];
    left.extend(spec.branches.iter().cloned());
    let truth_lca = rasterize_lumen(&spec, &left, &ph.aorta_mask);

    let opts = SplitOptions::default();
    let with_aorta = split_arteries(&ph.vessel_mask, Some(&ph.aorta_mask), &opts).map_err(|e| e.to_string())?;
    ensure!(with_aorta.rca == truth_rca, "RCA mask differs from the right vessel");
    ensure!(with_aorta.lca == truth_lca, "LCA mask differs from the left tree");
    let without = split_arteries(&ph.vessel_mask, None, &opts).map_err(|e| e.to_string())?;
    ensure!(without.rca == truth_rca && without.lca == truth_lca, "assignment without aorta differs");

    // bridge the two trees into one component
    let mut merged_spec = spec.clone();
    merged_spec.branches.push(vec![spec.vessels[0][2], spec.vessels[1][2]]);
    let merged = render(&merged_spec).map_err(|e| e.to_string())?;
    let err = split_arteries(&merged.vessel_mask, Some(&merged.aorta_mask), &opts)
        .err()
        .ok_or("merged phantom split without error")?;
    ensure!(err.class() == ErrorClass::SplitFailed, "error class {}", err.class());
    ensure!(err.to_string().starts_with("component split failed"), "message {err}");
    let coronary = merged.vessel_mask.map(|&v| v as u32);
    let (rec, _) = measure_arrays("merged", &merged.image, &coronary, Some(&merged.aorta_mask), &RunConfig::default());
    ensure!(rec.status == Status::SplitFailed, "pipeline status {}", rec.status);
    Ok(format!(
        "RCA {} / LCA {} voxels match analytic laterality; merged phantom -> {}",
        truth_rca.count(),
        truth_lca.count(),
        err.class()
    ))
}

fn criterion_8() -> Outcome {
    // 46 mm vessel: shorter than skip + length = 50 mm
    let spec = PhantomSpec::straight_z([40, 40, 125], 0.5, 46.0, 8.0);
    let ph = render(&spec).map_err(|e| e.to_string())?;
    let run = |skip: f64| {
        let p = ProtocolParams {
            skip_mm: skip,
            ..ProtocolParams::default()
        };
        measure_rpcat(&ph.image, &ph.vessel_mask, None, &p).map_err(|e| e.to_string())
    };
    let (r10, r0) = (run(10.0)?, run(0.0)?);
    ensure!(
        r0.region.len() > r10.region.len(),
        "skip 0 region {} not larger than skip 10 region {}",
        r0.region.len(),
        r10.region.len()
    );
    ensure!(r10.measurement.truncated, "skip 10 on a 46 mm vessel not flagged truncated");
    ensure!(!r0.measurement.truncated, "skip 0 flagged truncated");

    let long = render(&PhantomSpec::straight_z([40, 40, 160], 0.5, 64.0, 8.0)).map_err(|e| e.to_string())?;
    let rl = measure_rpcat(&long.image, &long.vessel_mask, None, &ProtocolParams::default()).map_err(|e| e.to_string())?;
    ensure!(!rl.measurement.truncated, "64 mm vessel flagged truncated");
    Ok(format!(
        "46 mm vessel: region {} voxels at skip 0 vs {} at skip 10 (truncated, {:.1} mm swept); 64 mm vessel not truncated",
        r0.region.len(),
        r10.region.len(),
        r10.path.length_mm()
    ))
}

fn strip_metadata(text: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(text).expect("json output");
    v.as_object_mut().expect("object").remove("metadata");
    serde_json::to_string_pretty(&v).unwrap()
}

fn collect_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            let bytes = fs::read(&p).unwrap();
            let bytes = if rel.ends_with(".json") {
                strip_metadata(std::str::from_utf8(&bytes).unwrap()).into_bytes()
            } else {
                bytes
            };
            out.push((rel, bytes));
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cases = Vec::new();
    for (i, fat) in [-100.0, -80.0, -120.0, -60.0, -150.0].into_iter().enumerate() {
        let spec = PhantomSpec {
            hu_fat: fat,
            ..PhantomSpec::artery_pair(0.5)
        };
        let ph = render(&spec).map_err(|e| e.to_string())?;
        let dir = tmp.path().join(format!("case{i}"));
        fs::create_dir_all(&dir).unwrap();
        nifti::save_volume(&ph.image, dir.join("image.nii.gz")).map_err(|e| e.to_string())?;
        nifti::save_mask(&ph.vessel_mask, dir.join("coronary.nii.gz")).map_err(|e| e.to_string())?;
        nifti::save_mask(&ph.aorta_mask, dir.join("aorta.nii.gz")).map_err(|e| e.to_string())?;
        cases.push(CaseInput {
            case_id: format!("case{i}"),
            image: dir.join("image.nii.gz"),
            coronary_mask: dir.join("coronary.nii.gz"),
            aorta_mask: Some(dir.join("aorta.nii.gz")),
        });
    }
    let mut outputs = Vec::new();
    for (run, workers) in [(1, 4usize), (2, 1)] {
        let cfg = RunConfig {
            workers: Some(workers),
            ..RunConfig::default()
        };
        // reversed input order on the second run
        let mut order = cases.clone();
        if run == 2 {
            order.reverse();
        }
        let out = tmp.path().join(format!("run{run}"));
        let b = run_batch(&order, &cfg, Some(&out)).map_err(|e| e.to_string())?;
        ensure!(b.failures() == 0, "run {run}: {} failed cases", b.failures());
        outputs.push(collect_outputs(&out));
    }
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    ensure!(outputs[0].len() == outputs[1].len(), "different file sets");
    for ((n1, b1), (n2, b2)) in outputs[0].iter().zip(&outputs[1]) {
        ensure!(n1 == n2, "file sets differ: {n1} vs {n2}");
        ensure!(b1 == b2, "{n1} differs between runs");
    }
    Ok(format!("{} report files byte-identical across runs (metadata excluded): {}", names.len(), names.join(" ")))
}

fn criterion_10() -> Outcome {
    const TOL: f64 = 1e-9;
    let g = Geometry::isotropic([10, 10, 10], 1.0).unwrap();
    let a = BinaryMask::from_indices(g, 0..100);
    let b = BinaryMask::from_indices(g, 50..150);
    let c = BinaryMask::from_indices(g, 200..300);
    let d = |x: &BinaryMask, y: &BinaryMask| dice(x, y).unwrap();
    ensure!((d(&a, &a) - 1.0).abs() < TOL, "identical masks");
    ensure!(d(&a, &c).abs() < TOL, "disjoint masks");
    ensure!((d(&a, &b) - 0.5).abs() < TOL, "half overlap: {}", d(&a, &b));
    ensure!(d(&a, &b) == d(&b, &a), "dice not symmetric");

    let x = [1.0, 2.0, 3.0, 4.0];
    let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    ensure!((pearson_r2(&x, &lin).unwrap() - 1.0).abs() < TOL, "y = 2x + 1");
    ensure!((pearson_r2(&x, &neg).unwrap() - 1.0).abs() < TOL, "y = -x");
    // by hand: centered sums Sxy = 4.5, Sxx = 5, Syy = 4.75
    let hand = 4.5f64 * 4.5 / (5.0 * 4.75);
    let got = pearson_r2(&x, &[1.0, 2.0, 2.0, 4.0]).unwrap();
    ensure!((got - hand).abs() < TOL, "r2 {got} vs hand-computed {hand}");
    ensure!(pearson_r2(&x, &[2.0; 4]).is_none(), "zero variance not reported as absent");
    Ok(format!("dice 1, 0, 0.5; r2 1, 1, {got:.12} (hand-computed 81/95)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("uniform-fat straight tube: mean -100 HU, < 10 s on 256^3", criterion_1),
        ("RPCAT region equals brute-force oracle sweep", criterion_2),
        ("Y-phantom bifurcation, LM coverage, 40 +/- 1 mm daughters", criterion_3),
        ("HU window property suite", criterion_4),
        ("distance transform equals brute force", criterion_5),
        ("skeleton subset, components, thin-curve idempotence", criterion_6),
        ("artery split laterality and merged failure", criterion_7),
        ("skip budget monotonicity and truncation flag", criterion_8),
        ("batch determinism", criterion_9),
        ("pearson_r2 and dice examples", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS [{secs:6.2}s] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL [{secs:6.2}s] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
