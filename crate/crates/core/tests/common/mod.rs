//! Deliberately naive reference implementations. Nothing here calls the
//! production algorithms they check.
#![allow(dead_code)]

use std::collections::BTreeSet;

use pcat_core::volume::{BinaryMask, Geometry, Ijk, VoxelGrid};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn world(g: &Geometry, p: Ijk) -> [f64; 3] {
    [0, 1, 2].map(|a| g.origin[a] + p[a] as f64 * g.spacing[a])
}

pub fn dist_sq(g: &Geometry, a: Ijk, b: Ijk) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] as f64 - b[k] as f64) * g.spacing[k];
            d * d
        })
        .sum()
}

fn all_ijk(g: &Geometry) -> impl Iterator<Item = Ijk> + '_ {
    let [nx, ny, nz] = g.dims;
    (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
}

/// All-pairs Euclidean distance transform: every foreground voxel gets the
/// distance to the nearest background voxel center (infinity if none).
pub fn brute_edt(mask: &BinaryMask) -> Vec<f64> {
    let g = *mask.geometry();
    let background: Vec<Ijk> = all_ijk(&g).filter(|&p| !mask.get(p)).collect();
    all_ijk(&g)
        .map(|p| {
            if !mask.get(p) {
                return 0.0;
            }
            background
                .iter()
                .map(|&b| dist_sq(&g, p, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Distance from `p` to the nearest background voxel, by scanning growing
/// cubes until the nearest hit is provably inside the scanned cube.
pub fn brute_radius_at(mask: &BinaryMask, p: Ijk) -> f64 {
    let g = *mask.geometry();
    let min_s = g.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_k = *g.dims.iter().max().unwrap() as i64;
    for k in 1..=max_k {
        let mut best = f64::INFINITY;
        for dz in -k..=k {
            for dy in -k..=k {
                for dx in -k..=k {
                    let q = [p[0] as i64 + dx, p[1] as i64 + dy, p[2] as i64 + dz];
                    if (0..3).any(|a| q[a] < 0 || q[a] >= g.dims[a] as i64) {
                        continue;
                    }
                    let q = q.map(|v| v as usize);
                    if !mask.get(q) {
                        best = best.min(dist_sq(&g, p, q));
                    }
                }
            }
        }
        // anything outside the cube is at least (k + 1) * min_s away
        let bound = (k + 1) as f64 * min_s;
        if best <= bound * bound {
            return best.sqrt();
        }
    }
    f64::INFINITY
}

/// Per-voxel sweep check: a voxel is in the region iff its center lies
/// within `scale * radius[i]` of some `points[i]`. Only voxels inside the
/// bounding box of all spheres are tested, the rest cannot qualify.
pub fn brute_sweep(g: &Geometry, points: &[Ijk], radii: &[f64], scale: f64) -> BTreeSet<usize> {
    assert_eq!(points.len(), radii.len());
    let mut out = BTreeSet::new();
    if points.is_empty() {
        return out;
    }
    let reach = radii.iter().cloned().fold(0.0, f64::max) * scale;
    let lo: Vec<usize> = (0..3)
        .map(|a| {
            let m = points.iter().map(|p| p[a]).min().unwrap() as f64 - reach / g.spacing[a] - 1.0;
            m.max(0.0) as usize
        })
        .collect();
    let hi: Vec<usize> = (0..3)
        .map(|a| {
            let m = points.iter().map(|p| p[a]).max().unwrap() as f64 + reach / g.spacing[a] + 1.0;
            (m as usize).min(g.dims[a] - 1)
        })
        .collect();
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let v = [x, y, z];
                let inside = points.iter().zip(radii).any(|(&p, &r)| {
                    let rr = scale * r;
                    dist_sq(g, v, p) <= rr * rr
                });
                if inside {
                    out.insert(x + g.dims[0] * (y + g.dims[1] * z));
                }
            }
        }
    }
    out
}

fn neighbors26(mask: &BinaryMask, p: Ijk) -> Vec<Ijk> {
    let g = mask.geometry();
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx, dy, dz) == (0, 0, 0) {
                    continue;
                }
                let q = [p[0] as i64 + dx, p[1] as i64 + dy, p[2] as i64 + dz];
                if (0..3).all(|a| q[a] >= 0 && q[a] < g.dims[a] as i64) {
                    let q = q.map(|v| v as usize);
                    if mask.get(q) {
                        out.push(q);
                    }
                }
            }
        }
    }
    out
}

/// Walk a simple open curve from `start`, returning each voxel with its
/// cumulative world arc length. Panics if the curve branches.
pub fn walk_curve(curve: &BinaryMask, start: Ijk) -> Vec<(Ijk, f64)> {
    let g = *curve.geometry();
    let mut out = vec![(start, 0.0)];
    let mut seen = BTreeSet::from([start]);
    loop {
        let (cur, arc) = *out.last().unwrap();
        let next: Vec<Ijk> = neighbors26(curve, cur).into_iter().filter(|q| !seen.contains(q)).collect();
        match next.len() {
            0 => return out,
            1 => {
                seen.insert(next[0]);
                out.push((next[0], arc + dist_sq(&g, cur, next[0]).sqrt()));
            }
            n => panic!("curve branches at {cur:?} ({n} unvisited neighbors)"),
        }
    }
}

/// The first voxel of `walk` at or past `skip`, followed by every later
/// voxel whose arc position is at most `skip + length`.
pub fn arc_window(walk: &[(Ijk, f64)], skip: f64, length: f64) -> Vec<(Ijk, f64)> {
    const EPS: f64 = 1e-9;
    let Some(first) = walk.iter().position(|&(_, a)| a >= skip - EPS) else {
        return Vec::new();
    };
    let mut out = vec![walk[first]];
    out.extend(walk[first + 1..].iter().copied().take_while(|&(_, a)| a <= skip + length + EPS));
    out
}

/// Count and mean of image values inside `[lo, hi]` over `voxels`.
pub fn window_stats(image: &VoxelGrid<f32>, voxels: impl IntoIterator<Item = usize>, lo: f64, hi: f64) -> (u64, Option<f64>) {
    let mut n = 0u64;
    let mut sum = 0.0;
    for l in voxels {
        let v = image.data()[l] as f64;
        if v >= lo && v <= hi {
            n += 1;
            sum += v;
        }
    }
    (n, (n > 0).then(|| sum / n as f64))
}

/// 26-connected component count by repeated flood fill.
pub fn count_components26(mask: &BinaryMask) -> usize {
    let g = *mask.geometry();
    let mut seen = vec![false; g.len()];
    let mut count = 0;
    for p in all_ijk(&g) {
        let l = g.linear(p);
        if !mask.get(p) || seen[l] {
            continue;
        }
        count += 1;
        seen[l] = true;
        let mut stack = vec![p];
        while let Some(c) = stack.pop() {
            for q in neighbors26(mask, c) {
                let lq = g.linear(q);
                if !seen[lq] {
                    seen[lq] = true;
                    stack.push(q);
                }
            }
        }
    }
    count
}

/// Union of random ellipsoid-ish balls, optionally with salt noise.
pub fn random_blobs(r: &mut StdRng, dims: [usize; 3], spacing: [f64; 3]) -> BinaryMask {
    let g = Geometry::new(dims, spacing, [0.0; 3]).unwrap();
    let mut m = BinaryMask::empty(g);
    let n_balls = r.random_range(1..=5);
    for _ in 0..n_balls {
        let c = [0, 1, 2].map(|a| r.random_range(0..dims[a]) as f64);
        let rad = r.random_range(1.0..4.5f64);
        for p in all_ijk(&g) {
            let d2: f64 = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum();
            if d2 <= rad * rad {
                m.set(p, true);
            }
        }
    }
    for _ in 0..r.random_range(0..10) {
        let p = [0, 1, 2].map(|a| r.random_range(0..dims[a]));
        m.set(p, true);
    }
    m
}

/// A random open curve in which voxel i touches (26-adjacency) only voxels
/// i - 1 and i + 1.
pub fn random_thin_curve(r: &mut StdRng, dims: [usize; 3], spacing: [f64; 3], max_len: usize) -> BinaryMask {
    let g = Geometry::new(dims, spacing, [0.0; 3]).unwrap();
    let mut m = BinaryMask::empty(g);
    let start = [0, 1, 2].map(|a| r.random_range(0..dims[a]));
    m.set(start, true);
    let mut cur = start;
    for _ in 1..max_len {
        let mut options = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx, dy, dz) == (0, 0, 0) {
                        continue;
                    }
                    let q = [cur[0] as i64 + dx, cur[1] as i64 + dy, cur[2] as i64 + dz];
                    if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as i64) {
                        continue;
                    }
                    let q = q.map(|v| v as usize);
                    if m.get(q) {
                        continue;
                    }
                    // the only existing neighbor of q may be cur
                    let touching = neighbors26(&m, q);
                    if touching == [cur] {
                        options.push(q);
                    }
                }
            }
        }
        if options.is_empty() {
            break;
        }
        let q = options[r.random_range(0..options.len())];
        m.set(q, true);
        cur = q;
    }
    m
}

/// Spacings whose products and sums of squares are exact in binary floating point.
pub fn dyadic_spacing(r: &mut StdRng) -> [f64; 3] {
    const CHOICES: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0];
    [0, 1, 2].map(|_| CHOICES[r.random_range(0..CHOICES.len())])
}
