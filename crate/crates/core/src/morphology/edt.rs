//! Exact Euclidean distance transform with anisotropic spacing.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher), applied along x, then y, then z on squared distances.
//! Work is confined to the foreground bounding box grown by one voxel:
//! any background voxel outside that box has a closer background voxel on
//! the box boundary, so the result is unchanged.

use crate::volume::{BinaryMask, VoxelGrid};

/// Distance in mm from each foreground voxel center to the nearest
/// background voxel center; background voxels carry 0.
///
/// A grid with no background at all has no defined distance; every voxel
/// then carries `f64::INFINITY`.
pub fn distance_transform(mask: &BinaryMask) -> VoxelGrid<f64> {
    let geometry = *mask.geometry();
    let mut out = VoxelGrid::filled(geometry, 0.0);
    let Some((lo, hi)) = mask.bounding_box() else {
        return out;
    };
    let dims = geometry.dims;
    let lo = [0, 1, 2].map(|a| lo[a].saturating_sub(1));
    let hi = [0, 1, 2].map(|a| (hi[a] + 1).min(dims[a] - 1));
    let sub = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
    let n = sub[0] * sub[1] * sub[2];
    let at = |x: usize, y: usize, z: usize| x + sub[0] * (y + sub[1] * z);

    let mut sq = vec![0.0f64; n];
    for z in 0..sub[2] {
        for y in 0..sub[1] {
            for x in 0..sub[0] {
                let fg = mask.get([x + lo[0], y + lo[1], z + lo[2]]);
                sq[at(x, y, z)] = if fg { f64::INFINITY } else { 0.0 };
            }
        }
    }

    let longest = *sub.iter().max().unwrap();
    let mut scratch = Envelope::new(longest);
    let mut line = vec![0.0; longest];
    let mut result = vec![0.0; longest];
    for axis in 0..3 {
        let w = geometry.spacing[axis] * geometry.spacing[axis];
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let len = sub[axis];
        for u in 0..sub[a1] {
            for v in 0..sub[a2] {
                let idx = |t: usize| {
                    let mut c = [0usize; 3];
                    c[axis] = t;
                    c[a1] = u;
                    c[a2] = v;
                    at(c[0], c[1], c[2])
                };
                for (t, slot) in line[..len].iter_mut().enumerate() {
                    *slot = sq[idx(t)];
                }
                scratch.transform(&line[..len], w, &mut result[..len]);
                for (t, &r) in result[..len].iter().enumerate() {
                    sq[idx(t)] = r;
                }
            }
        }
    }

    for z in 0..sub[2] {
        for y in 0..sub[1] {
            for x in 0..sub[0] {
                out.set([x + lo[0], y + lo[1], z + lo[2]], sq[at(x, y, z)].sqrt());
            }
        }
    }
    out
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self {
            vertices: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }

    /// out[q] = min_p w (q - p)^2 + f[p], over finite f[p].
    fn transform(&mut self, f: &[f64], w: f64, out: &mut [f64]) {
        let v = &mut self.vertices;
        let z = &mut self.bounds;
        let mut k: Option<usize> = None;
        for q in 0..f.len() {
            if !f[q].is_finite() {
                continue;
            }
            let qf = q as f64;
            match k {
                None => {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    k = Some(0);
                }
                Some(mut kk) => {
                    let mut s;
                    loop {
                        let p = v[kk] as f64;
                        s = ((f[q] + w * qf * qf) - (f[v[kk]] + w * p * p)) / (2.0 * w * (qf - p));
                        if s <= z[kk] {
                            // z[0] is -inf, so the first parabola is never popped
                            kk -= 1;
                        } else {
                            break;
                        }
                    }
                    kk += 1;
                    v[kk] = q;
                    z[kk] = s;
                    z[kk + 1] = f64::INFINITY;
                    k = Some(kk);
                }
            }
        }
        if k.is_none() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut kk = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while z[kk + 1] < qf {
                kk += 1;
            }
            let d = qf - v[kk] as f64;
            *o = w * d * d + f[v[kk]];
        }
    }
}
