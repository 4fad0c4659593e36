//! Topology-preserving 3D thinning.
//!
//! Directional boundary peeling in the style of Lee, Kashyap and Chu: each
//! pass runs six sub-iterations, one per face direction, in the fixed order
//! -y, +y, +x, -x, +z, -z. A sub-iteration collects border voxels (the
//! face neighbor in that direction is background) that are simple and not
//! curve endpoints, then deletes them one by one in ascending linear index
//! order, re-checking both conditions against the current state before each
//! deletion. Passes repeat until nothing changes.
//!
//! Simplicity uses the topological numbers of Bertrand and Malandain: a
//! voxel is simple under (26, 6) connectivity iff its foreground
//! 26-neighborhood forms one 26-component and the background of its
//! 18-neighborhood has exactly one 6-component touching a face neighbor.

use crate::volume::BinaryMask;

const CENTER: usize = 13;

/// Face directions in peel order.
const PEEL_ORDER: [[i64; 3]; 6] = [[0, -1, 0], [0, 1, 0], [1, 0, 0], [-1, 0, 0], [0, 0, 1], [0, 0, -1]];

fn cube_pos(c: usize) -> [i64; 3] {
    [(c % 3) as i64 - 1, ((c / 3) % 3) as i64 - 1, (c / 9) as i64 - 1]
}

fn cube_index(o: [i64; 3]) -> usize {
    ((o[0] + 1) + 3 * (o[1] + 1) + 9 * (o[2] + 1)) as usize
}

fn nonzero(o: [i64; 3]) -> usize {
    o.iter().filter(|&&v| v != 0).count()
}

/// Adjacency tables over the 3x3x3 cube, excluding the center.
struct Tables {
    adj26: [Vec<usize>; 27],
    adj6_in18: [Vec<usize>; 27],
    in18: u32,
    faces: u32,
}

impl Tables {
    fn new() -> Self {
        let mut adj26: [Vec<usize>; 27] = Default::default();
        let mut adj6_in18: [Vec<usize>; 27] = Default::default();
        let mut in18 = 0u32;
        let mut faces = 0u32;
        for a in 0..27 {
            if a == CENTER {
                continue;
            }
            let pa = cube_pos(a);
            if nonzero(pa) <= 2 {
                in18 |= 1 << a;
            }
            if nonzero(pa) == 1 {
                faces |= 1 << a;
            }
            for b in 0..27 {
                if b == CENTER || b == a {
                    continue;
                }
                let pb = cube_pos(b);
                let d = [pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]];
                if d.iter().all(|v| v.abs() <= 1) {
                    adj26[a].push(b);
                    if nonzero(d) == 1 && nonzero(pa) <= 2 && nonzero(pb) <= 2 {
                        adj6_in18[a].push(b);
                    }
                }
            }
        }
        Self {
            adj26,
            adj6_in18,
            in18,
            faces,
        }
    }

    /// Number of components of `set` under `adj`; when `must_touch` is given,
    /// only components containing one of those positions are counted.
    fn components(adj: &[Vec<usize>; 27], set: u32, must_touch: Option<u32>) -> u32 {
        let mut unvisited = set;
        let mut count = 0;
        let mut stack = [0usize; 27];
        while unvisited != 0 {
            let seed = unvisited.trailing_zeros() as usize;
            unvisited &= !(1 << seed);
            let mut comp = 1u32 << seed;
            let mut top = 0;
            stack[top] = seed;
            top += 1;
            while top > 0 {
                top -= 1;
                let a = stack[top];
                for &b in &adj[a] {
                    if unvisited & (1 << b) != 0 {
                        unvisited &= !(1 << b);
                        comp |= 1 << b;
                        stack[top] = b;
                        top += 1;
                    }
                }
            }
            if must_touch.is_none_or(|t| comp & t != 0) {
                count += 1;
            }
        }
        count
    }

    /// `config` has bit c set when cube position c is foreground.
    fn is_simple(&self, config: u32) -> bool {
        let fg = config & !(1 << CENTER) & ((1 << 27) - 1);
        if Self::components(&self.adj26, fg, None) != 1 {
            return false;
        }
        let bg18 = !config & self.in18;
        Self::components(&self.adj6_in18, bg18, Some(self.faces)) == 1
    }
}

/// Thin a binary mask to a curve skeleton. The result is a subset of the
/// input with the same 26-connected components (and no new cavities or
/// tunnels).
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let geometry = *mask.geometry();
    let Some((lo, hi)) = mask.bounding_box() else {
        return mask.clone();
    };
    // work in the bounding box padded by one background voxel on every side
    let sub = [0, 1, 2].map(|a| hi[a] - lo[a] + 3);
    let strides = [1i64, sub[0] as i64, (sub[0] * sub[1]) as i64];
    let at = |p: [usize; 3]| p[0] + sub[0] * (p[1] + sub[1] * p[2]);
    let mut work = vec![false; sub[0] * sub[1] * sub[2]];
    let mut live = Vec::new();
    for l in mask.indices() {
        let p = geometry.ijk(l);
        let q = at([p[0] - lo[0] + 1, p[1] - lo[1] + 1, p[2] - lo[2] + 1]);
        work[q] = true;
        live.push(q);
    }
    live.sort_unstable();

    let cube_offsets: Vec<i64> = (0..27)
        .map(|c| {
            let o = cube_pos(c);
            o[0] * strides[0] + o[1] * strides[1] + o[2] * strides[2]
        })
        .collect();
    let config = |work: &[bool], q: usize| -> u32 {
        let mut bits = 0u32;
        for (c, &off) in cube_offsets.iter().enumerate() {
            if work[(q as i64 + off) as usize] {
                bits |= 1 << c;
            }
        }
        bits
    };
    let tables = Tables::new();
    let removable = |bits: u32| {
        let neighbors = (bits & !(1 << CENTER)).count_ones();
        neighbors >= 2 && tables.is_simple(bits)
    };

    loop {
        let mut changed = false;
        for dir in PEEL_ORDER {
            let face = 1u32 << cube_index(dir);
            let candidates: Vec<usize> = live
                .iter()
                .copied()
                .filter(|&q| {
                    let bits = config(&work, q);
                    bits & face == 0 && removable(bits)
                })
                .collect();
            let mut removed_any = false;
            for q in candidates {
                if removable(config(&work, q)) {
                    work[q] = false;
                    removed_any = true;
                }
            }
            if removed_any {
                live.retain(|&q| work[q]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut out = BinaryMask::empty(geometry);
    for q in live {
        let p = [q % sub[0], (q / sub[0]) % sub[1], q / (sub[0] * sub[1])];
        out.set([p[0] + lo[0] - 1, p[1] + lo[1] - 1, p[2] + lo[2] - 1], true);
    }
    out
}
