//! Separating a combined coronary mask into right and left trees.

use serde::{Deserialize, Serialize};

use crate::centerline::surface_voxels;
use crate::error::{Error, Result};
use crate::morphology::{connected_components, Connectivity};
use crate::volume::{BinaryMask, Geometry, Ijk, Point3, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOptions {
    /// Components with fewer voxels are ignored.
    pub min_component_voxels: usize,
    /// World points (RCA, LCA); when set, each artery is the component
    /// nearest its seed instead of the laterality rule.
    pub seeds: Option<(Point3, Point3)>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            min_component_voxels: 100,
            seeds: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArterySplit {
    pub rca: BinaryMask,
    pub lca: BinaryMask,
    pub rca_ostium: Ijk,
    pub lca_ostium: Ijk,
}

impl ArterySplit {
    /// Label volume with 1 = RCA and 2 = LCA.
    pub fn labels(&self) -> VoxelGrid<u8> {
        let mut out = VoxelGrid::filled(*self.rca.geometry(), 0u8);
        for l in self.rca.indices() {
            out.data_mut()[l] = 1;
        }
        for l in self.lca.indices() {
            out.data_mut()[l] = 2;
        }
        out
    }
}

/// Split `coronary` into its two largest 26-connected components. The one
/// whose ostium lies further right and anterior (larger x + y, relative to
/// the aorta centroid) is the RCA.
pub fn split_arteries(coronary: &BinaryMask, aorta: Option<&BinaryMask>, opts: &SplitOptions) -> Result<ArterySplit> {
    let geometry = *coronary.geometry();
    if let Some(a) = aorta {
        geometry.ensure_same(a.geometry(), "coronary vs aorta mask")?;
    }
    let cc = connected_components(coronary, Connectivity::TwentySix);
    let large: Vec<u32> = cc
        .component_sizes
        .iter()
        .filter(|(_, n)| *n >= opts.min_component_voxels)
        .map(|(l, _)| *l)
        .collect();
    if large.len() < 2 {
        return Err(Error::SplitFailed(format!(
            "found {} component(s) with at least {} voxels, need 2",
            large.len(),
            opts.min_component_voxels
        )));
    }
    let a = cc.mask(large[0]);
    let b = cc.mask(large[1]);
    let aorta_surface = aorta.map(surface_voxels).filter(|s| !s.is_empty());
    let oa = component_ostium(&a, aorta_surface.as_deref());
    let ob = component_ostium(&b, aorta_surface.as_deref());

    let a_is_rca = match opts.seeds {
        Some((rca_seed, lca_seed)) => {
            let da = distance_to_mask(&geometry, &a, rca_seed) + distance_to_mask(&geometry, &b, lca_seed);
            let db = distance_to_mask(&geometry, &b, rca_seed) + distance_to_mask(&geometry, &a, lca_seed);
            da <= db
        }
        None => {
            // the centroid cancels when comparing two ostia, but keeps the
            // score meaningful for logging and ties
            let centre = aorta.and_then(centroid).unwrap_or([0.0; 3]);
            let score = |o: Ijk| {
                let w = geometry.world_unchecked(o);
                (w[0] - centre[0]) + (w[1] - centre[1])
            };
            let (sa, sb) = (score(oa), score(ob));
            sa > sb || (sa == sb && geometry.linear(oa) < geometry.linear(ob))
        }
    };
    let (rca, lca, rca_ostium, lca_ostium) = if a_is_rca { (a, b, oa, ob) } else { (b, a, ob, oa) };
    Ok(ArterySplit {
        rca,
        lca,
        rca_ostium,
        lca_ostium,
    })
}

/// Voxel of `component` nearest the aorta surface; without an aorta, the
/// most superior voxel. Ties go to the smallest linear index.
fn component_ostium(component: &BinaryMask, aorta_surface: Option<&[Ijk]>) -> Ijk {
    let g = component.geometry();
    let voxels = component.indices();
    match aorta_surface {
        Some(surface) => {
            let mut best = (f64::INFINITY, usize::MAX);
            for &l in &voxels {
                let p = g.ijk(l);
                let d = surface
                    .iter()
                    .map(|&s| g.voxel_distance_sq(p, s))
                    .fold(f64::INFINITY, f64::min);
                if d < best.0 {
                    best = (d, l);
                }
            }
            g.ijk(best.1)
        }
        None => {
            // indices ascend with z, so the first voxel of the top slice wins
            let top = voxels.iter().map(|&l| g.ijk(l)[2]).max().expect("non-empty component");
            g.ijk(*voxels.iter().find(|&&l| g.ijk(l)[2] == top).expect("voxel on top slice"))
        }
    }
}

fn distance_to_mask(g: &Geometry, mask: &BinaryMask, p: Point3) -> f64 {
    mask.indices()
        .into_iter()
        .map(|l| {
            let w = g.world_unchecked(g.ijk(l));
            (0..3).map(|a| (w[a] - p[a]).powi(2)).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn centroid(mask: &BinaryMask) -> Option<Point3> {
    let g = mask.geometry();
    let idx = mask.indices();
    if idx.is_empty() {
        return None;
    }
    let mut sum = [0.0; 3];
    for &l in &idx {
        let w = g.world_unchecked(g.ijk(l));
        for a in 0..3 {
            sum[a] += w[a];
        }
    }
    Some(sum.map(|s| s / idx.len() as f64))
}
