//! Right and left coronary measurement protocols.

use serde::{Deserialize, Serialize};

use super::{measure, sweep_region, HuWindow, PcatMeasurement, PcatRegion, RegionMode, Territory};
use crate::centerline::{
    build_graph, find_bifurcations, locate_ostium, path_between, prune_spurs, walk_segment, CenterlinePath, NodeId,
    SkeletonGraph, WalkOptions,
};
use crate::error::{Error, Result};
use crate::morphology::{connected_components, distance_transform, skeletonize, Connectivity};
use crate::volume::{BinaryMask, Ijk, VoxelGrid};

/// How the daughter segment length is shared between LAD and LCX.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaughterBudget {
    /// Each daughter gets the full segment length.
    #[default]
    PerBranch,
    /// The segment length is split evenly between the two daughters.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// RCA arc length skipped distal to the ostium.
    pub skip_mm: f64,
    /// Measured segment length (RCA, and each LM daughter).
    pub segment_mm: f64,
    pub window: HuWindow,
    /// Leaf branches shorter than this are pruned from centerlines.
    pub spur_mm: f64,
    /// Maximum arc length from the ostium at which the LM bifurcation is searched.
    pub lm_search_mm: f64,
    pub region_mode: RegionMode,
    /// Margin beyond the wall in fixed-annulus mode.
    pub annulus_mm: f64,
    pub daughter_budget: DaughterBudget,
    /// Components smaller than this are ignored when splitting arteries.
    pub min_component_voxels: usize,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            skip_mm: 10.0,
            segment_mm: 40.0,
            window: HuWindow::FAT,
            spur_mm: 3.0,
            lm_search_mm: 40.0,
            region_mode: RegionMode::SphereOfDiameter,
            annulus_mm: 5.0,
            daughter_budget: DaughterBudget::PerBranch,
            min_component_voxels: 100,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("skip_mm", self.skip_mm),
            ("segment_mm", self.segment_mm),
            ("spur_mm", self.spur_mm),
            ("lm_search_mm", self.lm_search_mm),
            ("annulus_mm", self.annulus_mm),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(self.segment_mm > 0.0) {
            return Err(Error::InvalidConfig("segment_mm must be positive".into()));
        }
        HuWindow::new(self.window.lo, self.window.hi)?;
        if self.min_component_voxels == 0 {
            return Err(Error::InvalidConfig("min_component_voxels must be positive".into()));
        }
        Ok(())
    }

    fn walk_options(&self) -> WalkOptions {
        WalkOptions {
            first_step: None,
            min_branch_mm: self.spur_mm,
            probe_mm: 2.0,
        }
    }

    fn daughter_length(&self) -> f64 {
        match self.daughter_budget {
            DaughterBudget::PerBranch => self.segment_mm,
            DaughterBudget::Shared => self.segment_mm / 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RpcatResult {
    pub measurement: PcatMeasurement,
    pub ostium: Ijk,
    pub path: CenterlinePath,
    pub region: PcatRegion,
    pub centerline: SkeletonGraph,
}

#[derive(Debug, Clone)]
pub struct LpcatResult {
    pub measurement: PcatMeasurement,
    pub ostium: Ijk,
    pub bifurcation: Ijk,
    pub lm_path: CenterlinePath,
    /// The two measured daughters, LAD first.
    pub daughters: Vec<(Territory, CenterlinePath)>,
    pub region: PcatRegion,
    pub centerline: SkeletonGraph,
}

struct Centerline {
    graph: SkeletonGraph,
    ostium: NodeId,
    dt: VoxelGrid<f64>,
}

fn check_inputs(image: &VoxelGrid<f32>, mask: &BinaryMask, aorta: Option<&BinaryMask>, params: &ProtocolParams) -> Result<()> {
    params.validate()?;
    image.geometry().ensure_same(mask.geometry(), "image vs artery mask")?;
    if let Some(a) = aorta {
        image.geometry().ensure_same(a.geometry(), "image vs aorta mask")?;
    }
    Ok(())
}

/// Skeleton, pruned graph, ostium and wall-distance map of the largest
/// 26-connected component of `mask`.
fn extract_centerline(mask: &BinaryMask, aorta: Option<&BinaryMask>, params: &ProtocolParams) -> Result<Centerline> {
    let cc = connected_components(mask, Connectivity::TwentySix);
    if cc.is_empty() {
        return Err(Error::NoCenterline);
    }
    let vessel = if cc.len() == 1 { mask.clone() } else { cc.mask(1) };
    let skeleton = skeletonize(&vessel);
    let graph = prune_spurs(&build_graph(&skeleton)?, params.spur_mm);
    let ostium = locate_ostium(&graph, aorta)?;
    let dt = distance_transform(&vessel);
    Ok(Centerline { graph, ostium, dt })
}

/// Right coronary PCAT: skip `skip_mm` of arc from the ostium, then sweep
/// `segment_mm` of the main vessel.
pub fn measure_rpcat(
    image: &VoxelGrid<f32>,
    rca_mask: &BinaryMask,
    aorta: Option<&BinaryMask>,
    params: &ProtocolParams,
) -> Result<RpcatResult> {
    check_inputs(image, rca_mask, aorta, params)?;
    let cl = extract_centerline(rca_mask, aorta, params)?;
    let path = walk_segment(&cl.graph, cl.ostium, params.skip_mm, params.segment_mm, &cl.dt, params.walk_options())?;
    let region = sweep_region(&path, Territory::Rca, image.geometry(), params.region_mode, params.annulus_mm);
    let measurement = measure(&region, image, params.window)?;
    Ok(RpcatResult {
        measurement,
        ostium: cl.graph.ijk(cl.ostium),
        path,
        region,
        centerline: cl.graph,
    })
}

/// Left coronary PCAT: the whole LM from the ostium to its first
/// bifurcation, plus `segment_mm` along each of the two widest daughters.
pub fn measure_lpcat(
    image: &VoxelGrid<f32>,
    lca_mask: &BinaryMask,
    aorta: Option<&BinaryMask>,
    params: &ProtocolParams,
) -> Result<LpcatResult> {
    check_inputs(image, lca_mask, aorta, params)?;
    let cl = extract_centerline(lca_mask, aorta, params)?;
    let graph = &cl.graph;
    let tree = graph.shortest_paths(cl.ostium);
    let extent = subtree_extent(graph, &tree);
    let reach = |p: NodeId, c: NodeId| extent[c] + graph.edge_length(p, c);

    // first junction (by arc from the ostium) where two real branches leave
    let (bifurcation, daughters) = find_bifurcations(graph, Some(cl.ostium))
        .into_iter()
        .take_while(|&j| tree.dist[j] <= params.lm_search_mm)
        .find_map(|j| {
            let viable: Vec<NodeId> = tree.children[j]
                .iter()
                .copied()
                .filter(|&c| reach(j, c) >= params.spur_mm)
                .collect();
            (viable.len() >= 2).then_some((j, viable))
        })
        .ok_or(Error::NoBifurcation)?;

    let lm_path = path_between(graph, cl.ostium, bifurcation, &cl.dt)?;
    let length = params.daughter_length();
    let mut walks = Vec::new();
    for &child in &daughters {
        let options = WalkOptions {
            first_step: Some(child),
            ..params.walk_options()
        };
        let path = walk_segment(graph, bifurcation, 0.0, length, &cl.dt, options)?;
        let mean_r = mean_radius_over(&path, 2.0);
        walks.push((mean_r, child, path));
    }
    // two widest daughters; ties to the smaller node id
    walks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    walks.truncate(2);
    let mut named = assign_daughters(graph, bifurcation, walks.into_iter().map(|(_, _, p)| p).collect());
    named.sort_by_key(|(t, _)| *t);

    let geometry = image.geometry();
    let mut regions = vec![sweep_region(&lm_path, Territory::Lm, geometry, params.region_mode, params.annulus_mm)];
    for (t, p) in &named {
        regions.push(sweep_region(p, *t, geometry, params.region_mode, params.annulus_mm));
    }
    let region = PcatRegion::union(regions)?;
    let measurement = measure(&region, image, params.window)?;
    Ok(LpcatResult {
        measurement,
        ostium: graph.ijk(cl.ostium),
        bifurcation: graph.ijk(bifurcation),
        lm_path,
        daughters: named,
        region,
        centerline: cl.graph,
    })
}

fn subtree_extent(graph: &SkeletonGraph, tree: &crate::centerline::ShortestPaths) -> Vec<f64> {
    let mut order: Vec<NodeId> = (0..graph.len()).filter(|&n| tree.dist[n].is_finite()).collect();
    order.sort_by(|&a, &b| tree.dist[b].total_cmp(&tree.dist[a]).then(b.cmp(&a)));
    let mut extent = vec![0.0f64; graph.len()];
    for n in order {
        if let Some(p) = tree.parent[n] {
            let e = extent[n] + graph.edge_length(p, n);
            if e > extent[p] {
                extent[p] = e;
            }
        }
    }
    extent
}

fn mean_radius_over(path: &CenterlinePath, probe_mm: f64) -> f64 {
    // skip the bifurcation point itself, which every daughter shares
    let sel: Vec<f64> = path
        .arc_length
        .iter()
        .zip(&path.radius)
        .skip(1)
        .take_while(|(a, _)| **a <= probe_mm)
        .map(|(_, r)| *r)
        .collect();
    if sel.is_empty() {
        path.radius.first().copied().unwrap_or(0.0)
    } else {
        sel.iter().sum::<f64>() / sel.len() as f64
    }
}

/// Name daughters: the one heading more anteriorly (+y) is the LAD.
fn assign_daughters(graph: &SkeletonGraph, bifurcation: NodeId, paths: Vec<CenterlinePath>) -> Vec<(Territory, CenterlinePath)> {
    let origin = graph.world(bifurcation);
    let g = graph.geometry();
    let anterior = |p: &CenterlinePath| {
        let end = g.index_to_world(*p.points.last().expect("path")).expect("in grid");
        end[1] - origin[1]
    };
    let mut paths = paths;
    if paths.len() == 2 && anterior(&paths[1]) > anterior(&paths[0]) {
        paths.swap(0, 1);
    }
    paths
        .into_iter()
        .zip([Territory::Lad, Territory::Lcx])
        .map(|(p, t)| (t, p))
        .collect()
}
