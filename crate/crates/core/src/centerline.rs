//! Centerline graphs built from skeleton masks.
//!
//! Nodes are skeleton voxels, edges join 26-adjacent skeleton voxels and
//! carry the world distance between voxel centers. Node ids are positions
//! in the ascending list of skeleton voxel linear indices, so every query
//! that breaks ties by node id breaks them by linear voxel index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::morphology::Connectivity;
use crate::volume::{BinaryMask, Geometry, Ijk, Point3, VoxelGrid};

pub type NodeId = usize;

/// Slack for arc-length comparisons, in mm.
const ARC_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    geometry: Geometry,
    voxels: Vec<usize>,
    adjacency: Vec<Vec<NodeId>>,
}

impl SkeletonGraph {
    pub fn from_skeleton(skeleton: &BinaryMask) -> Result<Self> {
        build_graph(skeleton)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Linear voxel index of a node.
    pub fn voxel(&self, node: NodeId) -> usize {
        self.voxels[node]
    }

    pub fn ijk(&self, node: NodeId) -> Ijk {
        self.geometry.ijk(self.voxels[node])
    }

    pub fn world(&self, node: NodeId) -> Point3 {
        self.geometry.world_unchecked(self.ijk(node))
    }

    pub fn node_at(&self, ijk: Ijk) -> Option<NodeId> {
        self.voxels.binary_search(&self.geometry.linear(ijk)).ok()
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node].len()
    }

    pub fn edge_length(&self, a: NodeId, b: NodeId) -> f64 {
        self.geometry.voxel_distance(self.ijk(a), self.ijk(b))
    }

    /// Degree-1 nodes in id order.
    pub fn endpoints(&self) -> Vec<NodeId> {
        (0..self.len()).filter(|&n| self.degree(n) == 1).collect()
    }

    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::from_indices(self.geometry, self.voxels.iter().copied())
    }

    /// Adjacency list with world coordinates, for debugging.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Node {
            id: NodeId,
            voxel: Ijk,
            world: Point3,
            degree: usize,
            neighbors: Vec<NodeId>,
        }
        let nodes: Vec<Node> = (0..self.len())
            .map(|n| Node {
                id: n,
                voxel: self.ijk(n),
                world: self.world(n),
                degree: self.degree(n),
                neighbors: self.adjacency[n].clone(),
            })
            .collect();
        serde_json::json!({ "geometry": self.geometry, "nodes": nodes })
    }

    /// Subgraph on the nodes where `keep` is true, re-indexed.
    fn retain(&self, keep: &[bool]) -> Self {
        let mut remap = vec![usize::MAX; self.len()];
        let mut voxels = Vec::new();
        for n in 0..self.len() {
            if keep[n] {
                remap[n] = voxels.len();
                voxels.push(self.voxels[n]);
            }
        }
        let adjacency = (0..self.len())
            .filter(|&n| keep[n])
            .map(|n| {
                self.adjacency[n]
                    .iter()
                    .filter(|&&m| keep[m])
                    .map(|&m| remap[m])
                    .collect()
            })
            .collect();
        Self {
            geometry: self.geometry,
            voxels,
            adjacency,
        }
    }

    /// Shortest-path distances and parents from `source` over edge lengths.
    /// Ties between equal-length routes go to the smaller parent id.
    pub fn shortest_paths(&self, source: NodeId) -> ShortestPaths {
        let mut dist = vec![f64::INFINITY; self.len()];
        let mut parent = vec![None; self.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry { dist: 0.0, node: source });
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &m in &self.adjacency[node] {
                let nd = d + self.edge_length(node, m);
                let better = nd < dist[m] || (nd == dist[m] && parent[m].is_some_and(|p| node < p));
                if better {
                    let improved = nd < dist[m];
                    dist[m] = nd;
                    parent[m] = Some(node);
                    if improved {
                        heap.push(HeapEntry { dist: nd, node: m });
                    }
                }
            }
        }
        let mut children = vec![Vec::new(); self.len()];
        for n in 0..self.len() {
            if let Some(p) = parent[n] {
                children[p].push(n);
            }
        }
        ShortestPaths {
            source,
            dist,
            parent,
            children,
        }
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node id
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path tree rooted at `source`.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub source: NodeId,
    pub dist: Vec<f64>,
    pub parent: Vec<Option<NodeId>>,
    /// Tree children in ascending id order.
    pub children: Vec<Vec<NodeId>>,
}

impl ShortestPaths {
    /// Nodes from the source to `target` inclusive, or `None` if unreachable.
    pub fn path_to(&self, target: NodeId) -> Option<Vec<NodeId>> {
        if !self.dist[target].is_finite() {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path)
    }

    /// Longest downstream arc length below each node, counting the edge into
    /// each child.
    fn extents(&self, graph: &SkeletonGraph) -> Vec<f64> {
        let mut order: Vec<NodeId> = (0..self.dist.len()).filter(|&n| self.dist[n].is_finite()).collect();
        order.sort_by(|&a, &b| self.dist[b].total_cmp(&self.dist[a]).then(b.cmp(&a)));
        let mut extent = vec![0.0f64; self.dist.len()];
        for n in order {
            if let Some(p) = self.parent[n] {
                let e = extent[n] + graph.edge_length(p, n);
                if e > extent[p] {
                    extent[p] = e;
                }
            }
        }
        extent
    }
}

/// Graph of 26-adjacent skeleton voxels.
pub fn build_graph(skeleton: &BinaryMask) -> Result<SkeletonGraph> {
    let geometry = *skeleton.geometry();
    let voxels = skeleton.indices();
    if voxels.is_empty() {
        return Err(Error::NoCenterline);
    }
    let offsets = Connectivity::TwentySix.offsets();
    let adjacency = voxels
        .iter()
        .map(|&l| {
            let p = geometry.ijk(l);
            let mut ns: Vec<NodeId> = offsets
                .iter()
                .filter_map(|&o| geometry.offset(p, o))
                .filter_map(|q| voxels.binary_search(&geometry.linear(q)).ok())
                .collect();
            ns.sort_unstable();
            ns
        })
        .collect();
    Ok(SkeletonGraph {
        geometry,
        voxels,
        adjacency,
    })
}

/// A leaf branch: endpoint up to (not including) the junction it hangs from.
struct Spur {
    nodes: Vec<NodeId>,
    length_mm: f64,
}

fn leaf_spur(graph: &SkeletonGraph, alive: &[bool], degree: &[usize], endpoint: NodeId) -> Option<Spur> {
    let mut nodes = vec![endpoint];
    let mut length_mm = 0.0;
    let mut prev = None;
    let mut cur = endpoint;
    loop {
        let next: Vec<NodeId> = graph.adjacency[cur]
            .iter()
            .copied()
            .filter(|&m| alive[m] && Some(m) != prev && !nodes.contains(&m))
            .collect();
        if next.len() != 1 {
            // dead end: this component is a bare path with no junction
            return None;
        }
        let n = next[0];
        length_mm += graph.edge_length(cur, n);
        if degree[n] >= 3 {
            return Some(Spur { nodes, length_mm });
        }
        nodes.push(n);
        prev = Some(cur);
        cur = n;
    }
}

/// Remove leaf branches shorter than `min_length_mm`, shortest first, until
/// none remain. A branch is a leaf branch only while it ends at a junction,
/// so the last path through any junction is never removed.
pub fn prune_spurs(graph: &SkeletonGraph, min_length_mm: f64) -> SkeletonGraph {
    if min_length_mm <= 0.0 {
        return graph.clone();
    }
    let mut alive = vec![true; graph.len()];
    let mut degree: Vec<usize> = (0..graph.len()).map(|n| graph.degree(n)).collect();
    loop {
        let shortest = (0..graph.len())
            .filter(|&n| alive[n] && degree[n] == 1)
            .filter_map(|e| leaf_spur(graph, &alive, &degree, e))
            .filter(|s| s.length_mm < min_length_mm)
            .min_by(|a, b| a.length_mm.total_cmp(&b.length_mm).then(a.nodes[0].cmp(&b.nodes[0])));
        let Some(spur) = shortest else {
            break;
        };
        for &n in &spur.nodes {
            alive[n] = false;
            for &m in &graph.adjacency[n] {
                if alive[m] {
                    degree[m] -= 1;
                }
            }
        }
    }
    graph.retain(&alive)
}

/// Nodes with three or more neighbors. Ordered by path distance from
/// `ostium` when given (unreachable nodes last), then by node id.
pub fn find_bifurcations(graph: &SkeletonGraph, ostium: Option<NodeId>) -> Vec<NodeId> {
    let mut junctions: Vec<NodeId> = (0..graph.len()).filter(|&n| graph.degree(n) >= 3).collect();
    if let Some(o) = ostium {
        let sp = graph.shortest_paths(o);
        junctions.sort_by(|&a, &b| sp.dist[a].total_cmp(&sp.dist[b]).then(a.cmp(&b)));
    }
    junctions
}

/// The endpoint where the artery leaves the aorta.
///
/// With an aorta mask this is the endpoint closest to an aorta surface
/// voxel. Without one it is the most superior endpoint (largest z), then
/// the most rightward (largest x). Remaining ties go to the smaller voxel
/// index.
pub fn locate_ostium(graph: &SkeletonGraph, aorta: Option<&BinaryMask>) -> Result<NodeId> {
    let endpoints = graph.endpoints();
    if endpoints.is_empty() {
        return Err(Error::NoEndpoints);
    }
    let surface = match aorta {
        Some(a) => {
            graph.geometry.ensure_same(a.geometry(), "aorta mask vs centerline")?;
            surface_voxels(a)
        }
        None => Vec::new(),
    };
    if surface.is_empty() {
        let best = endpoints
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let (pa, pb) = (graph.world(a), graph.world(b));
                pa[2].total_cmp(&pb[2]).then(pa[0].total_cmp(&pb[0])).then(b.cmp(&a))
            })
            .expect("non-empty");
        return Ok(best);
    }
    let g = graph.geometry;
    let best = endpoints
        .iter()
        .map(|&e| {
            let p = graph.ijk(e);
            let d = surface
                .iter()
                .map(|&s| g.voxel_distance_sq(p, s))
                .fold(f64::INFINITY, f64::min);
            (d, e)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty");
    Ok(best.1)
}

/// Foreground voxels with a face neighbor outside the mask (or the grid).
pub(crate) fn surface_voxels(mask: &BinaryMask) -> Vec<Ijk> {
    let g = *mask.geometry();
    let faces = Connectivity::Six.offsets();
    mask.indices()
        .into_iter()
        .map(|l| g.ijk(l))
        .filter(|&p| faces.iter().any(|&o| g.offset(p, o).is_none_or(|q| !mask.get(q))))
        .collect()
}

/// An ordered run of centerline voxels with arc length and vessel radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterlinePath {
    pub points: Vec<Ijk>,
    /// Cumulative mm from the first point; `arc_length[0] == 0`.
    pub arc_length: Vec<f64>,
    /// Distance to the vessel wall (mm) at each point.
    pub radius: Vec<f64>,
    /// Arc position of the first point measured from where the walk started.
    pub offset_mm: f64,
    /// The branch ended before the requested length was covered.
    pub truncated: bool,
}

impl CenterlinePath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length_mm(&self) -> f64 {
        self.arc_length.last().copied().unwrap_or(0.0)
    }

    fn from_nodes(graph: &SkeletonGraph, nodes: &[NodeId], dt: &VoxelGrid<f64>, offset_mm: f64, truncated: bool) -> Self {
        let points: Vec<Ijk> = nodes.iter().map(|&n| graph.ijk(n)).collect();
        let mut arc_length = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (k, &p) in points.iter().enumerate() {
            if k > 0 {
                acc += graph.geometry.voxel_distance(points[k - 1], p);
            }
            arc_length.push(acc);
        }
        let radius = points.iter().map(|&p| dt.get(p)).collect();
        Self {
            points,
            arc_length,
            radius,
            offset_mm,
            truncated,
        }
    }
}

/// How a walk picks its way through junctions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkOptions {
    /// Forced first step; must be a neighbor of the start node.
    pub first_step: Option<NodeId>,
    /// Children whose downstream extent is shorter than this are treated as
    /// thinning debris and skipped unless nothing else continues.
    pub min_branch_mm: f64,
    /// Arc length over which a branch's radius is averaged when comparing
    /// branches.
    pub probe_mm: f64,
}

impl Default for WalkOptions {
    fn default() -> Self {
        Self {
            first_step: None,
            min_branch_mm: 3.0,
            probe_mm: 2.0,
        }
    }
}

/// Walk away from `start`, discard the first `skip_mm` of arc length and
/// return the following `length_mm`.
///
/// At a junction the walk follows the main vessel: the branch whose mean
/// radius over the first `probe_mm` is largest, then the straighter
/// continuation, then the smaller node id. A branch that ends early yields
/// a path flagged `truncated`.
pub fn walk_segment(
    graph: &SkeletonGraph,
    start: NodeId,
    skip_mm: f64,
    length_mm: f64,
    dt: &VoxelGrid<f64>,
    options: WalkOptions,
) -> Result<CenterlinePath> {
    if start >= graph.len() {
        return Err(Error::NotInGraph(start));
    }
    if !(skip_mm >= 0.0 && length_mm >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "skip ({skip_mm}) and length ({length_mm}) must be non-negative"
        )));
    }
    graph.geometry.ensure_same(dt.geometry(), "distance map vs centerline")?;
    if let Some(f) = options.first_step {
        if !graph.neighbors(start).contains(&f) {
            return Err(Error::NotInGraph(f));
        }
    }
    let tree = graph.shortest_paths(start);
    let extent = tree.extents(graph);
    let route = main_route(graph, &tree, &extent, dt, start, options);

    let end_mm = skip_mm + length_mm;
    let mut kept = Vec::new();
    let mut first_arc = None;
    let mut arc = 0.0;
    let mut reached_end = false;
    for (k, &n) in route.iter().enumerate() {
        if k > 0 {
            arc += graph.edge_length(route[k - 1], n);
        }
        // the first voxel at or past the skip point always starts the path,
        // even when the window is narrower than one step
        if arc > end_mm + ARC_EPS && first_arc.is_some() {
            reached_end = true;
            break;
        }
        if arc >= skip_mm - ARC_EPS {
            first_arc.get_or_insert(arc);
            kept.push(n);
        }
    }
    let Some(offset_mm) = first_arc else {
        return Err(Error::ShortCenterline {
            available_mm: arc,
            required_mm: skip_mm,
        });
    };
    let truncated = !reached_end && arc < end_mm - ARC_EPS;
    Ok(CenterlinePath::from_nodes(graph, &kept, dt, offset_mm, truncated))
}

/// Full route from `start` to the end of the main-vessel branch.
fn main_route(
    graph: &SkeletonGraph,
    tree: &ShortestPaths,
    extent: &[f64],
    dt: &VoxelGrid<f64>,
    start: NodeId,
    options: WalkOptions,
) -> Vec<NodeId> {
    let mut route = vec![start];
    let mut cur = start;
    if let Some(f) = options.first_step {
        route.push(f);
        cur = f;
    }
    loop {
        let children = &tree.children[cur];
        let next = match children.len() {
            0 => break,
            1 => children[0],
            _ => choose_branch(graph, tree, extent, dt, &route, options),
        };
        route.push(next);
        cur = next;
    }
    route
}

fn choose_branch(
    graph: &SkeletonGraph,
    tree: &ShortestPaths,
    extent: &[f64],
    dt: &VoxelGrid<f64>,
    route: &[NodeId],
    options: WalkOptions,
) -> NodeId {
    let cur = *route.last().expect("non-empty route");
    let children = &tree.children[cur];
    let reach = |c: NodeId| extent[c] + graph.edge_length(cur, c);
    let mut viable: Vec<NodeId> = children.iter().copied().filter(|&c| reach(c) >= options.min_branch_mm).collect();
    if viable.is_empty() {
        let longest = children
            .iter()
            .copied()
            .max_by(|&a, &b| reach(a).total_cmp(&reach(b)).then(b.cmp(&a)))
            .expect("children");
        viable.push(longest);
    }
    if viable.len() == 1 {
        return viable[0];
    }
    let incoming = incoming_direction(graph, route, options.probe_mm);
    let scored: Vec<(f64, f64, NodeId)> = viable
        .iter()
        .map(|&c| {
            let probe = probe_nodes(graph, tree, extent, cur, c, options.probe_mm);
            let mean_r = probe.iter().map(|&n| dt.get(graph.ijk(n))).sum::<f64>() / probe.len() as f64;
            let far = graph.world(*probe.last().expect("probe"));
            let here = graph.world(cur);
            let out = [far[0] - here[0], far[1] - here[1], far[2] - here[2]];
            (mean_r, turning_angle(incoming, out), c)
        })
        .collect();
    scored
        .into_iter()
        .min_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
        })
        .expect("viable")
        .2
}

/// Nodes along the longest continuation below `child`, up to `probe_mm`.
fn probe_nodes(graph: &SkeletonGraph, tree: &ShortestPaths, extent: &[f64], from: NodeId, child: NodeId, probe_mm: f64) -> Vec<NodeId> {
    let mut nodes = vec![child];
    let mut arc = graph.edge_length(from, child);
    let mut cur = child;
    while arc < probe_mm {
        let Some(next) = tree.children[cur]
            .iter()
            .copied()
            .max_by(|&a, &b| {
                (extent[a] + graph.edge_length(cur, a))
                    .total_cmp(&(extent[b] + graph.edge_length(cur, b)))
                    .then(b.cmp(&a))
            })
        else {
            break;
        };
        arc += graph.edge_length(cur, next);
        nodes.push(next);
        cur = next;
    }
    nodes
}

fn incoming_direction(graph: &SkeletonGraph, route: &[NodeId], probe_mm: f64) -> Option<[f64; 3]> {
    let last = *route.last()?;
    let mut arc = 0.0;
    let mut back = last;
    for w in route.windows(2).rev() {
        arc += graph.edge_length(w[0], w[1]);
        back = w[0];
        if arc >= probe_mm {
            break;
        }
    }
    if back == last {
        return None;
    }
    let (a, b) = (graph.world(back), graph.world(last));
    Some([b[0] - a[0], b[1] - a[1], b[2] - a[2]])
}

fn turning_angle(incoming: Option<[f64; 3]>, out: [f64; 3]) -> f64 {
    let Some(inc) = incoming else {
        return 0.0;
    };
    let dot: f64 = (0..3).map(|i| inc[i] * out[i]).sum();
    let norm = (inc.iter().map(|v| v * v).sum::<f64>() * out.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if norm == 0.0 {
        0.0
    } else {
        (dot / norm).clamp(-1.0, 1.0).acos()
    }
}

/// The tree path from `from` to `to`, with radii from `dt`.
pub fn path_between(graph: &SkeletonGraph, from: NodeId, to: NodeId, dt: &VoxelGrid<f64>) -> Result<CenterlinePath> {
    if from >= graph.len() {
        return Err(Error::NotInGraph(from));
    }
    if to >= graph.len() {
        return Err(Error::NotInGraph(to));
    }
    graph.geometry.ensure_same(dt.geometry(), "distance map vs centerline")?;
    let nodes = graph.shortest_paths(from).path_to(to).ok_or(Error::NotInGraph(to))?;
    Ok(CenterlinePath::from_nodes(graph, &nodes, dt, 0.0, false))
}
