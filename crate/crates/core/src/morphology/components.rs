use std::collections::VecDeque;

use crate::volume::{BinaryMask, VoxelGrid};

/// Voxel adjacency used for labeling and graph construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    /// Face neighbors.
    Six,
    /// Face and edge neighbors.
    Eighteen,
    /// Face, edge and corner neighbors.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            6 => Some(Self::Six),
            18 => Some(Self::Eighteen),
            26 => Some(Self::TwentySix),
            _ => None,
        }
    }

    pub fn offsets(self) -> Vec<[i64; 3]> {
        let max_nonzero = match self {
            Self::Six => 1,
            Self::Eighteen => 2,
            Self::TwentySix => 3,
        };
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let nz = (dx != 0) as u32 + (dy != 0) as u32 + (dz != 0) as u32;
                    if nz > 0 && nz <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ComponentLabeling {
    /// 0 is background; components are labeled 1..=K.
    pub labels: VoxelGrid<u32>,
    /// `(label, voxel count)` in label order, which is descending size.
    pub component_sizes: Vec<(u32, usize)>,
}

impl ComponentLabeling {
    pub fn len(&self) -> usize {
        self.component_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.component_sizes.is_empty()
    }

    pub fn mask(&self, label: u32) -> BinaryMask {
        self.labels.select(label)
    }
}

/// Label connected foreground components.
///
/// Labels are ordered by component size, largest first; ties go to the
/// component containing the smaller linear voxel index.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let geometry = *mask.geometry();
    let offsets = connectivity.offsets();
    let data = mask.data();
    let mut provisional = vec![0u32; data.len()];
    // (size, first voxel) per provisional label, discovered in scan order
    let mut found: Vec<(usize, usize)> = Vec::new();
    let mut queue = VecDeque::new();

    for seed in 0..data.len() {
        if !data[seed] || provisional[seed] != 0 {
            continue;
        }
        let label = found.len() as u32 + 1;
        provisional[seed] = label;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(l) = queue.pop_front() {
            size += 1;
            let p = geometry.ijk(l);
            for &o in &offsets {
                if let Some(n) = geometry.offset(p, o) {
                    let nl = geometry.linear(n);
                    if data[nl] && provisional[nl] == 0 {
                        provisional[nl] = label;
                        queue.push_back(nl);
                    }
                }
            }
        }
        found.push((size, seed));
    }

    let mut order: Vec<usize> = (0..found.len()).collect();
    order.sort_by(|&a, &b| found[b].0.cmp(&found[a].0).then(found[a].1.cmp(&found[b].1)));
    let mut remap = vec![0u32; found.len() + 1];
    let mut component_sizes = Vec::with_capacity(found.len());
    for (rank, &idx) in order.iter().enumerate() {
        remap[idx + 1] = rank as u32 + 1;
        component_sizes.push((rank as u32 + 1, found[idx].0));
    }
    for v in provisional.iter_mut() {
        *v = remap[*v as usize];
    }
    ComponentLabeling {
        labels: VoxelGrid::from_vec(geometry, provisional).expect("same geometry"),
        component_sizes,
    }
}
