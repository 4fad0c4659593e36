//! Voxel grids with physical geometry.
//!
//! Grids are stored x-fastest: the linear index of voxel `(i, j, k)` is
//! `i + dims[0] * (j + dims[1] * k)`. All grids live in a canonical
//! axis-aligned frame (x right, y anterior, z superior), so the world
//! position of a voxel center is `origin + ijk * spacing` componentwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel index triple.
pub type Ijk = [usize; 3];

/// World point in mm.
pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// mm per voxel along each axis.
    pub spacing: [f64; 3],
    /// World position (mm) of the center of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!("origin must be finite, got {origin:?}")));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidGeometry(format!("dims {dims:?} overflow")))?;
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Isotropic grid at the world origin.
    pub fn isotropic(dims: [usize; 3], spacing: f64) -> Result<Self> {
        Self::new(dims, [spacing; 3], [0.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn linear(&self, ijk: Ijk) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    #[inline]
    pub fn ijk(&self, linear: usize) -> Ijk {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn contains(&self, ijk: [i64; 3]) -> bool {
        (0..3).all(|a| ijk[a] >= 0 && (ijk[a] as u64) < self.dims[a] as u64)
    }

    /// Neighbor of `ijk` at `offset`, if it is inside the grid.
    #[inline]
    pub fn offset(&self, ijk: Ijk, offset: [i64; 3]) -> Option<Ijk> {
        let n = [
            ijk[0] as i64 + offset[0],
            ijk[1] as i64 + offset[1],
            ijk[2] as i64 + offset[2],
        ];
        self.contains(n).then(|| [n[0] as usize, n[1] as usize, n[2] as usize])
    }

    pub fn index_to_world(&self, ijk: Ijk) -> Result<Point3> {
        if !(0..3).all(|a| ijk[a] < self.dims[a]) {
            return Err(Error::OutOfBounds(ijk[0] as i64, ijk[1] as i64, ijk[2] as i64));
        }
        Ok(self.world_unchecked(ijk))
    }

    #[inline]
    pub(crate) fn world_unchecked(&self, ijk: Ijk) -> Point3 {
        [
            self.origin[0] + ijk[0] as f64 * self.spacing[0],
            self.origin[1] + ijk[1] as f64 * self.spacing[1],
            self.origin[2] + ijk[2] as f64 * self.spacing[2],
        ]
    }

    /// Nearest voxel to a world point, or `None` when it falls outside the grid.
    pub fn world_to_nearest_index(&self, p: Point3) -> Option<Ijk> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.spacing[a]).round();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Euclidean world distance between two voxel centers.
    #[inline]
    pub fn voxel_distance(&self, a: Ijk, b: Ijk) -> f64 {
        self.voxel_distance_sq(a, b).sqrt()
    }

    #[inline]
    pub fn voxel_distance_sq(&self, a: Ijk, b: Ijk) -> f64 {
        let dx = (a[0] as f64 - b[0] as f64) * self.spacing[0];
        let dy = (a[1] as f64 - b[1] as f64) * self.spacing[1];
        let dz = (a[2] as f64 - b[2] as f64) * self.spacing[2];
        dx * dx + dy * dy + dz * dz
    }

    pub fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?}/{:?}/{:?} vs {:?}/{:?}/{:?}",
                self.dims, self.spacing, self.origin, other.dims, other.spacing, other.origin
            )))
        }
    }
}

/// A scalar field over a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    geometry: Geometry,
    data: Vec<T>,
}

/// Foreground/background mask sharing the geometry of the image it annotates.
pub type BinaryMask = VoxelGrid<bool>;

impl<T> VoxelGrid<T> {
    pub fn from_vec(geometry: Geometry, data: Vec<T>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> VoxelGrid<U> {
        VoxelGrid {
            geometry: self.geometry,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> VoxelGrid<T> {
    pub fn filled(geometry: Geometry, value: T) -> Self {
        Self {
            data: vec![value; geometry.len()],
            geometry,
        }
    }

    #[inline]
    pub fn get(&self, ijk: Ijk) -> T {
        self.data[self.geometry.linear(ijk)]
    }

    #[inline]
    pub fn set(&mut self, ijk: Ijk, value: T) {
        let l = self.geometry.linear(ijk);
        self.data[l] = value;
    }
}

impl BinaryMask {
    pub fn empty(geometry: Geometry) -> Self {
        Self::filled(geometry, false)
    }

    pub fn from_indices(geometry: Geometry, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(geometry);
        for l in indices {
            mask.data[l] = true;
        }
        mask
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }

    /// Linear indices of foreground voxels in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(l, &v)| v.then_some(l))
            .collect()
    }

    /// Inclusive bounding box of the foreground, `None` if empty.
    pub fn bounding_box(&self) -> Option<(Ijk, Ijk)> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (l, &v) in self.data.iter().enumerate() {
            if v {
                any = true;
                let p = self.geometry.ijk(l);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        any.then_some((lo, hi))
    }
}

impl<T: Copy + PartialEq> VoxelGrid<T> {
    /// Mask of voxels equal to `label`.
    pub fn select(&self, label: T) -> BinaryMask {
        self.map(|&v| v == label)
    }
}
