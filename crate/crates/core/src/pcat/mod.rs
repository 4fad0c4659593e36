//! Fat-region construction and attenuation statistics.
//!
//! A region is the union of spheres centered on centerline points. In the
//! default mode each sphere's radius equals the local vessel diameter
//! (twice the wall distance); in annulus mode it is the wall distance plus
//! a fixed margin. Lumen is never subtracted explicitly: contrast-filled
//! lumen sits far above the fat window and drops out when the window is
//! applied.

mod protocol;
mod split;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use protocol::{measure_lpcat, measure_rpcat, DaughterBudget, LpcatResult, ProtocolParams, RpcatResult};
pub use split::{split_arteries, ArterySplit, SplitOptions};

use crate::centerline::CenterlinePath;
use crate::error::{Error, Result};
use crate::volume::{Geometry, VoxelGrid};

/// Closed Hounsfield-unit interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub lo: f64,
    pub hi: f64,
}

impl HuWindow {
    pub const FAT: HuWindow = HuWindow { lo: -190.0, hi: -30.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!("HU window [{lo}, {hi}] needs lo < hi")));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn contains(&self, hu: f64) -> bool {
        hu >= self.lo && hu <= self.hi
    }
}

impl Default for HuWindow {
    fn default() -> Self {
        Self::FAT
    }
}

impl fmt::Display for HuWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}] HU", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionMode {
    /// Sphere radius = local vessel diameter.
    #[default]
    SphereOfDiameter,
    /// Sphere radius = wall distance + a fixed margin.
    FixedAnnulus,
}

impl RegionMode {
    pub fn sphere_radius(self, wall_distance_mm: f64, annulus_mm: f64) -> f64 {
        match self {
            RegionMode::SphereOfDiameter => 2.0 * wall_distance_mm,
            RegionMode::FixedAnnulus => wall_distance_mm + annulus_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Territory {
    Rca,
    Lm,
    Lad,
    Lcx,
}

/// A swept region: sorted, de-duplicated linear voxel indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PcatRegion {
    pub geometry: Geometry,
    pub voxels: Vec<usize>,
    pub parts: Vec<(Territory, CenterlinePath)>,
}

impl PcatRegion {
    pub fn empty(geometry: Geometry) -> Self {
        Self {
            geometry,
            voxels: Vec::new(),
            parts: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn contains(&self, linear: usize) -> bool {
        self.voxels.binary_search(&linear).is_ok()
    }

    /// Union of regions on the same grid; each voxel counted once.
    pub fn union(regions: impl IntoIterator<Item = PcatRegion>) -> Result<Self> {
        let mut iter = regions.into_iter();
        let Some(mut acc) = iter.next() else {
            return Err(Error::InvalidConfig("union of zero regions".into()));
        };
        for r in iter {
            acc.geometry.ensure_same(&r.geometry, "region union")?;
            acc.voxels.extend(r.voxels);
            acc.parts.extend(r.parts);
        }
        acc.voxels.sort_unstable();
        acc.voxels.dedup();
        Ok(acc)
    }

    pub fn to_mask(&self) -> crate::volume::BinaryMask {
        crate::volume::BinaryMask::from_indices(self.geometry, self.voxels.iter().copied())
    }
}

/// Union over path points of all voxels whose center lies within the
/// point's sphere radius (world distance).
pub fn sweep_region(
    path: &CenterlinePath,
    territory: Territory,
    geometry: &Geometry,
    mode: RegionMode,
    annulus_mm: f64,
) -> PcatRegion {
    let mut voxels = Vec::new();
    for (&p, &r) in path.points.iter().zip(&path.radius) {
        let radius = mode.sphere_radius(r, annulus_mm);
        stamp_sphere(geometry, p, radius, &mut voxels);
    }
    voxels.sort_unstable();
    voxels.dedup();
    PcatRegion {
        geometry: *geometry,
        voxels,
        parts: vec![(territory, path.clone())],
    }
}

fn stamp_sphere(g: &Geometry, center: [usize; 3], radius: f64, out: &mut Vec<usize>) {
    if !(radius >= 0.0) {
        return;
    }
    let r2 = radius * radius;
    // one voxel of slack; the distance test decides membership
    let reach = [0, 1, 2].map(|a| (radius / g.spacing[a]).floor() as usize + 1);
    let lo = [0, 1, 2].map(|a| center[a].saturating_sub(reach[a]));
    let hi = [0, 1, 2].map(|a| (center[a] + reach[a]).min(g.dims[a] - 1));
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                if g.voxel_distance_sq(center, [i, j, k]) <= r2 {
                    out.push(g.linear([i, j, k]));
                }
            }
        }
    }
}

/// Counts of windowed HU values in fixed-width bins starting at `lo`;
/// the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub const BIN_WIDTH: f64 = 5.0;

    pub fn for_window(window: HuWindow) -> Self {
        let n = ((window.hi - window.lo) / Self::BIN_WIDTH).ceil().max(1.0) as usize;
        Self {
            lo: window.lo,
            bin_width: Self::BIN_WIDTH,
            counts: vec![0; n],
        }
    }

    pub fn add(&mut self, hu: f64) {
        let b = ((hu - self.lo) / self.bin_width).floor();
        let b = (b.max(0.0) as usize).min(self.counts.len() - 1);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(lower edge, upper edge)` of bin `i`.
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let lo = self.lo + i as f64 * self.bin_width;
        (lo, lo + self.bin_width)
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.lo != other.lo || self.bin_width != other.bin_width || self.counts.len() != other.counts.len() {
            return Err(Error::InvalidConfig("histograms with different binning".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcatMeasurement {
    /// Mean HU over windowed voxels; absent when no voxel qualifies.
    pub mean_attenuation_hu: Option<f64>,
    pub volume_ml: f64,
    pub voxel_count: u64,
    pub region_voxels: u64,
    pub histogram: Histogram,
    pub truncated: bool,
}

/// Mean attenuation and volume of the region voxels whose HU lies in the window.
pub fn measure(region: &PcatRegion, image: &VoxelGrid<f32>, window: HuWindow) -> Result<PcatMeasurement> {
    region.geometry.ensure_same(image.geometry(), "image vs region")?;
    let data = image.data();
    let mut sum = 0.0f64;
    let mut count = 0u64;
    let mut histogram = Histogram::for_window(window);
    for &l in &region.voxels {
        let hu = data[l] as f64;
        if window.contains(hu) {
            sum += hu;
            count += 1;
            histogram.add(hu);
        }
    }
    Ok(PcatMeasurement {
        mean_attenuation_hu: (count > 0).then(|| sum / count as f64),
        volume_ml: count as f64 * region.geometry.voxel_volume_mm3() / 1000.0,
        voxel_count: count,
        region_voxels: region.voxels.len() as u64,
        histogram,
        truncated: region.parts.iter().any(|(_, p)| p.truncated),
    })
}
