//! Synthetic CCTA-like volumes with analytically known geometry.
//!
//! A phantom is a set of polylines swept by a lumen of fixed radius and
//! wrapped in a fat shell, on a uniform background, with an optional
//! spherical aorta. Every voxel is classified by its exact distance from
//! the polylines, so the geometry of the rendered masks is known in
//! closed form.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pcat::HuWindow;
use crate::volume::{BinaryMask, Geometry, Point3, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point3,
    pub radius_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    /// Main vessel polylines, world points in mm.
    pub vessels: Vec<Vec<Point3>>,
    /// Side branches, rendered exactly like vessels.
    #[serde(default)]
    pub branches: Vec<Vec<Point3>>,
    pub lumen_radius_mm: f64,
    pub shell_mm: f64,
    #[serde(default = "default_lumen_hu")]
    pub hu_lumen: f64,
    #[serde(default = "default_fat_hu")]
    pub hu_fat: f64,
    #[serde(default = "default_background_hu")]
    pub hu_background: f64,
    #[serde(default)]
    pub aorta: Option<Sphere>,
}

fn default_lumen_hu() -> f64 {
    400.0
}

fn default_fat_hu() -> f64 {
    -100.0
}

fn default_background_hu() -> f64 {
    50.0
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: VoxelGrid<f32>,
    pub vessel_mask: BinaryMask,
    pub aorta_mask: BinaryMask,
}

impl PhantomSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.dims, self.spacing, self.origin).map_err(|e| Error::InvalidPhantom(e.to_string()))
    }

    pub fn polylines(&self) -> impl Iterator<Item = &Vec<Point3>> {
        self.vessels.iter().chain(&self.branches)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.geometry()?;
        let bad = |m: String| Err(Error::InvalidPhantom(m));
        if !(self.lumen_radius_mm > 0.0) {
            return bad(format!("lumen radius must be positive, got {}", self.lumen_radius_mm));
        }
        if !(self.shell_mm >= 0.0) {
            return bad(format!("shell thickness must be non-negative, got {}", self.shell_mm));
        }
        let window = HuWindow::default();
        if !window.contains(self.hu_fat) {
            return bad(format!("fat HU {} outside {window}", self.hu_fat));
        }
        for (name, hu) in [("lumen", self.hu_lumen), ("background", self.hu_background)] {
            if window.contains(hu) {
                return bad(format!("{name} HU {hu} inside {window}"));
            }
        }
        if self.vessels.is_empty() {
            return bad("at least one vessel polyline is required".into());
        }
        let hi = [0, 1, 2].map(|a| g.origin[a] + (g.dims[a] - 1) as f64 * g.spacing[a]);
        for line in self.polylines() {
            if line.len() < 2 {
                return bad("polylines need at least two points".into());
            }
            for p in line {
                if (0..3).any(|a| !(p[a] >= g.origin[a] && p[a] <= hi[a])) {
                    return bad(format!("polyline point {p:?} exits the grid"));
                }
            }
        }
        if let Some(s) = self.aorta {
            if !(s.radius_mm > 0.0) {
                return bad("aorta radius must be positive".into());
            }
        }
        Ok(())
    }

    /// Exact distance from `p` to the nearest polyline.
    pub fn distance_to_vessels(&self, p: Point3) -> f64 {
        self.polylines()
            .flat_map(|l| l.windows(2))
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Straight vessel along +z through the grid center, `length_mm` long,
    /// starting `margin_mm` above the bottom slice. Axis on voxel centers.
    pub fn straight_z(dims: [usize; 3], spacing: f64, length_mm: f64, margin_mm: f64) -> Self {
        let cx = (dims[0] / 2) as f64 * spacing;
        let cy = (dims[1] / 2) as f64 * spacing;
        Self {
            dims,
            spacing: [spacing; 3],
            origin: [0.0; 3],
            vessels: vec![vec![[cx, cy, margin_mm], [cx, cy, margin_mm + length_mm]]],
            branches: Vec::new(),
            lumen_radius_mm: 1.5,
            shell_mm: 3.0,
            hu_lumen: default_lumen_hu(),
            hu_fat: default_fat_hu(),
            hu_background: default_background_hu(),
            aorta: None,
        }
    }

    /// Left main of `lm_mm` running down (-z) from `top`, splitting into two
    /// `daughter_mm` branches at +/- `half_angle_deg` from the LM direction in
    /// the x-z plane. Grid sized to fit with `margin_mm` on every side.
    pub fn y_branch(spacing: f64, lm_mm: f64, daughter_mm: f64, half_angle_deg: f64, margin_mm: f64) -> Self {
        let (s, c) = half_angle_deg.to_radians().sin_cos();
        let half_width = daughter_mm * s;
        let height = lm_mm + daughter_mm * c;
        let extent = [2.0 * (half_width + margin_mm), 2.0 * margin_mm, height + 2.0 * margin_mm];
        let dims = extent.map(|e| (e / spacing).ceil() as usize + 1);
        // keep the axis on voxel centers
        let snap = |v: f64| (v / spacing).round() * spacing;
        let cx = snap(half_width + margin_mm);
        let cy = snap(margin_mm);
        let top = [cx, cy, snap(height + margin_mm)];
        let branch_point = [cx, cy, top[2] - lm_mm];
        let left = [cx - daughter_mm * s, cy, branch_point[2] - daughter_mm * c];
        let right = [cx + daughter_mm * s, cy, branch_point[2] - daughter_mm * c];
        Self {
            dims,
            spacing: [spacing; 3],
            origin: [0.0; 3],
            vessels: vec![vec![top, branch_point, left]],
            branches: vec![vec![branch_point, right]],
            lumen_radius_mm: 1.5,
            shell_mm: 3.0,
            hu_lumen: default_lumen_hu(),
            hu_fat: default_fat_hu(),
            hu_background: default_background_hu(),
            aorta: None,
        }
    }

    /// Aorta sphere with two vessels leaving it: one toward patient right
    /// and anterior (+x, +y), one toward patient left and posterior, each
    /// turning downward after a short horizontal run. The left vessel
    /// splits after its first leg, with the extra branch heading anterior.
    pub fn artery_pair(spacing: f64) -> Self {
        let dims = [161, 121, 141];
        let g = |i: usize| i as f64 * spacing;
        let center = [g(80), g(60), g(100)];
        let radius = 12.0;
        let rca = vec![
            [center[0] + radius, center[1] + 4.0, center[2]],
            [center[0] + radius + 8.0, center[1] + 8.0, center[2]],
            [center[0] + radius + 12.0, center[1] + 10.0, center[2] - 46.0],
        ];
        let bifurcation = [center[0] - radius - 8.0, center[1] - 8.0, center[2]];
        let lca = vec![
            [center[0] - radius, center[1] - 4.0, center[2]],
            bifurcation,
            [center[0] - radius - 14.0, center[1] - 12.0, center[2] - 46.0],
        ];
        let anterior = vec![bifurcation, [bifurcation[0] - 2.0, bifurcation[1] + 18.0, center[2] - 44.0]];
        Self {
            dims,
            spacing: [spacing; 3],
            origin: [0.0; 3],
            vessels: vec![rca, lca],
            branches: vec![anterior],
            lumen_radius_mm: 1.5,
            shell_mm: 3.0,
            hu_lumen: default_lumen_hu(),
            hu_fat: default_fat_hu(),
            hu_background: default_background_hu(),
            aorta: Some(Sphere {
                center,
                radius_mm: radius,
            }),
        }
    }
}

fn segment_distance(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Render image, vessel mask and aorta mask. Voxels within the lumen radius
/// of a polyline are lumen (and vessel mask), within lumen + shell are fat,
/// the rest background. Aorta voxels take the lumen HU and are excluded
/// from the vessel mask.
pub fn render(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let g = spec.geometry()?;
    let [nx, ny, _] = g.dims;
    let slice = nx * ny;
    let outer = spec.lumen_radius_mm + spec.shell_mm;
    let segments: Vec<(Point3, Point3)> = spec
        .polylines()
        .flat_map(|l| l.windows(2).map(|w| (w[0], w[1])))
        .collect();
    let z_range = |a: f64, b: f64| (a.min(b) - outer, a.max(b) + outer);

    let mut image = vec![spec.hu_background as f32; g.len()];
    let mut vessel = vec![false; g.len()];
    let mut aorta = vec![false; g.len()];
    image
        .par_chunks_mut(slice)
        .zip(vessel.par_chunks_mut(slice))
        .zip(aorta.par_chunks_mut(slice))
        .enumerate()
        .for_each(|(k, ((img, ves), aor))| {
            let z = g.origin[2] + k as f64 * g.spacing[2];
            let near: Vec<&(Point3, Point3)> = segments
                .iter()
                .filter(|(a, b)| {
                    let (lo, hi) = z_range(a[2], b[2]);
                    z >= lo && z <= hi
                })
                .collect();
            for j in 0..ny {
                for i in 0..nx {
                    let p = g.world_unchecked([i, j, k]);
                    let l = i + nx * j;
                    if let Some(s) = spec.aorta {
                        let d2: f64 = (0..3).map(|a| (p[a] - s.center[a]).powi(2)).sum();
                        if d2.sqrt() <= s.radius_mm {
                            aor[l] = true;
                            img[l] = spec.hu_lumen as f32;
                            continue;
                        }
                    }
                    let d = near
                        .iter()
                        .map(|(a, b)| segment_distance(p, *a, *b))
                        .fold(f64::INFINITY, f64::min);
                    if d <= spec.lumen_radius_mm {
                        ves[l] = true;
                        img[l] = spec.hu_lumen as f32;
                    } else if d <= outer {
                        img[l] = spec.hu_fat as f32;
                    }
                }
            }
        });
    Ok(Phantom {
        image: VoxelGrid::from_vec(g, image)?,
        vessel_mask: VoxelGrid::from_vec(g, vessel)?,
        aorta_mask: VoxelGrid::from_vec(g, aorta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{connected_components, Connectivity};

    #[test]
    fn straight_tube_matches_independent_rasterizer() {
        let spec = PhantomSpec::straight_z([32, 32, 60], 0.5, 20.0, 5.0);
        let ph = render(&spec).unwrap();
        let g = ph.image.geometry();
        // cylinder around x = y = 8 mm between z = 5 and z = 25, plus spherical caps
        let mut expected = 0;
        for k in 0..60 {
            for j in 0..32 {
                for i in 0..32 {
                    let (x, y, z) = (i as f64 * 0.5 - 8.0, j as f64 * 0.5 - 8.0, k as f64 * 0.5);
                    let dz = if z < 5.0 { 5.0 - z } else if z > 25.0 { z - 25.0 } else { 0.0 };
                    if x * x + y * y + dz * dz <= 1.5 * 1.5 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(ph.vessel_mask.count(), expected);
        assert_eq!(g.dims, [32, 32, 60]);
        assert_eq!(ph.image.get([16, 16, 30]), 400.0);
        assert_eq!(ph.image.get([16, 16 + 5, 30]), -100.0);
        assert_eq!(ph.image.get([0, 0, 0]), 50.0);
    }

    #[test]
    fn zero_shell_has_no_fat() {
        let mut spec = PhantomSpec::straight_z([24, 24, 40], 0.5, 10.0, 5.0);
        spec.shell_mm = 0.0;
        let ph = render(&spec).unwrap();
        let w = HuWindow::default();
        assert!(ph.image.data().iter().all(|&v| !w.contains(v as f64)));
    }

    #[test]
    fn y_phantom_is_one_component() {
        let spec = PhantomSpec::y_branch(0.5, 10.0, 50.0, 35.0, 6.0);
        let ph = render(&spec).unwrap();
        let cc = connected_components(&ph.vessel_mask, Connectivity::TwentySix);
        assert_eq!(cc.len(), 1);
    }

    #[test]
    fn aorta_overrides_vessels() {
        let spec = PhantomSpec::artery_pair(0.5);
        let ph = render(&spec).unwrap();
        let a = spec.aorta.unwrap();
        let c = ph.image.geometry().world_to_nearest_index(a.center).unwrap();
        assert!(ph.aorta_mask.get(c));
        assert!(!ph.vessel_mask.get(c));
        assert_eq!(ph.image.get(c), 400.0);
        assert!(ph.aorta_mask.data().iter().zip(ph.vessel_mask.data()).all(|(a, v)| !(a & v)));
        let cc = connected_components(&ph.vessel_mask, Connectivity::TwentySix);
        assert_eq!(cc.len(), 2);
    }

    #[test]
    fn validation_errors() {
        let base = PhantomSpec::straight_z([24, 24, 40], 0.5, 10.0, 5.0);
        let mut s = base.clone();
        s.vessels[0][1][2] = 100.0;
        assert!(matches!(render(&s), Err(Error::InvalidPhantom(_))));
        let mut s = base.clone();
        s.lumen_radius_mm = 0.0;
        assert!(render(&s).is_err());
        let mut s = base.clone();
        s.hu_fat = 0.0;
        assert!(render(&s).is_err());
        let mut s = base.clone();
        s.hu_background = -50.0;
        assert!(render(&s).is_err());
        let mut s = base;
        s.vessels[0].truncate(1);
        assert!(render(&s).is_err());
    }

    #[test]
    fn doubling_resolution_preserves_fat_volume() {
        let fat_ml = |spacing: f64, dims: usize| {
            let extent = (dims - 1) as f64 * spacing;
            let c = (extent / 2.0 / spacing).round() * spacing;
            let mut spec = PhantomSpec::straight_z([dims, dims, dims], spacing, 0.0, 0.0);
            spec.vessels = vec![vec![[c, c, 4.0], [c, c, extent - 4.0]]];
            let ph = render(&spec).unwrap();
            let n = ph.image.data().iter().filter(|&&v| v == -100.0).count();
            n as f64 * spacing.powi(3)
        };
        let coarse = fat_ml(0.5, 49);
        let fine = fat_ml(0.25, 97);
        assert!((coarse / fine - 1.0).abs() < 0.03, "{coarse} vs {fine}");
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = PhantomSpec::artery_pair(0.5);
        let text = serde_json::to_string(&spec).unwrap();
        let back: PhantomSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let minimal = r#"{"dims":[8,8,8],"spacing":[1,1,1],"vessels":[[[1,1,1],[5,5,5]]],"lumen_radius_mm":1,"shell_mm":1}"#;
        let s: PhantomSpec = serde_json::from_str(minimal).unwrap();
        assert_eq!((s.hu_lumen, s.hu_fat, s.hu_background), (400.0, -100.0, 50.0));
    }
}
