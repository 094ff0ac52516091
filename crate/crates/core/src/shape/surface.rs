use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ShapeError;
use crate::chem::{centroid, Molecule, Vec3};

/// Surface points centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, rot: &nalgebra::Matrix3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| rot * p).collect(),
        }
    }
}

/// Union of atom spheres in the cloud's centred frame, plus the sampled surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceModel {
    pub centers: Vec<Vec3>,
    pub radii: Vec<f64>,
    /// Centroid of the raw surface sample, subtracted from everything above.
    pub offset: Vec3,
    pub points: Vec<Vec3>,
}

impl SurfaceModel {
    /// Whether `q` lies strictly inside at least one sphere.
    pub fn contains(&self, q: &Vec3) -> bool {
        self.centers
            .iter()
            .zip(&self.radii)
            .any(|(c, r)| (q - c).norm_squared() < r * r)
    }

    /// Distance to the nearest surface sample, positive inside the union.
    pub fn signed_distance(&self, q: &Vec3) -> f64 {
        let d = self
            .points
            .iter()
            .map(|p| (p - q).norm_squared())
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        if self.contains(q) {
            d
        } else {
            -d
        }
    }

    /// Axis-aligned bounds of the sampled surface.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Samples `n` points uniformly by area on the exposed part of a union of spheres.
pub fn sample_sphere_union(centers: &[Vec3], radii: &[f64], n: usize, rng: &mut impl Rng) -> Result<Vec<Vec3>, ShapeError> {
    let areas: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    let max_tries = 2000 * n.max(1);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > max_tries {
            return Err(ShapeError::NoExposedSurface);
        }
        let mut u = rng.random::<f64>() * total;
        let mut a = 0;
        while a + 1 < areas.len() && u >= areas[a] {
            u -= areas[a];
            a += 1;
        }
        let p = centers[a] + unit_vector(rng) * radii[a];
        let buried = centers
            .iter()
            .zip(radii)
            .enumerate()
            .any(|(b, (c, r))| b != a && (p - c).norm_squared() < r * r);
        if !buried {
            out.push(p);
        }
    }
    Ok(out)
}

/// Samples the van der Waals surface of `m` and centres it at the origin.
pub fn build_surface_point_cloud(m: &Molecule, n: usize, rng: &mut impl Rng) -> Result<(PointCloud, SurfaceModel), ShapeError> {
    if m.atoms.is_empty() {
        return Err(ShapeError::Degenerate("molecule has no atoms".into()));
    }
    if m.atoms.len() > 1 {
        let first = m.atoms[0].position;
        if m.atoms.iter().all(|a| (a.position - first).norm() < 1e-8) {
            return Err(ShapeError::Degenerate("all atoms coincide".into()));
        }
    }
    let centers: Vec<Vec3> = m.atoms.iter().map(|a| a.position).collect();
    let radii: Vec<f64> = m.atoms.iter().map(|a| a.element.vdw_radius()).collect();
    let raw = sample_sphere_union(&centers, &radii, n, rng)?;
    let offset = centroid(&raw).map_err(|e| ShapeError::Degenerate(e.to_string()))?;
    let points: Vec<Vec3> = raw.iter().map(|p| p - offset).collect();
    let surface = SurfaceModel {
        centers: centers.iter().map(|c| c - offset).collect(),
        radii,
        offset,
        points: points.clone(),
    };
    Ok((PointCloud { points }, surface))
}
