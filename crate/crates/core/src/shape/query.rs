use rand::Rng;

use super::surface::SurfaceModel;
use crate::chem::Vec3;

/// Query points with signed distances to the surface (positive inside).
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub points: Vec<Vec3>,
    pub sdf: Vec<f64>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inside_count(&self) -> usize {
        self.sdf.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Margin added to each side of the surface bounding box.
pub const BOX_MARGIN: f64 = 1.0;

fn uniform_in_box(lo: &Vec3, hi: &Vec3, rng: &mut impl Rng) -> Vec3 {
    Vec3::from_fn(|a, _| lo[a] + (hi[a] - lo[a]) * rng.random::<f64>())
}

/// Draws `3k` candidates in the surface box grown by [`BOX_MARGIN`], keeps
/// `n = min(inside, k/2)` interior ones and fills the rest from the exterior.
pub fn sample_query_points(surface: &SurfaceModel, k: usize, rng: &mut impl Rng) -> QuerySet {
    let (lo, hi) = surface.bounds();
    let lo = lo.add_scalar(-BOX_MARGIN);
    let hi = hi.add_scalar(BOX_MARGIN);
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for _ in 0..3 * k {
        let q = uniform_in_box(&lo, &hi, rng);
        if surface.contains(&q) {
            inside.push(q);
        } else {
            outside.push(q);
        }
    }
    let n_in = inside.len().min(k / 2);
    // Top up the exterior if a bulky shape filled most of the box.
    let mut guard = 0;
    while outside.len() < k - n_in && guard < 1000 * k {
        let q = uniform_in_box(&lo, &hi, rng);
        if !surface.contains(&q) {
            outside.push(q);
        }
        guard += 1;
    }
    let mut points: Vec<Vec3> = inside.into_iter().take(n_in).collect();
    points.extend(outside.into_iter().take(k - n_in));
    let sdf = points.iter().map(|q| surface.signed_distance(q)).collect();
    QuerySet { points, sdf }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{Atom, Element, Molecule};
    use crate::shape::build_surface_point_cloud;
    use crate::shape::surface::sample_sphere_union;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere(rng: &mut ChaCha8Rng) -> SurfaceModel {
        let points = sample_sphere_union(&[Vec3::zeros()], &[1.0], 512, rng).unwrap();
        SurfaceModel {
            centers: vec![Vec3::zeros()],
            radii: vec![1.0],
            offset: Vec3::zeros(),
            points,
        }
    }

    #[test]
    fn sphere_centre_and_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = unit_sphere(&mut rng);
        assert!((s.signed_distance(&Vec3::zeros()) - 1.0).abs() < 0.05);
        let on = s.points[7] * 1.0;
        assert!(s.signed_distance(&on).abs() < 1e-12);
        assert!(s.signed_distance(&Vec3::new(3.0, 0.0, 0.0)) < -1.5);
    }

    #[test]
    fn half_inside_when_possible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // A 3x3x3 block of carbons fills about a third of its box.
        let atoms = (0..27)
            .map(|i| Atom::new(Element::C, Vec3::new((i % 3) as f64, (i / 3 % 3) as f64, (i / 9) as f64) * 1.5))
            .collect();
        let m = Molecule::new("blob", atoms, vec![]).unwrap();
        let (_, s) = build_surface_point_cloud(&m, 256, &mut rng).unwrap();
        let q = sample_query_points(&s, 200, &mut rng);
        assert_eq!(q.len(), 200);
        assert_eq!(q.inside_count(), 100);
        for (p, d) in q.points.iter().zip(&q.sdf) {
            assert_eq!(*d > 0.0, s.contains(p));
        }
    }

    #[test]
    fn thin_shape_keeps_every_interior_candidate() {
        // A chain of hydrogens along x leaves the box mostly empty.
        let atoms = (0..12).map(|k| Atom::new(Element::H, Vec3::new(k as f64 * 2.2, 0.0, 0.0))).collect();
        let m = Molecule::new("chain", atoms, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, s) = build_surface_point_cloud(&m, 256, &mut rng).unwrap();
        // Replay the candidate stream to count interior hits independently.
        let mut replay = ChaCha8Rng::seed_from_u64(3);
        let (lo, hi) = s.bounds();
        let (lo, hi) = (lo.add_scalar(-BOX_MARGIN), hi.add_scalar(BOX_MARGIN));
        let k = 300;
        let n_inside = (0..3 * k).filter(|_| s.contains(&uniform_in_box(&lo, &hi, &mut replay))).count();
        assert!(n_inside < k / 2, "{n_inside}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = sample_query_points(&s, k, &mut rng);
        assert_eq!(q.inside_count(), n_inside);
        assert_eq!(q.len(), k);
    }
}
