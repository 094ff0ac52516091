//! Gaussian-volume shape Tanimoto with deterministic multi-start alignment.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen};

use crate::chem::{Molecule, Vec3};

/// Gaussian amplitude of one atom (Grant and Pickup).
const AMPLITUDE: f64 = 2.7;
const MAX_REFINE_ITERS: usize = 400;
const MIN_STEP: f64 = 1e-5;

/// Atom-centred Gaussians of the heavy atoms (all atoms if there are none).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianShape {
    pub centers: Vec<Vec3>,
    pub alphas: Vec<f64>,
}

impl GaussianShape {
    pub fn new(m: &Molecule) -> Self {
        let heavy: Vec<_> = m.atoms.iter().filter(|a| !a.element.is_hydrogen()).collect();
        let atoms = if heavy.is_empty() { m.atoms.iter().collect() } else { heavy };
        GaussianShape {
            centers: atoms.iter().map(|a| a.position).collect(),
            alphas: atoms.iter().map(|a| width(a.element.vdw_radius())).collect(),
        }
    }

    fn moved(&self, rot: &Matrix3<f64>, shift: &Vec3) -> GaussianShape {
        GaussianShape {
            centers: self.centers.iter().map(|c| rot * c + shift).collect(),
            alphas: self.alphas.clone(),
        }
    }

    fn centroid(&self) -> Vec3 {
        self.centers.iter().sum::<Vec3>() / self.centers.len() as f64
    }
}

/// Exponent giving a Gaussian of amplitude [`AMPLITUDE`] the volume of a sphere of radius `r`.
fn width(r: f64) -> f64 {
    PI * (3.0 * AMPLITUDE / (4.0 * PI * r.powi(3))).powf(2.0 / 3.0)
}

/// First-order overlap volume of two Gaussian sets.
pub fn overlap(a: &GaussianShape, b: &GaussianShape) -> f64 {
    let mut v = 0.0;
    for (ca, &aa) in a.centers.iter().zip(&a.alphas) {
        for (cb, &ab) in b.centers.iter().zip(&b.alphas) {
            let s = aa + ab;
            let d2 = (ca - cb).norm_squared();
            v += AMPLITUDE * AMPLITUDE * (PI / s).powf(1.5) * (-aa * ab / s * d2).exp();
        }
    }
    v
}

fn tanimoto(vab: f64, vaa: f64, vbb: f64) -> f64 {
    let denom = vaa + vbb - vab;
    if denom <= 0.0 {
        return 0.0;
    }
    (vab / denom).clamp(0.0, 1.0)
}

/// Tanimoto of the molecules in their given poses.
pub fn shape_tanimoto_unaligned(a: &Molecule, b: &Molecule) -> f64 {
    let (ga, gb) = (GaussianShape::new(a), GaussianShape::new(b));
    tanimoto(overlap(&ga, &gb), overlap(&ga, &ga), overlap(&gb, &gb))
}

/// Principal axes as matrix rows, largest variance first, right-handed.
fn principal_frame(points: &[Vec3], center: &Vec3) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - center;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut frame = Matrix3::zeros();
    for (row, &k) in order.iter().enumerate() {
        let mut axis = eig.eigenvectors.column(k).into_owned();
        // Sign convention: largest-magnitude component positive.
        let imax = axis.iamax();
        if axis[imax] < 0.0 {
            axis = -axis;
        }
        frame.set_row(row, &axis.transpose());
    }
    if frame.determinant() < 0.0 {
        let r = -frame.row(2);
        frame.set_row(2, &r);
    }
    frame
}

/// The 24 proper rotations that permute and flip the coordinate axes.
pub fn axis_rotations() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in PERMS {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// Best rigid pose of `b` on `a`: `(tanimoto, rotation, translation)` applied as `R x + t`.
pub fn align(a: &Molecule, b: &Molecule) -> (f64, Matrix3<f64>, Vec3) {
    let (ga, gb) = (GaussianShape::new(a), GaussianShape::new(b));
    let (vaa, vbb) = (overlap(&ga, &ga), overlap(&gb, &gb));
    let (ca, cb) = (ga.centroid(), gb.centroid());
    let (fa, fb) = (principal_frame(&ga.centers, &ca), principal_frame(&gb.centers, &cb));
    let mut best = (f64::NEG_INFINITY, Matrix3::identity(), Vec3::zeros());
    for p in axis_rotations() {
        let r0 = fa.transpose() * p * fb;
        let t0 = ca - r0 * cb;
        let (v, r, t) = refine(&ga, &gb, r0, t0);
        let score = tanimoto(v, vaa, vbb);
        if score > best.0 {
            best = (score, r, t);
        }
    }
    best
}

/// Pattern search over a small rotation about the centroid of `a` and a translation.
fn refine(a: &GaussianShape, b: &GaussianShape, r0: Matrix3<f64>, t0: Vec3) -> (f64, Matrix3<f64>, Vec3) {
    let pivot = a.centroid();
    let pose = |params: &[f64; 6]| {
        let dr = Rotation3::new(Vec3::new(params[0], params[1], params[2])).into_inner();
        let r = dr * r0;
        let t = dr * (t0 - pivot) + pivot + Vec3::new(params[3], params[4], params[5]);
        (r, t)
    };
    let score = |params: &[f64; 6]| {
        let (r, t) = pose(params);
        overlap(a, &b.moved(&r, &t))
    };
    let mut params = [0.0; 6];
    let mut cur = score(&params);
    let (mut rot_step, mut shift_step) = (0.2, 0.5);
    for _ in 0..MAX_REFINE_ITERS {
        let mut improved = false;
        for k in 0..6 {
            let step = if k < 3 { rot_step } else { shift_step };
            for dir in [1.0, -1.0] {
                let mut trial = params;
                trial[k] += dir * step;
                let v = score(&trial);
                if v > cur {
                    cur = v;
                    params = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            rot_step *= 0.5;
            shift_step *= 0.5;
            if rot_step < MIN_STEP {
                break;
            }
        }
    }
    let (r, t) = pose(&params);
    (cur, r, t)
}

/// Shape Tanimoto after aligning each molecule onto the other, keeping the better one.
pub fn shape_similarity(a: &Molecule, b: &Molecule) -> f64 {
    align(a, b).0.max(align(b, a).0)
}
