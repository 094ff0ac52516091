//! Binary cache of a point cloud and its query set.
//!
//! Layout (little-endian): `SDPC`, `u16` version, `u32` point count,
//! `u32` query count, point triples, query triples, query distances, all `f32`.

use std::io::{Read, Write};

use super::query::QuerySet;
use super::surface::PointCloud;
use super::ShapeError;
use crate::chem::Vec3;

pub const CACHE_MAGIC: &[u8; 4] = b"SDPC";
pub const CACHE_VERSION: u16 = 1;

fn put_f32s(w: &mut impl Write, xs: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_sample(w: &mut impl Write, cloud: &PointCloud, queries: &QuerySet) -> Result<(), ShapeError> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(cloud.len() as u32).to_le_bytes())?;
    w.write_all(&(queries.len() as u32).to_le_bytes())?;
    put_f32s(w, cloud.points.iter().flat_map(|p| [p.x, p.y, p.z]))?;
    put_f32s(w, queries.points.iter().flat_map(|p| [p.x, p.y, p.z]))?;
    put_f32s(w, queries.sdf.iter().copied())?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ShapeError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ShapeError::Cache("truncated".into()),
        _ => ShapeError::Io(e),
    })?;
    Ok(b)
}

fn get_points(r: &mut impl Read, n: usize) -> Result<Vec<Vec3>, ShapeError> {
    (0..n)
        .map(|_| {
            let mut v = [0.0; 3];
            for x in &mut v {
                *x = f32::from_le_bytes(take(r)?) as f64;
            }
            Ok(Vec3::from(v))
        })
        .collect()
}

pub fn read_sample(r: &mut impl Read) -> Result<(PointCloud, QuerySet), ShapeError> {
    if &take::<4>(r)? != CACHE_MAGIC {
        return Err(ShapeError::Cache("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(r)?);
    if version != CACHE_VERSION {
        return Err(ShapeError::Cache(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(take(r)?) as usize;
    let q = u32::from_le_bytes(take(r)?) as usize;
    let points = get_points(r, n)?;
    let qpoints = get_points(r, q)?;
    let sdf = (0..q)
        .map(|_| Ok(f32::from_le_bytes(take(r)?) as f64))
        .collect::<Result<Vec<_>, ShapeError>>()?;
    if points.iter().chain(&qpoints).any(|p| !p.iter().all(|x| x.is_finite())) || sdf.iter().any(|x| !x.is_finite()) {
        return Err(ShapeError::Cache("non-finite value".into()));
    }
    Ok((PointCloud { points }, QuerySet { points: qpoints, sdf }))
}
