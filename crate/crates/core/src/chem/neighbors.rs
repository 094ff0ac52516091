use super::{ChemError, Vec3};

/// Directed edge `src -> dst`; `dst` aggregates messages from `src`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

pub fn centroid(points: &[Vec3]) -> Result<Vec3, ChemError> {
    if points.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    Ok(points.iter().sum::<Vec3>() / points.len() as f64)
}

/// Subtracts `origin` from every point.
pub fn center_positions(points: &[Vec3], origin: Vec3) -> Result<Vec<Vec3>, ChemError> {
    if points.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    Ok(points.iter().map(|p| p - origin).collect())
}

/// For every node `i`, edges from its `k` nearest other nodes, nearest first.
/// Equal distances go to the lower index. Output is grouped by destination.
pub fn knn_edges(points: &[Vec3], k: usize) -> Result<Vec<Edge>, ChemError> {
    let n = points.len();
    if k >= n {
        return Err(ChemError::TooFewPoints { k, n });
    }
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, pi) in points.iter().enumerate() {
        cand.clear();
        cand.extend(
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, pj)| ((pj - pi).norm_squared(), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        edges.extend(cand.iter().map(|&(_, j)| Edge { src: j, dst: i }));
    }
    Ok(edges)
}
