use rayon::prelude::*;

use super::{Grads, Graph, ParamStore, Var};

/// Per-item losses and the summed parameter gradients over a batch.
///
/// Items are evaluated in parallel, each on its own graph; gradients are
/// reduced in item order so the result does not depend on the thread count.
pub fn batch_gradients<T, E, F>(store: &ParamStore, items: &[T], f: F) -> Result<(Vec<f64>, Grads), E>
where
    T: Sync,
    E: Send,
    F: Fn(&mut Graph, &T) -> Result<Var, E> + Sync,
{
    let per_item: Vec<Result<(f64, Grads), E>> = items
        .par_iter()
        .map(|item| {
            let mut g = Graph::new(store);
            let loss = f(&mut g, item)?;
            let grads = g.backward(loss);
            let mut acc = store.zero_grads();
            g.accumulate_param_grads(&grads, &mut acc);
            Ok((g.value(loss).item(), acc))
        })
        .collect();
    let mut total = store.zero_grads();
    let mut losses = Vec::with_capacity(items.len());
    for r in per_item {
        let (l, gr) = r?;
        losses.push(l);
        total.add_assign(&gr);
    }
    Ok((losses, total))
}

/// Per-item losses without gradients.
pub fn batch_losses<T, E, F>(store: &ParamStore, items: &[T], f: F) -> Result<Vec<f64>, E>
where
    T: Sync,
    E: Send,
    F: Fn(&mut Graph, &T) -> Result<Var, E> + Sync,
{
    items
        .par_iter()
        .map(|item| {
            let mut g = Graph::new(store);
            let loss = f(&mut g, item)?;
            Ok(g.value(loss).item())
        })
        .collect()
}
