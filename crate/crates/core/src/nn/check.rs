//! Finite-difference gradient oracle.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Mat;
use super::NnError;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn eval<F>(store: &ParamStore, f: &F, inputs: &[Mat]) -> Result<f64, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let out = f(&mut g, &vars);
    let v = g.value(out).item();
    if !v.is_finite() {
        return Err(NnError::NonFinite("grad_check forward".into()));
    }
    Ok(v)
}

/// Largest relative error between the reverse-mode gradient of the scalar
/// `f(inputs)` with respect to `inputs` and central differences with step `eps`.
pub fn grad_check<F>(store: &ParamStore, f: F, inputs: &[Mat], eps: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let out = f(&mut g, &vars);
    if !g.value(out).is_finite() {
        return Err(NnError::NonFinite("grad_check forward".into()));
    }
    let grads = g.backward(out);
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zero = Mat::zeros(inputs[k].rows, inputs[k].cols);
        let analytic = grads.get(*v).unwrap_or(&zero);
        if !analytic.is_finite() {
            return Err(NnError::NonFinite(format!("gradient of input {k}")));
        }
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data[i];
            probe[k].data[i] = x0 + eps;
            let up = eval(store, &f, &probe)?;
            probe[k].data[i] = x0 - eps;
            let down = eval(store, &f, &probe)?;
            probe[k].data[i] = x0;
            worst = worst.max(rel_err(analytic.data[i], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// As [`grad_check`], but differentiating with respect to every parameter in the store.
pub fn grad_check_params<F>(store: &ParamStore, f: F, inputs: &[Mat], eps: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let mut acc = store.zero_grads();
    g.accumulate_param_grads(&grads, &mut acc);
    if !acc.is_finite() {
        return Err(NnError::NonFinite("parameter gradients".into()));
    }
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let x0 = store.value(id).data[i];
            probe.value_mut(id).data[i] = x0 + eps;
            let up = eval(&probe, &f, inputs)?;
            probe.value_mut(id).data[i] = x0 - eps;
            let down = eval(&probe, &f, inputs)?;
            probe.value_mut(id).data[i] = x0;
            worst = worst.max(rel_err(acc.mats[id.index()].data[i], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
