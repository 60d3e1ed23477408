//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, ParamStore, Tensor, TensorError, Var};

/// Denominator floor for the relative error, so exactly-zero gradients compare
/// on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares autodiff against central differences for a scalar-valued `f` of
/// `inputs`, returning the maximum elementwise relative error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(TensorError::NotScalar(g.value(out).shape().to_vec()));
    }
    let grads = g.backward(out);

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = grads.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].values()[i];
            work[k].values_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[k].values_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[k].values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    Ok(worst)
}

/// Same check over the entries of every parameter in `store` accepted by
/// `select`. `f` builds the scalar from parameters it pulls onto the graph.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    select: impl Fn(&str) -> bool,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out);
    let mut analytic = store.clone();
    analytic.zero_grad();
    analytic.accumulate(&g, &grads, 1.0);

    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.iter().filter(|(_, p)| select(&p.name)).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.tensor(id).len();
        let zeros = vec![0.0; n];
        let a = analytic.tensor(id).grad().map(|s| s.to_vec()).unwrap_or(zeros);
        for i in 0..n {
            let orig = store.tensor(id).values()[i];
            work.tensor_mut(id).values_mut()[i] = orig + eps;
            let mut gp = Graph::new();
            let plus = {
                let o = f(&mut gp, &work)?;
                gp.scalar(o)
            };
            work.tensor_mut(id).values_mut()[i] = orig - eps;
            let mut gm = Graph::new();
            let minus = {
                let o = f(&mut gm, &work)?;
                gm.scalar(o)
            };
            work.tensor_mut(id).values_mut()[i] = orig;
            worst = worst.max(relative_error(a[i], (plus - minus) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
