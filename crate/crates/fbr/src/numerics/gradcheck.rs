//! Finite-difference verification of reverse-mode gradients.

use crate::error::{FbrError, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Outcome of comparing analytic gradients against central differences.
///
/// `worst_index` is a flat index into the concatenation of all checked
/// inputs in argument order. A loss with a kink at the evaluation point
/// shows up as a large `max_rel_error` at the offending index.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare reverse-mode gradients of a scalar loss against central finite
/// differences, elementwise over every input tensor.
///
/// The relative error denominator is floored at `1e-8` so near-zero
/// gradients do not blow up the ratio.
pub fn grad_check<F>(build: F, inputs: &[Tensor], step: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(FbrError::InvalidArgument("step must be positive".into()));
    }
    if inputs.is_empty() {
        return Err(FbrError::InvalidArgument("no inputs to check".into()));
    }
    let tracked: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad()).collect();

    let eval = |tensors: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t)).collect();
        let loss = build(&mut g, &vars)?;
        if g.numel(loss) != 1 {
            return Err(FbrError::Contract(format!(
                "loss must be scalar, got {} elements",
                g.numel(loss)
            )));
        }
        Ok((g, vars, loss))
    };

    let (graph, vars, loss) = eval(&tracked)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&tracked)
        .map(|(v, t)| grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    let mut flat = 0usize;
    let mut work = tracked.clone();
    for ti in 0..work.len() {
        for j in 0..work[ti].numel() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + step;
            let (gp, _, lp) = eval(&work)?;
            let f_plus = gp.value(lp)[0];
            work[ti].data_mut()[j] = orig - step;
            let (gm, _, lm) = eval(&work)?;
            let f_minus = gm.value(lm)[0];
            work[ti].data_mut()[j] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[ti][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report = GradReport { max_rel_error: rel, worst_index: flat, analytic: a, numeric };
            }
            flat += 1;
        }
    }
    Ok(report)
}
