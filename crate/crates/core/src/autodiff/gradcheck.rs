//! Central finite-difference checks of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients smaller than this are compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub probes: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences with step `eps`, over every coordinate of every input (or the
/// listed `(input, index)` probes when given).
pub fn check<F>(f: F, inputs: &[Tensor], eps: f64, probes: Option<&[(usize, usize)]>) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let all: Vec<(usize, usize)>;
    let probes = match probes {
        Some(p) => p,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k)))
                .collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for &(i, k) in probes {
        let orig = xs[i].data[k];
        xs[i].data[k] = orig + eps;
        let fp = eval(&xs)?;
        xs[i].data[k] = orig - eps;
        let fm = eval(&xs)?;
        xs[i].data[k] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data[k]);
        worst = worst.max(relative_error(analytic, numeric, DEFAULT_FLOOR));
    }
    Ok(GradCheck {
        max_rel_error: worst,
        probes: probes.len(),
    })
}
