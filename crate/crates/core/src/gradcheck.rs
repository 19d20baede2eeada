//! Central finite-difference gradient checking in 64-bit.
//!
//! The check only evaluates the forward pass, so it is independent of the
//! backward rules it validates.

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input,
    /// over the probed elements.
    pub rel_errors: Vec<f64>,
    pub probes: usize,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds a scalar function of `inputs` with `f`, differentiates it, and
/// compares every probed element against `(L(x+h) − L(x−h)) / 2h`.
/// At most `max_probes` evenly spaced elements of each input are probed.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, max_probes: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut probes = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let step = n.div_ceil(max_probes.max(1)).max(1);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for e in (0..n).step_by(step) {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[e];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            probes += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        rel_errors.push(if denom == 0.0 {
            0.0
        } else {
            diff2.sqrt() / denom
        });
    }
    Ok(GradCheck { rel_errors, probes })
}
