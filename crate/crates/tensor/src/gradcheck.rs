//! Finite-difference verification of [`Graph::backward`].

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(|a|, |n|, 1e-6)` over the compared elements.
    pub max_rel_error: f64,
    /// Elements compared.
    pub checked: usize,
    /// Elements whose `±eps` probe straddled a ReLU/abs kink; central
    /// differences are not an estimate of the derivative there.
    pub skipped_kinks: usize,
}

const DENOM_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the scalar built by `f` against central
/// differences `(f(x+eps) − f(x−eps)) / 2eps`, element by element.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: T) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > T::zero() && eps.as_f64() <= 1e-2) {
        return Err(TensorError::Contract(format!("grad_check eps must lie in (0, 1e-2], got {eps}")));
    }
    let eval = |xs: &[Tensor<T>]| -> Result<(T, Vec<bool>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.param(x.clone())).collect();
        let out = f(&mut g, &ids)?;
        Ok((g.value(out).item()?, g.kink_signature()))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &ids)?;
    let base_sig = g.kink_signature();
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<T>> = ids.iter().map(|&id| grads.wrt(id)).collect();
    drop(g);

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut values = input.data().to_vec();
            let x0 = values[j];
            values[j] = x0 + eps;
            probe[i] = Tensor::new(input.shape().to_vec(), values.clone())?;
            let (fp, sig_p) = eval(&probe)?;
            values[j] = x0 - eps;
            probe[i] = Tensor::new(input.shape().to_vec(), values)?;
            let (fm, sig_m) = eval(&probe)?;
            probe[i] = input.clone();
            if sig_p != base_sig || sig_m != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm).as_f64() / (2.0 * eps.as_f64());
            let a = analytic[i].data()[j].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
