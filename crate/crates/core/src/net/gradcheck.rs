use super::{loss_and_grad, Gradients, Network, NetworkParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of an arbitrary scalar function of the parameters.
pub fn finite_diff_gradient_fn<F>(params: &NetworkParams, h: f64, mut f: F) -> Result<Gradients>
where
    F: FnMut(&NetworkParams) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    for i in 0..params.len() {
        let orig = params.get(i).expect("index in range");
        *probe.get_mut(i).expect("index in range") = orig + h;
        let up = f(&probe)?;
        *probe.get_mut(i).expect("index in range") = orig - h;
        let down = f(&probe)?;
        *probe.get_mut(i).expect("index in range") = orig;
        *grad.get_mut(i).expect("index in range") = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference gradient of the mean cross-entropy loss of `net`.
pub fn finite_diff_gradient(
    net: &Network,
    params: &NetworkParams,
    batch: &Tensor,
    labels: &[usize],
    h: f64,
) -> Result<Gradients> {
    finite_diff_gradient_fn(params, h, |p| {
        let (logits, _) = net.forward(p, batch)?;
        Ok(loss_and_grad(&logits, labels)?.0)
    })
}
