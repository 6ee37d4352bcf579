//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::{backward, Tensor};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compare analytic gradients of `f` against central differences.
///
/// `f` must rebuild its computation from the given leaves on every call and
/// return a scalar. All elements of every leaf are perturbed; the reported
/// value is the worst relative error `|analytic - numeric| / max(1, |numeric|)`.
pub fn check_gradients<F>(name: &str, leaves: &[Tensor], f: F, tolerance: f64) -> Result<CheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for leaf in leaves {
        leaf.clear_grad();
    }
    let root = f(leaves)?;
    backward(&root)?;

    let mut max_rel_err: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = leaf
            .grad()
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let base = leaf.data().to_vec();
        for i in 0..base.len() {
            let h = 1e-5 * base[i].abs().max(1.0);
            let eval = |value: f64| -> Result<f64> {
                let mut data = base.clone();
                data[i] = value;
                let mut probes: Vec<Tensor> = leaves.to_vec();
                probes[li] = Tensor::param(leaf.shape(), data)?;
                Ok(f(&probes)?.item())
            };
            let numeric = (eval(base[i] + h)? - eval(base[i] - h)?) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
        }
    }
    for leaf in leaves {
        leaf.clear_grad();
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err,
        tolerance,
    })
}
