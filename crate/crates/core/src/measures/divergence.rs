use serde::{Deserialize, Serialize};

use super::{
    mmd_with_grad, sinkhorn_divergence_with, sliced_wasserstein_with_grad, EmpiricalMeasure,
    SinkhornOptions,
};
use crate::error::Result;

/// Latent regularizer selectable from the training config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Divergence {
    Sinkhorn(SinkhornOptions),
    Sliced { projections: usize, p: f64 },
    Mmd { bandwidth: Option<f64> },
}

impl Default for Divergence {
    fn default() -> Self {
        Divergence::Sinkhorn(SinkhornOptions::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceOutcome {
    pub value: f64,
    /// Gradient in the points of the first argument.
    pub grad: Vec<f64>,
    /// False only when a Sinkhorn solve ran out of iterations.
    pub converged: bool,
}

impl Divergence {
    pub fn name(&self) -> &'static str {
        match self {
            Divergence::Sinkhorn(_) => "sinkhorn",
            Divergence::Sliced { .. } => "sliced",
            Divergence::Mmd { .. } => "mmd",
        }
    }

    /// `Div(codes, reference)` and its gradient in `codes`. `seed` drives
    /// the random projections of the sliced variant.
    pub fn evaluate(
        &self,
        codes: &EmpiricalMeasure,
        reference: &EmpiricalMeasure,
        seed: u64,
    ) -> Result<DivergenceOutcome> {
        match self {
            Divergence::Sinkhorn(opts) => {
                let (s, grad) = sinkhorn_divergence_with(codes, reference, opts, true)?;
                Ok(DivergenceOutcome {
                    value: s.value,
                    grad: grad.unwrap_or_default(),
                    converged: s.converged,
                })
            }
            Divergence::Sliced { projections, p } => {
                let (value, grad) =
                    sliced_wasserstein_with_grad(codes, reference, *projections, *p, seed)?;
                Ok(DivergenceOutcome {
                    value,
                    grad,
                    converged: true,
                })
            }
            Divergence::Mmd { bandwidth } => {
                let out = mmd_with_grad(codes, reference, *bandwidth)?;
                Ok(DivergenceOutcome {
                    value: out.value,
                    grad: out.grad,
                    converged: true,
                })
            }
        }
    }
}
