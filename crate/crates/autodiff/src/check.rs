//! Central-finite-difference verification of analytic gradients.
//!
//! [`gradient_check`] evaluates a tensor function under componentwise
//! `(f(x+eps) - f(x-eps)) / (2 eps)` perturbations and compares against
//! the gradients produced by [`Tape::backward`]. It is the oracle used to
//! validate every primitive and every network layer built on the engine.

use std::fmt;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

/// One named input to a checked function.
#[derive(Debug, Clone)]
pub struct CheckInput {
    pub name: String,
    pub tensor: Tensor,
    pub requires_grad: bool,
}

impl CheckInput {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
            requires_grad: true,
        }
    }

    pub fn frozen(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
            requires_grad: false,
        }
    }
}

/// Per-input worst-case relative error between analytic and numeric
/// gradients. Inputs with `requires_grad = false` do not appear.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub eps: Real,
    pub tol: Real,
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: Real,
    pub components: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> Real {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, Real::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check (eps={:.1e}, tol={:.1e})", self.eps, self.tol)?;
        writeln!(f, "{:<24} {:>12} {:>10}  status", "input", "max rel err", "n")?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<24} {:>12.3e} {:>10}  {}",
                e.name,
                e.max_rel_err,
                e.components,
                if e.max_rel_err < self.tol { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Checks analytic gradients of `f` against central finite differences.
///
/// `f` receives a fresh tape and one `Var` per input (in order) and must
/// return a scalar loss. It must be deterministic: the loss is evaluated
/// twice up front and any bitwise difference is reported as
/// [`Error::NonDeterministic`]. Relative error uses the denominator
/// `max(1, |analytic|, |numeric|)`.
pub fn gradient_check<F>(
    f: F,
    inputs: &[CheckInput],
    eps: Real,
    tol: Real,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor], with_grad: bool| -> Result<(Real, Vec<Option<Tensor>>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .zip(inputs)
            .map(|(t, spec)| tape.leaf(t.clone(), with_grad && spec.requires_grad))
            .collect();
        let loss = f(&tape, &vars)?;
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let value = tape.value(&loss).item();
        let grads = if with_grad {
            tape.backward(&loss)?;
            vars.iter().map(|v| tape.grad(v)).collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let base: Vec<Tensor> = inputs.iter().map(|i| i.tensor.clone()).collect();

    let (v1, _) = eval(&base, false)?;
    let (v2, _) = eval(&base, false)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let (_, analytic) = eval(&base, true)?;

    let mut entries = Vec::new();
    for (i, spec) in inputs.iter().enumerate() {
        if !spec.requires_grad {
            continue;
        }
        let grad = analytic[i]
            .as_ref()
            .expect("requires_grad input has gradient buffer");
        let mut max_rel = 0.0;
        for c in 0..spec.tensor.numel() {
            let mut plus = base.clone();
            plus[i].data_mut()[c] += eps;
            let mut minus = base.clone();
            minus[i].data_mut()[c] -= eps;
            let (fp, _) = eval(&plus, false)?;
            let (fm, _) = eval(&minus, false)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grad.data()[c];
            let rel = (a - numeric).abs() / (1.0 as Real).max(a.abs()).max(numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
        entries.push(GradCheckEntry {
            name: spec.name.clone(),
            max_rel_err: max_rel,
            components: spec.tensor.numel(),
        });
    }

    Ok(GradCheckReport { entries, eps, tol })
}
