use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::DiffError;

/// Per-element comparison of an analytic gradient against central finite
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub rel_errors: Vec<f64>,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

// Relative error with an absolute floor so near-zero gradient pairs do not
// divide by noise.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn eval_scalar<F>(f: &F, point: &Tensor, context: &str) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x);
    let yv = tape.value(y);
    if yv.numel() != 1 {
        return Err(DiffError::Invalid(format!(
            "grad_check: function produced {} values, expected a scalar",
            yv.numel()
        )));
    }
    let v = yv.data()[0];
    if !v.is_finite() {
        return Err(DiffError::NonFinite {
            context: context.to_string(),
        });
    }
    Ok(v)
}

/// Compare the analytic gradient of a scalar-valued function at `point`
/// against central finite differences with step `epsilon`.
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let all: Vec<usize> = (0..point.numel()).collect();
    grad_check_subset(f, point, epsilon, &all)
}

/// [`grad_check`] restricted to a subset of elements; used where finite
/// differences over every parameter would be wasteful.
pub fn grad_check_subset<F>(
    f: F,
    point: &Tensor,
    epsilon: f64,
    elements: &[usize],
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    assert!(epsilon > 0.0, "grad_check: epsilon must be positive");
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x);
    if tape.value(y).numel() != 1 {
        return Err(DiffError::Invalid(format!(
            "grad_check: function produced {} values, expected a scalar",
            tape.value(y).numel()
        )));
    }
    if !tape.value(y).data()[0].is_finite() {
        return Err(DiffError::NonFinite {
            context: "base point".to_string(),
        });
    }
    let grads = tape.backward(y);
    let analytic_full = grads.get_or_zeros(x, point.shape());

    let mut analytic = Vec::with_capacity(elements.len());
    let mut numeric = Vec::with_capacity(elements.len());
    let mut rel_errors = Vec::with_capacity(elements.len());
    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for &i in elements {
        let mut plus = point.clone();
        plus.data_mut()[i] += epsilon;
        let fp = eval_scalar(&f, &plus, &format!("element {i}, +epsilon"))?;
        let mut minus = point.clone();
        minus.data_mut()[i] -= epsilon;
        let fm = eval_scalar(&f, &minus, &format!("element {i}, -epsilon"))?;
        let fd = (fp - fm) / (2.0 * epsilon);
        let a = analytic_full.data()[i];
        let e = rel_err(a, fd);
        if e > max_rel_err {
            max_rel_err = e;
            worst_index = i;
        }
        analytic.push(a);
        numeric.push(fd);
        rel_errors.push(e);
    }
    Ok(GradCheckReport {
        rel_errors,
        max_rel_err,
        worst_index,
        analytic,
        numeric,
    })
}
