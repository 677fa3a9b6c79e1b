use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::Tensor;

/// Central-difference gradient of a scalar function, one coordinate at a time:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_gradient<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64> + Sync + Send,
{
    finite_diff_gradient_with(Execution::default(), f, x, h)
}

pub fn finite_diff_gradient_with<F>(exec: Execution, f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64> + Sync + Send,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::arg(format!("step h must be > 0, got {h}")));
    }
    let grads = exec.try_map_range(x.len(), |i| {
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let fp = f(&x.with_data(plus)?)?;
        let fm = f(&x.with_data(minus)?)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::non_finite(
                "finite differences",
                format!("function value is non-finite at coordinate {i}"),
            ));
        }
        Ok((fp - fm) / (2.0 * h))
    })?;
    x.with_data(grads)
}
