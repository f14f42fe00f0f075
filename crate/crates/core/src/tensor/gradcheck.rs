//! Central finite differences as a test oracle for [`Graph::backward`].

use super::{Graph, Matrix, NodeId};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `at`.
pub fn numeric_gradient<F>(f: F, at: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for i in 0..at.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = f(&probe)?;
        probe.as_mut_slice()[i] = orig - h;
        let minus = f(&probe)?;
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest entrywise `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Builds the graph produced by `build` around a leaf holding `at`, runs
/// `backward`, and compares the leaf gradient with central differences.
/// Returns the maximum relative error.
pub fn finite_difference_check<F>(build: F, at: &Matrix, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |x: &Matrix| -> Result<(Graph, NodeId, NodeId)> {
        let mut g = Graph::new();
        let input = g.leaf(x.clone());
        let loss = build(&mut g, input)?;
        Ok((g, input, loss))
    };
    let (mut g, input, loss) = eval(at)?;
    g.backward(loss)?;
    let analytic = g.grad(input).clone();
    let numeric = numeric_gradient(
        |x| {
            let (g, _, loss) = eval(x)?;
            Ok(g.scalar(loss))
        },
        at,
        h,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let at = Matrix::from_rows(&[[0.3, -1.2, 4.0], [2.0, 0.0, -0.7]]).unwrap();
        let err = finite_difference_check(|g, x| g.sum(x), &at, 1e-4).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn broken_gradient_is_detected() {
        let at = Matrix::from_rows(&[[0.3, -1.2, 4.0]]).unwrap();
        let numeric = numeric_gradient(
            |x| {
                let mut g = Graph::new();
                let l = g.leaf(x.clone());
                let l = g.half_squared_norm(l)?;
                Ok(g.scalar(l))
            },
            &at,
            1e-4,
        )
        .unwrap();
        // correct gradient is `at`; inject a factor of two
        let broken = at.map(|v| 2.0 * v);
        assert!(max_relative_error(&broken, &numeric) > 1e-2);
        assert!(max_relative_error(&at, &numeric) < 1e-8);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let at = Matrix::zeros(1, 1);
        assert!(numeric_gradient(|_| Ok(0.0), &at, 0.0).is_err());
    }
}
