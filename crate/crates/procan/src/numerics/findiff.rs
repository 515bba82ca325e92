use super::tensor::Tensor;

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
///
/// This is the independent oracle every analytic gradient in the crate is
/// checked against; it never touches the graph machinery.
pub fn finite_diff_grad(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite_diff_grad needs eps > 0");
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Relative error with the denominator floored so near-zero pairs do not
/// blow up: |a-b| / max(|a|, |b|, 1e-8).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest elementwise relative error between two same-shape tensors.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_unit_gradient() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 5.0, 0.0]).unwrap();
        let g = finite_diff_grad(&mut |t| t.data().iter().sum(), &x, 1e-5);
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_gradient_is_exact_up_to_rounding() {
        let x = Tensor::scalar(3.0);
        let g = finite_diff_grad(&mut |t| t.item() * t.item(), &x, 1e-5);
        assert!((g.item() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let x = Tensor::scalar(0.0);
        let g = finite_diff_grad(
            &mut |t| super::super::graph::stable_sigmoid(t.item()),
            &x,
            1e-5,
        );
        assert!((g.item() - 0.25).abs() < 1e-9);
    }
}
