/// Compares the analytic gradient returned by `f` at `params` against
/// central finite differences with step `h`. Returns the maximum over
/// parameters of `|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)`.
pub fn grad_check<F>(mut f: F, params: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameter count");
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let (plus, _) = f(&p);
        p[i] = orig - h;
        let (minus, _) = f(&p);
        p[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let ga = analytic[i];
        let err = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |p: &[f64]| {
            let loss = p.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x * x).sum();
            let grad = p.iter().enumerate().map(|(i, x)| 2.0 * (i + 1) as f64 * x).collect();
            (loss, grad)
        };
        assert!(grad_check(f, &[0.3, -1.2, 2.0], 1e-5) < 1e-7);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |p: &[f64]| (p[0] * p[0], vec![p[0]]);
        assert!(grad_check(f, &[1.0], 1e-5) > 0.1);
    }
}
