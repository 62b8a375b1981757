use rand::seq::index::sample;
use rand::Rng;

use super::Params;

/// Denominator floor: gradients smaller than this are compared on an absolute scale.
/// Central differences with a 1e-5 step carry roughly `1e-16 * |f| / 1e-5` of rounding
/// noise, about 1e-10 for the losses checked here, so a smaller floor would measure noise.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Worst coordinate: (tensor name, flat index, analytic, numeric).
    pub worst: Option<(String, usize, f64, f64)>,
    /// Largest error per tensor, in visiting order.
    pub per_tensor: Vec<(String, f64)>,
}

/// Compares `analytic` gradients against central differences of `loss` at `params`.
///
/// Up to `per_tensor` coordinates are sampled from every tensor (all of them when the
/// tensor is smaller). The step is `1e-5 * max(1, |x|)`. `params` is restored afterwards.
pub fn grad_check<P, F, R>(params: &mut P, analytic: &P, mut loss: F, per_tensor: usize, rng: &mut R) -> GradCheckReport
where
    P: Params<f64>,
    F: FnMut(&P) -> f64,
    R: Rng,
{
    let names: Vec<(String, usize)> = params
        .named_params()
        .iter()
        .map(|(n, m)| (n.clone(), m.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.named_params().iter().map(|(_, m)| m.data().to_vec()).collect();
    assert_eq!(grads.len(), names.len(), "gradient structure differs from parameters");

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
        per_tensor: Vec::new(),
    };
    for (t, (name, len)) in names.iter().enumerate() {
        let picks: Vec<usize> = if *len <= per_tensor {
            (0..*len).collect()
        } else {
            let mut v = sample(rng, *len, per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut tensor_max = 0.0f64;
        for j in picks {
            let x = params.params_mut()[t].data()[j];
            let h = 1e-5 * x.abs().max(1.0);
            params.params_mut()[t].data_mut()[j] = x + h;
            let up = loss(params);
            params.params_mut()[t].data_mut()[j] = x - h;
            let down = loss(params);
            params.params_mut()[t].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[t][j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            tensor_max = tensor_max.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), j, a, numeric));
            }
        }
        report.per_tensor.push((name.clone(), tensor_max));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Mat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone)]
    struct Scalar1(Mat<f64>);

    impl Params<f64> for Scalar1 {
        fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<f64>)>) {
            out.push((join(prefix, "x"), &self.0));
        }
        fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<f64>)>) {
            out.push((join(prefix, "x"), &mut self.0));
        }
    }

    #[test]
    fn square_at_three() {
        let mut p = Scalar1(Mat::row_vector(vec![3.0]));
        let g = Scalar1(Mat::row_vector(vec![6.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = grad_check(&mut p, &g, |q| q.0.get(0, 0).powi(2), 10, &mut rng);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(p.0.get(0, 0), 3.0);
    }

    #[test]
    fn wrong_gradient_detected() {
        let mut p = Scalar1(Mat::row_vector(vec![3.0]));
        let g = Scalar1(Mat::row_vector(vec![5.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = grad_check(&mut p, &g, |q| q.0.get(0, 0).powi(2), 10, &mut rng);
        assert!(r.max_rel_error > 0.1);
    }
}
