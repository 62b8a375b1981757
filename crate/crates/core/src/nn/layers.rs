use rand::Rng;

use super::{join, trunc_normal, Mat, NnError, Params, Scalar};

/// Numerically stable softmax of `x` along `axis` (0 = down each column, 1 = along each row).
pub fn softmax<T: Scalar>(x: &Mat<T>, axis: usize) -> Mat<T> {
    match axis {
        0 => softmax_rows(&x.transpose()).transpose(),
        _ => softmax_rows(x),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Mat<T>) -> Mat<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::c(GELU_C);
    let a = T::c(GELU_A);
    T::c(0.5) * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::c(GELU_C);
    let a = T::c(GELU_A);
    let half = T::c(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::c(3.0) * a * x * x)
}

/// Affine map `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Mat<T>,
    pub b: Option<Mat<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(w: Mat<T>, b: Option<Mat<T>>) -> Self {
        Self { w, b }
    }

    /// Truncated-normal weights (std 0.02) and zero bias.
    pub fn init<R: Rng>(rng: &mut R, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            w: trunc_normal(rng, d_in, d_out, 0.02),
            b: bias.then(|| Mat::zeros(1, d_out)),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            w: Mat::zeros(d_in, d_out),
            b: bias.then(|| Mat::zeros(1, d_out)),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<Mat<T>, NnError> {
        let mut y = x.matmul(&self.w)?;
        if let Some(b) = &self.b {
            y.add_row_broadcast(b)?;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` when `need_input` is set.
    pub fn backward(
        &self,
        x: &Mat<T>,
        dy: &Mat<T>,
        grad: &mut Self,
        need_input: bool,
    ) -> Result<Option<Mat<T>>, NnError> {
        x.t_matmul_acc(dy, &mut grad.w)?;
        if let Some(gb) = &mut grad.b {
            dy.col_sums_acc(gb);
        }
        if need_input {
            Ok(Some(dy.matmul_t(&self.w)?))
        } else {
            Ok(None)
        }
    }
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        out.push((join(prefix, "weight"), &self.w));
        if let Some(b) = &self.b {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        out.push((join(prefix, "weight"), &mut self.w));
        if let Some(b) = &mut self.b {
            out.push((join(prefix, "bias"), b));
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Mat<T>,
    pub beta: Mat<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Mat<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    /// Scale one, shift zero.
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Mat::from_fn(1, d, |_, _| T::one()),
            beta: Mat::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<(Mat<T>, LayerNormCache<T>), NnError> {
        let d = x.cols();
        if d != self.gamma.cols() {
            return Err(NnError::ShapeMismatch(format!(
                "layer norm over {d} features, expected {}",
                self.gamma.cols()
            )));
        }
        let n = T::c(d as f64);
        let eps = T::c(LAYER_NORM_EPS);
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(i);
            for (h, &v) in xr.iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            let yr = y.row_mut(i);
            for j in 0..d {
                yr[j] = xhat.get(i, j) * self.gamma.get(0, j) + self.beta.get(0, j);
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Mat<T>, grad: &mut Self) -> Result<Mat<T>, NnError> {
        let d = dy.cols();
        let n = T::c(d as f64);
        let mut dx = Mat::zeros(dy.rows(), d);
        for i in 0..dy.rows() {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut sum_dxh = T::zero();
            let mut sum_dxh_xh = T::zero();
            for j in 0..d {
                let g = self.gamma.get(0, j);
                let dxh = dyr[j] * g;
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[j];
                let gg = grad.gamma.get(0, j) + dyr[j] * xh[j];
                grad.gamma.set(0, j, gg);
                let gb = grad.beta.get(0, j) + dyr[j];
                grad.beta.set(0, j, gb);
            }
            let is = cache.inv_std[i];
            let out = dx.row_mut(i);
            for j in 0..d {
                let dxh = dyr[j] * self.gamma.get(0, j);
                out[j] = is / n * (n * dxh - sum_dxh - xh[j] * sum_dxh_xh);
            }
        }
        Ok(dx)
    }
}

impl<T: Scalar> Params<T> for LayerNorm<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

/// Lookup table mapping integer ids to learned rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub table: Mat<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(table: Mat<T>) -> Self {
        Self { table }
    }

    pub fn vocab(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    fn check(&self, ids: &[usize]) -> Result<(), NnError> {
        match ids.iter().find(|&&i| i >= self.vocab()) {
            Some(&index) => Err(NnError::IndexOutOfRange {
                index,
                size: self.vocab(),
            }),
            None => Ok(()),
        }
    }

    /// Gathers one row per id.
    pub fn forward(&self, ids: &[usize]) -> Result<Mat<T>, NnError> {
        self.check(ids)?;
        let d = self.dim();
        let mut out = Mat::zeros(ids.len(), d);
        for (k, &id) in ids.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.table.row(id));
        }
        Ok(out)
    }

    /// Scatter-adds `dy` rows into the gradient table.
    pub fn backward(&self, ids: &[usize], dy: &Mat<T>, grad: &mut Self) -> Result<(), NnError> {
        self.check(ids)?;
        if dy.rows() != ids.len() || dy.cols() != self.dim() {
            return Err(NnError::ShapeMismatch("embedding gradient shape".into()));
        }
        for (k, &id) in ids.iter().enumerate() {
            for (g, &v) in grad.table.row_mut(id).iter_mut().zip(dy.row(k)) {
                *g += v;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Params<T> for Embedding<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        out.push((join(prefix, "table"), &self.table));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        out.push((join(prefix, "table"), &mut self.table));
    }
}
