use rand::Rng;

use super::layers::softmax_rows;
use super::{join, trunc_normal, Linear, Mat, NnError, Params, Scalar};

/// Multi-head self-attention.
///
/// `w_qkv` is `D x 3D` without bias. Head `h` owns columns `3*h*Dh .. 3*(h+1)*Dh`, laid out
/// as `[q | k | v]`, so each head's block is its own `U` of shape `D x 3Dh`. The `h` head
/// outputs are concatenated and mixed by `out` (`V`, `D x D`, with bias).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub heads: usize,
    pub w_qkv: Mat<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    z: Mat<T>,
    qkv: Mat<T>,
    probs: Vec<Mat<T>>,
    concat: Mat<T>,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(heads: usize, w_qkv: Mat<T>, out: Linear<T>) -> Result<Self, NnError> {
        let d = out.d_in();
        if heads == 0 || d % heads != 0 {
            return Err(NnError::InvalidConfig(format!("{heads} heads do not divide width {d}")));
        }
        if w_qkv.shape() != (d, 3 * d) || out.d_out() != d {
            return Err(NnError::ShapeMismatch("attention projections must be D x 3D and D x D".into()));
        }
        Ok(Self { heads, w_qkv, out })
    }

    pub fn init<R: Rng>(rng: &mut R, d: usize, heads: usize) -> Result<Self, NnError> {
        Self::new(heads, trunc_normal(rng, d, 3 * d, 0.02), Linear::init(rng, d, d, true))
    }

    pub fn zeros(d: usize, heads: usize) -> Result<Self, NnError> {
        Self::new(heads, Mat::zeros(d, 3 * d), Linear::zeros(d, d, true))
    }

    pub fn dim(&self) -> usize {
        self.out.d_in()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    fn head_slices(&self, qkv: &Mat<T>, head: usize) -> (Mat<T>, Mat<T>, Mat<T>) {
        let dh = self.head_dim();
        let base = 3 * head * dh;
        (qkv.col_slice(base, dh), qkv.col_slice(base + dh, dh), qkv.col_slice(base + 2 * dh, dh))
    }

    pub fn forward(&self, z: &Mat<T>) -> Result<(Mat<T>, AttentionCache<T>), NnError> {
        if z.cols() != self.dim() {
            return Err(NnError::ShapeMismatch(format!(
                "attention input width {} vs {}",
                z.cols(),
                self.dim()
            )));
        }
        let dh = self.head_dim();
        let scale = T::one() / T::c(dh as f64).sqrt();
        let qkv = z.matmul(&self.w_qkv)?;
        let mut concat = Mat::zeros(z.rows(), self.dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (q, k, v) = self.head_slices(&qkv, h);
            let mut logits = q.matmul_t(&k)?;
            logits.scale(scale);
            let p = softmax_rows(&logits);
            concat.set_col_slice(h * dh, &p.matmul(&v)?);
            probs.push(p);
        }
        let y = self.out.forward(&concat)?;
        Ok((
            y,
            AttentionCache {
                z: z.clone(),
                qkv,
                probs,
                concat,
            },
        ))
    }

    pub fn backward(&self, cache: &AttentionCache<T>, dy: &Mat<T>, grad: &mut Self) -> Result<Mat<T>, NnError> {
        let dh = self.head_dim();
        let scale = T::one() / T::c(dh as f64).sqrt();
        let dconcat = self
            .out
            .backward(&cache.concat, dy, &mut grad.out, true)?
            .expect("input gradient requested");
        let mut dqkv = Mat::zeros(cache.qkv.rows(), cache.qkv.cols());
        for h in 0..self.heads {
            let (q, k, v) = self.head_slices(&cache.qkv, h);
            let p = &cache.probs[h];
            let dout = dconcat.col_slice(h * dh, dh);
            let dp = dout.matmul_t(&v)?;
            let dv = p.t_matmul(&dout)?;
            // softmax backward, row by row
            let mut dlogits = dp.clone();
            for i in 0..p.rows() {
                let dot: T = p.row(i).iter().zip(dp.row(i)).map(|(&a, &b)| a * b).sum();
                for (j, val) in dlogits.row_mut(i).iter_mut().enumerate() {
                    *val = p.get(i, j) * (dp.get(i, j) - dot) * scale;
                }
            }
            let dq = dlogits.matmul(&k)?;
            let dk = dlogits.t_matmul(&q)?;
            let base = 3 * h * dh;
            dqkv.set_col_slice(base, &dq);
            dqkv.set_col_slice(base + dh, &dk);
            dqkv.set_col_slice(base + 2 * dh, &dv);
        }
        cache.z.t_matmul_acc(&dqkv, &mut grad.w_qkv)?;
        dqkv.matmul_t(&self.w_qkv)
    }
}

impl<T: Scalar> Params<T> for MultiHeadAttention<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        out.push((join(prefix, "qkv"), &self.w_qkv));
        self.out.collect(&join(prefix, "proj"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        out.push((join(prefix, "qkv"), &mut self.w_qkv));
        self.out.collect_mut(&join(prefix, "proj"), out);
    }
}

/// Single-head attention `softmax(q k^T / sqrt(Dh)) v` for head `head` of `params`.
pub fn self_attention<T: Scalar>(z: &Mat<T>, params: &MultiHeadAttention<T>, head: usize) -> Result<Mat<T>, NnError> {
    if head >= params.heads || z.cols() != params.dim() {
        return Err(NnError::ShapeMismatch(format!(
            "head {head} of {} on input {:?}",
            params.heads,
            z.shape()
        )));
    }
    let qkv = z.matmul(&params.w_qkv)?;
    let (q, k, v) = params.head_slices(&qkv, head);
    let mut logits = q.matmul_t(&k)?;
    logits.scale(T::one() / T::c(params.head_dim() as f64).sqrt());
    softmax_rows(&logits).matmul(&v)
}
