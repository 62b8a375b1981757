use rand::Rng;

use super::attention::{AttentionCache, MultiHeadAttention};
use super::layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use super::{join, Mat, NnError, Params, Scalar};

pub const MLP_RATIO: usize = 4;

/// Pre-norm block: `z + MSA(LN(z))`, then `+ MLP(LN(.))` with a GELU hidden layer of 4D.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer<T> {
    pub ln1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct TransformerLayerCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    ln2_out: Mat<T>,
    hidden: Mat<T>,
    activated: Mat<T>,
}

impl<T: Scalar> TransformerLayer<T> {
    pub fn init<R: Rng>(rng: &mut R, d: usize, heads: usize) -> Result<Self, NnError> {
        Ok(Self {
            ln1: LayerNorm::new(d),
            attn: MultiHeadAttention::init(rng, d, heads)?,
            ln2: LayerNorm::new(d),
            fc1: Linear::init(rng, d, MLP_RATIO * d, true),
            fc2: Linear::init(rng, MLP_RATIO * d, d, true),
        })
    }

    /// All weights zero, layer norms at identity affine.
    pub fn zeros(d: usize, heads: usize) -> Result<Self, NnError> {
        Ok(Self {
            ln1: LayerNorm::new(d),
            attn: MultiHeadAttention::zeros(d, heads)?,
            ln2: LayerNorm::new(d),
            fc1: Linear::zeros(d, MLP_RATIO * d, true),
            fc2: Linear::zeros(MLP_RATIO * d, d, true),
        })
    }

    pub fn forward(&self, z: &Mat<T>) -> Result<(Mat<T>, TransformerLayerCache<T>), NnError> {
        let (a, ln1) = self.ln1.forward(z)?;
        let (m, attn) = self.attn.forward(&a)?;
        let z1 = z.add(&m)?;
        let (b, ln2) = self.ln2.forward(&z1)?;
        let hidden = self.fc1.forward(&b)?;
        let activated = hidden.map(gelu);
        let f = self.fc2.forward(&activated)?;
        let out = z1.add(&f)?;
        Ok((
            out,
            TransformerLayerCache {
                ln1,
                attn,
                ln2,
                ln2_out: b,
                hidden,
                activated,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &TransformerLayerCache<T>,
        dout: &Mat<T>,
        grad: &mut Self,
    ) -> Result<Mat<T>, NnError> {
        let dact = self
            .fc2
            .backward(&cache.activated, dout, &mut grad.fc2, true)?
            .expect("input gradient requested");
        let mut dhidden = dact;
        for (d, &h) in dhidden.data_mut().iter_mut().zip(cache.hidden.data()) {
            *d *= gelu_grad(h);
        }
        let db = self
            .fc1
            .backward(&cache.ln2_out, &dhidden, &mut grad.fc1, true)?
            .expect("input gradient requested");
        let mut dz1 = self.ln2.backward(&cache.ln2, &db, &mut grad.ln2)?;
        dz1.add_assign(dout)?;
        let da = self.attn.backward(&cache.attn, &dz1, &mut grad.attn)?;
        let mut dz = self.ln1.backward(&cache.ln1, &da, &mut grad.ln1)?;
        dz.add_assign(&dz1)?;
        Ok(dz)
    }
}

impl<T: Scalar> Params<T> for TransformerLayer<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        self.ln1.collect(&join(prefix, "ln1"), out);
        self.attn.collect(&join(prefix, "attn"), out);
        self.ln2.collect(&join(prefix, "ln2"), out);
        self.fc1.collect(&join(prefix, "fc1"), out);
        self.fc2.collect(&join(prefix, "fc2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        self.ln1.collect_mut(&join(prefix, "ln1"), out);
        self.attn.collect_mut(&join(prefix, "attn"), out);
        self.ln2.collect_mut(&join(prefix, "ln2"), out);
        self.fc1.collect_mut(&join(prefix, "fc1"), out);
        self.fc2.collect_mut(&join(prefix, "fc2"), out);
    }
}

/// A stack of transformer layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub layers: Vec<TransformerLayer<T>>,
}

pub type EncoderCache<T> = Vec<TransformerLayerCache<T>>;

impl<T: Scalar> Encoder<T> {
    pub fn init<R: Rng>(rng: &mut R, d: usize, heads: usize, depth: usize) -> Result<Self, NnError> {
        let layers = (0..depth)
            .map(|_| TransformerLayer::init(rng, d, heads))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn zeros(d: usize, heads: usize, depth: usize) -> Result<Self, NnError> {
        let layers = (0..depth)
            .map(|_| TransformerLayer::zeros(d, heads))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, z: &Mat<T>) -> Result<(Mat<T>, EncoderCache<T>), NnError> {
        let mut x = z.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&x)?;
            caches.push(c);
            x = y;
        }
        Ok((x, caches))
    }

    pub fn backward(&self, caches: &EncoderCache<T>, dout: &Mat<T>, grad: &mut Self) -> Result<Mat<T>, NnError> {
        let mut d = dout.clone();
        for ((layer, cache), g) in self.layers.iter().zip(caches).zip(grad.layers.iter_mut()).rev() {
            d = layer.backward(cache, &d, g)?;
        }
        Ok(d)
    }
}

impl<T: Scalar> Params<T> for Encoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&join(prefix, &format!("layer{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&join(prefix, &format!("layer{i}")), out);
        }
    }
}
