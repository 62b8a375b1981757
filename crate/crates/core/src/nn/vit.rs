use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{LayerNorm, LayerNormCache, Linear};
use super::transformer::{Encoder, EncoderCache};
use super::{join, trunc_normal, Mat, NnError, Params, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
    /// Projection dimension `D_ViT`.
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Output dimension `D_t`.
    pub out_dim: usize,
}

impl ViTConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(NnError::InvalidConfig(format!(
                "patch {} must divide {}x{}",
                self.patch, self.height, self.width
            )));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "{} heads must divide dimension {}",
                self.heads, self.dim
            )));
        }
        Ok(())
    }

    /// Number of patches `K = (H/P)(W/P)`.
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Flattened patch length `P^2 C`.
    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }
}

/// Splits an `H x W x C` image (row-major, channels interleaved) into a `K x P^2C`
/// matrix. Patch rows are in raster order; within a patch values are ordered by
/// (row, column, channel).
pub fn patchify<T: Scalar>(image: &[T], cfg: &ViTConfig) -> Result<Mat<T>, NnError> {
    let (h, w, c, p) = (cfg.height, cfg.width, cfg.channels, cfg.patch);
    if image.len() != h * w * c {
        return Err(NnError::ShapeMismatch(format!(
            "image of {} values, expected {h}x{w}x{c}",
            image.len()
        )));
    }
    let per_row = w / p;
    let mut out = Mat::zeros(cfg.num_patches(), cfg.patch_len());
    for k in 0..cfg.num_patches() {
        let (pi, pj) = (k / per_row, k % per_row);
        let dst = out.row_mut(k);
        for r in 0..p {
            let src_start = ((pi * p + r) * w + pj * p) * c;
            dst[r * p * c..(r + 1) * p * c].copy_from_slice(&image[src_start..src_start + p * c]);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(patches: &Mat<T>, cfg: &ViTConfig) -> Vec<T> {
    let (w, c, p) = (cfg.width, cfg.channels, cfg.patch);
    let per_row = w / p;
    let mut image = vec![T::zero(); cfg.height * w * c];
    for k in 0..patches.rows() {
        let (pi, pj) = (k / per_row, k % per_row);
        let src = patches.row(k);
        for r in 0..p {
            let dst_start = ((pi * p + r) * w + pj * p) * c;
            image[dst_start..dst_start + p * c].copy_from_slice(&src[r * p * c..(r + 1) * p * c]);
        }
    }
    image
}

/// Vision transformer with a class token and learned 1-D positional embeddings. The
/// final class-token state is layer-normalized and projected to `out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vit<T> {
    pub config: ViTConfig,
    pub patch_embed: Linear<T>,
    pub cls_token: Mat<T>,
    pub pos_embed: Mat<T>,
    pub encoder: Encoder<T>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct ViTCache<T> {
    patches: Mat<T>,
    encoder: EncoderCache<T>,
    norm: LayerNormCache<T>,
    cls_state: Mat<T>,
}

impl<T: Scalar> Vit<T> {
    pub fn init<R: Rng>(rng: &mut R, config: ViTConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self {
            patch_embed: Linear::init(rng, config.patch_len(), config.dim, true),
            cls_token: trunc_normal(rng, 1, config.dim, 0.02),
            pos_embed: trunc_normal(rng, config.num_patches() + 1, config.dim, 0.02),
            encoder: Encoder::init(rng, config.dim, config.heads, config.depth)?,
            norm: LayerNorm::new(config.dim),
            head: Linear::init(rng, config.dim, config.out_dim, true),
            config,
        })
    }

    pub fn zeros(config: ViTConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self {
            patch_embed: Linear::zeros(config.patch_len(), config.dim, true),
            cls_token: Mat::zeros(1, config.dim),
            pos_embed: Mat::zeros(config.num_patches() + 1, config.dim),
            encoder: Encoder::zeros(config.dim, config.heads, config.depth)?,
            norm: LayerNorm::new(config.dim),
            head: Linear::zeros(config.dim, config.out_dim, true),
            config,
        })
    }

    /// Maps an image to a `1 x out_dim` vector.
    pub fn forward(&self, image: &[T]) -> Result<(Mat<T>, ViTCache<T>), NnError> {
        let patches = patchify(image, &self.config)?;
        let embedded = self.patch_embed.forward(&patches)?;
        let mut tokens = Mat::vstack(&[&self.cls_token, &embedded])?;
        tokens.add_assign(&self.pos_embed)?;
        let (encoded, encoder) = self.encoder.forward(&tokens)?;
        let cls = encoded.row_slice(0, 1);
        let (cls_state, norm) = self.norm.forward(&cls)?;
        let out = self.head.forward(&cls_state)?;
        Ok((
            out,
            ViTCache {
                patches,
                encoder,
                norm,
                cls_state,
            },
        ))
    }

    /// Backpropagates `dout` (`1 x out_dim`). Returns the image gradient when requested.
    pub fn backward(
        &self,
        cache: &ViTCache<T>,
        dout: &Mat<T>,
        grad: &mut Self,
        need_input: bool,
    ) -> Result<Option<Vec<T>>, NnError> {
        let dcls_state = self
            .head
            .backward(&cache.cls_state, dout, &mut grad.head, true)?
            .expect("input gradient requested");
        let dcls = self.norm.backward(&cache.norm, &dcls_state, &mut grad.norm)?;
        let mut dencoded = Mat::zeros(self.config.num_patches() + 1, self.config.dim);
        dencoded.row_mut(0).copy_from_slice(dcls.row(0));
        let dtokens = self.encoder.backward(&cache.encoder, &dencoded, &mut grad.encoder)?;
        grad.pos_embed.add_assign(&dtokens)?;
        for (g, &d) in grad.cls_token.data_mut().iter_mut().zip(dtokens.row(0)) {
            *g += d;
        }
        let dembedded = dtokens.row_slice(1, self.config.num_patches());
        let dpatches = self
            .patch_embed
            .backward(&cache.patches, &dembedded, &mut grad.patch_embed, need_input)?;
        Ok(dpatches.map(|dp| unpatchify(&dp, &self.config)))
    }
}

impl<T: Scalar> Params<T> for Vit<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        self.patch_embed.collect(&join(prefix, "patch_embed"), out);
        out.push((join(prefix, "cls_token"), &self.cls_token));
        out.push((join(prefix, "pos_embed"), &self.pos_embed));
        self.encoder.collect(&join(prefix, "encoder"), out);
        self.norm.collect(&join(prefix, "norm"), out);
        self.head.collect(&join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        self.patch_embed.collect_mut(&join(prefix, "patch_embed"), out);
        out.push((join(prefix, "cls_token"), &mut self.cls_token));
        out.push((join(prefix, "pos_embed"), &mut self.pos_embed));
        self.encoder.collect_mut(&join(prefix, "encoder"), out);
        self.norm.collect_mut(&join(prefix, "norm"), out);
        self.head.collect_mut(&join(prefix, "head"), out);
    }
}
