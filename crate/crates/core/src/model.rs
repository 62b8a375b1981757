//! The GOP feature extractor, similarity score and pair loss.
//!
//! Token layout for a GOP of length `L` (`4L + 5` rows of width `D_t`):
//!
//! ```text
//! t1 | s1 | DF x L | s2 | FT x L | s3 | M x L | s4 | QP x L
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gop_store::{InputShape, ModelInput};
use crate::nn::{
    join, normal, trunc_normal, uniform, Embedding, Encoder, EncoderCache, LayerNorm, LayerNormCache, Linear, Mat,
    NnError, Params, Scalar, ViTCache, ViTConfig, Vit,
};

/// Clamp applied to the similarity inside the loss.
pub const LOSS_EPS: f64 = 1e-7;
/// Half-width of the uniform init range of the output projection.
pub const OUTPUT_INIT_LIMIT: f64 = 0.002;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("input does not match model: {0}")]
    InputMismatch(String),
}

/// Whether the per-frame branches (DF, M, QP) reuse one ViT for all `L` frames or
/// hold a dedicated ViT per frame position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameWeights {
    Shared,
    #[default]
    PerFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub gop_len: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub vit1_dim: usize,
    pub vit1_depth: usize,
    pub vit1_heads: usize,
    pub vit2_dim: usize,
    pub vit2_depth: usize,
    pub vit2_heads: usize,
    /// Token width `D_t`.
    pub token_dim: usize,
    /// GOP feature width `D_r`.
    pub feature_dim: usize,
    pub joint_depth: usize,
    pub joint_heads: usize,
    pub frame_type_vocab: usize,
    pub mb_type_vocab: usize,
    pub mb_embed_dim: usize,
    #[serde(default)]
    pub frame_weights: FrameWeights,
}

impl ModelConfig {
    fn standard(vit1_dim: usize) -> Self {
        Self {
            gop_len: 8,
            height: 224,
            width: 224,
            patch: 16,
            vit1_dim,
            vit1_depth: 8,
            vit1_heads: 8,
            vit2_dim: 64,
            vit2_depth: 4,
            vit2_heads: 4,
            token_dim: vit1_dim,
            feature_dim: 1024,
            joint_depth: 8,
            joint_heads: 8,
            frame_type_vocab: 3,
            mb_type_vocab: 256,
            mb_embed_dim: 3,
            frame_weights: FrameWeights::PerFrame,
        }
    }

    pub fn small() -> Self {
        Self::standard(192)
    }

    pub fn base() -> Self {
        Self::standard(256)
    }

    pub fn large() -> Self {
        Self::standard(320)
    }

    /// Desk-scale preset: `L = 4`, 64 x 64 crops, halved depths.
    pub fn tiny() -> Self {
        Self {
            gop_len: 4,
            height: 64,
            width: 64,
            patch: 16,
            vit1_dim: 32,
            vit1_depth: 4,
            vit1_heads: 8,
            vit2_dim: 16,
            vit2_depth: 2,
            vit2_heads: 4,
            token_dim: 32,
            feature_dim: 64,
            joint_depth: 4,
            joint_heads: 8,
            frame_type_vocab: 3,
            mb_type_vocab: 256,
            mb_embed_dim: 3,
            frame_weights: FrameWeights::PerFrame,
        }
    }

    /// Preset by name: `S`, `B`, `L` or `tiny` (case-insensitive).
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "s" | "h4vdm-s" => Some(Self::small()),
            "b" | "h4vdm-b" => Some(Self::base()),
            "l" | "h4vdm-l" => Some(Self::large()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn num_tokens(&self) -> usize {
        4 * self.gop_len + 5
    }

    pub fn input_shape(&self) -> InputShape {
        InputShape {
            gop_len: self.gop_len,
            height: self.height,
            width: self.width,
        }
    }

    /// Number of ViTs per per-frame branch.
    pub fn frame_vits(&self) -> usize {
        match self.frame_weights {
            FrameWeights::Shared => 1,
            FrameWeights::PerFrame => self.gop_len,
        }
    }

    pub fn vit1(&self) -> ViTConfig {
        ViTConfig {
            height: self.height,
            width: self.width,
            channels: 3,
            patch: self.patch,
            dim: self.vit1_dim,
            depth: self.vit1_depth,
            heads: self.vit1_heads,
            out_dim: self.token_dim,
        }
    }

    pub fn vit2(&self, channels: usize) -> ViTConfig {
        ViTConfig {
            height: self.height,
            width: self.width,
            channels,
            patch: self.patch,
            dim: self.vit2_dim,
            depth: self.vit2_depth,
            heads: self.vit2_heads,
            out_dim: self.token_dim,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.gop_len == 0 || self.feature_dim == 0 || self.token_dim == 0 {
            return Err(NnError::InvalidConfig("L, D_t and D_r must be positive".into()));
        }
        if self.frame_type_vocab < 3 || self.mb_type_vocab == 0 || self.mb_embed_dim == 0 {
            return Err(NnError::InvalidConfig("embedding tables too small".into()));
        }
        if self.joint_heads == 0 || self.token_dim % self.joint_heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "{} joint heads must divide D_t = {}",
                self.joint_heads, self.token_dim
            )));
        }
        self.vit1().validate()?;
        self.vit2(self.mb_embed_dim).validate()
    }

    /// Parameter count per component, computed from the configuration alone.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        fn layer(d: usize) -> usize {
            // two layer norms, qkv, output projection, two MLP linears
            4 * d + 3 * d * d + (d * d + d) + (4 * d * d + 4 * d) + (4 * d * d + d)
        }
        fn vit(c: &ViTConfig) -> usize {
            let d = c.dim;
            (c.patch_len() * d + d) + d + (c.num_patches() + 1) * d + c.depth * layer(d) + 2 * d + (d * c.out_dim + c.out_dim)
        }
        let n = self.frame_vits();
        let dt = self.token_dim;
        let t = self.num_tokens();
        vec![
            ("i_proc".into(), vit(&self.vit1())),
            ("df_proc".into(), n * vit(&self.vit1())),
            ("ft_proc".into(), self.frame_type_vocab * dt),
            (
                "m_proc".into(),
                self.mb_type_vocab * self.mb_embed_dim + n * vit(&self.vit2(self.mb_embed_dim)),
            ),
            ("l_proc".into(), n * vit(&self.vit2(1))),
            ("special_tokens".into(), 4 * dt),
            ("joint".into(), t * dt + self.joint_depth * layer(dt) + 2 * dt),
            ("output".into(), t * dt * self.feature_dim + self.feature_dim),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_breakdown().iter().map(|(_, n)| n).sum()
    }
}

/// Extractor weights. Both GOPs of a pair go through the same instance.
#[derive(Debug, Clone, PartialEq)]
pub struct H4vdm<T> {
    pub config: ModelConfig,
    pub i_vit: Vit<T>,
    pub df_vits: Vec<Vit<T>>,
    pub ft_embed: Embedding<T>,
    pub mb_embed: Embedding<T>,
    pub m_vits: Vec<Vit<T>>,
    pub l_vits: Vec<Vit<T>>,
    /// Rows `s1..s4`.
    pub specials: Mat<T>,
    pub joint_pos: Mat<T>,
    pub joint: Encoder<T>,
    pub joint_norm: LayerNorm<T>,
    pub out: Linear<T>,
}

/// Intermediate values of one GOP's forward pass.
#[derive(Debug, Clone)]
pub struct GopCache<T> {
    i: ViTCache<T>,
    df: Vec<ViTCache<T>>,
    m: Vec<ViTCache<T>>,
    l: Vec<ViTCache<T>>,
    joint: EncoderCache<T>,
    norm: LayerNormCache<T>,
    flat: Mat<T>,
}

/// Row offsets of each token group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub gop_len: usize,
}

impl TokenLayout {
    pub const I: usize = 0;

    pub fn specials(&self) -> [usize; 4] {
        let l = self.gop_len;
        [1, l + 2, 2 * l + 3, 3 * l + 4]
    }

    pub fn df(&self) -> usize {
        2
    }

    pub fn ft(&self) -> usize {
        self.gop_len + 3
    }

    pub fn m(&self) -> usize {
        2 * self.gop_len + 4
    }

    pub fn l(&self) -> usize {
        3 * self.gop_len + 5
    }

    pub fn len(&self) -> usize {
        4 * self.gop_len + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn to_scalar<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::c(x as f64)).collect()
}

fn frame_vit<T>(vits: &[Vit<T>], k: usize) -> &Vit<T> {
    &vits[k.min(vits.len() - 1)]
}

fn frame_vit_mut<T>(vits: &mut [Vit<T>], k: usize) -> &mut Vit<T> {
    let last = vits.len() - 1;
    &mut vits[k.min(last)]
}

impl<T: Scalar> H4vdm<T> {
    /// Fresh weights: truncated normal (std 0.02) for projections, class tokens,
    /// positional and special vectors; normal (std 0.02) for embedding tables; the
    /// output projection uniform in `[-0.002, 0.002]`. Deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.frame_vits();
        let dt = config.token_dim;
        let t = config.num_tokens();
        let i_vit = Vit::init(&mut rng, config.vit1())?;
        let df_vits = (0..n).map(|_| Vit::init(&mut rng, config.vit1())).collect::<Result<_, _>>()?;
        let ft_embed = Embedding::new(normal(&mut rng, config.frame_type_vocab, dt, 0.02));
        let mb_embed = Embedding::new(normal(&mut rng, config.mb_type_vocab, config.mb_embed_dim, 0.02));
        let m_vits = (0..n)
            .map(|_| Vit::init(&mut rng, config.vit2(config.mb_embed_dim)))
            .collect::<Result<_, _>>()?;
        let l_vits = (0..n).map(|_| Vit::init(&mut rng, config.vit2(1))).collect::<Result<_, _>>()?;
        let specials = trunc_normal(&mut rng, 4, dt, 0.02);
        let joint_pos = trunc_normal(&mut rng, t, dt, 0.02);
        let joint = Encoder::init(&mut rng, dt, config.joint_heads, config.joint_depth)?;
        let out = Linear::new(
            uniform(&mut rng, t * dt, config.feature_dim, OUTPUT_INIT_LIMIT),
            Some(Mat::zeros(1, config.feature_dim)),
        );
        Ok(Self {
            config: config.clone(),
            i_vit,
            df_vits,
            ft_embed,
            mb_embed,
            m_vits,
            l_vits,
            specials,
            joint_pos,
            joint,
            joint_norm: LayerNorm::new(dt),
            out,
        })
    }

    /// All-zero weights (layer norms at identity). Used for gradient accumulators and
    /// as the target of checkpoint loading.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let n = config.frame_vits();
        let dt = config.token_dim;
        let t = config.num_tokens();
        Ok(Self {
            config: config.clone(),
            i_vit: Vit::zeros(config.vit1())?,
            df_vits: (0..n).map(|_| Vit::zeros(config.vit1())).collect::<Result<_, _>>()?,
            ft_embed: Embedding::new(Mat::zeros(config.frame_type_vocab, dt)),
            mb_embed: Embedding::new(Mat::zeros(config.mb_type_vocab, config.mb_embed_dim)),
            m_vits: (0..n)
                .map(|_| Vit::zeros(config.vit2(config.mb_embed_dim)))
                .collect::<Result<_, _>>()?,
            l_vits: (0..n).map(|_| Vit::zeros(config.vit2(1))).collect::<Result<_, _>>()?,
            specials: Mat::zeros(4, dt),
            joint_pos: Mat::zeros(t, dt),
            joint: Encoder::zeros(dt, config.joint_heads, config.joint_depth)?,
            joint_norm: LayerNorm::new(dt),
            out: Linear::zeros(t * dt, config.feature_dim, true),
        })
    }

    /// Same weights in another scalar type.
    pub fn cast<U: Scalar>(&self) -> H4vdm<U> {
        let mut m = H4vdm::<U>::zeros(&self.config).expect("config already validated");
        for (dst, (_, src)) in m.params_mut().into_iter().zip(self.named_params()) {
            *dst = src.cast();
        }
        m
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            gop_len: self.config.gop_len,
        }
    }

    pub fn check_input(&self, input: &ModelInput) -> Result<(), ModelError> {
        let c = &self.config;
        let l = c.gop_len;
        let px = c.height * c.width;
        if input.shape != c.input_shape() {
            return Err(ModelError::InputMismatch(format!(
                "input {:?}, model expects {:?}",
                input.shape,
                c.input_shape()
            )));
        }
        let ok = input.i_frame.len() == 3 * px
            && input.frame_diffs.len() == l
            && input.frame_diffs.iter().all(|f| f.len() == 3 * px)
            && input.frame_type_ids.len() == l
            && input.mb_type_maps.len() == l
            && input.mb_type_maps.iter().all(|f| f.len() == px)
            && input.luma_qp_maps.len() == l
            && input.luma_qp_maps.iter().all(|f| f.len() == px);
        if !ok {
            return Err(ModelError::InputMismatch("stream lengths do not match the configuration".into()));
        }
        Ok(())
    }

    fn mb_ids(map: &[u8]) -> Vec<usize> {
        map.iter().map(|&v| v as usize).collect()
    }

    fn embed_mb(&self, map: &[u8]) -> Result<Vec<T>, ModelError> {
        Ok(self.mb_embed.forward(&Self::mb_ids(map))?.into_data())
    }

    /// `t1`: the I-frame through its ViT-1.
    pub fn i_proc(&self, input: &ModelInput) -> Result<Mat<T>, ModelError> {
        self.check_input(input)?;
        Ok(self.i_vit.forward(&to_scalar(&input.i_frame))?.0)
    }

    /// `L x D_t`: each difference frame through the DF ViT-1.
    pub fn df_proc(&self, input: &ModelInput) -> Result<Mat<T>, ModelError> {
        self.check_input(input)?;
        let rows = (0..self.config.gop_len)
            .map(|k| Ok(frame_vit(&self.df_vits, k).forward(&to_scalar(&input.frame_diffs[k]))?.0))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Mat::vstack(&rows.iter().collect::<Vec<_>>())?)
    }

    /// `L x D_t`: frame-type embedding rows.
    pub fn ft_proc(&self, input: &ModelInput) -> Result<Mat<T>, ModelError> {
        Ok(self.ft_embed.forward(&input.frame_type_ids)?)
    }

    /// Per-pixel macroblock-type embedding (`H x W x 3`) of frame `k`.
    pub fn mb_image(&self, input: &ModelInput, k: usize) -> Result<Vec<T>, ModelError> {
        self.embed_mb(&input.mb_type_maps[k])
    }

    /// `L x D_t`: embedded macroblock-type maps through the M ViT-2.
    pub fn m_proc(&self, input: &ModelInput) -> Result<Mat<T>, ModelError> {
        self.check_input(input)?;
        let rows = (0..self.config.gop_len)
            .map(|k| Ok(frame_vit(&self.m_vits, k).forward(&self.mb_image(input, k)?)?.0))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Mat::vstack(&rows.iter().collect::<Vec<_>>())?)
    }

    /// `L x D_t`: scaled luma-QP maps through the QP ViT-2.
    pub fn l_proc(&self, input: &ModelInput) -> Result<Mat<T>, ModelError> {
        self.check_input(input)?;
        let rows = (0..self.config.gop_len)
            .map(|k| Ok(frame_vit(&self.l_vits, k).forward(&to_scalar(&input.luma_qp_maps[k]))?.0))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Mat::vstack(&rows.iter().collect::<Vec<_>>())?)
    }

    /// Interleaves branch outputs with the special vectors into the joint sequence.
    pub fn assemble_tokens(
        &self,
        t1: &Mat<T>,
        df: &Mat<T>,
        ft: &Mat<T>,
        m: &Mat<T>,
        l: &Mat<T>,
    ) -> Result<Mat<T>, ModelError> {
        let s = |i| self.specials.row_slice(i, 1);
        let (s1, s2, s3, s4) = (s(0), s(1), s(2), s(3));
        Ok(Mat::vstack(&[t1, &s1, df, &s2, ft, &s3, m, &s4, l])?)
    }

    /// Forward pass keeping what the backward pass needs.
    pub fn forward(&self, input: &ModelInput) -> Result<(Vec<T>, GopCache<T>), ModelError> {
        self.check_input(input)?;
        let l = self.config.gop_len;
        let (t1, i) = self.i_vit.forward(&to_scalar(&input.i_frame))?;
        let mut df_rows = Vec::with_capacity(l);
        let mut df = Vec::with_capacity(l);
        let mut m_rows = Vec::with_capacity(l);
        let mut m = Vec::with_capacity(l);
        let mut l_rows = Vec::with_capacity(l);
        let mut lc = Vec::with_capacity(l);
        for k in 0..l {
            let (y, c) = frame_vit(&self.df_vits, k).forward(&to_scalar(&input.frame_diffs[k]))?;
            df_rows.push(y);
            df.push(c);
            let (y, c) = frame_vit(&self.m_vits, k).forward(&self.mb_image(input, k)?)?;
            m_rows.push(y);
            m.push(c);
            let (y, c) = frame_vit(&self.l_vits, k).forward(&to_scalar(&input.luma_qp_maps[k]))?;
            l_rows.push(y);
            lc.push(c);
        }
        let stack = |rows: &Vec<Mat<T>>| Mat::vstack(&rows.iter().collect::<Vec<_>>());
        let ft = self.ft_proc(input)?;
        let mut tokens = self.assemble_tokens(&t1, &stack(&df_rows)?, &ft, &stack(&m_rows)?, &stack(&l_rows)?)?;
        tokens.add_assign(&self.joint_pos)?;
        let (encoded, joint) = self.joint.forward(&tokens)?;
        let (normed, norm) = self.joint_norm.forward(&encoded)?;
        let flat = normed.reshape(1, self.config.num_tokens() * self.config.token_dim)?;
        let r = self.out.forward(&flat)?.into_data();
        Ok((
            r,
            GopCache {
                i,
                df,
                m,
                l: lc,
                joint,
                norm,
                flat,
            },
        ))
    }

    /// GOP feature vector `r` (length `D_r`).
    pub fn extract_feature(&self, input: &ModelInput) -> Result<Vec<T>, ModelError> {
        Ok(self.forward(input)?.0)
    }

    /// Accumulates `d loss / d params` into `grad` given `dr = d loss / d r`.
    pub fn backward(&self, input: &ModelInput, cache: &GopCache<T>, dr: &[T], grad: &mut Self) -> Result<(), ModelError> {
        let c = &self.config;
        if dr.len() != c.feature_dim {
            return Err(ModelError::DimensionMismatch(dr.len(), c.feature_dim));
        }
        let lay = self.layout();
        let l = c.gop_len;
        let dr = Mat::row_vector(dr.to_vec());
        let dflat = self
            .out
            .backward(&cache.flat, &dr, &mut grad.out, true)?
            .expect("input gradient requested");
        let dnormed = dflat.reshape(c.num_tokens(), c.token_dim)?;
        let dencoded = self.joint_norm.backward(&cache.norm, &dnormed, &mut grad.joint_norm)?;
        let dtokens = self.joint.backward(&cache.joint, &dencoded, &mut grad.joint)?;
        grad.joint_pos.add_assign(&dtokens)?;
        for (i, &row) in lay.specials().iter().enumerate() {
            for (g, &d) in grad.specials.row_mut(i).iter_mut().zip(dtokens.row(row)) {
                *g += d;
            }
        }
        self.i_vit
            .backward(&cache.i, &dtokens.row_slice(TokenLayout::I, 1), &mut grad.i_vit, false)?;
        self.ft_embed
            .backward(&input.frame_type_ids, &dtokens.row_slice(lay.ft(), l), &mut grad.ft_embed)?;
        for k in 0..l {
            frame_vit(&self.df_vits, k).backward(
                &cache.df[k],
                &dtokens.row_slice(lay.df() + k, 1),
                frame_vit_mut(&mut grad.df_vits, k),
                false,
            )?;
            let dimg = frame_vit(&self.m_vits, k)
                .backward(
                    &cache.m[k],
                    &dtokens.row_slice(lay.m() + k, 1),
                    frame_vit_mut(&mut grad.m_vits, k),
                    true,
                )?
                .expect("input gradient requested");
            let ids = Self::mb_ids(&input.mb_type_maps[k]);
            let dimg = Mat::from_vec(ids.len(), c.mb_embed_dim, dimg)?;
            self.mb_embed.backward(&ids, &dimg, &mut grad.mb_embed)?;
            frame_vit(&self.l_vits, k).backward(
                &cache.l[k],
                &dtokens.row_slice(lay.l() + k, 1),
                frame_vit_mut(&mut grad.l_vits, k),
                false,
            )?;
        }
        Ok(())
    }
}

impl<T: Scalar> Params<T> for H4vdm<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        self.i_vit.collect(&join(prefix, "i_vit"), out);
        for (k, v) in self.df_vits.iter().enumerate() {
            v.collect(&join(prefix, &format!("df_vit{k}")), out);
        }
        self.ft_embed.collect(&join(prefix, "ft_embed"), out);
        self.mb_embed.collect(&join(prefix, "mb_embed"), out);
        for (k, v) in self.m_vits.iter().enumerate() {
            v.collect(&join(prefix, &format!("m_vit{k}")), out);
        }
        for (k, v) in self.l_vits.iter().enumerate() {
            v.collect(&join(prefix, &format!("l_vit{k}")), out);
        }
        out.push((join(prefix, "specials"), &self.specials));
        out.push((join(prefix, "joint_pos"), &self.joint_pos));
        self.joint.collect(&join(prefix, "joint"), out);
        self.joint_norm.collect(&join(prefix, "joint_norm"), out);
        self.out.collect(&join(prefix, "out"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        self.i_vit.collect_mut(&join(prefix, "i_vit"), out);
        for (k, v) in self.df_vits.iter_mut().enumerate() {
            v.collect_mut(&join(prefix, &format!("df_vit{k}")), out);
        }
        self.ft_embed.collect_mut(&join(prefix, "ft_embed"), out);
        self.mb_embed.collect_mut(&join(prefix, "mb_embed"), out);
        for (k, v) in self.m_vits.iter_mut().enumerate() {
            v.collect_mut(&join(prefix, &format!("m_vit{k}")), out);
        }
        for (k, v) in self.l_vits.iter_mut().enumerate() {
            v.collect_mut(&join(prefix, &format!("l_vit{k}")), out);
        }
        out.push((join(prefix, "specials"), &mut self.specials));
        out.push((join(prefix, "joint_pos"), &mut self.joint_pos));
        self.joint.collect_mut(&join(prefix, "joint"), out);
        self.joint_norm.collect_mut(&join(prefix, "joint_norm"), out);
        self.out.collect_mut(&join(prefix, "out"), out);
    }
}

fn distance<T: Scalar>(r1: &[T], r2: &[T]) -> Result<T, ModelError> {
    if r1.len() != r2.len() {
        return Err(ModelError::DimensionMismatch(r1.len(), r2.len()));
    }
    Ok(r1.iter().zip(r2).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt())
}

/// `s = 1 - tanh(||r1 - r2||)`.
pub fn similarity<T: Scalar>(r1: &[T], r2: &[T]) -> Result<T, ModelError> {
    Ok(T::one() - distance(r1, r2)?.tanh())
}

/// Negative log-likelihood of label `y` under similarity `s`, with `s` clamped to
/// `[eps, 1 - eps]`.
pub fn pair_loss<T: Scalar>(r1: &[T], r2: &[T], y: u8) -> Result<T, ModelError> {
    Ok(pair_loss_grad(r1, r2, y)?.0)
}

/// Loss together with its gradients with respect to `r1` and `r2`.
pub fn pair_loss_grad<T: Scalar>(r1: &[T], r2: &[T], y: u8) -> Result<(T, Vec<T>, Vec<T>), ModelError> {
    let n = distance(r1, r2)?;
    let th = n.tanh();
    let s = T::one() - th;
    let eps = T::c(LOSS_EPS);
    // NaN must survive the clamp so callers can detect it
    let sc = if s.is_nan() { s } else { s.max(eps).min(T::one() - eps) };
    let yt = if y == 1 { T::one() } else { T::zero() };
    let loss = -(yt * sc.ln() + (T::one() - yt) * (T::one() - sc).ln());
    let mut d1 = vec![T::zero(); r1.len()];
    if s > eps && s < T::one() - eps && n > T::zero() {
        let dl_ds = -(yt / s - (T::one() - yt) / (T::one() - s));
        let ds_dn = -(T::one() - th * th);
        let k = dl_ds * ds_dn / n;
        for ((g, &a), &b) in d1.iter_mut().zip(r1).zip(r2) {
            *g = k * (a - b);
        }
    }
    let d2 = d1.iter().map(|&g| -g).collect();
    Ok((loss, d1, d2))
}
