#![allow(dead_code)]

use h4vdm::gop_store::{InputShape, ModelInput};
use h4vdm::model::{FrameWeights, H4vdm, ModelConfig};
use h4vdm::nn::Params;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// The verification configuration: L=2, 32x32, one layer everywhere.
pub fn grad_config(frame_weights: FrameWeights) -> ModelConfig {
    ModelConfig {
        gop_len: 2,
        height: 32,
        width: 32,
        patch: 16,
        vit1_dim: 8,
        vit1_depth: 1,
        vit1_heads: 2,
        vit2_dim: 4,
        vit2_depth: 1,
        vit2_heads: 2,
        token_dim: 8,
        feature_dim: 8,
        joint_depth: 1,
        joint_heads: 2,
        frame_type_vocab: 3,
        mb_type_vocab: 8,
        mb_embed_dim: 3,
        frame_weights,
    }
}

pub fn random_input<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> ModelInput {
    let (h, w, l) = (cfg.height, cfg.width, cfg.gop_len);
    let px = h * w;
    let mut frame_diffs: Vec<Vec<f32>> = (0..l)
        .map(|_| (0..3 * px).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    frame_diffs[0].iter_mut().for_each(|v| *v = 0.0);
    let mb_type_maps = (0..l)
        .map(|_| {
            let grid: Vec<u8> = (0..h.div_ceil(16) * w.div_ceil(16))
                .map(|_| rng.gen_range(0..cfg.mb_type_vocab) as u8)
                .collect();
            (0..px).map(|p| grid[(p / w / 16) * w.div_ceil(16) + (p % w) / 16]).collect()
        })
        .collect();
    let mut frame_type_ids: Vec<usize> = (0..l).map(|_| rng.gen_range(0..3)).collect();
    frame_type_ids[0] = 0;
    ModelInput {
        shape: InputShape {
            gop_len: l,
            height: h,
            width: w,
        },
        i_frame: (0..3 * px).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        frame_diffs,
        frame_type_ids,
        mb_type_maps,
        luma_qp_maps: (0..l)
            .map(|_| {
                let grid: Vec<f32> = (0..h.div_ceil(16) * w.div_ceil(16))
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                (0..px).map(|p| grid[(p / w / 16) * w.div_ceil(16) + (p % w) / 16]).collect()
            })
            .collect(),
    }
}

/// Moves every weight away from its structured init so no gradient is degenerate.
pub fn perturb<R: Rng>(model: &mut H4vdm<f64>, rng: &mut R, std: f64, out_std: f64) {
    let n = Normal::new(0.0, 1.0).unwrap();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, m) in names.iter().zip(model.params_mut()) {
        let s = if name.starts_with("out.") { out_std } else { std };
        for v in m.data_mut() {
            *v += s * n.sample(rng);
        }
    }
}
