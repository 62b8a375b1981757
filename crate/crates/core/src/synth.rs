//! Synthetic capture devices for desk-scale end-to-end runs.
//!
//! A device is a set of encoder habits: base QP and per-macroblock jitter, GOP frame-type
//! template, macroblock-type preferences and a texture/noise signature that also reacts
//! to QP through a crude quantizer. Scene content is drawn per video, so it carries no
//! device information.

use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bitstream::writer::{FrameSpec, HeaderStreamWriter};
use crate::gop_store::{mb_dims, record_dir, write_record, GopRecord, GopStoreError, QpGranularity, MAX_QP};
use crate::FrameType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDeviceProfile {
    pub device_id: String,
    pub seed: u64,
    pub base_qp: u8,
    /// QP added to P and B frames relative to I frames.
    pub p_qp_offset: u8,
    pub b_qp_offset: u8,
    /// Rate-control swing: each video shifts all QPs by a uniform draw from
    /// `[-video_qp_swing, video_qp_swing]`.
    pub video_qp_swing: u8,
    /// Per-macroblock QP jitter, uniform in `[-qp_jitter, qp_jitter]`.
    pub qp_jitter: u8,
    /// Frame types of one GOP; must start with `I`.
    pub gop_pattern: Vec<FrameType>,
    /// Categorical over macroblock types for I frames: `(mb_type, weight)`.
    pub intra_mb_types: Vec<(u8, f64)>,
    /// Categorical over macroblock types for P and B frames.
    pub inter_mb_types: Vec<(u8, f64)>,
    /// Side of the random grid cell the texture is interpolated from, in pixels.
    pub texture_scale: usize,
    /// Standard deviation of per-frame sensor noise, in 8-bit levels.
    pub noise: f64,
    pub height: usize,
    pub width: usize,
}

const PATTERNS: [&str; 4] = ["IPPPPPPP", "IPPBPPBP", "IBBPBBPB", "IPBPBPBP"];

fn pattern(s: &str) -> Vec<FrameType> {
    s.chars().map(|c| c.to_string().parse().expect("template letter")).collect()
}

/// Macroblock types every device draws from; devices differ only in the weights.
const INTRA_TYPES: [u8; 6] = [0, 1, 2, 5, 12, 25];
const INTER_TYPES: [u8; 8] = [26, 27, 28, 29, 30, 31, 40, 52];

impl SyntheticDeviceProfile {
    /// `count` devices with base QPs spread evenly over 18..=42 and the other traits
    /// drawn from `seed`. Neighbouring devices overlap in QP once the per-video swing
    /// is applied. Device IDs are `prefix` followed by a two-digit index from 01.
    pub fn family(count: usize, seed: u64, prefix: &str, height: usize, width: usize) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let base_qp = if count > 1 { 18 + (24 * i) / (count - 1) } else { 30 };
                let weights = |rng: &mut ChaCha8Rng, types: &[u8]| -> Vec<(u8, f64)> {
                    types
                        .iter()
                        .map(|&t| (t, -(rng.gen_range(1e-3f64..1.0)).ln()))
                        .collect()
                };
                Self {
                    device_id: format!("{prefix}{:02}", i + 1),
                    seed: rng.gen(),
                    base_qp: base_qp as u8,
                    p_qp_offset: rng.gen_range(1..=4),
                    b_qp_offset: rng.gen_range(3..=6),
                    video_qp_swing: 4,
                    qp_jitter: rng.gen_range(1..=2),
                    gop_pattern: pattern(PATTERNS[rng.gen_range(0..PATTERNS.len())]),
                    intra_mb_types: weights(&mut rng, &INTRA_TYPES),
                    inter_mb_types: weights(&mut rng, &INTER_TYPES),
                    texture_scale: rng.gen_range(6..=20),
                    noise: rng.gen_range(1.0..6.0),
                    height,
                    width,
                }
            })
            .collect()
    }

    pub fn gop_len(&self) -> usize {
        self.gop_pattern.len()
    }

    fn rng(&self, video: usize, gop: usize) -> ChaCha8Rng {
        let mix = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((video as u64) << 32 | gop as u64);
        ChaCha8Rng::seed_from_u64(mix)
    }

    pub fn video_id(video: usize) -> String {
        format!("v{video:03}")
    }

    /// Rate-control QP shift of a video.
    pub fn video_qp_shift(&self, video: usize) -> i32 {
        let swing = self.video_qp_swing as i32;
        self.rng(video, usize::MAX >> 33).gen_range(-swing..=swing)
    }

    /// QP of a frame of type `t` in `video`, before macroblock jitter.
    pub fn frame_qp(&self, video: usize, t: FrameType) -> u8 {
        let offset = match t {
            FrameType::I => 0,
            FrameType::P => self.p_qp_offset as i32,
            FrameType::B => self.b_qp_offset as i32,
        };
        (self.base_qp as i32 + offset + self.video_qp_shift(video)).clamp(0, MAX_QP as i32) as u8
    }

    /// Renders GOP `gop` of video `video`.
    pub fn render_gop(&self, video: usize, gop: usize) -> GopRecord {
        let (h, w) = (self.height, self.width);
        let (m, n) = mb_dims(h, w);
        // scene: one texture and one motion vector per video
        let mut scene = self.rng(video, usize::MAX >> 32);
        let cell = self.texture_scale.max(1);
        let (gh, gw) = (h / cell + 3, w / cell + 3);
        let (lo, hi) = (scene.gen_range(0.0..120.0), scene.gen_range(135.0..255.0));
        let grid: Vec<f64> = (0..gh * gw * 3).map(|_| scene.gen_range(lo..hi)).collect();
        let motion = (scene.gen_range(-2i64..=2), scene.gen_range(-2i64..=2));

        let mut rng = self.rng(video, gop);
        let frames_per_gop = self.gop_len();
        let mut frames = Vec::with_capacity(frames_per_gop * h * w * 3);
        let mut mb_types = Vec::with_capacity(frames_per_gop * m * n);
        let mut luma_qp = Vec::with_capacity(frames_per_gop * m * n);
        let intra = WeightedIndex::new(self.intra_mb_types.iter().map(|t| t.1)).expect("positive weights");
        let inter = WeightedIndex::new(self.inter_mb_types.iter().map(|t| t.1)).expect("positive weights");
        for (k, &t) in self.gop_pattern.iter().enumerate() {
            let step = (gop * frames_per_gop + k) as i64;
            let (dy, dx) = (motion.0 * step, motion.1 * step);
            let mut qps = Vec::with_capacity(m * n);
            for _ in 0..m * n {
                let j = rng.gen_range(-(self.qp_jitter as i32)..=self.qp_jitter as i32);
                qps.push((self.frame_qp(video, t) as i32 + j).clamp(0, MAX_QP as i32) as u8);
            }
            for _ in 0..m * n {
                let mb = if t == FrameType::I || rng.gen_bool(0.1) {
                    self.intra_mb_types[intra.sample(&mut rng)].0
                } else {
                    self.inter_mb_types[inter.sample(&mut rng)].0
                };
                mb_types.push(mb);
            }
            for r in 0..h {
                for c in 0..w {
                    let qp = qps[(r / 16) * n + c / 16];
                    // quantizer step roughly doubling every 6 QP
                    let qstep = 0.625 * 2f64.powf(qp as f64 / 6.0) / 4.0;
                    let y = (r as i64 + dy).rem_euclid((h + cell) as i64) as f64 / cell as f64;
                    let x = (c as i64 + dx).rem_euclid((w + cell) as i64) as f64 / cell as f64;
                    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                    for ch in 0..3 {
                        let g = |yy: usize, xx: usize| grid[((yy % gh) * gw + xx % gw) * 3 + ch];
                        let v = g(y0, x0) * (1.0 - fy) * (1.0 - fx)
                            + g(y0, x0 + 1) * (1.0 - fy) * fx
                            + g(y0 + 1, x0) * fy * (1.0 - fx)
                            + g(y0 + 1, x0 + 1) * fy * fx;
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let noisy = v + self.noise * z;
                        let q = (noisy / qstep).round() * qstep;
                        frames.push(q.clamp(0.0, 255.0).round() as u8);
                    }
                }
            }
            luma_qp.extend(qps);
        }
        GopRecord {
            device_id: self.device_id.clone(),
            video_id: Self::video_id(video),
            gop_index: gop,
            height: h,
            width: w,
            frame_types: self.gop_pattern.clone(),
            frames,
            mb_types,
            luma_qp,
            qp_granularity: QpGranularity::Macroblock,
        }
    }

    /// Header-only H.264 stream of a whole video: every GOP opens with an IDR frame and
    /// each frame carries its pre-jitter QP as slice QP.
    pub fn header_stream(&self, video: usize, gops: usize) -> Vec<u8> {
        let (m, n) = mb_dims(self.height, self.width);
        let mut writer = HeaderStreamWriter::new(n as u32, m as u32);
        if m * 16 != self.height || n * 16 != self.width {
            writer.display_size = Some((self.width as u32, self.height as u32));
        }
        let frames: Vec<FrameSpec> = (0..gops)
            .flat_map(|_| {
                self.gop_pattern.iter().enumerate().map(|(k, &t)| FrameSpec {
                    frame_type: t,
                    is_idr: k == 0,
                    qp: self.frame_qp(video, t) as i32,
                })
            })
            .collect();
        writer.encode(&frames)
    }
}

/// Where `synth_generate` put things.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub records: Vec<PathBuf>,
    pub streams: Vec<PathBuf>,
}

pub const PROFILES_FILE: &str = "profiles.json";

/// Writes `videos_per_device x gops_per_video` records for every profile under `store`,
/// plus one `<device>/<video>.264` header stream per video and `profiles.json`.
pub fn synth_generate(
    store: &Path,
    profiles: &[SyntheticDeviceProfile],
    videos_per_device: usize,
    gops_per_video: usize,
) -> Result<SynthSummary, GopStoreError> {
    let mut summary = SynthSummary::default();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GopStoreError::Io { path, source }
    };
    std::fs::create_dir_all(store).map_err(io(store))?;
    let listing = store.join(PROFILES_FILE);
    let text = serde_json::to_string_pretty(profiles).expect("profiles serialize");
    std::fs::write(&listing, text + "\n").map_err(io(&listing))?;
    for p in profiles {
        if p.gop_pattern.first() != Some(&FrameType::I) {
            return Err(GopStoreError::Format(format!("{}: GOP pattern must start with I", p.device_id)));
        }
        for v in 0..videos_per_device {
            let video = SyntheticDeviceProfile::video_id(v);
            for g in 0..gops_per_video {
                let dir = record_dir(store, &p.device_id, &video, g);
                write_record(&dir, &p.render_gop(v, g))?;
                summary.records.push(dir);
            }
            let path = store.join(&p.device_id).join(format!("{video}.264"));
            std::fs::write(&path, p.header_stream(v, gops_per_video)).map_err(io(&path))?;
            summary.streams.push(path);
        }
    }
    Ok(summary)
}
