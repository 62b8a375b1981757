//! GOP record interchange format and model-input assembly.
//!
//! A record is a directory holding `manifest.json` and three raw byte files:
//! `frames.u8` (RGB, frame-major), `mb_types.u8` and `luma_qp.u8` (one byte per
//! macroblock). Every binary file is covered by a CRC-32 in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstream::StreamReport;
use crate::FrameType;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const FRAMES_FILE: &str = "frames.u8";
pub const MB_TYPES_FILE: &str = "mb_types.u8";
pub const LUMA_QP_FILE: &str = "luma_qp.u8";
pub const MB_SIZE: usize = 16;
pub const MAX_QP: u8 = 51;

#[derive(Debug, Error)]
pub enum GopStoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch in {file}: manifest {expected}, computed {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("GOP has {frame_count} frames, at least {required} needed")]
    ShortGop { frame_count: usize, required: usize },
    #[error("frame {height}x{width} is smaller than the {need_h}x{need_w} model input")]
    SmallFrame {
        height: usize,
        width: usize,
        need_h: usize,
        need_w: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame {index}: record says {record}, bitstream says {stream}")]
    FrameTypeMismatch {
        index: usize,
        record: String,
        stream: String,
    },
    #[error("record already exists at {0}")]
    Exists(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GopStoreError + '_ {
    move |source| GopStoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Granularity of the luma QP grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpGranularity {
    /// Per-macroblock QP exported by an instrumented decoder.
    #[default]
    Macroblock,
    /// Only slice QP was available; the grid is constant per frame.
    Slice,
}

/// `manifest.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub device_id: String,
    pub video_id: String,
    pub gop_index: usize,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub frame_types: Vec<FrameType>,
    pub checksums: BTreeMap<String, String>,
    #[serde(default)]
    pub qp_granularity: QpGranularity,
}

/// One GOP's five data streams plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GopRecord {
    pub device_id: String,
    pub video_id: String,
    pub gop_index: usize,
    pub height: usize,
    pub width: usize,
    pub frame_types: Vec<FrameType>,
    /// `frame_count * height * width * 3` bytes.
    pub frames: Vec<u8>,
    /// `frame_count * mb_rows * mb_cols` bytes.
    pub mb_types: Vec<u8>,
    pub luma_qp: Vec<u8>,
    pub qp_granularity: QpGranularity,
}

/// The model's input geometry: GOP length `L` and crop size `H x W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub gop_len: usize,
    pub height: usize,
    pub width: usize,
}

pub fn mb_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(MB_SIZE), width.div_ceil(MB_SIZE))
}

impl GopRecord {
    pub fn frame_count(&self) -> usize {
        self.frame_types.len()
    }

    pub fn mb_dims(&self) -> (usize, usize) {
        mb_dims(self.height, self.width)
    }

    pub fn frame(&self, k: usize) -> &[u8] {
        let n = self.height * self.width * 3;
        &self.frames[k * n..(k + 1) * n]
    }

    pub fn mb_grid(&self, k: usize) -> &[u8] {
        let (m, n) = self.mb_dims();
        &self.mb_types[k * m * n..(k + 1) * m * n]
    }

    pub fn qp_grid(&self, k: usize) -> &[u8] {
        let (m, n) = self.mb_dims();
        &self.luma_qp[k * m * n..(k + 1) * m * n]
    }

    pub fn gop_ref(&self) -> crate::dataset::GopRef {
        crate::dataset::GopRef {
            device: self.device_id.clone(),
            video: self.video_id.clone(),
            gop: self.gop_index,
        }
    }

    /// Checks the structural invariants that do not depend on the model geometry.
    pub fn validate(&self) -> Result<(), GopStoreError> {
        let fc = self.frame_count();
        if fc == 0 {
            return Err(GopStoreError::Format("record has no frames".into()));
        }
        if self.frame_types[0] != FrameType::I {
            return Err(GopStoreError::Format(format!(
                "first frame is {}, expected I",
                self.frame_types[0].as_str()
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(GopStoreError::Format("zero frame dimension".into()));
        }
        let (m, n) = self.mb_dims();
        let checks = [
            (FRAMES_FILE, self.frames.len(), fc * self.height * self.width * 3),
            (MB_TYPES_FILE, self.mb_types.len(), fc * m * n),
            (LUMA_QP_FILE, self.luma_qp.len(), fc * m * n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(GopStoreError::Format(format!("{name} holds {got} bytes, expected {want}")));
            }
        }
        if let Some(q) = self.luma_qp.iter().find(|&&q| q > MAX_QP) {
            return Err(GopStoreError::Format(format!("luma QP {q} outside 0..=51")));
        }
        Ok(())
    }

    /// Checks that the record can feed a model with the given input geometry.
    pub fn check_usable(&self, shape: &InputShape) -> Result<(), GopStoreError> {
        if self.frame_count() < shape.gop_len {
            return Err(GopStoreError::ShortGop {
                frame_count: self.frame_count(),
                required: shape.gop_len,
            });
        }
        if self.height < shape.height || self.width < shape.width {
            return Err(GopStoreError::SmallFrame {
                height: self.height,
                width: self.width,
                need_h: shape.height,
                need_w: shape.width,
            });
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let mut checksums = BTreeMap::new();
        checksums.insert(FRAMES_FILE.to_string(), crc_hex(&self.frames));
        checksums.insert(MB_TYPES_FILE.to_string(), crc_hex(&self.mb_types));
        checksums.insert(LUMA_QP_FILE.to_string(), crc_hex(&self.luma_qp));
        Manifest {
            format_version: FORMAT_VERSION,
            device_id: self.device_id.clone(),
            video_id: self.video_id.clone(),
            gop_index: self.gop_index,
            frame_count: self.frame_count(),
            height: self.height,
            width: self.width,
            frame_types: self.frame_types.clone(),
            checksums,
            qp_granularity: self.qp_granularity,
        }
    }
}

pub fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, GopStoreError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| GopStoreError::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(GopStoreError::Format(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    if manifest.frame_types.len() != manifest.frame_count {
        return Err(GopStoreError::Format(format!(
            "frame_count {} but {} frame types",
            manifest.frame_count,
            manifest.frame_types.len()
        )));
    }
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>, GopStoreError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| GopStoreError::Format(format!("manifest has no checksum for {name}")))?;
    let actual = crc_hex(&bytes);
    if !expected.eq_ignore_ascii_case(&actual) {
        return Err(GopStoreError::ChecksumMismatch {
            file: name.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(bytes)
}

/// Reads and validates a record directory without reference to a model geometry.
pub fn read_record(dir: &Path) -> Result<GopRecord, GopStoreError> {
    let manifest = read_manifest(dir)?;
    let record = GopRecord {
        frames: read_checked(dir, FRAMES_FILE, &manifest)?,
        mb_types: read_checked(dir, MB_TYPES_FILE, &manifest)?,
        luma_qp: read_checked(dir, LUMA_QP_FILE, &manifest)?,
        device_id: manifest.device_id,
        video_id: manifest.video_id,
        gop_index: manifest.gop_index,
        height: manifest.height,
        width: manifest.width,
        frame_types: manifest.frame_types,
        qp_granularity: manifest.qp_granularity,
    };
    record.validate()?;
    Ok(record)
}

/// Reads a record and checks it is long and large enough for `shape`.
pub fn load_record(dir: &Path, shape: &InputShape) -> Result<GopRecord, GopStoreError> {
    let record = read_record(dir)?;
    record.check_usable(shape)?;
    Ok(record)
}

/// Writes a record directory. Existing records are never overwritten.
pub fn write_record(dir: &Path, record: &GopRecord) -> Result<(), GopStoreError> {
    record.validate()?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        return Err(GopStoreError::Exists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in [
        (FRAMES_FILE, &record.frames),
        (MB_TYPES_FILE, &record.mb_types),
        (LUMA_QP_FILE, &record.luma_qp),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let text = serde_json::to_string_pretty(&record.manifest()).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))
}

/// Conventional location of a record inside a store.
pub fn record_dir(store: &Path, device: &str, video: &str, gop: usize) -> PathBuf {
    store.join(device).join(video).join(format!("gop_{gop:04}"))
}

/// All record directories below `store`, sorted by path.
pub fn list_records(store: &Path) -> Result<Vec<PathBuf>, GopStoreError> {
    let mut out = Vec::new();
    let mut stack = vec![store.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(MANIFEST).is_file() {
            out.push(dir);
            continue;
        }
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if entry.file_type().map_err(io_err(&dir))?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Center window of an `h_f x w_f x c` image: rows from `(h_f - h) / 2`, columns from
/// `(w_f - w) / 2`, both rounded down.
pub fn crop_center<V: Copy>(
    image: &[V],
    (h_f, w_f, c): (usize, usize, usize),
    (h, w): (usize, usize),
) -> Result<Vec<V>, GopStoreError> {
    if image.len() != h_f * w_f * c {
        return Err(GopStoreError::DimensionMismatch(format!(
            "image of {} values is not {h_f}x{w_f}x{c}",
            image.len()
        )));
    }
    if h_f < h || w_f < w {
        return Err(GopStoreError::SmallFrame {
            height: h_f,
            width: w_f,
            need_h: h,
            need_w: w,
        });
    }
    let (r0, c0) = ((h_f - h) / 2, (w_f - w) / 2);
    let mut out = Vec::with_capacity(h * w * c);
    for r in r0..r0 + h {
        let start = (r * w_f + c0) * c;
        out.extend_from_slice(&image[start..start + w * c]);
    }
    Ok(out)
}

/// Expands an `m x n` macroblock grid to one value per pixel of an `h_f x w_f` frame.
pub fn unpack_mb_grid(grid: &[u8], (m, n): (usize, usize), (h_f, w_f): (usize, usize)) -> Result<Vec<u8>, GopStoreError> {
    if (m, n) != mb_dims(h_f, w_f) || grid.len() != m * n {
        return Err(GopStoreError::DimensionMismatch(format!(
            "{}-entry {m}x{n} grid for a {h_f}x{w_f} frame",
            grid.len()
        )));
    }
    let mut out = Vec::with_capacity(h_f * w_f);
    for r in 0..h_f {
        let row = &grid[(r / MB_SIZE) * n..(r / MB_SIZE + 1) * n];
        out.extend((0..w_f).map(|c| row[c / MB_SIZE]));
    }
    Ok(out)
}

pub fn scale_pixel(x: u8) -> f32 {
    x as f32 / 127.5 - 1.0
}

pub fn scale_diff(x: u8, x0: u8) -> f32 {
    (x as i16 - x0 as i16) as f32 / 255.0
}

pub fn scale_qp(q: u8) -> f32 {
    q as f32 / 25.5 - 1.0
}

/// Input normalization; part of the model contract and stored with checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingConventions {
    pub pixel: String,
    pub frame_diff: String,
    pub luma_qp: String,
    pub frame_type_ids: String,
    pub crop: String,
}

impl Default for ScalingConventions {
    fn default() -> Self {
        Self {
            pixel: "x/127.5-1".into(),
            frame_diff: "(x_k-x_0)/255".into(),
            luma_qp: "q/25.5-1".into(),
            frame_type_ids: "I=0,P=1,B=2".into(),
            crop: "center,floor".into(),
        }
    }
}

/// The five model-input streams of one GOP, cropped and scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub shape: InputShape,
    /// `H x W x 3`.
    pub i_frame: Vec<f32>,
    /// `L` frames of `H x W x 3`; the first is all zeros.
    pub frame_diffs: Vec<Vec<f32>>,
    pub frame_type_ids: Vec<usize>,
    /// `L` maps of `H x W` macroblock types.
    pub mb_type_maps: Vec<Vec<u8>>,
    /// `L` maps of `H x W` scaled luma QP.
    pub luma_qp_maps: Vec<Vec<f32>>,
}

/// Builds the model input from the first `L` frames of a record.
pub fn assemble_model_input(record: &GopRecord, shape: &InputShape) -> Result<ModelInput, GopStoreError> {
    record.validate()?;
    record.check_usable(shape)?;
    let (hf, wf) = (record.height, record.width);
    let target = (shape.height, shape.width);
    let mbd = record.mb_dims();
    let first = crop_center(record.frame(0), (hf, wf, 3), target)?;
    let i_frame = first.iter().map(|&x| scale_pixel(x)).collect();
    let mut frame_diffs = Vec::with_capacity(shape.gop_len);
    let mut mb_type_maps = Vec::with_capacity(shape.gop_len);
    let mut luma_qp_maps = Vec::with_capacity(shape.gop_len);
    for k in 0..shape.gop_len {
        let frame = crop_center(record.frame(k), (hf, wf, 3), target)?;
        frame_diffs.push(frame.iter().zip(&first).map(|(&x, &x0)| scale_diff(x, x0)).collect());
        let mb = unpack_mb_grid(record.mb_grid(k), mbd, (hf, wf))?;
        mb_type_maps.push(crop_center(&mb, (hf, wf, 1), target)?);
        let qp = unpack_mb_grid(record.qp_grid(k), mbd, (hf, wf))?;
        luma_qp_maps.push(crop_center(&qp, (hf, wf, 1), target)?.into_iter().map(scale_qp).collect());
    }
    Ok(ModelInput {
        shape: *shape,
        i_frame,
        frame_diffs,
        frame_type_ids: record.frame_types[..shape.gop_len].iter().map(|t| t.id()).collect(),
        mb_type_maps,
        luma_qp_maps,
    })
}

/// Seeded uniform sample, without replacement, of up to `k` indices among the GOPs
/// whose frame count reaches `gop_len`. Indices are returned in ascending order.
pub fn sample_gops(frame_counts: &[usize], k: usize, gop_len: usize, seed: u64) -> Vec<usize> {
    let eligible: Vec<usize> = (0..frame_counts.len()).filter(|&i| frame_counts[i] >= gop_len).collect();
    let take = k.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), take)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Requires the record's frame types to equal those of GOP `gop_index` in a parsed
/// stream of the same video.
pub fn cross_check_frame_types(record: &GopRecord, report: &StreamReport) -> Result<(), GopStoreError> {
    let gop = report.gops.get(record.gop_index).ok_or_else(|| {
        GopStoreError::DimensionMismatch(format!(
            "stream has {} GOPs, record is GOP {}",
            report.gops.len(),
            record.gop_index
        ))
    })?;
    let n = record.frame_count().max(gop.frame_types.len());
    for i in 0..n {
        let a = record.frame_types.get(i);
        let b = gop.frame_types.get(i);
        if a != b {
            let show = |t: Option<&FrameType>| t.map_or("nothing".to_string(), |t| t.as_str().to_string());
            return Err(GopStoreError::FrameTypeMismatch {
                index: i,
                record: show(a),
                stream: show(b),
            });
        }
    }
    Ok(())
}
