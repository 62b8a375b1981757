use std::fs;

use h4vdm::gop_store::{
    assemble_model_input, crop_center, list_records, load_record, mb_dims, read_record, record_dir, sample_gops,
    scale_diff, scale_pixel, scale_qp, unpack_mb_grid, write_record, GopRecord, GopStoreError, InputShape,
    QpGranularity, FRAMES_FILE,
};
use h4vdm::model::ModelConfig;
use h4vdm::FrameType;
use proptest::prelude::*;

/// A record whose bytes encode their own coordinates, so crops can be located.
fn record(frames: usize, h: usize, w: usize) -> GopRecord {
    let (m, n) = mb_dims(h, w);
    let types = (0..frames)
        .map(|k| if k == 0 { FrameType::I } else { FrameType::P })
        .collect();
    GopRecord {
        device_id: "cam".into(),
        video_id: "v0".into(),
        gop_index: 0,
        height: h,
        width: w,
        frame_types: types,
        frames: (0..frames * h * w * 3).map(|i| ((i / 3) % 251 + i / (h * w * 3)) as u8).collect(),
        mb_types: (0..frames * m * n).map(|i| (i % (m * n) % 256) as u8).collect(),
        luma_qp: (0..frames * m * n).map(|i| ((i + i / (m * n)) % 52) as u8).collect(),
        qp_granularity: QpGranularity::Macroblock,
    }
}

#[test]
fn hd_record_feeds_the_base_model() {
    let dir = tempfile::tempdir().unwrap();
    let rec = record(10, 720, 1280);
    let path = record_dir(dir.path(), "cam", "v0", 0);
    write_record(&path, &rec).unwrap();
    let shape = ModelConfig::base().input_shape();
    let back = load_record(&path, &shape).unwrap();
    assert_eq!(back, rec);
    let input = assemble_model_input(&back, &shape).unwrap();
    assert_eq!(input.i_frame.len(), 224 * 224 * 3);
    assert_eq!(input.frame_diffs.len(), 8);
    assert!(input.frame_diffs[0].iter().all(|&v| v == 0.0));
    assert_eq!(input.frame_type_ids, vec![0, 1, 1, 1, 1, 1, 1, 1]);
    // crop origin (248, 528) lies in macroblock (15, 33) of an 80-wide grid
    assert_eq!(input.mb_type_maps[0][0], (15 * 80 + 33) as u8);
    assert_eq!(input.mb_type_maps[0][16 * 224 - 1], (16 * 80 + 33 + 13) as u8);
    let px = |k: usize, r: usize, c: usize| rec.frame(k)[((248 + r) * 1280 + 528 + c) * 3];
    assert_eq!(input.i_frame[0], scale_pixel(px(0, 0, 0)));
    assert_eq!(input.frame_diffs[3][3 * 225], scale_diff(px(3, 1, 1), px(0, 1, 1)));
}

#[test]
fn short_and_small_records_rejected() {
    let shape = ModelConfig::base().input_shape();
    match record(5, 720, 1280).check_usable(&shape) {
        Err(GopStoreError::ShortGop {
            frame_count: 5,
            required: 8,
        }) => {}
        other => panic!("{other:?}"),
    }
    match record(8, 160, 160).check_usable(&shape) {
        Err(GopStoreError::SmallFrame { height: 160, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(assemble_model_input(&record(8, 160, 160), &shape).is_err());
}

#[test]
fn corruption_and_overwrite_detected() {
    let dir = tempfile::tempdir().unwrap();
    let rec = record(2, 32, 48);
    let path = dir.path().join("r");
    write_record(&path, &rec).unwrap();
    assert!(matches!(write_record(&path, &rec), Err(GopStoreError::Exists(_))));
    let mut bytes = fs::read(path.join(FRAMES_FILE)).unwrap();
    bytes[7] ^= 1;
    fs::write(path.join(FRAMES_FILE), bytes).unwrap();
    assert!(matches!(read_record(&path), Err(GopStoreError::ChecksumMismatch { .. })));
}

#[test]
fn invalid_records_rejected() {
    let mut rec = record(2, 32, 32);
    rec.frame_types[0] = FrameType::P;
    assert!(rec.validate().is_err());
    let mut rec = record(2, 32, 32);
    rec.luma_qp[0] = 52;
    assert!(rec.validate().is_err());
    let mut rec = record(2, 32, 32);
    rec.mb_types.pop();
    assert!(rec.validate().is_err());
}

#[test]
fn store_listing_is_sorted() {
    let dir = tempfile::tempdir().unwrap();
    for (d, g) in [("b", 1), ("a", 0), ("b", 0)] {
        let mut rec = record(1, 16, 16);
        rec.device_id = d.into();
        rec.gop_index = g;
        write_record(&record_dir(dir.path(), d, "v0", g), &rec).unwrap();
    }
    let found = list_records(dir.path()).unwrap();
    assert_eq!(found.len(), 3);
    assert!(found.windows(2).all(|w| w[0] < w[1]));
    assert!(found[0].ends_with("a/v0/gop_0000"));
}

#[test]
fn crop_examples() {
    let img: Vec<u8> = (0..5 * 4).map(|i| i as u8).collect();
    assert_eq!(crop_center(&img, (5, 4, 1), (2, 2)).unwrap(), vec![5, 6, 9, 10]);
    assert_eq!(crop_center(&img, (5, 4, 1), (5, 4)).unwrap(), img);
    assert!(crop_center(&img, (5, 4, 1), (6, 1)).is_err());
}

#[test]
fn unpack_examples() {
    // 20 x 33 frame has a 2 x 3 grid; the last row and column of macroblocks are partial
    let grid = [1u8, 2, 3, 4, 5, 6];
    let px = unpack_mb_grid(&grid, (2, 3), (20, 33)).unwrap();
    assert_eq!(px.len(), 20 * 33);
    assert_eq!(px[0], 1);
    assert_eq!(px[15 * 33 + 15], 1);
    assert_eq!(px[15 * 33 + 16], 2);
    assert_eq!(px[15 * 33 + 32], 3);
    assert_eq!(px[16 * 33], 4);
    assert_eq!(px[19 * 33 + 32], 6);
    assert!(unpack_mb_grid(&grid, (3, 2), (20, 33)).is_err());
}

#[test]
fn scaling_values() {
    assert_eq!(scale_pixel(0), -1.0);
    assert_eq!(scale_pixel(255), 1.0);
    assert!((scale_qp(26) - 0.0196).abs() < 1e-4);
    assert_eq!(scale_qp(0), -1.0);
    assert_eq!(scale_qp(51), 1.0);
    assert_eq!(scale_diff(255, 0), 1.0);
    assert_eq!(scale_diff(0, 255), -1.0);
    assert_eq!(FrameType::I.id(), 0);
    assert_eq!(FrameType::P.id(), 1);
    assert_eq!(FrameType::B.id(), 2);
}

#[test]
fn sampling_respects_length_and_seed() {
    let counts = [8, 3, 9, 8, 1, 12, 8];
    let s = sample_gops(&counts, 3, 8, 4);
    assert_eq!(s.len(), 3);
    assert!(s.iter().all(|&i| counts[i] >= 8));
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(s, sample_gops(&counts, 3, 8, 4));
    assert_eq!(sample_gops(&counts, 10, 8, 0), vec![0, 2, 3, 5, 6]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scaled_streams_stay_in_unit_range(seed in 0u64..1000, frames in 2usize..5) {
        let mut rec = record(frames, 40, 36);
        let mut x = seed;
        for b in rec.frames.iter_mut() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *b = (x >> 56) as u8;
        }
        let input = assemble_model_input(&rec, &InputShape { gop_len: 2, height: 32, width: 32 }).unwrap();
        let all = input.i_frame.iter().chain(input.frame_diffs.iter().flatten()).chain(input.luma_qp_maps.iter().flatten());
        for &v in all {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn unpacked_grid_is_blockwise_constant(m in 1usize..5, n in 1usize..5, trim_h in 0usize..16, trim_w in 0usize..16) {
        let (h, w) = (m * 16 - trim_h.min(15), n * 16 - trim_w.min(15));
        let grid: Vec<u8> = (0..m * n).map(|i| i as u8).collect();
        let px = unpack_mb_grid(&grid, (m, n), (h, w)).unwrap();
        for r in 0..h {
            for c in 0..w {
                prop_assert_eq!(px[r * w + c], grid[(r / 16) * n + c / 16]);
            }
        }
    }
}
