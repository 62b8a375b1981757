use std::fs;
use std::path::Path;

use h4vdm::bitstream::{parse_stream, GopMode};
use h4vdm::gop_store::{cross_check_frame_types, list_records, read_record};
use h4vdm::synth::{synth_generate, SyntheticDeviceProfile};
use h4vdm::FrameType;

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn store_layout_and_byte_identical_regeneration() {
    let fam = SyntheticDeviceProfile::family(2, 3, "S", 32, 48);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let summary = synth_generate(a.path(), &fam, 2, 5).unwrap();
    assert_eq!(summary.records.len(), 20);
    assert_eq!(summary.streams.len(), 4);
    assert_eq!(list_records(a.path()).unwrap().len(), 20);
    synth_generate(b.path(), &fam, 2, 5).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn header_streams_agree_with_records() {
    let fam = SyntheticDeviceProfile::family(3, 5, "S", 32, 32);
    let dir = tempfile::tempdir().unwrap();
    let summary = synth_generate(dir.path(), &fam, 1, 3).unwrap();
    for p in &fam {
        let stream = fs::read(dir.path().join(&p.device_id).join("v000.264")).unwrap();
        let report = parse_stream(&stream, GopMode::Closed).unwrap();
        assert_eq!(report.gops.len(), 3);
        for rec_dir in summary.records.iter().filter(|r| r.starts_with(dir.path().join(&p.device_id))) {
            let rec = read_record(rec_dir).unwrap();
            cross_check_frame_types(&rec, &report).unwrap();
        }
        for f in &report.frames {
            assert_eq!(f.slice_qp, p.frame_qp(0, f.frame_type) as i32);
        }
    }
}

#[test]
fn video_ids_are_stable() {
    assert_eq!(SyntheticDeviceProfile::video_id(0), "v000");
    assert_eq!(SyntheticDeviceProfile::video_id(12), "v012");
}

#[test]
fn extreme_devices_separate_by_mean_qp() {
    let fam = SyntheticDeviceProfile::family(9, 11, "S", 32, 32);
    let mean_qp = |p: &SyntheticDeviceProfile, v: usize, g: usize| {
        let rec = p.render_gop(v, g);
        rec.luma_qp.iter().map(|&q| q as f64).sum::<f64>() / rec.luma_qp.len() as f64
    };
    let low: Vec<f64> = (0..4).flat_map(|v| (0..3).map(move |g| (v, g))).map(|(v, g)| mean_qp(&fam[0], v, g)).collect();
    let high: Vec<f64> = (0..4).flat_map(|v| (0..3).map(move |g| (v, g))).map(|(v, g)| mean_qp(&fam[8], v, g)).collect();
    let max_low = low.iter().cloned().fold(f64::MIN, f64::max);
    let min_high = high.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max_low < min_high, "{max_low} vs {min_high}");
}

#[test]
fn rendered_gops_follow_the_pattern() {
    for p in SyntheticDeviceProfile::family(4, 2, "S", 32, 32) {
        let rec = p.render_gop(1, 0);
        assert_eq!(rec.frame_types, p.gop_pattern);
        assert_eq!(rec.frame_types[0], FrameType::I);
        assert_eq!(rec.device_id, p.device_id);
        rec.validate().unwrap();
    }
}
