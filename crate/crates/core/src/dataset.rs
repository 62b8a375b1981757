//! Labeled GOP-pair datasets: pair sampling, test-set subsampling, validation carving,
//! device splits, and the JSON-lines pair manifest.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Paper quotas: cross-device pairs per ordered device pair, same-device pairs per device.
pub const DEFAULT_N0: usize = 15;
pub const DEFAULT_N1: usize = 120;
pub const DEFAULT_TEST_FRACTION: f64 = 0.4;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.125;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot draw {wanted} pairs for devices ({a}, {b}): only {available} unused pairs")]
    InsufficientPairs {
        a: String,
        b: String,
        wanted: usize,
        available: usize,
    },
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pair manifest: {0}")]
    Format(String),
}

/// Identity of one GOP record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GopRef {
    pub device: String,
    pub video: String,
    pub gop: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub a: GopRef,
    pub b: GopRef,
    pub label: u8,
}

impl PairSample {
    /// Order-independent identity of the pair.
    pub fn key(&self) -> (GopRef, GopRef) {
        unordered(&self.a, &self.b)
    }
}

fn unordered(a: &GopRef, b: &GopRef) -> (GopRef, GopRef) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Draws `want` unused unordered pairs from `candidates(i)` for `i < total`.
/// Rejection sampling first; when it stalls, the unused candidates are enumerated.
fn draw<R: Rng>(
    rng: &mut R,
    total: usize,
    want: usize,
    candidate: impl Fn(usize) -> Option<(GopRef, GopRef)>,
    used: &mut HashSet<(GopRef, GopRef)>,
) -> Result<Vec<(GopRef, GopRef)>, usize> {
    let mut out = Vec::with_capacity(want);
    let mut attempts = 0;
    while out.len() < want && attempts < 20 * want.max(1) {
        attempts += 1;
        if let Some(key) = candidate(rng.gen_range(0..total.max(1))) {
            if used.insert(key.clone()) {
                out.push(key);
            }
        }
    }
    if out.len() < want {
        let free: Vec<(GopRef, GopRef)> = (0..total)
            .filter_map(&candidate)
            .filter(|k| !used.contains(k))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let need = want - out.len();
        if free.len() < need {
            return Err(free.len() + out.len());
        }
        for i in sample(rng, free.len(), need).into_vec() {
            used.insert(free[i].clone());
            out.push(free[i].clone());
        }
    }
    Ok(out)
}

/// Builds the pair dataset over `devices`: for every ordered device pair `(i, j)` with
/// `i != j`, `n0` new label-0 pairs from `A_i x A_j`; for every device, `n1` new label-1
/// pairs of distinct GOPs. Uniqueness is over unordered pairs, across the whole set.
pub fn build_pairs(
    devices: &[String],
    gops_by_device: &BTreeMap<String, Vec<GopRef>>,
    n0: usize,
    n1: usize,
    seed: u64,
) -> Result<Vec<PairSample>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut out = Vec::new();
    let empty = Vec::new();
    let gops = |d: &String| -> Result<&Vec<GopRef>, DatasetError> {
        gops_by_device
            .get(d)
            .or(if devices.contains(d) { Some(&empty) } else { None })
            .ok_or_else(|| DatasetError::UnknownDevice(d.clone()))
    };
    for di in devices {
        for dj in devices {
            let (ai, aj) = (gops(di)?, gops(dj)?);
            let (want, label) = if di == dj { (n1, 1) } else { (n0, 0) };
            if want == 0 {
                continue;
            }
            let total = ai.len() * aj.len();
            let candidate = |k: usize| {
                let (x, y) = (&ai[k / aj.len()], &aj[k % aj.len()]);
                (x != y).then(|| unordered(x, y))
            };
            let picked = draw(&mut rng, total, want, candidate, &mut used).map_err(|available| {
                DatasetError::InsufficientPairs {
                    a: di.clone(),
                    b: dj.clone(),
                    wanted: want,
                    available,
                }
            })?;
            out.extend(picked.into_iter().map(|(a, b)| PairSample { a, b, label }));
        }
    }
    Ok(out)
}

/// `floor(n * fraction + 0.5)`.
pub fn round_half_up(n: usize, fraction: f64) -> usize {
    // the tiny offset absorbs representation error in products like 4080 * 0.4
    (n as f64 * fraction + 0.5 + 1e-9).floor() as usize
}

fn by_label(pairs: &[PairSample], stratified: bool) -> Vec<Vec<usize>> {
    if stratified {
        [0u8, 1]
            .iter()
            .map(|&l| (0..pairs.len()).filter(|&i| pairs[i].label == l).collect())
            .collect()
    } else {
        vec![(0..pairs.len()).collect()]
    }
}

fn pick(pairs: &[PairSample], fraction: f64, seed: u64, stratified: bool) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; pairs.len()];
    for group in by_label(pairs, stratified) {
        let k = round_half_up(group.len(), fraction).min(group.len());
        for i in sample(&mut rng, group.len(), k) {
            chosen[group[i]] = true;
        }
    }
    chosen
}

/// Uniform sample of `fraction` of the pairs, per label when `stratified`. Input order is
/// preserved.
pub fn subsample(pairs: &[PairSample], fraction: f64, seed: u64, stratified: bool) -> Vec<PairSample> {
    let chosen = pick(pairs, fraction, seed, stratified);
    pairs.iter().zip(chosen).filter(|(_, c)| *c).map(|(p, _)| p.clone()).collect()
}

/// Splits off `fraction` of the pairs for validation. Returns `(validation, remainder)`.
pub fn carve_validation(
    pairs: &[PairSample],
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> (Vec<PairSample>, Vec<PairSample>) {
    let chosen = pick(pairs, fraction, seed, stratified);
    let (mut val, mut rest) = (Vec::new(), Vec::new());
    for (p, c) in pairs.iter().zip(chosen) {
        if c {
            val.push(p.clone());
        } else {
            rest.push(p.clone());
        }
    }
    (val, rest)
}

/// Label counts `(#0, #1)`.
pub fn label_counts(pairs: &[PairSample]) -> (usize, usize) {
    let ones = pairs.iter().filter(|p| p.label == 1).count();
    (pairs.len() - ones, ones)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSplit {
    pub dataset_name: String,
    pub s1: Vec<String>,
    pub s2: Vec<String>,
}

/// `S1 = all \ S2`, in the order of `all`.
pub fn make_split(name: &str, all: &[String], s2: &[String]) -> Result<DeviceSplit, DatasetError> {
    if let Some(d) = s2.iter().find(|d| !all.contains(d)) {
        return Err(DatasetError::UnknownDevice(d.clone()));
    }
    Ok(DeviceSplit {
        dataset_name: name.to_string(),
        s1: all.iter().filter(|d| !s2.contains(d)).cloned().collect(),
        s2: s2.to_vec(),
    })
}

const PRESETS: [(&str, &str); 7] = [
    ("D1", include_str!("../splits/d1.json")),
    ("D2", include_str!("../splits/d2.json")),
    ("D3", include_str!("../splits/d3.json")),
    ("D4", include_str!("../splits/d4.json")),
    ("D5", include_str!("../splits/d5.json")),
    ("D6", include_str!("../splits/d6.json")),
    ("D7", include_str!("../splits/d7.json")),
];

/// Device IDs of the 35-device corpus the presets refer to: `D01` .. `D35`.
pub fn preset_devices() -> Vec<String> {
    (1..=35).map(|i| format!("D{i:02}")).collect()
}

/// One of the shipped splits `D1` .. `D7`.
pub fn preset_split(name: &str) -> Option<DeviceSplit> {
    PRESETS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, text)| serde_json::from_str(text).expect("shipped split parses"))
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// First line of a pair manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairHeader {
    pub role: String,
    pub seed: u64,
    pub n0: usize,
    pub n1: usize,
    pub test_fraction: Option<f64>,
    pub validation_fraction: Option<f64>,
    pub stratified: bool,
    pub devices: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: PairHeader,
}

pub fn write_pairs(path: &Path, header: &PairHeader, pairs: &[PairSample]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    let line = serde_json::to_string(&HeaderLine { header: header.clone() }).expect("header serializes");
    writeln!(w, "{line}").map_err(io)?;
    for p in pairs {
        writeln!(w, "{}", serde_json::to_string(p).expect("pair serializes")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_pairs(path: &Path) -> Result<(PairHeader, Vec<PairSample>), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| DatasetError::Format("empty file".into()))?
        .map_err(io)?;
    let header: HeaderLine =
        serde_json::from_str(&first).map_err(|e| DatasetError::Format(format!("header: {e}")))?;
    let mut pairs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PairSample =
            serde_json::from_str(&line).map_err(|e| DatasetError::Format(format!("line {}: {e}", i + 2)))?;
        if p.label > 1 {
            return Err(DatasetError::Format(format!("line {}: label {}", i + 2, p.label)));
        }
        pairs.push(p);
    }
    Ok((header.header, pairs))
}
