use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use h4vdm::bitstream::{parse_stream, GopMode};
use h4vdm::checkpoint::{self, model_card};
use h4vdm::dataset::{
    build_pairs, carve_validation, label_counts, make_split, preset_split, read_pairs, subsample, write_pairs,
    DeviceSplit, GopRef, PairHeader, PairSample,
};
use h4vdm::eval::{choose_threshold, emit_report, evaluate};
use h4vdm::gop_store::{
    assemble_model_input, cross_check_frame_types, list_records, load_record, read_manifest, read_record,
    sample_gops, MANIFEST,
};
use h4vdm::model::{similarity, H4vdm};
use h4vdm::synth::{synth_generate, SyntheticDeviceProfile};
use h4vdm::train::{score_pairs, train, MemoryStore};
use serde_json::json;

use crate::config::{preset_model, resolve, ConfigFile, Overrides, DEFAULT_PRESET};
use crate::failure::{CmdResult, Failure};
use crate::{Cli, Command, CompareArgs, EvalArgs, PairsArgs, ParseArgs, SynthArgs, TrainArgs, ValidateArgs};

pub const TRAIN_PAIRS: &str = "train.jsonl";
pub const VAL_PAIRS: &str = "val.jsonl";
pub const TEST_PAIRS: &str = "test.jsonl";

pub fn run(cli: &Cli) -> CmdResult<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        // fails only if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    log::info!("command: {:?}", cli);
    match &cli.command {
        Command::Parse(a) => parse(a),
        Command::Validate(a) => validate(a),
        Command::Synth(a) => synth(a),
        Command::Pairs(a) => pairs(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Compare(a) => compare(a),
    }
}

fn read_input(path: &Path) -> CmdResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::new(1, e).context(p.display().to_string())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gop_mode(open: bool) -> GopMode {
    if open {
        GopMode::Open
    } else {
        GopMode::Closed
    }
}

fn parse(a: &ParseArgs) -> CmdResult<()> {
    let bytes = read_input(&a.stream)?;
    let report = parse_stream(&bytes, gop_mode(a.open_gop))?;
    log::info!(
        "{}: {} NAL units, {} frames, {} GOPs",
        a.stream.display(),
        report.nal_units.len(),
        report.frames.len(),
        report.gops.len()
    );
    write_json(a.json.as_deref(), &report)
}

fn validate(a: &ValidateArgs) -> CmdResult<()> {
    let dirs = if a.path.join(MANIFEST).is_file() {
        vec![a.path.clone()]
    } else {
        list_records(&a.path)?
    };
    if dirs.is_empty() {
        return Err(Failure::data(format!("no records under {}", a.path.display())));
    }
    if a.stream.is_some() && dirs.len() != 1 {
        return Err(Failure::config("--stream needs a single record directory"));
    }
    let shape = a.preset.as_deref().map(preset_model).transpose()?.map(|c| c.input_shape());
    for dir in &dirs {
        let ctx = || dir.display().to_string();
        let rec = read_record(dir).map_err(|e| Failure::from(e).context(ctx()))?;
        if let Some(shape) = &shape {
            rec.check_usable(shape).map_err(|e| Failure::from(e).context(ctx()))?;
        }
        if let Some(stream) = &a.stream {
            let report = parse_stream(&read_input(stream)?, gop_mode(a.open_gop))?;
            cross_check_frame_types(&rec, &report).map_err(|e| Failure::from(e).context(ctx()))?;
        }
    }
    write_json(None, &json!({ "records": dirs.len(), "valid": dirs.len() }))
}

fn synth(a: &SynthArgs) -> CmdResult<()> {
    if a.devices == 0 || a.videos == 0 || a.gops == 0 {
        return Err(Failure::config("--devices, --videos and --gops must be positive"));
    }
    if a.devices > 99 {
        return Err(Failure::config("at most 99 devices (two-digit IDs)"));
    }
    let profiles = SyntheticDeviceProfile::family(a.devices, a.seed, &a.prefix, a.height, a.width);
    let summary = synth_generate(&a.out, &profiles, a.videos, a.gops)?;
    write_json(
        None,
        &json!({
            "store": a.out,
            "devices": profiles.iter().map(|p| &p.device_id).collect::<Vec<_>>(),
            "records": summary.records.len(),
            "streams": summary.streams.len(),
        }),
    )
}

/// Device -> video -> `(gop_index, frame_count)` for every record in a store.
type StoreIndex = BTreeMap<String, BTreeMap<String, Vec<(usize, usize)>>>;

fn index_store(store: &Path) -> CmdResult<StoreIndex> {
    let mut index = StoreIndex::new();
    for dir in list_records(store)? {
        let m = read_manifest(&dir).map_err(|e| Failure::from(e).context(dir.display().to_string()))?;
        index
            .entry(m.device_id)
            .or_default()
            .entry(m.video_id)
            .or_default()
            .push((m.gop_index, m.frame_count));
    }
    if index.is_empty() {
        return Err(Failure::data(format!("no records under {}", store.display())));
    }
    Ok(index)
}

fn resolve_split(a: &PairsArgs, all: &[String]) -> CmdResult<DeviceSplit> {
    if let Some(test) = &a.test_devices {
        return Ok(make_split("custom", all, test)?);
    }
    let name = a
        .split
        .as_deref()
        .ok_or_else(|| Failure::config("one of --split or --test-devices is required"))?;
    if let Some(s) = preset_split(name) {
        return Ok(s);
    }
    let text = fs::read_to_string(name)
        .map_err(|e| Failure::config(format!("--split {name:?} is neither D1..D7 nor a readable file: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("split file {name}: {e}")))
}

fn pairs(cli: &Cli, a: &PairsArgs) -> CmdResult<()> {
    for (flag, f) in [("--test-fraction", a.test_fraction), ("--validation-fraction", a.validation_fraction)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Failure::config(format!("{flag} must lie in [0, 1]")));
        }
    }
    let file = ConfigFile::read(cli.config.as_deref())?;
    let preset = a.preset.clone().or(file.preset).unwrap_or_else(|| DEFAULT_PRESET.into());
    let gop_len = preset_model(&preset)?.gop_len;
    let index = index_store(&a.store)?;
    let all: Vec<String> = index.keys().cloned().collect();
    let split = resolve_split(a, &all)?;
    log::info!("split {}: {} training, {} test devices", split.dataset_name, split.s1.len(), split.s2.len());

    let mut gops_by_device: BTreeMap<String, Vec<GopRef>> = BTreeMap::new();
    for (vi, (device, videos)) in index.iter().flat_map(|(d, v)| v.iter().map(move |x| (d, x))).enumerate() {
        let (video, gops) = videos;
        let counts: Vec<usize> = gops.iter().map(|g| g.1).collect();
        let k = a.gops_per_video.unwrap_or(gops.len());
        let chosen = sample_gops(&counts, k, gop_len, a.seed.wrapping_add(vi as u64));
        gops_by_device.entry(device.clone()).or_default().extend(chosen.into_iter().map(|i| GopRef {
            device: device.clone(),
            video: video.clone(),
            gop: gops[i].0,
        }));
    }

    let stratified = !a.unstratified;
    let train_all = build_pairs(&split.s1, &gops_by_device, a.n0, a.n1, a.seed)?;
    let (val, train_pairs) = carve_validation(&train_all, a.validation_fraction, a.seed.wrapping_add(2), stratified);
    let test_all = build_pairs(&split.s2, &gops_by_device, a.n0, a.n1, a.seed.wrapping_add(1))?;
    let test = subsample(&test_all, a.test_fraction, a.seed.wrapping_add(3), stratified);

    fs::create_dir_all(&a.out).map_err(|e| Failure::new(1, e).context(a.out.display().to_string()))?;
    let header = |role: &str, devices: &[String], tf: Option<f64>, vf: Option<f64>| PairHeader {
        role: role.into(),
        seed: a.seed,
        n0: a.n0,
        n1: a.n1,
        test_fraction: tf,
        validation_fraction: vf,
        stratified,
        devices: devices.to_vec(),
    };
    let vf = Some(a.validation_fraction);
    write_pairs(&a.out.join(TRAIN_PAIRS), &header("train", &split.s1, None, vf), &train_pairs)?;
    write_pairs(&a.out.join(VAL_PAIRS), &header("validation", &split.s1, None, vf), &val)?;
    write_pairs(&a.out.join(TEST_PAIRS), &header("test", &split.s2, Some(a.test_fraction), None), &test)?;
    let counts = |p: &[PairSample]| {
        let (c0, c1) = label_counts(p);
        json!({ "label0": c0, "label1": c1 })
    };
    write_json(
        None,
        &json!({
            "split": split.dataset_name,
            "train_before_validation": counts(&train_all),
            "train": counts(&train_pairs),
            "validation": counts(&val),
            "test_before_subsampling": counts(&test_all),
            "test": counts(&test),
        }),
    )
}

fn load_pairs(path: &Path) -> CmdResult<Vec<PairSample>> {
    Ok(read_pairs(path)?.1)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> CmdResult<()> {
    let file = ConfigFile::read(cli.config.as_deref())?;
    let flags = Overrides {
        preset: a.preset.clone(),
        frame_weights: a.frame_weights.map(Into::into),
        seed: a.seed,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        warmup_epochs: a.warmup_epochs,
        decay: a.decay,
        patience: a.patience,
        deterministic: cli.deterministic,
    };
    let resolved = resolve(&file, &flags)?;
    let resolved_json = serde_json::to_string(&resolved).expect("config serializes");
    log::info!("resolved config: {resolved_json}");

    let train_pairs = load_pairs(&a.pairs.join(TRAIN_PAIRS))?;
    let val_pairs = load_pairs(&a.pairs.join(VAL_PAIRS))?;
    let shape = resolved.model.input_shape();
    let mut all = train_pairs.clone();
    all.extend(val_pairs.iter().cloned());
    let source = MemoryStore::load(&a.store, &all, &shape)?;
    log::info!(
        "{} training pairs, {} validation pairs, {} GOPs loaded",
        train_pairs.len(),
        val_pairs.len(),
        source.len()
    );

    fs::create_dir_all(&a.out).map_err(|e| Failure::new(1, e).context(a.out.display().to_string()))?;
    write_json(Some(&a.out.join("config.json")), &resolved)?;
    let mut model = H4vdm::<f32>::init(&resolved.model, resolved.train.seed)?;
    log::info!("model: {} parameters", resolved.model.param_count());
    let outcome = train(&mut model, &train_pairs, &val_pairs, &source, &resolved.train, &a.out)?;

    let (_, header) = checkpoint::load::<f32>(&a.out.join(h4vdm::train::BEST_CHECKPOINT))?;
    write_json(Some(&a.out.join("model_card.json")), &model_card(&header))?;
    write_json(
        None,
        &json!({
            "best_epoch": outcome.best_epoch,
            "best_val_auc": outcome.best_val_auc,
            "threshold": outcome.threshold,
            "epochs_run": outcome.history.len(),
            "stopped_early": outcome.stopped_early,
        }),
    )
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> CmdResult<()> {
    let (model, header) = checkpoint::load::<f32>(&a.checkpoint)?;
    let pairs = load_pairs(&a.pairs)?;
    let source = MemoryStore::load(&a.store, &pairs, &model.config.input_shape())?;
    let scores = score_pairs(&model, &pairs, &source, cli.deterministic)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let (threshold, origin) = if let Some(t) = a.threshold {
        (t, "flag")
    } else if a.select_on_eval {
        (choose_threshold(&scores, &labels)?, "evaluation pairs")
    } else if let Some(t) = header.threshold {
        (t, "validation pairs (checkpoint)")
    } else {
        return Err(Failure::config(
            "checkpoint carries no threshold; pass --threshold or --select-on-eval",
        ));
    };
    let report = evaluate(&pairs, &scores, threshold, origin)?;
    let files = emit_report(&report, &a.out)?;
    log::info!("AUC {:.4} at threshold {threshold:.6} ({origin})", report.auc);
    write_json(
        None,
        &json!({
            "auc": report.auc,
            "threshold": threshold,
            "accuracy": report.metrics.accuracy,
            "files": files,
        }),
    )
}

fn compare(a: &CompareArgs) -> CmdResult<()> {
    let (model, header) = checkpoint::load::<f32>(&a.checkpoint)?;
    let shape = model.config.input_shape();
    let feature = |dir: &Path| -> CmdResult<Vec<f32>> {
        let ctx = || dir.display().to_string();
        let rec = load_record(dir, &shape).map_err(|e| Failure::from(e).context(ctx()))?;
        let input = assemble_model_input(&rec, &shape).map_err(|e| Failure::from(e).context(ctx()))?;
        Ok(model.extract_feature(&input)?)
    };
    let s = similarity(&feature(&a.record_a)?, &feature(&a.record_b)?)? as f64;
    write_json(
        None,
        &json!({
            "similarity": s,
            "threshold": header.threshold,
            "same_device": header.threshold.map(|t| s >= t),
        }),
    )
}
