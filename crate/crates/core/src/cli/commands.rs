use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use log::{info, warn};
use sha2::{Digest, Sha256};

use super::manifest::RunManifest;
use super::{
    AttackArgs, AttackParams, Cli, Command, DataArgs, EvaluateArgs, ImageSource, ModelArg,
    SynthDataArgs, TrainArgs, VisualizeArgs,
};
use crate::attacks::AttackConfig;
use crate::checkpoint::{digest, load_checkpoint, save_checkpoint};
use crate::data::{
    encode_ppm, load_directory, normalize, read_image, resize_bilinear, stratified_split,
    synth_signs, write_ppm, Dataset, Image,
};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, epsilon_sweep, perturbation_image, render_attack_grid, report_csv, run_attack,
    write_grid_ppm,
};
use crate::nn::{build_model, ModelParams};
use crate::rng::RngState;
use crate::train::{train, TrainConfig};

/// Flags whose values are output paths; `replay --output-dir` redirects them.
const OUTPUT_FLAGS: [&str; 5] = ["out", "log", "manifest", "out-adv", "out-perturbation"];

pub fn run(command: &Command) -> Result<RunManifest> {
    match command {
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Attack(a) => attack_cmd(a),
        Command::Visualize(a) => visualize_cmd(a),
        Command::SynthData(a) => synth_data_cmd(a),
        Command::Replay(a) => replay(&a.manifest, a.output_dir.as_deref()),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Dir(PathBuf),
    Synth {
        classes: usize,
        per_class: usize,
        seed: u64,
    },
}

impl Source {
    fn resolve(args: &DataArgs, default_seed: u64, classes_override: Option<usize>) -> Result<Self> {
        match (&args.data, &args.synth) {
            (Some(dir), None) => Ok(Source::Dir(dir.clone())),
            (None, Some(tokens)) => {
                let mut classes = None;
                let mut per_class = 200;
                let mut seed = default_seed;
                for token in tokens.iter().flat_map(|t| t.split([',', ' '])).filter(|t| !t.is_empty()) {
                    let (k, v) = token
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("synth option {token:?} is not KEY=VALUE")))?;
                    let bad = |_| Error::Config(format!("synth option {token:?} has a non-integer value"));
                    match k {
                        "classes" => classes = Some(v.parse().map_err(bad)?),
                        "per-class" => per_class = v.parse().map_err(bad)?,
                        "seed" => seed = v.parse().map_err(bad)?,
                        _ => {
                            return Err(Error::Config(format!(
                                "unknown synth option {k:?} (expected classes, per-class or seed)"
                            )))
                        }
                    }
                }
                let classes = match (classes, classes_override) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(Error::Config(format!("--classes {b} contradicts synth classes={a}")))
                    }
                    (a, b) => a.or(b).unwrap_or(4),
                };
                Ok(Source::Synth { classes, per_class, seed })
            }
            _ => Err(Error::Config("exactly one of --data or --synth is required".into())),
        }
    }

    fn load(&self, side: usize) -> Result<Dataset> {
        match self {
            Source::Dir(dir) => load_directory(dir, side),
            Source::Synth { classes, per_class, seed } => synth_signs(*classes, *per_class, side, *seed),
        }
    }

    fn record(&self, m: &mut RunManifest, split: f64) {
        match self {
            Source::Dir(dir) => m.set_arg("data", dir.display()),
            Source::Synth { classes, per_class, seed } => {
                m.set_arg("synth", format!("classes={classes} per-class={per_class} seed={seed}"))
            }
        }
        m.set_arg("split", split);
    }
}

/// Returns `(train, test)`; `test` is `None` when `split` is 1.
fn split_dataset(ds: Dataset, split: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    if split == 1.0 {
        return Ok((ds, None));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Config(format!("--split must be in (0, 1], got {split}")));
    }
    let (train, test) = stratified_split(&ds, 1.0 - split, seed)?;
    Ok((train, Some(test)))
}

/// The examples an attack command works on: the test split, or everything
/// when splitting is disabled.
fn eval_set(args: &DataArgs, seed: u64, model: &ModelParams) -> Result<(Source, Dataset)> {
    let source = Source::resolve(args, seed, None)?;
    let ds = source.load(model.input_shape()[1])?;
    if ds.num_classes() != model.num_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model predicts {}",
            ds.num_classes(),
            model.num_classes()
        )));
    }
    let (train, test) = split_dataset(ds, args.split, seed)?;
    Ok((source, test.unwrap_or(train)))
}

fn load_model(arg: &ModelArg, m: &mut RunManifest) -> Result<ModelParams> {
    let model = load_checkpoint(&arg.model)?;
    let id = digest(&model);
    if let Some(expected) = &arg.model_digest {
        if !expected.eq_ignore_ascii_case(&id) {
            return Err(Error::Manifest(format!(
                "checkpoint {} has digest {id}, expected {expected}",
                arg.model.display()
            )));
        }
    }
    m.set_arg("model", arg.model.display());
    m.set_arg("model-digest", &id);
    Ok(model)
}

fn attack_config(p: &AttackParams, epsilon: f64, seed: u64, m: &mut RunManifest) -> AttackConfig {
    m.set_arg("attack", p.attack);
    m.set_arg("steps", p.steps);
    m.set_arg("alpha", p.alpha);
    m.set_arg("random-start", p.random_start);
    m.set_arg("seed", seed);
    AttackConfig {
        epsilon,
        alpha: p.alpha,
        steps: p.steps,
        random_start: p.random_start,
        seed,
    }
}

fn join_eps(eps: &[f64]) -> String {
    eps.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn default_path(explicit: &Option<PathBuf>, base: &Path, suffix: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = base.as_os_str().to_os_string();
        s.push(suffix);
        PathBuf::from(s)
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn finish(mut m: RunManifest, manifest_path: PathBuf) -> Result<RunManifest> {
    m.set_arg("manifest", manifest_path.display());
    ensure_parent(&manifest_path)?;
    m.write(&manifest_path)?;
    info!("wrote manifest {}", manifest_path.display());
    Ok(m)
}

fn train_cmd(a: &TrainArgs) -> Result<RunManifest> {
    let mut m = RunManifest::new("train");
    let source = Source::resolve(&a.data, a.seed, a.classes)?;
    let ds = source.load(a.side)?;
    if let Some(c) = a.classes {
        if ds.num_classes() != c {
            return Err(Error::Config(format!("--classes {c} but the dataset has {}", ds.num_classes())));
        }
    }
    source.record(&mut m, a.data.split);
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let (train_set, test_set) = split_dataset(ds, a.data.split, a.seed)?;
    info!(
        "training on {} examples ({} classes), {} held out",
        train_set.len(),
        train_set.num_classes(),
        test_set.as_ref().map_or(0, Dataset::len)
    );

    let init = build_model(a.side, train_set.num_classes(), a.hidden, &mut RngState::new(a.seed))?;
    let (model, log) = train(&init, &train_set, &cfg)?;


    for (flag, value) in [
        ("side", a.side.to_string()),
        ("classes", train_set.num_classes().to_string()),
        ("epochs", a.epochs.to_string()),
        ("lr", a.lr.to_string()),
        ("batch-size", a.batch_size.to_string()),
        ("hidden", a.hidden.to_string()),
        ("seed", a.seed.to_string()),
    ] {
        m.set_arg(flag, value);
    }

    ensure_parent(&a.out)?;
    save_checkpoint(&model, &a.out)?;
    m.set_arg("out", a.out.display());
    m.record_output("checkpoint", &a.out)?;
    m.set("checkpoint_digest", digest(&model));

    let log_path = default_path(&a.log, &a.out, ".log.csv");
    let mut csv = String::from("epoch,mean_loss,train_accuracy_percent\n");
    for e in &log {
        writeln!(csv, "{},{:.6},{:.2}", e.epoch, e.mean_loss, e.train_accuracy_percent).unwrap();
    }
    write_file(&log_path, csv.as_bytes())?;
    m.set_arg("log", log_path.display());
    m.record_output("log", &log_path)?;

    if let Some(last) = log.last() {
        m.set("result.final_loss", format!("{:.6}", last.mean_loss));
    }
    if let Some(test) = &test_set {
        let acc = accuracy(&model, test)?;
        info!("clean test accuracy {acc:.2}% on {} examples", test.len());
        m.set("result.test_accuracy_percent", format!("{acc:.2}"));
    }
    let manifest_path = default_path(&a.manifest, &a.out, ".manifest");
    finish(m, manifest_path)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<RunManifest> {
    let mut m = RunManifest::new("evaluate");
    let model = load_model(&a.model, &mut m)?;
    let (source, ds) = eval_set(&a.data, a.seed, &model)?;
    source.record(&mut m, a.data.split);
    let eps = a.eps.clone().unwrap_or_else(|| a.attack.attack.default_eps());
    let cfg = attack_config(&a.attack, 0.0, a.seed, &mut m);
    m.set_arg("eps", join_eps(&eps));
    info!("{} sweep over {} examples, eps {}", a.attack.attack, ds.len(), join_eps(&eps));

    let report = epsilon_sweep(&model, &ds, a.attack.attack, &eps, &cfg)?;
    let csv = report_csv(&report);
    write_file(&a.out, csv.as_bytes())?;
    print!("{csv}");
    m.set_arg("out", a.out.display());
    m.record_output("report", &a.out)?;
    finish(m, default_path(&a.manifest, &a.out, ".manifest"))
}

/// Loads the image to attack and its label.
fn pick_image(s: &ImageSource, seed: u64, model: &ModelParams, m: &mut RunManifest) -> Result<(Image, usize)> {
    let side = model.input_shape()[1];
    let (img, label) = match &s.image {
        Some(path) => {
            let mut img = read_image(path)?;
            if (img.height(), img.width()) != (side, side) {
                img = resize_bilinear(&img, side, side);
            }
            m.set_arg("image", path.display());
            let label = match s.label {
                Some(l) => l,
                None => model.predict(&normalize(&img))?,
            };
            (img, label)
        }
        None => {
            let (source, ds) = eval_set(&s.data, seed, model)?;
            source.record(m, s.data.split);
            let (img, label) = ds.examples().get(s.index).cloned().ok_or_else(|| {
                Error::Config(format!("--index {} out of range for {} examples", s.index, ds.len()))
            })?;
            m.set_arg("index", s.index);
            (img, s.label.unwrap_or(label))
        }
    };
    if label >= model.num_classes() {
        return Err(Error::Label {
            label,
            num_classes: model.num_classes(),
        });
    }
    m.set_arg("label", label);
    Ok((img, label))
}

fn attack_cmd(a: &AttackArgs) -> Result<RunManifest> {
    let mut m = RunManifest::new("attack");
    let model = load_model(&a.model, &mut m)?;
    let (img, label) = pick_image(&a.source, a.seed, &model, &mut m)?;
    let cfg = attack_config(&a.attack, a.eps, a.seed, &mut m);
    m.set_arg("eps", a.eps);

    let adv = run_attack(&model, &normalize(&img), label, a.attack.attack, a.eps, &cfg)?;
    info!(
        "label {label}: predicted {} after attack, loss {:.4} -> {:.4}",
        adv.predicted_label, adv.loss_before, adv.loss_after
    );
    let adv_img = crate::data::denormalize(&adv.x_adv)?;
    write_file(&a.out_adv, &encode_ppm(&adv_img))?;
    let pert = perturbation_image(&adv.perturbation, a.eps)?;
    write_file(&a.out_perturbation, &encode_ppm(&pert))?;

    m.set_arg("out-adv", a.out_adv.display());
    m.set_arg("out-perturbation", a.out_perturbation.display());
    m.record_output("adversarial", &a.out_adv)?;
    m.record_output("perturbation", &a.out_perturbation)?;
    m.set("result.predicted_label", adv.predicted_label);
    m.set("result.loss_before", format!("{:.6}", adv.loss_before));
    m.set("result.loss_after", format!("{:.6}", adv.loss_after));
    finish(m, default_path(&a.manifest, &a.out_adv, ".manifest"))
}

fn visualize_cmd(a: &VisualizeArgs) -> Result<RunManifest> {
    let mut m = RunManifest::new("visualize");
    let model = load_model(&a.model, &mut m)?;
    let (img, label) = pick_image(&a.source, a.seed, &model, &mut m)?;
    let eps = a.eps.clone().unwrap_or_else(|| a.attack.attack.default_eps());
    let cfg = attack_config(&a.attack, 0.0, a.seed, &mut m);
    m.set_arg("eps", join_eps(&eps));

    let grid = render_attack_grid(&model, &img, label, a.attack.attack, &eps, &cfg)?;
    ensure_parent(&a.out)?;
    write_grid_ppm(&grid, &a.out)?;
    m.set_arg("out", a.out.display());
    m.record_output("grid", &a.out)?;
    m.set("result.columns", grid.captions.join(" "));
    finish(m, default_path(&a.manifest, &a.out, ".manifest"))
}

fn synth_data_cmd(a: &SynthDataArgs) -> Result<RunManifest> {
    let mut m = RunManifest::new("synth-data");
    let ds = synth_signs(a.classes, a.per_class, a.side, a.seed)?;
    let mut index = vec![0usize; ds.num_classes()];
    for (img, label) in ds.examples() {
        let dir = a.out.join(&ds.class_names()[*label]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_ppm(img, &dir.join(format!("img_{:04}.ppm", index[*label])))?;
        index[*label] += 1;
    }
    info!("wrote {} images to {}", ds.len(), a.out.display());
    m.set_arg("classes", a.classes);
    m.set_arg("per-class", a.per_class);
    m.set_arg("side", a.side);
    m.set_arg("seed", a.seed);
    m.set_arg("out", a.out.display());
    m.set("output.dataset", a.out.display());
    m.set("output.dataset.sha256", tree_digest(&a.out)?);
    finish(m, default_path(&a.manifest, &a.out, ".manifest"))
}

/// SHA-256 over every file below `root`, in byte-sorted relative-path order,
/// hashing each path and its contents.
pub fn tree_digest(root: &Path) -> Result<String> {
    fn collect(dir: &Path, prefix: &str, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let rel = format!("{prefix}{name}");
            let path = entry.path();
            if path.is_dir() {
                collect(&path, &format!("{rel}/"), out)?;
            } else {
                out.push((rel, path));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(root, "", &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update((rel.len() as u64).to_le_bytes());
        hasher.update(rel.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Rebuilds the command line recorded in `manifest`, optionally sending
/// every output into `output_dir`.
fn replay_argv(manifest: &RunManifest, output_dir: Option<&Path>) -> Result<Vec<OsString>> {
    let mut argv: Vec<OsString> = vec!["gsgn".into(), manifest.command()?.into()];
    for (flag, value) in manifest.args() {
        argv.push(format!("--{flag}").into());
        if flag == "synth" {
            argv.extend(value.split_whitespace().map(OsString::from));
            continue;
        }
        match output_dir {
            Some(dir) if OUTPUT_FLAGS.contains(&flag) => {
                let name = Path::new(value)
                    .file_name()
                    .ok_or_else(|| Error::Manifest(format!("output path {value:?} has no file name")))?;
                argv.push(dir.join(name).into_os_string());
            }
            _ => argv.push(value.into()),
        }
    }
    Ok(argv)
}

/// Re-runs the command recorded in the manifest at `path` and fails unless
/// every output digest matches the recorded one.
pub fn replay(path: &Path, output_dir: Option<&Path>) -> Result<RunManifest> {
    let recorded = RunManifest::read(path)?;
    if recorded.command()? == "replay" {
        return Err(Error::Manifest("cannot replay a replay".into()));
    }
    if recorded.get("version") != Some(env!("CARGO_PKG_VERSION")) {
        warn!(
            "manifest was written by version {}, replaying with {}",
            recorded.get("version").unwrap_or("?"),
            env!("CARGO_PKG_VERSION")
        );
    }
    if let Some(dir) = output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let argv = replay_argv(&recorded, output_dir)?;
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Manifest(format!("recorded arguments do not parse: {e}")))?;
    let fresh = run(&cli.command)?;

    let mut mismatches = Vec::new();
    for (name, _, expected) in recorded.outputs() {
        let actual = fresh.get(&format!("output.{name}.sha256"));
        if actual != Some(expected.as_str()) {
            mismatches.push(name);
        }
    }
    if recorded.get("checkpoint_digest") != fresh.get("checkpoint_digest") {
        mismatches.push("checkpoint_digest".into());
    }
    if !mismatches.is_empty() {
        return Err(Error::Manifest(format!("replay diverged in: {}", mismatches.join(", "))));
    }
    info!("replay reproduced {} output(s) byte-identically", recorded.outputs().len());
    Ok(fresh)
}
