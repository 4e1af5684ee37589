use std::fs;
use std::path::{Path, PathBuf};

use wdice::evaluation::{build_report, compare_reports, summarize, NamedMetric, RegionSpec, ScoreReport};
use wdice::holistic_net::{self, HolisticModel, LossKind, NetworkConfig, Phase, TrainOptions};
use wdice::synth_data::{self, SynthConfig};
use wdice::wasserstein::emd_lp;
use wdice::{io, GroundMetric, LabelSpace, ProbVector};

use crate::config::TrainConfig;
use crate::{CliError, CompareArgs, EmdArgs, EvalArgs, GenDataArgs, PredictArgs, TrainArgs};

type CliResult = Result<(), CliError>;

pub fn is_builtin_metric(spec: &str) -> bool {
    matches!(spec, "tree" | "zero-one" | "zero_one")
}

/// Label space used for built-in metrics over `n` labels.
fn default_space(n: usize) -> Result<LabelSpace, CliError> {
    if n == LabelSpace::brats().len() {
        Ok(LabelSpace::brats())
    } else {
        Ok(LabelSpace::anonymous(n)?)
    }
}

/// Resolves `tree`, `zero-one` or a metric file for `n` labels.
fn load_metric(spec: &str, n: usize, field: &str) -> Result<GroundMetric, CliError> {
    let metric = match spec {
        "tree" => GroundMetric::brats_tree(),
        "zero-one" | "zero_one" => GroundMetric::zero_one(default_space(n)?),
        path => GroundMetric::read(Path::new(path)).map_err(|e| CliError::input(field, e))?,
    };
    if metric.size() != n {
        return Err(CliError::input(
            field,
            format!("metric `{spec}` has {} labels, the data has {n}", metric.size()),
        ));
    }
    if let Some(&(l, l2)) = metric.extremal_violations().first() {
        eprintln!(
            "warning: {field}: M[{l}, background] < M[{l}, {l2}]; scores may fall outside [0, 1] ({} such pairs)",
            metric.extremal_violations().len()
        );
    }
    Ok(metric)
}

/// Parses comma- or whitespace-separated decimals.
fn parse_vector(text: &str, field: &str) -> Result<Vec<f64>, CliError> {
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::input(field, format!("`{t}` is not a decimal number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::input(field, "no values"));
    }
    Ok(values)
}

/// An inline list, or the contents of a file when `arg` names one.
fn read_vector(arg: &str, field: &str) -> Result<ProbVector, CliError> {
    let path = Path::new(arg);
    let values = if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(field, e))?;
        parse_vector(&text, field)?
    } else {
        parse_vector(arg, field)?
    };
    ProbVector::new(values).map_err(|e| CliError::input(field, e))
}

/// `v` with 12 significant digits, trailing zeros removed.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn emd(a: EmdArgs) -> CliResult {
    let p = read_vector(&a.p, "p")?;
    let q = read_vector(&a.q, "q")?;
    if p.len() != q.len() {
        return Err(CliError::input("q", format!("has {} entries, p has {}", q.len(), p.len())));
    }
    let metric = load_metric(&a.metric, p.len(), "metric")?;
    let (value, plan) = emd_lp(&p, &q, &metric)?;
    println!("{}", format_sig12(value));
    if a.verbose {
        println!("plan:");
        for l in 0..plan.size() {
            let row: Vec<String> = (0..plan.size()).map(|k| format_sig12(plan.get(l, k))).collect();
            println!("{}", row.join(","));
        }
    }
    Ok(())
}

fn eval_metrics(specs: &[String], n: usize) -> Result<Vec<NamedMetric>, CliError> {
    if specs.is_empty() {
        let mut out = vec![NamedMetric::new("zero_one", "zero-one", load_metric("zero-one", n, "metric")?)];
        if n == LabelSpace::brats().len() {
            out.push(NamedMetric::new("tree", "tree", GroundMetric::brats_tree()));
        }
        return Ok(out);
    }
    specs
        .iter()
        .map(|s| {
            let (name, spec) = s
                .split_once('=')
                .ok_or_else(|| CliError::input("metric", format!("`{s}` is not NAME=SPEC")))?;
            let field = format!("metric `{name}`");
            Ok(NamedMetric::new(name, spec, load_metric(spec, n, &field)?))
        })
        .collect()
}

fn eval_regions(path: Option<&Path>, space: &LabelSpace) -> Result<Vec<RegionSpec>, CliError> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::input("regions", e))?;
            RegionSpec::parse_list(&text, space, &p.display().to_string()).map_err(|e| CliError::input("regions", e))
        }
        None if space == &LabelSpace::brats() => Ok(RegionSpec::brats()),
        None => Ok(Vec::new()),
    }
}

fn evaluate_pair(pred: &Path, gt: &Path, a: &EvalArgs) -> Result<ScoreReport, CliError> {
    let p = io::read_prediction(pred).map_err(|e| CliError::input("pred", e))?;
    let g = io::read_sample(gt).map_err(|e| CliError::input("gt", e))?.labels;
    if p.dims() != g.dims() || p.num_labels() != g.num_labels() {
        return Err(CliError::input(
            "pred",
            format!(
                "{} with {} labels does not match ground truth {} with {} labels",
                p.dims(),
                p.num_labels(),
                g.dims(),
                g.num_labels()
            ),
        ));
    }
    let metrics = eval_metrics(&a.metrics, g.num_labels())?;
    let space = metrics[0].metric.space().clone();
    let regions = eval_regions(a.regions.as_deref(), &space)?;
    let mut report = build_report(&p, &g, &metrics, &regions)?;
    if a.timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        report.meta.timestamp = Some(format!("unix:{secs}"));
    }
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::input(parent.display(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::input(path.display(), e))
}

pub fn eval(a: EvalArgs) -> CliResult {
    if !a.gt.is_dir() {
        let report = evaluate_pair(&a.pred, &a.gt, &a)?;
        print!("{}", report.render_table());
        if let Some(out) = &a.out {
            write_text(out, &report.to_json()?)?;
        }
        return Ok(());
    }
    if !a.pred.is_dir() {
        return Err(CliError::input("pred", "must be a directory when --gt is one"));
    }
    let gt_files = synth_data::dataset_paths(&a.gt).map_err(|e| CliError::input("gt", e))?;
    let mut reports = Vec::with_capacity(gt_files.len());
    for gt in &gt_files {
        let name = gt.file_name().expect("dataset entries are files");
        let pred = a.pred.join(name);
        if !pred.is_file() {
            return Err(CliError::input("pred", format!("missing {}", pred.display())));
        }
        let report = evaluate_pair(&pred, gt, &a)?;
        if let Some(out) = &a.out {
            let stem = Path::new(name).with_extension("json");
            write_text(&out.join(stem), &report.to_json()?)?;
        }
        reports.push(report);
    }
    let summary = summarize(&reports)?;
    print!("{}", summary.render_table(&reports[0].meta.labels));
    Ok(())
}

fn parse_fractions(text: &str) -> Result<[f64; 4], CliError> {
    let v = parse_vector(text, "fractions")?;
    v.try_into()
        .map_err(|v: Vec<f64>| CliError::input("fractions", format!("expected 4 values, found {}", v.len())))
}

pub fn gen_data(a: GenDataArgs) -> CliResult {
    let cfg = SynthConfig {
        size: a.size,
        fractions: parse_fractions(&a.fractions)?,
        noise: a.noise,
        modalities: a.modalities,
        samples: a.samples,
        seed: a.seed,
    };
    let samples = synth_data::generate(&cfg)?;
    synth_data::write_dataset(&a.out, &samples, Some(&cfg))?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn loss_kind(loss: &str, metric: Option<&str>, classes: usize, field: &str) -> Result<LossKind, CliError> {
    match loss {
        "mean_dice" => Ok(LossKind::MeanDice),
        "binary_dice" => Ok(LossKind::BinaryDice),
        "wasserstein" => {
            let spec = metric.unwrap_or("tree");
            let name = if is_builtin_metric(spec) {
                spec.replace('-', "_")
            } else {
                Path::new(spec)
                    .file_stem()
                    .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned())
            };
            Ok(LossKind::wasserstein(name, load_metric(spec, classes, field)?))
        }
        other => Err(CliError::input(
            field,
            format!("unknown loss `{other}` (mean_dice, binary_dice, wasserstein)"),
        )),
    }
}

pub fn train(a: TrainArgs) -> CliResult {
    let cfg = TrainConfig::load(&a.config)?;
    let train_set = synth_data::read_dataset(&cfg.train_data).map_err(|e| CliError::input("train_data", e))?;
    let val_set = match &cfg.val_data {
        Some(p) => synth_data::read_dataset(p).map_err(|e| CliError::input("val_data", e))?,
        None => Vec::new(),
    };
    let first = train_set
        .first()
        .ok_or_else(|| CliError::input("train_data", "dataset is empty"))?;
    let classes = first.labels.num_labels();
    let defaults = NetworkConfig::default();
    let network = NetworkConfig {
        scales: cfg.network.scales.unwrap_or(defaults.scales),
        channels: cfg.network.channels.unwrap_or(defaults.channels),
        classes,
        input_channels: first.image.channels,
        seed: a.seed.or(cfg.network.seed).unwrap_or(defaults.seed),
    };
    let schedule = cfg
        .phases
        .iter()
        .enumerate()
        .map(|(k, ph)| {
            let field = format!("phases[{k}]");
            Ok(Phase {
                loss: loss_kind(&ph.loss, ph.metric.as_deref(), classes, &field)?,
                epochs: ph.epochs,
                learning_rate: ph.learning_rate,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let options = TrainOptions {
        batch_size: cfg.batch_size,
        momentum: cfg.momentum,
        validation_metric: load_metric(&cfg.validation_metric, classes, "validation_metric")?,
        ..TrainOptions::default()
    };
    let (model, log) = holistic_net::train(network, &train_set, &val_set, &schedule, &options)?;
    let tsv = log.to_tsv();
    write_text(&cfg.log, &tsv)?;
    if let Some(parent) = cfg.checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::input(parent.display(), e))?;
    }
    model.save(&cfg.checkpoint).map_err(|e| CliError::input("checkpoint", e))?;
    print!("{tsv}");
    Ok(())
}

pub fn predict(a: PredictArgs) -> CliResult {
    let model = HolisticModel::load(&a.model).map_err(|e| CliError::input("model", e))?;
    let paths = synth_data::dataset_paths(&a.data).map_err(|e| CliError::input("data", e))?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::input("out", e))?;
    for path in &paths {
        let sample = io::read_sample(path).map_err(|e| CliError::input("data", e))?;
        let probs = model.predict(&sample.image)?;
        let name = path.file_name().expect("dataset entries are files");
        io::write_prob_map(&a.out.join(name), &probs)?;
    }
    println!("wrote {} probability maps to {}", paths.len(), a.out.display());
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<ScoreReport>, CliError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::input(path.display(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(CliError::input(path.display(), "no reports found"));
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| CliError::input(f.display(), e))?;
            ScoreReport::from_json(&text).map_err(|e| CliError::input(f.display(), e))
        })
        .collect()
}

pub fn compare(a: CompareArgs) -> CliResult {
    let mut sets = Vec::with_capacity(a.sets.len());
    for s in &a.sets {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| CliError::input("sets", format!("`{s}` is not NAME=PATH")))?;
        sets.push((name.to_string(), read_reports(Path::new(path))?));
    }
    let n = sets[0].1[0].meta.labels.len();
    let metric = load_metric(&a.mass_metric, n, "mass_metric")?;
    let comparison = compare_reports(&sets, &metric)?;
    let table = comparison.render_table();
    print!("{table}");
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(&comparison).map_err(|e| CliError::input("out", e))?;
        text.push('\n');
        write_text(out, &text)?;
    }
    Ok(())
}
