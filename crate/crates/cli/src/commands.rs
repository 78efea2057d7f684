use std::fs;
use std::path::{Path, PathBuf};

use segstack::exec::{self, Workers};
use segstack::imagery::{list_pngs, load_mask, save_mask, ChannelImage, Dataset, LabelImage};
use segstack::metrics::{evaluate, render_table, EvalOptions, MetricReport};
use segstack::solver::WeightMatrix;
use segstack::stacking::{read_json, train_ensemble, write_json, EnsembleConfig, EnsembleMode, EnsembleModel};
use segstack::synth::{self, SynthConfig};
use segstack::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::Failure;

fn stage(name: &str, path: &Path) -> impl FnOnce(Error) -> Failure {
    let context = format!("{name} {}", path.display());
    move |e| Failure::Core(e.context(context))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Core(Error::io(path, e)))
}

/// `<root>/<sub>` if it is a directory, else `root`.
fn subdir_or_self(root: &Path, sub: &str) -> PathBuf {
    let nested = root.join(sub);
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<String, Failure> {
    synth::write(cfg, out).map_err(stage("synth: writing", out))?;
    Ok(format!(
        "wrote {} {}x{} images with {} classes to {}",
        cfg.count,
        cfg.width,
        cfg.height,
        cfg.classes,
        out.display()
    ))
}

/// How well each candidate weighting fits the second-level data.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitClass {
    pub class: usize,
    pub weights: Vec<f64>,
    pub residual: f64,
    pub one_hot_residuals: Vec<f64>,
    pub uniform_residual: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitReport {
    pub rows: u64,
    pub columns: usize,
    pub classes: Vec<FitClass>,
}

pub fn train(cfg: &RunConfig) -> Result<String, Failure> {
    let data_root = cfg
        .data
        .as_deref()
        .ok_or_else(|| Failure::Config("train needs --data".into()))?;
    let out = cfg
        .out
        .as_deref()
        .ok_or_else(|| Failure::Config("train needs --out".into()))?;
    let data = Dataset::load(data_root, cfg.classes).map_err(stage("train: loading", data_root))?;
    let ens = EnsembleConfig {
        learners: cfg.learners.clone(),
        layer2_learners: cfg.layer2_learners.clone(),
        folds: cfg.folds,
        seed: cfg.seed,
        solver: cfg.solver,
        mode: if cfg.ole {
            EnsembleMode::OneLayer
        } else {
            EnsembleMode::TwoLayer
        },
        workers: Workers::new(cfg.workers),
    };
    let outcome = train_ensemble(&data, &ens).map_err(stage("train: fitting on", data_root))?;
    create_dir(out)?;
    outcome.model.save(out).map_err(stage("train: saving", out))?;

    let fit = fit_report(&outcome.summary.systems, &outcome.model.weights, outcome.summary.rows, outcome.summary.columns)
        .map_err(stage("train: fit report", out))?;
    write_json(&out.join("fit.json"), &fit).map_err(stage("train: writing", out))?;

    let mut msg = format!(
        "trained {} ensemble on {} images ({} rows) into {}",
        if cfg.ole { "one-layer" } else { "two-layer" },
        data.len(),
        outcome.summary.rows,
        out.display()
    );
    for (name, t) in &outcome.timings {
        msg.push_str(&format!("\n  {name}: {:.2}s", t.as_secs_f64()));
    }
    Ok(msg)
}

fn fit_report(
    systems: &[segstack::solver::GramSystem],
    weights: &WeightMatrix,
    rows: u64,
    columns: usize,
) -> Result<FitReport, Error> {
    let k = weights.models();
    let classes = systems
        .iter()
        .enumerate()
        .map(|(m, sys)| {
            let w = weights.column(m);
            let one_hot = (0..k)
                .map(|j| {
                    let mut e = vec![0.0; k];
                    e[j] = 1.0;
                    sys.residual(&e)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(FitClass {
                class: m,
                residual: sys.residual(&w)?,
                weights: w,
                one_hot_residuals: one_hot,
                uniform_residual: sys.residual(&vec![1.0 / k as f64; k])?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(FitReport { rows, columns, classes })
}

pub struct PredictArgs<'a> {
    pub model: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub dump_maps: bool,
    pub baselines: bool,
    pub workers: Option<usize>,
}

pub fn predict(args: &PredictArgs) -> Result<String, Failure> {
    let model = EnsembleModel::load(args.model).map_err(stage("predict: loading model", args.model))?;
    let image_dir = subdir_or_self(args.data, "images");
    let images = list_pngs(&image_dir).map_err(stage("predict: listing", &image_dir))?;
    if images.is_empty() {
        return Err(Failure::Core(Error::EmptyDataset(image_dir.display().to_string())));
    }
    let masks_dir = args.out.join("masks");
    create_dir(&masks_dir)?;
    let maps_dir = args.out.join("maps");
    if args.dump_maps {
        create_dir(&maps_dir)?;
    }
    let baseline_dirs: Vec<PathBuf> = if args.baselines {
        model
            .layer1
            .iter()
            .enumerate()
            .map(|(k, m)| args.out.join("baselines").join(format!("{k}-{}", m.spec().label())))
            .collect()
    } else {
        Vec::new()
    };
    for d in &baseline_dirs {
        create_dir(d)?;
    }

    let entries: Vec<(String, PathBuf)> = images.into_iter().collect();
    Workers::new(args.workers).install(|| {
        exec::try_map(&entries, |(stem, path)| {
            let image = ChannelImage::load(path)?;
            let pred = model.predict(&image, stem)?;
            let file = format!("{stem}.png");
            save_mask(&masks_dir.join(&file), &pred.labels)?;
            if args.dump_maps {
                pred.membership.write_dump(&maps_dir.join(format!("{stem}.pmap")))?;
            }
            for (dir, pm) in baseline_dirs.iter().zip(&pred.layer1) {
                save_mask(&dir.join(&file), &pm.argmax())?;
            }
            Ok::<_, Error>(())
        })
        .map_err(stage("predict: segmenting", &image_dir))
    })?;
    Ok(format!(
        "predicted {} images into {}",
        entries.len(),
        args.out.display()
    ))
}

fn load_masks(dir: &Path) -> Result<Vec<(String, LabelImage)>, Error> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(dir.display().to_string()));
    }
    let entries: Vec<(String, PathBuf)> = files.into_iter().collect();
    exec::try_map(&entries, |(stem, path)| Ok((stem.clone(), load_mask(path)?)))
}

/// Scores the masks in `pred` against the truth masks with matching stems.
pub fn evaluate_dir(
    name: &str,
    pred: &Path,
    truth: &[(String, LabelImage)],
    classes: usize,
    options: EvalOptions,
) -> Result<MetricReport, Failure> {
    let preds = load_masks(pred).map_err(stage("evaluate: loading", pred))?;
    let mut ordered = Vec::with_capacity(truth.len());
    let mut pi = preds.into_iter().peekable();
    for (stem, _) in truth {
        while pi.peek().is_some_and(|(s, _)| s < stem) {
            pi.next();
        }
        match pi.next() {
            Some((s, mask)) if &s == stem => ordered.push(mask),
            _ => {
                return Err(Failure::Core(
                    Error::UnpairedSample(stem.clone()).context(format!("evaluate: {}", pred.display())),
                ))
            }
        }
    }
    let truths: Vec<LabelImage> = truth.iter().map(|(_, m)| m.clone()).collect();
    evaluate(name, &ordered, &truths, classes, options).map_err(stage("evaluate: scoring", pred))
}

pub struct EvaluateArgs<'a> {
    pub pred: &'a Path,
    pub truth: &'a Path,
    pub classes: usize,
    pub options: EvalOptions,
    pub name: Option<&'a str>,
    pub out: Option<&'a Path>,
    pub workers: Option<usize>,
}

/// Reports for the ensemble masks and, when present, each baseline.
pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<String, Failure> {
    Workers::new(args.workers).install(|| {
        let truth_dir = subdir_or_self(args.truth, "masks");
        let truth = load_masks(&truth_dir).map_err(stage("evaluate: loading truth", &truth_dir))?;
        let pred_dir = subdir_or_self(args.pred, "masks");
        let name = args.name.unwrap_or(if pred_dir == args.pred { "prediction" } else { "ensemble" });
        let mut reports = vec![evaluate_dir(name, &pred_dir, &truth, args.classes, args.options)?];
        let baselines = args.pred.join("baselines");
        if baselines.is_dir() {
            let mut dirs: Vec<PathBuf> = fs::read_dir(&baselines)
                .map_err(|e| Failure::Core(Error::io(&baselines, e)))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            for d in dirs {
                let label = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                reports.push(evaluate_dir(&label, &d, &truth, args.classes, args.options)?);
            }
        }
        let table = render_table(&reports);
        if let Some(out) = args.out {
            write_json(out, &reports).map_err(stage("evaluate: writing", out))?;
        }
        Ok(table)
    })
}

/// Accepts files holding one report or an array of reports.
#[derive(Deserialize)]
#[serde(untagged)]
enum ReportFile {
    One(MetricReport),
    Many(Vec<MetricReport>),
}

pub fn report(files: &[PathBuf], out: Option<&Path>) -> Result<String, Failure> {
    let mut reports = Vec::new();
    for f in files {
        match read_json::<ReportFile>(f).map_err(stage("report: reading", f))? {
            ReportFile::One(r) => reports.push(r),
            ReportFile::Many(rs) => reports.extend(rs),
        }
    }
    let table = render_table(&reports);
    if let Some(out) = out {
        fs::write(out, &table).map_err(|e| Failure::Core(Error::io(out, e)))?;
    }
    Ok(table)
}
