//! The `prepare`, `train`, `evaluate` and `predict` commands.
//!
//! Every command reads the run config, works inside the output directory
//! and leaves its artifacts there:
//!
//! | command    | writes                                                       |
//! |------------|--------------------------------------------------------------|
//! | `prepare`  | `manifest.json`, `stats.json`, `index_map.json`              |
//! | `train`    | `model.bin`, `checkpoint.bin`, `train_report.csv`, `train_summary.json` |
//! | `evaluate` | `metrics.csv`, `metrics.json`, `metrics_table.txt`           |

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dmf_core::eval::{evaluate_areas, EvalMode, MetricsReport};
use dmf_core::train::{Clock, NoClock, TrainData};
use dmf_core::{Area, AreaSplit, DmfModel, Features, RatingMatrix, Trainer};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, Stats};
use crate::model_file::{self, write_atomic};
use crate::ratings::{self, DataFormat, Dataset, IdMap};
use crate::report;

pub const MANIFEST: &str = "manifest.json";
pub const STATS: &str = "stats.json";
pub const INDEX_MAP: &str = "index_map.json";
pub const MODEL: &str = "model.bin";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_REPORT: &str = "train_report.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TABLE: &str = "metrics_table.txt";

/// A loaded config plus the command-line overrides.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub deterministic: bool,
}

impl Run {
    pub fn load(
        config: &Path,
        seed: Option<u64>,
        output_dir: Option<PathBuf>,
        deterministic: bool,
    ) -> Result<Self> {
        let mut cfg = RunConfig::load(config)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let out = match output_dir {
            Some(d) => d,
            None if cfg.output_dir.is_relative() => {
                config.parent().map_or_else(|| cfg.output_dir.clone(), |p| p.join(&cfg.output_dir))
            }
            None => cfg.output_dir.clone(),
        };
        Ok(Run { config: cfg, out, deterministic })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.path(name), text.as_bytes())
    }

    fn data(&self) -> Result<Dataset> {
        let scaling = self.config.scaling()?;
        ratings::read_ratings(&self.config.data.path, self.config.data.format, scaling)
    }
}

/// The dataset with its manifest, scaled, and the inputs seen in training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ids: IdMap,
    pub manifest: Manifest,
    pub matrix: RatingMatrix,
    pub areas: AreaSplit,
    pub features: Features,
}

impl Prepared {
    pub fn load(run: &Run) -> Result<Self> {
        let path = run.path(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::from_json(&text, &path)?;
        let data = run.data()?;
        manifest.check(&data.matrix, &path)?;
        let matrix = data.matrix.scale()?;
        let areas = manifest.areas(&matrix);
        let features = Features::new(&matrix, &manifest.train, &areas)?;
        Ok(Prepared { ids: data.ids, manifest, matrix, areas, features })
    }
}

pub fn prepare(run: &Run) -> Result<Stats> {
    let data = run.data()?;
    let manifest = Manifest::build(&data.matrix, run.config.fractions()?, run.config.holdout(), run.config.seed)?;
    let stats = manifest.stats(&data.matrix);
    run.ensure_out()?;
    run.write(MANIFEST, &manifest.to_json())?;
    run.write(STATS, &report::to_json(&stats))?;
    run.write(INDEX_MAP, &report::to_json(&data.ids))?;
    Ok(stats)
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn now(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub summary: report::TrainSummary,
    pub report: dmf_core::TrainReport,
}

/// Trains from scratch, or from `resume` (a checkpoint) up to a total of
/// `max_epochs` epochs.
pub fn train(run: &Run, resume: Option<&Path>) -> Result<TrainOutcome> {
    let prep = Prepared::load(run)?;
    let cfg = run.config.train_config();
    let (row_cfg, col_cfg) = run.config.branches(prep.features.row_dim(), prep.features.col_dim())?;
    let mut trainer = match resume {
        Some(path) => {
            let state = model_file::load_checkpoint(path)?;
            let m = &state.current.model;
            if m.row_branch().config() != &row_cfg || m.col_branch().config() != &col_cfg {
                return Err(Error::config(
                    path,
                    format!("checkpoint architecture ({}) differs from the config", m.describe()),
                ));
            }
            if m.scaling() != run.config.scaling()? {
                return Err(Error::config(path, "checkpoint rating range differs from the config"));
            }
            Trainer::resume(state, cfg.clone())?
        }
        None => {
            let init = dmf_core::rng::sub_seed(run.config.seed, "init");
            let model = DmfModel::init(row_cfg, col_cfg, run.config.scaling()?, init)?;
            Trainer::new(model, cfg.clone())?
        }
    };
    let data = TrainData::new(&prep.matrix, &prep.manifest.sets(), &prep.areas, &prep.features)?;
    let train_report = if run.deterministic {
        trainer.run(&data, &mut NoClock)?
    } else {
        trainer.run(&data, &mut WallClock(Instant::now()))?
    };

    run.ensure_out()?;
    model_file::save_model(&run.path(MODEL), trainer.best())?;
    model_file::save_checkpoint(&run.path(CHECKPOINT), trainer.state())?;
    let mut csv = report::train_csv(&train_report.epochs);
    if resume.is_some() {
        if let Ok(previous) = std::fs::read_to_string(run.path(TRAIN_REPORT)) {
            let rows: String = csv.split_inclusive('\n').skip(1).collect();
            csv = previous + &rows;
        }
    }
    run.write(TRAIN_REPORT, &csv)?;
    let best = trainer.best();
    let state = trainer.state();
    let summary = report::train_summary(
        cfg.mode.name(),
        best.model.describe(),
        &train_report,
        state.epochs_done,
        state.best_val,
        best.quantizer.as_ref().map(|q| q.boundaries().to_vec()),
    );
    run.write(TRAIN_SUMMARY, &report::to_json(&summary))?;
    Ok(TrainOutcome { summary, report: train_report })
}

/// Test-set metrics of a model, overall and per area. Without `discrete`,
/// a quantized model reports discrete and real-valued metrics and a
/// real-valued model reports real-valued and rounded metrics.
pub fn evaluate(run: &Run, model: Option<&Path>, discrete: bool) -> Result<Vec<MetricsReport>> {
    let model_path = model.map_or_else(|| run.path(MODEL), Path::to_path_buf);
    let snap = model_file::load_model(&model_path)?;
    if discrete && snap.quantizer.is_none() {
        return Err(Error::Usage(format!("--discrete: model {} lacks quantizer", model_path.display())));
    }
    let prep = Prepared::load(run)?;
    snap.model
        .check_features(&prep.features)
        .map_err(|e| Error::config(&model_path, e.to_string()))?;
    let test = prep.areas.restrict(&prep.manifest.test);
    let modes: &[EvalMode] = match (&snap.quantizer, discrete) {
        (Some(_), true) => &[EvalMode::Discrete],
        (Some(_), false) => &[EvalMode::Discrete, EvalMode::RealValued],
        (None, _) => &[EvalMode::RealValued, EvalMode::RoundedBaseline],
    };
    let reports = modes
        .iter()
        .map(|&m| evaluate_areas(&snap.model, snap.quantizer.as_ref(), &prep.matrix, &prep.features, &test, m))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    run.ensure_out()?;
    run.write(METRICS_CSV, &report::metrics_csv(&reports))?;
    run.write(METRICS_JSON, &report::metrics_json(&reports))?;
    run.write(METRICS_TABLE, &report::metrics_table(&reports))?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Pair { user: String, item: String },
    /// CSV file with `user,item` columns.
    Batch(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub user: String,
    pub item: String,
    pub area: Area,
    pub value: f64,
}

/// Predictions in the original rating domain. Ids missing from the
/// training data are built from `side` observations (`user,item,rating`
/// rows); ids present in the data ignore the side file.
pub fn predict(
    run: &Run,
    model: Option<&Path>,
    query: &Query,
    side: Option<&Path>,
    discrete: bool,
) -> Result<Vec<Prediction>> {
    let model_path = model.map_or_else(|| run.path(MODEL), Path::to_path_buf);
    let snap = model_file::load_model(&model_path)?;
    if discrete && snap.quantizer.is_none() {
        return Err(Error::Usage(format!("--discrete: model {} lacks quantizer", model_path.display())));
    }
    let mut prep = Prepared::load(run)?;
    snap.model
        .check_features(&prep.features)
        .map_err(|e| Error::config(&model_path, e.to_string()))?;

    let pairs: Vec<(String, String)> = match query {
        Query::Pair { user, item } => vec![(user.clone(), item.clone())],
        Query::Batch(path) => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            ratings::csv_records(file, path, "")?.into_iter().map(|r| (r.user, r.item)).collect()
        }
    };
    let side = match side {
        Some(path) => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let recs = ratings::read_records(file, DataFormat::Csv, path)?;
            let scaling = snap.model.scaling();
            if let Some(r) = recs.iter().find(|r| !scaling.contains(r.rating)) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: r.line,
                    message: format!("rating {} outside [{}, {}]", r.rating, scaling.alpha(), scaling.beta()),
                });
            }
            recs
        }
        None => Vec::new(),
    };

    let scaling = snap.model.scaling();
    let mut new_rows: HashMap<String, usize> = HashMap::new();
    let mut new_cols: HashMap<String, usize> = HashMap::new();
    let mut resolved = Vec::with_capacity(pairs.len());
    for (user, item) in &pairs {
        let row = match prep.ids.user(user) {
            Some(r) => r,
            None => match new_rows.get(user) {
                Some(&r) => r,
                None => {
                    let obs: Vec<(usize, f64)> = side
                        .iter()
                        .filter(|r| &r.user == user)
                        .filter_map(|r| prep.ids.item(&r.item).map(|c| (c, scaling.scale(r.rating))))
                        .collect();
                    if obs.is_empty() {
                        return Err(Error::ColdEntity(format!("user {:?}", user)));
                    }
                    let r = prep.features.push_row(&obs).map_err(|e| Error::ColdEntity(format!("user {:?}: {}", user, e)))?;
                    new_rows.insert(user.clone(), r);
                    r
                }
            },
        };
        let col = match prep.ids.item(item) {
            Some(c) => c,
            None => match new_cols.get(item) {
                Some(&c) => c,
                None => {
                    let obs: Vec<(usize, f64)> = side
                        .iter()
                        .filter(|r| &r.item == item)
                        .filter_map(|r| prep.ids.user(&r.user).map(|u| (u, scaling.scale(r.rating))))
                        .collect();
                    if obs.is_empty() {
                        return Err(Error::ColdEntity(format!("item {:?}", item)));
                    }
                    let c = prep.features.push_col(&obs).map_err(|e| Error::ColdEntity(format!("item {:?}: {}", item, e)))?;
                    new_cols.insert(item.clone(), c);
                    c
                }
            },
        };
        resolved.push((row, col));
    }

    let raw = snap.model.predict_pairs(&prep.features, &resolved)?;
    let use_quantizer = discrete || snap.quantizer.is_some();
    let mut out = Vec::with_capacity(raw.len());
    for (((user, item), &(row, col)), f) in pairs.into_iter().zip(&resolved).zip(raw) {
        let value = match (&snap.quantizer, use_quantizer) {
            (Some(q), true) => dmf_core::train::discrete_value(&snap.model, q, f)?,
            _ => scaling.unscale(f),
        };
        let area = Area::classify(prep.features.is_row_seen(row), prep.features.is_col_seen(col));
        out.push(Prediction { user, item, area, value });
    }
    Ok(out)
}

/// `user,item,area,prediction`.
pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["user", "item", "area", "prediction"]).unwrap();
    for p in preds {
        w.write_record([p.user.as_str(), p.item.as_str(), p.area.label(), &p.value.to_string()]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
