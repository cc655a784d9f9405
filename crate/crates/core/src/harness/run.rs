//! Run-directory layout and the end-to-end per-subject job.
//!
//! ```text
//! RUN/manifest.txt          run manifest (written before any compute)
//! RUN/subject_NN.thgr       trained parameters per subject
//! RUN/metrics.csv           variant,window_ms,scope,subject,head,accuracy
//! RUN/history.csv           subject,epoch,loss,train_accuracy
//! RUN/confusion_NN.csv      primary-head confusion matrix per subject
//! RUN/possim_{path}.csv/.pgm subject-averaged positional similarity
//! RUN/report.md
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::eval::{evaluate, Evaluation};
use super::possim::{position_similarity, write_heatmap};
use super::report::{render_report, write_metrics, MetricRow};
use super::train::{subject_seed, train_subject, EpochStats};
use super::RunManifest;
use crate::dataset::{make_split, RecordingSession, SubjectSplit};
use crate::embedding::PathKind;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{checkpoint, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("manifest.txt").is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} has no manifest.txt", root.display()),
            )));
        }
        Ok(Self { root })
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn checkpoint(&self, subject: u32) -> PathBuf {
        self.root.join(format!("subject_{subject:02}.thgr"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }

    pub fn confusion(&self, subject: u32) -> PathBuf {
        self.root.join(format!("confusion_{subject:02}.csv"))
    }

    pub fn possim(&self, kind: PathKind, ext: &str) -> PathBuf {
        self.root.join(format!("possim_{}.{ext}", kind.tag()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }

    /// Subjects with a checkpoint, ascending.
    pub fn subjects(&self) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name
                .strip_prefix("subject_")
                .and_then(|s| s.strip_suffix(".thgr"))
                .and_then(|s| s.parse().ok())
            {
                out.push(id);
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SubjectResult {
    pub subject: u32,
    pub evaluation: Evaluation,
    pub history: Vec<EpochStats>,
    pub model: Model<f32>,
}

pub fn metric_rows(manifest: &RunManifest, results: &[SubjectResult]) -> Vec<MetricRow> {
    results
        .iter()
        .flat_map(|r| {
            r.evaluation.heads.iter().map(|h| MetricRow {
                variant: manifest.model.variant,
                window_ms: manifest.model.window_ms,
                scope: manifest.split.scope,
                subject: r.subject,
                head: h.head,
                accuracy: h.accuracy(),
            })
        })
        .collect()
}

fn run_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains and evaluates one independent model per subject, `jobs` subjects
/// at a time (0 = all cores). Results come back in subject order.
pub fn train_all(
    splits: &[SubjectSplit],
    manifest: &RunManifest,
    jobs: usize,
) -> Result<Vec<SubjectResult>> {
    run_pool(jobs, || {
        splits
            .par_iter()
            .map(|split| {
                let outcome = train_subject(split, manifest)?;
                let evaluation = evaluate(&outcome.model, &split.test, manifest.batch_size)?;
                log::info!(
                    "subject {}: test accuracy {:.2}%",
                    split.subject,
                    evaluation.heads[0].accuracy()
                );
                Ok(SubjectResult {
                    subject: split.subject,
                    evaluation,
                    history: outcome.history,
                    model: outcome.model,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Elementwise mean of each subject's similarity matrix for `kind`.
pub fn mean_similarity(models: &[&Model<f32>], kind: PathKind) -> Result<Option<Tensor<f64>>> {
    let mut acc: Option<Tensor<f64>> = None;
    let mut n = 0;
    for m in models {
        let Some(path) = m.path(kind) else { continue };
        let s = position_similarity(m.params.get(path.embed.pos))?;
        match &mut acc {
            None => acc = Some(s),
            Some(a) => a
                .data_mut()
                .iter_mut()
                .zip(s.data())
                .for_each(|(x, y)| *x += y),
        }
        n += 1;
    }
    if let Some(a) = &mut acc {
        a.data_mut().iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(acc)
}

/// Writes `possim_{path}.csv/.pgm` for every path present; returns the
/// file names written.
pub fn write_possim(dir: &RunDir, models: &[&Model<f32>]) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for kind in PathKind::BOTH {
        if let Some(m) = mean_similarity(models, kind)? {
            let (csv, pgm) = (dir.possim(kind, "csv"), dir.possim(kind, "pgm"));
            write_heatmap(&m, &csv, &pgm)?;
            for p in [csv, pgm] {
                names.push(p.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    Ok(names)
}

fn write_history(path: &Path, results: &[SubjectResult]) -> Result<()> {
    let mut s = String::from("subject,epoch,loss,train_accuracy\n");
    for r in results {
        for h in &r.history {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.4}",
                r.subject, h.epoch, h.loss, h.train_accuracy
            );
        }
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_confusion(path: &Path, e: &Evaluation) -> Result<()> {
    let mut s = String::new();
    for row in &e.confusion {
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Full job: manifest, split, per-subject training and evaluation,
/// checkpoints, metrics, similarity heatmaps and report.
pub fn run_training(
    sessions: &[RecordingSession],
    manifest: &RunManifest,
    out: impl Into<PathBuf>,
    jobs: usize,
) -> Result<Vec<SubjectResult>> {
    manifest.validate()?;
    let dir = RunDir::create(out)?;
    manifest.write(dir.manifest())?;

    let splits = make_split(sessions, &manifest.split, &manifest.preprocess)?;
    if splits.is_empty() {
        return Err(Error::Config(format!(
            "no sessions fall inside scope {}",
            manifest.split.scope
        )));
    }
    let results = train_all(&splits, manifest, jobs)?;
    for r in &results {
        checkpoint::save(&r.model.params, dir.checkpoint(r.subject))?;
        write_confusion(&dir.confusion(r.subject), &r.evaluation)?;
    }
    let rows = metric_rows(manifest, &results);
    write_metrics(dir.metrics(), &rows)?;
    write_history(&dir.history(), &results)?;
    let models: Vec<&Model<f32>> = results.iter().map(|r| &r.model).collect();
    let heatmaps = write_possim(&dir, &models)?;
    fs::write(dir.report(), render_report(&rows, None, &heatmaps))?;
    Ok(results)
}

/// Rebuilds the trained model of `subject` from a run directory.
pub fn load_model(dir: &RunDir, manifest: &RunManifest, subject: u32) -> Result<Model<f32>> {
    let mut model = Model::new(manifest.model.clone(), subject_seed(manifest.seed, subject))?;
    checkpoint::load_into(&mut model.params, dir.checkpoint(subject))?;
    Ok(model)
}

/// Re-evaluates every checkpoint of a run on the test split of `sessions`.
pub fn evaluate_run(dir: &RunDir, sessions: &[RecordingSession]) -> Result<Vec<MetricRow>> {
    let manifest = RunManifest::read(dir.manifest())?;
    let splits = make_split(sessions, &manifest.split, &manifest.preprocess)?;
    let mut rows = Vec::new();
    for subject in dir.subjects()? {
        let Some(split) = splits.iter().find(|s| s.subject == subject) else {
            return Err(Error::Config(format!("no data for subject {subject}")));
        };
        let model = load_model(dir, &manifest, subject)?;
        let evaluation = evaluate(&model, &split.test, manifest.batch_size)?;
        rows.extend(metric_rows(
            &manifest,
            &[SubjectResult {
                subject,
                evaluation,
                history: Vec::new(),
                model,
            }],
        ));
    }
    Ok(rows)
}
