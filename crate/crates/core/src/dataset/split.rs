//! Repetition-based train/test split with contiguous class remapping.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{Exercise, RecordingSession};
use crate::error::{Error, Result};
use crate::preprocess::{
    homogeneous_windows, prepare_subject, MuLawParams, PreparedSession, PreprocessConfig, Segment,
    WindowRef,
};

/// Which movements are classified, and how they map to class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// All three exercises, 49 classes (B, then C, then D).
    Db2All,
    Exercise(Exercise),
    /// The first `n` classes of the combined labelling; used for synthetic
    /// data whose class count is not one of the DB2 exercises.
    Leading(usize),
}

impl Scope {
    pub fn n_classes(self) -> usize {
        match self {
            Scope::Db2All => 49,
            Scope::Exercise(e) => e.movements() as usize,
            Scope::Leading(n) => n,
        }
    }

    /// Class id of `movement` (1-based) recorded in `exercise`, or `None`
    /// when it is rest or out of scope.
    pub fn class_of(self, exercise: Exercise, movement: u16) -> Option<usize> {
        if movement == 0 || movement > exercise.movements() {
            return None;
        }
        let local = movement as usize - 1;
        match self {
            Scope::Db2All => Some(exercise.class_offset() + local),
            Scope::Exercise(e) => (e == exercise).then_some(local),
            Scope::Leading(n) => {
                let global = exercise.class_offset() + local;
                (global < n).then_some(global)
            }
        }
    }

    pub fn includes(self, exercise: Exercise) -> bool {
        match self {
            Scope::Db2All => true,
            Scope::Exercise(e) => e == exercise,
            Scope::Leading(n) => exercise.class_offset() < n,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Db2All => f.write_str("db2"),
            Scope::Exercise(e) => write!(f, "{}", e.to_string().to_lowercase()),
            Scope::Leading(n) => write!(f, "first-{n}"),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    /// Accepts `db2`, `b`, `c`, `d` (also `b-17` style) and `first-N`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(n) = s.strip_prefix("first-") {
            let n = n
                .parse()
                .map_err(|_| Error::Config(format!("bad scope {s:?}")))?;
            return Ok(Scope::Leading(n));
        }
        let head = s.split('-').next().unwrap_or("");
        match head {
            "db2" | "all" => Ok(Scope::Db2All),
            "b" | "c" | "d" => Ok(Scope::Exercise(head.parse()?)),
            _ => Err(Error::Config(format!("unknown scope {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train_reps: Vec<u16>,
    pub test_reps: Vec<u16>,
    pub scope: Scope,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            train_reps: vec![1, 3, 4, 6],
            test_reps: vec![2, 5],
            scope: Scope::Db2All,
        }
    }
}

impl SplitPlan {
    pub fn with_scope(scope: Scope) -> Self {
        Self {
            scope,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.train_reps.iter().find(|r| self.test_reps.contains(r)) {
            return Err(Error::Config(format!(
                "repetition {r} is in both train and test sets"
            )));
        }
        if self.train_reps.is_empty() || self.test_reps.is_empty() {
            return Err(Error::Config("empty repetition set".into()));
        }
        Ok(())
    }
}

/// One window with its remapped class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentItem {
    pub session: usize,
    pub window: WindowRef,
    pub label: usize,
}

/// Windows of one subject on one side of the split, backed by shared
/// prepared sessions.
#[derive(Debug, Clone)]
pub struct SegmentSet {
    pub subject: u32,
    pub sessions: Arc<Vec<PreparedSession>>,
    pub items: Vec<SegmentItem>,
    pub width: usize,
    pub n_sensors: usize,
    pub channels: usize,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Values per segment, `S·W·C`.
    pub fn segment_len(&self) -> usize {
        self.n_sensors * self.width * self.channels
    }

    pub fn segment(&self, i: usize) -> Segment {
        let item = self.items[i];
        Segment {
            x: self.sessions[item.session].window(item.window.start, self.width),
            label: item.label,
            subject: self.subject,
            repetition: item.window.repetition,
        }
    }

    /// Writes segments `indices` back to back into `out` (`len·S·W·C`).
    pub fn fill(&self, indices: &[usize], out: &mut Vec<f32>) {
        let n = self.segment_len();
        out.clear();
        out.resize(indices.len() * n, 0.0);
        for (k, &i) in indices.iter().enumerate() {
            let item = self.items[i];
            self.sessions[item.session].write_window(
                item.window.start,
                self.width,
                &mut out[k * n..(k + 1) * n],
            );
        }
    }

    /// Per-class window counts.
    pub fn histogram(&self, n_classes: usize) -> Vec<usize> {
        let mut h = vec![0; n_classes];
        for i in &self.items {
            h[i.label] += 1;
        }
        h
    }

    fn content_digest(&self, i: usize) -> [u8; 32] {
        let seg = self.segment(i);
        let mut hasher = Sha256::new();
        for v in seg.x.data() {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

#[derive(Debug, Clone)]
pub struct SubjectSplit {
    pub subject: u32,
    pub train: SegmentSet,
    pub test: SegmentSet,
    pub scale: MuLawParams,
}

/// Prepares every subject's in-scope sessions and partitions their windows
/// by repetition id. Subjects come back in ascending id order.
pub fn make_split(
    sessions: &[RecordingSession],
    plan: &SplitPlan,
    config: &PreprocessConfig,
) -> Result<Vec<SubjectSplit>> {
    plan.validate()?;
    config.validate()?;
    let mut by_subject: BTreeMap<u32, Vec<RecordingSession>> = BTreeMap::new();
    for s in sessions.iter().filter(|s| plan.scope.includes(s.exercise)) {
        s.validate()?;
        by_subject.entry(s.subject).or_default().push(s.clone());
    }

    let mut out = Vec::with_capacity(by_subject.len());
    for (subject, mut group) in by_subject {
        group.sort_by_key(|s| s.exercise);
        let n_sensors = group[0].n_sensors;
        let fs = group[0].fs_hz;
        if group
            .iter()
            .any(|s| s.n_sensors != n_sensors || s.fs_hz != fs)
        {
            return Err(Error::Format(format!(
                "subject {subject}: sessions disagree on sensor count or sample rate"
            )));
        }
        for s in &group {
            let present = s.repetitions();
            for r in plan.train_reps.iter().chain(&plan.test_reps) {
                if !present.contains(r) {
                    log::warn!(
                        "subject {subject} exercise {}: repetition {r} missing",
                        s.exercise
                    );
                }
            }
        }

        let (prepared, scale) = prepare_subject(&group, config, &plan.train_reps)?;
        let width = config.window_samples(fs);
        let step = config.step_samples(fs);
        let channels = config.filter_orders.len();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (si, p) in prepared.iter().enumerate() {
            for w in homogeneous_windows(&p.stimulus, &p.repetition, width, step) {
                let Some(label) = plan.scope.class_of(p.exercise, w.movement) else {
                    continue;
                };
                let item = SegmentItem {
                    session: si,
                    window: w,
                    label,
                };
                if plan.train_reps.contains(&w.repetition) {
                    train.push(item);
                } else if plan.test_reps.contains(&w.repetition) {
                    test.push(item);
                }
            }
        }
        let shared = Arc::new(prepared);
        let set = |items| SegmentSet {
            subject,
            sessions: Arc::clone(&shared),
            items,
            width,
            n_sensors,
            channels,
        };
        out.push(SubjectSplit {
            subject,
            train: set(train),
            test: set(test),
            scale,
        });
    }
    Ok(out)
}

/// Leakage audit: no test window may share samples with, or have identical
/// content to, any train window. Returns the number of windows checked.
pub fn audit_disjoint(train: &SegmentSet, test: &SegmentSet) -> Result<usize> {
    let mut covered: HashSet<(usize, usize)> = HashSet::new();
    for item in &train.items {
        for t in item.window.start..item.window.start + train.width {
            covered.insert((item.session, t));
        }
    }
    let same_backing = Arc::ptr_eq(&train.sessions, &test.sessions);
    for item in &test.items {
        if same_backing
            && (item.window.start..item.window.start + test.width)
                .any(|t| covered.contains(&(item.session, t)))
        {
            return Err(Error::Leakage(format!(
                "test window at sample {} of session {} overlaps the training set",
                item.window.start, item.session
            )));
        }
    }
    let digests: HashSet<[u8; 32]> = (0..train.len()).map(|i| train.content_digest(i)).collect();
    for i in 0..test.len() {
        if digests.contains(&test.content_digest(i)) {
            return Err(Error::Leakage(format!(
                "test window {i} duplicates a training window"
            )));
        }
    }
    Ok(train.len() + test.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_parsing_and_remap() {
        assert_eq!("db2".parse::<Scope>().unwrap(), Scope::Db2All);
        assert_eq!(
            "D-9".parse::<Scope>().unwrap(),
            Scope::Exercise(Exercise::D)
        );
        assert_eq!("first-5".parse::<Scope>().unwrap(), Scope::Leading(5));
        assert!("x".parse::<Scope>().is_err());

        assert_eq!(Scope::Db2All.class_of(Exercise::B, 1), Some(0));
        assert_eq!(Scope::Db2All.class_of(Exercise::C, 1), Some(17));
        assert_eq!(Scope::Db2All.class_of(Exercise::D, 9), Some(48));
        assert_eq!(
            Scope::Exercise(Exercise::D).class_of(Exercise::D, 9),
            Some(8)
        );
        assert_eq!(Scope::Exercise(Exercise::D).class_of(Exercise::B, 1), None);
        assert_eq!(Scope::Leading(5).class_of(Exercise::B, 6), None);
        assert_eq!(Scope::Db2All.class_of(Exercise::B, 0), None);
        for scope in [
            Scope::Db2All,
            Scope::Exercise(Exercise::C),
            Scope::Leading(12),
        ] {
            assert_eq!(scope.to_string().parse::<Scope>().unwrap(), scope);
        }
    }

    #[test]
    fn overlapping_rep_sets_are_rejected() {
        let plan = SplitPlan {
            train_reps: vec![1, 2],
            test_reps: vec![2],
            scope: Scope::Db2All,
        };
        assert!(plan.validate().is_err());
    }

    fn small_config() -> PreprocessConfig {
        PreprocessConfig {
            window_ms: 50,
            step_ms: 10,
            ..PreprocessConfig::default()
        }
    }

    #[test]
    fn windows_split_by_repetition() {
        let sessions = crate::dataset::synth_dataset(5, 2, 4, 6, 0.1).unwrap();
        let splits = make_split(
            &sessions,
            &SplitPlan::with_scope(Scope::Leading(4)),
            &small_config(),
        )
        .unwrap();
        assert_eq!(
            splits.iter().map(|s| s.subject).collect::<Vec<_>>(),
            vec![1, 2]
        );
        // run 200 samples, width 100, step 20 -> 6 windows per (class, rep)
        let per_run = (200 - 100) / 20 + 1;
        for sp in &splits {
            assert_eq!(sp.train.len(), 4 * 4 * per_run);
            assert_eq!(sp.test.len(), 4 * 2 * per_run);
            assert_eq!(sp.train.histogram(4), vec![4 * per_run; 4]);
            assert_eq!(sp.test.histogram(4), vec![2 * per_run; 4]);
            assert!(sp
                .train
                .items
                .iter()
                .all(|i| [1, 3, 4, 6].contains(&i.window.repetition)));
            assert!(sp
                .test
                .items
                .iter()
                .all(|i| [2, 5].contains(&i.window.repetition)));
            assert_eq!(audit_disjoint(&sp.train, &sp.test).unwrap(), 24 * per_run);
            let seg = sp.train.segment(0);
            assert_eq!(seg.x.shape(), &[12, 100, 3]);
            assert!(seg.x.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn exercise_scope_labels_are_contiguous() {
        let sessions = crate::dataset::synth_dataset(2, 1, 49, 6, 0.06).unwrap();
        let sp = make_split(
            &sessions,
            &SplitPlan::with_scope(Scope::Exercise(Exercise::D)),
            &small_config(),
        )
        .unwrap();
        let mut labels = sp[0].train.labels();
        labels.sort();
        labels.dedup();
        assert_eq!(labels, (0..9).collect::<Vec<_>>());
        assert!(sp[0]
            .train
            .sessions
            .iter()
            .all(|p| p.exercise == Exercise::D));
    }

    #[test]
    fn audit_catches_shared_samples() {
        let sessions = crate::dataset::synth_dataset(5, 1, 2, 6, 0.1).unwrap();
        let sp = make_split(
            &sessions,
            &SplitPlan::with_scope(Scope::Leading(2)),
            &small_config(),
        )
        .unwrap()
        .remove(0);
        let mut test = sp.test.clone();
        test.items.push(sp.train.items[3]);
        assert!(matches!(
            audit_disjoint(&sp.train, &test),
            Err(Error::Leakage(_))
        ));
    }
}
