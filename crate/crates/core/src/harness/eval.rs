use crate::dataset::SegmentSet;
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model};
use crate::tensor::{Float, Tensor};

/// Index of the largest entry; the first one wins on ties.
pub fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of rows of `logits: [B, K]` whose argmax equals the label.
pub fn count_correct<T: Float>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadAccuracy {
    pub head: HeadKind,
    pub correct: usize,
    pub total: usize,
}

impl HeadAccuracy {
    /// Top-1 accuracy in percent.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// Test results for one subject. The confusion matrix (rows: true class,
/// columns: predicted) is for the primary head.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub subject: u32,
    pub heads: Vec<HeadAccuracy>,
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn empty(subject: u32, heads: &[HeadKind], n_classes: usize) -> Self {
        Self {
            subject,
            heads: heads
                .iter()
                .map(|&head| HeadAccuracy {
                    head,
                    correct: 0,
                    total: 0,
                })
                .collect(),
            confusion: vec![vec![0; n_classes]; n_classes],
        }
    }

    /// Adds one batch of per-head logits, all from the same forward pass.
    /// The first head is the primary one.
    pub fn add_batch<T: Float>(
        &mut self,
        logits: &[(HeadKind, Tensor<T>)],
        labels: &[usize],
    ) -> Result<()> {
        if logits.len() != self.heads.len() {
            return Err(Error::Config("head set changed between batches".into()));
        }
        for (acc, (head, t)) in self.heads.iter_mut().zip(logits) {
            if acc.head != *head || t.shape() != [labels.len(), self.confusion.len()] {
                return Err(Error::Dimension {
                    op: "evaluate",
                    lhs: t.shape().to_vec(),
                    rhs: vec![labels.len(), self.confusion.len()],
                });
            }
            acc.correct += count_correct(t, labels);
            acc.total += labels.len();
        }
        let k = self.confusion.len();
        for (row, &l) in logits[0].1.data().chunks(k).zip(labels) {
            self.confusion[l][argmax(row)] += 1;
        }
        Ok(())
    }

    pub fn accuracy(&self, head: HeadKind) -> Option<f64> {
        self.heads
            .iter()
            .find(|h| h.head == head)
            .map(HeadAccuracy::accuracy)
    }
}

/// Top-1 accuracy of every head of `model` on `set`, evaluated in batches.
pub fn evaluate(model: &Model<f32>, set: &SegmentSet, batch_size: usize) -> Result<Evaluation> {
    let labels = set.labels();
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut eval = Evaluation::empty(set.subject, &model.heads(), model.config.n_classes);
    let mut buf = Vec::new();
    for idx in indices.chunks(batch_size.max(1)) {
        set.fill(idx, &mut buf);
        let out = model.predict(&buf, idx.len())?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        eval.add_batch(&out, &y)?;
    }
    Ok(eval)
}
