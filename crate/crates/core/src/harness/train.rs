use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::count_correct;
use super::RunManifest;
use crate::dataset::{audit_disjoint, SubjectSplit};
use crate::error::{Error, Result};
use crate::model::{loss, Model};
use crate::tensor::{AdamState, Graph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    /// Running top-1 accuracy (%) of the primary head during the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<EpochStats>,
}

/// Per-subject seed, so subjects are independent of scheduling order.
pub fn subject_seed(seed: u64, subject: u32) -> u64 {
    seed ^ (subject as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Seeded mini-batch Adam on one subject's training windows. The leakage
/// audit runs first; a non-finite loss or gradient aborts with the epoch and
/// batch where it happened.
pub fn train_subject(split: &SubjectSplit, manifest: &RunManifest) -> Result<TrainOutcome> {
    manifest.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config(format!(
            "subject {} has no training windows",
            split.subject
        )));
    }
    let checked = audit_disjoint(&split.train, &split.test)?;
    log::debug!(
        "subject {}: audit passed over {checked} windows",
        split.subject
    );

    let seed = subject_seed(manifest.seed, split.subject);
    let mut model = Model::<f32>::new(manifest.model.clone(), seed)?;
    if split.train.segment_len() != model.config.segment_len() {
        return Err(Error::Config(format!(
            "segments hold {} values, model expects {}",
            split.train.segment_len(),
            model.config.segment_len()
        )));
    }
    let mut adam = AdamState::new(manifest.adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let labels = split.train.labels();
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut buf = Vec::new();
    let mut history = Vec::with_capacity(manifest.epochs);

    for epoch in 0..manifest.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches, mut correct) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(manifest.batch_size).enumerate() {
            split.train.fill(idx, &mut buf);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();

            let step = |model: &mut Model<f32>, adam: &mut AdamState| -> Result<(f64, usize)> {
                let mut g = Graph::new();
                let vars = g.bind(&model.params);
                let logits = model.forward(&mut g, &vars, &buf, idx.len())?;
                let bundle = loss(&mut g, &logits, &y, manifest.loss_mode)?;
                let total = bundle.values(&g).total;
                if !total.is_finite() {
                    return Err(Error::NonFinite {
                        context: "loss".into(),
                        index: 0,
                    });
                }
                let correct = count_correct(g.value(logits.primary()), &y);
                g.backward(bundle.total)?;
                model.params.zero_grad();
                model.params.accumulate_grads(&g, &vars)?;
                adam.step(&mut model.params)?;
                Ok((total, correct))
            };
            let (total, hits) = step(&mut model, &mut adam).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch, batch: b },
                other => other,
            })?;
            correct += hits;
            loss_sum += total;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            train_accuracy: 100.0 * correct as f64 / order.len() as f64,
        };
        log::info!(
            "subject {} epoch {}: loss {:.4}, train acc {:.2}%",
            split.subject,
            epoch,
            stats.loss,
            stats.train_accuracy
        );
        history.push(stats);
    }
    Ok(TrainOutcome { model, history })
}
