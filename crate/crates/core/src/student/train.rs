use super::loss::{loss_total, Batch, LossBreakdown, LossWeights};
use super::Student;
use crate::distill_data::{DistillDataset, DistillPair};
use crate::error::{DnkError, Result};
use crate::numkit::{epoch_batches, AdamConfig, AdamState, Rng64, TrainOptions};

/// Per-epoch means of every loss term, weighted by batch size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudentReport {
    pub curve: Vec<LossBreakdown>,
}

impl StudentReport {
    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.curve.last().copied()
    }
}

/// Mini-batch Adam on [`loss_total`]. On a non-finite loss or gradient the
/// model is rolled back to the parameters at the end of the last complete
/// epoch and `Diverged` is returned.
pub fn train_student(
    student: &mut Student,
    data: &DistillDataset,
    lw: &LossWeights,
    opts: &TrainOptions,
) -> Result<StudentReport> {
    opts.validate()?;
    lw.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(DnkError::Empty("train_student"));
    }
    if data.horizon != student.horizon {
        return Err(DnkError::dim("student horizon", student.horizon, data.horizon));
    }
    let mut rng = Rng64::seeded(opts.seed, 0);
    let blocks: Vec<usize> = student.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(AdamConfig { lr: opts.lr, ..Default::default() }, &blocks);
    let mut report = StudentReport::default();
    let mut last_good = student.clone();
    for epoch in 0..opts.epochs {
        adam.config.lr = opts.lr_at(epoch);
        let mut sum = LossBreakdown::default();
        for idx in epoch_batches(data.len(), opts.batch_size, &mut rng) {
            let batch = Batch::from_pairs(idx.iter().map(|&i| &data.pairs[i]))?;
            let step = loss_total(student, &batch, lw).and_then(|(terms, grads)| {
                adam.step(&mut student.param_slices_mut(), &grads.slices())?;
                Ok(terms)
            });
            match step {
                Ok(terms) => sum.add(&terms.scaled(idx.len() as f64)),
                Err(e) => {
                    *student = last_good;
                    return Err(DnkError::Diverged { epoch, detail: e.to_string() });
                }
            }
        }
        report.curve.push(sum.scaled(1.0 / data.len() as f64));
        last_good = student.clone();
    }
    Ok(report)
}

/// Unweighted mean squared error of the student against the normalised
/// teacher targets, per trajectory entry.
pub fn evaluate_mse(student: &Student, pairs: &[DistillPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(DnkError::Empty("evaluate_mse"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in pairs.chunks(256) {
        let batch = Batch::from_pairs(chunk)?;
        let pred = student.forward_batch(&batch.priors, &batch.ctx)?;
        for (p, t) in pred.data().iter().zip(batch.targets.data()) {
            sum += (p - t) * (p - t);
        }
        count += pred.data().len();
    }
    Ok(sum / count as f64)
}
