//! Minibatch training with dev-set model selection, and batch prediction.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::dataset::{Emotion, Record, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{report_predictions, Prediction};
use crate::model::{argmax, Model};
use crate::optim::Adam;
use crate::param::{GradBuffer, ParamGrad, ParamStore};
use crate::parallel::Parallelism;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_macro_f1: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best dev epoch.
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
    pub dev_predictions: Vec<Prediction>,
}

/// Per-example loss and gradients on its own tape.
pub fn example_gradients(model: &Model, params: &ParamStore, record: &Record) -> Result<(f64, Vec<(String, ParamGrad)>)> {
    let tape = Tape::new();
    let f = model.forward(&tape, params, record)?;
    let loss = f.logits.cross_entropy(&[record.emotion.index()])?;
    let grads = tape.backward(loss)?;
    Ok((loss.value().item(), grads.params()))
}

/// Inverse-frequency weights with mean 1 over the examples; absent classes get 0.
pub fn class_weights(records: &[&Record]) -> [f64; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for r in records {
        counts[r.emotion.index()] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
    let n = records.len() as f64;
    let mut w = [0.0; NUM_CLASSES];
    for (wi, &c) in w.iter_mut().zip(&counts) {
        if c > 0 {
            *wi = n / (present * c as f64);
        }
    }
    w
}

/// One Adam update on `batch`; returns the mean (weighted) example loss.
/// Gradients are computed per example, possibly in parallel, and summed in
/// batch order so the result does not depend on scheduling.
pub fn train_step(
    model: &Model,
    params: &mut ParamStore,
    adam: &mut Adam,
    batch: &[&Record],
    weights: Option<&[f64; NUM_CLASSES]>,
    par: Parallelism,
) -> Result<f64> {
    let results = par.map(batch, |r| example_gradients(model, params, r));
    let w: Vec<f64> = batch
        .iter()
        .map(|r| weights.map_or(1.0, |w| w[r.emotion.index()]))
        .collect();
    let total: f64 = w.iter().sum();
    let mut buf = GradBuffer::new();
    let mut loss = 0.0;
    for (res, wi) in results.into_iter().zip(&w) {
        let (l, grads) = res?;
        let scale = wi / total;
        loss += scale * l;
        for (name, g) in &grads {
            buf.add(params, name, g, scale)?;
        }
    }
    adam.step(params, &buf)?;
    Ok(loss)
}

pub fn predict(model: &Model, params: &ParamStore, records: &[&Record], par: Parallelism) -> Result<Vec<Prediction>> {
    par.map(records, |r| {
        let z = model.logits(params, r)?;
        Ok(Prediction {
            id: r.id.clone(),
            gold: r.emotion,
            pred: Emotion::from_index(argmax(z.data())).expect("12 logits"),
            logits: z.into_data(),
        })
    })
    .into_iter()
    .collect()
}

pub fn train(model: &Model, records: &[Record], par: Parallelism) -> Result<TrainOutcome> {
    let train: Vec<&Record> = records.iter().filter(|r| r.split == Split::Train).collect();
    let dev: Vec<&Record> = records.iter().filter(|r| r.split == Split::Dev).collect();
    train_on(model, model.init_params(), &train, &dev, par)
}

pub fn train_on(
    model: &Model,
    mut params: ParamStore,
    train: &[&Record],
    dev: &[&Record],
    par: Parallelism,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("train split is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split is empty".into()));
    }
    let cfg = &model.config;
    let weights = cfg.optim.weighted_ce.then(|| class_weights(train));
    let mut adam = Adam::new(cfg.lr());
    let mut order: Vec<&Record> = train.to_vec();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore, Vec<Prediction>)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.optim.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.optim.batch_size) {
            let l = train_step(model, &mut params, &mut adam, batch, weights.as_ref(), par)?;
            loss_sum += l * batch.len() as f64;
        }
        let preds = predict(model, &params, dev, par)?;
        let f1 = report_predictions(&preds)?.macro_f1;
        let loss = loss_sum / order.len() as f64;
        log::info!("epoch {epoch}: loss {loss:.4} dev macro-F1 {f1:.2}");
        log.push(EpochLog {
            epoch,
            loss,
            dev_macro_f1: f1,
        });
        if best.as_ref().is_none_or(|b| f1 > b.0) {
            best = Some((f1, epoch, params.clone(), preds));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.optim.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (best_dev_macro_f1, best_epoch, params, dev_predictions) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        best_dev_macro_f1,
        dev_predictions,
    })
}

/// CSV `epoch,loss,dev_macro_f1`.
pub fn write_log<W: Write>(w: W, log: &[EpochLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss", "dev_macro_f1"])?;
    for e in log {
        out.write_record([e.epoch.to_string(), e.loss.to_string(), e.dev_macro_f1.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<log>", e))
}

pub fn accuracy(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.gold == p.pred).count() as f64 / preds.len() as f64
}
