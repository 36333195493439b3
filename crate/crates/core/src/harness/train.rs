//! Data preparation, SGD training and per-epoch diagnostics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{self, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::harness::checkpoint::Normalization;
use crate::harness::config::{DataSource, RunConfig};
use crate::metrics::{ece, pearson, spearman};
use crate::posthoc::batch_at_temperature;
use crate::tensor::Tensor;
use crate::vit::{cls_norm, infer_batch, patchify, record_forward, Inference, ModelConfig, ViTParams};

/// Train/validation/test sets after normalization.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub norm: Normalization,
}

/// Loads or generates the data described by `cfg`, carves the validation
/// split out of the training pool and normalizes with training statistics.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let m = &cfg.model;
    let d = &cfg.data;
    let (pool, test) = match d.source {
        DataSource::Mnist => {
            let all = data::load_idx(&d.images, &d.labels)?;
            let mut parts = data::disjoint_subsets(&all, &[d.train_size, d.test_size], cfg.seed)?;
            let test = parts.pop().expect("two parts");
            (parts.pop().expect("two parts"), test)
        }
        DataSource::Synthetic => {
            let shape = (m.channels, m.image_h, m.image_w);
            let sep = d.synth_separation;
            (
                data::synth_gaussians(m.classes, d.synth_per_class, shape, sep, cfg.seed)?,
                data::synth_gaussians(m.classes, d.synth_test_per_class, shape, sep, cfg.seed ^ 0x7e57)?,
            )
        }
    };
    if pool.shape != (m.channels, m.image_h, m.image_w) {
        return Err(Error::Config(format!(
            "data images are {:?}, model expects {}x{}x{}",
            pool.shape, m.channels, m.image_h, m.image_w
        )));
    }
    if pool.class_count > m.classes {
        return Err(Error::Config(format!(
            "data has {} classes, model has {}",
            pool.class_count, m.classes
        )));
    }
    let (train, val) = data::split(
        &pool,
        SplitSpec {
            val_fraction: d.val_fraction,
            seed: cfg.seed,
        },
    )?;
    let norm = if d.normalize {
        let (mean, std) = data::channel_stats(&train);
        Normalization { mean, std }
    } else {
        Normalization::identity(m.channels)
    };
    let apply = |ds: &Dataset| data::normalize(ds, &norm.mean, &norm.std);
    Ok(PreparedData {
        train: apply(&train)?,
        val: apply(&val)?,
        test: apply(&test)?,
        norm,
    })
}

/// Inference over a whole dataset in chunks.
pub fn infer_dataset(
    model: &ModelConfig,
    params: &ViTParams,
    ds: &Dataset,
    chunk: usize,
) -> Result<Vec<Inference>> {
    let per = ds.image_len();
    let mut out = Vec::with_capacity(ds.len());
    for block in ds.images.chunks(per * chunk.max(1)) {
        out.extend(infer_batch(model, params, block)?);
    }
    Ok(out)
}

/// Calibrated logits `[n, C]` of a batch of inferences.
pub fn calibrated_logits(inf: &[Inference]) -> Result<Tensor> {
    let c = inf.first().map_or(0, |i| i.logits.len());
    let data = inf.iter().flat_map(|i| i.calibrated_logits()).collect();
    Tensor::matrix(inf.len(), c, data)
}

/// Mean, coefficient of variation and range of the per-sample temperatures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleSummary {
    pub mean: f64,
    pub cv: f64,
    pub min: f64,
    pub max: f64,
}

impl ScaleSummary {
    /// Population standard deviation over the mean.
    pub fn of(s: &[f64]) -> Self {
        let n = s.len().max(1) as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
            min: s.iter().copied().fold(f64::INFINITY, f64::min),
            max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochDiagnostics {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_ece: f64,
    pub mean_s: f64,
    pub cv_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub mean_cls_norm: f64,
    /// Correlation of `‖z_cls‖` with confidence; NaN when undefined.
    pub pearson: f64,
    pub spearman: f64,
}

impl EpochDiagnostics {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,train_acc,val_acc,val_ece,mean_s,cv_s,min_s,max_s,mean_cls_norm,pearson,spearman";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.10},{:.6},{:.6},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10}",
            self.epoch,
            self.lr,
            self.train_loss,
            self.train_acc,
            self.val_acc,
            self.val_ece,
            self.mean_s,
            self.cv_s,
            self.min_s,
            self.max_s,
            self.mean_cls_norm,
            self.pearson,
            self.spearman
        )
    }
}

pub fn diagnostics_csv(history: &[EpochDiagnostics]) -> String {
    let mut out = String::from(EpochDiagnostics::CSV_HEADER);
    out.push('\n');
    for d in history {
        out.push_str(&d.csv_row());
        out.push('\n');
    }
    out
}

/// Validation-set statistics after an epoch.
fn epoch_stats(
    cfg: &RunConfig,
    params: &ViTParams,
    val: &Dataset,
) -> Result<(f64, f64, ScaleSummary, f64, f64, f64)> {
    let inf = infer_dataset(&cfg.model, params, val, cfg.eval.batch_size)?;
    let logits = calibrated_logits(&inf)?;
    let batch = batch_at_temperature(&logits, &val.labels, 1.0)?;
    let scales: Vec<f64> = inf.iter().map(|i| i.scale.unwrap_or(1.0)).collect();
    let norms: Vec<f64> = inf.iter().map(|i| cls_norm(&i.z_cls)).collect();
    let conf: Vec<f64> = batch.samples.iter().map(|s| s.confidence).collect();
    let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    Ok((
        batch.accuracy(),
        ece(&batch, cfg.eval.bins)?,
        ScaleSummary::of(&scales),
        mean_norm,
        pearson(&norms, &conf).unwrap_or(f64::NAN),
        spearman(&norms, &conf).unwrap_or(f64::NAN),
    ))
}

/// Trained weights and the diagnostics stream.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ViTParams,
    pub history: Vec<EpochDiagnostics>,
}

/// Initial weights for a run, drawn from the run seed.
pub fn init_params(cfg: &RunConfig) -> Result<ViTParams> {
    ViTParams::init(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// SGD with momentum; weight decay is added to the gradient of decayed
/// tensors. `on_epoch` sees each epoch's diagnostics as they are produced.
pub fn train(
    cfg: &RunConfig,
    data: &PreparedData,
    mut params: ViTParams,
    mut on_epoch: impl FnMut(&EpochDiagnostics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_config(&cfg.model)?;
    let train = &data.train;
    if train.is_empty() {
        return Err(Error::TooSmall("empty training set".into()));
    }
    let opt = &cfg.optimizer;
    let mut velocity: Vec<Vec<f64>> = Vec::new();
    params.visit(|_, t| velocity.push(vec![0.0; t.len()]));
    let mut decays = Vec::new();
    params.visit(|name, _| decays.push(ViTParams::decays(&name)));

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let per = train.image_len();
    let mut history = Vec::with_capacity(cfg.total_epochs);

    for epoch in 0..cfg.total_epochs {
        let lr = opt.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                images.extend_from_slice(train.image(i));
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();

            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let patches = tape.constant(patchify(&cfg.model, &images)?);
            let f = record_forward(&mut tape, &cfg.model, &vars, patches)?;
            let loss = cfg.loss.record(&mut tape, f.calibrated, &labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step,
                });
            }
            loss_sum += value * idx.len() as f64;
            let out = tape.value(f.calibrated);
            hits += labels
                .iter()
                .enumerate()
                .filter(|&(r, &y)| argmax(out.row(r)) == y)
                .count();
            tape.backward(loss)?;

            let mut grads = Vec::with_capacity(velocity.len());
            vars.visit(|_, v| grads.push(tape.grad(*v).map(|g| g.data().to_vec())));
            let mut k = 0;
            params.visit_mut(|_, t| {
                let vel = &mut velocity[k];
                let g = grads[k].as_deref();
                let wd = if decays[k] { opt.weight_decay } else { 0.0 };
                for (j, w) in t.data_mut().iter_mut().enumerate() {
                    let gj = g.map_or(0.0, |g| g[j]) + wd * *w;
                    vel[j] = opt.momentum * vel[j] + gj;
                    *w -= lr * vel[j];
                }
                k += 1;
            });
        }

        let (val_acc, val_ece, s, mean_norm, r, rho) = epoch_stats(cfg, &params, &data.val)?;
        let diag = EpochDiagnostics {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_acc,
            val_ece,
            mean_s: s.mean,
            cv_s: s.cv,
            min_s: s.min,
            max_s: s.max,
            mean_cls_norm: mean_norm,
            pearson: r,
            spearman: rho,
        };
        on_epoch(&diag);
        history.push(diag);
    }
    Ok(TrainOutcome { params, history })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
