//! Recurrent demand forecaster.
//!
//! A single-layer tanh recurrent cell reads the `H + 1` normalized history
//! rows of a [`ForecastWindow`] and a linear head maps the last hidden state
//! to the next hour's normalized demand:
//!
//! ```text
//! h_j = tanh(x_j·W_in + h_{j-1}·W_rec + b),   h_{-1} = 0
//! ŷ   = h_H·W_out + b_out
//! ```
//!
//! Training minimizes the mean squared error in normalized units with plain
//! gradient descent and global-norm clipping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{ForecastWindow, NormalizedWindow, Normalizer};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gridgauntlet-rnn";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trainable weights of the recurrent forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    w_in: Tensor,
    w_rec: Tensor,
    b_hidden: Tensor,
    w_out: Tensor,
    b_out: Tensor,
}

impl ModelParams {
    pub const NAMES: [&'static str; 5] = ["w_in", "w_rec", "b_hidden", "w_out", "b_out"];

    /// Assembles parameters, checking that shapes agree:
    /// `w_in: d×h`, `w_rec: h×h`, `b_hidden: 1×h`, `w_out: h×1`, `b_out: 1×1`.
    pub fn from_tensors(
        w_in: Tensor,
        w_rec: Tensor,
        b_hidden: Tensor,
        w_out: Tensor,
        b_out: Tensor,
    ) -> Result<Self> {
        let (d, h) = match w_in.shape() {
            &[d, h] if d > 0 && h > 0 => (d, h),
            other => return Err(Error::Shape(format!("w_in must be d×h, got {other:?}"))),
        };
        let expected: [(&str, &Tensor, [usize; 2]); 4] = [
            ("w_rec", &w_rec, [h, h]),
            ("b_hidden", &b_hidden, [1, h]),
            ("w_out", &w_out, [h, 1]),
            ("b_out", &b_out, [1, 1]),
        ];
        for (name, t, shape) in expected {
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {shape:?} for input dim {d} and hidden size {h}",
                    t.shape()
                )));
            }
        }
        let params = Self {
            w_in,
            w_rec,
            b_hidden,
            w_out,
            b_out,
        };
        if params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric("model parameters contain non-finite values".into()));
        }
        Ok(params)
    }

    pub fn zeros(input_dim: usize, hidden_size: usize) -> Self {
        Self {
            w_in: Tensor::zeros(&[input_dim, hidden_size]),
            w_rec: Tensor::zeros(&[hidden_size, hidden_size]),
            b_hidden: Tensor::zeros(&[1, hidden_size]),
            w_out: Tensor::zeros(&[hidden_size, 1]),
            b_out: Tensor::zeros(&[1, 1]),
        }
    }

    /// Uniform fan-in initialization; biases start at zero.
    pub fn init(input_dim: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let values = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::matrix(rows, cols, values).expect("shape matches value count")
        };
        let w_in = uniform(input_dim, hidden_size, input_dim);
        let w_rec = uniform(hidden_size, hidden_size, hidden_size);
        let w_out = uniform(hidden_size, 1, hidden_size);
        Self {
            w_in,
            w_rec,
            b_hidden: Tensor::zeros(&[1, hidden_size]),
            w_out,
            b_out: Tensor::zeros(&[1, 1]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_in.shape()[1]
    }

    /// Tensors in [`Self::NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.w_in, &self.w_rec, &self.b_hidden, &self.w_out, &self.b_out]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.w_in,
            &mut self.w_rec,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    fn record(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ParamVars {
            w_in: put(&self.w_in),
            w_rec: put(&self.w_rec),
            b_hidden: put(&self.b_hidden),
            w_out: put(&self.w_out),
            b_out: put(&self.b_out),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ParamVars {
    w_in: Var,
    w_rec: Var,
    b_hidden: Var,
    w_out: Var,
    b_out: Var,
}

impl ParamVars {
    fn as_array(&self) -> [Var; 5] {
        [self.w_in, self.w_rec, self.b_hidden, self.w_out, self.b_out]
    }
}

/// Records the recurrent pass over `steps` (each `batch × d_in`) and returns
/// the `batch × 1` normalized predictions.
fn forward(tape: &mut Tape, p: &ParamVars, steps: &[Var], batch: usize) -> Result<Var> {
    if steps.is_empty() {
        return Err(Error::Size("forecast window has no history rows".into()));
    }
    let ones = tape.constant(Tensor::ones(&[batch, 1]));
    let bias = tape.matmul(ones, p.b_hidden)?;
    let mut hidden: Option<Var> = None;
    for &x in steps {
        let mut pre = tape.matmul(x, p.w_in)?;
        if let Some(h) = hidden {
            let rec = tape.matmul(h, p.w_rec)?;
            pre = tape.add(pre, rec)?;
        }
        pre = tape.add(pre, bias)?;
        hidden = Some(tape.tanh(pre)?);
    }
    let head = tape.matmul(hidden.expect("at least one step"), p.w_out)?;
    let out_bias = tape.matmul(ones, p.b_out)?;
    tape.add(head, out_bias)
}

/// Packs normalized windows into per-step `batch × d_in` tensors.
fn pack_steps(batch: &[&NormalizedWindow]) -> Result<Vec<Tensor>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Size("empty batch".into()))?;
    let steps = first.rows.len();
    let d_in = first.rows.first().map_or(0, Vec::len);
    (0..steps)
        .map(|j| {
            let mut values = Vec::with_capacity(batch.len() * d_in);
            for w in batch {
                let row = w.rows.get(j).filter(|r| r.len() == d_in).ok_or_else(|| {
                    Error::Shape(format!(
                        "batch mixes window shapes: expected {steps}×{d_in}, got {}×{}",
                        w.rows.len(),
                        w.rows.get(j).map_or(0, Vec::len)
                    ))
                })?;
                values.extend_from_slice(row);
            }
            Tensor::matrix(batch.len(), d_in, values)
        })
        .collect()
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Windows per update; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub hidden_size: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: None,
            seed: 0,
            hidden_size: 32,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("train.{name} must be positive")))
            }
        };
        positive("epochs", self.epochs > 0)?;
        positive("learning_rate", self.learning_rate.is_finite() && self.learning_rate > 0.0)?;
        positive("batch_size", self.batch_size.is_none_or(|b| b > 0))?;
        positive("hidden_size", self.hidden_size > 0)?;
        positive("clip_norm", self.clip_norm.is_finite() && self.clip_norm > 0.0)
    }
}

/// Trained parameters together with the normalization they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    params: ModelParams,
    normalizer: Normalizer,
    history_hours: usize,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Forecaster,
    /// Mean training MSE (normalized units) of each epoch.
    pub loss_history: Vec<f64>,
}

/// Loss value with gradients for the parameters and for every input row.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    /// Same shapes as the model parameters.
    pub params: ModelParams,
    /// `inputs[b][j][k]`: derivative with respect to feature `k` of history
    /// row `j` in window `b`.
    pub inputs: Vec<Vec<Vec<f64>>>,
}

impl Forecaster {
    pub fn new(params: ModelParams, normalizer: Normalizer, history_hours: usize) -> Result<Self> {
        if params.input_dim() != normalizer.input_dim() {
            return Err(Error::Shape(format!(
                "model input dim {} does not match normalizer width {}",
                params.input_dim(),
                normalizer.input_dim()
            )));
        }
        if history_hours == 0 {
            return Err(Error::Size("history length H must be at least 1".into()));
        }
        Ok(Self {
            params,
            normalizer,
            history_hours,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// `H`; windows carry `H + 1` history rows.
    pub fn history_hours(&self) -> usize {
        self.history_hours
    }

    fn check_window(&self, window: &ForecastWindow) -> Result<()> {
        if window.history_len() != self.history_hours + 1 {
            return Err(Error::Shape(format!(
                "window has {} history rows, model expects {}",
                window.history_len(),
                self.history_hours + 1
            )));
        }
        Ok(())
    }

    /// Forecast for the window's target hour, in MW.
    pub fn predict(&self, window: &ForecastWindow) -> Result<f64> {
        self.check_window(window)?;
        let normalized = self.normalizer.apply(window)?;
        let z = self.predict_normalized(&normalized.rows)?;
        let mw = self.normalizer.invert_demand(z);
        if !mw.is_finite() {
            return Err(Error::Numeric("forecast is not finite".into()));
        }
        Ok(mw)
    }

    /// Forecasts for many windows in one batched pass. Each value is
    /// bit-identical to [`Self::predict`] on the same window.
    pub fn predict_batch(&self, windows: &[ForecastWindow]) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let normalized = windows
            .iter()
            .map(|w| {
                self.check_window(w)?;
                self.normalizer.apply(w)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&NormalizedWindow> = normalized.iter().collect();
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape, false);
        let steps: Vec<Var> = pack_steps(&refs)?
            .into_iter()
            .map(|t| tape.constant(t))
            .collect();
        let out = forward(&mut tape, &p, &steps, windows.len())?;
        Ok(tape
            .value(out)
            .values()
            .iter()
            .map(|z| self.normalizer.invert_demand(*z))
            .collect())
    }

    /// Normalized prediction for one window given as normalized rows.
    pub fn predict_normalized(&self, rows: &[Vec<f64>]) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape, false);
        let steps = self.record_rows(&mut tape, rows, false)?;
        let out = forward(&mut tape, &p, &steps, 1)?;
        Ok(tape.value(out).item())
    }

    fn record_rows(&self, tape: &mut Tape, rows: &[Vec<f64>], trainable: bool) -> Result<Vec<Var>> {
        rows.iter()
            .map(|row| {
                let t = Tensor::matrix(1, row.len(), row.clone())?;
                Ok(if trainable { tape.leaf(t) } else { tape.constant(t) })
            })
            .collect()
    }

    /// Normalized forecast for `rows` together with the gradient of its
    /// absolute percentage error against `actual_mw`, for every row.
    pub fn mape_input_gradient(
        &self,
        rows: &[Vec<f64>],
        actual_mw: f64,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        if actual_mw == 0.0 {
            return Err(Error::Value("MAPE is undefined for zero actual demand".into()));
        }
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape, false);
        let steps = self.record_rows(&mut tape, rows, true)?;
        let pred = forward(&mut tape, &p, &steps, 1)?;
        // pred_mw − actual = σ·(ẑ − z_actual)
        let target = tape.constant(Tensor::scalar(self.normalizer.demand.normalize(actual_mw)));
        let err = tape.sub(pred, target)?;
        let err = tape.abs(err)?;
        let scale = 100.0 * self.normalizer.demand.std / actual_mw.abs();
        let loss = tape.scale(err, scale)?;
        let loss = tape.reduce_mean(loss)?;
        let z_pred = tape.value(pred).item();
        let mut grads = tape.backward(loss)?;
        let rows = steps
            .iter()
            .map(|v| grads.take(*v).expect("step is a leaf").into_values())
            .collect();
        Ok((z_pred, rows))
    }

    /// Mean squared error over `batch` in normalized units, with gradients
    /// for parameters and inputs.
    pub fn mse_gradients(&self, batch: &[NormalizedWindow]) -> Result<LossGradients> {
        let refs: Vec<&NormalizedWindow> = batch.iter().collect();
        mse_gradients(&self.params, &refs, true)
    }

    /// Mean squared error over `batch` in normalized units.
    pub fn mse_loss(&self, batch: &[NormalizedWindow]) -> Result<f64> {
        let refs: Vec<&NormalizedWindow> = batch.iter().collect();
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape, false);
        let loss = record_mse(&mut tape, &p, &refs, false)?.0;
        Ok(tape.value(loss).item())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = self.to_json()?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let dump = |t: &Tensor| TensorDump {
            shape: t.shape().to_vec(),
            values: t.values().to_vec(),
        };
        let [w_in, w_rec, b_hidden, w_out, b_out] = self.params.tensors().map(dump);
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            history_hours: self.history_hours,
            input_dim: self.params.input_dim(),
            hidden_size: self.params.hidden_size(),
            normalizer: self.normalizer.clone(),
            params: ParamsDump {
                w_in,
                w_rec,
                b_hidden,
                w_out,
                b_out,
            },
        };
        let mut json = serde_json::to_string_pretty(&file)?;
        json.push('\n');
        Ok(json)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`, expected `{CHECKPOINT_FORMAT}`",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}, expected {CHECKPOINT_VERSION}",
                file.version
            )));
        }
        let load = |d: TensorDump| Tensor::new(d.shape, d.values);
        let p = file.params;
        let params = ModelParams::from_tensors(
            load(p.w_in)?,
            load(p.w_rec)?,
            load(p.b_hidden)?,
            load(p.w_out)?,
            load(p.b_out)?,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.input_dim() != file.input_dim || params.hidden_size() != file.hidden_size {
            return Err(Error::Checkpoint(format!(
                "declared dims {}×{} disagree with stored weights {}×{}",
                file.input_dim,
                file.hidden_size,
                params.input_dim(),
                params.hidden_size()
            )));
        }
        Self::new(params, file.normalizer, file.history_hours)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    history_hours: usize,
    input_dim: usize,
    hidden_size: usize,
    normalizer: Normalizer,
    params: ParamsDump,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDump {
    w_in: TensorDump,
    w_rec: TensorDump,
    b_hidden: TensorDump,
    w_out: TensorDump,
    b_out: TensorDump,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDump {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn record_mse(
    tape: &mut Tape,
    p: &ParamVars,
    batch: &[&NormalizedWindow],
    trainable_inputs: bool,
) -> Result<(Var, Vec<Var>)> {
    let steps: Vec<Var> = pack_steps(batch)?
        .into_iter()
        .map(|t| {
            if trainable_inputs {
                tape.leaf(t)
            } else {
                tape.constant(t)
            }
        })
        .collect();
    let pred = forward(tape, p, &steps, batch.len())?;
    let targets = Tensor::matrix(batch.len(), 1, batch.iter().map(|w| w.target).collect())?;
    let targets = tape.constant(targets);
    let err = tape.sub(pred, targets)?;
    let sq = tape.mul(err, err)?;
    Ok((tape.reduce_mean(sq)?, steps))
}

fn mse_gradients(
    params: &ModelParams,
    batch: &[&NormalizedWindow],
    with_inputs: bool,
) -> Result<LossGradients> {
    let mut tape = Tape::new();
    let p = params.record(&mut tape, true);
    let (loss, steps) = record_mse(&mut tape, &p, batch, with_inputs)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let [w_in, w_rec, b_hidden, w_out, b_out] =
        p.as_array().map(|v| grads.take(v).expect("parameter is a leaf"));
    let param_grads = ModelParams {
        w_in,
        w_rec,
        b_hidden,
        w_out,
        b_out,
    };
    let mut inputs = Vec::new();
    if with_inputs {
        let d_in = params.input_dim();
        inputs = vec![Vec::with_capacity(steps.len()); batch.len()];
        for v in &steps {
            let g = grads.take(*v).expect("step is a leaf");
            for (b, chunk) in g.values().chunks(d_in).enumerate() {
                inputs[b].push(chunk.to_vec());
            }
        }
    }
    Ok(LossGradients {
        loss: value,
        params: param_grads,
        inputs,
    })
}

/// Fits a normalizer on `windows` and trains the recurrent model by
/// minimizing MSE.
pub fn train(windows: &[ForecastWindow], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let first = windows
        .first()
        .ok_or_else(|| Error::Size("training needs at least one window".into()))?;
    let history_hours = first.history_len() - 1;
    let normalizer = Normalizer::fit(windows)?;
    let data = windows
        .iter()
        .map(|w| normalizer.apply(w))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(normalizer.input_dim(), config.hidden_size, &mut rng);
    let n = data.len();
    let batch_size = config.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&NormalizedWindow> = chunk.iter().map(|&i| &data[i]).collect();
            let step = mse_gradients(&params, &batch, false).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
            if !step.loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "loss is not finite".into(),
                });
            }
            apply_update(&mut params, &step.params, config.learning_rate, config.clip_norm);
            epoch_loss += step.loss * chunk.len() as f64;
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::Training {
                epoch,
                message: "parameters diverged".into(),
            });
        }
        log::debug!("epoch {epoch}: mse {mean:.6}");
        loss_history.push(mean);
    }

    Ok(TrainOutcome {
        model: Forecaster::new(params, normalizer, history_hours)?,
        loss_history,
    })
}

fn apply_update(params: &mut ModelParams, grads: &ModelParams, lr: f64, clip: f64) {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.values())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    let factor = if norm > clip { clip / norm } else { 1.0 };
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (w, dw) in p.values_mut().iter_mut().zip(g.values()) {
            *w -= lr * factor * dw;
        }
    }
}

/// Squared error `(pred − actual)²`.
pub fn mse(pred: f64, actual: f64) -> f64 {
    (pred - actual).powi(2)
}

/// Absolute percentage error `100·|pred − actual| / |actual|`.
pub fn mape(pred: f64, actual: f64) -> Result<f64> {
    if actual == 0.0 {
        return Err(Error::Value("MAPE is undefined for zero actual demand".into()));
    }
    Ok(100.0 * (pred - actual).abs() / actual.abs())
}

/// Mean of [`mape`] over paired series.
pub fn mean_mape(preds: &[f64], actuals: &[f64]) -> Result<f64> {
    if preds.len() != actuals.len() || preds.is_empty() {
        return Err(Error::Size(format!(
            "mean_mape needs equal nonempty series, got {} and {}",
            preds.len(),
            actuals.len()
        )));
    }
    let total = preds
        .iter()
        .zip(actuals)
        .map(|(p, a)| mape(*p, *a))
        .sum::<Result<f64>>()?;
    Ok(total / preds.len() as f64)
}
