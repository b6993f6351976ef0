//! Tiny trainable denoiser: a fully-connected network over flattened grids
//! with sinusoidal time features and additive condition embeddings.
//!
//! Conditioning is classifier-free: during training each token is replaced
//! by the null condition with probability `cond_dropout`. Condition
//! embeddings start at zero, so an embedding the optimizer never touches
//! leaves the conditional path identical to the unconditional one.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GlodError, Result};
use crate::grid::Grid;
use crate::schedule::{add_noise, Schedule};

use super::{Condition, Denoiser};

pub const TIME_FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub cond_dropout: f64,
    pub seed: u64,
    /// Fraction of the dataset held out for the loss report.
    pub holdout_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            learning_rate: 2e-3,
            hidden: 128,
            cond_dropout: 0.1,
            seed: 0,
            holdout_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Held-out denoising MSE of the untrained network.
    pub initial_mse: f64,
    /// Held-out denoising MSE after training.
    pub final_mse: f64,
}

/// Two-hidden-layer MLP: ε̂ = W3·relu(W2·relu(W1·[x; τ(t)] + b1 + e_c) + b2) + b3.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) channels: usize,
    pub(crate) num_steps: usize,
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array2<f64>,
    pub(crate) b2: Array1<f64>,
    pub(crate) w3: Array2<f64>,
    pub(crate) b3: Array1<f64>,
    pub(crate) embeddings: BTreeMap<Condition, Array1<f64>>,
}

fn time_features(t: usize, num_steps: usize) -> Array1<f64> {
    let tau = t as f64 / num_steps as f64;
    let mut f = Array1::zeros(TIME_FEATURES);
    for k in 0..TIME_FEATURES / 2 {
        let freq = (1u64 << k) as f64 * std::f64::consts::PI;
        f[2 * k] = (freq * tau).sin();
        f[2 * k + 1] = (freq * tau).cos();
    }
    f
}

fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

impl ToyDenoiser {
    pub fn init(
        height: usize,
        width: usize,
        channels: usize,
        num_steps: usize,
        hidden: usize,
        conditions: &[Condition],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let din = height * width * channels + TIME_FEATURES;
        let dout = height * width * channels;
        let he = |fan_in: usize, rng: &mut ChaCha8Rng| (2.0 / fan_in as f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
        let w1 = Array2::from_shape_simple_fn((hidden, din), || he(din, rng));
        let w2 = Array2::from_shape_simple_fn((hidden, hidden), || he(hidden, rng));
        let w3 = Array2::from_shape_simple_fn((dout, hidden), || he(hidden, rng));
        let mut embeddings = BTreeMap::new();
        for c in conditions {
            if !c.is_null() {
                // zero-init: unused embeddings keep cond == uncond exactly
                embeddings.insert(c.clone(), Array1::zeros(hidden));
            }
        }
        ToyDenoiser {
            height,
            width,
            channels,
            num_steps,
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(hidden),
            w3,
            b3: Array1::zeros(dout),
            embeddings,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn input_vec(&self, x: &Grid, t: usize) -> Array1<f64> {
        let d = x.len();
        let mut v = Array1::zeros(d + TIME_FEATURES);
        for (i, val) in x.iter().enumerate() {
            v[i] = *val;
        }
        let tf = time_features(t, self.num_steps);
        for k in 0..TIME_FEATURES {
            v[d + k] = tf[k];
        }
        v
    }

    fn embedding(&self, c: &Condition) -> Result<Array1<f64>> {
        match c {
            Condition::Null => Ok(Array1::zeros(self.b1.len())),
            other => self
                .embeddings
                .get(other)
                .cloned()
                .ok_or_else(|| GlodError::UnknownCondition(other.to_string())),
        }
    }

    fn forward(&self, x: &Grid, t: usize, c: &Condition) -> Result<ForwardPass> {
        let input = self.input_vec(x, t);
        let e = self.embedding(c)?;
        let z1 = self.w1.dot(&input) + &self.b1 + &e;
        let h1 = relu(&z1);
        let z2 = self.w2.dot(&h1) + &self.b2;
        let h2 = relu(&z2);
        let out = self.w3.dot(&h2) + &self.b3;
        Ok(ForwardPass {
            input,
            z1,
            h1,
            z2,
            h2,
            out,
        })
    }

    /// Mean squared denoising error over a dataset split.
    pub fn denoising_mse(
        &self,
        data: &[(Grid, Condition)],
        schedule: &Schedule,
        seed: u64,
    ) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        let mut count = 0usize;
        for (x0, c) in data {
            for _ in 0..4 {
                let t = rng.random_range(1..=schedule.num_steps);
                let noise = crate::grid::randn(self.height, self.width, self.channels, &mut rng);
                let xt = add_noise(x0, t, &noise, schedule)?;
                let pred = self.forward(&xt, t, c)?.out;
                for (i, n) in noise.iter().enumerate() {
                    let d = pred[i] - n;
                    total += d * d;
                }
                count += noise.len();
            }
        }
        Ok(total / count as f64)
    }
}

struct ForwardPass {
    input: Array1<f64>,
    z1: Array1<f64>,
    h1: Array1<f64>,
    z2: Array1<f64>,
    h2: Array1<f64>,
    out: Array1<f64>,
}

impl Denoiser for ToyDenoiser {
    fn predict(&self, x_t: &Grid, t: usize, c: &Condition) -> Result<Grid> {
        if x_t.dim() != (self.height, self.width, self.channels) {
            let (h, w, ch) = x_t.dim();
            return Err(GlodError::ShapeMismatch {
                expected: vec![self.height, self.width, self.channels],
                got: vec![h, w, ch],
            });
        }
        let out = self.forward(x_t, t, c)?.out;
        Ok(Grid::from_shape_vec((self.height, self.width, self.channels), out.to_vec())
            .expect("output length matches grid shape"))
    }

    fn conditions(&self) -> Vec<Condition> {
        let mut v: Vec<Condition> = self.embeddings.keys().cloned().collect();
        v.push(Condition::Null);
        v
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            **p -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

/// Train a [`ToyDenoiser`] on (x0, condition) pairs with the standard noise
/// prediction objective.
pub fn train_toy(
    dataset: &[(Grid, Condition)],
    schedule: &Schedule,
    cfg: &TrainConfig,
) -> Result<(ToyDenoiser, TrainReport)> {
    if dataset.is_empty() {
        return Err(GlodError::invalid("training dataset is empty"));
    }
    let (h, w, c) = dataset[0].0.dim();
    for (g, _) in dataset {
        if g.dim() != (h, w, c) {
            return Err(GlodError::invalid("dataset grids must share one shape"));
        }
    }
    let mut conditions: Vec<Condition> = dataset.iter().map(|(_, c)| c.clone()).collect();
    conditions.sort();
    conditions.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ToyDenoiser::init(h, w, c, schedule.num_steps, cfg.hidden, &conditions, &mut rng);

    // deterministic held-out split
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_hold = ((dataset.len() as f64 * cfg.holdout_frac).round() as usize)
        .min(dataset.len().saturating_sub(1));
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train: Vec<&(Grid, Condition)> = train_idx.iter().map(|&i| &dataset[i]).collect();
    let holdout: Vec<(Grid, Condition)> = if hold_idx.is_empty() {
        dataset.to_vec()
    } else {
        hold_idx.iter().map(|&i| dataset[i].clone()).collect()
    };

    let initial_mse = net.denoising_mse(&holdout, schedule, cfg.seed ^ 0x5eed)?;

    let hidden = cfg.hidden;
    let din = h * w * c + TIME_FEATURES;
    let dout = h * w * c;
    let n_embed = net.embeddings.len();
    let total = hidden * din + hidden + hidden * hidden + hidden + dout * hidden + dout + n_embed * hidden;
    let mut opt = Adam::new(total);

    for _ in 0..cfg.steps {
        // accumulate gradients over the batch
        let mut g_w1 = Array2::<f64>::zeros((hidden, din));
        let mut g_b1 = Array1::<f64>::zeros(hidden);
        let mut g_w2 = Array2::<f64>::zeros((hidden, hidden));
        let mut g_b2 = Array1::<f64>::zeros(hidden);
        let mut g_w3 = Array2::<f64>::zeros((dout, hidden));
        let mut g_b3 = Array1::<f64>::zeros(dout);
        let mut g_emb: BTreeMap<Condition, Array1<f64>> = net
            .embeddings
            .keys()
            .map(|k| (k.clone(), Array1::zeros(hidden)))
            .collect();

        for _ in 0..cfg.batch_size {
            let (x0, cond) = train[rng.random_range(0..train.len())];
            let cond = if !cond.is_null() && rng.random::<f64>() < cfg.cond_dropout {
                Condition::Null
            } else {
                cond.clone()
            };
            let t = rng.random_range(1..=schedule.num_steps);
            let noise = crate::grid::randn(h, w, c, &mut rng);
            let xt = add_noise(x0, t, &noise, schedule)?;
            let fwd = net.forward(&xt, t, &cond)?;

            // d(mse)/d(out) with mse averaged over output dims and batch
            let scale = 2.0 / (dout * cfg.batch_size) as f64;
            let mut delta_out = Array1::zeros(dout);
            for (i, n) in noise.iter().enumerate() {
                delta_out[i] = scale * (fwd.out[i] - n);
            }
            g_w3 += &outer(&delta_out, &fwd.h2);
            g_b3 += &delta_out;
            let mut delta2 = net.w3.t().dot(&delta_out);
            for i in 0..hidden {
                if fwd.z2[i] <= 0.0 {
                    delta2[i] = 0.0;
                }
            }
            g_w2 += &outer(&delta2, &fwd.h1);
            g_b2 += &delta2;
            let mut delta1 = net.w2.t().dot(&delta2);
            for i in 0..hidden {
                if fwd.z1[i] <= 0.0 {
                    delta1[i] = 0.0;
                }
            }
            g_w1 += &outer(&delta1, &fwd.input);
            g_b1 += &delta1;
            if let Some(ge) = g_emb.get_mut(&cond) {
                *ge += &delta1;
            }
        }

        let mut grads: Vec<f64> = Vec::with_capacity(total);
        grads.extend(g_w1.iter());
        grads.extend(g_b1.iter());
        grads.extend(g_w2.iter());
        grads.extend(g_b2.iter());
        grads.extend(g_w3.iter());
        grads.extend(g_b3.iter());
        for ge in g_emb.values() {
            grads.extend(ge.iter());
        }
        let mut params: Vec<&mut f64> = Vec::with_capacity(total);
        params.extend(net.w1.iter_mut());
        params.extend(net.b1.iter_mut());
        params.extend(net.w2.iter_mut());
        params.extend(net.b2.iter_mut());
        params.extend(net.w3.iter_mut());
        params.extend(net.b3.iter_mut());
        for e in net.embeddings.values_mut() {
            params.extend(e.iter_mut());
        }
        opt.step(&mut params, &grads, cfg.learning_rate);
    }

    let final_mse = net.denoising_mse(&holdout, schedule, cfg.seed ^ 0x5eed)?;
    Ok((net, TrainReport {
        initial_mse,
        final_mse,
    }))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}
