//! Desk-scale training loop with the two-mode protocol.
//!
//! Mode `d` trains on the dynamic loss alone; mode `dc` runs identically up
//! to the contact activation epoch and then adds the contact term, with the
//! contact weight either given explicitly or auto-scaled so both terms start
//! at the same magnitude on the training set. The optimizer is Adam with
//! decoupled-style weight decay folded into each parameter's gradient, plus
//! per-batch gradient-norm clipping and a step learning-rate schedule.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccd::{CcdConfig, ContactScene};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gnn::grad::{loss_gradient, LossMode};
use crate::gnn::{predict_accelerations, predicted_trajectory, GnnConfig, GnnParams};
use crate::graph::GraphSample;
use crate::loss::{contact_loss, dynamic_loss, position_loss, total_loss, LossWeights};
use crate::mesh::TriMesh;

type V3 = nalgebra::Vector3<f64>;

/// Floor for the measured contact loss in the auto-scale quotient.
pub const WC_EPS: f64 = 1e-12;

/// Decorrelates the batch-shuffling stream from parameter initialization,
/// which consumes the seed directly.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Dynamic loss only.
    D,
    /// Dynamic loss, then dynamic + contact from the activation epoch on.
    Dc,
}

/// Contact weight policy: a number, or "auto" to match the dynamic scale at
/// activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WcPolicy {
    Auto,
    #[serde(untagged)]
    Explicit(f64),
}

impl Default for WcPolicy {
    fn default() -> Self {
        WcPolicy::Auto
    }
}

fn default_batch_size() -> usize {
    8
}
fn default_lr() -> f64 {
    3e-3
}
fn default_clip() -> f64 {
    100.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Step schedule: from each listed epoch on, use the listed rate.
    #[serde(default)]
    pub lr_schedule: Vec<(usize, f64)>,
    #[serde(default)]
    pub weight_decay: f64,
    /// Per-batch gradient-norm clip threshold.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    pub mode: TrainMode,
    #[serde(default)]
    pub contact_activation_epoch: usize,
    #[serde(default)]
    pub w_c: WcPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Keep a parameter snapshot every this many epochs (the final
    /// parameters are always returned).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        let mut prev: Option<usize> = None;
        for &(epoch, rate) in &self.lr_schedule {
            if let Some(p) = prev {
                if epoch <= p {
                    return bad(format!(
                        "lr_schedule epochs must be strictly increasing ({p} then {epoch})"
                    ));
                }
            }
            prev = Some(epoch);
            if !(rate.is_finite() && rate > 0.0) {
                return bad(format!("lr_schedule rate at epoch {epoch} must be positive"));
            }
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.mode == TrainMode::Dc && self.contact_activation_epoch >= self.epochs {
            return bad(format!(
                "contact_activation_epoch {} must be below epochs {}",
                self.contact_activation_epoch, self.epochs
            ));
        }
        if let WcPolicy::Explicit(w) = self.w_c {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("explicit w_c must be nonnegative, got {w}"));
            }
        }
        if let Some(every) = self.checkpoint_every {
            if every == 0 {
                return bad("checkpoint_every must be positive when set".into());
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.learning_rate;
        for &(e, r) in &self.lr_schedule {
            if epoch >= e {
                lr = r;
            }
        }
        lr
    }
}

/// Loss summary of one split at fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitLoss {
    pub total: f64,
    pub dynamic: f64,
    pub contact: f64,
    pub position: f64,
}

impl SplitLoss {
    pub fn zero() -> Self {
        SplitLoss {
            total: 0.0,
            dynamic: 0.0,
            contact: 0.0,
            position: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Active contact weight (0 before activation and in `d` mode).
    pub w_c: f64,
    pub train: SplitLoss,
    pub val: SplitLoss,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub history: Vec<EpochLog>,
    /// Parameters after the final epoch.
    pub params: GnnParams,
    /// (epoch, parameters) snapshots per `checkpoint_every`.
    pub snapshots: Vec<(usize, GnnParams)>,
    /// Contact weight in force at the end (0 when contact never activated).
    pub w_c: f64,
}

/// Evaluates one split with frozen parameters. The contact term is computed
/// only in `DynamicContact` mode; an empty split reports zeros.
pub fn evaluate_split(
    params: &GnnParams,
    samples: &[GraphSample],
    mesh: &TriMesh,
    l_c: f64,
    ccd_cfg: &CcdConfig,
    weights: &LossWeights,
    mode: LossMode,
) -> Result<SplitLoss> {
    if samples.is_empty() {
        return Ok(SplitLoss::zero());
    }
    let with_contact = mode == LossMode::DynamicContact;
    let mut preds = Vec::with_capacity(samples.len());
    let mut targs = Vec::with_capacity(samples.len());
    let mut pred_dr = Vec::with_capacity(samples.len());
    let mut true_dr = Vec::with_capacity(samples.len());
    let mut fields = Vec::new();
    for sample in samples {
        let targets = sample.targets.as_ref().ok_or_else(|| {
            Error::InvalidConfig("evaluation sample lacks target accelerations".into())
        })?;
        let y_hat = predict_accelerations(sample, params)?;
        let dt = sample.dt();
        let half_dt2 = 0.5 * dt * dt;
        let disp = |y: &V3, i: usize| sample.nodes[i].v * dt + *y * half_dt2;
        pred_dr.push(y_hat.iter().enumerate().map(|(i, y)| disp(y, i)).collect::<Vec<_>>());
        true_dr.push(targets.iter().enumerate().map(|(i, y)| disp(y, i)).collect::<Vec<_>>());
        if with_contact {
            let traj = predicted_trajectory(&sample.nodes, &y_hat, dt)?;
            let scene = ContactScene::self_contact(traj, mesh.triangles.clone())?;
            fields.push(crate::ccd::detect_contacts(&scene, ccd_cfg)?);
        }
        preds.push(y_hat);
        targs.push(targets.clone());
    }
    let l_d = dynamic_loss(&preds, &targs)?;
    let l_con = if with_contact {
        contact_loss(&fields, l_c)?
    } else {
        0.0
    };
    let l_p = position_loss(&pred_dr, &true_dr, l_c)?;
    Ok(SplitLoss {
        total: total_loss(l_d, l_con, weights),
        dynamic: l_d,
        contact: l_con,
        position: l_p,
    })
}

/// Adam with bias correction; weight decay is added to each raw gradient
/// inside the step (after any clipping by the caller), PyTorch style.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamState {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            let g = grad[i] + self.weight_decay * theta[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn clip_grad_norm(g: &mut [f64], max_norm: f64) {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for x in g.iter_mut() {
            *x *= s;
        }
    }
}

fn rewrap_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::NonFiniteLoss { batch, .. } => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

pub fn train(config: &TrainConfig, dataset: &Dataset, gnn: GnnConfig) -> Result<TrainOutput> {
    config.validate()?;
    gnn.validate()?;
    let expected = dataset.meta.n_g + 2;
    if gnn.global_feat_dim != expected {
        return Err(Error::InvalidConfig(format!(
            "network expects {} graph features but the dataset provides {expected}",
            gnn.global_feat_dim
        )));
    }
    let train_samples: Vec<GraphSample> =
        dataset.split_samples("train")?.into_iter().cloned().collect();
    if train_samples.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let val_samples: Vec<GraphSample> =
        dataset.split_samples("val")?.into_iter().cloned().collect();
    let mesh = &dataset.mesh;
    let l_c = dataset.meta.l_c;
    let ccd_cfg = CcdConfig::default();

    let mut params = GnnParams::init(gnn, config.seed)?;
    let mut adam = AdamState::new(params.num_params(), config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);

    let mut active_w_c = 0.0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::new();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let contact_now =
            config.mode == TrainMode::Dc && epoch >= config.contact_activation_epoch;
        if contact_now && epoch == config.contact_activation_epoch {
            active_w_c = match config.w_c {
                WcPolicy::Explicit(w) => w,
                WcPolicy::Auto => {
                    // Scale so both terms enter equally: measured on the
                    // training set with the parameters entering this epoch.
                    let probe = LossWeights { w_d: 1.0, w_c: 1.0 };
                    let at = evaluate_split(
                        &params,
                        &train_samples,
                        mesh,
                        l_c,
                        &ccd_cfg,
                        &probe,
                        LossMode::DynamicContact,
                    )?;
                    at.dynamic / at.contact.max(WC_EPS)
                }
            };
        }
        let (mode, weights) = if contact_now {
            (
                LossMode::DynamicContact,
                LossWeights {
                    w_d: 1.0,
                    w_c: active_w_c,
                },
            )
        } else {
            (LossMode::Dynamic, LossWeights { w_d: 1.0, w_c: 0.0 })
        };

        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for (batch_id, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<GraphSample> =
                chunk.iter().map(|&i| train_samples[i].clone()).collect();
            let lg = loss_gradient(
                &params, &batch, mesh, l_c, &ccd_cfg, &weights, mode, batch_id,
            )
            .map_err(|e| rewrap_epoch(e, epoch))?;
            let mut g = lg.grads.flatten();
            clip_grad_norm(&mut g, config.grad_clip);
            let mut theta = params.flatten();
            adam.step(&mut theta, &g, lr);
            params = GnnParams::from_flat(gnn, &theta)?;
        }

        let train_log =
            evaluate_split(&params, &train_samples, mesh, l_c, &ccd_cfg, &weights, mode)?;
        let val_log =
            evaluate_split(&params, &val_samples, mesh, l_c, &ccd_cfg, &weights, mode)?;
        history.push(EpochLog {
            epoch,
            lr,
            w_c: if contact_now { active_w_c } else { 0.0 },
            train: train_log,
            val: val_log,
        });
        if let Some(every) = config.checkpoint_every {
            if (epoch + 1) % every == 0 {
                snapshots.push((epoch, params.clone()));
            }
        }
    }

    Ok(TrainOutput {
        history,
        params,
        snapshots,
        w_c: active_w_c,
    })
}
