//! Desk-scale attribute classifier: a linear (or one-hidden-layer) head over
//! ingested feature vectors, with object conditioning through a learned
//! embedding concatenated onto the features. Gradients are analytic and the
//! optimizer is Adam, so training is deterministic given the seed and runs in
//! seconds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::feasible::FeasibleSets;
use crate::loss::{self, LossConfig, LossMode};
use crate::rng;
use crate::vlm::PresenceDistribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate the full-scale recipe reserves for pre-trained backbone
    /// parameters. The desk-scale model has no pre-trained tier, so this is
    /// carried in configs but unused: every parameter is newly added.
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Width of the learned object embedding; 0 disables object conditioning.
    pub object_embed_dim: usize,
    /// Hidden layer width; 0 selects the plain linear model.
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 1e-5,
            lr_head: 1e-3,
            epochs: 50,
            batch_size: 64,
            seed: 7,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            object_embed_dim: 8,
            hidden_dim: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_head > 0.0 && self.lr_head.is_finite()) {
            return Err(Error::Config(format!("lr_head must be > 0, got {}", self.lr_head)));
        }
        if !(self.lr_backbone > 0.0 && self.lr_backbone.is_finite()) {
            return Err(Error::Config(format!(
                "lr_backbone must be > 0, got {}",
                self.lr_backbone
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// All trainable tensors, stored row-major in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_attributes: usize,
    pub feature_dim: usize,
    pub object_embed_dim: usize,
    pub hidden_dim: usize,
    pub objects: Vec<String>,
    /// n_objects x object_embed_dim.
    pub embed: Vec<f64>,
    /// hidden_dim x in_dim; empty for the linear model.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// n_attributes x mid_dim.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ModelParams {
    pub fn in_dim(&self) -> usize {
        self.feature_dim + self.object_embed_dim
    }

    pub fn mid_dim(&self) -> usize {
        if self.hidden_dim == 0 {
            self.in_dim()
        } else {
            self.hidden_dim
        }
    }

    pub fn object_index(&self) -> HashMap<String, usize> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.clone(), i))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.embed.len() + self.w1.len() + self.b1.len() + self.w.len() + self.b.len()
    }
}

/// Seeded initialization: weights uniform in +/- 1/sqrt(fan_in), biases zero.
pub fn init_params(train: &Dataset, cfg: &TrainConfig) -> ModelParams {
    let n_attributes = train.n_attributes();
    let feature_dim = train.feature_dim();
    let in_dim = feature_dim + cfg.object_embed_dim;
    let mid_dim = if cfg.hidden_dim == 0 { in_dim } else { cfg.hidden_dim };
    let n_objects = train.objects().len();

    let mut r = rng::stream(cfg.seed, "init");
    let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        (0..n).map(|_| r.gen_range(-bound..bound)).collect()
    };

    let embed = uniform(n_objects * cfg.object_embed_dim, cfg.object_embed_dim);
    let (w1, b1) = if cfg.hidden_dim > 0 {
        (
            uniform(cfg.hidden_dim * in_dim, in_dim),
            vec![0.0; cfg.hidden_dim],
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let w = uniform(n_attributes * mid_dim, mid_dim);
    let b = vec![0.0; n_attributes];

    ModelParams {
        n_attributes,
        feature_dim,
        object_embed_dim: cfg.object_embed_dim,
        hidden_dim: cfg.hidden_dim,
        objects: train.objects().to_vec(),
        embed,
        w1,
        b1,
        w,
        b,
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Activations {
    input: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_with(
    params: &ModelParams,
    index: &HashMap<String, usize>,
    instance: &Instance,
) -> Result<Activations> {
    if instance.feature.len() != params.feature_dim {
        return Err(Error::Invariant(format!(
            "instance `{}` has feature dimension {}, model expects {}",
            instance.id,
            instance.feature.len(),
            params.feature_dim
        )));
    }
    let mut input = Vec::with_capacity(params.in_dim());
    input.extend(instance.feature.iter().map(|&x| f64::from(x)));
    if params.object_embed_dim > 0 {
        let &o = index.get(instance.object_id.as_str()).ok_or_else(|| {
            Error::Invariant(format!(
                "instance `{}` references object `{}`, unknown to the model",
                instance.id, instance.object_id
            ))
        })?;
        let row = &params.embed[o * params.object_embed_dim..(o + 1) * params.object_embed_dim];
        input.extend_from_slice(row);
    }

    let hidden: Vec<f64> = if params.hidden_dim > 0 {
        (0..params.hidden_dim)
            .map(|k| {
                let row = &params.w1[k * params.in_dim()..(k + 1) * params.in_dim()];
                let z: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + params.b1[k];
                z.tanh()
            })
            .collect()
    } else {
        Vec::new()
    };
    let mid: &[f64] = if params.hidden_dim > 0 { &hidden } else { &input };

    let probs: Vec<f64> = (0..params.n_attributes)
        .map(|a| {
            let row = &params.w[a * params.mid_dim()..(a + 1) * params.mid_dim()];
            let z: f64 = row.iter().zip(mid).map(|(w, x)| w * x).sum::<f64>() + params.b[a];
            sigmoid(z)
        })
        .collect();

    Ok(Activations {
        input,
        hidden,
        probs,
    })
}

/// Probability vector for one instance; every component strictly inside (0, 1).
pub fn forward(params: &ModelParams, instance: &Instance) -> Result<Vec<f64>> {
    let index = params.object_index();
    Ok(forward_with(params, &index, instance)?.probs)
}

/// Raw probabilities for a batch of instances, one row per instance. No
/// thresholding: ranking metrics consume the scores directly.
pub fn predict(params: &ModelParams, instances: &[Instance]) -> Result<Vec<Vec<f64>>> {
    let index = params.object_index();
    instances
        .iter()
        .map(|inst| Ok(forward_with(params, &index, inst)?.probs))
        .collect()
}

/// Gradient accumulator with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct GradBuf {
    pub embed: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl GradBuf {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            embed: vec![0.0; params.embed.len()],
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w: vec![0.0; params.w.len()],
            b: vec![0.0; params.b.len()],
        }
    }

    pub fn zero(&mut self) {
        for block in [&mut self.embed, &mut self.w1, &mut self.b1, &mut self.w, &mut self.b] {
            block.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Accumulates `scale * dL/dtheta` for one instance into `grads`, chaining
/// the per-attribute loss derivatives through the sigmoid and the model.
fn accumulate(
    params: &ModelParams,
    acts: &Activations,
    index: &HashMap<String, usize>,
    instance: &Instance,
    dloss_dp: &[f64],
    scale: f64,
    grads: &mut GradBuf,
) {
    let mid_dim = params.mid_dim();
    let in_dim = params.in_dim();
    let mid: &[f64] = if params.hidden_dim > 0 { &acts.hidden } else { &acts.input };

    let mut dmid = vec![0.0; mid_dim];
    for a in 0..params.n_attributes {
        let p = acts.probs[a];
        let dz = scale * dloss_dp[a] * p * (1.0 - p);
        if dz == 0.0 {
            continue;
        }
        let row = a * mid_dim;
        for k in 0..mid_dim {
            grads.w[row + k] += dz * mid[k];
            dmid[k] += dz * params.w[row + k];
        }
        grads.b[a] += dz;
    }

    let dinput: Vec<f64> = if params.hidden_dim > 0 {
        let mut dinput = vec![0.0; in_dim];
        for k in 0..params.hidden_dim {
            let dpre = dmid[k] * (1.0 - acts.hidden[k] * acts.hidden[k]);
            if dpre == 0.0 {
                continue;
            }
            let row = k * in_dim;
            for j in 0..in_dim {
                grads.w1[row + j] += dpre * acts.input[j];
                dinput[j] += dpre * params.w1[row + j];
            }
            grads.b1[k] += dpre;
        }
        dinput
    } else {
        dmid
    };

    if params.object_embed_dim > 0 {
        let o = index[instance.object_id.as_str()];
        let base = o * params.object_embed_dim;
        for j in 0..params.object_embed_dim {
            grads.embed[base + j] += dinput[params.feature_dim + j];
        }
    }
}

/// First/second moment estimates for Adam, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: GradBuf,
    pub v: GradBuf,
}

impl AdamState {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            m: GradBuf::zeros_like(params),
            v: GradBuf::zeros_like(params),
        }
    }
}

fn adam_update_block(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One bias-corrected Adam step at step index `t` (1-based). Head and
/// embedding parameters all use `lr_head`; there is no pre-trained tier at
/// desk scale.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradBuf,
    state: &mut AdamState,
    t: u64,
    cfg: &TrainConfig,
) {
    debug_assert!(t >= 1, "adam step index is 1-based");
    let (lr, b1, b2, eps) = (cfg.lr_head, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    adam_update_block(&mut params.embed, &grads.embed, &mut state.m.embed, &mut state.v.embed, lr, b1, b2, eps, t);
    adam_update_block(&mut params.w1, &grads.w1, &mut state.m.w1, &mut state.v.w1, lr, b1, b2, eps, t);
    adam_update_block(&mut params.b1, &grads.b1, &mut state.m.b1, &mut state.v.b1, lr, b1, b2, eps, t);
    adam_update_block(&mut params.w, &grads.w, &mut state.m.w, &mut state.v.w, lr, b1, b2, eps, t);
    adam_update_block(&mut params.b, &grads.b, &mut state.m.b, &mut state.v.b, lr, b1, b2, eps, t);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
}

pub fn write_history(history: &[EpochStats], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for stats in history {
        let mut line = serde_json::to_string(stats).expect("stats serialize");
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Runs the full training loop: seeded init, per-epoch shuffle over a
/// canonical id order (so instance storage order is irrelevant), analytic
/// gradients, Adam updates, and a fresh presence-weighted ignore mask each
/// time an instance is visited in selective mode.
pub fn train(
    train: &Dataset,
    fs: &FeasibleSets,
    scores: Option<&BTreeMap<String, PresenceDistribution>>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    train_cfg.validate()?;
    let loss_cfg = loss_cfg.clone().validated()?;
    if train.instances().is_empty() {
        return Err(Error::EmptyDataset);
    }

    let scores = match (loss_cfg.mode, scores) {
        (LossMode::Selective, None) => {
            return Err(Error::Config(
                "selective mode requires presence scores for the training set".into(),
            ))
        }
        (LossMode::Selective, Some(s)) => {
            if let Some(inst) = train.instances().iter().find(|i| !s.contains_key(&i.id)) {
                return Err(Error::Config(format!(
                    "selective mode is missing presence scores for instance `{}`",
                    inst.id
                )));
            }
            Some(s)
        }
        (_, s) => s,
    };

    let mut params = init_params(train, train_cfg);
    let index = params.object_index();
    let mut state = AdamState::zeros_like(&params);
    let mut grads = GradBuf::zeros_like(&params);

    // Canonical visit order, independent of storage order.
    let mut canonical: Vec<usize> = (0..train.instances().len()).collect();
    canonical.sort_by(|&a, &b| train.instances()[a].id.cmp(&train.instances()[b].id));

    let n_attributes = train.n_attributes();
    let unannotated: Vec<BTreeSet<usize>> = if loss_cfg.mode == LossMode::Selective {
        train
            .instances()
            .iter()
            .map(|i| i.unannotated(n_attributes))
            .collect()
    } else {
        Vec::new()
    };

    let mut history = Vec::with_capacity(train_cfg.epochs as usize);
    let mut t: u64 = 0;
    for epoch in 0..train_cfg.epochs {
        let mut order = canonical.clone();
        order.shuffle(&mut rng::epoch_stream(train_cfg.seed, "shuffle", u64::from(epoch)));

        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let inst = &train.instances()[i];
                let acts = forward_with(&params, &index, inst)?;

                let mask = if loss_cfg.mode == LossMode::Selective {
                    let dist = &scores.unwrap()[&inst.id];
                    let mask_epoch = if loss_cfg.fixed_ignore_mask { 0 } else { u64::from(epoch) };
                    let mut inst_rng = rng::instance_stream(train_cfg.seed, mask_epoch, &inst.id);
                    loss::draw_ignore_mask(dist, &unannotated[i], &loss_cfg, &mut inst_rng)
                } else {
                    loss::IgnoreMask::empty()
                };

                let value = loss::instance_loss(&acts.probs, inst, fs, &mask, &loss_cfg)?;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss diverged at epoch {epoch}, instance `{}`",
                        inst.id
                    )));
                }
                epoch_loss += value;

                let dloss_dp = loss::instance_loss_grad(&acts.probs, inst, fs, &mask, &loss_cfg)?;
                accumulate(&params, &acts, &index, inst, &dloss_dp, scale, &mut grads);
            }
            t += 1;
            adam_step(&mut params, &grads, &mut state, t, train_cfg);
        }
        history.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / train.instances().len() as f64,
        });
    }

    Ok((params, history))
}

// ---------------------------------------------------------------------------
// Checkpoint file: header (magic, version, config hash, shapes, object list),
// then the tensors as little-endian f32 in a fixed order.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"ATSELCK1";

pub fn save_checkpoint(params: &ModelParams, config_hash: u64, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&config_hash.to_le_bytes());
    for dim in [
        params.n_attributes,
        params.feature_dim,
        params.object_embed_dim,
        params.hidden_dim,
        params.objects.len(),
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for o in &params.objects {
        buf.extend_from_slice(&(o.len() as u32).to_le_bytes());
        buf.extend_from_slice(o.as_bytes());
    }
    for block in [&params.embed, &params.w1, &params.b1, &params.w, &params.b] {
        for &x in block {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64)> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "truncated checkpoint".into(),
            });
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    let u32_at = |pos: &mut usize| -> Result<u32> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };

    if take(&mut pos, 8)? != CKPT_MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "not a checkpoint file (bad magic)".into(),
        });
    }
    let version = u32_at(&mut pos)?;
    if version != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let hash_bytes = take(&mut pos, 8)?;
    let config_hash = u64::from_le_bytes(hash_bytes.try_into().unwrap());

    let n_attributes = u32_at(&mut pos)? as usize;
    let feature_dim = u32_at(&mut pos)? as usize;
    let object_embed_dim = u32_at(&mut pos)? as usize;
    let hidden_dim = u32_at(&mut pos)? as usize;
    let n_objects = u32_at(&mut pos)? as usize;

    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let len = u32_at(&mut pos)? as usize;
        let s = String::from_utf8(take(&mut pos, len)?.to_vec()).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("bad utf-8 object id: {e}"),
        })?;
        objects.push(s);
    }

    let in_dim = feature_dim + object_embed_dim;
    let mid_dim = if hidden_dim == 0 { in_dim } else { hidden_dim };
    let tensor = |pos: &mut usize, n: usize| -> Result<Vec<f64>> {
        let b = take(pos, n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    };
    let embed = tensor(&mut pos, n_objects * object_embed_dim)?;
    let (w1, b1) = if hidden_dim > 0 {
        (tensor(&mut pos, hidden_dim * in_dim)?, tensor(&mut pos, hidden_dim)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let w = tensor(&mut pos, n_attributes * mid_dim)?;
    let b = tensor(&mut pos, n_attributes)?;
    if pos != bytes.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "trailing bytes after checkpoint tensors".into(),
        });
    }

    Ok((
        ModelParams {
            n_attributes,
            feature_dim,
            object_embed_dim,
            hidden_dim,
            objects,
            embed,
            w1,
            b1,
            w,
            b,
        },
        config_hash,
    ))
}
