//! Parameter layout, initialization, and tape execution for the three
//! architectures.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::models::{Architecture, LogitVector, ModelConfig, TaskConditioning};
use crate::nn::init;
use crate::nn::ops::sinusoidal_positions;
use crate::nn::scalar::Scalar;
use crate::nn::tape::{BufId, Tape};
use crate::nn::tensor::{AttentionMask, Parameter, Tensor};

enum InitKind {
    Xavier { fan_in: usize, fan_out: usize },
    Normal02,
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: InitKind,
}

fn spec(name: String, shape: Vec<usize>, init: InitKind) -> ParamSpec {
    ParamSpec { name, shape, init }
}

fn xavier(name: String, rows: usize, cols: usize) -> ParamSpec {
    spec(
        name,
        vec![rows, cols],
        InitKind::Xavier {
            fan_in: rows,
            fan_out: cols,
        },
    )
}

fn norm_pair(prefix: &str, dim: usize) -> [ParamSpec; 2] {
    [
        spec(format!("{prefix}.gamma"), vec![dim], InitKind::Ones),
        spec(format!("{prefix}.beta"), vec![dim], InitKind::Zeros),
    ]
}

/// Attention + MLP block over `dim`-wide rows.
fn block_specs(prefix: &str, dim: usize, with_self_attn: bool) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    if with_self_attn {
        for w in ["wq", "wk", "wv", "wo"] {
            out.push(xavier(format!("{prefix}.attn.{w}"), dim, dim));
        }
        out.extend(norm_pair(&format!("{prefix}.norm1"), dim));
    }
    let hidden = 2 * dim;
    out.push(xavier(format!("{prefix}.mlp.w1"), dim, hidden));
    out.push(spec(format!("{prefix}.mlp.b1"), vec![hidden], InitKind::Zeros));
    out.push(xavier(format!("{prefix}.mlp.w2"), hidden, dim));
    out.push(spec(format!("{prefix}.mlp.b2"), vec![dim], InitKind::Zeros));
    out.extend(norm_pair(&format!("{prefix}.norm2"), dim));
    out
}

fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (c, l, dl, dm) = (
        cfg.num_classes,
        cfg.latents_per_class,
        cfg.latent_dim,
        cfg.model_dim,
    );
    let mut out = Vec::new();
    out.push(xavier("input_proj.w".into(), cfg.input_dim, dm));
    out.push(spec("input_proj.b".into(), vec![dm], InitKind::Zeros));
    if cfg.task_conditioning == TaskConditioning::Embedding {
        out.push(spec(
            "task_embed".into(),
            vec![cfg.num_tasks, dm],
            InitKind::Normal02,
        ));
    }
    match cfg.architecture {
        Architecture::ClassLatent => {
            out.push(spec("latents".into(), vec![c, l, dl], InitKind::Normal02));
            out.push(xavier("xattn.wq".into(), dl, dl));
            out.push(xavier("xattn.wk".into(), dm, dl));
            out.push(xavier("xattn.wv".into(), dm, dl));
            out.push(xavier("xattn.wo".into(), dl, dl));
            out.extend(norm_pair("xattn.norm", dl));
            for b in 0..cfg.num_self_blocks {
                out.extend(block_specs(&format!("block{b}"), dl, false));
            }
            out.push(xavier("head.w1".into(), dl, cfg.reduce_dim));
            out.push(spec("head.b1".into(), vec![cfg.reduce_dim], InitKind::Zeros));
            out.push(spec(
                "head.w2".into(),
                vec![l * cfg.reduce_dim],
                InitKind::Normal02,
            ));
            out.push(spec("head.b2".into(), vec![1], InitKind::Zeros));
        }
        Architecture::TransformerPool => {
            for b in 0..cfg.num_self_blocks {
                out.extend(block_specs(&format!("block{b}"), dm, true));
            }
            out.push(xavier("head.w".into(), dm, c));
            out.push(spec("head.b".into(), vec![c], InitKind::Zeros));
        }
        Architecture::PerceiverPool => {
            out.push(spec(
                "latents".into(),
                vec![cfg.shared_latents(), dl],
                InitKind::Normal02,
            ));
            out.push(xavier("xattn.wq".into(), dl, dl));
            out.push(xavier("xattn.wk".into(), dm, dl));
            out.push(xavier("xattn.wv".into(), dm, dl));
            out.push(xavier("xattn.wo".into(), dl, dl));
            out.extend(norm_pair("xattn.norm", dl));
            for b in 0..cfg.num_self_blocks {
                out.extend(block_specs(&format!("block{b}"), dl, true));
            }
            out.push(xavier("head.w".into(), dl, c));
            out.push(spec("head.b".into(), vec![c], InitKind::Zeros));
        }
    }
    out
}

/// One recording in a training batch.
pub struct BatchItem<'a, E: Scalar> {
    pub frames: &'a Tensor<E>,
    pub mask: &'a AttentionMask,
    pub labels: &'a [bool],
    pub task: Option<usize>,
}

/// A sequence classifier: immutable during inference, single-writer during
/// training.
pub struct SeqClassifier<E: Scalar> {
    config: ModelConfig,
    params: Vec<Parameter<E>>,
}

impl<E: Scalar> SeqClassifier<E> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = param_specs(&config)
            .into_iter()
            .map(|s| {
                let tensor = match s.init {
                    InitKind::Xavier { fan_in, fan_out } => {
                        init::xavier_uniform(s.shape, fan_in, fan_out, seed, &s.name)
                    }
                    InitKind::Normal02 => init::normal(s.shape, 0.02, seed, &s.name),
                    InitKind::Zeros => Tensor::zeros(s.shape),
                    InitKind::Ones => {
                        Tensor::new(s.shape.clone(), vec![E::one(); s.shape.iter().product()])
                            .expect("shape/data consistent")
                    }
                };
                Parameter::new(s.name, tensor)
            })
            .collect();
        Ok(SeqClassifier { config, params })
    }

    /// Rebuild from named tensors (checkpoint load). Every expected
    /// parameter must be present with the right shape; extras are rejected.
    pub fn from_parts(config: ModelConfig, mut blobs: HashMap<String, Tensor<E>>) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for s in param_specs(&config) {
            let tensor = blobs.remove(&s.name).ok_or_else(|| {
                Error::Data(format!("checkpoint is missing parameter '{}'", s.name))
            })?;
            if tensor.shape() != s.shape.as_slice() {
                return Err(Error::shape(
                    format!("checkpoint parameter '{}'", s.name),
                    &s.shape,
                    tensor.shape(),
                ));
            }
            params.push(Parameter::new(s.name, tensor));
        }
        if let Some(name) = blobs.keys().next() {
            return Err(Error::Data(format!(
                "checkpoint has unexpected parameter '{name}'"
            )));
        }
        Ok(SeqClassifier { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<Parameter<E>> {
        &mut self.params
    }

    /// Names of parameter groups carrying a leading class axis. For the
    /// class-latent architecture this must be exactly `["latents"]`.
    pub fn class_indexed_param_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.tensor.shape().first() == Some(&self.config.num_classes))
            .map(|p| p.name.as_str())
            .collect()
    }

    pub fn map_precision<F: Scalar>(&self) -> SeqClassifier<F> {
        SeqClassifier {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.tensor.map(|v| F::from_f64(v.as_f64()))))
                .collect(),
        }
    }

    pub fn forward(
        &self,
        frames: &Tensor<E>,
        mask: &AttentionMask,
        task: Option<usize>,
    ) -> Result<LogitVector> {
        let mut tape = Tape::new();
        let ids = self.leaf_params(&mut tape);
        let logits = build_logits(&mut tape, &self.config, &self.params, &ids, frames, mask, task)?;
        Ok(LogitVector {
            logits: tape.data(logits).iter().map(|v| v.as_f64()).collect(),
        })
    }

    /// Mean loss and mean parameter gradients over a batch. Items are
    /// processed in order; gradient reduction is a fixed-order sum.
    pub fn loss_and_grad(&self, items: &[BatchItem<E>]) -> Result<(f64, Vec<Tensor<E>>)> {
        if items.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut total = 0.0f64;
        let mut acc: Vec<Vec<f64>> = self
            .params
            .iter()
            .map(|p| vec![0.0; p.tensor.numel()])
            .collect();
        for item in items {
            let mut tape = Tape::new();
            let ids = self.leaf_params(&mut tape);
            let logits = build_logits(
                &mut tape,
                &self.config,
                &self.params,
                &ids,
                item.frames,
                item.mask,
                item.task,
            )?;
            if item.labels.len() != self.config.num_classes {
                return Err(Error::shape(
                    "batch labels",
                    &[self.config.num_classes],
                    &[item.labels.len()],
                ));
            }
            let labels = Tensor::new(
                vec![1, self.config.num_classes],
                item.labels
                    .iter()
                    .map(|&b| if b { E::one() } else { E::zero() })
                    .collect(),
            )?;
            let lb = tape.leaf(&labels);
            let loss = tape.bce_mean(logits, lb)?;
            total += tape.data(loss)[0].as_f64();
            tape.backward(loss)?;
            for (i, &id) in ids.iter().enumerate() {
                if let Some(g) = tape.grad(id) {
                    for (a, &v) in acc[i].iter_mut().zip(g) {
                        *a += v.as_f64();
                    }
                }
            }
        }
        let n = items.len() as f64;
        let grads = self
            .params
            .iter()
            .zip(acc)
            .map(|(p, a)| {
                Tensor::new(
                    p.tensor.shape().to_vec(),
                    a.into_iter().map(|v| E::from_f64(v / n)).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((total / n, grads))
    }

    /// Smallest |relu input| in a forward pass on this input; the validity
    /// margin for finite-difference checks (an FD step crossing a relu kink
    /// measures the average of the two slopes, not the derivative).
    pub fn relu_margin(
        &self,
        frames: &Tensor<E>,
        mask: &AttentionMask,
        task: Option<usize>,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let ids = self.leaf_params(&mut tape);
        build_logits(&mut tape, &self.config, &self.params, &ids, frames, mask, task)?;
        Ok(tape.relu_margin().unwrap_or(f64::INFINITY))
    }

    fn leaf_params(&self, tape: &mut Tape<E>) -> Vec<BufId> {
        self.params.iter().map(|p| tape.leaf(&p.tensor)).collect()
    }
}

struct Ids<'a, E: Scalar> {
    params: &'a [Parameter<E>],
    bufs: &'a [BufId],
}

impl<'a, E: Scalar> Ids<'a, E> {
    fn get(&self, name: &str) -> BufId {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(|i| self.bufs[i])
            .unwrap_or_else(|| panic!("parameter '{name}' not in model"))
    }
}

/// Record the forward pass for the configured architecture; returns the
/// [1, C] logit buffer.
fn build_logits<E: Scalar>(
    tape: &mut Tape<E>,
    cfg: &ModelConfig,
    params: &[Parameter<E>],
    bufs: &[BufId],
    frames: &Tensor<E>,
    mask: &AttentionMask,
    task: Option<usize>,
) -> Result<BufId> {
    if frames.cols() != cfg.input_dim {
        return Err(Error::shape(
            "model input",
            &[cfg.input_dim],
            &[frames.cols()],
        ));
    }
    if frames.rows() != mask.len() {
        return Err(Error::shape("input mask", &[frames.rows()], &[mask.len()]));
    }
    match (cfg.task_conditioning, task) {
        (TaskConditioning::Embedding, None) => {
            return Err(Error::InvalidInput(
                "task id required when task conditioning is enabled".into(),
            ))
        }
        (TaskConditioning::None, Some(_)) => {
            return Err(Error::InvalidInput(
                "task id given but task conditioning is disabled".into(),
            ))
        }
        _ => {}
    }
    if let Some(t) = task {
        if t >= cfg.num_tasks {
            return Err(Error::InvalidInput(format!(
                "task id {t} out of range 0..{}",
                cfg.num_tasks
            )));
        }
    }
    let ids = Ids { params, bufs };
    let t_len = frames.rows();
    let x_in = tape.leaf(frames);
    let mid = tape.mask(mask);

    // shared input pipeline: projection + positions + task conditioning
    let mut x = tape.matmul(x_in, ids.get("input_proj.w"))?;
    x = tape.add_row_broadcast(x, ids.get("input_proj.b"))?;
    if cfg.use_positions {
        let pos = sinusoidal_positions::<E>(t_len, cfg.model_dim)?;
        let pos = tape.leaf(&pos);
        x = tape.add(x, pos)?;
    }
    if let Some(t) = task {
        let row = tape.slice_rows(ids.get("task_embed"), t, 1)?;
        x = tape.add_row_broadcast(x, row)?;
    }

    match cfg.architecture {
        Architecture::ClassLatent => {
            let k = tape.matmul(x, ids.get("xattn.wk"))?;
            let v = tape.matmul(x, ids.get("xattn.wv"))?;
            let l = cfg.latents_per_class;
            let mut logits = Vec::with_capacity(cfg.num_classes);
            for c in 0..cfg.num_classes {
                let lat = tape.slice_rows(ids.get("latents"), c * l, l)?;
                let q = tape.matmul(lat, ids.get("xattn.wq"))?;
                let ctx = tape.attention(q, k, v, cfg.heads, Some(mid))?;
                let o = tape.matmul(ctx, ids.get("xattn.wo"))?;
                let res = tape.add(lat, o)?;
                let mut z = tape.layer_norm_rows(
                    res,
                    ids.get("xattn.norm.gamma"),
                    ids.get("xattn.norm.beta"),
                    1e-5,
                )?;
                for b in 0..cfg.num_self_blocks {
                    z = mlp_block(tape, &ids, &format!("block{b}"), z)?;
                }
                let h = tape.matmul(z, ids.get("head.w1"))?;
                let h = tape.add_row_broadcast(h, ids.get("head.b1"))?;
                let h = tape.relu(h)?;
                let dot = tape.dot_flatten(h, ids.get("head.w2"))?;
                logits.push(tape.add(dot, ids.get("head.b2"))?);
            }
            tape.stack_scalars(&logits)
        }
        Architecture::TransformerPool => {
            for b in 0..cfg.num_self_blocks {
                let prefix = format!("block{b}");
                let q = tape.matmul(x, ids.get(&format!("{prefix}.attn.wq")))?;
                let k = tape.matmul(x, ids.get(&format!("{prefix}.attn.wk")))?;
                let v = tape.matmul(x, ids.get(&format!("{prefix}.attn.wv")))?;
                let ctx = tape.attention(q, k, v, cfg.heads, Some(mid))?;
                let o = tape.matmul(ctx, ids.get(&format!("{prefix}.attn.wo")))?;
                let res = tape.add(x, o)?;
                x = tape.layer_norm_rows(
                    res,
                    ids.get(&format!("{prefix}.norm1.gamma")),
                    ids.get(&format!("{prefix}.norm1.beta")),
                    1e-5,
                )?;
                x = mlp_block(tape, &ids, &prefix, x)?;
            }
            let pooled = tape.mean_masked_rows(x, Some(mid))?;
            let logits = tape.matmul(pooled, ids.get("head.w"))?;
            tape.add_row_broadcast(logits, ids.get("head.b"))
        }
        Architecture::PerceiverPool => {
            let k = tape.matmul(x, ids.get("xattn.wk"))?;
            let v = tape.matmul(x, ids.get("xattn.wv"))?;
            let lat = ids.get("latents");
            let q = tape.matmul(lat, ids.get("xattn.wq"))?;
            let ctx = tape.attention(q, k, v, cfg.heads, Some(mid))?;
            let o = tape.matmul(ctx, ids.get("xattn.wo"))?;
            let res = tape.add(lat, o)?;
            let mut z = tape.layer_norm_rows(
                res,
                ids.get("xattn.norm.gamma"),
                ids.get("xattn.norm.beta"),
                1e-5,
            )?;
            for b in 0..cfg.num_self_blocks {
                let prefix = format!("block{b}");
                let q = tape.matmul(z, ids.get(&format!("{prefix}.attn.wq")))?;
                let k = tape.matmul(z, ids.get(&format!("{prefix}.attn.wk")))?;
                let v = tape.matmul(z, ids.get(&format!("{prefix}.attn.wv")))?;
                let ctx = tape.attention(q, k, v, cfg.heads, None)?;
                let o = tape.matmul(ctx, ids.get(&format!("{prefix}.attn.wo")))?;
                let res = tape.add(z, o)?;
                z = tape.layer_norm_rows(
                    res,
                    ids.get(&format!("{prefix}.norm1.gamma")),
                    ids.get(&format!("{prefix}.norm1.beta")),
                    1e-5,
                )?;
                z = mlp_block(tape, &ids, &prefix, z)?;
            }
            let pooled = tape.mean_masked_rows(z, None)?;
            let logits = tape.matmul(pooled, ids.get("head.w"))?;
            tape.add_row_broadcast(logits, ids.get("head.b"))
        }
    }
}

/// Position-wise MLP with residual and layer norm (`<prefix>.mlp`,
/// `<prefix>.norm2`). Tanh keeps the block smooth, which keeps full-model
/// finite-difference checks valid away from the (relu) projection head.
fn mlp_block<E: Scalar>(
    tape: &mut Tape<E>,
    ids: &Ids<E>,
    prefix: &str,
    z: BufId,
) -> Result<BufId> {
    let h = tape.matmul(z, ids.get(&format!("{prefix}.mlp.w1")))?;
    let h = tape.add_row_broadcast(h, ids.get(&format!("{prefix}.mlp.b1")))?;
    let h = tape.tanh(h)?;
    let h = tape.matmul(h, ids.get(&format!("{prefix}.mlp.w2")))?;
    let h = tape.add_row_broadcast(h, ids.get(&format!("{prefix}.mlp.b2")))?;
    let res = tape.add(z, h)?;
    tape.layer_norm_rows(
        res,
        ids.get(&format!("{prefix}.norm2.gamma")),
        ids.get(&format!("{prefix}.norm2.beta")),
        1e-5,
    )
}

/// Deterministically find an input whose forward pass keeps every relu
/// input at least `guard` away from zero, advancing seeds from `base_seed`.
///
/// Central differences with a fixed step are only a valid gradient oracle on
/// a locally linear piece; this certifies the evaluation point up front
/// instead of retrying on failures.
pub fn kink_free_input<E: Scalar>(
    model: &SeqClassifier<E>,
    t_len: usize,
    base_seed: u64,
    guard: f64,
    task: Option<usize>,
) -> Result<(Tensor<E>, AttentionMask)> {
    use rand::Rng;
    use rand::SeedableRng;
    let mask = AttentionMask::all_true(t_len);
    let d = model.config().input_dim;
    for attempt in 0..200u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(attempt));
        let frames = Tensor::from_fn(vec![t_len, d], |_| E::from_f64(rng.gen_range(-1.0..1.0)));
        if model.relu_margin(&frames, &mask, task)? >= guard {
            return Ok((frames, mask));
        }
    }
    Err(Error::State(format!(
        "no input with relu margin >= {guard} found in 200 attempts"
    )))
}

/// Gradients of one logit w.r.t. every parameter — used by the
/// class-isolation checks.
pub fn logit_param_grads<E: Scalar>(
    model: &SeqClassifier<E>,
    frames: &Tensor<E>,
    mask: &AttentionMask,
    task: Option<usize>,
    class: usize,
) -> Result<Vec<(String, Vec<E>)>> {
    let mut tape = Tape::new();
    let bufs: Vec<BufId> = model.params.iter().map(|p| tape.leaf(&p.tensor)).collect();
    let logits = build_logits(&mut tape, &model.config, &model.params, &bufs, frames, mask, task)?;
    let c = model.config.num_classes;
    let mut one_hot = vec![E::zero(); c];
    one_hot[class] = E::one();
    let sel = tape.leaf(&Tensor::new(vec![1, c], one_hot)?);
    let target = tape.dot_flatten(logits, sel)?;
    tape.backward(target)?;
    Ok(model
        .params
        .iter()
        .zip(&bufs)
        .map(|(p, &id)| {
            let g = tape
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![E::zero(); p.tensor.numel()]);
            (p.name.clone(), g)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::adam::{adam_update, AdamParams, AdamState};
    use crate::nn::gradcheck::finite_diff_gradcheck;
    use rand::Rng;
    use rand::SeedableRng;

    fn small_config(arch: Architecture) -> ModelConfig {
        ModelConfig {
            architecture: arch,
            num_classes: 3,
            latents_per_class: 2,
            latent_dim: 8,
            model_dim: 8,
            heads: 2,
            reduce_dim: 4,
            num_self_blocks: 1,
            task_conditioning: TaskConditioning::None,
            input_dim: 5,
            num_tasks: 3,
            use_positions: true,
        }
    }

    fn rand_frames(t: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![t, d], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn logit_shape_is_class_count() {
        for arch in Architecture::all() {
            let model = SeqClassifier::<f64>::init(small_config(arch), 1).unwrap();
            let frames = rand_frames(7, 5, 2);
            let out = model
                .forward(&frames, &AttentionMask::all_true(7), None)
                .unwrap();
            assert_eq!(out.logits.len(), 3, "{arch:?}");
        }
    }

    #[test]
    fn exactly_one_class_indexed_parameter_group() {
        let model = SeqClassifier::<f64>::init(small_config(Architecture::ClassLatent), 3).unwrap();
        assert_eq!(model.class_indexed_param_names(), vec!["latents"]);
    }

    #[test]
    fn identical_latent_rows_give_identical_logits() {
        let mut model =
            SeqClassifier::<f64>::init(small_config(Architecture::ClassLatent), 4).unwrap();
        // force latents[1] = latents[0]
        let lat = model
            .params_mut()
            .iter_mut()
            .find(|p| p.name == "latents")
            .unwrap();
        let block = 2 * 8; // L * d_l
        let first = lat.tensor.data()[..block].to_vec();
        lat.tensor.data_mut()[block..2 * block].copy_from_slice(&first);
        for seed in 0..5 {
            let frames = rand_frames(6, 5, 100 + seed);
            let out = model
                .forward(&frames, &AttentionMask::all_true(6), None)
                .unwrap();
            assert!(
                (out.logits[0] - out.logits[1]).abs() < 1e-12,
                "classes with equal latents must produce equal logits"
            );
            assert!((out.logits[0] - out.logits[2]).abs() > 1e-9);
        }
    }

    #[test]
    fn factorized_projection_degenerates_with_zero_weights() {
        // w2 = 0 forces every logit to b2 regardless of input
        let mut model =
            SeqClassifier::<f64>::init(small_config(Architecture::ClassLatent), 5).unwrap();
        for p in model.params_mut().iter_mut() {
            if p.name == "head.w2" {
                p.tensor.data_mut().fill(0.0);
            }
            if p.name == "head.b2" {
                p.tensor.data_mut()[0] = 0.625;
            }
        }
        let frames = rand_frames(9, 5, 6);
        let out = model
            .forward(&frames, &AttentionMask::all_true(9), None)
            .unwrap();
        for &z in &out.logits {
            assert!((z - 0.625).abs() < 1e-12);
        }
    }

    #[test]
    fn class_isolation_gradients_are_zero_off_class() {
        let model = SeqClassifier::<f64>::init(small_config(Architecture::ClassLatent), 7).unwrap();
        let block = 2 * 8;
        for seed in 0..3 {
            let frames = rand_frames(8, 5, 200 + seed);
            let mask = AttentionMask::all_true(8);
            for target in 0..3usize {
                let grads = logit_param_grads(&model, &frames, &mask, None, target).unwrap();
                let (_, lat_grad) = grads.iter().find(|(n, _)| n == "latents").unwrap();
                for c in 0..3usize {
                    let g = &lat_grad[c * block..(c + 1) * block];
                    let max_abs = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
                    if c == target {
                        assert!(max_abs > 1e-12, "own-class gradient must flow");
                    } else {
                        assert!(
                            max_abs < 1e-8,
                            "logit {target} leaked gradient {max_abs} into latents[{c}]"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn masked_padding_leaves_logits_unchanged() {
        for arch in Architecture::all() {
            let model = SeqClassifier::<f64>::init(small_config(arch), 8).unwrap();
            let frames = rand_frames(6, 5, 9);
            let base = model
                .forward(&frames, &AttentionMask::all_true(6), None)
                .unwrap();
            // double the length with junk padding, mask it off
            let mut padded = frames.data().to_vec();
            padded.extend(std::iter::repeat(0.31).take(6 * 5));
            let padded = Tensor::new(vec![12, 5], padded).unwrap();
            let mut valid = vec![true; 6];
            valid.extend(vec![false; 6]);
            let out = model
                .forward(&padded, &AttentionMask::new(valid).unwrap(), None)
                .unwrap();
            for (a, b) in base.logits.iter().zip(&out.logits) {
                assert!((a - b).abs() < 1e-6, "{arch:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn frame_permutation_invariance_without_positions() {
        let cfg = ModelConfig {
            use_positions: false,
            ..small_config(Architecture::ClassLatent)
        };
        let model = SeqClassifier::<f64>::init(cfg, 10).unwrap();
        let frames = rand_frames(7, 5, 11);
        let mask = AttentionMask::all_true(7);
        let base = model.forward(&frames, &mask, None).unwrap();
        // reverse the frame order
        let mut rev = Vec::with_capacity(7 * 5);
        for t in (0..7).rev() {
            rev.extend_from_slice(&frames.data()[t * 5..(t + 1) * 5]);
        }
        let rev = Tensor::new(vec![7, 5], rev).unwrap();
        let out = model.forward(&rev, &mask, None).unwrap();
        for (a, b) in base.logits.iter().zip(&out.logits) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn task_id_required_iff_conditioning_enabled() {
        let frames = rand_frames(4, 5, 12);
        let mask = AttentionMask::all_true(4);
        let plain = SeqClassifier::<f64>::init(small_config(Architecture::ClassLatent), 13).unwrap();
        assert!(plain.forward(&frames, &mask, Some(0)).is_err());

        let cfg = ModelConfig {
            task_conditioning: TaskConditioning::Embedding,
            ..small_config(Architecture::ClassLatent)
        };
        let cond = SeqClassifier::<f64>::init(cfg, 14).unwrap();
        assert!(cond.forward(&frames, &mask, None).is_err());
        let a = cond.forward(&frames, &mask, Some(0)).unwrap();
        let b = cond.forward(&frames, &mask, Some(2)).unwrap();
        assert!(a
            .logits
            .iter()
            .zip(&b.logits)
            .any(|(x, y)| (x - y).abs() > 1e-9));
        assert!(cond.forward(&frames, &mask, Some(3)).is_err());
    }

    /// Degenerate class-latent config (C=1, L=1, h=1, n_b=0) against a
    /// hand-written closed-form forward: attention pooling + linear head.
    #[test]
    fn tiny_instance_matches_closed_form() {
        let cfg = ModelConfig {
            architecture: Architecture::ClassLatent,
            num_classes: 1,
            latents_per_class: 1,
            latent_dim: 6,
            model_dim: 6,
            heads: 1,
            reduce_dim: 3,
            num_self_blocks: 0,
            task_conditioning: TaskConditioning::None,
            input_dim: 4,
            num_tasks: 3,
            use_positions: true,
        };
        let model = SeqClassifier::<f64>::init(cfg, 21).unwrap();
        let get = |name: &str| {
            &model
                .params()
                .iter()
                .find(|p| p.name == name)
                .unwrap()
                .tensor
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let t = rng.gen_range(2..12);
            let frames = rand_frames(t, 4, 1000 + trial);
            let mask = AttentionMask::all_true(t);
            let got = model.forward(&frames, &mask, None).unwrap().logits[0];

            // --- independent straight-line forward in f64 ---
            let d = 6usize;
            let w_in = get("input_proj.w").data();
            let b_in = get("input_proj.b").data();
            let pos = sinusoidal_positions::<f64>(t, d).unwrap();
            let mut x = vec![0.0f64; t * d];
            for r in 0..t {
                for c in 0..d {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += frames.data()[r * 4 + k] * w_in[k * d + c];
                    }
                    x[r * d + c] = acc + b_in[c] + pos.data()[r * d + c];
                }
            }
            let lat = get("latents").data();
            let wq = get("xattn.wq").data();
            let wk = get("xattn.wk").data();
            let wv = get("xattn.wv").data();
            let wo = get("xattn.wo").data();
            let mut q = vec![0.0f64; d];
            for c in 0..d {
                for k in 0..d {
                    q[c] += lat[k] * wq[k * d + c];
                }
            }
            let mut scores = vec![0.0f64; t];
            for r in 0..t {
                let mut dot = 0.0;
                for c in 0..d {
                    let mut kv = 0.0;
                    for k in 0..d {
                        kv += x[r * d + k] * wk[k * d + c];
                    }
                    dot += q[c] * kv;
                }
                scores[r] = dot / (d as f64).sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut ctx = vec![0.0f64; d];
            for r in 0..t {
                let w = exps[r] / z;
                for c in 0..d {
                    let mut vv = 0.0;
                    for k in 0..d {
                        vv += x[r * d + k] * wv[k * d + c];
                    }
                    ctx[c] += w * vv;
                }
            }
            let mut o = vec![0.0f64; d];
            for c in 0..d {
                for k in 0..d {
                    o[c] += ctx[k] * wo[k * d + c];
                }
            }
            let resid: Vec<f64> = (0..d).map(|c| lat[c] + o[c]).collect();
            let mean: f64 = resid.iter().sum::<f64>() / d as f64;
            let var: f64 = resid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + 1e-5).sqrt();
            let gamma = get("xattn.norm.gamma").data();
            let beta = get("xattn.norm.beta").data();
            let zrow: Vec<f64> = (0..d)
                .map(|c| (resid[c] - mean) * rstd * gamma[c] + beta[c])
                .collect();
            let w1 = get("head.w1").data();
            let b1 = get("head.b1").data();
            let w2 = get("head.w2").data();
            let b2 = get("head.b2").data()[0];
            let mut logit = b2;
            for j in 0..3 {
                let mut h = b1[j];
                for k in 0..d {
                    h += zrow[k] * w1[k * 3 + j];
                }
                logit += h.max(0.0) * w2[j];
            }
            assert!(
                (got - logit).abs() < 1e-6,
                "trial {trial}: tape {got} vs closed form {logit}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_all_architectures() {
        for arch in Architecture::all() {
            let model = SeqClassifier::<f64>::init(small_config(arch), 31).unwrap();
            let (frames, mask) = kink_free_input(&model, 5, 32, 0.02, None).unwrap();
            let labels = vec![true, false, true];
            let (_, analytic) = model
                .loss_and_grad(&[BatchItem {
                    frames: &frames,
                    mask: &mask,
                    labels: &labels,
                    task: None,
                }])
                .unwrap();
            let config = model.config().clone();
            let mut params = model.params().to_vec();
            let report = finite_diff_gradcheck(
                &mut params,
                &analytic,
                |ps| {
                    let m = SeqClassifier::from_parts(
                        config.clone(),
                        ps.iter()
                            .map(|p| (p.name.clone(), p.tensor.clone()))
                            .collect(),
                    )?;
                    let (loss, _) = m.loss_and_grad(&[BatchItem {
                        frames: &frames,
                        mask: &mask,
                        labels: &labels,
                        task: None,
                    }])?;
                    Ok(loss)
                },
                1e-3,
                1e-4,
            )
            .unwrap();
            assert!(
                report.all_ok(),
                "{arch:?}: worst rel err {} in {:?}",
                report.worst(),
                report.failures()
            );
        }
    }

    #[test]
    fn one_training_step_reduces_loss() {
        let model = SeqClassifier::<f64>::init(small_config(Architecture::ClassLatent), 41).unwrap();
        let frames = rand_frames(6, 5, 42);
        let mask = AttentionMask::all_true(6);
        let labels = vec![true, false, false];
        let items = [BatchItem {
            frames: &frames,
            mask: &mask,
            labels: &labels,
            task: None,
        }];
        let mut model = model;
        let mut state = AdamState::new(model.params());
        let hp = AdamParams::default();
        let (loss0, grads) = model.loss_and_grad(&items).unwrap();
        adam_update(model.params_mut(), &grads, &mut state, &hp).unwrap();
        for _ in 0..20 {
            let (_, grads) = model.loss_and_grad(&items).unwrap();
            adam_update(model.params_mut(), &grads, &mut state, &hp).unwrap();
        }
        let (loss1, _) = model.loss_and_grad(&items).unwrap();
        assert!(loss1 < loss0, "{loss1} !< {loss0}");
    }
}
