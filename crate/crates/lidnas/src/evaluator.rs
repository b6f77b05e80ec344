//! Desk-scale evaluation: a procedural dense-regression task (planes and
//! spheres under a fixed projection), a seeded Adam trainer, thresholded
//! accuracy, and the grade/reward objectives that trade accuracy against
//! parameter-count compactness.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::genome::ArchitectureGenome;
use crate::net::{backward, compile, forward, forward_cached, init_params, ParamStore, Tensor};
use crate::{Error, Result};

/// Ratio threshold of the accuracy metric: a pixel counts as correct when
/// `max(pred / target, target / pred) < 1.25`.
pub const ACCURACY_THRESHOLD: f64 = 1.25;

/// Positive floor applied to predictions before ratio computation.
pub const PREDICTION_FLOOR: f64 = 1e-3;

/// Parent scores below this (or non-finite) make the reward ratio
/// meaningless; children are then ordered by raw score instead.
pub const PARENT_SCORE_TOL: f64 = 1e-9;

/// Procedural scene parameters. Depth maps combine one slanted plane with a
/// number of spheres; every surface stays strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    /// Plane depth at the optical axis, sampled uniformly from this range.
    pub plane_offset: (f64, f64),
    /// Plane tilt coefficients for both image axes.
    pub plane_tilt: (f64, f64),
    /// Inclusive range of sphere count per scene.
    pub sphere_count: (usize, usize),
    pub sphere_radius: (f64, f64),
    /// Depth of each sphere's nearest point; kept in front of the plane.
    pub sphere_depth: (f64, f64),
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            plane_offset: (2.0, 4.0),
            plane_tilt: (-1.0, 1.0),
            sphere_count: (2, 6),
            sphere_radius: (0.08, 0.30),
            sphere_depth: (0.6, 2.0),
        }
    }
}

/// One sphere in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Depth of the sphere's nearest point.
    pub near_depth: f64,
}

/// An analytic scene: depth at a pixel is the nearest surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `depth = plane[0] + plane[1] * x + plane[2] * y`.
    pub plane: [f64; 3],
    pub spheres: Vec<Sphere>,
}

impl Scene {
    pub fn sample(rng: &mut ChaCha20Rng, spec: &TaskSpec) -> Scene {
        let uniform = |rng: &mut ChaCha20Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let plane = [
            uniform(rng, spec.plane_offset),
            uniform(rng, spec.plane_tilt),
            uniform(rng, spec.plane_tilt),
        ];
        let count = if spec.sphere_count.1 > spec.sphere_count.0 {
            rng.random_range(spec.sphere_count.0..=spec.sphere_count.1)
        } else {
            spec.sphere_count.0
        };
        let spheres = (0..count)
            .map(|_| Sphere {
                cx: uniform(rng, (-0.5, 0.5)),
                cy: uniform(rng, (-0.5, 0.5)),
                radius: uniform(rng, spec.sphere_radius),
                near_depth: uniform(rng, spec.sphere_depth),
            })
            .collect();
        Scene { plane, spheres }
    }

    /// Depth of the nearest surface at normalized coordinates `(x, y)`.
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        let mut depth = self.plane[0] + self.plane[1] * x + self.plane[2] * y;
        for s in &self.spheres {
            let dx = x - s.cx;
            let dy = y - s.cy;
            let rho2 = dx * dx + dy * dy;
            if rho2 < s.radius * s.radius {
                let bulge = (s.radius * s.radius - rho2).sqrt();
                let sphere_depth = s.near_depth + s.radius - bulge;
                depth = depth.min(sphere_depth);
            }
        }
        depth
    }

    /// Renders the input channels and ground-truth depth. Channel 0 is
    /// inverse depth, channel 1 a sphere mask, channel 2 the mean image
    /// coordinate; the target is the (strictly positive) depth itself.
    pub fn render(&self, height: usize, width: usize) -> (Tensor, Tensor) {
        let mut input = Tensor::zeros([1, 3, height, width]);
        let mut target = Tensor::zeros([1, 1, height, width]);
        for row in 0..height {
            let y = (row as f64 + 0.5) / height as f64 - 0.5;
            for col in 0..width {
                let x = (col as f64 + 0.5) / width as f64 - 0.5;
                let depth = self.depth_at(x, y);
                let on_sphere = self.spheres.iter().any(|s| {
                    let dx = x - s.cx;
                    let dy = y - s.cy;
                    dx * dx + dy * dy < s.radius * s.radius
                });
                *input.at_mut(0, 0, row, col) = 1.0 / depth;
                *input.at_mut(0, 1, row, col) = if on_sphere { 1.0 } else { 0.0 };
                *input.at_mut(0, 2, row, col) = (x + y) / 2.0;
                *target.at_mut(0, 0, row, col) = depth;
            }
        }
        (input, target)
    }
}

/// One rendered training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

/// A generated dataset; regeneration from the same arguments is
/// bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub resolution: (usize, usize),
    pub spec: TaskSpec,
    pub samples: Vec<Sample>,
    pub scenes: Vec<Scene>,
}

/// Generates `count` scenes and renders them at the given resolution.
pub fn gen_task(seed: u64, count: usize, resolution: (usize, usize), spec: &TaskSpec) -> SyntheticTask {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (height, width) = resolution;
    let mut samples = Vec::with_capacity(count);
    let mut scenes = Vec::with_capacity(count);
    for _ in 0..count {
        let scene = Scene::sample(&mut rng, spec);
        let (input, target) = scene.render(height, width);
        samples.push(Sample { input, target });
        scenes.push(scene);
    }
    SyntheticTask {
        seed,
        resolution,
        spec: spec.clone(),
        samples,
        scenes,
    }
}

impl SyntheticTask {
    /// Training/validation split: the trailing 20 percent (at least one
    /// sample) is held out.
    pub fn split(&self) -> (&[Sample], &[Sample]) {
        let val = (self.samples.len() / 5).max(1).min(self.samples.len());
        let cut = self.samples.len() - val;
        (&self.samples[..cut], &self.samples[cut..])
    }
}

/// Optimizer settings. Defaults follow the desk-scale regime: Adam with
/// momentum coefficients (0.9, 0.999), epsilon 1e-8, initial learning rate
/// 7e-4 decayed by 5 percent per 5 epochs starting at epoch 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub decay_from_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor: 0.95,
            decay_interval: 5,
            decay_from_epoch: 10,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
        ] {
            if v <= 0.0 || (name != "epsilon" && v >= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} out of range")));
            }
        }
        if self.decay_factor <= 0.0 || self.decay_factor >= 1.0 {
            return Err(Error::InvalidConfig(
                "decay_factor must lie in (0, 1)".into(),
            ));
        }
        if self.decay_interval == 0 {
            return Err(Error::InvalidConfig("decay_interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch index: flat until
    /// `decay_from_epoch`, then `lr * factor^(epoch / interval)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_from_epoch {
            self.learning_rate
        } else {
            self.learning_rate
                * self
                    .decay_factor
                    .powi((epoch / self.decay_interval) as i32)
        }
    }
}

/// Trained parameters plus the per-epoch loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub loss_history: Vec<f64>,
}

/// Mean squared error and its gradient with respect to the prediction.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    debug_assert_eq!(pred.shape(), target.shape());
    let count = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for i in 0..pred.len() {
        let diff = pred.data()[i] - target.data()[i];
        loss += diff * diff;
        grad.data_mut()[i] = 2.0 * diff / count;
    }
    (loss / count, grad)
}

fn stack_batch(samples: &[Sample], indices: &[usize]) -> (Tensor, Tensor) {
    let [_, ci, h, w] = samples[0].input.shape();
    let [_, ct, _, _] = samples[0].target.shape();
    let n = indices.len();
    let mut input = Tensor::zeros([n, ci, h, w]);
    let mut target = Tensor::zeros([n, ct, h, w]);
    let in_len = ci * h * w;
    let t_len = ct * h * w;
    for (row, &idx) in indices.iter().enumerate() {
        input.data_mut()[row * in_len..(row + 1) * in_len]
            .copy_from_slice(samples[idx].input.data());
        target.data_mut()[row * t_len..(row + 1) * t_len]
            .copy_from_slice(samples[idx].target.data());
    }
    (input, target)
}

/// Adam training over the sample list. Deterministic given the seed (which
/// drives batch shuffling); the initial store is cloned, never mutated.
pub fn train(
    net: &crate::net::NetworkInstance,
    initial: &ParamStore,
    samples: &[Sample],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.check()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut params = initial.clone();
    let mut m: Vec<Tensor> = params
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    let mut v: Vec<Tensor> = m.clone();
    let mut step = 0u32;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut sq_sum = 0.0;
        let mut px_count = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (input, target) = stack_batch(samples, chunk);
            let cache = forward_cached(net, &params, &input).map_err(|e| match e {
                Error::Numeric { op, detail } => Error::Training {
                    epoch,
                    detail: format!("{op}: {detail}"),
                },
                other => other,
            })?;
            let (loss, grad) = mse_loss(cache.output(net), &target);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("loss diverged to {loss}"),
                });
            }
            sq_sum += loss * target.len() as f64;
            px_count += target.len();
            let (grads, _) = backward(net, &params, &cache, &grad).map_err(|e| match e {
                Error::Numeric { op, detail } => Error::Training {
                    epoch,
                    detail: format!("{op}: {detail}"),
                },
                other => other,
            })?;
            step += 1;
            let bias1 = 1.0 - config.beta1.powi(step as i32);
            let bias2 = 1.0 - config.beta2.powi(step as i32);
            for ((p, g), (mt, vt)) in params
                .tensors_mut()
                .iter_mut()
                .zip(&grads)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                for i in 0..p.len() {
                    let gi = g.data()[i];
                    let mi = config.beta1 * mt.data()[i] + (1.0 - config.beta1) * gi;
                    let vi = config.beta2 * vt.data()[i] + (1.0 - config.beta2) * gi * gi;
                    mt.data_mut()[i] = mi;
                    vt.data_mut()[i] = vi;
                    let m_hat = mi / bias1;
                    let v_hat = vi / bias2;
                    p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
                }
            }
        }
        history.push(sq_sum / px_count as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}

/// Thresholded accuracy: the fraction of pixels whose prediction/target
/// ratio (either way) stays under 1.25. Predictions are floored at
/// `PREDICTION_FLOOR` first.
pub fn accuracy(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "accuracy shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut hits = 0usize;
    for (p, &t) in pred.data().iter().zip(target.data()) {
        let p = p.max(PREDICTION_FLOOR);
        let ratio = (p / t).max(t / p);
        if ratio < ACCURACY_THRESHOLD {
            hits += 1;
        }
    }
    Ok(hits as f64 / pred.len() as f64)
}

/// Runs the network over held-out samples and pools the thresholded
/// accuracy across every pixel.
pub fn validation_accuracy(
    net: &crate::net::NetworkInstance,
    params: &ParamStore,
    samples: &[Sample],
) -> Result<f64> {
    let mut hits = 0.0;
    let mut total = 0usize;
    for chunk in samples.chunks(16) {
        let indices: Vec<usize> = (0..chunk.len()).collect();
        let (input, target) = stack_batch(chunk, &indices);
        let (pred, _) = forward(net, params, &input, false)?;
        hits += accuracy(&pred, &target)? * pred.len() as f64;
        total += pred.len();
    }
    Ok(hits / total as f64)
}

/// The multi-objective grade of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationGrade {
    pub grade: f64,
    pub accuracy: f64,
    pub params: u64,
    pub target_params: u64,
    pub alpha: f64,
    /// Compactness exponent: 0 when `params <= target_params`, else 1.
    pub r: u8,
}

/// Grade: `alpha * accuracy + (1 - alpha) * (target / params)^r` with the
/// exponent switching off the compactness penalty at or under the target.
pub fn grade(accuracy: f64, params: u64, target_params: u64, alpha: f64) -> ValidationGrade {
    let r = if params <= target_params { 0u8 } else { 1u8 };
    let compactness = (target_params as f64 / params as f64).powi(r as i32);
    ValidationGrade {
        grade: alpha * accuracy + (1.0 - alpha) * compactness,
        accuracy,
        params,
        target_params,
        alpha,
        r,
    }
}

/// A mutation reward, or the fallback ordering value when the parent score
/// cannot anchor a ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reward {
    pub value: f64,
    /// Set when the parent score was non-finite, negative, or near zero;
    /// `value` is then the raw child score.
    pub fallback: bool,
}

/// Reward: `alpha * (child / parent score ratio) + (1 - alpha) *
/// (target / child params)^r`. Falls back to the raw child score when the
/// parent score is degenerate.
pub fn reward(
    parent_score: f64,
    child_score: f64,
    child_params: u64,
    target_params: u64,
    alpha: f64,
) -> Reward {
    if !parent_score.is_finite() || parent_score < PARENT_SCORE_TOL {
        return Reward {
            value: child_score,
            fallback: true,
        };
    }
    let r = if child_params <= target_params { 0 } else { 1 };
    let compactness = (target_params as f64 / child_params as f64).powi(r);
    Reward {
        value: alpha * (child_score / parent_score) + (1.0 - alpha) * compactness,
        fallback: false,
    }
}

/// Everything needed to turn a genome into a grade.
pub struct Evaluator<'a> {
    pub train_samples: &'a [Sample],
    pub val_samples: &'a [Sample],
    pub train_config: &'a TrainConfig,
    pub target_params: u64,
    pub alpha: f64,
}

/// Outcome of one full compile-init-train-grade cycle.
#[derive(Debug, Clone)]
pub struct GenomeEvaluation {
    pub grade: ValidationGrade,
    pub loss_history: Vec<f64>,
    pub params: ParamStore,
}

impl Evaluator<'_> {
    pub fn evaluate_genome(
        &self,
        genome: &ArchitectureGenome,
        init_seed: u64,
        train_seed: u64,
    ) -> Result<GenomeEvaluation> {
        let net = compile(genome)?;
        let initial = init_params(&net, init_seed);
        let outcome = train(&net, &initial, self.train_samples, self.train_config, train_seed)?;
        let acc = validation_accuracy(&net, &outcome.params, self.val_samples)?;
        Ok(GenomeEvaluation {
            grade: grade(acc, genome.param_count(), self.target_params, self.alpha),
            loss_history: outcome.loss_history,
            params: outcome.params,
        })
    }
}
