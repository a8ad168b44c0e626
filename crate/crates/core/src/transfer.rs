//! Iterative global sentiment transfer.
//!
//! The output image starts as the input and is optimized with Adam against
//! `L = alpha * L_content + beta * L_sentiment`, where the content term is
//! the mean squared feature difference at one tap and the sentiment term
//! averages mean squared Gram differences over all five taps. Source and
//! reference features are extracted once and frozen; only the iterate's
//! pixels move. Loss accumulation happens in f64 regardless of the engine
//! element type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{Backbone, BackboneError, BackboneSpec, FeaturePyramid, Scalar, Tensor};
use crate::raster::{self, ImageTensor};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("NonFiniteLoss: loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

/// Scalars of the total loss; `alpha` scales content, `beta` sentiment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1_000_000.0,
        }
    }
}

/// Channel-by-channel Gram matrix, accumulated and stored in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    channels: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.channels + b]
    }
}

/// Per-level Gram matrices of a feature pyramid.
#[derive(Debug, Clone)]
pub struct GramSet {
    pub levels: [GramMatrix; 5],
}

/// `G = A A^T / (C*H*W)` with `A` the feature tensor flattened to `C x (H*W)`.
pub fn gram<F: Scalar>(f: &Tensor<F>) -> GramMatrix {
    let (c, h, w) = f.shape();
    let hw = h * w;
    let a: Vec<f64> = f.data().iter().map(|v| v.to_f64()).collect();
    let mut g = vec![0.0f64; c * c];
    unsafe {
        f64::gemm(
            c,
            hw,
            c,
            1.0 / (c * hw) as f64,
            a.as_ptr(),
            hw as isize,
            1,
            a.as_ptr(),
            1,
            hw as isize,
            0.0,
            g.as_mut_ptr(),
            c as isize,
            1,
        );
    }
    GramMatrix { channels: c, data: g }
}

pub fn gram_set<F: Scalar>(p: &FeaturePyramid<F>) -> GramSet {
    GramSet {
        levels: [0, 1, 2, 3, 4].map(|i| gram(&p.levels[i])),
    }
}

fn check_pair<F: Scalar>(
    a: &FeaturePyramid<F>,
    b: &FeaturePyramid<F>,
    what: &str,
) -> Result<(), TransferError> {
    if a.backbone != b.backbone {
        return Err(TransferError::ShapeMismatch(format!(
            "{what}: pyramids from different backbones ({} vs {})",
            a.backbone, b.backbone
        )));
    }
    for i in 0..5 {
        if a.levels[i].shape() != b.levels[i].shape() {
            return Err(TransferError::ShapeMismatch(format!(
                "{what}: level {} is {:?} vs {:?}",
                i + 1,
                a.levels[i].shape(),
                b.levels[i].shape()
            )));
        }
    }
    Ok(())
}

/// Mean squared feature difference at the (1-based) content tap.
pub fn content_loss<F: Scalar>(
    f: &FeaturePyramid<F>,
    f_s: &FeaturePyramid<F>,
    content_tap: usize,
) -> Result<f64, TransferError> {
    assert!((1..=5).contains(&content_tap), "content tap is 1-based");
    check_pair(f, f_s, "content_loss")?;
    let (a, b) = (&f.levels[content_tap - 1], &f_s.levels[content_tap - 1]);
    Ok(mse(a, b))
}

fn mse<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    sum / a.len() as f64
}

fn gram_mse(a: &GramMatrix, b: &GramMatrix) -> f64 {
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    sum / a.data.len() as f64
}

fn sentiment_loss_grams(f_grams: &GramSet, target: &GramSet) -> f64 {
    let total: f64 = f_grams
        .levels
        .iter()
        .zip(&target.levels)
        .map(|(a, b)| gram_mse(a, b))
        .sum();
    total / 5.0
}

/// Mean over the five taps of the mean squared Gram difference.
pub fn sentiment_loss<F: Scalar>(
    f: &FeaturePyramid<F>,
    f_t: &FeaturePyramid<F>,
) -> Result<f64, TransferError> {
    // Gram matrices are C x C, so only channel counts must agree.
    if f.backbone != f_t.backbone {
        return Err(TransferError::ShapeMismatch(
            "sentiment_loss: pyramids from different backbones".into(),
        ));
    }
    for i in 0..5 {
        if f.levels[i].channels() != f_t.levels[i].channels() {
            return Err(TransferError::ShapeMismatch(format!(
                "sentiment_loss: level {} channels {} vs {}",
                i + 1,
                f.levels[i].channels(),
                f_t.levels[i].channels()
            )));
        }
    }
    Ok(sentiment_loss_grams(&gram_set(f), &gram_set(f_t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub content: f64,
    pub sentiment: f64,
}

/// `L = alpha * L_content + beta * L_sentiment`, composed exactly from the
/// two component losses.
pub fn total_loss<F: Scalar>(
    f: &FeaturePyramid<F>,
    f_s: &FeaturePyramid<F>,
    f_t: &FeaturePyramid<F>,
    weights: &LossWeights,
    content_tap: usize,
) -> Result<LossBreakdown, TransferError> {
    let content = content_loss(f, f_s, content_tap)?;
    let sentiment = sentiment_loss(f, f_t)?;
    Ok(LossBreakdown {
        total: weights.alpha * content + weights.beta * sentiment,
        content,
        sentiment,
    })
}

/// Full configuration of one transfer run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub backbone: BackboneSpec,
    pub working_long_side: usize,
    pub weights: LossWeights,
    pub trace_every: usize,
}

impl TransferConfig {
    pub fn with_backbone(backbone: BackboneSpec) -> Self {
        Self {
            iterations: 500,
            step_size: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            backbone,
            working_long_side: 512,
            weights: LossWeights::default(),
            trace_every: 10,
        }
    }

    fn validate(&self) -> Result<(), TransferError> {
        if self.iterations < 1 {
            return Err(TransferError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(TransferError::InvalidConfig("step_size must be > 0".into()));
        }
        if self.weights.alpha < 0.0 || self.weights.beta < 0.0 {
            return Err(TransferError::InvalidConfig("alpha and beta must be >= 0".into()));
        }
        if self.weights.alpha == 0.0 && self.weights.beta == 0.0 {
            return Err(TransferError::InvalidConfig(
                "alpha and beta must not both be zero".into(),
            ));
        }
        if !(1..=5).contains(&self.backbone.content_tap) {
            return Err(TransferError::InvalidConfig("content_tap must be in 1..=5".into()));
        }
        if self.working_long_side < crate::backbone::MIN_LONG_SIDE {
            return Err(TransferError::InvalidConfig(format!(
                "working_long_side must be >= {}",
                crate::backbone::MIN_LONG_SIDE
            )));
        }
        if self.trace_every < 1 {
            return Err(TransferError::InvalidConfig("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self::with_backbone(BackboneSpec::densenet121())
    }
}

/// One traced loss evaluation (before the Adam step of that iteration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub total: f64,
    pub content: f64,
    pub sentiment: f64,
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    /// Output image at the input's original resolution.
    pub output: ImageTensor,
    pub trace: Vec<TracePoint>,
    pub config: TransferConfig,
}

pub fn trace_to_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("iteration,total,content,sentiment\n");
    for p in trace {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e}\n",
            p.iteration, p.total, p.content, p.sentiment
        ));
    }
    out
}

/// An in-flight optimization; step it manually or drive it with
/// [`run_transfer`]. Stepping past `config.iterations` is allowed.
pub struct TransferSession<'b, F: Scalar> {
    backbone: &'b Backbone<F>,
    config: TransferConfig,
    orig_height: usize,
    orig_width: usize,
    f_s: FeaturePyramid<F>,
    target_grams: GramSet,
    // Iterate and Adam state, in f64 for stable moment estimates.
    z: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    shape: (usize, usize, usize),
    iteration: usize,
    trace: Vec<TracePoint>,
}

impl<'b, F: Scalar> TransferSession<'b, F> {
    pub fn new(
        backbone: &'b Backbone<F>,
        input: &ImageTensor,
        reference: &ImageTensor,
        config: TransferConfig,
    ) -> Result<Self, TransferError> {
        config.validate()?;
        if config.backbone.id != backbone.spec().id {
            return Err(TransferError::InvalidConfig(format!(
                "config names backbone {} but a {} is loaded",
                config.backbone.id,
                backbone.spec().id
            )));
        }
        let work_input = raster::resize_long_side(input, config.working_long_side);
        let work_ref = raster::resize_long_side(reference, config.working_long_side);

        let z0 = backbone.preprocess(&work_input);
        // The source pyramid comes from the exact tensor the iterate starts
        // at, so the identity case (reference == input) has zero loss and
        // zero gradient from the first step.
        let f_s = backbone.extract_pre(&z0);
        let f_t = backbone.extract_features(&work_ref)?;
        let target_grams = gram_set(&f_t);

        let z: Vec<f64> = z0.data().iter().map(|v| v.to_f64()).collect();
        let n = z.len();
        Ok(Self {
            backbone,
            config,
            orig_height: input.height(),
            orig_width: input.width(),
            f_s,
            target_grams,
            z,
            m: vec![0.0; n],
            v: vec![0.0; n],
            shape: z0.shape(),
            iteration: 0,
            trace: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }

    pub fn config(&self) -> &TransferConfig {
        &self.config
    }

    fn z_tensor(&self) -> Tensor<F> {
        let (c, h, w) = self.shape;
        Tensor::from_vec(c, h, w, self.z.iter().map(|&v| F::from_f64(v)).collect())
    }

    /// Runs one iteration: loss at the current iterate, then one Adam step.
    pub fn step(&mut self) -> Result<TracePoint, TransferError> {
        self.iteration += 1;
        let t = self.iteration;
        let z_tensor = self.z_tensor();
        let (pyramid, rec) = self.backbone.forward_recorded(&z_tensor);

        let content = mse(
            &pyramid.levels[self.config.backbone.content_tap - 1],
            &self.f_s.levels[self.config.backbone.content_tap - 1],
        );
        let grams = gram_set(&pyramid);
        let sentiment = sentiment_loss_grams(&grams, &self.target_grams);
        let alpha = self.config.weights.alpha;
        let beta = self.config.weights.beta;
        let point = TracePoint {
            iteration: t,
            total: alpha * content + beta * sentiment,
            content,
            sentiment,
        };
        if !point.total.is_finite() {
            return Err(TransferError::NonFiniteLoss { iteration: t });
        }
        if t == 1 || t % self.config.trace_every == 0 || t == self.config.iterations {
            self.trace.push(point);
        }

        // Seed tap gradients. Sentiment contributes at every level,
        // content at its tap.
        let mut tap_grads: [Option<Tensor<F>>; 5] = [None, None, None, None, None];
        for i in 0..5 {
            let f = &pyramid.levels[i];
            let (c, h, w) = f.shape();
            let hw = h * w;
            // dL/dG = beta/5 * 2 (G - Gt) / C^2; dL/dA = 2 (dL/dG) A / (C*HW)
            // with both factors symmetric, giving one dgemm per level.
            let coef = beta * 4.0 / (5.0 * (c * c) as f64 * (c * hw) as f64);
            if coef != 0.0 {
                let delta: Vec<f64> = grams.levels[i]
                    .data()
                    .iter()
                    .zip(self.target_grams.levels[i].data())
                    .map(|(a, b)| a - b)
                    .collect();
                let a64: Vec<f64> = f.data().iter().map(|v| v.to_f64()).collect();
                let mut grad = vec![0.0f64; c * hw];
                unsafe {
                    f64::gemm(
                        c,
                        c,
                        hw,
                        coef,
                        delta.as_ptr(),
                        c as isize,
                        1,
                        a64.as_ptr(),
                        hw as isize,
                        1,
                        0.0,
                        grad.as_mut_ptr(),
                        hw as isize,
                        1,
                    );
                }
                tap_grads[i] = Some(Tensor::from_vec(
                    c,
                    h,
                    w,
                    grad.iter().map(|&v| F::from_f64(v)).collect(),
                ));
            }
        }
        if alpha != 0.0 {
            let ct = self.config.backbone.content_tap - 1;
            let f = &pyramid.levels[ct];
            let fs = &self.f_s.levels[ct];
            let scale = 2.0 * alpha / f.len() as f64;
            let add: Vec<F> = f
                .data()
                .iter()
                .zip(fs.data())
                .map(|(a, b)| F::from_f64(scale * (a.to_f64() - b.to_f64())))
                .collect();
            let (c, h, w) = f.shape();
            let add = Tensor::from_vec(c, h, w, add);
            match &mut tap_grads[ct] {
                Some(g) => g.add_assign(&add),
                slot => *slot = Some(add),
            }
        }

        let dz = self.backbone.backward(rec, tap_grads);

        // Adam with bias correction.
        let (b1, b2) = (self.config.adam_beta1, self.config.adam_beta2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let lr = self.config.step_size;
        let eps = self.config.adam_eps;
        for ((zi, (mi, vi)), gi) in self
            .z
            .iter_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .zip(dz.data())
        {
            let g = gi.to_f64();
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *zi -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(point)
    }

    /// Current iterate as an image at the working resolution.
    pub fn preview(&self) -> ImageTensor {
        let mut z = self.z_tensor();
        self.backbone.clamp_to_valid(&mut z);
        self.backbone.unpreprocess(&z)
    }

    /// Clamps the iterate into the valid range and resizes back to the
    /// input's original resolution.
    pub fn finish(self) -> TransferResult {
        let mut z = self.z_tensor();
        self.backbone.clamp_to_valid(&mut z);
        let working = self.backbone.unpreprocess(&z);
        let output = if (working.height(), working.width()) == (self.orig_height, self.orig_width)
        {
            working
        } else {
            crate::raster::resize_exact(&working, self.orig_height, self.orig_width)
        };
        TransferResult {
            output,
            trace: self.trace,
            config: self.config,
        }
    }
}

/// Runs the full configured optimization.
pub fn run_transfer<F: Scalar>(
    backbone: &Backbone<F>,
    input: &ImageTensor,
    reference: &ImageTensor,
    config: TransferConfig,
) -> Result<TransferResult, TransferError> {
    let mut session = TransferSession::new(backbone, input, reference, config)?;
    for _ in 0..session.config.iterations {
        session.step()?;
    }
    Ok(session.finish())
}
