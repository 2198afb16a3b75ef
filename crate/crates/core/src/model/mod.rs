//! The "conquer" stage: S independent branches, each
//! `backbone → global average pool → BN neck → cosine classifier`.
//!
//! The BN-neck output is the branch embedding. The classifier consumes its
//! L2-normalised version; logits are `scale · cos(embedding, class row)`.
//! At test time every branch receives the same image and the embeddings are
//! concatenated in branch order.

use ndarray::{Array2, Array3, Array4, Axis, Ix2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::BranchTransform;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, global_avg_pool_backward, join, BatchNorm1d, Module, Param, ParamKind};
use crate::rng;

mod backbone;
pub mod checkpoint;
mod head;

pub use backbone::{Backbone, BackboneFactory, BackboneRegistry, BackboneSpec, SmallCnn, SMALL_CNN};
pub use head::{l2_normalize_backward, l2_normalize_rows, l2_normalize_rows_safe, ClassifierHead, CosineForward};

const INIT_STREAM: u64 = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Registry key of the backbone.
    pub backbone: String,
    /// Block widths for the built-in small CNN.
    pub channels: Vec<usize>,
    /// Fixed logit scale γ.
    pub scale: f64,
    /// Additive cosine margin m of the classification loss.
    pub margin: f64,
    /// Initialise every branch with the same weights.
    pub identical_init: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbone.is_empty() {
            return Err(Error::config("model.backbone", "must name a registered backbone"));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("model.channels", "needs at least one non-zero width"));
        }
        ClassifierHead::new(Array2::zeros((0, 0)), self.scale, self.margin).map(|_| ())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: SMALL_CNN.to_string(),
            channels: vec![32, 64, 128, 128],
            scale: 16.0,
            margin: 0.25,
            identical_init: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchRole {
    Master,
    /// Servant fed unmodified copies (multi-branch mutual-learning baselines).
    ServantGeneral,
    ServantOcclude,
    ServantScale,
}

impl BranchRole {
    /// Branch 0 is the master; later branches are servants named by the
    /// transform that feeds them.
    pub fn for_branch(index: usize, transform: BranchTransform) -> Self {
        match (index, transform) {
            (0, _) => BranchRole::Master,
            (_, BranchTransform::Identity) => BranchRole::ServantGeneral,
            (_, BranchTransform::Erase) => BranchRole::ServantOcclude,
            (_, BranchTransform::Scale) => BranchRole::ServantScale,
        }
    }

    pub fn is_master(self) -> bool {
        self == BranchRole::Master
    }
}

pub fn roles_for_plan(plan: &[BranchTransform]) -> Vec<BranchRole> {
    plan.iter().enumerate().map(|(i, &t)| BranchRole::for_branch(i, t)).collect()
}

/// One branch's outputs for a batch.
#[derive(Clone, Debug)]
pub struct BranchOutput {
    /// `B × C × h × w` backbone output.
    pub feature_map: Array4<f32>,
    /// `B × d` BN-neck embeddings.
    pub embedding: Array2<f64>,
    /// `B × M` cosine similarities to the class rows.
    pub cosines: Array2<f64>,
    pub scale: f64,
    /// Additive margin the classification loss applies to the true class.
    pub margin: f64,
}

impl BranchOutput {
    /// `scale · cosines`, the inputs to the class softmax.
    pub fn logits(&self) -> Array2<f64> {
        &self.cosines * self.scale
    }

    pub fn batch_size(&self) -> usize {
        self.embedding.nrows()
    }
}

/// Upstream gradient for one branch's outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchGrad {
    pub embedding: Array2<f64>,
    pub cosines: Array2<f64>,
}

impl BranchGrad {
    pub fn zeros(batch: usize, dim: usize, classes: usize) -> Self {
        Self {
            embedding: Array2::zeros((batch, dim)),
            cosines: Array2::zeros((batch, classes)),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.embedding.iter().chain(self.cosines.iter()).all(|&v| v == 0.0)
    }
}

pub struct Branch {
    pub role: BranchRole,
    pub backbone: Box<dyn Backbone>,
    pub neck: BatchNorm1d,
    /// `M × d` class rows.
    pub classifier: Param,
    scale: f64,
    margin: f64,
    cache: Option<(CosineForward, (usize, usize))>,
}

impl Branch {
    pub fn head(&self) -> ClassifierHead {
        let w = self
            .classifier
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-D classifier")
            .mapv(f64::from);
        ClassifierHead {
            weights: w,
            scale: self.scale,
            margin: self.margin,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Result<BranchOutput> {
        if train && x.dim().0 < 2 {
            return Err(Error::Precondition(
                "training-mode forward needs a batch of at least 2 (batch statistics)".into(),
            ));
        }
        let feature_map = self.backbone.forward(x, train)?;
        let (_, _, h, w) = feature_map.dim();
        let pooled = global_avg_pool(&feature_map);
        let embedding = self.neck.forward(&pooled, train)?.mapv(f64::from);
        let weights = self
            .classifier
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-D classifier")
            .mapv(f64::from);
        let cos = CosineForward::new_safe(embedding.view(), weights.view());
        let cosines = cos.cosines.clone();
        self.cache = train.then_some((cos, (h, w)));
        Ok(BranchOutput {
            feature_map,
            embedding,
            cosines,
            scale: self.scale,
            margin: self.margin,
        })
    }

    /// Backpropagates `grad` from the last training forward. The backbone is
    /// skipped entirely when `update_backbone` is false.
    pub fn backward(&mut self, grad: &BranchGrad, update_backbone: bool) {
        let (cos, (h, w)) = self.cache.take().expect("branch backward without a training forward");
        let (d_emb_head, d_w) = cos.backward(&grad.cosines);
        for (g, &d) in self.classifier.grad.iter_mut().zip(d_w.iter()) {
            *g += d as f32;
        }
        let d_emb = (&grad.embedding + &d_emb_head).mapv(|v| v as f32);
        let d_pooled = self.neck.backward(&d_emb);
        if update_backbone {
            let d_map = global_avg_pool_backward(&d_pooled, h, w);
            self.backbone.backward(&d_map);
        }
    }
}

impl Module for Branch {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.neck.visit(&join(prefix, "neck"), f);
        f(&join(prefix, "classifier.weight"), &mut self.classifier);
    }
}

pub struct MultiBranchModel {
    config: ModelConfig,
    branches: Vec<Branch>,
    num_classes: usize,
    embedding_dim: usize,
}

impl MultiBranchModel {
    pub fn new(config: &ModelConfig, plan: &[BranchTransform], num_classes: usize, seed: u64) -> Result<Self> {
        Self::with_registry(config, plan, num_classes, seed, &BackboneRegistry::default())
    }

    /// Builds `plan.len()` branches with independent initialisations (or one
    /// shared initialisation when `identical_init` is set).
    pub fn with_registry(
        config: &ModelConfig,
        plan: &[BranchTransform],
        num_classes: usize,
        seed: u64,
        registry: &BackboneRegistry,
    ) -> Result<Self> {
        if plan.is_empty() {
            return Err(Error::config("augment.branch_plan", "needs at least one branch"));
        }
        if num_classes < 2 {
            return Err(Error::Precondition(format!(
                "classification needs at least 2 identities, got {num_classes}"
            )));
        }
        config.validate()?;
        let mut branches = Vec::with_capacity(plan.len());
        for (k, role) in roles_for_plan(plan).into_iter().enumerate() {
            let init = if config.identical_init { 0 } else { k as u64 };
            let mut r = rng::stream(rng::mix(&[seed, init]), INIT_STREAM);
            let backbone = registry.build(config, &mut r)?;
            let dim = backbone.spec().output_channels;
            let normal = Normal::new(0.0, 0.01).expect("finite std");
            let w: Vec<f32> = (0..num_classes * dim).map(|_| normal.sample(&mut r) as f32).collect();
            let classifier = Param::new(
                ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[num_classes, dim]), w).expect("classifier shape"),
                ParamKind::Weight,
            );
            branches.push(Branch {
                role,
                backbone,
                neck: BatchNorm1d::new(dim),
                classifier,
                scale: config.scale,
                margin: config.margin,
                cache: None,
            });
        }
        let embedding_dim = branches[0].backbone.spec().output_channels;
        if branches.iter().any(|b| b.backbone.spec().output_channels != embedding_dim) {
            return Err(Error::config("model.backbone", "all branches must share the embedding dimension"));
        }
        Ok(Self {
            config: config.clone(),
            branches,
            num_classes,
            embedding_dim,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Branch] {
        &mut self.branches
    }

    pub fn roles(&self) -> Vec<BranchRole> {
        self.branches.iter().map(|b| b.role).collect()
    }

    pub fn forward_multibranch(&mut self, inputs: &[Array4<f32>], train: bool) -> Result<Vec<BranchOutput>> {
        forward_multibranch(self, inputs, train)
    }

    /// Backpropagates one upstream gradient per branch.
    pub fn backward(&mut self, grads: &[BranchGrad], update_backbone: bool) -> Result<()> {
        if grads.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "{} branch gradients for {} branches",
                grads.len(),
                self.branches.len()
            )));
        }
        for (b, g) in self.branches.iter_mut().zip(grads) {
            b.backward(g, update_backbone);
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.grad.fill(0.0));
    }

    /// Inference-mode concatenated embeddings (`B × S·d`); every branch sees
    /// the same input.
    pub fn extract_features(&mut self, x: &Array4<f32>) -> Result<Array2<f32>> {
        let b = x.dim().0;
        let mut out = Array2::zeros((b, self.num_branches() * self.embedding_dim));
        let d = self.embedding_dim;
        for (k, branch) in self.branches.iter_mut().enumerate() {
            let o = branch.forward(x, false)?;
            out.slice_mut(ndarray::s![.., k * d..(k + 1) * d])
                .assign(&o.embedding.mapv(|v| v as f32));
        }
        Ok(out)
    }

    /// Parameters under `branch{k}.…` names.
    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        Module::visit(self, prefix, f)
    }

    /// Visits with a flag marking backbone parameters.
    pub fn visit_grouped(&mut self, f: &mut dyn FnMut(&str, bool, &mut Param)) {
        for (k, b) in self.branches.iter_mut().enumerate() {
            let p = format!("branch{k}");
            b.backbone.visit(&join(&p, "backbone"), &mut |n, q| f(n, true, q));
            b.neck.visit(&join(&p, "neck"), &mut |n, q| f(n, false, q));
            f(&join(&p, "classifier.weight"), false, &mut b.classifier);
        }
    }

    /// Order-sensitive checksum of every backbone parameter value.
    pub fn backbone_checksum(&mut self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        self.visit_grouped(&mut |_, is_backbone, p| {
            if is_backbone && p.is_trainable() {
                for v in p.value.iter() {
                    h = (h ^ v.to_bits() as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        });
        h
    }
}

impl Module for MultiBranchModel {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (k, b) in self.branches.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("branch{k}")), f);
        }
    }
}

pub fn forward_branch(branch: &mut Branch, x: &Array4<f32>, train: bool) -> Result<BranchOutput> {
    branch.forward(x, train)
}

/// Branch `k` consumes `inputs[k]`.
pub fn forward_multibranch(model: &mut MultiBranchModel, inputs: &[Array4<f32>], train: bool) -> Result<Vec<BranchOutput>> {
    if inputs.len() != model.branches.len() {
        return Err(Error::Shape(format!(
            "{} input batches for {} branches",
            inputs.len(),
            model.branches.len()
        )));
    }
    model
        .branches
        .iter_mut()
        .zip(inputs)
        .map(|(b, x)| b.forward(x, train))
        .collect()
}

/// Concatenated test-time feature of one normalised `3 × H × W` image.
pub fn extract_concat_features(model: &mut MultiBranchModel, image: &Array3<f32>) -> Result<Vec<f32>> {
    let x = image.clone().insert_axis(Axis(0));
    Ok(model.extract_features(&x)?.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests;
