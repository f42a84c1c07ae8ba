//! Extended matrix-factorization rating predictor.
//!
//! The raw score for (u, i) is
//! `x_u . y_i + alpha * (e_u . gamma_i) + beta * (gamma_u . e_i)`, where
//! `e_u`, `e_i` are fused per-meta-path embeddings and the gamma factors pair
//! against the opposite side's embedding, decoupling embedding space from
//! the MF latent space. Latent factors, pairing factors and fusion
//! parameters are trained jointly by SGD over sampled rating triples. With
//! alpha = beta = 0 the embedding terms vanish and training reduces exactly
//! to plain MF, which doubles as the comparison baseline.
//!
//! Scores are never clipped during training; serving clips to the declared
//! rating scale.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingFileRef, EmbeddingMatrix, EmbeddingSet};
use crate::error::{Error, Result};
use crate::fusion::{fuse, fusion_gradients, FusionGrads, FusionKind, FusionParams};
use crate::hin::{RatingDataset, RatingRecord, RatingScale};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Latent factor count D.
    pub latent_dim: usize,
    /// Weight of the user-embedding term.
    pub alpha: f64,
    /// Weight of the item-embedding term.
    pub beta: f64,
    /// Regularization for the latent factors x, y.
    pub lambda: f64,
    /// Regularization for the fusion parameters.
    pub lambda_theta: f64,
    /// Regularization for the pairing factors.
    pub lambda_gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            latent_dim: 10,
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.01,
            lambda_theta: 0.01,
            lambda_gamma: 0.01,
            learning_rate: 0.02,
            epochs: 40,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.lambda < 0.0 || self.lambda_theta < 0.0 || self.lambda_gamma < 0.0 {
            return Err(Error::Config(
                "regularization weights must be nonnegative".into(),
            ));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config("alpha and beta must be finite".into()));
        }
        Ok(())
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub objective: f64,
    pub wall_time_s: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub gamma_norm: f64,
    pub theta_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn objectives(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.objective).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "epoch,objective,wall_time_s,x_norm,y_norm,gamma_norm,theta_norm"
        )?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.epoch, e.objective, e.wall_time_s, e.x_norm, e.y_norm, e.gamma_norm, e.theta_norm
            )?;
        }
        Ok(())
    }
}

struct HinSide {
    fusion_kind: FusionKind,
    user_embeddings: Arc<EmbeddingSet>,
    item_embeddings: Arc<EmbeddingSet>,
    user_paths: Vec<String>,
    item_paths: Vec<String>,
    user_embed_dim: usize,
    item_embed_dim: usize,
    theta_u: FusionParams,
    theta_i: FusionParams,
    zero_user_emb: Vec<f64>,
    zero_item_emb: Vec<f64>,
    /// Provenance of the embedding files, required for persistence.
    file_refs: Option<(Vec<EmbeddingFileRef>, Vec<EmbeddingFileRef>)>,
}

pub struct HerecModel {
    hyper: HyperParams,
    scale: RatingScale,
    global_mean: f64,
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    x: Vec<f64>,
    y: Vec<f64>,
    gamma_u: Vec<f64>,
    gamma_i: Vec<f64>,
    hin: Option<HinSide>,
}

fn index_of(ids: &[String]) -> HashMap<String, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

impl HerecModel {
    /// Plain-MF model: latent factors only, no embedding terms. Serves as
    /// the comparison baseline.
    pub fn mf_baseline(
        mut users: Vec<String>,
        mut items: Vec<String>,
        scale: RatingScale,
        hyper: HyperParams,
    ) -> Result<Self> {
        hyper.validate()?;
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        let d = hyper.latent_dim;
        Ok(HerecModel {
            global_mean: scale.midpoint(),
            scale,
            x: vec![0.0; users.len() * d],
            y: vec![0.0; items.len() * d],
            gamma_u: Vec::new(),
            gamma_i: Vec::new(),
            user_index: index_of(&users),
            item_index: index_of(&items),
            users,
            items,
            hyper,
            hin: None,
        })
    }

    /// Full model with fused embedding terms. A side with zero meta-paths
    /// fuses to the zero vector and contributes nothing.
    pub fn with_embeddings(
        users: Vec<String>,
        items: Vec<String>,
        scale: RatingScale,
        hyper: HyperParams,
        fusion_kind: FusionKind,
        user_embeddings: Arc<EmbeddingSet>,
        item_embeddings: Arc<EmbeddingSet>,
    ) -> Result<Self> {
        let mut model = Self::mf_baseline(users, items, scale, hyper)?;
        let d = hyper.latent_dim;
        let user_paths: Vec<String> = user_embeddings.labels().map(|s| s.to_string()).collect();
        let item_paths: Vec<String> = item_embeddings.labels().map(|s| s.to_string()).collect();
        let user_embed_dim = user_embeddings.dim().unwrap_or(0);
        let item_embed_dim = item_embeddings.dim().unwrap_or(0);
        model.gamma_u = vec![0.0; model.users.len() * d];
        model.gamma_i = vec![0.0; model.items.len() * d];
        // Well-formed placeholder parameters; train() redraws them.
        let mut rng = seeded_rng(0);
        let user_entities: Vec<String> = if fusion_kind.is_personalized() {
            model.users.clone()
        } else {
            Vec::new()
        };
        let item_entities: Vec<String> = if fusion_kind.is_personalized() {
            model.items.clone()
        } else {
            Vec::new()
        };
        let theta_u =
            FusionParams::init(user_paths.len(), user_embed_dim, d, &user_entities, &mut rng);
        let theta_i =
            FusionParams::init(item_paths.len(), item_embed_dim, d, &item_entities, &mut rng);
        model.hin = Some(HinSide {
            fusion_kind,
            zero_user_emb: vec![0.0; user_embed_dim],
            zero_item_emb: vec![0.0; item_embed_dim],
            user_embeddings,
            item_embeddings,
            user_paths,
            item_paths,
            user_embed_dim,
            item_embed_dim,
            theta_u,
            theta_i,
            file_refs: None,
        });
        Ok(model)
    }

    /// Attach the embedding file references needed to persist this model.
    pub fn set_embedding_refs(
        &mut self,
        user_refs: Vec<EmbeddingFileRef>,
        item_refs: Vec<EmbeddingFileRef>,
    ) -> Result<()> {
        let hin = self
            .hin
            .as_mut()
            .ok_or_else(|| Error::Invalid("baseline model has no embedding files".into()))?;
        for label in &hin.user_paths {
            if !user_refs.iter().any(|r| &r.label == label) {
                return Err(Error::Invalid(format!(
                    "missing user embedding reference for meta-path {label}"
                )));
            }
        }
        for label in &hin.item_paths {
            if !item_refs.iter().any(|r| &r.label == label) {
                return Err(Error::Invalid(format!(
                    "missing item embedding reference for meta-path {label}"
                )));
            }
        }
        hin.file_refs = Some((user_refs, item_refs));
        Ok(())
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn fusion_kind(&self) -> Option<FusionKind> {
        self.hin.as_ref().map(|h| h.fusion_kind)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn x_row(&self, user: &str) -> Option<&[f64]> {
        let d = self.hyper.latent_dim;
        self.user_index
            .get(user)
            .map(|&r| &self.x[r * d..(r + 1) * d])
    }

    pub fn y_row(&self, item: &str) -> Option<&[f64]> {
        let d = self.hyper.latent_dim;
        self.item_index
            .get(item)
            .map(|&r| &self.y[r * d..(r + 1) * d])
    }

    fn x_at(&self, r: usize) -> &[f64] {
        let d = self.hyper.latent_dim;
        &self.x[r * d..(r + 1) * d]
    }

    fn y_at(&self, r: usize) -> &[f64] {
        let d = self.hyper.latent_dim;
        &self.y[r * d..(r + 1) * d]
    }

    fn gamma_u_at(&self, r: usize) -> &[f64] {
        let d = self.hyper.latent_dim;
        &self.gamma_u[r * d..(r + 1) * d]
    }

    fn gamma_i_at(&self, r: usize) -> &[f64] {
        let d = self.hyper.latent_dim;
        &self.gamma_i[r * d..(r + 1) * d]
    }

    fn user_emb_refs<'a>(&self, hin: &'a HinSide, user: &str) -> Vec<&'a [f64]> {
        hin.user_paths
            .iter()
            .map(|label| {
                hin.user_embeddings
                    .get(label)
                    .and_then(|m| m.get(user))
                    .unwrap_or(&hin.zero_user_emb)
            })
            .collect()
    }

    fn item_emb_refs<'a>(&self, hin: &'a HinSide, item: &str) -> Vec<&'a [f64]> {
        hin.item_paths
            .iter()
            .map(|label| {
                hin.item_embeddings
                    .get(label)
                    .and_then(|m| m.get(item))
                    .unwrap_or(&hin.zero_item_emb)
            })
            .collect()
    }

    /// Fused user embedding under the current fusion parameters.
    pub fn fused_user(&self, user: &str) -> Result<Vec<f64>> {
        let hin = self
            .hin
            .as_ref()
            .ok_or_else(|| Error::Invalid("model has no embedding side".into()))?;
        let embs = self.user_emb_refs(hin, user);
        fuse(hin.fusion_kind, &embs, &hin.theta_u, user)
    }

    pub fn fused_item(&self, item: &str) -> Result<Vec<f64>> {
        let hin = self
            .hin
            .as_ref()
            .ok_or_else(|| Error::Invalid("model has no embedding side".into()))?;
        let embs = self.item_emb_refs(hin, item);
        fuse(hin.fusion_kind, &embs, &hin.theta_i, item)
    }

    /// Plain inner-product score `x_u . y_i`. A single unknown side scores
    /// 0 (its factors read as zero vectors); both unknown falls back to the
    /// global mean rating.
    pub fn predict_base(&self, user: &str, item: &str) -> f64 {
        match (self.user_index.get(user), self.item_index.get(item)) {
            (Some(&u), Some(&i)) => dot(self.x_at(u), self.y_at(i)),
            (None, None) => self.global_mean,
            _ => 0.0,
        }
    }

    /// Raw (unclipped) score including the embedding terms. Fallbacks as in
    /// [`predict_base`](Self::predict_base): every term carries a factor
    /// from the unknown side, so a single unknown side scores 0.
    pub fn predict(&self, user: &str, item: &str) -> f64 {
        match (self.user_index.get(user), self.item_index.get(item)) {
            (Some(&u), Some(&i)) => {
                let mut r = dot(self.x_at(u), self.y_at(i));
                if self.hin.is_some() {
                    if self.hyper.alpha != 0.0 {
                        let e_u = self.fused_user(user).expect("model entities resolve");
                        r += self.hyper.alpha * dot(&e_u, self.gamma_i_at(i));
                    }
                    if self.hyper.beta != 0.0 {
                        let e_i = self.fused_item(item).expect("model entities resolve");
                        r += self.hyper.beta * dot(self.gamma_u_at(u), &e_i);
                    }
                }
                r
            }
            (None, None) => self.global_mean,
            _ => 0.0,
        }
    }

    /// Serving-time score, clipped to the declared rating scale.
    pub fn predict_clipped(&self, user: &str, item: &str) -> f64 {
        self.scale.clip(self.predict(user, item))
    }

    /// One SGD update from a single rating triple. All gradients are
    /// evaluated at the pre-step parameters, then applied together.
    pub fn sgd_step(&mut self, rec: &RatingRecord) -> Result<()> {
        let u = *self
            .user_index
            .get(&rec.user)
            .ok_or_else(|| Error::UnknownEntity(rec.user.clone()))?;
        let i = *self
            .item_index
            .get(&rec.item)
            .ok_or_else(|| Error::UnknownEntity(rec.item.clone()))?;
        let d = self.hyper.latent_dim;
        let eta = self.hyper.learning_rate;
        let (alpha, beta) = (self.hyper.alpha, self.hyper.beta);
        let (lambda, lambda_theta, lambda_gamma) = (
            self.hyper.lambda,
            self.hyper.lambda_theta,
            self.hyper.lambda_gamma,
        );

        let x_old: Vec<f64> = self.x_at(u).to_vec();
        let y_old: Vec<f64> = self.y_at(i).to_vec();

        let mut r_hat = dot(&x_old, &y_old);
        let mut fused_u = None;
        let mut fused_i = None;
        let mut theta_u_grads = None;
        let mut theta_i_grads = None;
        if let Some(hin) = &self.hin {
            if alpha != 0.0 {
                let embs = self.user_emb_refs(hin, &rec.user);
                let e_u = fuse(hin.fusion_kind, &embs, &hin.theta_u, &rec.user)?;
                r_hat += alpha * dot(&e_u, self.gamma_i_at(i));
                // Gradients with respect to the pre-step fusion parameters.
                theta_u_grads = Some(fusion_gradients(
                    hin.fusion_kind,
                    &embs,
                    &hin.theta_u,
                    &rec.user,
                    self.gamma_i_at(i),
                )?);
                fused_u = Some(e_u);
            }
            if beta != 0.0 {
                let embs = self.item_emb_refs(hin, &rec.item);
                let e_i = fuse(hin.fusion_kind, &embs, &hin.theta_i, &rec.item)?;
                r_hat += beta * dot(self.gamma_u_at(u), &e_i);
                theta_i_grads = Some(fusion_gradients(
                    hin.fusion_kind,
                    &embs,
                    &hin.theta_i,
                    &rec.item,
                    self.gamma_u_at(u),
                )?);
                fused_i = Some(e_i);
            }
        }
        if !r_hat.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite prediction for ({}, {}); lower the learning rate",
                rec.user, rec.item
            )));
        }
        let err = rec.rating - r_hat;

        // Latent factors: standard regularized MF step.
        for k in 0..d {
            self.x[u * d + k] = x_old[k] + eta * (err * y_old[k] - lambda * x_old[k]);
            self.y[i * d + k] = y_old[k] + eta * (err * x_old[k] - lambda * y_old[k]);
        }

        if self.hin.is_some() {
            // Pairing factors.
            if beta != 0.0 || lambda_gamma != 0.0 {
                for k in 0..d {
                    let old = self.gamma_u[u * d + k];
                    let data = fused_i.as_ref().map_or(0.0, |e| beta * err * e[k]);
                    self.gamma_u[u * d + k] = old + eta * (data - lambda_gamma * old);
                }
            }
            if alpha != 0.0 || lambda_gamma != 0.0 {
                for k in 0..d {
                    let old = self.gamma_i[i * d + k];
                    let data = fused_u.as_ref().map_or(0.0, |e| alpha * err * e[k]);
                    self.gamma_i[i * d + k] = old + eta * (data - lambda_gamma * old);
                }
            }

            let hin = self.hin.as_mut().expect("checked above");
            apply_fusion_update(
                &mut hin.theta_u,
                &rec.user,
                theta_u_grads.as_ref(),
                eta * alpha * err,
                eta * lambda_theta,
            );
            apply_fusion_update(
                &mut hin.theta_i,
                &rec.item,
                theta_i_grads.as_ref(),
                eta * beta * err,
                eta * lambda_theta,
            );
        }
        Ok(())
    }

    /// Squared-error objective: per-record squared loss plus per-record
    /// regularization of the latent and pairing factors, plus one global
    /// fusion-parameter penalty.
    pub fn objective(&self, data: &RatingDataset) -> f64 {
        let mut fused_users: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut fused_items: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut total = 0.0;
        for rec in data.records() {
            let (ui, ii) = (
                self.user_index.get(&rec.user).copied(),
                self.item_index.get(&rec.item).copied(),
            );
            let r_hat = match (ui, ii) {
                (Some(u), Some(i)) => {
                    let mut r = dot(self.x_at(u), self.y_at(i));
                    if self.hin.is_some() {
                        if self.hyper.alpha != 0.0 {
                            let e_u = fused_users.entry(u).or_insert_with(|| {
                                self.fused_user(&rec.user).expect("model entity")
                            });
                            r += self.hyper.alpha * dot(e_u, self.gamma_i_at(i));
                        }
                        if self.hyper.beta != 0.0 {
                            let e_i = fused_items.entry(i).or_insert_with(|| {
                                self.fused_item(&rec.item).expect("model entity")
                            });
                            r += self.hyper.beta * dot(self.gamma_u_at(u), e_i);
                        }
                    }
                    r
                }
                (None, None) => self.global_mean,
                _ => 0.0,
            };
            let e = rec.rating - r_hat;
            total += e * e;
            if let Some(u) = ui {
                total += self.hyper.lambda * sq_norm(self.x_at(u));
                if self.hin.is_some() {
                    total += self.hyper.lambda_gamma * sq_norm(self.gamma_u_at(u));
                }
            }
            if let Some(i) = ii {
                total += self.hyper.lambda * sq_norm(self.y_at(i));
                if self.hin.is_some() {
                    total += self.hyper.lambda_gamma * sq_norm(self.gamma_i_at(i));
                }
            }
        }
        if let Some(hin) = &self.hin {
            total += self.hyper.lambda_theta * (hin.theta_u.sq_norm() + hin.theta_i.sq_norm());
        }
        total
    }

    /// Initialize parameters and run `epochs` passes of `|data|` uniformly
    /// sampled triples each. Stops early once the objective's relative
    /// change stays below 1e-5 for three consecutive epochs.
    pub fn train(&mut self, data: &RatingDataset) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        for rec in data.records() {
            if !self.user_index.contains_key(&rec.user) {
                return Err(Error::UnknownEntity(rec.user.clone()));
            }
            if !self.item_index.contains_key(&rec.item) {
                return Err(Error::UnknownEntity(rec.item.clone()));
            }
        }
        self.global_mean = data.mean_rating();
        self.initialize();

        let mut sample_rng = seeded_rng(derive_seed(self.hyper.seed, &[b"sampling"]));
        let n = data.len();
        let mut report = TrainReport::default();
        let mut small_changes = 0usize;
        let mut prev_objective = f64::INFINITY;
        for epoch in 1..=self.hyper.epochs {
            let started = Instant::now();
            for _ in 0..n {
                let k = sample_rng.random_range(0..n);
                self.sgd_step(&data.records()[k])?;
            }
            let objective = self.objective(data);
            if !objective.is_finite() {
                return Err(Error::Divergence(format!(
                    "objective became non-finite at epoch {epoch}"
                )));
            }
            let (gamma_norm, theta_norm) = match &self.hin {
                Some(hin) => (
                    (sq_norm(&self.gamma_u) + sq_norm(&self.gamma_i)).sqrt(),
                    (hin.theta_u.sq_norm() + hin.theta_i.sq_norm()).sqrt(),
                ),
                None => (0.0, 0.0),
            };
            report.epochs.push(EpochStats {
                epoch,
                objective,
                wall_time_s: started.elapsed().as_secs_f64(),
                x_norm: sq_norm(&self.x).sqrt(),
                y_norm: sq_norm(&self.y).sqrt(),
                gamma_norm,
                theta_norm,
            });
            let rel_change = (prev_objective - objective).abs() / prev_objective.abs().max(1e-12);
            if rel_change < 1e-5 {
                small_changes += 1;
                if small_changes >= 3 {
                    report.stopped_early = true;
                    break;
                }
            } else {
                small_changes = 0;
            }
            prev_objective = objective;
        }
        Ok(report)
    }

    /// Draw every parameter from 0.1 * N(0, 1) (fusion path weights start
    /// uniform at 1/|P|). Latent factors draw first so a baseline model and
    /// a full model share x/y initializations bit-for-bit under one seed.
    /// `train` calls this; it is public so parameter-space diagnostics can
    /// work on an untrained model.
    pub fn initialize(&mut self) {
        let mut rng = seeded_rng(derive_seed(self.hyper.seed, &[b"params"]));
        fn draw(v: &mut [f64], rng: &mut impl Rng) {
            for x in v.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = 0.1 * z;
            }
        }
        let mut x = std::mem::take(&mut self.x);
        let mut y = std::mem::take(&mut self.y);
        draw(&mut x, &mut rng);
        draw(&mut y, &mut rng);
        self.x = x;
        self.y = y;
        if self.hin.is_some() {
            let mut gu = std::mem::take(&mut self.gamma_u);
            let mut gi = std::mem::take(&mut self.gamma_i);
            draw(&mut gu, &mut rng);
            draw(&mut gi, &mut rng);
            self.gamma_u = gu;
            self.gamma_i = gi;
            let hin = self.hin.as_mut().expect("checked");
            let user_entities: Vec<String> = if hin.fusion_kind.is_personalized() {
                self.users.clone()
            } else {
                Vec::new()
            };
            let item_entities: Vec<String> = if hin.fusion_kind.is_personalized() {
                self.items.clone()
            } else {
                Vec::new()
            };
            hin.theta_u = FusionParams::init(
                hin.user_paths.len(),
                hin.user_embed_dim,
                self.hyper.latent_dim,
                &user_entities,
                &mut rng,
            );
            hin.theta_i = FusionParams::init(
                hin.item_paths.len(),
                hin.item_embed_dim,
                self.hyper.latent_dim,
                &item_entities,
                &mut rng,
            );
        }
    }
}

fn apply_fusion_update(
    params: &mut FusionParams,
    entity: &str,
    grads: Option<&FusionGrads>,
    data_scale: f64,
    decay: f64,
) {
    let paths = params.paths();
    if paths == 0 {
        return;
    }
    match grads {
        Some(g) => {
            for l in 0..paths {
                for (m, gm) in params.transform_mut(l).iter_mut().zip(&g.transforms[l]) {
                    *m += data_scale * gm - decay * *m;
                }
                for (b, gb) in params.bias_mut(l).iter_mut().zip(&g.biases[l]) {
                    *b += data_scale * gb - decay * *b;
                }
            }
            if !g.weights.is_empty() {
                if let Some(w) = params.weights_mut(entity) {
                    for (wl, gw) in w.iter_mut().zip(&g.weights) {
                        *wl += data_scale * gw - decay * *wl;
                    }
                }
            }
        }
        None if decay != 0.0 => {
            for l in 0..paths {
                for m in params.transform_mut(l).iter_mut() {
                    *m -= decay * *m;
                }
                for b in params.bias_mut(l).iter_mut() {
                    *b -= decay * *b;
                }
            }
            if let Some(w) = params.weights_mut(entity) {
                for wl in w.iter_mut() {
                    *wl -= decay * *wl;
                }
            }
        }
        None => {}
    }
}

// --- full-objective analytic gradient (diagnostics / gradient checking) ---

impl HerecModel {
    /// Flatten every trainable parameter: x, y, then for embedding models
    /// gamma_u, gamma_i, theta_u, theta_i (transforms, biases, weight rows
    /// in entity order).
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        if let Some(hin) = &self.hin {
            v.extend_from_slice(&self.gamma_u);
            v.extend_from_slice(&self.gamma_i);
            flatten_fusion(&hin.theta_u, &self.users, &mut v);
            flatten_fusion(&hin.theta_i, &self.items, &mut v);
        }
        v
    }

    pub fn set_param_vector(&mut self, v: &[f64]) -> Result<()> {
        let mut pos = 0usize;
        fn take(pos: &mut usize, n: usize) -> std::ops::Range<usize> {
            let r = *pos..*pos + n;
            *pos += n;
            r
        }
        if v.len() < self.x.len() + self.y.len() {
            return Err(Error::Shape("parameter vector too short".into()));
        }
        let xr = take(&mut pos, self.x.len());
        self.x.copy_from_slice(&v[xr]);
        let yr = take(&mut pos, self.y.len());
        self.y.copy_from_slice(&v[yr]);
        if self.hin.is_some() {
            let gur = take(&mut pos, self.gamma_u.len());
            self.gamma_u.copy_from_slice(&v[gur]);
            let gir = take(&mut pos, self.gamma_i.len());
            self.gamma_i.copy_from_slice(&v[gir]);
            let hin = self.hin.as_mut().expect("checked");
            pos = unflatten_fusion(&mut hin.theta_u, &self.users, v, pos)?;
            pos = unflatten_fusion(&mut hin.theta_i, &self.items, v, pos)?;
        }
        if pos != v.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, model expects {pos}",
                v.len()
            )));
        }
        Ok(())
    }

    /// Analytic gradient of [`objective`](Self::objective) in
    /// [`param_vector`](Self::param_vector) order.
    pub fn gradient_vector(&self, data: &RatingDataset) -> Result<Vec<f64>> {
        let d = self.hyper.latent_dim;
        let (alpha, beta) = (self.hyper.alpha, self.hyper.beta);
        let mut gx = vec![0.0; self.x.len()];
        let mut gy = vec![0.0; self.y.len()];
        let mut ggu = vec![0.0; self.gamma_u.len()];
        let mut ggi = vec![0.0; self.gamma_i.len()];
        let hin = self.hin.as_ref();
        let mut gtheta_u = hin.map(|h| vec![0.0; fusion_param_count(&h.theta_u, &self.users)]);
        let mut gtheta_i = hin.map(|h| vec![0.0; fusion_param_count(&h.theta_i, &self.items)]);

        let mut fused_users: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut fused_items: HashMap<usize, Vec<f64>> = HashMap::new();

        for rec in data.records() {
            let u = *self
                .user_index
                .get(&rec.user)
                .ok_or_else(|| Error::UnknownEntity(rec.user.clone()))?;
            let i = *self
                .item_index
                .get(&rec.item)
                .ok_or_else(|| Error::UnknownEntity(rec.item.clone()))?;
            let mut r_hat = dot(self.x_at(u), self.y_at(i));
            if hin.is_some() {
                if alpha != 0.0 {
                    let e_u = fused_users
                        .entry(u)
                        .or_insert_with(|| self.fused_user(&rec.user).expect("model entity"));
                    r_hat += alpha * dot(e_u, self.gamma_i_at(i));
                }
                if beta != 0.0 {
                    let e_i = fused_items
                        .entry(i)
                        .or_insert_with(|| self.fused_item(&rec.item).expect("model entity"));
                    r_hat += beta * dot(self.gamma_u_at(u), e_i);
                }
            }
            let err = rec.rating - r_hat;
            let g_pred = -2.0 * err;

            for k in 0..d {
                gx[u * d + k] +=
                    g_pred * self.y[i * d + k] + 2.0 * self.hyper.lambda * self.x[u * d + k];
                gy[i * d + k] +=
                    g_pred * self.x[u * d + k] + 2.0 * self.hyper.lambda * self.y[i * d + k];
            }
            if let Some(h) = hin {
                for k in 0..d {
                    let data_u = match (beta != 0.0, fused_items.get(&i)) {
                        (true, Some(e_i)) => g_pred * beta * e_i[k],
                        _ => 0.0,
                    };
                    ggu[u * d + k] +=
                        data_u + 2.0 * self.hyper.lambda_gamma * self.gamma_u[u * d + k];
                    let data_i = match (alpha != 0.0, fused_users.get(&u)) {
                        (true, Some(e_u)) => g_pred * alpha * e_u[k],
                        _ => 0.0,
                    };
                    ggi[i * d + k] +=
                        data_i + 2.0 * self.hyper.lambda_gamma * self.gamma_i[i * d + k];
                }
                if alpha != 0.0 {
                    let embs = self.user_emb_refs(h, &rec.user);
                    let fg = fusion_gradients(
                        h.fusion_kind,
                        &embs,
                        &h.theta_u,
                        &rec.user,
                        self.gamma_i_at(i),
                    )?;
                    accumulate_fusion_grads(
                        gtheta_u.as_mut().unwrap(),
                        &fg,
                        g_pred * alpha,
                        &self.users,
                        &rec.user,
                        &h.theta_u,
                    );
                }
                if beta != 0.0 {
                    let embs = self.item_emb_refs(h, &rec.item);
                    let fg = fusion_gradients(
                        h.fusion_kind,
                        &embs,
                        &h.theta_i,
                        &rec.item,
                        self.gamma_u_at(u),
                    )?;
                    accumulate_fusion_grads(
                        gtheta_i.as_mut().unwrap(),
                        &fg,
                        g_pred * beta,
                        &self.items,
                        &rec.item,
                        &h.theta_i,
                    );
                }
            }
        }

        if let Some(h) = hin {
            add_fusion_reg(
                gtheta_u.as_mut().unwrap(),
                &h.theta_u,
                &self.users,
                2.0 * self.hyper.lambda_theta,
            );
            add_fusion_reg(
                gtheta_i.as_mut().unwrap(),
                &h.theta_i,
                &self.items,
                2.0 * self.hyper.lambda_theta,
            );
        }

        let mut v = Vec::new();
        v.extend_from_slice(&gx);
        v.extend_from_slice(&gy);
        if self.hin.is_some() {
            v.extend_from_slice(&ggu);
            v.extend_from_slice(&ggi);
            v.extend(gtheta_u.unwrap());
            v.extend(gtheta_i.unwrap());
        }
        Ok(v)
    }
}

fn fusion_param_count(params: &FusionParams, entities: &[String]) -> usize {
    let mut n = params.paths() * (params.out_dim() * params.in_dim() + params.out_dim());
    for e in entities {
        if params.has_entity(e) {
            n += params.paths();
        }
    }
    n
}

fn flatten_fusion(params: &FusionParams, entities: &[String], out: &mut Vec<f64>) {
    for l in 0..params.paths() {
        out.extend_from_slice(params.transform(l));
    }
    for l in 0..params.paths() {
        out.extend_from_slice(params.bias(l));
    }
    for e in entities {
        if params.has_entity(e) {
            out.extend(params.weights_of(e));
        }
    }
}

fn unflatten_fusion(
    params: &mut FusionParams,
    entities: &[String],
    v: &[f64],
    mut pos: usize,
) -> Result<usize> {
    for l in 0..params.paths() {
        let m = params.transform_mut(l);
        m.copy_from_slice(&v[pos..pos + m.len()]);
        pos += m.len();
    }
    for l in 0..params.paths() {
        let b = params.bias_mut(l);
        b.copy_from_slice(&v[pos..pos + b.len()]);
        pos += b.len();
    }
    let paths = params.paths();
    for e in entities {
        if let Some(w) = params.weights_mut(e) {
            w.copy_from_slice(&v[pos..pos + paths]);
            pos += paths;
        }
    }
    Ok(pos)
}

fn accumulate_fusion_grads(
    out: &mut [f64],
    g: &FusionGrads,
    scale: f64,
    entities: &[String],
    entity: &str,
    params: &FusionParams,
) {
    let paths = g.transforms.len();
    if paths == 0 {
        return;
    }
    let m_len = g.transforms[0].len();
    let b_len = g.biases[0].len();
    let mut pos = 0;
    for l in 0..paths {
        for (o, gm) in out[pos..pos + m_len].iter_mut().zip(&g.transforms[l]) {
            *o += scale * gm;
        }
        pos += m_len;
    }
    for l in 0..paths {
        for (o, gb) in out[pos..pos + b_len].iter_mut().zip(&g.biases[l]) {
            *o += scale * gb;
        }
        pos += b_len;
    }
    if !g.weights.is_empty() && params.has_entity(entity) {
        // Weight rows appear in entity order; count preceding rows present.
        let row = entities
            .iter()
            .take_while(|e| e.as_str() != entity)
            .filter(|e| params.has_entity(e))
            .count();
        let w0 = pos + row * paths;
        for (o, gw) in out[w0..w0 + paths].iter_mut().zip(&g.weights) {
            *o += scale * gw;
        }
    }
}

fn add_fusion_reg(out: &mut [f64], params: &FusionParams, entities: &[String], scale: f64) {
    let mut flat = Vec::new();
    flatten_fusion(params, entities, &mut flat);
    for (o, p) in out.iter_mut().zip(&flat) {
        *o += scale * p;
    }
}

// --- persistence ---

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    latent_dim: usize,
    hyper: HyperParams,
    scale: RatingScale,
    global_mean: f64,
    users: Vec<String>,
    items: Vec<String>,
    x: String,
    y: String,
    hin: Option<HinFile>,
}

#[derive(Serialize, Deserialize)]
struct HinFile {
    fusion: FusionKind,
    user_embed_dim: usize,
    item_embed_dim: usize,
    user_paths: Vec<String>,
    item_paths: Vec<String>,
    gamma_u: String,
    gamma_i: String,
    theta_u: FusionBlob,
    theta_i: FusionBlob,
    user_embeddings: Vec<EmbeddingFileRef>,
    item_embeddings: Vec<EmbeddingFileRef>,
}

#[derive(Serialize, Deserialize)]
struct FusionBlob {
    transforms: Vec<String>,
    biases: Vec<String>,
    /// Weight rows in entity order; empty for the simple kind.
    weights: String,
}

fn encode_f64s(v: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 8);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_f64s(s: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = BASE64
        .decode(s)
        .map_err(|e| Error::Invalid(format!("bad base64 parameter block: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Invalid(format!(
            "parameter block has {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn fusion_blob(params: &FusionParams, entities: &[String], personalized: bool) -> FusionBlob {
    let weights = if personalized && params.paths() > 0 {
        let mut w = Vec::with_capacity(entities.len() * params.paths());
        for e in entities {
            w.extend(params.weights_of(e));
        }
        encode_f64s(&w)
    } else {
        String::new()
    };
    FusionBlob {
        transforms: (0..params.paths())
            .map(|l| encode_f64s(params.transform(l)))
            .collect(),
        biases: (0..params.paths())
            .map(|l| encode_f64s(params.bias(l)))
            .collect(),
        weights,
    }
}

fn fusion_from_blob(
    blob: &FusionBlob,
    paths: usize,
    in_dim: usize,
    out_dim: usize,
    entities: &[String],
    personalized: bool,
) -> Result<FusionParams> {
    if blob.transforms.len() != paths || blob.biases.len() != paths {
        return Err(Error::Invalid("fusion block count mismatch".into()));
    }
    let transforms = blob
        .transforms
        .iter()
        .map(|s| decode_f64s(s, out_dim * in_dim))
        .collect::<Result<Vec<_>>>()?;
    let biases = blob
        .biases
        .iter()
        .map(|s| decode_f64s(s, out_dim))
        .collect::<Result<Vec<_>>>()?;
    let weights = if personalized && paths > 0 {
        let flat = decode_f64s(&blob.weights, entities.len() * paths)?;
        entities
            .iter()
            .enumerate()
            .map(|(r, e)| (e.clone(), flat[r * paths..(r + 1) * paths].to_vec()))
            .collect()
    } else {
        HashMap::new()
    };
    FusionParams::from_parts(in_dim, out_dim, transforms, biases, weights)
}

impl HerecModel {
    /// Persist as a versioned JSON container. Parameter blocks are exact
    /// (base64 little-endian doubles); embedding matrices stay in their own
    /// files, referenced by path and content hash. Models with an embedding
    /// side need [`set_embedding_refs`](Self::set_embedding_refs) first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let hin = match &self.hin {
            Some(h) => {
                let (user_refs, item_refs) = h.file_refs.clone().ok_or_else(|| {
                    Error::Invalid(
                        "model has no embedding file references; save the embeddings and call \
                         set_embedding_refs first"
                            .into(),
                    )
                })?;
                let personalized = h.fusion_kind.is_personalized();
                Some(HinFile {
                    fusion: h.fusion_kind,
                    user_embed_dim: h.user_embed_dim,
                    item_embed_dim: h.item_embed_dim,
                    user_paths: h.user_paths.clone(),
                    item_paths: h.item_paths.clone(),
                    gamma_u: encode_f64s(&self.gamma_u),
                    gamma_i: encode_f64s(&self.gamma_i),
                    theta_u: fusion_blob(&h.theta_u, &self.users, personalized),
                    theta_i: fusion_blob(&h.theta_i, &self.items, personalized),
                    user_embeddings: user_refs,
                    item_embeddings: item_refs,
                })
            }
            None => None,
        };
        let file = ModelFile {
            format: "herec-model".into(),
            version: 1,
            latent_dim: self.hyper.latent_dim,
            hyper: self.hyper,
            scale: self.scale,
            global_mean: self.global_mean,
            users: self.users.clone(),
            items: self.items.clone(),
            x: encode_f64s(&self.x),
            y: encode_f64s(&self.y),
            hin,
        };
        let out = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(out), &file)?;
        Ok(())
    }

    /// Load a model file, re-reading and hash-verifying the embedding files
    /// it references (relative references resolve against the model's
    /// directory).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: ModelFile =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if file.format != "herec-model" {
            return Err(Error::Invalid(format!(
                "not a model file: format {:?}",
                file.format
            )));
        }
        if file.version != 1 {
            return Err(Error::Invalid(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let d = file.latent_dim;
        let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut model = HerecModel {
            hyper: file.hyper,
            scale: file.scale,
            global_mean: file.global_mean,
            x: decode_f64s(&file.x, file.users.len() * d)?,
            y: decode_f64s(&file.y, file.items.len() * d)?,
            gamma_u: Vec::new(),
            gamma_i: Vec::new(),
            user_index: index_of(&file.users),
            item_index: index_of(&file.items),
            users: file.users,
            items: file.items,
            hin: None,
        };
        if let Some(h) = file.hin {
            let personalized = h.fusion.is_personalized();
            let user_set = load_embedding_refs(&h.user_embeddings, base_dir)?;
            let item_set = load_embedding_refs(&h.item_embeddings, base_dir)?;
            model.gamma_u = decode_f64s(&h.gamma_u, model.users.len() * d)?;
            model.gamma_i = decode_f64s(&h.gamma_i, model.items.len() * d)?;
            let theta_u = fusion_from_blob(
                &h.theta_u,
                h.user_paths.len(),
                h.user_embed_dim,
                d,
                &model.users,
                personalized,
            )?;
            let theta_i = fusion_from_blob(
                &h.theta_i,
                h.item_paths.len(),
                h.item_embed_dim,
                d,
                &model.items,
                personalized,
            )?;
            model.hin = Some(HinSide {
                fusion_kind: h.fusion,
                zero_user_emb: vec![0.0; h.user_embed_dim],
                zero_item_emb: vec![0.0; h.item_embed_dim],
                user_embeddings: Arc::new(user_set),
                item_embeddings: Arc::new(item_set),
                user_paths: h.user_paths,
                item_paths: h.item_paths,
                user_embed_dim: h.user_embed_dim,
                item_embed_dim: h.item_embed_dim,
                theta_u,
                theta_i,
                file_refs: Some((h.user_embeddings, h.item_embeddings)),
            });
        }
        Ok(model)
    }
}

fn load_embedding_refs(refs: &[EmbeddingFileRef], base_dir: &Path) -> Result<EmbeddingSet> {
    let mut set = EmbeddingSet::new();
    for r in refs {
        let direct = Path::new(&r.path);
        let resolved = if direct.exists() {
            direct.to_path_buf()
        } else {
            base_dir.join(direct.file_name().unwrap_or(direct.as_os_str()))
        };
        let actual = crate::hash::sha256_file(&resolved)?;
        if actual != r.sha256 {
            return Err(Error::Invalid(format!(
                "embedding file {} content hash mismatch (expected {}, found {actual})",
                resolved.display(),
                r.sha256
            )));
        }
        set.insert(r.label.clone(), EmbeddingMatrix::load(&resolved)?)?;
    }
    Ok(set)
}

#[cfg(test)]
impl HerecModel {
    pub(crate) fn hyper_mut(&mut self) -> &mut HyperParams {
        &mut self.hyper
    }
}
