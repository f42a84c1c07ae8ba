//! Fusion functions mapping per-meta-path embeddings to one representation.
//!
//! Three variants over the per-path linear transform `M^(l) e^(l) + b^(l)`:
//! a uniform average, a per-entity weighted sum, and a two-layer sigmoid
//! form. The simple variant runs through the same accumulation as the
//! personalized one with implicit weights 1/|P|, so the two agree exactly
//! when the personalized weights are uniform.
//!
//! Gradients are full chain-rule derivatives of `upstream . fuse(...)` with
//! respect to every parameter block and are validated against central finite
//! differences in the test suite.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    SimpleLinear,
    PersonalizedLinear,
    PersonalizedNonLinear,
}

impl FusionKind {
    pub fn is_personalized(&self) -> bool {
        !matches!(self, FusionKind::SimpleLinear)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionKind::SimpleLinear => "simple_linear",
            FusionKind::PersonalizedLinear => "personalized_linear",
            FusionKind::PersonalizedNonLinear => "personalized_nonlinear",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple_linear" | "sl" => Ok(FusionKind::SimpleLinear),
            "personalized_linear" | "pl" => Ok(FusionKind::PersonalizedLinear),
            "personalized_nonlinear" | "pnl" => Ok(FusionKind::PersonalizedNonLinear),
            other => Err(Error::Config(format!("unknown fusion kind {other:?}"))),
        }
    }
}

/// Per-meta-path transforms `M^(l)` (out_dim x in_dim, row-major), biases
/// `b^(l)`, and per-entity path weights for the personalized kinds.
///
/// Transforms and biases are shared across entities; only the weights are
/// personal. Entities missing from the weight table fall back to uniform
/// 1/|P| weights, which is also the initialization, so unseen entities fuse
/// exactly like the simple variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    in_dim: usize,
    out_dim: usize,
    transforms: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    weights: HashMap<String, Vec<f64>>,
}

impl FusionParams {
    /// Initialize for `paths` meta-paths: transforms and biases from
    /// 0.1 * N(0, 1), weights uniform at 1/paths for every known entity.
    pub fn init(
        paths: usize,
        in_dim: usize,
        out_dim: usize,
        entities: &[String],
        rng: &mut impl Rng,
    ) -> Self {
        let mut normal = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    0.1 * z
                })
                .collect()
        };
        let transforms = (0..paths).map(|_| normal(out_dim * in_dim)).collect();
        let biases = (0..paths).map(|_| normal(out_dim)).collect();
        let uniform = if paths == 0 {
            Vec::new()
        } else {
            vec![1.0 / paths as f64; paths]
        };
        let weights = entities
            .iter()
            .map(|e| (e.clone(), uniform.clone()))
            .collect();
        FusionParams {
            in_dim,
            out_dim,
            transforms,
            biases,
            weights,
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        transforms: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        weights: HashMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let paths = transforms.len();
        if biases.len() != paths {
            return Err(Error::Shape(format!(
                "{} transforms but {} biases",
                paths,
                biases.len()
            )));
        }
        for m in &transforms {
            if m.len() != out_dim * in_dim {
                return Err(Error::Shape("transform size mismatch".into()));
            }
        }
        for b in &biases {
            if b.len() != out_dim {
                return Err(Error::Shape("bias size mismatch".into()));
            }
        }
        for w in weights.values() {
            if w.len() != paths {
                return Err(Error::Shape("weight row size mismatch".into()));
            }
        }
        Ok(FusionParams {
            in_dim,
            out_dim,
            transforms,
            biases,
            weights,
        })
    }

    pub fn paths(&self) -> usize {
        self.transforms.len()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn transform(&self, l: usize) -> &[f64] {
        &self.transforms[l]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn has_entity(&self, entity: &str) -> bool {
        self.weights.contains_key(entity)
    }

    /// Per-path weights for an entity; uniform for entities never seen.
    pub fn weights_of(&self, entity: &str) -> Vec<f64> {
        match self.weights.get(entity) {
            Some(w) => w.clone(),
            None => {
                let p = self.paths();
                if p == 0 {
                    Vec::new()
                } else {
                    vec![1.0 / p as f64; p]
                }
            }
        }
    }

    pub(crate) fn transform_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.transforms[l]
    }

    pub(crate) fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.biases[l]
    }

    pub(crate) fn weights_mut(&mut self, entity: &str) -> Option<&mut Vec<f64>> {
        self.weights.get_mut(entity)
    }

    /// Squared L2 norm over every block (transforms, biases, all weights).
    pub fn sq_norm(&self) -> f64 {
        let m: f64 = self
            .transforms
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum();
        let b: f64 = self.biases.iter().flat_map(|v| v.iter()).map(|x| x * x).sum();
        let w: f64 = self
            .weights
            .values()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum();
        m + b + w
    }
}

/// Numerically stable logistic sigmoid.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(embs: &[&[f64]], params: &FusionParams) -> Result<()> {
    if embs.len() != params.paths() {
        return Err(Error::Shape(format!(
            "got {} embeddings for {} meta-paths",
            embs.len(),
            params.paths()
        )));
    }
    for (l, e) in embs.iter().enumerate() {
        if e.len() != params.in_dim {
            return Err(Error::Shape(format!(
                "embedding {l} has {} components, expected {}",
                e.len(),
                params.in_dim
            )));
        }
    }
    Ok(())
}

fn path_weights(kind: FusionKind, params: &FusionParams, entity: &str) -> Result<Vec<f64>> {
    let p = params.paths();
    match kind {
        FusionKind::SimpleLinear => Ok(vec![1.0 / p as f64; p]),
        _ => {
            if !params.has_entity(entity) {
                return Err(Error::UnknownEntity(entity.to_string()));
            }
            Ok(params.weights_of(entity))
        }
    }
}

/// `M^(l) e + b^(l)`.
fn linear_term(params: &FusionParams, l: usize, e: &[f64]) -> Vec<f64> {
    let (d_in, d_out) = (params.in_dim, params.out_dim);
    let m = &params.transforms[l];
    let b = &params.biases[l];
    let mut out = Vec::with_capacity(d_out);
    for r in 0..d_out {
        let row = &m[r * d_in..(r + 1) * d_in];
        out.push(b[r] + row.iter().zip(e).map(|(x, y)| x * y).sum::<f64>());
    }
    out
}

/// Fuse one entity's per-meta-path embeddings into a single vector.
///
/// With zero meta-paths the result is the zero vector: the entity side
/// contributes nothing to downstream predictions.
pub fn fuse(
    kind: FusionKind,
    embs: &[&[f64]],
    params: &FusionParams,
    entity: &str,
) -> Result<Vec<f64>> {
    check_shapes(embs, params)?;
    if params.paths() == 0 {
        return Ok(vec![0.0; params.out_dim]);
    }
    let w = path_weights(kind, params, entity)?;
    let mut acc = vec![0.0; params.out_dim];
    for (l, e) in embs.iter().enumerate() {
        let term = linear_term(params, l, e);
        match kind {
            FusionKind::SimpleLinear | FusionKind::PersonalizedLinear => {
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a += w[l] * t;
                }
            }
            FusionKind::PersonalizedNonLinear => {
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a += w[l] * sigmoid(*t);
                }
            }
        }
    }
    if kind == FusionKind::PersonalizedNonLinear {
        for a in acc.iter_mut() {
            *a = sigmoid(*a);
        }
    }
    Ok(acc)
}

/// Gradients of `upstream . fuse(...)` for every fusion parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    /// Per path, out_dim x in_dim row-major.
    pub transforms: Vec<Vec<f64>>,
    /// Per path, out_dim.
    pub biases: Vec<Vec<f64>>,
    /// Per path; empty for the simple kind.
    pub weights: Vec<f64>,
}

pub fn fusion_gradients(
    kind: FusionKind,
    embs: &[&[f64]],
    params: &FusionParams,
    entity: &str,
    upstream: &[f64],
) -> Result<FusionGrads> {
    check_shapes(embs, params)?;
    if upstream.len() != params.out_dim {
        return Err(Error::Shape(format!(
            "upstream has {} components, expected {}",
            upstream.len(),
            params.out_dim
        )));
    }
    let paths = params.paths();
    if paths == 0 {
        return Ok(FusionGrads {
            transforms: Vec::new(),
            biases: Vec::new(),
            weights: Vec::new(),
        });
    }
    let w = path_weights(kind, params, entity)?;
    let (d_in, d_out) = (params.in_dim, params.out_dim);

    let mut grads = FusionGrads {
        transforms: vec![vec![0.0; d_out * d_in]; paths],
        biases: vec![vec![0.0; d_out]; paths],
        weights: if kind.is_personalized() {
            vec![0.0; paths]
        } else {
            Vec::new()
        },
    };

    match kind {
        FusionKind::SimpleLinear | FusionKind::PersonalizedLinear => {
            // fuse = sum_l w_l (M^(l) e + b^(l)). For each path the bias grad
            // is w_l * upstream, the transform grad its outer product with
            // e^(l), and the weight grad (personalized only) is
            // upstream . (M^(l) e + b^(l)).
            for l in 0..paths {
                for r in 0..d_out {
                    let u = upstream[r];
                    grads.biases[l][r] = w[l] * u;
                    let row = &mut grads.transforms[l][r * d_in..(r + 1) * d_in];
                    for (g, &e) in row.iter_mut().zip(embs[l]) {
                        *g = w[l] * u * e;
                    }
                }
                if kind.is_personalized() {
                    let term = linear_term(params, l, embs[l]);
                    grads.weights[l] = upstream.iter().zip(&term).map(|(u, t)| u * t).sum();
                }
            }
        }
        FusionKind::PersonalizedNonLinear => {
            // fuse = sigmoid(Z_s), Z_s = sum_l w_l h_l, h_l = sigmoid(Z_f^l),
            // Z_f^l = M^(l) e + b^(l). The outer layer gates upstream by
            // sigmoid'(Z_s); the inner by sigmoid'(Z_f^l).
            let inner: Vec<Vec<f64>> = (0..paths)
                .map(|l| linear_term(params, l, embs[l]))
                .collect();
            let h: Vec<Vec<f64>> = inner
                .iter()
                .map(|z| z.iter().map(|&x| sigmoid(x)).collect())
                .collect();
            let mut z_s = vec![0.0; d_out];
            for l in 0..paths {
                for (z, hv) in z_s.iter_mut().zip(&h[l]) {
                    *z += w[l] * hv;
                }
            }
            // t = upstream * sigmoid(Z_s) * (1 - sigmoid(Z_s)), elementwise.
            let t: Vec<f64> = z_s
                .iter()
                .zip(upstream)
                .map(|(&z, &u)| {
                    let s = sigmoid(z);
                    u * s * (1.0 - s)
                })
                .collect();
            for l in 0..paths {
                grads.weights[l] = t.iter().zip(&h[l]).map(|(a, b)| a * b).sum();
                for r in 0..d_out {
                    let q = w[l] * t[r] * h[l][r] * (1.0 - h[l][r]);
                    grads.biases[l][r] = q;
                    let row = &mut grads.transforms[l][r * d_in..(r + 1) * d_in];
                    for (g, &e) in row.iter_mut().zip(embs[l]) {
                        *g = q * e;
                    }
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn identity_params(d: usize) -> FusionParams {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        FusionParams::from_parts(
            d,
            d,
            vec![m],
            vec![vec![0.0; d]],
            [("e1".to_string(), vec![1.0])].into_iter().collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_path_identity_passthrough() {
        let params = identity_params(3);
        let e = [0.5, -1.0, 2.0];
        let out = fuse(FusionKind::SimpleLinear, &[&e], &params, "e1").unwrap();
        assert_eq!(out, e.to_vec());
    }

    #[test]
    fn nonlinear_zero_params_give_sigmoid_of_half() {
        let d = 4;
        let params = FusionParams::from_parts(
            d,
            d,
            vec![vec![0.0; d * d]],
            vec![vec![0.0; d]],
            [("e1".to_string(), vec![1.0])].into_iter().collect(),
        )
        .unwrap();
        let e = vec![0.3; d];
        let out = fuse(FusionKind::PersonalizedNonLinear, &[&e], &params, "e1").unwrap();
        // sigmoid(1.0 * sigmoid(0)) = sigmoid(0.5)
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        for x in out {
            assert!((x - expected).abs() < 1e-12);
            assert!((x - 0.622459).abs() < 1e-6);
        }
    }

    #[test]
    fn simple_linear_averages_two_paths() {
        let d = 2;
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let params = FusionParams::from_parts(
            d,
            d,
            vec![eye.clone(), eye],
            vec![vec![0.0; d], vec![0.0; d]],
            HashMap::new(),
        )
        .unwrap();
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let out = fuse(FusionKind::SimpleLinear, &[&e1, &e2], &params, "any").unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_paths_fuse_to_zero_vector() {
        let params = FusionParams::from_parts(4, 3, vec![], vec![], HashMap::new()).unwrap();
        let out = fuse(FusionKind::PersonalizedNonLinear, &[], &params, "e").unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let params = identity_params(3);
        let short = [1.0, 2.0];
        assert!(matches!(
            fuse(FusionKind::SimpleLinear, &[&short], &params, "e1"),
            Err(Error::Shape(_))
        ));
        let e = [1.0, 2.0, 3.0];
        assert!(matches!(
            fuse(FusionKind::SimpleLinear, &[&e, &e], &params, "e1"),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn unknown_entity_under_personalized_kinds() {
        let params = identity_params(2);
        let e = [1.0, 2.0];
        assert!(matches!(
            fuse(FusionKind::PersonalizedLinear, &[&e], &params, "ghost"),
            Err(Error::UnknownEntity(_))
        ));
        // The simple kind ignores the entity.
        assert!(fuse(FusionKind::SimpleLinear, &[&e], &params, "ghost").is_ok());
    }

    fn random_instance(
        rng: &mut impl Rng,
        paths: usize,
        d_in: usize,
        d_out: usize,
    ) -> (FusionParams, Vec<Vec<f64>>, Vec<f64>) {
        let mut vals = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
        };
        let transforms = (0..paths).map(|_| vals(d_out * d_in)).collect();
        let biases = (0..paths).map(|_| vals(d_out)).collect();
        let weights = [("e".to_string(), vals(paths))].into_iter().collect();
        let params =
            FusionParams::from_parts(d_in, d_out, transforms, biases, weights).unwrap();
        let embs = (0..paths).map(|_| vals(d_in)).collect();
        let upstream = vals(d_out);
        (params, embs, upstream)
    }

    /// Independent oracle: central finite differences of upstream . fuse.
    fn fd_check(kind: FusionKind, rng: &mut impl Rng, tol: f64) {
        let paths = 1 + (rng.random::<u32>() % 3) as usize;
        let d_in = 1 + (rng.random::<u32>() % 4) as usize;
        let d_out = 1 + (rng.random::<u32>() % 4) as usize;
        let (mut params, embs, upstream) = random_instance(rng, paths, d_in, d_out);
        let emb_refs: Vec<&[f64]> = embs.iter().map(|v| v.as_slice()).collect();
        let grads = fusion_gradients(kind, &emb_refs, &params, "e", &upstream).unwrap();

        let h = 1e-6;
        let objective = |params: &FusionParams| -> f64 {
            let out = fuse(kind, &emb_refs, params, "e").unwrap();
            out.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let check = |name: &str, analytic: f64, fd: f64| {
            let rel = (analytic - fd).abs() / fd.abs().max(1e-7);
            assert!(rel < tol, "{name}: analytic {analytic} vs fd {fd} (rel {rel})");
        };

        for l in 0..paths {
            for k in 0..d_out * d_in {
                let orig = params.transforms[l][k];
                params.transforms[l][k] = orig + h;
                let plus = objective(&params);
                params.transforms[l][k] = orig - h;
                let minus = objective(&params);
                params.transforms[l][k] = orig;
                check("M", grads.transforms[l][k], (plus - minus) / (2.0 * h));
            }
            for k in 0..d_out {
                let orig = params.biases[l][k];
                params.biases[l][k] = orig + h;
                let plus = objective(&params);
                params.biases[l][k] = orig - h;
                let minus = objective(&params);
                params.biases[l][k] = orig;
                check("b", grads.biases[l][k], (plus - minus) / (2.0 * h));
            }
            if kind.is_personalized() {
                let orig = params.weights.get("e").unwrap()[l];
                params.weights.get_mut("e").unwrap()[l] = orig + h;
                let plus = objective(&params);
                params.weights.get_mut("e").unwrap()[l] = orig - h;
                let minus = objective(&params);
                params.weights.get_mut("e").unwrap()[l] = orig;
                check("w", grads.weights[l], (plus - minus) / (2.0 * h));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(42);
        for kind in [
            FusionKind::SimpleLinear,
            FusionKind::PersonalizedLinear,
            FusionKind::PersonalizedNonLinear,
        ] {
            for _ in 0..25 {
                fd_check(kind, &mut rng, 1e-5);
            }
        }
    }

    #[test]
    fn simple_bias_gradient_is_upstream_over_paths() {
        let mut rng = seeded_rng(3);
        let (params, embs, upstream) = random_instance(&mut rng, 3, 2, 2);
        let emb_refs: Vec<&[f64]> = embs.iter().map(|v| v.as_slice()).collect();
        let g = fusion_gradients(FusionKind::SimpleLinear, &emb_refs, &params, "e", &upstream)
            .unwrap();
        for l in 0..3 {
            for (gb, u) in g.biases[l].iter().zip(&upstream) {
                assert!((gb - u / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_weight_kills_transform_gradient() {
        let mut rng = seeded_rng(4);
        let (mut params, embs, upstream) = random_instance(&mut rng, 2, 3, 2);
        params.weights.get_mut("e").unwrap()[0] = 0.0;
        let emb_refs: Vec<&[f64]> = embs.iter().map(|v| v.as_slice()).collect();
        let g = fusion_gradients(
            FusionKind::PersonalizedLinear,
            &emb_refs,
            &params,
            "e",
            &upstream,
        )
        .unwrap();
        assert!(g.transforms[0].iter().all(|&x| x == 0.0));
        assert!(g.transforms[1].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn uniform_personalized_equals_simple_exactly() {
        let mut rng = seeded_rng(5);
        for _ in 0..10 {
            let (mut params, embs, _) = random_instance(&mut rng, 3, 4, 2);
            *params.weights.get_mut("e").unwrap() = vec![1.0 / 3.0; 3];
            let emb_refs: Vec<&[f64]> = embs.iter().map(|v| v.as_slice()).collect();
            let simple = fuse(FusionKind::SimpleLinear, &emb_refs, &params, "e").unwrap();
            let personalized =
                fuse(FusionKind::PersonalizedLinear, &emb_refs, &params, "e").unwrap();
            assert!(simple
                .iter()
                .zip(&personalized)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn nonlinear_output_bounded_in_unit_interval() {
        let mut rng = seeded_rng(6);
        for _ in 0..20 {
            let (params, embs, _) = random_instance(&mut rng, 2, 3, 4);
            let emb_refs: Vec<&[f64]> = embs.iter().map(|v| v.as_slice()).collect();
            let out = fuse(FusionKind::PersonalizedNonLinear, &emb_refs, &params, "e").unwrap();
            assert!(out.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0).is_finite());
    }

    #[test]
    fn unseen_entity_defaults_to_uniform_weights() {
        let params = identity_params(2);
        assert_eq!(params.weights_of("stranger"), vec![1.0]);
    }
}
