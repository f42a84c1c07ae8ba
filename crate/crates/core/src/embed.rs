//! Skip-gram embeddings over walk corpora.
//!
//! One embedding table is learned per meta-path by maximizing the
//! co-occurrence likelihood of nodes within a fixed window, using the
//! negative-sampling surrogate with negatives drawn from the unigram^0.75
//! corpus distribution. Input vectors start from a standard normal scaled by
//! 1/d; context vectors start at zero.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hin::{HinGraph, MetaPath};
use crate::rng::{derive_seed, seeded_rng};
use crate::walk::{generate_corpus, WalkConfig, WalkCorpus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    /// Embedding dimension d.
    pub dim: usize,
    /// Context window size (neighborhood size).
    pub window: usize,
    /// Negative samples per co-occurrence pair.
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to `lr_min` over all pairs.
    pub lr0: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Worker threads within one meta-path. More than one worker trades
    /// bit-reproducibility for speed; corpus-level results stay equivalent.
    pub workers: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr0: 0.025,
            lr_min: 1e-4,
            seed: 0,
            workers: 1,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("embedding dim must be at least 1".into()));
        }
        if self.window < 1 || self.negatives < 1 || self.epochs < 1 {
            return Err(Error::Config(
                "window, negatives and epochs must be at least 1".into(),
            ));
        }
        if !(self.lr0 > 0.0) || !(self.lr_min > 0.0) || self.lr_min > self.lr0 {
            return Err(Error::Config(
                "need 0 < lr_min <= lr0 for the learning-rate schedule".into(),
            ));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Node id -> d-dimensional vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "vector for {id:?} has {} components, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!("non-finite embedding for {id:?}")));
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::Invalid(format!("duplicate embedding id {id:?}")));
            }
            ids.push(id);
            vectors.extend_from_slice(&v);
        }
        Ok(EmbeddingMatrix {
            dim,
            ids,
            index,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&r| &self.vectors[r * self.dim..(r + 1) * self.dim])
    }

    /// Write the text format: a `<node_count> <dim>` header line, then one
    /// `<node_id> <v1> ... <vd>` line per node. Values print in shortest
    /// round-trippable form, so reading back is exact.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.ids.len(), self.dim)?;
        for (r, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for x in &self.vectors[r * self.dim..(r + 1) * self.dim] {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text(reader: impl BufRead, name: &str) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(name, 1, "missing header line"))??;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(name, 1, "bad node count in header"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(name, 1, "bad dimension in header"))?;
        let mut rows = Vec::with_capacity(count);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts
                .next()
                .ok_or_else(|| Error::parse(name, lineno + 2, "empty row"))?
                .to_string();
            let v: Vec<f64> = parts
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(name, lineno + 2, format!("bad value {s:?}")))
                })
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(Error::parse(
                    name,
                    lineno + 2,
                    format!("expected {dim} components, found {}", v.len()),
                ));
            }
            rows.push((id, v));
        }
        if rows.len() != count {
            return Err(Error::parse(
                name,
                1,
                format!("header claims {count} nodes, file has {}", rows.len()),
            ));
        }
        EmbeddingMatrix::new(dim, rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = BufReader::new(std::fs::File::open(path)?);
        Self::read_text(f, &path.display().to_string())
    }
}

/// Per-meta-path embedding matrices for one entity side, all sharing one
/// dimension.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSet {
    matrices: BTreeMap<String, EmbeddingMatrix>,
}

impl EmbeddingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, matrix: EmbeddingMatrix) -> Result<()> {
        if let Some(d) = self.dim() {
            if matrix.dim() != d {
                return Err(Error::Shape(format!(
                    "matrix dimension {} differs from set dimension {d}",
                    matrix.dim()
                )));
            }
        }
        self.matrices.insert(label.into(), matrix);
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.matrices.values().next().map(|m| m.dim())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.matrices.keys().map(|s| s.as_str())
    }

    pub fn get(&self, label: &str) -> Option<&EmbeddingMatrix> {
        self.matrices.get(label)
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Write one `<label>.emb` file per meta-path into `dir`; returns the
    /// file references (path + content hash) for model provenance.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<EmbeddingFileRef>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut refs = Vec::new();
        for (label, matrix) in &self.matrices {
            let path = dir.join(format!("{label}.emb"));
            matrix.save(&path)?;
            refs.push(EmbeddingFileRef {
                label: label.clone(),
                path: path.display().to_string(),
                sha256: crate::hash::sha256_file(&path)?,
            });
        }
        Ok(refs)
    }

    /// Load `<label>.emb` for each label from `dir`.
    pub fn load(dir: impl AsRef<Path>, labels: &[String]) -> Result<Self> {
        let dir = dir.as_ref();
        let mut set = EmbeddingSet::new();
        for label in labels {
            set.insert(label.clone(), EmbeddingMatrix::load(dir.join(format!("{label}.emb")))?)?;
        }
        Ok(set)
    }
}

/// Reference to a persisted embedding file.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EmbeddingFileRef {
    pub label: String,
    pub path: String,
    pub sha256: String,
}

/// Which target-type nodes made it into a corpus; the rest got zero vectors.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub meta_path: String,
    pub total: usize,
    pub embedded: usize,
    pub missing: Vec<String>,
}

fn window_range(i: usize, len: usize, window: usize) -> std::ops::RangeInclusive<usize> {
    i.saturating_sub(window)..=(i + window).min(len - 1)
}

/// Enumerate (center, context) co-occurrence pairs: for each position i, all
/// positions j != i with |i - j| <= window.
pub fn context_pairs<'a>(
    corpus: &'a WalkCorpus,
    window: usize,
) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
    corpus.sequences().iter().flat_map(move |seq| {
        let len = seq.len();
        (0..len).flat_map(move |i| {
            window_range(i, len, window)
                .filter(move |&j| j != i)
                .map(move |j| (corpus.id(seq[i]), corpus.id(seq[j])))
        })
    })
}

fn count_pairs(corpus: &WalkCorpus, window: usize) -> usize {
    corpus
        .sequences()
        .iter()
        .map(|seq| {
            let len = seq.len();
            (0..len)
                .map(|i| window_range(i, len, window).count() - 1)
                .sum::<usize>()
        })
        .sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss of one (center, output, label) term and the derivative of that loss
/// with respect to the score `center . output`.
fn score_term(score: f64, positive: bool) -> (f64, f64) {
    if positive {
        (softplus(-score), sigmoid(score) - 1.0)
    } else {
        (softplus(score), sigmoid(score))
    }
}

/// Negative-sampling loss for one pair: the positive context plus sampled
/// negatives, each with its label. Exposed for gradient checking.
#[cfg(test)]
pub(crate) fn pair_loss(center: &[f64], outputs: &[&[f64]], labels: &[bool]) -> f64 {
    outputs
        .iter()
        .zip(labels)
        .map(|(out, &lab)| score_term(dot(center, out), lab).0)
        .sum()
}

/// Analytic gradients of [`pair_loss`] with respect to the center vector and
/// each output vector.
#[cfg(test)]
pub(crate) fn pair_gradients(
    center: &[f64],
    outputs: &[&[f64]],
    labels: &[bool],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut grad_center = vec![0.0; center.len()];
    let mut grad_outputs = Vec::with_capacity(outputs.len());
    for (out, &lab) in outputs.iter().zip(labels) {
        let (_, g) = score_term(dot(center, out), lab);
        for (gc, &o) in grad_center.iter_mut().zip(*out) {
            *gc += g * o;
        }
        grad_outputs.push(center.iter().map(|&c| g * c).collect());
    }
    (grad_center, grad_outputs)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Incremental skip-gram trainer over one corpus. Drives a single table pair
/// one epoch at a time so callers can trace per-epoch statistics.
pub struct SgnsTrainer {
    cfg: EmbedConfig,
    dim: usize,
    vocab_ids: Vec<String>,
    sequences: Vec<Vec<u32>>, // rows, re-encoded from corpus tokens
    input: Vec<f64>,
    context: Vec<f64>,
    cumulative: Vec<f64>,
    total_pairs: usize,
    pairs_done: usize,
    epochs_done: usize,
    rng: ChaCha8Rng,
    worker_seed: u64,
}

impl SgnsTrainer {
    pub fn new(corpus: &WalkCorpus, cfg: &EmbedConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "meta-path {} produced no usable walks",
                corpus.meta_path()
            )));
        }
        // Vocabulary: corpus nodes that actually occur, in corpus token
        // order (sorted ids) for determinism.
        let n_tokens = corpus.node_ids().len();
        let mut counts = vec![0usize; n_tokens];
        for seq in corpus.sequences() {
            for &t in seq {
                counts[t as usize] += 1;
            }
        }
        let mut row_of_token = vec![None; n_tokens];
        let mut vocab_ids = Vec::new();
        let mut vocab_counts = Vec::new();
        for (t, &c) in counts.iter().enumerate() {
            if c > 0 {
                row_of_token[t] = Some(vocab_ids.len() as u32);
                vocab_ids.push(corpus.node_ids()[t].clone());
                vocab_counts.push(c);
            }
        }
        let sequences: Vec<Vec<u32>> = corpus
            .sequences()
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|&t| row_of_token[t as usize].expect("token occurs in corpus"))
                    .collect()
            })
            .collect();

        let dim = cfg.dim;
        let mut init_rng = seeded_rng(derive_seed(
            cfg.seed,
            &[b"sgns-init", corpus.meta_path().as_bytes()],
        ));
        let scale = 1.0 / dim as f64;
        let input: Vec<f64> = (0..vocab_ids.len() * dim)
            .map(|_| {
                let z: f64 = init_rng.sample(StandardNormal);
                z * scale
            })
            .collect();
        let context = vec![0.0; vocab_ids.len() * dim];

        let mut cumulative = Vec::with_capacity(vocab_counts.len());
        let mut acc = 0.0;
        for &c in &vocab_counts {
            acc += (c as f64).powf(0.75);
            cumulative.push(acc);
        }

        let total_pairs = cfg.epochs * count_pairs(corpus, cfg.window);
        if total_pairs == 0 {
            return Err(Error::EmptyCorpus(format!(
                "corpus for {} yields no co-occurrence pairs",
                corpus.meta_path()
            )));
        }

        let sample_seed = derive_seed(cfg.seed, &[b"sgns-neg", corpus.meta_path().as_bytes()]);
        Ok(SgnsTrainer {
            cfg: *cfg,
            dim,
            vocab_ids,
            sequences,
            input,
            context,
            cumulative,
            total_pairs,
            pairs_done: 0,
            epochs_done: 0,
            rng: seeded_rng(sample_seed),
            worker_seed: sample_seed,
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_ids.len()
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn lr_at(&self, pairs_done: usize) -> f64 {
        let frac = pairs_done as f64 / self.total_pairs as f64;
        (self.cfg.lr0 + (self.cfg.lr_min - self.cfg.lr0) * frac).max(self.cfg.lr_min)
    }

    fn sample_negative(
        cumulative: &[f64],
        exclude: u32,
        rng: &mut impl Rng,
    ) -> Option<u32> {
        if cumulative.len() < 2 {
            return None;
        }
        let total = *cumulative.last().unwrap();
        loop {
            let x: f64 = rng.random::<f64>() * total;
            let row = cumulative.partition_point(|&c| c <= x) as u32;
            let row = row.min(cumulative.len() as u32 - 1);
            if row != exclude {
                return Some(row);
            }
        }
    }

    /// One pass over all pairs; returns the mean pair loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let loss = if self.cfg.workers > 1 {
            self.run_epoch_parallel()
        } else {
            let mut total_loss = 0.0;
            let mut pairs = 0usize;
            let mut rng = self.rng.clone();
            let seqs = std::mem::take(&mut self.sequences);
            for seq in &seqs {
                for i in 0..seq.len() {
                    for j in window_range(i, seq.len(), self.cfg.window) {
                        if j == i {
                            continue;
                        }
                        let lr = self.lr_at(self.pairs_done + pairs);
                        total_loss += self.train_pair(seq[i], seq[j], lr, &mut rng);
                        pairs += 1;
                    }
                }
            }
            self.sequences = seqs;
            self.rng = rng;
            self.pairs_done += pairs;
            total_loss / pairs as f64
        };
        self.epochs_done += 1;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite skip-gram loss at epoch {}; lower lr0",
                self.epochs_done
            )));
        }
        Ok(loss)
    }

    fn train_pair(&mut self, center: u32, positive: u32, lr: f64, rng: &mut impl Rng) -> f64 {
        let dim = self.dim;
        let c0 = center as usize * dim;
        let mut delta_center = vec![0.0; dim];
        let mut loss = 0.0;
        let negatives = self.cfg.negatives;
        for k in 0..=negatives {
            let (row, label) = if k == 0 {
                (positive, true)
            } else {
                match Self::sample_negative(&self.cumulative, positive, rng) {
                    Some(r) => (r, false),
                    None => break,
                }
            };
            let o0 = row as usize * dim;
            let score = dot(&self.input[c0..c0 + dim], &self.context[o0..o0 + dim]);
            let (l, g) = score_term(score, label);
            loss += l;
            let step = lr * g;
            for d in 0..dim {
                delta_center[d] += step * self.context[o0 + d];
                self.context[o0 + d] -= step * self.input[c0 + d];
            }
        }
        for d in 0..dim {
            self.input[c0 + d] -= delta_center[d];
        }
        loss
    }

    /// Racy multi-worker epoch. Workers update the shared tables without
    /// locks, so exact bits depend on interleaving; aggregate statistics are
    /// preserved.
    fn run_epoch_parallel(&mut self) -> f64 {
        let workers = self.cfg.workers.min(self.sequences.len()).max(1);
        let chunk = self.sequences.len().div_ceil(workers);
        let dim = self.dim;
        let window = self.cfg.window;
        let negatives = self.cfg.negatives;
        let cumulative = &self.cumulative;
        let base_pairs = self.pairs_done;

        struct Tables {
            input: *mut f64,
            context: *mut f64,
        }
        // SAFETY: hogwild-style updates; concurrent unsynchronized writes to
        // disjoint-or-overlapping rows are accepted in exchange for speed in
        // this opt-in mode. Rows are plain f64s and torn updates only perturb
        // the stochastic optimization.
        unsafe impl Sync for Tables {}
        let tables = Tables {
            input: self.input.as_mut_ptr(),
            context: self.context.as_mut_ptr(),
        };

        let lr0 = self.cfg.lr0;
        let lr_min = self.cfg.lr_min;
        let total_pairs = self.total_pairs;
        let epoch = self.epochs_done;
        let worker_seed = self.worker_seed;

        let chunks: Vec<&[Vec<u32>]> = self.sequences.chunks(chunk).collect();
        let results: Vec<(f64, usize)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .enumerate()
                .map(|(w, chunk_seqs)| {
                    let tables = &tables;
                    scope.spawn(move || {
                        let mut rng = seeded_rng(derive_seed(
                            worker_seed,
                            &[b"worker", &w.to_le_bytes(), &epoch.to_le_bytes()],
                        ));
                        let mut loss = 0.0;
                        let mut pairs = 0usize;
                        let mut delta = vec![0.0; dim];
                        for seq in *chunk_seqs {
                            for i in 0..seq.len() {
                                for j in window_range(i, seq.len(), window) {
                                    if j == i {
                                        continue;
                                    }
                                    let frac =
                                        (base_pairs + pairs) as f64 / total_pairs as f64;
                                    let lr = (lr0 + (lr_min - lr0) * frac).max(lr_min);
                                    let c0 = seq[i] as usize * dim;
                                    let positive = seq[j];
                                    delta.iter_mut().for_each(|d| *d = 0.0);
                                    for k in 0..=negatives {
                                        let (row, label) = if k == 0 {
                                            (positive, true)
                                        } else {
                                            match Self::sample_negative(
                                                cumulative, positive, &mut rng,
                                            ) {
                                                Some(r) => (r, false),
                                                None => break,
                                            }
                                        };
                                        let o0 = row as usize * dim;
                                        // SAFETY: indices are in-bounds rows of the
                                        // shared tables (see Tables above).
                                        unsafe {
                                            let input = tables.input;
                                            let context = tables.context;
                                            let mut score = 0.0;
                                            for d in 0..dim {
                                                score += *input.add(c0 + d)
                                                    * *context.add(o0 + d);
                                            }
                                            let (l, g) = score_term(score, label);
                                            loss += l;
                                            let step = lr * g;
                                            for d in 0..dim {
                                                delta[d] += step * *context.add(o0 + d);
                                                *context.add(o0 + d) -=
                                                    step * *input.add(c0 + d);
                                            }
                                        }
                                    }
                                    unsafe {
                                        for d in 0..dim {
                                            *tables.input.add(c0 + d) -= delta[d];
                                        }
                                    }
                                    pairs += 1;
                                }
                            }
                        }
                        (loss, pairs)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

        let (loss, pairs) = results
            .into_iter()
            .fold((0.0, 0), |(l, p), (wl, wp)| (l + wl, p + wp));
        self.pairs_done += pairs;
        loss / pairs as f64
    }

    /// Finish training and extract the input-vector table.
    pub fn into_matrix(self) -> Result<EmbeddingMatrix> {
        let dim = self.dim;
        let rows = self
            .vocab_ids
            .into_iter()
            .enumerate()
            .map(|(r, id)| (id, self.input[r * dim..(r + 1) * dim].to_vec()))
            .collect();
        EmbeddingMatrix::new(dim, rows)
    }

    #[cfg(test)]
    pub(crate) fn vector_pair(&self, center_id: &str, context_id: &str) -> (Vec<f64>, Vec<f64>) {
        let find = |id: &str| {
            self.vocab_ids
                .iter()
                .position(|v| v == id)
                .expect("id in vocab")
        };
        let (c, o) = (find(center_id), find(context_id));
        (
            self.input[c * self.dim..(c + 1) * self.dim].to_vec(),
            self.context[o * self.dim..(o + 1) * self.dim].to_vec(),
        )
    }
}

/// Train embeddings for one corpus; see [`SgnsTrainer`] for step-wise runs.
pub fn train_skipgram(corpus: &WalkCorpus, cfg: &EmbedConfig) -> Result<EmbeddingMatrix> {
    let mut trainer = SgnsTrainer::new(corpus, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    trainer.into_matrix()
}

/// Walk and embed every meta-path (all sharing one target type), in parallel
/// across meta-paths. Target-type nodes missing from a corpus get the zero
/// vector and are listed in that path's coverage report.
pub fn embed_all(
    g: &HinGraph,
    meta_paths: &[MetaPath],
    wcfg: &WalkConfig,
    ecfg: &EmbedConfig,
) -> Result<(EmbeddingSet, Vec<CoverageReport>)> {
    if meta_paths.is_empty() {
        return Ok((EmbeddingSet::new(), Vec::new()));
    }
    let target = meta_paths[0].target_type();
    for mp in meta_paths {
        if mp.target_type() != target {
            return Err(Error::Invalid(format!(
                "meta-paths must share a target type: {} starts with {}, expected {target}",
                mp.label(),
                mp.target_type()
            )));
        }
    }
    let results: Vec<(String, EmbeddingMatrix, CoverageReport)> = meta_paths
        .par_iter()
        .map(|mp| {
            let corpus = generate_corpus(g, mp, wcfg)?;
            let trained = train_skipgram(&corpus, ecfg)?;
            let mut missing = Vec::new();
            let mut rows = Vec::with_capacity(corpus.node_ids().len());
            for id in corpus.node_ids() {
                match trained.get(id) {
                    Some(v) => rows.push((id.clone(), v.to_vec())),
                    None => {
                        missing.push(id.clone());
                        rows.push((id.clone(), vec![0.0; ecfg.dim]));
                    }
                }
            }
            let full = EmbeddingMatrix::new(ecfg.dim, rows)?;
            let coverage = CoverageReport {
                meta_path: mp.label().to_string(),
                total: corpus.node_ids().len(),
                embedded: corpus.node_ids().len() - missing.len(),
                missing,
            };
            Ok((mp.label().to_string(), full, coverage))
        })
        .collect::<Result<_>>()?;

    let mut set = EmbeddingSet::new();
    let mut reports = Vec::new();
    for (label, matrix, coverage) in results {
        set.insert(label, matrix)?;
        reports.push(coverage);
    }
    Ok((set, reports))
}
