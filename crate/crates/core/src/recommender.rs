//! Spatio-temporal attention recommender.
//!
//! Each input step is embedded as the sum of a user, a POI, and an
//! hour-of-week embedding. A self-attention layer aggregates the steps, with
//! its logits penalized by the (normalized) haversine distance and raw-hour
//! gap between steps. Each aggregated step yields one intermediate value
//! `v[t]`, and an attention-matching matrix `W` (candidates x steps, softmax
//! over steps) channels those values to per-candidate scores `W v`. The row of
//! `W` for the recommended POI says which input steps drove the
//! recommendation.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint;
use crate::compressor::check_layout;
use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint};
use crate::ids::{PoiId, UserId};
use crate::ingest::{split_last, Dataset, Step, HOURS_PER_WEEK};
use crate::params::{glorot_uniform, normal_table, Adam, AdamConfig, ParamStore};
use crate::rng::{tag, Rng};
use crate::tensor::{Real, Tensor};

pub const USER_EMB: &str = "user_emb";
pub const POI_EMB: &str = "poi_emb";
pub const HOUR_EMB: &str = "hour_emb";
pub const ATTN_Q: &str = "attn_q";
pub const ATTN_K: &str = "attn_k";
pub const ATTN_V: &str = "attn_v";
pub const SPATIAL_BIAS: &str = "spatial_bias";
pub const TEMPORAL_BIAS: &str = "temporal_bias";
pub const VALUE_PROJ: &str = "value_proj";
pub const VALUE_BIAS: &str = "value_bias";
pub const RECENCY: &str = "recency";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub t_max: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_emb: 50, t_max: 100, epochs: 5, lr: AdamConfig::default().lr, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb < 2 || self.t_max < 2 {
            return Err(Error::Domain(format!(
                "d_emb and t_max must be at least 2, got {} and {}",
                self.d_emb, self.t_max
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Index maps between external ids and model rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: Vec<UserId>,
    pub pois: Vec<PoiId>,
    pub poi_locations: Vec<GeoPoint>,
    #[serde(skip)]
    user_index: HashMap<UserId, usize>,
    #[serde(skip)]
    poi_index: HashMap<PoiId, usize>,
}

impl Vocab {
    pub fn new(users: Vec<UserId>, pois: Vec<PoiId>, poi_locations: Vec<GeoPoint>) -> Result<Self> {
        if pois.len() != poi_locations.len() {
            return Err(Error::Shape("one location per POI required".into()));
        }
        let mut v = Self { users, pois, poi_locations, user_index: HashMap::new(), poi_index: HashMap::new() };
        v.reindex();
        Ok(v)
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let reg = &ds.registry;
        Self::new(ds.user_ids().collect(), reg.ids().to_vec(), (0..reg.len()).map(|i| reg.location_at(i)).collect())
            .expect("registry ids and locations have equal length")
    }

    /// Rebuild lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.user_index = self.users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        self.poi_index = self.pois.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    }

    pub fn user(&self, id: UserId) -> Result<usize> {
        self.user_index.get(&id).copied().ok_or_else(|| Error::UnknownId(format!("user {id}")))
    }

    pub fn poi(&self, id: PoiId) -> Result<usize> {
        self.poi_index.get(&id).copied().ok_or_else(|| Error::UnknownId(format!("POI {id}")))
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_pois(&self) -> usize {
        self.pois.len()
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// One score per candidate POI (model row order).
    pub scores: Vec<f32>,
    /// Row index of the highest score; smallest index on exact ties.
    pub recommended: usize,
    /// Attention-matching matrix, `n_pois x valid_t`, row-major. Columns at
    /// or beyond `valid_t` are implicitly zero.
    pub attention: Vec<f32>,
    /// Intermediate per-step values `v`.
    pub values: Vec<f32>,
    pub valid_t: usize,
}

impl Prediction {
    pub fn attention_row(&self, candidate: usize) -> &[f32] {
        &self.attention[candidate * self.valid_t..(candidate + 1) * self.valid_t]
    }

    pub fn weight(&self, candidate: usize, t: usize) -> f32 {
        if t < self.valid_t {
            self.attention[candidate * self.valid_t + t]
        } else {
            0.0
        }
    }
}

/// Index of the maximum, smallest index on ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps (user, input steps) to a prediction. The audits are
/// written against this so that reference models can be swapped in.
pub trait Recommend: Sync {
    fn n_pois(&self) -> usize;
    fn poi_id(&self, index: usize) -> PoiId;
    fn predict(&self, user: UserId, steps: &[Step]) -> Result<Prediction>;
}

/// Per-trajectory inputs resolved to model indices.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFeatures {
    pub user: usize,
    pub pois: Vec<usize>,
    pub hours: Vec<usize>,
    /// Pairwise haversine distance divided by its maximum, `T x T`. `None`
    /// when every pairwise distance is zero.
    pub spatial: Option<Vec<f64>>,
    /// Pairwise raw-hour gap divided by its maximum, `T x T`.
    pub temporal: Option<Vec<f64>>,
    /// Steps-from-the-end for each position (`T-1, ..., 0`).
    pub recency: Vec<usize>,
}

fn normalized(t: usize, f: impl Fn(usize, usize) -> f64) -> Option<Vec<f64>> {
    let m: Vec<f64> = (0..t * t).map(|k| f(k / t, k % t)).collect();
    let max = m.iter().copied().fold(0.0, f64::max);
    (max > 0.0).then(|| m.into_iter().map(|x| x / max).collect())
}

/// Nodes of interest from a forward pass on a graph.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub embeddings: Var,
    pub aggregated: Var,
    pub values: Var,
    pub attention: Var,
    pub scores: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub initial_loss: f64,
    /// Top-1 accuracy on the held-out last step of every trajectory.
    pub held_out_top1: f64,
    pub chance: f64,
}

/// One next-step training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub user: UserId,
    pub steps: Vec<Step>,
    pub target: PoiId,
}

/// Every proper prefix of every trajectory predicts its next step, except
/// that the final step is held out for evaluation. Prefixes longer than
/// `t_max` keep their most recent `t_max` steps.
pub fn training_examples(ds: &Dataset, t_max: usize) -> Vec<Example> {
    let mut out = Vec::new();
    for traj in ds.trajectories() {
        let n = traj.steps.len();
        for k in 1..n - 1 {
            let start = k.saturating_sub(t_max);
            out.push(Example { user: traj.user, steps: traj.steps[start..k].to_vec(), target: traj.steps[k].poi });
        }
    }
    out
}

/// JSON sidecar stored next to a recommender checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommenderSidecar {
    pub config: ModelConfig,
    pub vocab: Vocab,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommender {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

impl Recommender {
    /// Freshly initialized model for the users and POIs of `vocab`.
    pub fn init(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let d = config.d_emb;
        let mut rng = Rng::new(config.seed).stream(&[tag::INIT_RECOMMENDER]);
        let mut params = ParamStore::new();
        params.insert(USER_EMB, Tensor::zeros(vec![vocab.n_users(), d]))?;
        params.insert(POI_EMB, normal_table(vocab.n_pois(), d, 0.1, &mut rng))?;
        params.insert(HOUR_EMB, normal_table(HOURS_PER_WEEK as usize, d, 0.1, &mut rng))?;
        params.insert(ATTN_Q, glorot_uniform(d, d, &mut rng))?;
        params.insert(ATTN_K, glorot_uniform(d, d, &mut rng))?;
        params.insert(ATTN_V, glorot_uniform(d, d, &mut rng))?;
        params.insert(VALUE_PROJ, glorot_uniform(d, 1, &mut rng))?;
        // Locality starts on; everything else about the scalars is learned.
        params.insert(SPATIAL_BIAS, Tensor::new(vec![1, 1], vec![1.0])?)?;
        params.insert(TEMPORAL_BIAS, Tensor::new(vec![1, 1], vec![1.0])?)?;
        params.insert(VALUE_BIAS, Tensor::zeros(vec![1, 1]))?;
        params.insert(RECENCY, Tensor::zeros(vec![config.t_max, 1]))?;
        Ok(Self { config, vocab, params })
    }

    pub fn features(&self, user: UserId, steps: &[Step]) -> Result<StepFeatures> {
        if steps.is_empty() || steps.len() > self.config.t_max {
            return Err(Error::Shape(format!("input must have 1..={} steps, got {}", self.config.t_max, steps.len())));
        }
        let user = self.vocab.user(user)?;
        let pois = steps.iter().map(|s| self.vocab.poi(s.poi)).collect::<Result<Vec<_>>>()?;
        let hours = steps.iter().map(|s| s.hour_of_week as usize).collect();
        let t = steps.len();
        let locs: Vec<GeoPoint> = pois.iter().map(|&p| self.vocab.poi_locations[p]).collect();
        let spatial = normalized(t, |i, j| haversine_km(locs[i], locs[j]));
        let temporal = normalized(t, |i, j| steps[i].raw_hour.abs_diff(steps[j].raw_hour) as f64);
        let recency = (0..t).rev().collect();
        Ok(StepFeatures { user, pois, hours, spatial, temporal, recency })
    }

    /// Per-step multimodal embeddings, `T x d_emb`.
    pub fn embed<F: Real>(g: &mut Graph<F>, params: &ParamStore<F>, f: &StepFeatures) -> Result<Var> {
        let t = f.pois.len();
        let users = g.param(params, USER_EMB)?;
        let pois = g.param(params, POI_EMB)?;
        let hours = g.param(params, HOUR_EMB)?;
        let eu = g.embedding_lookup(users, &vec![f.user; t])?;
        let ep = g.embedding_lookup(pois, &f.pois)?;
        let eh = g.embedding_lookup(hours, &f.hours)?;
        let e = g.add(eu, ep)?;
        g.add(e, eh)
    }

    /// Build the full forward pass on `g`.
    pub fn forward_graph<F: Real>(g: &mut Graph<F>, params: &ParamStore<F>, f: &StepFeatures) -> Result<ForwardVars> {
        let t = f.pois.len();
        let d = params.value(ATTN_Q)?.shape()[0];
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();

        let embeddings = Self::embed(g, params, f)?;
        let wq = g.param(params, ATTN_Q)?;
        let wk = g.param(params, ATTN_K)?;
        let wv = g.param(params, ATTN_V)?;
        let q = g.matmul(embeddings, wq)?;
        let k = g.matmul(embeddings, wk)?;
        let v = g.matmul(embeddings, wv)?;
        let qk = g.matmul_nt(q, k)?;
        let mut logits = g.scale(qk, inv_sqrt_d)?;
        for (rel, name) in [(&f.spatial, SPATIAL_BIAS), (&f.temporal, TEMPORAL_BIAS)] {
            if let Some(rel) = rel {
                let c = g.constant(t, t, rel.iter().map(|&x| F::from_f64(-x)).collect())?;
                let w = g.param(params, name)?;
                let bias = g.mul_scalar(c, w)?;
                logits = g.add(logits, bias)?;
            }
        }
        let self_attn = g.row_softmax(logits)?;
        let aggregated = g.matmul(self_attn, v)?;

        let proj = g.param(params, VALUE_PROJ)?;
        let vb = g.param(params, VALUE_BIAS)?;
        let rec = g.param(params, RECENCY)?;
        let values = g.matmul(aggregated, proj)?;
        let values = g.add(values, vb)?;
        let rec = g.embedding_lookup(rec, &f.recency)?;
        let values = g.add(values, rec)?;

        let candidates = g.param(params, POI_EMB)?;
        let matching = g.matmul_nt(candidates, aggregated)?;
        let matching = g.scale(matching, inv_sqrt_d)?;
        let attention = g.row_softmax(matching)?;
        let scores = g.matmul(attention, values)?;
        Ok(ForwardVars { embeddings, aggregated, values, attention, scores })
    }

    /// Cross-entropy of `target` under the candidate scores.
    pub fn loss_graph<F: Real>(
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        f: &StepFeatures,
        target: usize,
    ) -> Result<Var> {
        let out = Self::forward_graph(g, params, f)?;
        g.cross_entropy(out.scores, target)
    }

    pub fn forward(&self, user: UserId, steps: &[Step]) -> Result<Prediction> {
        let f = self.features(user, steps)?;
        let mut g = Graph::new();
        let out = Self::forward_graph(&mut g, &self.params, &f)?;
        let scores = g.value(out.scores).to_vec();
        Ok(Prediction {
            recommended: argmax(&scores),
            scores,
            attention: g.value(out.attention).to_vec(),
            values: g.value(out.values).to_vec(),
            valid_t: steps.len(),
        })
    }

    /// Per-step embeddings as a plain `T x d_emb` row-major buffer.
    pub fn embed_trajectory(&self, user: UserId, steps: &[Step]) -> Result<Vec<f32>> {
        let f = self.features(user, steps)?;
        let mut g = Graph::new();
        let e = Self::embed(&mut g, &self.params, &f)?;
        Ok(g.value(e).to_vec())
    }

    pub fn loss(&self, ex: &Example) -> Result<f64> {
        let f = self.features(ex.user, &ex.steps)?;
        let mut g = Graph::new();
        let l = Self::loss_graph(&mut g, &self.params, &f, self.vocab.poi(ex.target)?)?;
        Ok(g.scalar(l) as f64)
    }

    /// One optimizer step on a single example; returns the pre-update loss
    /// and whether the pre-update prediction was correct.
    pub fn train_step(&mut self, adam: &mut Adam, ex: &Example) -> Result<(f64, bool)> {
        let f = self.features(ex.user, &ex.steps)?;
        let target = self.vocab.poi(ex.target)?;
        let mut g = Graph::new();
        let out = Self::forward_graph(&mut g, &self.params, &f)?;
        let hit = argmax(g.value(out.scores)) == target;
        let loss = g.cross_entropy(out.scores, target)?;
        g.backward_into(loss, &mut self.params)?;
        adam.step(&mut self.params);
        Ok((g.scalar(loss) as f64, hit))
    }

    /// Top-1 accuracy on the last step of each trajectory.
    pub fn held_out_top1(&self, ds: &Dataset) -> Result<f64> {
        use rayon::prelude::*;
        let hits = ds
            .trajectories()
            .par_iter()
            .map(|t| {
                let split = split_last(t, self.config.t_max)?;
                let p = self.forward(split.user, &split.input)?;
                Ok(usize::from(self.vocab.pois[p.recommended] == split.target))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(hits.iter().sum::<usize>() as f64 / hits.len() as f64)
    }

    /// Train from scratch on every training example of `ds`.
    pub fn train(config: ModelConfig, ds: &Dataset) -> Result<(Self, TrainReport)> {
        let examples = training_examples(ds, config.t_max);
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut model = Self::init(config, Vocab::from_dataset(ds))?;
        let initial_loss = examples.iter().map(|e| model.loss(e)).sum::<Result<f64>>()? / examples.len() as f64;
        let epochs = model.fit(&examples, model.config.epochs)?;
        let held_out_top1 = model.held_out_top1(ds)?;
        let chance = 1.0 / model.vocab.n_pois() as f64;
        Ok((model, TrainReport { epochs, initial_loss, held_out_top1, chance }))
    }

    /// Run `epochs` passes of single-example Adam updates over `examples`,
    /// shuffled per epoch from the model seed.
    pub fn fit(&mut self, examples: &[Example], epochs: usize) -> Result<Vec<EpochStats>> {
        let mut adam = Adam::new(AdamConfig { lr: self.config.lr, ..AdamConfig::default() });
        let seeds = Rng::new(self.config.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut stats = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(&mut seeds.stream(&[tag::SHUFFLE_RECOMMENDER, epoch as u64]));
            let (mut total, mut hits) = (0.0, 0usize);
            for &i in &order {
                let (loss, hit) = self.train_step(&mut adam, &examples[i])?;
                total += loss;
                hits += usize::from(hit);
            }
            stats.push(EpochStats {
                epoch: epoch + 1,
                mean_loss: total / examples.len() as f64,
                train_top1: hits as f64 / examples.len() as f64,
            });
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = RecommenderSidecar { config: self.config.clone(), vocab: self.vocab.clone(), extra };
        checkpoint::save(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (params, mut meta): (ParamStore, RecommenderSidecar) = checkpoint::load(path)?;
        meta.vocab.reindex();
        let fresh = Self::init(meta.config.clone(), meta.vocab.clone())?;
        check_layout(&fresh.params, &params)?;
        Ok((Self { config: meta.config, vocab: meta.vocab, params }, meta.extra))
    }

    /// Copy of the model with every user embedding set to zero, so that its
    /// output no longer depends on the user id.
    pub fn with_zeroed_user_embeddings(&self) -> Self {
        let mut m = self.clone();
        let p = m.params.get_mut(USER_EMB).expect("user table exists");
        p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        m
    }
}

impl Recommend for Recommender {
    fn n_pois(&self) -> usize {
        self.vocab.n_pois()
    }

    fn poi_id(&self, index: usize) -> PoiId {
        self.vocab.pois[index]
    }

    fn predict(&self, user: UserId, steps: &[Step]) -> Result<Prediction> {
        self.forward(user, steps)
    }
}
