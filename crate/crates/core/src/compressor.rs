//! User compressor: a small classifier over a user's step embeddings whose
//! 16-unit hidden layer is the user's behavior vector. Its logits rank
//! similar users.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::ids::UserId;
use crate::ingest::{split_last, Dataset, Step, Trajectory};
use crate::params::{glorot_uniform, Adam, AdamConfig, ParamStore};
use crate::recommender::{argmax, Recommender};
use crate::rng::{tag, Rng};
use crate::tensor::{Real, Tensor};

pub const HIDDEN: usize = 512;
pub const USER_DIM: usize = 16;

pub const W1: &str = "dense1_w";
pub const B1: &str = "dense1_b";
pub const W2: &str = "dense2_w";
pub const B2: &str = "dense2_b";
pub const W3: &str = "out_w";
pub const B3: &str = "out_b";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorConfig {
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 1e-3, seed: 0 }
    }
}

/// Post-ReLU activations of the 16-unit layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserVector {
    pub user: UserId,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: UserId,
    pub score: f32,
}

/// Source of ranked similar users, excluding the query user.
pub trait UserSimilarity: Sync {
    fn similar_users(&self, user: UserId, k: usize) -> Result<Vec<Neighbor>>;
}

#[derive(Debug, Clone, Copy)]
pub struct CompressorVars {
    pub user_vector: Var,
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorReport {
    pub epochs: Vec<CompressorEpoch>,
    pub initial_loss: f64,
    /// Top-1 self-classification accuracy of the final network.
    pub accuracy: f64,
    pub chance: f64,
}

/// Steps that represent a user to the compressor: the same input the
/// recommender sees when predicting the held-out last visit.
pub fn user_steps(traj: &Trajectory, t_max: usize) -> Result<Vec<Step>> {
    Ok(split_last(traj, t_max)?.input)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compressor {
    pub config: CompressorConfig,
    pub users: Vec<UserId>,
    pub params: ParamStore,
}

impl Compressor {
    pub fn init(config: CompressorConfig, d_emb: usize, users: Vec<UserId>) -> Result<Self> {
        if users.len() < 2 {
            return Err(Error::NotEnoughUsers { have: users.len(), need: 2 });
        }
        if users.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("compressor users must be sorted and unique".into()));
        }
        let mut rng = Rng::new(config.seed).stream(&[tag::INIT_COMPRESSOR]);
        let mut params = ParamStore::new();
        params.insert(W1, glorot_uniform(d_emb, HIDDEN, &mut rng))?;
        params.insert(B1, Tensor::zeros(vec![HIDDEN]))?;
        params.insert(W2, glorot_uniform(HIDDEN, USER_DIM, &mut rng))?;
        params.insert(B2, Tensor::zeros(vec![USER_DIM]))?;
        params.insert(W3, glorot_uniform(USER_DIM, users.len(), &mut rng))?;
        params.insert(B3, Tensor::zeros(vec![users.len()]))?;
        Ok(Self { config, users, params })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn d_emb(&self) -> usize {
        self.params.value(W1).map(|w| w.shape()[0]).unwrap_or(0)
    }

    fn user_index(&self, user: UserId) -> Result<usize> {
        self.users.binary_search(&user).map_err(|_| Error::UnknownId(format!("user {user}")))
    }

    /// `rows` is a `valid_t x d_emb` row-major block of step embeddings.
    pub fn forward_graph<F: Real>(
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        rows: &[F],
        d_emb: usize,
    ) -> Result<CompressorVars> {
        if d_emb == 0 || rows.is_empty() || !rows.len().is_multiple_of(d_emb) {
            return Err(Error::Shape(format!("{} values do not form rows of width {d_emb}", rows.len())));
        }
        let t = rows.len() / d_emb;
        let x = g.constant(t, d_emb, rows.to_vec())?;
        let mut h = g.mean_pool_rows(x, &vec![true; t])?;
        for (w, b) in [(W1, B1), (W2, B2)] {
            let w = g.param(params, w)?;
            let b = g.param(params, b)?;
            h = g.matmul(h, w)?;
            h = g.add(h, b)?;
            h = g.relu(h)?;
        }
        let w = g.param(params, W3)?;
        let b = g.param(params, B3)?;
        let logits = g.matmul(h, w)?;
        let logits = g.add(logits, b)?;
        Ok(CompressorVars { user_vector: h, logits })
    }

    pub fn loss_graph<F: Real>(
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        rows: &[F],
        d_emb: usize,
        target: usize,
    ) -> Result<Var> {
        let out = Self::forward_graph(g, params, rows, d_emb)?;
        g.cross_entropy(out.logits, target)
    }

    /// Behavior vector and per-user logits for one block of step embeddings.
    pub fn compress(&self, user: UserId, rows: &[f32]) -> Result<(UserVector, Vec<f32>)> {
        let mut g = Graph::new();
        let out = Self::forward_graph(&mut g, &self.params, rows, self.d_emb())?;
        let embedding = g.value(out.user_vector).to_vec();
        Ok((UserVector { user, embedding }, g.value(out.logits).to_vec()))
    }

    fn loss(&self, rows: &[f32], target: usize) -> Result<(f64, bool)> {
        let mut g = Graph::new();
        let out = Self::forward_graph(&mut g, &self.params, rows, self.d_emb())?;
        let hit = argmax(g.value(out.logits)) == target;
        let l = g.cross_entropy(out.logits, target)?;
        Ok((g.scalar(l) as f64, hit))
    }

    fn train_step(&mut self, adam: &mut Adam, rows: &[f32], target: usize) -> Result<(f64, bool)> {
        let mut g = Graph::new();
        let out = Self::forward_graph(&mut g, &self.params, rows, self.d_emb())?;
        let hit = argmax(g.value(out.logits)) == target;
        let l = g.cross_entropy(out.logits, target)?;
        g.backward_into(l, &mut self.params)?;
        adam.step(&mut self.params);
        Ok((g.scalar(l) as f64, hit))
    }

    /// Mean loss and self-classification accuracy over `inputs` (one block
    /// per user, in user order).
    pub fn evaluate(&self, inputs: &[Vec<f32>]) -> Result<(f64, f64)> {
        let res = inputs.par_iter().enumerate().map(|(i, r)| self.loss(r, i)).collect::<Result<Vec<_>>>()?;
        let n = res.len() as f64;
        Ok((res.iter().map(|r| r.0).sum::<f64>() / n, res.iter().filter(|r| r.1).count() as f64 / n))
    }

    /// Step embeddings of every user under a trained recommender.
    pub fn inputs(recommender: &Recommender, ds: &Dataset) -> Result<Vec<Vec<f32>>> {
        ds.trajectories()
            .par_iter()
            .map(|t| recommender.embed_trajectory(t.user, &user_steps(t, recommender.config.t_max)?))
            .collect()
    }

    pub fn train(
        config: CompressorConfig,
        recommender: &Recommender,
        ds: &Dataset,
    ) -> Result<(Self, CompressorReport)> {
        if ds.n_users() == 0 {
            return Err(Error::EmptyDataset);
        }
        let inputs = Self::inputs(recommender, ds)?;
        let mut c = Self::init(config, recommender.config.d_emb, ds.user_ids().collect())?;
        let (initial_loss, _) = c.evaluate(&inputs)?;
        let epochs = c.fit(&inputs, c.config.epochs)?;
        let (_, accuracy) = c.evaluate(&inputs)?;
        let chance = 1.0 / c.n_users() as f64;
        Ok((c, CompressorReport { epochs, initial_loss, accuracy, chance }))
    }

    pub fn fit(&mut self, inputs: &[Vec<f32>], epochs: usize) -> Result<Vec<CompressorEpoch>> {
        if inputs.len() != self.n_users() {
            return Err(Error::Shape(format!("{} inputs for {} users", inputs.len(), self.n_users())));
        }
        let mut adam = Adam::new(AdamConfig { lr: self.config.lr, ..AdamConfig::default() });
        let seeds = Rng::new(self.config.seed);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut out = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(&mut seeds.stream(&[tag::SHUFFLE_COMPRESSOR, epoch as u64]));
            let (mut total, mut hits) = (0.0, 0usize);
            for &i in &order {
                let (l, hit) = self.train_step(&mut adam, &inputs[i], i)?;
                total += l;
                hits += usize::from(hit);
            }
            let n = inputs.len() as f64;
            out.push(CompressorEpoch { epoch: epoch + 1, mean_loss: total / n, accuracy: hits as f64 / n });
        }
        Ok(out)
    }

    /// Rank other users by the logits produced for `user`'s input. Ties go
    /// to the smaller user id.
    pub fn rank(&self, user: UserId, logits: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        let me = self.user_index(user)?;
        if k == 0 || k >= self.n_users() {
            return Err(Error::BadK { k, max: self.n_users() - 1 });
        }
        let mut others: Vec<usize> = (0..self.n_users()).filter(|&i| i != me).collect();
        others.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(self.users[a].cmp(&self.users[b])));
        Ok(others[..k].iter().map(|&i| Neighbor { id: self.users[i], score: logits[i] }).collect())
    }
}

/// JSON sidecar stored next to a compressor checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorSidecar {
    pub config: CompressorConfig,
    pub d_emb: usize,
    pub users: Vec<UserId>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Compressor {
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta =
            CompressorSidecar { config: self.config.clone(), d_emb: self.d_emb(), users: self.users.clone(), extra };
        checkpoint::save(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (params, meta): (ParamStore, CompressorSidecar) = checkpoint::load(path)?;
        let fresh = Self::init(meta.config.clone(), meta.d_emb, meta.users.clone())?;
        check_layout(&fresh.params, &params)?;
        Ok((Self { config: meta.config, users: meta.users, params }, meta.extra))
    }
}

/// Loaded parameters must match the names and shapes of a fresh model.
pub(crate) fn check_layout(expected: &ParamStore, got: &ParamStore) -> Result<()> {
    let shapes = |s: &ParamStore| s.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect::<Vec<_>>();
    if shapes(expected) != shapes(got) {
        return Err(Error::Format("checkpoint tensors do not match the model layout".into()));
    }
    Ok(())
}

/// Precomputed compressor outputs for every user of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityIndex {
    pub compressor: Compressor,
    pub vectors: Vec<UserVector>,
    pub logits: Vec<Vec<f32>>,
}

impl SimilarityIndex {
    pub fn build(compressor: Compressor, recommender: &Recommender, ds: &Dataset) -> Result<Self> {
        let inputs = Compressor::inputs(recommender, ds)?;
        let users: Vec<UserId> = ds.user_ids().collect();
        if users != compressor.users {
            return Err(Error::Shape("compressor and dataset users differ".into()));
        }
        let (vectors, logits) = users
            .par_iter()
            .zip(&inputs)
            .map(|(&u, r)| compressor.compress(u, r))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { compressor, vectors, logits })
    }

    pub fn user_vector(&self, user: UserId) -> Result<&UserVector> {
        Ok(&self.vectors[self.compressor.user_index(user)?])
    }

    /// Euclidean distance between two behavior vectors. Diagnostic only.
    pub fn vector_distance(&self, a: UserId, b: UserId) -> Result<f64> {
        let (a, b) = (self.user_vector(a)?, self.user_vector(b)?);
        Ok(a.embedding.iter().zip(&b.embedding).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt())
    }
}

impl UserSimilarity for SimilarityIndex {
    fn similar_users(&self, user: UserId, k: usize) -> Result<Vec<Neighbor>> {
        let i = self.compressor.user_index(user)?;
        self.compressor.rank(user, &self.logits[i], k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;

    fn users(n: u32) -> Vec<UserId> {
        (1..=n).map(UserId).collect()
    }

    #[test]
    fn zero_input_matches_scalar_evaluation() {
        let mut c = Compressor::init(CompressorConfig::default(), 4, users(5)).unwrap();
        let set = |c: &mut Compressor, name: &str, f: &dyn Fn(usize) -> f32| {
            c.params.get_mut(name).unwrap().value.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = f(i));
        };
        set(&mut c, B1, &|i| if i % 2 == 0 { 0.5 } else { -0.25 } * ((i % 7) as f32 + 1.0) / 7.0);
        set(&mut c, B2, &|i| (i as f32 - 8.0) / 16.0);
        let (uv, _) = c.compress(UserId(1), &[0.0; 8]).unwrap();
        let b1 = c.params.value(B1).unwrap().data();
        let w2 = c.params.value(W2).unwrap().data();
        let b2 = c.params.value(B2).unwrap().data();
        for j in 0..USER_DIM {
            let mut acc = b2[j] as f64;
            for i in 0..HIDDEN {
                acc += (b1[i].max(0.0) as f64) * w2[i * USER_DIM + j] as f64;
            }
            assert!((uv.embedding[j] as f64 - acc.max(0.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn duplication_and_row_order_do_not_matter() {
        let c = Compressor::init(CompressorConfig::default(), 4, users(5)).unwrap();
        let rows = [0.3, -1.0, 2.0, 0.5, 1.5, 0.25, -0.75, 0.0, -2.0, 1.0, 0.1, 0.9];
        let (a, la) = c.compress(UserId(1), &rows).unwrap();
        let dup: Vec<f32> = rows.chunks(4).flat_map(|r| r.iter().chain(r)).copied().collect();
        let (b, lb) = c.compress(UserId(1), &dup).unwrap();
        for (x, y) in a.embedding.iter().zip(&b.embedding) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(la.iter().zip(&lb).all(|(x, y)| (x - y).abs() < 1e-5));
        let shuffled: Vec<f32> = [2, 0, 1].iter().flat_map(|&r| rows[r * 4..r * 4 + 4].to_vec()).collect();
        let (s, ls) = c.compress(UserId(1), &shuffled).unwrap();
        assert!(a.embedding.iter().all(|&x| x >= 0.0));
        // Row sums are computed in f64, so reordering is bit-exact.
        assert_eq!(a, s);
        assert_eq!(la, ls);
    }

    #[test]
    fn rejects_ragged_input() {
        let c = Compressor::init(CompressorConfig::default(), 4, users(5)).unwrap();
        assert!(matches!(c.compress(UserId(1), &[0.0; 6]), Err(Error::Shape(_))));
        assert!(matches!(c.compress(UserId(1), &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn ranking_matches_brute_force() {
        let c = Compressor::init(CompressorConfig::default(), 4, users(6)).unwrap();
        let logits = [0.5, 2.0, -1.0, 2.0, 0.7, 3.0];
        let got = c.rank(UserId(6), &logits, 5).unwrap();
        let ids: Vec<u32> = got.iter().map(|n| n.id.0).collect();
        assert_eq!(ids, vec![2, 4, 5, 1, 3]);
        assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(c.rank(UserId(2), &logits, 2).unwrap().len(), 2);
        assert!(matches!(c.rank(UserId(2), &logits, 6), Err(Error::BadK { .. })));
        assert!(matches!(c.rank(UserId(9), &logits, 1), Err(Error::UnknownId(_))));
    }

    #[test]
    fn loss_gradient_check() {
        let c = Compressor::init(CompressorConfig::default(), 4, users(5)).unwrap();
        let mut params = c.params.cast::<f64>();
        let rows = [0.3, -1.0, 2.0, 0.5, 1.5, 0.25, -0.75, 0.1, -2.0, 1.0, 0.1, 0.9];
        // Push every hidden pre-activation at least 0.05 away from the ReLU
        // kink so central differences never straddle it.
        let mut h: Vec<f64> = (0..4).map(|c| (0..3).map(|r| rows[r * 4 + c]).sum::<f64>() / 3.0).collect();
        for (w, b, width) in [(W1, B1, HIDDEN), (W2, B2, USER_DIM)] {
            let wv = params.value(w).unwrap().data().to_vec();
            let pre: Vec<f64> =
                (0..width).map(|j| h.iter().enumerate().map(|(i, x)| x * wv[i * width + j]).sum()).collect();
            let bias: Vec<f64> = pre.iter().map(|&p| if p >= 0.0 { 0.05 } else { -0.05 }).collect();
            params.get_mut(b).unwrap().value.data_mut().copy_from_slice(&bias);
            h = pre.iter().zip(&bias).map(|(p, b)| (p + b).max(0.0)).collect();
        }
        let report = check_gradients(&params, 1e-3, |g, p| Compressor::loss_graph(g, p, &rows, 4, 2)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("comp-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.pxck");
        let c = Compressor::init(CompressorConfig::default(), 4, users(5)).unwrap();
        c.save(&path, serde_json::Value::Null).unwrap();
        assert_eq!(Compressor::load(&path).unwrap().0, c);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let inputs: Vec<Vec<f32>> =
            (0..5).map(|u| (0..8).map(|i| ((u * 8 + i) as f32 * 0.37).sin()).collect()).collect();
        let config = CompressorConfig { epochs: 1, lr: 1e-3, seed: 3 };
        let mut a = Compressor::init(config.clone(), 4, users(5)).unwrap();
        let (before, _) = a.evaluate(&inputs).unwrap();
        a.fit(&inputs, 1).unwrap();
        let (after, _) = a.evaluate(&inputs).unwrap();
        assert!(after < before);
        let mut b = Compressor::init(config, 4, users(5)).unwrap();
        b.fit(&inputs, 1).unwrap();
        assert_eq!(a, b);
    }
}
