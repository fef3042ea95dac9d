//! Planted near-duplicate users.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::AuditConfig;
use crate::compressor::{Compressor, CompressorConfig, Neighbor, SimilarityIndex, UserSimilarity};
use crate::error::{Error, Result};
use crate::geo::nearest_other_poi;
use crate::ids::UserId;
use crate::ingest::{Dataset, Step, Trajectory};
use crate::recommender::{ModelConfig, Recommender};
use crate::rng::{tag, Rng};

/// Number of source users that get two clones each.
pub const SOURCES: u32 = 100;
pub const MIN_USERS: usize = 3 * SOURCES as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloneKind {
    /// One visit moved to the nearest other POI.
    Poi,
    /// One visit shifted by one hour.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneRecord {
    pub clone_id: UserId,
    pub source_id: UserId,
    pub altered_index: usize,
    pub kind: CloneKind,
}

/// Expected number of hits out of 100 if the two neighbors were drawn at
/// random from the other users.
pub fn chance_baseline(n_users: usize) -> f64 {
    100.0 * 4.0 / (n_users as f64 - 1.0)
}

/// Re-index users 1..n in dataset order, then overwrite users 101..300
/// with single-step variants of users 1..100: user i+100 visits the
/// nearest other POI at one step, user i+200 arrives one hour later (or
/// earlier, when later would break time order) at one step.
pub fn build_clone_dataset(ds: &Dataset, seed: u64) -> Result<(Dataset, Vec<CloneRecord>)> {
    if ds.n_users() < MIN_USERS {
        return Err(Error::NotEnoughUsers { have: ds.n_users(), need: MIN_USERS });
    }
    let mut trajs: Vec<Trajectory> = ds
        .trajectories()
        .iter()
        .enumerate()
        .map(|(i, t)| Trajectory { user: UserId(i as u32 + 1), steps: t.steps.clone() })
        .collect();
    let root = Rng::new(seed);
    let mut manifest = Vec::with_capacity(2 * SOURCES as usize);
    for i in 0..SOURCES as usize {
        let source = trajs[i].steps.clone();
        let source_id = UserId(i as u32 + 1);

        let mut rng = root.stream(&[tag::CLONE, 0, i as u64]);
        let t = rng.gen_range(0..source.len());
        let mut steps = source.clone();
        steps[t] = Step { poi: nearest_other_poi(&ds.registry, source[t].poi)?, ..source[t] };
        let clone_id = UserId(source_id.0 + SOURCES);
        trajs[i + SOURCES as usize] = Trajectory::new(clone_id, steps)?;
        manifest.push(CloneRecord { clone_id, source_id, altered_index: t, kind: CloneKind::Poi });

        let mut rng = root.stream(&[tag::CLONE, 1, i as u64]);
        let shifted = |t: usize, delta: i64| -> Option<u32> {
            let h = u32::try_from(source[t].raw_hour as i64 + delta).ok()?;
            let after_prev = t == 0 || source[t - 1].raw_hour <= h;
            let before_next = t + 1 == source.len() || h <= source[t + 1].raw_hour;
            (after_prev && before_next).then_some(h)
        };
        // Drawing uniformly among steps that admit a shift is the same as
        // redrawing whenever neither direction works.
        let valid: Vec<usize> = (0..source.len()).filter(|&t| shifted(t, 1).or(shifted(t, -1)).is_some()).collect();
        let t = *valid.choose(&mut rng).expect("the last step can always move later");
        let h = shifted(t, 1).or(shifted(t, -1)).expect("valid step");
        let mut steps = source.clone();
        steps[t] = Step::new(source[t].poi, h);
        let clone_id = UserId(source_id.0 + 2 * SOURCES);
        trajs[i + 2 * SOURCES as usize] = Trajectory::new(clone_id, steps)?;
        manifest.push(CloneRecord { clone_id, source_id, altered_index: t, kind: CloneKind::Time });
    }
    manifest.sort_by_key(|r| r.clone_id);
    Ok((Dataset::new(trajs, ds.registry.clone())?, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub source: UserId,
    pub neighbors: [UserId; 2],
    pub hit: bool,
}

/// Sources whose two most similar users include one of their clones.
pub fn count_clone_hits(similarity: &impl UserSimilarity) -> Result<Vec<HitRow>> {
    (1..=SOURCES)
        .map(|i| {
            let top = similarity.similar_users(UserId(i), 2)?;
            let neighbors = [top[0].id, top[1].id];
            let hit = neighbors.iter().any(|n| n.0 == i + SOURCES || n.0 == i + 2 * SOURCES);
            Ok(HitRow { source: UserId(i), neighbors, hit })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp4Report {
    pub n_users: usize,
    pub hits: usize,
    pub chance: f64,
    pub recommender_seed: u64,
    pub compressor_seed: u64,
    pub held_out_top1: f64,
    pub compressor_accuracy: f64,
    pub rows: Vec<HitRow>,
    pub manifest: Vec<CloneRecord>,
}

/// Retrain both networks from scratch on the clone dataset and count how
/// often a source user's clones are among its two most similar users.
pub fn run_exp4(
    clones: &Dataset,
    manifest: Vec<CloneRecord>,
    model: &ModelConfig,
    compressor: &CompressorConfig,
    config: &AuditConfig,
) -> Result<Exp4Report> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let model = ModelConfig { seed: root.stream_seed(&[tag::EXP4, 0]), ..model.clone() };
    let compressor = CompressorConfig { seed: root.stream_seed(&[tag::EXP4, 1]), ..compressor.clone() };
    let (rec, rec_report) = Recommender::train(model.clone(), clones)?;
    let (comp, comp_report) = Compressor::train(compressor.clone(), &rec, clones)?;
    let index = SimilarityIndex::build(comp, &rec, clones)?;
    let rows = count_clone_hits(&index)?;
    Ok(Exp4Report {
        n_users: clones.n_users(),
        hits: rows.iter().filter(|r| r.hit).count(),
        chance: chance_baseline(clones.n_users()),
        recommender_seed: model.seed,
        compressor_seed: compressor.seed,
        held_out_top1: rec_report.held_out_top1,
        compressor_accuracy: comp_report.accuracy,
        rows,
        manifest,
    })
}

impl Exp4Report {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "### Clone users among the two most similar users\n");
        let _ = writeln!(s, "| Users | Hits (out of {SOURCES}) | Expected by chance |");
        let _ = writeln!(s, "|---|---|---|");
        let _ = writeln!(s, "| {} | {} | {:.3} |", self.n_users, self.hits, self.chance);
        let _ = writeln!(
            s,
            "\nRetrained recommender held-out top-1 accuracy {:.3}; compressor self-classification accuracy {:.3}.",
            self.held_out_top1, self.compressor_accuracy
        );
        s
    }
}

/// Reference similarity: rank users by how many visits differ from the
/// query user's, position by position (length differences count as
/// differing visits).
#[derive(Debug, Clone)]
pub struct HammingSimilarity<'a> {
    pub dataset: &'a Dataset,
}

pub fn hamming(a: &[Step], b: &[Step]) -> usize {
    let common = a.iter().zip(b).filter(|(x, y)| x.poi != y.poi || x.raw_hour != y.raw_hour).count();
    common + a.len().abs_diff(b.len())
}

impl UserSimilarity for HammingSimilarity<'_> {
    fn similar_users(&self, user: UserId, k: usize) -> Result<Vec<Neighbor>> {
        let me = &self.dataset.trajectory(user)?.steps;
        let mut ranked: Vec<(usize, UserId)> = self
            .dataset
            .trajectories()
            .iter()
            .filter(|t| t.user != user)
            .map(|t| (hamming(me, &t.steps), t.user))
            .collect();
        if k == 0 || k > ranked.len() {
            return Err(Error::BadK { k, max: ranked.len() });
        }
        ranked.sort();
        Ok(ranked[..k].iter().map(|&(d, id)| Neighbor { id, score: -(d as f32) }).collect())
    }
}
