//! Perturbation audits of the recommender's explanations.
//!
//! * `exp1`: does perturbing the most-attended steps change the output more
//!   often than perturbing random steps?
//! * `exp2`: does swapping in a similar user's id preserve the output more
//!   often than swapping in a random user's id?
//! * `exp3`: are similar users closer in space and weekly time than random
//!   users?
//! * `exp4`: does the similarity module find planted near-duplicate users?
//!
//! Work is spread over users with rayon; every random draw comes from a
//! stream keyed by (experiment, condition, user, trial), so results do not
//! depend on scheduling.

pub mod exp1;
pub mod exp2;
pub mod exp3;
pub mod exp4;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressor::user_steps;
use crate::error::{Error, Result};
use crate::ids::{PoiId, UserId};
use crate::ingest::{Dataset, Step, HOURS_PER_WEEK};

pub use exp1::{run_exp1, Exp1Report};
pub use exp2::{run_exp2, Exp2Report};
pub use exp3::{avg_poi_distance, avg_time_difference, run_exp3, Exp3Report};
pub use exp4::{build_clone_dataset, chance_baseline, count_clone_hits, run_exp4, CloneKind, CloneRecord, Exp4Report};

/// Audit parameters shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Perturbations per user and condition in Experiment 1.
    pub trials: usize,
    /// Random replacement users per user in Experiment 2.
    pub random_trials: usize,
    /// Random comparison users per user in Experiment 3.
    pub n_random: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { trials: 10, random_trials: 30, n_random: 10, threshold: crate::stats::DEFAULT_THRESHOLD, seed: 0 }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.random_trials == 0 || self.n_random < 2 {
            return Err(Error::Domain("trials and random_trials must be positive, n_random at least 2".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Domain(format!("threshold must be in (0,1), got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Named pairwise comparison between two conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub result: crate::stats::TestResult,
}

/// Replace step `t` with a random different POI at a random time between its
/// neighbors. The first step may move back to hour 0 and the last up to a
/// week later.
pub fn perturb_timestep(steps: &[Step], t: usize, pois: &[PoiId], rng: &mut impl rand::Rng) -> Result<Vec<Step>> {
    if t >= steps.len() {
        return Err(Error::BadIndex { index: t, len: steps.len() });
    }
    let original = steps[t].poi;
    let others = pois.iter().filter(|&&p| p != original).count();
    if others == 0 {
        return Err(Error::NoCandidate);
    }
    let pick = rng.gen_range(0..others);
    let poi = *pois.iter().filter(|&&p| p != original).nth(pick).expect("pick < others");
    let lo = if t == 0 { 0 } else { steps[t - 1].raw_hour };
    let hi = if t + 1 == steps.len() { steps[t].raw_hour + HOURS_PER_WEEK } else { steps[t + 1].raw_hour };
    let mut out = steps.to_vec();
    out[t] = Step::new(poi, rng.gen_range(lo..=hi));
    Ok(out)
}

/// Each user's audit input (every visit but the last, capped at `t_max`)
/// in dataset order.
pub fn audit_inputs(ds: &Dataset, t_max: usize) -> Result<Vec<(UserId, Vec<Step>)>> {
    ds.trajectories().par_iter().map(|t| Ok((t.user, user_steps(t, t_max)?))).collect()
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `count` distinct users other than `me`, drawn without replacement.
pub(crate) fn sample_others(
    users: &[UserId],
    me: UserId,
    count: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<UserId>> {
    let pool: Vec<UserId> = users.iter().copied().filter(|&u| u != me).collect();
    if pool.len() < count {
        return Err(Error::NotEnoughUsers { have: users.len(), need: count + 1 });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect())
}

pub(crate) fn fmt_p(p: f64) -> String {
    if p != 0.0 && p < 1e-3 {
        format!("{p:.3e}")
    } else {
        format!("{p:.3}")
    }
}
