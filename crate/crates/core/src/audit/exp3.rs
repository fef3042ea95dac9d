//! Distance between similar users in space and weekly time.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_p, mean, sample_others, AuditConfig};
use crate::compressor::UserSimilarity;
use crate::error::{Error, Result};
use crate::geo::haversine_km;
use crate::ids::UserId;
use crate::ingest::{Dataset, PoiRegistry, Trajectory};
use crate::rng::{tag, Rng};
use crate::stats::t_test_one_sample;

/// Number of closest pairs used by the "closest" variants.
pub const CLOSEST_PAIRS: usize = 10;

pub const VARIANTS: [&str; 4] = ["all_pairs_distance", "all_pairs_time", "closest_distance", "closest_time"];
const LABELS: [&str; 4] = [
    "Average POI distance, all pairs (km)",
    "Average time difference, all pairs (h)",
    "Average POI distance, 10 closest pairs (km)",
    "Average time difference, 10 closest pairs (h)",
];

fn mean_of_smallest(mut values: Vec<f64>, closest_k: Option<usize>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(k) = closest_k {
        if k == 0 {
            return Err(Error::BadK { k, max: values.len() });
        }
        values.sort_by(f64::total_cmp);
        values.truncate(k);
    }
    Ok(mean(&values))
}

/// Mean haversine distance over pairs drawn from the two users' sets of
/// distinct POIs; with `closest_k`, the mean of the `k` smallest pairs.
pub fn avg_poi_distance(
    a: &Trajectory,
    b: &Trajectory,
    registry: &PoiRegistry,
    closest_k: Option<usize>,
) -> Result<f64> {
    let locs = |t: &Trajectory| -> Result<Vec<_>> {
        let set: BTreeSet<_> = t.steps.iter().map(|s| s.poi).collect();
        set.into_iter().map(|p| registry.location(p)).collect()
    };
    let (pa, pb) = (locs(a)?, locs(b)?);
    let pairs = pa.iter().flat_map(|&x| pb.iter().map(move |&y| haversine_km(x, y))).collect();
    mean_of_smallest(pairs, closest_k)
}

/// Mean absolute hour-of-week difference over all pairs of visits (no wrap
/// around the end of the week); with `closest_k`, the mean of the `k`
/// smallest pairs.
pub fn avg_time_difference(a: &Trajectory, b: &Trajectory, closest_k: Option<usize>) -> Result<f64> {
    let pairs = a
        .steps
        .iter()
        .flat_map(|x| b.steps.iter().map(move |y| (x.hour_of_week as f64 - y.hour_of_week as f64).abs()))
        .collect();
    mean_of_smallest(pairs, closest_k)
}

fn metric(variant: usize, a: &Trajectory, b: &Trajectory, registry: &PoiRegistry) -> Result<f64> {
    match variant {
        0 => avg_poi_distance(a, b, registry, None),
        1 => avg_time_difference(a, b, None),
        2 => avg_poi_distance(a, b, registry, Some(CLOSEST_PAIRS)),
        _ => avg_time_difference(a, b, Some(CLOSEST_PAIRS)),
    }
}

/// Whether a deterministic value is significantly below a random sample:
/// one-sample two-sided t-test of the sample against the value, gated on
/// direction.
pub fn significantly_closer(deterministic: f64, random: &[f64], threshold: f64) -> Result<(bool, f64)> {
    let r = t_test_one_sample(random, deterministic, threshold)?;
    Ok((r.significant && deterministic < mean(random), r.p_value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRow {
    pub user: UserId,
    pub similar: [UserId; 2],
    pub random: Vec<UserId>,
    /// Per variant: distance to the most and 2nd most similar user.
    pub similar_values: Vec<[f64; 2]>,
    pub random_means: Vec<f64>,
    pub p_values: Vec<[f64; 2]>,
    pub significant: Vec<[bool; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    /// Share of users whose most similar user is significantly closer.
    pub most_similar: f64,
    pub second_similar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp3Report {
    pub n_random: usize,
    pub seed: u64,
    pub test: String,
    pub variants: Vec<Variant>,
    pub rows: Vec<UserRow>,
}

fn user_row(
    similarity: &impl UserSimilarity,
    ds: &Dataset,
    users: &[UserId],
    traj: &Trajectory,
    config: &AuditConfig,
) -> Result<UserRow> {
    let sims = similarity.similar_users(traj.user, 2)?;
    let similar = [sims[0].id, sims[1].id];
    let mut rng = Rng::new(config.seed).stream(&[tag::EXP3, traj.user.0 as u64]);
    let random = sample_others(users, traj.user, config.n_random, &mut rng)?;
    let mut row = UserRow {
        user: traj.user,
        similar,
        random: random.clone(),
        similar_values: Vec::new(),
        random_means: Vec::new(),
        p_values: Vec::new(),
        significant: Vec::new(),
    };
    for v in 0..VARIANTS.len() {
        let rand_vals =
            random.iter().map(|&u| metric(v, traj, ds.trajectory(u)?, &ds.registry)).collect::<Result<Vec<_>>>()?;
        let mut vals = [0.0; 2];
        let mut ps = [0.0; 2];
        let mut sig = [false; 2];
        for k in 0..2 {
            vals[k] = metric(v, traj, ds.trajectory(similar[k])?, &ds.registry)?;
            (sig[k], ps[k]) = significantly_closer(vals[k], &rand_vals, config.threshold)?;
        }
        row.similar_values.push(vals);
        row.random_means.push(mean(&rand_vals));
        row.p_values.push(ps);
        row.significant.push(sig);
    }
    Ok(row)
}

/// For every user, compare the spatial and temporal distance to each of
/// the two most similar users against `n_random` random users.
pub fn run_exp3(similarity: &impl UserSimilarity, ds: &Dataset, config: &AuditConfig) -> Result<Exp3Report> {
    config.validate()?;
    let users: Vec<UserId> = ds.user_ids().collect();
    let rows = ds
        .trajectories()
        .par_iter()
        .map(|t| user_row(similarity, ds, &users, t, config))
        .collect::<Result<Vec<_>>>()?;
    let share = |v: usize, k: usize| rows.iter().filter(|r| r.significant[v][k]).count() as f64 / rows.len() as f64;
    let variants = VARIANTS
        .iter()
        .enumerate()
        .map(|(v, name)| Variant { name: name.to_string(), most_similar: share(v, 0), second_similar: share(v, 1) })
        .collect();
    Ok(Exp3Report {
        n_random: config.n_random,
        seed: config.seed,
        test: "one-sample two-sided t-test of the random-user values against the similar-user value; \
               significant when p < threshold and the similar-user value is below the random mean"
            .into(),
        variants,
        rows,
    })
}

impl Exp3Report {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "### Proportion of statistically significant differences\n");
        let _ = writeln!(
            s,
            "{} users, each compared with {} random users. {}.\n",
            self.rows.len(),
            self.n_random,
            self.test
        );
        let _ = writeln!(s, "| Metric | Most similar user | 2nd most similar user |");
        let _ = writeln!(s, "|---|---|---|");
        for (label, v) in LABELS.iter().zip(&self.variants) {
            let _ = writeln!(s, "| {label} | {:.3}% | {:.3}% |", 100.0 * v.most_similar, 100.0 * v.second_similar);
        }
        if let Some(p) = self.rows.iter().flat_map(|r| r.p_values.iter().map(|x| x[0])).reduce(f64::min) {
            let _ = writeln!(s, "\nSmallest p-value (most similar user): {}", fmt_p(p));
        }
        s
    }
}
