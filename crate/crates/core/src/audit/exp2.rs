//! User-swap audit.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_p, mean, sample_others, AuditConfig, Comparison};
use crate::compressor::UserSimilarity;
use crate::error::Result;
use crate::ids::UserId;
use crate::ingest::Step;
use crate::recommender::Recommend;
use crate::rng::{tag, Rng};
use crate::stats::t_test_two_sample;

pub const CONDITIONS: [&str; 4] = ["most_similar", "second_similar", "random_a", "random_b"];
const LABELS: [&str; 4] =
    ["2/1 most similar user", "2/2 2nd most similar user", "2/3 random user", "2/4 random user (repeat)"];
const PAIRS: [(usize, usize); 3] = [(0, 2), (1, 2), (2, 3)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    /// Per user: 1 or 0 for the similar-user swaps, the unchanged fraction
    /// over all random swaps otherwise.
    pub unchanged: Vec<f64>,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Report {
    pub users: Vec<UserId>,
    pub random_trials: usize,
    /// Random replacement users are distinct within each user's draw.
    pub sampling: String,
    pub seed: u64,
    pub conditions: Vec<Condition>,
    pub comparisons: Vec<Comparison>,
}

fn user_row(
    model: &impl Recommend,
    similarity: &impl UserSimilarity,
    all_users: &[UserId],
    user: UserId,
    steps: &[Step],
    config: &AuditConfig,
) -> Result<[f64; 4]> {
    let base = model.predict(user, steps)?.recommended;
    let same = |other: UserId| -> Result<bool> { Ok(model.predict(other, steps)?.recommended == base) };
    let sims = similarity.similar_users(user, 2)?;
    let root = Rng::new(config.seed);
    let mut row = [0.0; 4];
    row[0] = f64::from(u8::from(same(sims[0].id)?));
    row[1] = f64::from(u8::from(same(sims[1].id)?));
    for (c, slot) in row.iter_mut().enumerate().skip(2) {
        let mut rng = root.stream(&[tag::EXP2, c as u64, user.0 as u64]);
        let others = sample_others(all_users, user, config.random_trials, &mut rng)?;
        let kept = others.iter().map(|&o| same(o)).collect::<Result<Vec<_>>>()?;
        *slot = kept.iter().filter(|&&k| k).count() as f64 / kept.len() as f64;
    }
    Ok(row)
}

/// For every user, replace the user id fed to the recommender with the two
/// most similar users and with random users, and record how often the
/// recommendation stays the same.
pub fn run_exp2(
    model: &impl Recommend,
    similarity: &impl UserSimilarity,
    inputs: &[(UserId, Vec<Step>)],
    config: &AuditConfig,
) -> Result<Exp2Report> {
    config.validate()?;
    let users: Vec<UserId> = inputs.iter().map(|x| x.0).collect();
    let rows = inputs
        .par_iter()
        .map(|(u, s)| user_row(model, similarity, &users, *u, s, config))
        .collect::<Result<Vec<_>>>()?;
    let conditions: Vec<Condition> = CONDITIONS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let unchanged: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            Condition { name: name.to_string(), proportion: mean(&unchanged), unchanged }
        })
        .collect();
    let comparisons = PAIRS
        .iter()
        .map(|&(a, b)| {
            Ok(Comparison {
                a: CONDITIONS[a].into(),
                b: CONDITIONS[b].into(),
                result: t_test_two_sample(&conditions[a].unchanged, &conditions[b].unchanged, config.threshold)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Exp2Report {
        users,
        random_trials: config.random_trials,
        sampling: "without replacement".into(),
        seed: config.seed,
        conditions,
        comparisons,
    })
}

impl Exp2Report {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "### Proportion of recommended POI being unchanged\n");
        let _ = writeln!(
            s,
            "{} users; {} random replacement users per user, drawn {}.\n",
            self.users.len(),
            self.random_trials,
            self.sampling
        );
        let _ = writeln!(s, "| Condition | Unchanged |");
        let _ = writeln!(s, "|---|---|");
        for (label, c) in LABELS.iter().zip(&self.conditions) {
            let _ = writeln!(s, "| {label} | {:.3}% |", 100.0 * c.proportion);
        }
        let _ = writeln!(s, "\n### Student's t-test between conditions\n");
        let _ = writeln!(s, "| Comparison | t | p-value | Significant |");
        let _ = writeln!(s, "|---|---|---|---|");
        for (&(a, b), c) in PAIRS.iter().zip(&self.comparisons) {
            let _ = writeln!(
                s,
                "| {} vs {} | {:.3} | {} | {} |",
                &LABELS[a][..3],
                &LABELS[b][..3],
                c.result.statistic,
                fmt_p(c.result.p_value),
                if c.result.significant { "yes" } else { "no" }
            );
        }
        s
    }
}
