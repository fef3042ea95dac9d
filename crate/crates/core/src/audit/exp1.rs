//! Step perturbation audit.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_p, mean, perturb_timestep, AuditConfig, Comparison};
use crate::error::Result;
use crate::explain::important_timesteps;
use crate::ids::{PoiId, UserId};
use crate::ingest::Step;
use crate::recommender::Recommend;
use crate::rng::{tag, Rng};
use crate::stats::anova_one_way;

pub const CONDITIONS: [&str; 4] = ["top1", "top2", "random_a", "random_b"];
const LABELS: [&str; 4] = [
    "1/1 most important timestep",
    "1/2 2nd most important timestep",
    "1/3 random timestep",
    "1/4 random timestep (repeat)",
];
const PAIRS: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    /// Output changes per user, out of `trials`.
    pub counts: Vec<u32>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Report {
    pub users: Vec<UserId>,
    pub trials: usize,
    pub seed: u64,
    pub conditions: Vec<Condition>,
    pub comparisons: Vec<Comparison>,
}

fn user_counts(
    model: &impl Recommend,
    pois: &[PoiId],
    user: UserId,
    steps: &[Step],
    config: &AuditConfig,
) -> Result<[u32; 4]> {
    let base = model.predict(user, steps)?;
    let top = important_timesteps(&base, 2.min(steps.len()))?;
    let root = Rng::new(config.seed);
    let mut counts = [0u32; 4];
    for (c, count) in counts.iter_mut().enumerate() {
        for trial in 0..config.trials {
            let mut rng = root.stream(&[tag::EXP1, c as u64, user.0 as u64, trial as u64]);
            let t = match c {
                0 => top[0].0,
                1 => top.get(1).map_or(top[0].0, |x| x.0),
                _ => rng.gen_range(0..steps.len()),
            };
            let perturbed = perturb_timestep(steps, t, pois, &mut rng)?;
            if model.predict(user, &perturbed)?.recommended != base.recommended {
                *count += 1;
            }
        }
    }
    Ok(counts)
}

/// For every user, perturb the two most-attended input steps and two
/// random steps `trials` times each and count how often the recommendation
/// changes.
pub fn run_exp1(model: &impl Recommend, inputs: &[(UserId, Vec<Step>)], config: &AuditConfig) -> Result<Exp1Report> {
    config.validate()?;
    let pois: Vec<PoiId> = (0..model.n_pois()).map(|i| model.poi_id(i)).collect();
    let per_user =
        inputs.par_iter().map(|(u, s)| user_counts(model, &pois, *u, s, config)).collect::<Result<Vec<_>>>()?;
    let conditions: Vec<Condition> = CONDITIONS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let counts: Vec<u32> = per_user.iter().map(|r| r[c]).collect();
            let mean = mean(&counts.iter().map(|&x| x as f64).collect::<Vec<_>>());
            Condition { name: name.to_string(), counts, mean }
        })
        .collect();
    let samples: Vec<Vec<f64>> = conditions.iter().map(|c| c.counts.iter().map(|&x| x as f64).collect()).collect();
    let comparisons = PAIRS
        .iter()
        .map(|&(a, b)| {
            Ok(Comparison {
                a: CONDITIONS[a].into(),
                b: CONDITIONS[b].into(),
                result: anova_one_way(&[&samples[a], &samples[b]], config.threshold)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Exp1Report {
        users: inputs.iter().map(|x| x.0).collect(),
        trials: config.trials,
        seed: config.seed,
        conditions,
        comparisons,
    })
}

impl Exp1Report {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "### Average frequency of output (recommended POI) change\n");
        let _ = writeln!(s, "{} users, {} perturbations per user and condition.\n", self.users.len(), self.trials);
        let _ = writeln!(s, "| Condition | Mean changes (out of {}) |", self.trials);
        let _ = writeln!(s, "|---|---|");
        for (label, c) in LABELS.iter().zip(&self.conditions) {
            let _ = writeln!(s, "| {label} | {:.3} |", c.mean);
        }
        let _ = writeln!(s, "\n### One-way ANOVA between conditions\n");
        let _ = writeln!(s, "| Comparison | F | p-value | Significant |");
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommender::Prediction;

    struct Constant;

    impl Recommend for Constant {
        fn n_pois(&self) -> usize {
            4
        }
        fn poi_id(&self, i: usize) -> PoiId {
            PoiId(i as u32 + 1)
        }
        fn predict(&self, _: UserId, steps: &[Step]) -> Result<Prediction> {
            let t = steps.len();
            Ok(Prediction {
                scores: vec![1.0; 4],
                recommended: 0,
                attention: (0..4 * t).map(|i| (i % t + 1) as f32 / (t * (t + 1) / 2) as f32).collect(),
                values: vec![0.0; t],
                valid_t: t,
            })
        }
    }

    /// Recommends whatever POI sits at the step it attends to most.
    struct Copier;

    impl Recommend for Copier {
        fn n_pois(&self) -> usize {
            4
        }
        fn poi_id(&self, i: usize) -> PoiId {
            PoiId(i as u32 + 1)
        }
        fn predict(&self, _: UserId, steps: &[Step]) -> Result<Prediction> {
            let t = steps.len();
            let mut row = vec![0.05 / (t - 1) as f32; t];
            row[t - 1] = 0.95;
            let l = steps[t - 1].poi.0 as usize - 1;
            let mut scores = vec![0.0; 4];
            scores[l] = 1.0;
            Ok(Prediction { scores, recommended: l, attention: row.repeat(4), values: vec![0.0; t], valid_t: t })
        }
    }

    fn inputs() -> Vec<(UserId, Vec<Step>)> {
        (1..=12).map(|u| (UserId(u), (0..5).map(|i| Step::new(PoiId((u + i) % 4 + 1), 3 * i)).collect())).collect()
    }

    #[test]
    fn constant_model_never_changes() {
        let r = run_exp1(&Constant, &inputs(), &AuditConfig::default()).unwrap();
        assert!(r.conditions.iter().all(|c| c.counts.iter().all(|&x| x == 0) && c.mean == 0.0));
        assert!(r.comparisons.iter().all(|c| c.result.p_value == 1.0 && !c.result.significant));
        assert_eq!(r.comparisons.len(), 4);
    }

    #[test]
    fn attended_step_matters_most() {
        let r = run_exp1(&Copier, &inputs(), &AuditConfig::default()).unwrap();
        assert!(r.conditions[0].counts.iter().all(|&x| x == 10));
        assert!(r.conditions[1].counts.iter().all(|&x| x == 0));
        assert!(r.conditions[2].mean > 0.0 && r.conditions[2].mean < 10.0);
        assert!(r.comparisons[2].result.significant);
        assert!(r.to_markdown().contains("| 1/1 most important timestep | 10.000 |"));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = run_exp1(&Copier, &inputs(), &AuditConfig::default()).unwrap();
        let b = run_exp1(&Copier, &inputs(), &AuditConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
