//! Local explanations: which input steps drove a recommendation and which
//! users behave like the one being served.

use serde::{Deserialize, Serialize};

use crate::compressor::{user_steps, Neighbor, UserSimilarity};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::ids::{PoiId, UserId};
use crate::ingest::Dataset;
use crate::recommender::{Prediction, Recommender};

/// Top `k` (step index, weight) pairs from row `candidate` of the matching
/// matrix, or from the recommended row when `candidate` is `None`. Ties go
/// to the earlier step.
pub fn important_timesteps_for(pred: &Prediction, candidate: Option<usize>, k: usize) -> Result<Vec<(usize, f32)>> {
    if k == 0 || k > pred.valid_t {
        return Err(Error::BadK { k, max: pred.valid_t });
    }
    let l = candidate.unwrap_or(pred.recommended);
    if l >= pred.scores.len() {
        return Err(Error::BadIndex { index: l, len: pred.scores.len() });
    }
    let mut ranked: Vec<(usize, f32)> = pred.attention_row(l).iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

pub fn important_timesteps(pred: &Prediction, k: usize) -> Result<Vec<(usize, f32)>> {
    important_timesteps_for(pred, None, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepWeight {
    pub timestep: usize,
    pub weight: f32,
    pub poi: PoiId,
    pub location: GeoPoint,
    pub raw_hour: u32,
    pub hour_of_week: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub user: UserId,
    pub recommended_poi: PoiId,
    pub recommended_location: GeoPoint,
    pub timestep_ranking: Vec<StepWeight>,
    pub similar_users: Vec<Neighbor>,
}

/// Explain the recommendation made from `user`'s history (all visits but
/// the last).
pub fn explain(
    recommender: &Recommender,
    similarity: &impl UserSimilarity,
    ds: &Dataset,
    user: UserId,
    k_steps: usize,
    k_users: usize,
) -> Result<Explanation> {
    let steps = user_steps(ds.trajectory(user)?, recommender.config.t_max)?;
    let pred = recommender.forward(user, &steps)?;
    let ranking = important_timesteps(&pred, k_steps)?;
    let timestep_ranking = ranking
        .into_iter()
        .map(|(t, weight)| {
            let s = steps[t];
            let location = recommender.vocab.poi_locations[recommender.vocab.poi(s.poi)?];
            Ok(StepWeight {
                timestep: t,
                weight,
                poi: s.poi,
                location,
                raw_hour: s.raw_hour,
                hour_of_week: s.hour_of_week,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Explanation {
        user,
        recommended_poi: recommender.vocab.pois[pred.recommended],
        recommended_location: recommender.vocab.poi_locations[pred.recommended],
        timestep_ranking,
        similar_users: similarity.similar_users(user, k_users)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::softmax_f64;

    fn pred(row: &[f32]) -> Prediction {
        Prediction {
            scores: vec![0.0],
            recommended: 0,
            attention: row.to_vec(),
            values: vec![0.0; row.len()],
            valid_t: row.len(),
        }
    }

    #[test]
    fn picks_the_largest_weight() {
        let p = pred(&[0.1, 0.5, 0.2, 0.2]);
        assert_eq!(important_timesteps(&p, 1).unwrap(), vec![(1, 0.5)]);
        assert_eq!(important_timesteps(&p, 2).unwrap(), vec![(1, 0.5), (2, 0.2)]);
        assert_eq!(important_timesteps(&p, 4).unwrap().iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2, 3, 0]);
    }

    #[test]
    fn k_out_of_range() {
        let p = pred(&[0.1, 0.9]);
        assert!(matches!(important_timesteps(&p, 0), Err(Error::BadK { .. })));
        assert!(matches!(important_timesteps(&p, 3), Err(Error::BadK { k: 3, max: 2 })));
        assert!(matches!(important_timesteps_for(&p, Some(4), 1), Err(Error::BadIndex { .. })));
    }

    #[test]
    fn matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            // Coarse values so ties happen.
            let row: Vec<f32> = (0..30).map(|_| rng.gen_range(0..8) as f32 / 8.0).collect();
            let mut idx: Vec<usize> = (0..30).collect();
            idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            for k in [1, 5, 30] {
                let got = important_timesteps(&pred(&row), k).unwrap();
                assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), idx[..k]);
            }
        }
    }

    #[test]
    fn full_ranking_sums_to_one_and_is_shift_invariant() {
        let logits = [0.3, -1.2, 2.5, 0.0, 1.1];
        let row: Vec<f32> = softmax_f64(&logits).iter().map(|&x| x as f32).collect();
        let full = important_timesteps(&pred(&row), 5).unwrap();
        assert!((full.iter().map(|x| x.1).sum::<f32>() - 1.0).abs() < 1e-5);
        let shifted: Vec<f64> = logits.iter().map(|x| x + 7.25).collect();
        let row2: Vec<f32> = softmax_f64(&shifted).iter().map(|&x| x as f32).collect();
        let a: Vec<usize> = full.iter().map(|x| x.0).collect();
        let b: Vec<usize> = important_timesteps(&pred(&row2), 5).unwrap().iter().map(|x| x.0).collect();
        assert_eq!(a, b);
    }
}
