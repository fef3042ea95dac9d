//! Synthetic check-in generator.
//!
//! Users belong to behavioral groups. Each group owns a cluster of regional
//! POIs and shares a pool of city-wide POIs with every other group. Each
//! group has a routine, a short cycle of distinct POIs from its pool, and
//! each user personalizes a few places of it with other POIs from the same
//! pool. At each step the user advances one place in the
//! routine and usually visits that POI; otherwise they visit a uniform draw
//! from the group's pool.

use std::io::Write;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{PoiId, UserId};
use crate::ingest::{BoundingBox, CheckIn};
use crate::rng::{tag, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_groups: usize,
    pub regional_per_group: usize,
    pub shared: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub routine_len: usize,
    /// Places of the group routine each user replaces with their own picks.
    pub personal: usize,
    /// Probability of visiting the routine POI rather than a random one.
    pub follow_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_groups: 4,
            regional_per_group: 12,
            shared: 32,
            min_len: 30,
            max_len: 50,
            routine_len: 5,
            personal: 0,
            follow_prob: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_pois(&self) -> usize {
        self.n_groups * self.regional_per_group + self.shared
    }
}

/// Timestamp of raw hour zero in generated data.
pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2012, 4, 2, 0, 0, 0).single().expect("valid date")
}

pub fn generate(config: &SynthConfig) -> Result<Vec<CheckIn>> {
    let c = config;
    if c.n_users == 0 || c.n_groups == 0 || c.n_pois() < 2 {
        return Err(Error::Domain("generator needs users, groups and at least two POIs".into()));
    }
    if c.min_len < 3 || c.max_len < c.min_len {
        return Err(Error::Domain(format!("bad trajectory length range {}..={}", c.min_len, c.max_len)));
    }
    if c.routine_len == 0 || c.personal > c.routine_len || 2 * c.routine_len > c.regional_per_group + c.shared {
        return Err(Error::Domain(format!("routine length {} does not fit a group pool", c.routine_len)));
    }
    if !(0.0..=1.0).contains(&c.follow_prob) {
        return Err(Error::Domain(format!("follow_prob must be in [0,1], got {}", c.follow_prob)));
    }
    let root = Rng::new(c.seed).child(&[tag::SYNTH]);
    let mut rng = root.stream(&[0]);
    let bbox = BoundingBox::NEW_YORK;
    let inner = |lo: f64, hi: f64, u: f64| lo + (hi - lo) * (0.1 + 0.8 * u);

    // POI ids are 1-based; regional POIs of group g come first, shared last.
    let mut locations = Vec::with_capacity(c.n_pois());
    for _ in 0..c.n_groups {
        let center = (inner(bbox.min_lat, bbox.max_lat, rng.gen()), inner(bbox.min_lon, bbox.max_lon, rng.gen()));
        for _ in 0..c.regional_per_group {
            locations.push((center.0 + rng.gen_range(-0.01..0.01), center.1 + rng.gen_range(-0.01..0.01)));
        }
    }
    for _ in 0..c.shared {
        locations.push((inner(bbox.min_lat, bbox.max_lat, rng.gen()), inner(bbox.min_lon, bbox.max_lon, rng.gen())));
    }
    let shared: Vec<usize> = (c.n_groups * c.regional_per_group..c.n_pois()).collect();

    let pools: Vec<Vec<usize>> = (0..c.n_groups)
        .map(|g| (g * c.regional_per_group..(g + 1) * c.regional_per_group).chain(shared.iter().copied()).collect())
        .collect();
    let routines: Vec<Vec<usize>> =
        pools.iter().map(|pool| pool.choose_multiple(&mut rng, c.routine_len).copied().collect()).collect();

    let origin = epoch();
    let mut out = Vec::new();
    for u in 0..c.n_users {
        let mut rng = root.stream(&[1, u as u64]);
        let g = u % c.n_groups;
        let pool = &pools[g];
        let mut routine = routines[g].clone();
        let spare: Vec<usize> = pool.iter().copied().filter(|p| !routine.contains(p)).collect();
        let picks: Vec<usize> = spare.choose_multiple(&mut rng, c.personal).copied().collect();
        for (slot, pick) in rand::seq::index::sample(&mut rng, c.routine_len, c.personal).into_iter().zip(picks) {
            routine[slot] = pick;
        }
        let len = rng.gen_range(c.min_len..=c.max_len);
        let offset = rng.gen_range(0..c.routine_len);
        let mut hour: i64 = rng.gen_range(0..168);
        for step in 0..len {
            if step > 0 {
                hour += rng.gen_range(1..=24);
            }
            let poi = if rng.gen_bool(c.follow_prob) {
                routine[(offset + step) % c.routine_len]
            } else {
                *pool.choose(&mut rng).expect("non-empty pool")
            };
            let (lat, lon) = locations[poi];
            out.push(CheckIn {
                user: UserId(u as u32 + 1),
                time: origin + Duration::hours(hour),
                lat,
                lon,
                poi: PoiId(poi as u32 + 1),
            });
        }
    }
    Ok(out)
}

/// Write check-ins in the tab-separated format read by the ingest parser.
pub fn write_checkins(mut w: impl Write, checkins: &[CheckIn]) -> Result<()> {
    for c in checkins {
        writeln!(w, "{}\t{}\t{}\t{}\t{}", c.user, c.time.to_rfc3339(), c.lat, c.lon, c.poi)?;
    }
    Ok(())
}
