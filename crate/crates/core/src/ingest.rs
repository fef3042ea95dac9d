//! Check-in parsing, trajectory construction, and the canonical dataset file.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::ids::{PoiId, UserId};

/// Hours in the weekly cycle.
pub const HOURS_PER_WEEK: u32 = 168;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckIn {
    pub user: UserId,
    pub time: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub poi: PoiId,
}

/// One visit of a trajectory. `hour_of_week` is always `raw_hour % 168`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub poi: PoiId,
    pub raw_hour: u32,
    pub hour_of_week: u16,
}

impl Step {
    pub fn new(poi: PoiId, raw_hour: u32) -> Self {
        Self { poi, raw_hour, hour_of_week: (raw_hour % HOURS_PER_WEEK) as u16 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user: UserId,
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// Checks length and time ordering.
    pub fn new(user: UserId, steps: Vec<Step>) -> Result<Self> {
        if steps.len() < 3 {
            return Err(Error::TrajectoryTooShort { len: steps.len() });
        }
        if steps.windows(2).any(|w| w[1].raw_hour < w[0].raw_hour) {
            return Err(Error::Format(format!("trajectory of user {user} is not time-ordered")));
        }
        Ok(Self { user, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// POI coordinates with a contiguous index `0..L` ordered by POI id.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiRegistry {
    ids: Vec<PoiId>,
    locations: Vec<GeoPoint>,
    index: HashMap<PoiId, usize>,
}

impl PoiRegistry {
    pub fn from_entries(entries: impl IntoIterator<Item = (PoiId, GeoPoint)>) -> Result<Self> {
        let sorted: BTreeMap<PoiId, GeoPoint> = entries.into_iter().collect();
        let ids: Vec<PoiId> = sorted.keys().copied().collect();
        let locations = sorted.values().copied().collect();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Self { ids, locations, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, poi: PoiId) -> Result<usize> {
        self.index.get(&poi).copied().ok_or(Error::UnknownPoi(poi.0))
    }

    pub fn id_at(&self, index: usize) -> PoiId {
        self.ids[index]
    }

    pub fn ids(&self) -> &[PoiId] {
        &self.ids
    }

    pub fn location(&self, poi: PoiId) -> Result<GeoPoint> {
        Ok(self.locations[self.index_of(poi)?])
    }

    pub fn location_at(&self, index: usize) -> GeoPoint {
        self.locations[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PoiId, GeoPoint)> + '_ {
        self.ids.iter().copied().zip(self.locations.iter().copied())
    }
}

/// Input steps and held-out target for one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub user: UserId,
    pub input: Vec<Step>,
    pub target: PoiId,
}

/// Last step becomes the target; the input keeps at most `t_max` of the most
/// recent remaining steps.
pub fn split_last(traj: &Trajectory, t_max: usize) -> Result<DatasetSplit> {
    let n = traj.steps.len();
    if n < 3 {
        return Err(Error::TrajectoryTooShort { len: n });
    }
    let start = (n - 1).saturating_sub(t_max);
    Ok(DatasetSplit { user: traj.user, input: traj.steps[start..n - 1].to_vec(), target: traj.steps[n - 1].poi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub const NEW_YORK: BoundingBox = BoundingBox { min_lat: 40.40, max_lat: 41.00, min_lon: -74.30, max_lon: -73.60 };

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

impl Default for BoundingBox {
    fn default() -> Self {
        Self::NEW_YORK
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub checkins: Vec<CheckIn>,
    pub malformed: usize,
}

fn parse_line(line: &str) -> Option<CheckIn> {
    let mut fields = line.split('\t');
    let user: u32 = fields.next()?.trim().parse().ok()?;
    let time = DateTime::parse_from_rfc3339(fields.next()?.trim()).ok()?.with_timezone(&Utc);
    let lat: f64 = fields.next()?.trim().parse().ok()?;
    let lon: f64 = fields.next()?.trim().parse().ok()?;
    let poi: u32 = fields.next()?.trim().parse().ok()?;
    if fields.next().is_some() || user == 0 || poi == 0 {
        return None;
    }
    GeoPoint::new(lat, lon).ok()?;
    Some(CheckIn { user: UserId(user), time, lat, lon, poi: PoiId(poi) })
}

/// Parse tab-separated `user, time, lat, lon, poi` lines. Blank lines are
/// ignored; malformed lines are counted and skipped.
pub fn parse_checkins(reader: impl BufRead) -> Result<ParseOutcome> {
    let mut checkins = Vec::new();
    let mut malformed = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Some(c) => checkins.push(c),
            None => malformed += 1,
        }
    }
    if checkins.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total = checkins.len() + malformed;
    if malformed * 2 > total {
        return Err(Error::CorruptDataset { malformed, total });
    }
    Ok(ParseOutcome { checkins, malformed })
}

/// Read a check-in file, transparently decompressing gzip input.
pub fn read_checkins_file(path: &Path) -> Result<ParseOutcome> {
    let mut file = BufReader::new(std::fs::File::open(path)?);
    let gz = file.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    if gz {
        parse_checkins(BufReader::new(flate2::read::MultiGzDecoder::new(file)))
    } else {
        parse_checkins(file)
    }
}

/// Group check-ins into one time-ordered trajectory per user.
///
/// Check-ins outside `bbox` and exact duplicates are dropped, then users with
/// fewer than `min_len` visits. Raw hours count from the earliest surviving
/// check-in.
pub fn build_trajectories(
    checkins: &[CheckIn],
    bbox: &BoundingBox,
    min_len: usize,
) -> Result<(Vec<Trajectory>, PoiRegistry)> {
    if min_len < 3 {
        return Err(Error::Domain(format!("min_len must be at least 3, got {min_len}")));
    }
    let mut kept: Vec<&CheckIn> = checkins.iter().filter(|c| bbox.contains(c.lat, c.lon)).collect();
    let key = |c: &CheckIn| (c.user, c.time, c.poi, c.lat.to_bits(), c.lon.to_bits());
    kept.sort_by_key(|c| key(c));
    kept.dedup_by_key(|c| key(c));

    let mut by_user: BTreeMap<UserId, Vec<&CheckIn>> = BTreeMap::new();
    for c in kept {
        by_user.entry(c.user).or_default().push(c);
    }
    by_user.retain(|_, v| v.len() >= min_len);
    let origin = by_user.values().flatten().map(|c| c.time).min().ok_or(Error::EmptyDataset)?;

    let mut first_seen: BTreeMap<PoiId, (DateTime<Utc>, UserId, GeoPoint)> = BTreeMap::new();
    let mut trajectories = Vec::with_capacity(by_user.len());
    for (&user, visits) in &by_user {
        let mut steps = Vec::with_capacity(visits.len());
        for c in visits {
            let raw_hour = ((c.time - origin).num_seconds() / 3600) as u32;
            steps.push(Step::new(c.poi, raw_hour));
            let candidate = (c.time, c.user, GeoPoint { lat: c.lat, lon: c.lon });
            first_seen
                .entry(c.poi)
                .and_modify(|e| {
                    if (candidate.0, candidate.1) < (e.0, e.1) {
                        *e = candidate;
                    }
                })
                .or_insert(candidate);
        }
        trajectories.push(Trajectory::new(user, steps)?);
    }
    let registry = PoiRegistry::from_entries(first_seen.into_iter().map(|(id, (_, _, p))| (id, p)))?;
    Ok((trajectories, registry))
}

/// A set of trajectories (one per user, ordered by user id) with their POIs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub registry: PoiRegistry,
    trajectories: Vec<Trajectory>,
    user_index: HashMap<UserId, usize>,
}

const DATASET_MAGIC: &str = "PXD1";

impl Dataset {
    pub fn new(mut trajectories: Vec<Trajectory>, registry: PoiRegistry) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::EmptyDataset);
        }
        trajectories.sort_by_key(|t| t.user);
        if trajectories.windows(2).any(|w| w[0].user == w[1].user) {
            return Err(Error::Format("more than one trajectory per user".into()));
        }
        for t in &trajectories {
            for s in &t.steps {
                registry.index_of(s.poi)?;
            }
        }
        let user_index = trajectories.iter().enumerate().map(|(i, t)| (t.user, i)).collect();
        Ok(Self { registry, trajectories, user_index })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn n_users(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_pois(&self) -> usize {
        self.registry.len()
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> + '_ {
        self.trajectories.iter().map(|t| t.user)
    }

    pub fn user_index(&self, user: UserId) -> Result<usize> {
        self.user_index.get(&user).copied().ok_or_else(|| Error::UnknownId(format!("user {user}")))
    }

    pub fn user_at(&self, index: usize) -> UserId {
        self.trajectories[index].user
    }

    pub fn trajectory(&self, user: UserId) -> Result<&Trajectory> {
        Ok(&self.trajectories[self.user_index(user)?])
    }

    /// Canonical line-oriented text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{DATASET_MAGIC} {} {}", self.n_users(), self.n_pois());
        for (id, p) in self.registry.iter() {
            let _ = writeln!(out, "P {id} {} {}", p.lat, p.lon);
        }
        for t in &self.trajectories {
            let _ = write!(out, "U {} {}", t.user, t.steps.len());
            for s in &t.steps {
                let _ = write!(out, " {},{}", s.poi, s.raw_hour);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str, line: usize| Error::Format(format!("dataset line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 || head[0] != DATASET_MAGIC {
            return Err(bad("expected PXD1 header", 0));
        }
        let n_users: usize = head[1].parse().map_err(|_| bad("bad user count", 0))?;
        let n_pois: usize = head[2].parse().map_err(|_| bad("bad POI count", 0))?;
        let mut pois = Vec::with_capacity(n_pois);
        let mut trajectories = Vec::with_capacity(n_users);
        for (no, line) in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("P") => {
                    let id: u32 = tok.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad POI id", no))?;
                    let lat: f64 = tok.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad lat", no))?;
                    let lon: f64 = tok.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad lon", no))?;
                    pois.push((PoiId(id), GeoPoint::new(lat, lon)?));
                }
                Some("U") => {
                    let user: u32 = tok.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad user id", no))?;
                    let k: usize = tok.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad length", no))?;
                    let mut steps = Vec::with_capacity(k);
                    for pair in tok {
                        let (p, h) = pair.split_once(',').ok_or_else(|| bad("bad step", no))?;
                        let p: u32 = p.parse().map_err(|_| bad("bad step POI", no))?;
                        let h: u32 = h.parse().map_err(|_| bad("bad step hour", no))?;
                        steps.push(Step::new(PoiId(p), h));
                    }
                    if steps.len() != k {
                        return Err(bad("step count mismatch", no));
                    }
                    trajectories.push(Trajectory::new(UserId(user), steps)?);
                }
                None => {}
                Some(_) => return Err(bad("unknown record", no)),
            }
        }
        if pois.len() != n_pois || trajectories.len() != n_users {
            return Err(Error::Format("record counts do not match header".into()));
        }
        Dataset::new(trajectories, PoiRegistry::from_entries(pois)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ci(user: u32, time: &str, lat: f64, lon: f64, poi: u32) -> CheckIn {
        CheckIn {
            user: UserId(user),
            time: DateTime::parse_from_rfc3339(time).unwrap().with_timezone(&Utc),
            lat,
            lon,
            poi: PoiId(poi),
        }
    }

    #[test]
    fn parses_gowalla_line() {
        let out = parse_checkins("7\t2010-10-19T23:55:27Z\t40.60\t-74.00\t16907\n".as_bytes()).unwrap();
        assert_eq!(out.malformed, 0);
        assert_eq!(out.checkins, vec![ci(7, "2010-10-19T23:55:27Z", 40.60, -74.00, 16907)]);
    }

    #[test]
    fn out_of_range_latitude_is_malformed() {
        let text = "7\t2010-10-19T23:55:27Z\t40.60\t-74.00\t16907\n\
                    7\t2010-10-19T23:55:27Z\t91.2\t-74.00\t16907\n\
                    8\t2010-10-20T01:00:00Z\t40.70\t-73.90\t5\n";
        let out = parse_checkins(text.as_bytes()).unwrap();
        assert_eq!(out.malformed, 1);
        assert_eq!(out.checkins.len(), 2);
    }

    #[test]
    fn empty_and_corrupt_inputs() {
        assert!(matches!(parse_checkins("".as_bytes()), Err(Error::EmptyDataset)));
        assert!(matches!(parse_checkins("garbage\nmore\n".as_bytes()), Err(Error::EmptyDataset)));
        let text = "7\t2010-10-19T23:55:27Z\t40.60\t-74.00\t16907\nx\ny\n";
        assert!(matches!(parse_checkins(text.as_bytes()), Err(Error::CorruptDataset { malformed: 2, total: 3 })));
    }

    #[test]
    fn gzip_input_is_decompressed() {
        use std::io::Write as _;
        let dir = std::env::temp_dir().join(format!("pxd-gz-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.tsv.gz");
        let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&path).unwrap(), flate2::Compression::fast());
        enc.write_all(b"7\t2010-10-19T23:55:27Z\t40.60\t-74.00\t16907\n").unwrap();
        enc.finish().unwrap();
        assert_eq!(read_checkins_file(&path).unwrap().checkins.len(), 1);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn trajectories_sorted_filtered_and_cycled() {
        // Newest-first input, one check-in outside the box, one short user.
        let cs = vec![
            ci(1, "2010-01-08T10:30:00Z", 40.7, -74.0, 11),
            ci(1, "2010-01-01T10:10:00Z", 40.7, -74.0, 10),
            ci(1, "2010-01-01T12:00:00Z", 40.8, -73.9, 12),
            ci(1, "2010-01-01T12:00:00Z", 40.8, -73.9, 12),
            ci(1, "2010-01-02T00:00:00Z", 10.0, 10.0, 99),
            ci(2, "2010-01-01T09:00:00Z", 40.7, -74.0, 10),
            ci(2, "2010-01-03T09:00:00Z", 40.7, -74.0, 10),
        ];
        let (trajs, reg) = build_trajectories(&cs, &BoundingBox::NEW_YORK, 3).unwrap();
        assert_eq!(trajs.len(), 1);
        let t = &trajs[0];
        assert_eq!(t.user, UserId(1));
        let pois: Vec<u32> = t.steps.iter().map(|s| s.poi.0).collect();
        assert_eq!(pois, vec![10, 12, 11]);
        let hours: Vec<u32> = t.steps.iter().map(|s| s.raw_hour).collect();
        assert_eq!(hours, vec![0, 1, 168]);
        assert_eq!(t.steps[0].hour_of_week, t.steps[2].hour_of_week);
        assert_eq!(reg.ids(), &[PoiId(10), PoiId(11), PoiId(12)]);
    }

    #[test]
    fn no_surviving_users_is_empty() {
        let cs = vec![ci(1, "2010-01-01T10:00:00Z", 40.7, -74.0, 1), ci(1, "2010-01-01T11:00:00Z", 40.7, -74.0, 2)];
        assert!(matches!(build_trajectories(&cs, &BoundingBox::NEW_YORK, 3), Err(Error::EmptyDataset)));
    }

    fn steps(pois: &[u32]) -> Vec<Step> {
        pois.iter().enumerate().map(|(i, &p)| Step::new(PoiId(p), i as u32)).collect()
    }

    #[test]
    fn split_last_basic_and_truncated() {
        let t = Trajectory::new(UserId(1), steps(&[1, 2, 3])).unwrap();
        let s = split_last(&t, 100).unwrap();
        assert_eq!(s.input, steps(&[1, 2]));
        assert_eq!(s.target, PoiId(3));

        let long: Vec<u32> = (1..=150).collect();
        let t = Trajectory::new(UserId(1), steps(&long)).unwrap();
        let s = split_last(&t, 100).unwrap();
        assert_eq!(s.input.len(), 100);
        assert_eq!(s.input[0].poi, PoiId(50));
        assert_eq!(s.input[99].poi, PoiId(149));
        assert_eq!(s.target, PoiId(150));
    }

    #[test]
    fn split_last_rejects_short() {
        let t = Trajectory { user: UserId(1), steps: steps(&[1, 2]) };
        assert!(matches!(split_last(&t, 100), Err(Error::TrajectoryTooShort { len: 2 })));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        let pois = prop::collection::btree_map(1u32..10_000, (-90.0f64..90.0, -180.0f64..180.0), 1..20);
        pois.prop_flat_map(|pois| {
            let ids: Vec<u32> = pois.keys().copied().collect();
            let traj = prop::collection::vec((prop::sample::select(ids), 0u32..50), 3..15);
            (Just(pois), prop::collection::btree_map(1u32..5000, traj, 1..10))
        })
        .prop_map(|(pois, users)| {
            let reg = PoiRegistry::from_entries(
                pois.into_iter().map(|(id, (lat, lon))| (PoiId(id), GeoPoint::new(lat, lon).unwrap())),
            )
            .unwrap();
            let trajs = users
                .into_iter()
                .map(|(u, st)| {
                    let mut hour = 0;
                    let steps = st
                        .into_iter()
                        .map(|(p, gap)| {
                            hour += gap;
                            Step::new(PoiId(p), hour)
                        })
                        .collect();
                    Trajectory::new(UserId(u), steps).unwrap()
                })
                .collect();
            Dataset::new(trajs, reg).unwrap()
        })
    }

    proptest! {
        #[test]
        fn dataset_text_round_trips(ds in arb_dataset()) {
            let text = ds.to_text();
            let back = Dataset::from_text(&text).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(back.to_text(), text);
        }

        #[test]
        fn hour_of_week_is_raw_mod_168(raw in 0u32..10_000_000) {
            let s = Step::new(PoiId(1), raw);
            prop_assert_eq!(s.hour_of_week as u32, raw % 168);
            prop_assert!(s.hour_of_week < 168);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cs: Vec<CheckIn> = (0..60)
            .map(|i| {
                ci(
                    1 + i % 4,
                    &format!("2010-01-{:02}T{:02}:00:00Z", 1 + i % 20, i % 24),
                    40.5 + (i % 7) as f64 * 0.05,
                    -74.0,
                    100 + i % 9,
                )
            })
            .collect();
        let mut rev = cs.clone();
        rev.reverse();
        let a = build_trajectories(&cs, &BoundingBox::NEW_YORK, 3).unwrap();
        let b = build_trajectories(&rev, &BoundingBox::NEW_YORK, 3).unwrap();
        assert_eq!(a, b);
    }
}
