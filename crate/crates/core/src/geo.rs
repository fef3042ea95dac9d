//! Great-circle distances and nearest-POI lookups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::PoiId;
use crate::ingest::PoiRegistry;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Domain(format!("invalid coordinates ({lat}, {lon})")));
        }
        Ok(Self { lat, lon })
    }
}

/// Haversine distance in kilometers.
///
/// Coordinate differences are taken as absolute values so the result is
/// bit-for-bit symmetric in its arguments.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = (b.lat - a.lat).abs().to_radians();
    let dlon = (b.lon - a.lon).abs().to_radians();
    let s1 = (dlat / 2.0).sin();
    let s2 = (dlon / 2.0).sin();
    let h = s1 * s1 + p1.cos() * p2.cos() * s2 * s2;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// The POI closest to `poi` other than `poi` itself. Ties go to the smaller id.
pub fn nearest_other_poi(registry: &PoiRegistry, poi: PoiId) -> Result<PoiId> {
    let origin = registry.location(poi)?;
    if registry.len() < 2 {
        return Err(Error::NoCandidate);
    }
    registry
        .iter()
        .filter(|(id, _)| *id != poi)
        .map(|(id, p)| (haversine_km(origin, p), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or(Error::NoCandidate)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn registry(pois: &[(u32, f64, f64)]) -> PoiRegistry {
        PoiRegistry::from_entries(pois.iter().map(|&(id, lat, lon)| (PoiId(id), pt(lat, lon)))).unwrap()
    }

    #[test]
    fn identity_and_antipodes() {
        let a = pt(40.7128, -74.0060);
        assert_eq!(haversine_km(a, a), 0.0);
        let d = haversine_km(pt(0.0, 0.0), pt(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((d - 20015.0868).abs() < 1e-4);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(GeoPoint::new(91.2, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
    }

    #[test]
    fn nearest_along_equator() {
        let reg = registry(&[(1, 0.0, 0.0), (2, 0.0, 1.0), (3, 0.0, 5.0)]);
        assert_eq!(nearest_other_poi(&reg, PoiId(1)).unwrap(), PoiId(2));
    }

    #[test]
    fn nearest_tie_goes_to_smaller_id() {
        let reg = registry(&[(1, 0.0, 0.0), (2, 0.0, 0.0), (3, 0.0, 1.0)]);
        assert_eq!(nearest_other_poi(&reg, PoiId(3)).unwrap(), PoiId(1));
        // Co-located neighbor is still a different id.
        assert_eq!(nearest_other_poi(&reg, PoiId(1)).unwrap(), PoiId(2));
    }

    #[test]
    fn nearest_errors() {
        let reg = registry(&[(1, 0.0, 0.0)]);
        assert!(matches!(nearest_other_poi(&reg, PoiId(1)), Err(Error::NoCandidate)));
        assert!(matches!(nearest_other_poi(&reg, PoiId(9)), Err(Error::UnknownPoi(9))));
    }

    #[test]
    fn nearest_matches_exhaustive_scan() {
        use rand::Rng as _;
        let mut rng = crate::rng::Rng::new(50).stream(&[1]);
        let pois: Vec<(u32, f64, f64)> =
            (1..=50).map(|i| (i, rng.gen_range(40.4..41.0), rng.gen_range(-74.3..-73.6))).collect();
        let reg = registry(&pois);
        for &(q, qlat, qlon) in &pois {
            let mut best: Option<(f64, u32)> = None;
            for &(id, lat, lon) in &pois {
                if id == q {
                    continue;
                }
                let d = haversine_km(pt(qlat, qlon), pt(lat, lon));
                if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                    best = Some((d, id));
                }
            }
            assert_eq!(nearest_other_poi(&reg, PoiId(q)).unwrap(), PoiId(best.unwrap().1));
        }
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| pt(lat, lon))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in arb_point(), b in arb_point()) {
            let d = haversine_km(a, b);
            prop_assert_eq!(d, haversine_km(b, a));
            prop_assert!(d >= 0.0);
            prop_assert!(d <= std::f64::consts::PI * EARTH_RADIUS_KM + 1e-9);
        }

        #[test]
        fn triangle_inequality(a in arb_point(), b in arb_point(), c in arb_point()) {
            prop_assert!(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9);
        }
    }
}
