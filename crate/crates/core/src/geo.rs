//! Coordinates, distances and the pixel/geo affine mapping.
//!
//! Two distances live here and they are not interchangeable:
//!
//! * [`degree_distance`] is the planar Euclidean distance in raw degrees
//!   (longitude and latitude treated as plain axes). The spatial retrieval
//!   metric is defined on this quantity together with its scale factor, so it
//!   is never converted to meters.
//! * [`meters_distance`] is the haversine great-circle distance and is used for
//!   search radii and for localization error reporting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters used by [`meters_distance`].
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {lat} / longitude {lon} outside the valid WGS-84 range")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("invalid geotransform: {0}")]
    InvalidTransform(String),
}

/// A WGS-84 latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GeoError::OutOfRange { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Planar Euclidean distance in degrees: `sqrt(dlon² + dlat²)`.
pub fn degree_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    (a.lon - b.lon).hypot(a.lat - b.lat)
}

/// Haversine great-circle distance in meters on a sphere of radius
/// [`EARTH_RADIUS_M`].
pub fn meters_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// North-up affine georeference of a raster. Pixel `(0, 0)` is the outer
/// corner of the top-left pixel; pixel centers sit at half-integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub px_size_lon: f64,
    pub px_size_lat: f64,
}

impl GeoTransform {
    pub fn new(origin_lon: f64, origin_lat: f64, px_size_lon: f64, px_size_lat: f64) -> Result<Self, GeoError> {
        let t = GeoTransform {
            origin_lon,
            origin_lat,
            px_size_lon,
            px_size_lat,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let vals = [self.origin_lon, self.origin_lat, self.px_size_lon, self.px_size_lat];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(GeoError::InvalidTransform("non-finite value".into()));
        }
        if self.px_size_lon <= 0.0 {
            return Err(GeoError::InvalidTransform(format!(
                "longitude pixel size must be > 0, got {}",
                self.px_size_lon
            )));
        }
        if self.px_size_lat >= 0.0 {
            return Err(GeoError::InvalidTransform(format!(
                "latitude pixel size must be < 0 (north-up), got {}",
                self.px_size_lat
            )));
        }
        Ok(())
    }

    /// Parses an ESRI world file (six lines: A, D, B, E, C, F).
    ///
    /// World files reference the *center* of the top-left pixel, so the
    /// origin is shifted back by half a pixel. Rotation terms must be zero.
    pub fn from_world_file(text: &str) -> Result<Self, GeoError> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GeoError::InvalidTransform(format!("world file: {e}")))?;
        let [a, d, b, e, c, f] = vals[..] else {
            return Err(GeoError::InvalidTransform(format!(
                "world file must hold 6 numbers, found {}",
                vals.len()
            )));
        };
        if d != 0.0 || b != 0.0 {
            return Err(GeoError::InvalidTransform(
                "rotated or sheared rasters are not supported".into(),
            ));
        }
        GeoTransform::new(c - 0.5 * a, f - 0.5 * e, a, e)
    }

    pub fn to_world_file(&self) -> String {
        format!(
            "{:?}\n0.0\n0.0\n{:?}\n{:?}\n{:?}\n",
            self.px_size_lon,
            self.px_size_lat,
            self.origin_lon + 0.5 * self.px_size_lon,
            self.origin_lat + 0.5 * self.px_size_lat
        )
    }
}

pub fn pixel_to_geo(t: &GeoTransform, px: f64, py: f64) -> Result<GeoPoint, GeoError> {
    GeoPoint::new(t.origin_lat + py * t.px_size_lat, t.origin_lon + px * t.px_size_lon)
}

pub fn geo_to_pixel(t: &GeoTransform, p: GeoPoint) -> (f64, f64) {
    (
        (p.lon - t.origin_lon) / t.px_size_lon,
        (p.lat - t.origin_lat) / t.px_size_lat,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent great-circle oracle: chord length between unit vectors.
    fn chord_oracle(a: GeoPoint, b: GeoPoint) -> f64 {
        let v = |p: GeoPoint| {
            let (la, lo) = (p.lat.to_radians(), p.lon.to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let (x, y) = (v(a), v(b));
        let c = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        2.0 * EARTH_RADIUS_M * (c / 2.0).asin()
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn degree_distance_examples() {
        assert_eq!(degree_distance(pt(30.0, 120.0), pt(30.0, 120.0)), 0.0);
        let d = degree_distance(pt(30.0, 120.0), pt(30.0003, 120.0004));
        assert!((d - 5.0e-4).abs() < 1e-12, "{d}");
    }

    #[test]
    fn meters_distance_examples() {
        assert_eq!(meters_distance(pt(30.0, 120.0), pt(30.0, 120.0)), 0.0);
        let d = meters_distance(pt(30.0, 120.0), pt(30.0, 120.001));
        assert!((d - 96.2978).abs() < 0.1, "{d}");
        let d = meters_distance(pt(0.0, 0.0), pt(0.001, 0.0));
        assert!((d - 111.2).abs() < 0.1, "{d}");
    }

    #[test]
    fn invalid_points_rejected() {
        assert!(GeoPoint::new(90.5, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.1).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn pixel_to_geo_examples() {
        let t = GeoTransform::new(120.0, 30.0, 1e-5, -1e-5).unwrap();
        let p = pixel_to_geo(&t, 320.0, 320.0).unwrap();
        assert!((p.lat - 29.9968).abs() < 1e-12);
        assert!((p.lon - 120.0032).abs() < 1e-12);
        assert_eq!(pixel_to_geo(&t, 0.0, 0.0).unwrap(), pt(30.0, 120.0));
        for (px, py) in [(0.0, 0.0), (320.0, 320.0), (1234.5, 17.25)] {
            let (x, y) = geo_to_pixel(&t, pixel_to_geo(&t, px, py).unwrap());
            assert!((x - px).abs() < 1e-9 && (y - py).abs() < 1e-9);
        }
    }

    #[test]
    fn pixel_to_geo_out_of_range() {
        let t = GeoTransform::new(179.9, 89.9, 0.1, -0.1).unwrap();
        assert!(matches!(pixel_to_geo(&t, 10.0, 0.0), Err(GeoError::OutOfRange { .. })));
    }

    #[test]
    fn transform_validation() {
        assert!(GeoTransform::new(0.0, 0.0, -1e-5, -1e-5).is_err());
        assert!(GeoTransform::new(0.0, 0.0, 1e-5, 1e-5).is_err());
        assert!(GeoTransform::new(f64::INFINITY, 0.0, 1e-5, -1e-5).is_err());
    }

    #[test]
    fn world_file_round_trip() {
        let t = GeoTransform::new(120.0, 30.0, 1e-5, -1e-5).unwrap();
        let back = GeoTransform::from_world_file(&t.to_world_file()).unwrap();
        assert!((back.origin_lon - t.origin_lon).abs() < 1e-12);
        assert!((back.origin_lat - t.origin_lat).abs() < 1e-12);
        assert_eq!(back.px_size_lon, t.px_size_lon);
        assert_eq!(back.px_size_lat, t.px_size_lat);
    }

    #[test]
    fn world_file_rejects_rotation() {
        let text = "1e-5\n1e-7\n0.0\n-1e-5\n120.0\n30.0\n";
        assert!(GeoTransform::from_world_file(text).is_err());
        assert!(GeoTransform::from_world_file("1 2 3").is_err());
    }

    fn any_point() -> impl Strategy<Value = GeoPoint> {
        (-89.0f64..89.0, -179.0f64..179.0).prop_map(|(lat, lon)| GeoPoint { lat, lon })
    }

    proptest! {
        #[test]
        fn distances_symmetric_nonnegative(a in any_point(), b in any_point()) {
            prop_assert_eq!(degree_distance(a, b), degree_distance(b, a));
            let (ab, ba) = (meters_distance(a, b), meters_distance(b, a));
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
            prop_assert!(ab >= 0.0 && degree_distance(a, b) >= 0.0);
            prop_assert_eq!(meters_distance(a, a), 0.0);
            prop_assert_eq!(degree_distance(a, a), 0.0);
            if a != b {
                prop_assert!(degree_distance(a, b) > 0.0);
                prop_assert!(meters_distance(a, b) > 0.0);
            }
        }

        #[test]
        fn haversine_matches_chord_oracle(a in any_point(), b in any_point()) {
            let h = meters_distance(a, b);
            let c = chord_oracle(a, b);
            prop_assert!((h - c).abs() < 1e-3 + 1e-9 * c, "{} vs {}", h, c);
        }

        #[test]
        fn meters_monotone_along_parallel(
            lat in -80.0f64..80.0,
            lon in -170.0f64..0.0,
            d1 in 1e-6f64..90.0,
            extra in 1e-6f64..80.0,
        ) {
            let o = GeoPoint { lat, lon };
            let near = GeoPoint { lat, lon: lon + d1 };
            let far = GeoPoint { lat, lon: lon + d1 + extra };
            prop_assert!(meters_distance(o, near) < meters_distance(o, far));
        }

        #[test]
        fn affine_round_trip(px in -1e4f64..1e4, py in -1e4f64..1e4) {
            let t = GeoTransform::new(120.0, 30.0, 1e-5, -1e-5).unwrap();
            let (x, y) = geo_to_pixel(&t, pixel_to_geo(&t, px, py).unwrap());
            prop_assert!((x - px).abs() < 1e-9 && (y - py).abs() < 1e-9);
        }
    }
}
