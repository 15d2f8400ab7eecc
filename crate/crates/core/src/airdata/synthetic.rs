//! Deterministic synthetic histories for offline runs and tests.
//!
//! The series has a clean-air baseline with a diurnal cycle and a handful of
//! smoke episodes early in the window, loosely shaped like a wildfire month.
//! Values are rounded to two decimals so prompt tables carry them exactly.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AirQualityHistory, GeoPoint, HourlyRecord, Pollutant, PopulationClass, Reading, Unit};

/// (hour offset of peak, peak PM2.5, width in hours)
const EPISODES: [(f64, f64, f64); 5] = [
    (30.0, 380.0, 5.0),
    (78.0, 500.0, 4.0),
    (300.0, 40.0, 6.0),
    (320.0, 55.0, 3.0),
    (575.0, 32.0, 5.0),
];

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn wildfire_history(
    location: GeoPoint,
    start: DateTime<Utc>,
    hours: usize,
    seed: u64,
) -> AirQualityHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let records = (0..hours)
        .map(|h| {
            let ts = start + Duration::hours(h as i64);
            let t = h as f64;
            let diurnal = 1.5 * ((ts.hour() as f64 - 8.0) / 24.0 * std::f64::consts::TAU).cos();
            let smoke: f64 = EPISODES
                .iter()
                .map(|(peak, amp, width)| amp * (-0.5 * ((t - peak) / width).powi(2)).exp())
                .sum();
            let pm25 = round2((5.0 + diurnal + smoke + 0.8 * noise.sample(&mut rng)).max(0.3));
            let pm10 = round2((pm25 * 1.25 + 4.0 + 1.5 * noise.sample(&mut rng)).max(pm25));
            let no2 = round2((9.0 + 4.0 * diurnal.abs() + rng.random_range(0.0..3.0)).max(0.0));
            let o3 = round2((28.0 - 3.0 * diurnal + rng.random_range(0.0..6.0)).max(0.0));
            let so2 = round2(rng.random_range(0.2..1.8));
            let co = round2(220.0 + 3.0 * smoke + rng.random_range(0.0..40.0));
            let aqi = (100.0 - pm25.min(100.0)).round().max(0.0);

            let mut readings = BTreeMap::new();
            let ug = |v| Reading { value: v, unit: Unit::MicrogramsPerCubicMeter };
            let ppb = |v| Reading { value: v, unit: Unit::PartsPerBillion };
            readings.insert(Pollutant::Pm25, ug(pm25));
            readings.insert(Pollutant::Pm10, ug(pm10));
            readings.insert(Pollutant::No2, ppb(no2));
            readings.insert(Pollutant::O3, ppb(o3));
            readings.insert(Pollutant::So2, ppb(so2));
            readings.insert(Pollutant::Co, ppb(co));
            HourlyRecord {
                timestamp: ts,
                readings,
                aqi: Some(aqi),
                health_recommendations: Some(advisories(pm25)),
            }
        })
        .collect();
    AirQualityHistory::new(location, records).expect("synthetic records are ordered")
}

fn advisories(pm25: f64) -> BTreeMap<PopulationClass, String> {
    let (general, sensitive) = if pm25 > 55.0 {
        (
            "Reduce the intensity of outdoor activities. Stay indoors with filtered air if possible.",
            "Avoid outdoor physical activity. Keep relevant medications available and consult a doctor if needed.",
        )
    } else if pm25 > 15.0 {
        (
            "Consider reducing prolonged outdoor exertion.",
            "Reduce the intensity of outdoor activities and keep medications available.",
        )
    } else {
        (
            "With this level of air quality, you have no limitations. Enjoy the outdoors!",
            "Air quality is acceptable; no special precautions are needed.",
        )
    };
    PopulationClass::ALL
        .into_iter()
        .map(|c| {
            let text = if c == PopulationClass::GeneralPopulation { general } else { sensitive };
            (c, text.to_string())
        })
        .collect()
}
