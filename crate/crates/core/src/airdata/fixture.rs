use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AirDataError, AirQualityHistory, GeoPoint, HourlyRecord, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Live,
    Synthetic,
}

/// On-disk form of a normalized history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureArchive {
    pub location: GeoPoint,
    pub retrieved_at: DateTime<Utc>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub records: Vec<HourlyRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_hours: Vec<DateTime<Utc>>,
    /// Hex SHA-256 of the serialized `records` array. Optional on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records_sha256: Option<String>,
}

fn records_digest(records: &[HourlyRecord]) -> Result<String> {
    let bytes = serde_json::to_vec(records)
        .map_err(|e| AirDataError::Integrity(format!("cannot serialize records: {e}")))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl FixtureArchive {
    pub fn from_history(
        history: &AirQualityHistory,
        retrieved_at: DateTime<Utc>,
        provenance: Provenance,
    ) -> Result<Self> {
        Ok(Self {
            location: history.location(),
            retrieved_at,
            provenance,
            note: None,
            records: history.records().to_vec(),
            missing_hours: history.missing_hours().to_vec(),
            records_sha256: Some(records_digest(history.records())?),
        })
    }

    pub fn to_history(&self) -> Result<AirQualityHistory> {
        let location = GeoPoint::new(self.location.latitude(), self.location.longitude())
            .map_err(|e| AirDataError::Integrity(e.to_string()))?;
        let history = AirQualityHistory::new(location, self.records.clone())
            .map_err(|e| AirDataError::Integrity(e.to_string()))?;
        // Interior gaps are recomputed; stored gaps may also cover window edges.
        let mut missing = history.missing_hours().to_vec();
        missing.extend(self.missing_hours.iter().copied());
        Ok(history.with_missing(missing))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let archive: FixtureArchive = serde_json::from_str(&text).map_err(|e| {
            AirDataError::Integrity(format!("{}: {e}", path.display()))
        })?;
        if let Some(expected) = &archive.records_sha256 {
            let actual = records_digest(&archive.records)?;
            if &actual != expected {
                return Err(AirDataError::Integrity(format!(
                    "{}: records checksum mismatch",
                    path.display()
                )));
            }
        }
        for r in &archive.records {
            for (p, reading) in &r.readings {
                if !reading.value.is_finite() || reading.value < 0.0 {
                    return Err(AirDataError::Integrity(format!(
                        "{}: invalid {p} value at {}",
                        path.display(),
                        r.timestamp
                    )));
                }
            }
        }
        Ok(archive)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| AirDataError::Integrity(e.to_string()))?;
        text.push('\n');
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text)?;
        Ok(())
    }
}

pub fn save_fixture(
    history: &AirQualityHistory,
    path: &Path,
    retrieved_at: DateTime<Utc>,
    provenance: Provenance,
) -> Result<FixtureArchive> {
    let archive = FixtureArchive::from_history(history, retrieved_at, provenance)?;
    archive.write(path)?;
    Ok(archive)
}

pub fn load_fixture(path: &Path) -> Result<AirQualityHistory> {
    FixtureArchive::read(path)?.to_history()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airdata::{synthetic, Pollutant, Reading, Unit};
    use chrono::{Duration, TimeZone};

    fn sample(hours: usize) -> AirQualityHistory {
        synthetic::wildfire_history(
            GeoPoint::new(34.0725, -118.5445).unwrap(),
            Utc.with_ymd_and_hms(2025, 1, 9, 0, 0, 0).unwrap(),
            hours,
            7,
        )
    }

    fn when() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 2, 8, 0, 0, 0).unwrap()
    }

    #[test]
    fn round_trip_720() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let h = sample(720);
        save_fixture(&h, &path, when(), Provenance::Synthetic).unwrap();
        assert_eq!(load_fixture(&path).unwrap(), h);
    }

    #[test]
    fn round_trip_keeps_units_fieldwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let h = sample(5);
        save_fixture(&h, &path, when(), Provenance::Synthetic).unwrap();
        let back = load_fixture(&path).unwrap();
        for (a, b) in h.records().iter().zip(back.records()) {
            for p in Pollutant::ALL {
                assert_eq!(a.readings[&p].unit, b.readings[&p].unit);
                assert_eq!(a.readings[&p].value, b.readings[&p].value);
            }
        }
        assert_eq!(back.records()[0].readings[&Pollutant::No2].unit, Unit::PartsPerBillion);
        assert_eq!(back.records()[0].readings[&Pollutant::Pm25].unit, Unit::MicrogramsPerCubicMeter);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"PM25\""));
        assert!(text.contains("\"ppb\""));
    }

    #[test]
    fn trailing_gap_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let h = sample(5);
        let start = h.records()[0].timestamp;
        let h = h.with_expected_window(start, start + Duration::hours(7));
        assert_eq!(h.missing_hours().len(), 2);
        save_fixture(&h, &path, when(), Provenance::Synthetic).unwrap();
        assert_eq!(load_fixture(&path).unwrap(), h);
    }

    #[test]
    fn truncated_file_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        save_fixture(&sample(24), &path, when(), Provenance::Synthetic).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_fixture(&path), Err(AirDataError::Integrity(_))));
    }

    #[test]
    fn tampered_values_fail_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let mut archive =
            FixtureArchive::from_history(&sample(3), when(), Provenance::Synthetic).unwrap();
        archive.records[1]
            .readings
            .insert(Pollutant::Pm25, Reading::ugm3(999.0).unwrap());
        archive.write(&path).unwrap();
        let err = load_fixture(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn hand_written_fixture_without_checksum_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        fs::write(
            &path,
            r#"{"location":{"lat":34.0725,"lng":-118.5445},"retrieved_at":"2025-02-08T00:00:00Z",
               "provenance":"synthetic",
               "records":[{"ts":"2025-01-09T00:00:00Z","readings":{"PM25":{"value":3.5,"unit":"ug/m3"}},"aqi":80,
                           "health_recommendations":{"lung-disease":"ok"}}]}"#,
        )
        .unwrap();
        let h = load_fixture(&path).unwrap();
        assert_eq!(h.hours(), 1);
        assert_eq!(h.records()[0].value(Pollutant::Pm25), Some(3.5));
    }
}
