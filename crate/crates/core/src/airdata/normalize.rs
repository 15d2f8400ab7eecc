use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    is_hour_aligned, AirDataError, AirQualityHistory, GeoPoint, HourlyRecord, Pollutant,
    PopulationClass, Reading, Result, Unit,
};

/// One page of the provider's hourly history response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawPage {
    #[serde(default)]
    pub hours_info: Vec<RawHour>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_page_token: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawHour {
    pub date_time: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub indexes: Vec<RawIndex>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pollutants: Vec<RawPollutant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health_recommendations: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawIndex {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aqi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPollutant {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<RawConcentration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawConcentration {
    pub value: f64,
    pub units: String,
}

const UNIVERSAL_AQI: &str = "uaqi";

impl RawPage {
    /// Parses one page of JSON, reporting the path of the offending field.
    pub fn parse(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        serde_path_to_error::deserialize(de).map_err(|e| AirDataError::Parse {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Renders canonical records back into the provider wire shape.
    pub fn from_records(records: &[HourlyRecord]) -> Self {
        Self {
            hours_info: records.iter().map(RawHour::from_record).collect(),
            region_code: None,
            next_page_token: None,
        }
    }
}

impl RawHour {
    pub fn from_record(record: &HourlyRecord) -> Self {
        Self {
            date_time: record
                .timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            indexes: record
                .aqi
                .map(|aqi| RawIndex {
                    code: UNIVERSAL_AQI.into(),
                    aqi: Some(aqi),
                })
                .into_iter()
                .collect(),
            pollutants: record
                .readings
                .iter()
                .map(|(p, r)| RawPollutant {
                    code: p.code().to_ascii_lowercase(),
                    concentration: Some(RawConcentration {
                        value: r.value,
                        units: r.unit.provider_code().into(),
                    }),
                })
                .collect(),
            health_recommendations: record.health_recommendations.as_ref().map(|recs| {
                recs.iter()
                    .map(|(c, text)| (c.provider_key().to_string(), text.clone()))
                    .collect()
            }),
        }
    }

    pub(crate) fn to_record(&self, path: &str) -> Result<HourlyRecord> {
        let timestamp = DateTime::parse_from_rfc3339(&self.date_time)
            .map_err(|e| AirDataError::Parse {
                field: format!("{path}.dateTime"),
                message: e.to_string(),
            })?
            .with_timezone(&Utc);
        if !is_hour_aligned(timestamp) {
            return Err(AirDataError::Parse {
                field: format!("{path}.dateTime"),
                message: format!("{timestamp} is not aligned to the hour"),
            });
        }
        let mut record = HourlyRecord::new(timestamp)?;
        for (i, raw) in self.pollutants.iter().enumerate() {
            // Providers may report extra local pollutants; only the six are kept.
            let Ok(pollutant) = raw.code.parse::<Pollutant>() else {
                continue;
            };
            let Some(conc) = &raw.concentration else {
                continue;
            };
            let field = format!("{path}.pollutants[{i}].concentration");
            let unit = Unit::from_provider(&conc.units).ok_or_else(|| AirDataError::Parse {
                field: format!("{field}.units"),
                message: format!("unknown unit {:?}", conc.units),
            })?;
            let reading = Reading::new(conc.value, unit).map_err(|e| match e {
                AirDataError::Parse { message, .. } => AirDataError::Parse {
                    field: format!("{field}.value"),
                    message,
                },
                other => other,
            })?;
            if record.readings.insert(pollutant, reading).is_some() {
                return Err(AirDataError::Parse {
                    field: format!("{path}.pollutants[{i}].code"),
                    message: format!("duplicate reading for {pollutant}"),
                });
            }
        }
        let index = self
            .indexes
            .iter()
            .find(|ix| ix.code == UNIVERSAL_AQI)
            .or_else(|| self.indexes.first());
        if let Some(aqi) = index.and_then(|ix| ix.aqi) {
            if !aqi.is_finite() || aqi < 0.0 {
                return Err(AirDataError::Parse {
                    field: format!("{path}.indexes.aqi"),
                    message: format!("AQI must be non-negative, got {aqi}"),
                });
            }
            record.aqi = Some(aqi);
        }
        if let Some(recs) = &self.health_recommendations {
            let mapped: BTreeMap<PopulationClass, String> = recs
                .iter()
                .filter_map(|(k, v)| PopulationClass::from_provider_key(k).map(|c| (c, v.clone())))
                .collect();
            if !mapped.is_empty() {
                record.health_recommendations = Some(mapped);
            }
        }
        Ok(record)
    }
}

/// Merges provider pages into a canonical, ascending, deduplicated history.
///
/// Identical duplicate hours collapse to one record; duplicates that disagree
/// are a [`AirDataError::Conflict`].
pub fn normalize_history(location: GeoPoint, pages: &[RawPage]) -> Result<AirQualityHistory> {
    let mut merged: BTreeMap<DateTime<Utc>, HourlyRecord> = BTreeMap::new();
    for (p, page) in pages.iter().enumerate() {
        for (h, hour) in page.hours_info.iter().enumerate() {
            let record = hour.to_record(&format!("pages[{p}].hoursInfo[{h}]"))?;
            match merged.get(&record.timestamp) {
                Some(existing) if *existing != record => {
                    return Err(AirDataError::Conflict {
                        timestamp: record.timestamp,
                        detail: format!("pages[{p}].hoursInfo[{h}] disagrees with an earlier page"),
                    });
                }
                Some(_) => {}
                None => {
                    merged.insert(record.timestamp, record);
                }
            }
        }
    }
    AirQualityHistory::new(location, merged.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airdata::synthetic;
    use chrono::{Duration, TimeZone};

    fn loc() -> GeoPoint {
        GeoPoint::new(34.0725, -118.5445).unwrap()
    }

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 1, 9, 0, 0, 0).unwrap()
    }

    #[test]
    fn single_page_identity() {
        let h = synthetic::wildfire_history(loc(), start(), 24, 1);
        let page = RawPage::from_records(h.records());
        let out = normalize_history(loc(), &[page]).unwrap();
        assert_eq!(out.hours(), 24);
        assert_eq!(out, h);
    }

    #[test]
    fn two_pages_merge_like_sort_merge() {
        let h = synthetic::wildfire_history(loc(), start(), 336, 2);
        let (a, b) = h.records().split_at(168);
        // Feed pages in reverse order; the sort-merge oracle is a plain sort by timestamp.
        let out = normalize_history(loc(), &[RawPage::from_records(b), RawPage::from_records(a)])
            .unwrap();
        let mut oracle: Vec<HourlyRecord> = b.iter().chain(a.iter()).cloned().collect();
        oracle.sort_by_key(|r| r.timestamp);
        assert_eq!(out.hours(), 336);
        assert_eq!(out.records(), oracle.as_slice());
    }

    #[test]
    fn duplicate_identical_hour_collapses() {
        let h = synthetic::wildfire_history(loc(), start(), 3, 3);
        let mut page = RawPage::from_records(h.records());
        page.hours_info.push(page.hours_info[1].clone());
        let out = normalize_history(loc(), &[page]).unwrap();
        assert_eq!(out.hours(), 3);
    }

    #[test]
    fn conflicting_duplicate_is_an_error() {
        let h = synthetic::wildfire_history(loc(), start(), 3, 3);
        let page = RawPage::from_records(h.records());
        let mut other = RawPage::from_records(&h.records()[1..2]);
        other.hours_info[0].pollutants[0].concentration.as_mut().unwrap().value += 1.0;
        let err = normalize_history(loc(), &[page, other]).unwrap_err();
        assert!(matches!(err, AirDataError::Conflict { .. }), "{err}");
    }

    #[test]
    fn malformed_page_names_field() {
        let err = RawPage::parse(r#"{"hoursInfo":[{"dateTime":"2025-01-09T00:00:00Z"},{"pollutants":[]}]}"#)
            .unwrap_err();
        match err {
            AirDataError::Parse { field, .. } => assert!(field.contains("hoursInfo[1]"), "{field}"),
            other => panic!("{other}"),
        }
        let page = RawPage::parse(r#"{"hoursInfo":[{"dateTime":"yesterday"}]}"#).unwrap();
        let err = normalize_history(loc(), &[page]).unwrap_err();
        assert!(err.to_string().contains("hoursInfo[0].dateTime"), "{err}");
    }

    #[test]
    fn misaligned_hour_rejected() {
        let page = RawPage::parse(r#"{"hoursInfo":[{"dateTime":"2025-01-09T00:30:00Z"}]}"#).unwrap();
        assert!(normalize_history(loc(), &[page]).is_err());
    }

    #[test]
    fn units_are_preserved() {
        let json = r#"{"hoursInfo":[{"dateTime":"2025-01-09T05:00:00Z",
            "indexes":[{"code":"usa_epa","aqi":40},{"code":"uaqi","aqi":61}],
            "pollutants":[
              {"code":"no2","concentration":{"value":12.5,"units":"PARTS_PER_BILLION"}},
              {"code":"pm25","concentration":{"value":8.1,"units":"MICROGRAMS_PER_CUBIC_METER"}},
              {"code":"nox","concentration":{"value":1.0,"units":"PARTS_PER_BILLION"}}],
            "healthRecommendations":{"lungDiseasePopulation":"Stay in.","athletes":"Run."}}]}"#;
        let out = normalize_history(loc(), &[RawPage::parse(json).unwrap()]).unwrap();
        let rec = &out.records()[0];
        assert_eq!(rec.readings[&Pollutant::No2].unit, Unit::PartsPerBillion);
        assert_eq!(rec.readings[&Pollutant::Pm25].unit, Unit::MicrogramsPerCubicMeter);
        assert_eq!(rec.readings.len(), 2);
        assert_eq!(rec.aqi, Some(61.0));
        let recs = rec.health_recommendations.as_ref().unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[&PopulationClass::LungDisease], "Stay in.");
    }

    #[test]
    fn negative_concentration_rejected() {
        let json = r#"{"hoursInfo":[{"dateTime":"2025-01-09T05:00:00Z",
            "pollutants":[{"code":"pm10","concentration":{"value":-1,"units":"MICROGRAMS_PER_CUBIC_METER"}}]}]}"#;
        let err = normalize_history(loc(), &[RawPage::parse(json).unwrap()]).unwrap_err();
        assert!(err.to_string().contains("pollutants[0].concentration.value"), "{err}");
    }

    #[test]
    fn gap_is_reported_not_filled() {
        let h = synthetic::wildfire_history(loc(), start(), 10, 4);
        let mut records = h.records().to_vec();
        records.remove(4);
        let out = normalize_history(loc(), &[RawPage::from_records(&records)]).unwrap();
        assert_eq!(out.hours(), 9);
        assert_eq!(out.missing_hours(), &[start() + Duration::hours(4)]);
        assert_eq!(out.span_hours(), 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn normalize_is_idempotent(hours in 1usize..200, seed in any::<u64>(), split in 0usize..200) {
                let h = synthetic::wildfire_history(loc(), start(), hours, seed);
                let cut = split.min(hours);
                let (a, b) = h.records().split_at(cut);
                let once = normalize_history(loc(), &[RawPage::from_records(b), RawPage::from_records(a)]).unwrap();
                let twice = normalize_history(loc(), &[RawPage::from_records(once.records())]).unwrap();
                prop_assert_eq!(&once, &twice);
                prop_assert!(once.records().windows(2).all(|w| w[0].timestamp < w[1].timestamp));
            }
        }
    }
}
