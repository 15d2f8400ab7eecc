//! Canonical air-quality data model.
//!
//! Provider responses are adapted into [`HourlyRecord`]s by [`normalize_history`];
//! everything downstream (chunking, statistics, prompts, fixtures) works on the
//! canonical form only.

mod fixture;
mod normalize;
mod provider;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

pub use fixture::{load_fixture, save_fixture, FixtureArchive, Provenance};
pub use normalize::{
    normalize_history, RawConcentration, RawHour, RawIndex, RawPage, RawPollutant,
};
pub(crate) use provider::install_tls_provider;
pub use provider::{
    AirQualityProvider, FixtureProvider, GoogleAirQualityClient, HistoryClient,
    HistoryPageRequest, ProviderConfig, API_KEY_ENV, BASE_URL_ENV, MAX_HOURS, PAGE_HOURS,
};

#[derive(Debug, thiserror::Error)]
pub enum AirDataError {
    #[error("invalid coordinates: {0}")]
    InvalidLocation(String),
    #[error("hours must be in 1..={max}, got {got}")]
    HoursOutOfRange { got: u32, max: u32 },
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("conflicting values for hour {timestamp} ({detail})")]
    Conflict {
        timestamp: DateTime<Utc>,
        detail: String,
    },
    #[error("records out of order at {0}")]
    Unordered(DateTime<Utc>),
    #[error("provider rejected request (status {status}): {message}")]
    Transport { status: u16, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fixture integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AirDataError> = std::result::Result<T, E>;

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    #[serde(rename = "lat")]
    latitude: f64,
    #[serde(rename = "lng")]
    longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        if !latitude.is_finite() || !(-90.0..=90.0).contains(&latitude) {
            return Err(AirDataError::InvalidLocation(format!(
                "latitude {latitude} outside [-90, 90]"
            )));
        }
        if !longitude.is_finite() || !(-180.0..=180.0).contains(&longitude) {
            return Err(AirDataError::InvalidLocation(format!(
                "longitude {longitude} outside [-180, 180]"
            )));
        }
        Ok(Self {
            latitude,
            longitude,
        })
    }

    pub fn latitude(&self) -> f64 {
        self.latitude
    }

    pub fn longitude(&self) -> f64 {
        self.longitude
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.latitude, self.longitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "NO2")]
    No2,
    #[serde(rename = "O3")]
    O3,
    #[serde(rename = "PM10")]
    Pm10,
    #[serde(rename = "PM25")]
    Pm25,
    #[serde(rename = "SO2")]
    So2,
}

impl Pollutant {
    pub const ALL: [Pollutant; 6] = [
        Pollutant::Co,
        Pollutant::No2,
        Pollutant::O3,
        Pollutant::Pm10,
        Pollutant::Pm25,
        Pollutant::So2,
    ];

    /// Canonical code, as used in fixtures.
    pub fn code(self) -> &'static str {
        match self {
            Pollutant::Co => "CO",
            Pollutant::No2 => "NO2",
            Pollutant::O3 => "O3",
            Pollutant::Pm10 => "PM10",
            Pollutant::Pm25 => "PM25",
            Pollutant::So2 => "SO2",
        }
    }

    /// Human label ("PM2.5" rather than "PM25").
    pub fn label(self) -> &'static str {
        match self {
            Pollutant::Pm25 => "PM2.5",
            other => other.code(),
        }
    }

    pub fn is_particulate(self) -> bool {
        matches!(self, Pollutant::Pm10 | Pollutant::Pm25)
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Pollutant {
    type Err = AirDataError;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "CO" => Ok(Pollutant::Co),
            "NO2" => Ok(Pollutant::No2),
            "O3" => Ok(Pollutant::O3),
            "PM10" => Ok(Pollutant::Pm10),
            "PM25" => Ok(Pollutant::Pm25),
            "SO2" => Ok(Pollutant::So2),
            _ => Err(AirDataError::Parse {
                field: "pollutant".into(),
                message: format!("unknown pollutant code {s:?}"),
            }),
        }
    }
}

/// Concentration unit as reported by the source. Values are never converted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "ug/m3")]
    MicrogramsPerCubicMeter,
    #[serde(rename = "ppb")]
    PartsPerBillion,
}

impl Unit {
    pub fn from_provider(units: &str) -> Option<Unit> {
        match units {
            "MICROGRAMS_PER_CUBIC_METER" | "ug/m3" | "µg/m³" => {
                Some(Unit::MicrogramsPerCubicMeter)
            }
            "PARTS_PER_BILLION" | "ppb" => Some(Unit::PartsPerBillion),
            _ => None,
        }
    }

    pub fn provider_code(self) -> &'static str {
        match self {
            Unit::MicrogramsPerCubicMeter => "MICROGRAMS_PER_CUBIC_METER",
            Unit::PartsPerBillion => "PARTS_PER_BILLION",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub value: f64,
    pub unit: Unit,
}

impl Reading {
    pub fn new(value: f64, unit: Unit) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(AirDataError::Parse {
                field: "concentration.value".into(),
                message: format!("concentration must be finite and non-negative, got {value}"),
            });
        }
        Ok(Self { value, unit })
    }

    pub fn ugm3(value: f64) -> Result<Self> {
        Self::new(value, Unit::MicrogramsPerCubicMeter)
    }
}

/// Audience classes for health advisories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopulationClass {
    GeneralPopulation,
    LungDisease,
    HeartDisease,
    Pregnancy,
    Elderly,
    Children,
}

impl PopulationClass {
    pub const ALL: [PopulationClass; 6] = [
        PopulationClass::GeneralPopulation,
        PopulationClass::LungDisease,
        PopulationClass::HeartDisease,
        PopulationClass::Pregnancy,
        PopulationClass::Elderly,
        PopulationClass::Children,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PopulationClass::GeneralPopulation => "general-population",
            PopulationClass::LungDisease => "lung-disease",
            PopulationClass::HeartDisease => "heart-disease",
            PopulationClass::Pregnancy => "pregnancy",
            PopulationClass::Elderly => "elderly",
            PopulationClass::Children => "children",
        }
    }

    /// Plain-English audience description used in prompts.
    pub fn audience(self) -> &'static str {
        match self {
            PopulationClass::GeneralPopulation => "the general population",
            PopulationClass::LungDisease => "people with lung diseases",
            PopulationClass::HeartDisease => "people with heart diseases",
            PopulationClass::Pregnancy => "pregnant women",
            PopulationClass::Elderly => "the elderly",
            PopulationClass::Children => "children",
        }
    }

    /// Key used by the provider's health recommendation object.
    pub fn provider_key(self) -> &'static str {
        match self {
            PopulationClass::GeneralPopulation => "generalPopulation",
            PopulationClass::LungDisease => "lungDiseasePopulation",
            PopulationClass::HeartDisease => "heartDiseasePopulation",
            PopulationClass::Pregnancy => "pregnantWomen",
            PopulationClass::Elderly => "elderly",
            PopulationClass::Children => "children",
        }
    }

    pub fn from_provider_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.provider_key() == key)
    }
}

impl fmt::Display for PopulationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PopulationClass {
    type Err = AirDataError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        match norm.as_str() {
            "general-population" | "general" | "healthy" => Ok(PopulationClass::GeneralPopulation),
            "lung-disease" | "lung" => Ok(PopulationClass::LungDisease),
            "heart-disease" | "heart" => Ok(PopulationClass::HeartDisease),
            "pregnancy" | "pregnant" => Ok(PopulationClass::Pregnancy),
            "elderly" => Ok(PopulationClass::Elderly),
            "children" => Ok(PopulationClass::Children),
            _ => Self::from_provider_key(s).ok_or_else(|| AirDataError::Parse {
                field: "population_class".into(),
                message: format!("unknown population class {s:?}"),
            }),
        }
    }
}

/// One hour of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    #[serde(rename = "ts")]
    pub timestamp: DateTime<Utc>,
    pub readings: BTreeMap<Pollutant, Reading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aqi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health_recommendations: Option<BTreeMap<PopulationClass, String>>,
}

impl HourlyRecord {
    pub fn new(timestamp: DateTime<Utc>) -> Result<Self> {
        if !is_hour_aligned(timestamp) {
            return Err(AirDataError::Parse {
                field: "dateTime".into(),
                message: format!("{timestamp} is not aligned to the hour"),
            });
        }
        Ok(Self {
            timestamp,
            readings: BTreeMap::new(),
            aqi: None,
            health_recommendations: None,
        })
    }

    pub fn with_reading(mut self, pollutant: Pollutant, reading: Reading) -> Self {
        self.readings.insert(pollutant, reading);
        self
    }

    pub fn value(&self, pollutant: Pollutant) -> Option<f64> {
        self.readings.get(&pollutant).map(|r| r.value)
    }
}

pub(crate) fn is_hour_aligned(ts: DateTime<Utc>) -> bool {
    ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

/// A time-ordered hourly series at one location.
///
/// `missing_hours` lists hours inside the requested window the provider did
/// not return. They are reported, never interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirQualityHistory {
    location: GeoPoint,
    records: Vec<HourlyRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    missing_hours: Vec<DateTime<Utc>>,
}

impl AirQualityHistory {
    /// Builds a history from strictly ascending records. Interior gaps are
    /// detected and recorded.
    pub fn new(location: GeoPoint, records: Vec<HourlyRecord>) -> Result<Self> {
        let mut missing = Vec::new();
        for pair in records.windows(2) {
            let (a, b) = (pair[0].timestamp, pair[1].timestamp);
            if b <= a {
                return Err(AirDataError::Unordered(b));
            }
            let mut t = a + Duration::hours(1);
            while t < b {
                missing.push(t);
                t += Duration::hours(1);
            }
        }
        for r in &records {
            if !is_hour_aligned(r.timestamp) {
                return Err(AirDataError::Parse {
                    field: "ts".into(),
                    message: format!("{} is not aligned to the hour", r.timestamp),
                });
            }
        }
        Ok(Self {
            location,
            records,
            missing_hours: missing,
        })
    }

    /// Extends the gap report with hours that fall outside the record range
    /// (leading or trailing coverage holes in a requested window).
    pub fn with_expected_window(mut self, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        let first = self.records.first().map(|r| r.timestamp);
        let last = self.records.last().map(|r| r.timestamp);
        let mut t = start;
        while t < end {
            let outside = match (first, last) {
                (Some(f), Some(l)) => t < f || t > l,
                _ => true,
            };
            if outside {
                self.missing_hours.push(t);
            }
            t += Duration::hours(1);
        }
        self.missing_hours.sort();
        self.missing_hours.dedup();
        self
    }

    pub(crate) fn with_missing(mut self, missing: Vec<DateTime<Utc>>) -> Self {
        self.missing_hours = missing;
        self.missing_hours.sort();
        self.missing_hours.dedup();
        self
    }

    pub fn location(&self) -> GeoPoint {
        self.location
    }

    pub fn records(&self) -> &[HourlyRecord] {
        &self.records
    }

    pub fn hours(&self) -> usize {
        self.records.len()
    }

    pub fn missing_hours(&self) -> &[DateTime<Utc>] {
        &self.missing_hours
    }

    pub fn has_gaps(&self) -> bool {
        !self.missing_hours.is_empty()
    }

    /// Hours covered by the series including reported gaps.
    pub fn span_hours(&self) -> usize {
        self.records.len() + self.missing_hours.len()
    }

    /// First hour of the covered window (a leading gap counts).
    pub fn window_start(&self) -> Option<DateTime<Utc>> {
        let first_record = self.records.first().map(|r| r.timestamp);
        let first_gap = self.missing_hours.first().copied();
        match (first_record, first_gap) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}
