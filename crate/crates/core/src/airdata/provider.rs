use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, Duration, DurationRound, Utc};
use futures::stream::{self, StreamExt, TryStreamExt};
use serde_json::json;

use super::{
    normalize_history, AirDataError, AirQualityHistory, GeoPoint, HourlyRecord, RawHour, RawPage,
    Result,
};
use crate::cost::UsageLedger;

/// Hours the provider returns per history call.
pub const PAGE_HOURS: u32 = 168;
/// Longest history the provider retains.
pub const MAX_HOURS: u32 = 720;

pub const API_KEY_ENV: &str = "AIRLENS_AIRQ_API_KEY";
pub const BASE_URL_ENV: &str = "AIRLENS_AIRQ_BASE_URL";
const DEFAULT_BASE_URL: &str = "https://airquality.googleapis.com";

/// A request for hours in `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPageRequest {
    pub location: GeoPoint,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub page_token: Option<String>,
}

#[async_trait]
pub trait AirQualityProvider: Send + Sync {
    async fn history_page(&self, request: &HistoryPageRequest) -> Result<RawPage>;
    async fn current_conditions(&self, location: GeoPoint) -> Result<RawHour>;
}

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub api_key: Option<String>,
    pub base_url: String,
}

impl ProviderConfig {
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            base_url: std::env::var(BASE_URL_ENV)
                .ok()
                .filter(|u| !u.is_empty())
                .unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
        }
    }
}

/// HTTP client for the cloud air-quality service.
pub struct GoogleAirQualityClient {
    http: reqwest::Client,
    base_url: String,
    api_key: String,
}

pub(crate) fn install_tls_provider() {
    // Ignored when a provider is already installed.
    let _ = rustls::crypto::ring::default_provider().install_default();
}

impl GoogleAirQualityClient {
    pub fn new(config: &ProviderConfig) -> Result<Self> {
        let api_key = config.api_key.clone().ok_or_else(|| {
            AirDataError::Config(format!("{API_KEY_ENV} is not set and no fixture was given"))
        })?;
        install_tls_provider();
        let http = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| AirDataError::Config(e.to_string()))?;
        Ok(Self {
            http,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key,
        })
    }

    async fn post(&self, endpoint: &str, body: serde_json::Value) -> Result<String> {
        let url = format!("{}/v1/{endpoint}", self.base_url);
        let resp = self
            .http
            .post(&url)
            .query(&[("key", self.api_key.as_str())])
            .json(&body)
            .send()
            .await
            .map_err(|e| AirDataError::Transport {
                status: 0,
                message: e.to_string(),
            })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| AirDataError::Transport {
            status: status.as_u16(),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(AirDataError::Transport {
                status: status.as_u16(),
                message: text,
            });
        }
        Ok(text)
    }
}

fn location_json(location: GeoPoint) -> serde_json::Value {
    json!({ "latitude": location.latitude(), "longitude": location.longitude() })
}

#[async_trait]
impl AirQualityProvider for GoogleAirQualityClient {
    async fn history_page(&self, request: &HistoryPageRequest) -> Result<RawPage> {
        let mut body = json!({
            "location": location_json(request.location),
            "period": {
                "startTime": request.start.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                "endTime": request.end.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            },
            "pageSize": PAGE_HOURS,
            "universalAqi": true,
            "extraComputations": ["HEALTH_RECOMMENDATIONS", "POLLUTANT_CONCENTRATION"],
            "languageCode": "en",
        });
        if let Some(token) = &request.page_token {
            body["pageToken"] = json!(token);
        }
        RawPage::parse(&self.post("history:lookup", body).await?)
    }

    async fn current_conditions(&self, location: GeoPoint) -> Result<RawHour> {
        let body = json!({
            "location": location_json(location),
            "universalAqi": true,
            "extraComputations": ["HEALTH_RECOMMENDATIONS", "POLLUTANT_CONCENTRATION"],
            "languageCode": "en",
        });
        let text = self.post("currentConditions:lookup", body).await?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| AirDataError::Parse {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

/// Serves a recorded history through the provider interface.
pub struct FixtureProvider {
    history: AirQualityHistory,
}

impl FixtureProvider {
    pub fn new(history: AirQualityHistory) -> Self {
        Self { history }
    }

    /// Exclusive end of the recorded window.
    pub fn window_end(&self) -> Option<DateTime<Utc>> {
        let last_record = self.history.records().last().map(|r| r.timestamp);
        let last_gap = self.history.missing_hours().last().copied();
        last_record.max(last_gap).map(|t| t + Duration::hours(1))
    }
}

#[async_trait]
impl AirQualityProvider for FixtureProvider {
    async fn history_page(&self, request: &HistoryPageRequest) -> Result<RawPage> {
        let records: Vec<HourlyRecord> = self
            .history
            .records()
            .iter()
            .filter(|r| r.timestamp >= request.start && r.timestamp < request.end)
            .cloned()
            .collect();
        Ok(RawPage::from_records(&records))
    }

    async fn current_conditions(&self, _location: GeoPoint) -> Result<RawHour> {
        self.history
            .records()
            .last()
            .map(RawHour::from_record)
            .ok_or_else(|| AirDataError::Config("fixture has no records".into()))
    }
}

/// Paging history client. Every provider call is counted in the ledger.
#[derive(Clone)]
pub struct HistoryClient {
    provider: Arc<dyn AirQualityProvider>,
    ledger: Arc<UsageLedger>,
    concurrency: usize,
    end: Option<DateTime<Utc>>,
}

impl HistoryClient {
    pub fn new(provider: Arc<dyn AirQualityProvider>, ledger: Arc<UsageLedger>) -> Self {
        Self {
            provider,
            ledger,
            concurrency: 4,
            end: None,
        }
    }

    /// Live client from the environment; fails when no API key is configured.
    pub fn from_env(ledger: Arc<UsageLedger>) -> Result<Self> {
        let client = GoogleAirQualityClient::new(&ProviderConfig::from_env())?;
        Ok(Self::new(Arc::new(client), ledger))
    }

    /// Fixture-backed client whose window ends where the recording ends.
    pub fn from_fixture(history: AirQualityHistory, ledger: Arc<UsageLedger>) -> Self {
        let provider = FixtureProvider::new(history);
        let end = provider.window_end();
        let mut client = Self::new(Arc::new(provider), ledger);
        client.end = end;
        client
    }

    pub fn with_concurrency(mut self, concurrency: usize) -> Self {
        self.concurrency = concurrency.max(1);
        self
    }

    /// Fixes the exclusive end hour of history windows (defaults to the most
    /// recent UTC midnight, so full-day requests chunk cleanly).
    pub fn with_window_end(mut self, end: DateTime<Utc>) -> Self {
        self.end = Some(end);
        self
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    fn window_end(&self) -> DateTime<Utc> {
        self.end.unwrap_or_else(|| {
            Utc::now()
                .duration_trunc(Duration::days(1))
                .expect("day truncation")
        })
    }

    /// Fetches the `hours` most recent hours before the window end, one
    /// provider call per 168-hour page.
    pub async fn fetch_history(&self, location: GeoPoint, hours: u32) -> Result<AirQualityHistory> {
        if !(1..=MAX_HOURS).contains(&hours) {
            return Err(AirDataError::HoursOutOfRange {
                got: hours,
                max: MAX_HOURS,
            });
        }
        let end = self.window_end();
        let start = end - Duration::hours(hours as i64);
        let windows: Vec<HistoryPageRequest> = (0..hours)
            .step_by(PAGE_HOURS as usize)
            .map(|offset| {
                let w_start = start + Duration::hours(offset as i64);
                let w_end = (w_start + Duration::hours(PAGE_HOURS as i64)).min(end);
                HistoryPageRequest {
                    location,
                    start: w_start,
                    end: w_end,
                    page_token: None,
                }
            })
            .collect();
        let pages: Vec<Vec<RawPage>> = stream::iter(windows)
            .map(|w| self.fetch_window(w))
            .buffered(self.concurrency)
            .try_collect()
            .await?;
        let pages: Vec<RawPage> = pages.into_iter().flatten().collect();
        let history = normalize_history(location, &pages)?.with_expected_window(start, end);
        if history.has_gaps() {
            log::warn!(
                "history at {location} is missing {} of {hours} hours",
                history.missing_hours().len()
            );
        }
        Ok(history)
    }

    async fn fetch_window(&self, mut request: HistoryPageRequest) -> Result<Vec<RawPage>> {
        let mut pages = Vec::new();
        loop {
            let page = self.provider.history_page(&request).await;
            self.ledger.record_data_calls(1);
            let page = page?;
            let next = page.next_page_token.clone().filter(|t| !t.is_empty());
            pages.push(page);
            match next {
                Some(token) => request.page_token = Some(token),
                None => return Ok(pages),
            }
        }
    }

    pub async fn current_conditions(&self, location: GeoPoint) -> Result<HourlyRecord> {
        let raw = self.provider.current_conditions(location).await;
        self.ledger.record_data_calls(1);
        raw?.to_record("currentConditions")
    }
}
