//! Token and data-API cost estimation.
//!
//! Money is held as an exact rational number of US dollars so per-chunk and
//! per-run figures carry no binary rounding; rounding happens only when a
//! value is displayed.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul, Sub};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use chrono::NaiveDate;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::gateway::TokenUsage;

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("no price configured for model(s): {}", .0.join(", "))]
    Unpriced(Vec<String>),
    #[error("invalid price entry for {model}: {reason}")]
    InvalidPrice { model: String, reason: String },
    #[error("cached fraction must be within [0, 1], got {0}")]
    Fraction(f64),
    #[error("invalid amount {0:?}")]
    Amount(String),
    #[error("pricing file: {0}")]
    File(String),
}

pub type Result<T, E = CostError> = std::result::Result<T, E>;

/// An exact dollar amount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(Ratio<i128>);

const PER_MILLION: i128 = 1_000_000;

impl Usd {
    pub fn zero() -> Self {
        Usd(Ratio::zero())
    }

    pub fn from_ratio(numer: i128, denom: i128) -> Self {
        Usd(Ratio::new(numer, denom))
    }

    pub fn as_ratio(&self) -> Ratio<i128> {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Rounds half away from zero to `dp` decimal places.
    pub fn round_dp(&self, dp: u32) -> Usd {
        let scale = 10i128.pow(dp);
        let scaled = self.0 * Ratio::from_integer(scale);
        Usd(scaled.round() / Ratio::from_integer(scale))
    }

    /// Fixed-point rendering with `dp` decimals (rounded half away from zero).
    pub fn format_dp(&self, dp: u32) -> String {
        let scale = 10i128.pow(dp);
        let units = (self.0 * Ratio::from_integer(scale)).round().to_integer();
        let sign = if units < 0 { "-" } else { "" };
        let units = units.abs();
        if dp == 0 {
            return format!("{sign}{units}");
        }
        format!(
            "{sign}{}.{:0width$}",
            units / scale,
            units % scale,
            width = dp as usize
        )
    }

    /// Exact decimal rendering when the amount has a finite expansion of at
    /// most 12 places, otherwise 12 rounded places.
    pub fn exact_string(&self) -> String {
        for dp in 0..=12u32 {
            let scaled = self.0 * Ratio::from_integer(10i128.pow(dp));
            if scaled.is_integer() {
                return self.format_dp(dp.max(1));
            }
        }
        self.format_dp(12)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.exact_string())
    }
}

impl FromStr for Usd {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('$');
        let bad = || CostError::Amount(s.to_string());
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let scale = 10i128.pow(frac.len() as u32);
        let int_v: i128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: i128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let v = Ratio::new(int_v * scale + frac_v, scale);
        Ok(Usd(if neg { -v } else { v }))
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.exact_string())
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl Sub for Usd {
    type Output = Usd;
    fn sub(self, rhs: Usd) -> Usd {
        Usd(self.0 - rhs.0)
    }
}

impl Mul<i128> for Usd {
    type Output = Usd;
    fn mul(self, rhs: i128) -> Usd {
        Usd(self.0 * Ratio::from_integer(rhs))
    }
}

impl Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::zero(), Add::add)
    }
}

/// Share of input tokens billed at the cached rate, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachedFraction(Ratio<i128>);

impl CachedFraction {
    pub const NONE: CachedFraction = CachedFraction(Ratio::new_raw(0, 1));
    pub const ALL: CachedFraction = CachedFraction(Ratio::new_raw(1, 1));

    pub fn new(f: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&f) {
            return Err(CostError::Fraction(f));
        }
        Ratio::<i128>::approximate_float(f)
            .map(CachedFraction)
            .ok_or(CostError::Fraction(f))
    }
}

/// Prices in USD per one million tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceEntry {
    #[serde(skip)]
    pub model: String,
    pub input: Usd,
    pub cached_input: Usd,
    pub output: Usd,
}

impl PriceEntry {
    pub fn new(model: &str, input: &str, cached_input: &str, output: &str) -> Result<Self> {
        let entry = Self {
            model: model.to_string(),
            input: input.parse()?,
            cached_input: cached_input.parse()?,
            output: output.parse()?,
        };
        entry.validate()?;
        Ok(entry)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| CostError::InvalidPrice {
            model: self.model.clone(),
            reason: reason.into(),
        };
        if [self.input, self.cached_input, self.output]
            .iter()
            .any(|p| *p < Usd::zero())
        {
            return Err(invalid("prices must be non-negative"));
        }
        if self.cached_input > self.input {
            return Err(invalid("cached input price exceeds input price"));
        }
        Ok(())
    }

    /// Cost of one call given its token usage; cached tokens are a subset of input.
    pub fn cost_of(&self, usage: &TokenUsage) -> Usd {
        let cached = usage.cached_input_tokens.min(usage.input_tokens) as i128;
        let fresh = usage.input_tokens as i128 - cached;
        let micros = self.input.0 * Ratio::from_integer(fresh)
            + self.cached_input.0 * Ratio::from_integer(cached)
            + self.output.0 * Ratio::from_integer(usage.output_tokens as i128);
        Usd(micros / Ratio::from_integer(PER_MILLION))
    }
}

/// `((1 - f)·in·p_in + f·in·p_cached + out·p_out) / 1e6`
pub fn chunk_cost(
    input_tokens: u64,
    output_tokens: u64,
    price: &PriceEntry,
    cached_fraction: CachedFraction,
) -> Usd {
    let f = cached_fraction.0;
    let input = Ratio::from_integer(input_tokens as i128);
    let one = Ratio::from_integer(1);
    let micros = (one - f) * input * price.input.0
        + f * input * price.cached_input.0
        + Ratio::from_integer(output_tokens as i128) * price.output.0;
    Usd(micros / Ratio::from_integer(PER_MILLION))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingTable {
    pub compiled: NaiveDate,
    models: BTreeMap<String, PriceEntry>,
}

const DEFAULT_PRICING: &str = include_str!("../pricing.json");

fn model_key(model: &str) -> String {
    model
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

impl Default for PricingTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_PRICING).expect("bundled pricing table is valid")
    }
}

impl PricingTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut table: PricingTable =
            serde_json::from_str(text).map_err(|e| CostError::File(e.to_string()))?;
        for (name, entry) in table.models.iter_mut() {
            entry.model = name.clone();
            entry.validate()?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CostError::File(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, entry: PriceEntry) {
        self.models.insert(entry.model.clone(), entry);
    }

    /// Looks up a model, ignoring case and punctuation ("GPT-4.1" finds "gpt41").
    pub fn get(&self, model: &str) -> Result<&PriceEntry> {
        let key = model_key(model);
        self.models
            .values()
            .find(|e| model_key(&e.model) == key)
            .ok_or_else(|| CostError::Unpriced(vec![model.to_string()]))
    }

    pub fn models(&self) -> impl Iterator<Item = &PriceEntry> {
        self.models.values()
    }
}

/// Free tier and overage price of the data API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataApiQuota {
    pub free_calls: u64,
    pub overage_per_thousand: Usd,
}

impl Default for DataApiQuota {
    fn default() -> Self {
        Self {
            free_calls: 10_000,
            overage_per_thousand: Usd::from_ratio(5, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverageMode {
    /// Each call past the free tier costs 1/1000 of the block price.
    #[default]
    Linear,
    /// Every started block of 1,000 calls is billed in full.
    Bucketed,
}

impl DataApiQuota {
    pub fn cost(&self, calls: u64, mode: OverageMode) -> Usd {
        let over = calls.saturating_sub(self.free_calls) as i128;
        match mode {
            OverageMode::Linear => Usd(self.overage_per_thousand.0 * Ratio::new(over, 1000)),
            OverageMode::Bucketed => self.overage_per_thousand * ((over + 999) / 1000),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTally {
    pub calls: u64,
    pub input_tokens: u64,
    pub cached_input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenTally {
    fn add(&mut self, usage: &TokenUsage) {
        self.calls += 1;
        self.input_tokens += usage.input_tokens;
        self.cached_input_tokens += usage.cached_input_tokens;
        self.output_tokens += usage.output_tokens;
    }

    pub fn as_usage(&self) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens,
            cached_input_tokens: self.cached_input_tokens,
            output_tokens: self.output_tokens,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub models: BTreeMap<String, TokenTally>,
    pub data_api_calls: u64,
}

/// Run-wide usage tallies. Safe to share across concurrent calls.
#[derive(Debug, Default)]
pub struct UsageLedger {
    state: Mutex<LedgerSnapshot>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_llm(&self, model: &str, usage: &TokenUsage) {
        let mut state = self.state.lock().expect("ledger lock");
        state.models.entry(model.to_string()).or_default().add(usage);
    }

    pub fn record_data_calls(&self, calls: u64) {
        self.state.lock().expect("ledger lock").data_api_calls += calls;
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.state.lock().expect("ledger lock").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCost {
    pub model: String,
    pub tally: TokenTally,
    pub cost: Usd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub models: Vec<ModelCost>,
    pub data_api_calls: u64,
    pub data_api_cost: Usd,
    pub llm_cost: Usd,
    pub total: Usd,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item,calls,input_tokens,cached_input_tokens,output_tokens,usd\n");
        for m in &self.models {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.model,
                m.tally.calls,
                m.tally.input_tokens,
                m.tally.cached_input_tokens,
                m.tally.output_tokens,
                m.cost
            ));
        }
        out.push_str(&format!(
            "data-api,{},,,,{}\n",
            self.data_api_calls, self.data_api_cost
        ));
        out.push_str(&format!("total,,,,,{}\n", self.total));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.models {
            out.push_str(&format!(
                "{:<16} {:>4} calls  in {:>8}  cached {:>8}  out {:>7}  ${}\n",
                m.model,
                m.tally.calls,
                m.tally.input_tokens,
                m.tally.cached_input_tokens,
                m.tally.output_tokens,
                m.cost.format_dp(4)
            ));
        }
        out.push_str(&format!(
            "{:<16} {:>4} calls  ${}\n",
            "data-api",
            self.data_api_calls,
            self.data_api_cost.format_dp(4)
        ));
        out.push_str(&format!("{:<16} ${}\n", "total", self.total.format_dp(4)));
        out
    }
}

pub fn run_cost(
    ledger: &LedgerSnapshot,
    pricing: &PricingTable,
    quota: &DataApiQuota,
    mode: OverageMode,
) -> Result<CostReport> {
    let unpriced: Vec<String> = ledger
        .models
        .keys()
        .filter(|m| pricing.get(m).is_err())
        .cloned()
        .collect();
    if !unpriced.is_empty() {
        return Err(CostError::Unpriced(unpriced));
    }
    let models: Vec<ModelCost> = ledger
        .models
        .iter()
        .map(|(model, tally)| ModelCost {
            model: model.clone(),
            tally: *tally,
            cost: pricing.get(model).expect("checked").cost_of(&tally.as_usage()),
        })
        .collect();
    let llm_cost: Usd = models.iter().map(|m| m.cost).sum();
    let data_api_cost = quota.cost(ledger.data_api_calls, mode);
    Ok(CostReport {
        models,
        data_api_calls: ledger.data_api_calls,
        data_api_cost,
        llm_cost,
        total: llm_cost + data_api_cost,
    })
}

/// Token volumes assumed for a task estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskProfile {
    pub chunks: u32,
    pub chunk_input_tokens: u64,
    pub chunk_output_tokens: u64,
    pub aggregation_prompt_tokens: u64,
    pub aggregation_output_tokens: u64,
}

/// Tokens in one 48-hour chunk rendered in the provider's own JSON response format.
pub const PROVIDER_JSON_CHUNK_TOKENS: u64 = 25_000;
/// Typical structured summary length returned by a Worker.
pub const WORKER_SUMMARY_TOKENS: u64 = 200;
/// A 500-word report at roughly 4/3 tokens per word.
pub const REPORT_OUTPUT_TOKENS: u64 = 667;

impl TaskProfile {
    pub fn new(chunks: u32, chunk_input_tokens: u64) -> Self {
        Self {
            chunks,
            chunk_input_tokens,
            chunk_output_tokens: WORKER_SUMMARY_TOKENS,
            aggregation_prompt_tokens: 300,
            aggregation_output_tokens: REPORT_OUTPUT_TOKENS,
        }
    }

    /// Instructor input: every Worker summary plus the instruction text.
    pub fn aggregation_input_tokens(&self) -> u64 {
        self.chunks as u64 * self.chunk_output_tokens + self.aggregation_prompt_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRange {
    /// All Worker input billed at the cached rate.
    pub lower: Usd,
    /// No caching.
    pub upper: Usd,
    pub worker_upper: Usd,
    pub aggregation: Usd,
}

pub fn estimate_task(profile: &TaskProfile, worker: &PriceEntry, instructor: &PriceEntry) -> CostRange {
    let chunks = profile.chunks as i128;
    let per_chunk = |f| chunk_cost(profile.chunk_input_tokens, profile.chunk_output_tokens, worker, f);
    let aggregation = chunk_cost(
        profile.aggregation_input_tokens(),
        profile.aggregation_output_tokens,
        instructor,
        CachedFraction::NONE,
    );
    let worker_upper = per_chunk(CachedFraction::NONE) * chunks;
    CostRange {
        lower: per_chunk(CachedFraction::ALL) * chunks + aggregation,
        upper: worker_upper + aggregation,
        worker_upper,
        aggregation,
    }
}

/// Per-chunk and whole-run summarization cost, exact and rounded to cents
/// the way a headline figure is usually quoted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummarizationCost {
    pub chunks: u32,
    pub per_chunk: Usd,
    pub per_chunk_rounded: Usd,
    pub total: Usd,
    /// `chunks × per_chunk_rounded`
    pub total_rounded: Usd,
}

pub fn summarization_cost(
    chunks: u32,
    input_tokens: u64,
    output_tokens: u64,
    price: &PriceEntry,
    cached_fraction: CachedFraction,
) -> SummarizationCost {
    let per_chunk = chunk_cost(input_tokens, output_tokens, price, cached_fraction);
    let per_chunk_rounded = per_chunk.round_dp(2);
    SummarizationCost {
        chunks,
        per_chunk,
        per_chunk_rounded,
        total: per_chunk * chunks as i128,
        total_rounded: per_chunk_rounded * chunks as i128,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usd(s: &str) -> Usd {
        s.parse().unwrap()
    }

    fn gpt41() -> PriceEntry {
        PricingTable::default().get("gpt41").unwrap().clone()
    }

    #[test]
    fn default_table_prices() {
        let t = PricingTable::default();
        assert_eq!(t.compiled, NaiveDate::from_ymd_opt(2025, 6, 27).unwrap());
        let p = t.get("GPT-4.1").unwrap();
        assert_eq!((p.input, p.cached_input, p.output), (usd("2.00"), usd("0.50"), usd("8.00")));
        let d = t.get("deepseek-v3").unwrap();
        assert_eq!((d.input, d.cached_input, d.output), (usd("0.27"), usd("0.07"), usd("1.10")));
        assert!(matches!(t.get("gpt-9"), Err(CostError::Unpriced(_))));
    }

    #[test]
    fn chunk_cost_examples() {
        let p = gpt41();
        let c = chunk_cost(25_000, 200, &p, CachedFraction::NONE);
        assert_eq!(c, usd("0.0516"));
        assert_eq!(c.format_dp(2), "0.05");
        assert_eq!(chunk_cost(0, 0, &p, CachedFraction::NONE), Usd::zero());
        assert_eq!(chunk_cost(25_000, 200, &p, CachedFraction::ALL), usd("0.0141"));
        let half = chunk_cost(25_000, 200, &p, CachedFraction::new(0.5).unwrap());
        assert_eq!(half, usd("0.03285"));
    }

    #[test]
    fn summarization_totals() {
        let s = summarization_cost(30, 25_000, 200, &gpt41(), CachedFraction::NONE);
        assert_eq!(s.total, usd("1.548"));
        assert_eq!(s.per_chunk_rounded, usd("0.05"));
        assert_eq!(s.total_rounded.format_dp(2), "1.50");
    }

    #[test]
    fn data_api_overage() {
        let q = DataApiQuota::default();
        assert_eq!(q.cost(9_999, OverageMode::Linear), Usd::zero());
        assert_eq!(q.cost(10_000, OverageMode::Linear), Usd::zero());
        assert_eq!(q.cost(10_500, OverageMode::Linear), usd("2.50"));
        assert_eq!(q.cost(10_500, OverageMode::Bucketed), usd("5.00"));
        assert_eq!(q.cost(12_000, OverageMode::Bucketed), usd("10.00"));
    }

    #[test]
    fn run_cost_thirty_chunks() {
        let ledger = UsageLedger::new();
        let usage = TokenUsage {
            input_tokens: 25_000,
            cached_input_tokens: 0,
            output_tokens: 200,
        };
        for _ in 0..30 {
            ledger.record_llm("gpt41", &usage);
        }
        ledger.record_data_calls(5);
        let r = run_cost(
            &ledger.snapshot(),
            &PricingTable::default(),
            &DataApiQuota::default(),
            OverageMode::Linear,
        )
        .unwrap();
        assert_eq!(r.llm_cost, usd("1.548"));
        assert_eq!(r.data_api_cost, Usd::zero());
        assert_eq!(r.total, usd("1.548"));
        assert!(r.to_csv().starts_with("item,calls"));
    }

    #[test]
    fn run_cost_lists_unpriced_models() {
        let ledger = UsageLedger::new();
        ledger.record_llm("mystery-1", &TokenUsage::default());
        ledger.record_llm("mystery-2", &TokenUsage::default());
        let err = run_cost(
            &ledger.snapshot(),
            &PricingTable::default(),
            &DataApiQuota::default(),
            OverageMode::Linear,
        )
        .unwrap_err();
        match err {
            CostError::Unpriced(models) => assert_eq!(models, vec!["mystery-1", "mystery-2"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn estimate_bounds_and_model_ratio() {
        let t = PricingTable::default();
        let gpt = t.get("gpt41").unwrap();
        let profile = TaskProfile::new(30, PROVIDER_JSON_CHUNK_TOKENS);
        let r = estimate_task(&profile, gpt, gpt);
        // Hand evaluation: 30·0.0516 + (6300·2 + 667·8)/1e6 = 1.548 + 0.017936
        assert_eq!(r.upper, usd("1.565936"));
        // 30·0.0141 + 0.017936
        assert_eq!(r.lower, usd("0.440936"));
        assert!(r.lower < r.upper);

        let agg_only = estimate_task(&TaskProfile::new(0, PROVIDER_JSON_CHUNK_TOKENS), gpt, gpt);
        assert_eq!(agg_only.lower, agg_only.upper);
        assert!(agg_only.upper.to_f64() > 0.001 && agg_only.upper.to_f64() < 0.03);

        let ds = t.get("deepseek-v3").unwrap();
        let cheap = estimate_task(&profile, ds, ds);
        let ratio = r.upper.to_f64() / cheap.upper.to_f64();
        assert!((6.0..=9.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn usd_parse_and_format() {
        assert_eq!(usd("0.0516").to_string(), "0.0516");
        assert_eq!(usd("1.5").format_dp(2), "1.50");
        assert_eq!(usd("0.005").format_dp(2), "0.01");
        assert_eq!(usd("2").to_string(), "2.0");
        assert!("abc".parse::<Usd>().is_err());
        assert!("1.2.3".parse::<Usd>().is_err());
        assert_eq!(Usd::from_ratio(1, 3).exact_string(), "0.333333333333");
    }

    #[test]
    fn invalid_prices_rejected() {
        assert!(PriceEntry::new("x", "1.00", "2.00", "1.00").is_err());
        assert!(PriceEntry::new("x", "-1.00", "0", "1.00").is_err());
        assert!(CachedFraction::new(1.5).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn price() -> impl Strategy<Value = PriceEntry> {
            (0u32..1000, 0u32..1000, 0u32..2000).prop_map(|(a, b, c)| {
                let (hi, lo) = (a.max(b), a.min(b));
                PriceEntry {
                    model: "m".into(),
                    input: Usd::from_ratio(hi as i128, 100),
                    cached_input: Usd::from_ratio(lo as i128, 100),
                    output: Usd::from_ratio(c as i128, 100),
                }
            })
        }

        proptest! {
            #[test]
            fn linear_in_tokens(p in price(), a in 0u64..1_000_000, b in 0u64..1_000_000, o in 0u64..10_000, f in 0u32..=100) {
                let f = CachedFraction(Ratio::new(f as i128, 100));
                let sum = chunk_cost(a + b, o, &p, f);
                let parts = chunk_cost(a, o, &p, f) + chunk_cost(b, 0, &p, f);
                prop_assert_eq!(sum, parts);
            }

            #[test]
            fn fractions_bracketed(p in price(), i in 0u64..1_000_000, o in 0u64..10_000, f in 0u32..=100) {
                let mid = chunk_cost(i, o, &p, CachedFraction(Ratio::new(f as i128, 100)));
                let lo = chunk_cost(i, o, &p, CachedFraction::ALL);
                let hi = chunk_cost(i, o, &p, CachedFraction::NONE);
                prop_assert!(lo <= mid && mid <= hi);
            }

            #[test]
            fn monotone_in_prices(p in price(), i in 0u64..1_000_000, o in 0u64..10_000, bump in 1u32..500) {
                let mut q = p.clone();
                q.input = q.input + Usd::from_ratio(bump as i128, 100);
                q.output = q.output + Usd::from_ratio(bump as i128, 100);
                prop_assert!(chunk_cost(i, o, &p, CachedFraction::NONE) <= chunk_cost(i, o, &q, CachedFraction::NONE));
            }

            #[test]
            fn ledger_is_additive(calls in proptest::collection::vec((0u64..50_000, 0u64..50_000, 0u64..2_000), 0..40)) {
                let p = gpt41();
                let ledger = UsageLedger::new();
                let mut expected = Usd::zero();
                for (input, cached, output) in &calls {
                    let usage = TokenUsage { input_tokens: *input, cached_input_tokens: (*cached).min(*input), output_tokens: *output };
                    ledger.record_llm("gpt41", &usage);
                    let f = if *input == 0 { CachedFraction::NONE } else { CachedFraction(Ratio::new(usage.cached_input_tokens as i128, *input as i128)) };
                    expected = expected + chunk_cost(*input, *output, &p, f);
                }
                let r = run_cost(&ledger.snapshot(), &PricingTable::default(), &DataApiQuota::default(), OverageMode::Linear).unwrap();
                prop_assert_eq!(r.llm_cost, expected);
            }
        }
    }
}
