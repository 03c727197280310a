//! Shared domain vocabulary: money, the four negotiation dimensions and their
//! value grids, the ask/reject/accept action grammar, debt records and
//! transcripts.
//!
//! Everything here is a plain value type. Other modules only build on these
//! definitions.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

/// Pseudonym used for every generated debtor.
pub const PSEUDONYM: &str = "Zhang San";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("amount must be positive, got {0}")]
    NonPositiveAmount(Money),
    #[error("total assets must be non-negative at creation, got {0}")]
    NegativeAssets(Money),
    #[error("daily surplus {surplus} does not equal income {income} minus expense {expense}")]
    SurplusMismatch {
        income: Money,
        expense: Money,
        surplus: Money,
    },
    #[error("outcome is missing dimensions: {0:?}")]
    IncompleteOutcome(Vec<DimensionKey>),
    #[error("value {value} has the wrong type for dimension {dim}")]
    ValueType { dim: DimensionKey, value: String },
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("record line {line}: {message}")]
    RecordLine { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// Money
// ---------------------------------------------------------------------------

/// Currency amount in integer minor units (cents).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_minor(minor: i64) -> Self {
        Money(minor)
    }

    pub const fn from_major(major: i64) -> Self {
        Money(major * 100)
    }

    /// Rounds a major-unit float to the nearest minor unit.
    pub fn from_major_f64(major: f64) -> Self {
        Money((major * 100.0).round() as i64)
    }

    pub const fn minor(self) -> i64 {
        self.0
    }

    pub fn as_major_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

// ---------------------------------------------------------------------------
// Dimensions and grids
// ---------------------------------------------------------------------------

/// One of the four negotiated terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKey {
    /// Fraction of the debt waived.
    DiscRatio,
    /// Fraction of the post-discount balance paid up front.
    PmtRatio,
    /// Grace days before the up-front payment is due.
    PmtDays,
    /// Number of monthly installments for the remainder.
    InstPrds,
}

impl DimensionKey {
    pub const ALL: [DimensionKey; 4] = [
        DimensionKey::DiscRatio,
        DimensionKey::PmtRatio,
        DimensionKey::PmtDays,
        DimensionKey::InstPrds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DimensionKey::DiscRatio => "disc_ratio",
            DimensionKey::PmtRatio => "pmt_ratio",
            DimensionKey::PmtDays => "pmt_days",
            DimensionKey::InstPrds => "inst_prds",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DimensionKey::DiscRatio => "Discount Ratio",
            DimensionKey::PmtRatio => "Immediate Payment Ratio",
            DimensionKey::PmtDays => "Immediate Payment Time",
            DimensionKey::InstPrds => "Installment Periods",
        }
    }

    /// Whether a larger value is a concession to the debtor.
    pub fn debtor_favours_higher(self) -> bool {
        !matches!(self, DimensionKey::PmtRatio)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DimensionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DimensionKey {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "disc_ratio" => Ok(DimensionKey::DiscRatio),
            "pmt_ratio" => Ok(DimensionKey::PmtRatio),
            "pmt_days" => Ok(DimensionKey::PmtDays),
            "inst_prds" => Ok(DimensionKey::InstPrds),
            other => Err(DomainError::UnknownDimension(other.to_string())),
        }
    }
}

/// A fraction in basis points (1/10000).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ratio(u32);

impl Ratio {
    pub const fn from_bps(bps: u32) -> Self {
        Ratio(bps)
    }

    pub const fn from_percent(pct: u32) -> Self {
        Ratio(pct * 100)
    }

    /// Accepts fractions in `[0, 1]` that land on a whole basis point.
    pub fn from_fraction(x: f64) -> Option<Self> {
        if !x.is_finite() || !(0.0..=1.0).contains(&x) {
            return None;
        }
        let scaled = x * 10_000.0;
        let rounded = scaled.round();
        ((scaled - rounded).abs() < 1e-6).then_some(Ratio(rounded as u32))
    }

    pub const fn bps(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10_000.0
    }

    /// `amount * self`, rounded half away from zero to the nearest minor unit.
    pub fn apply(self, amount: Money) -> Money {
        let num = amount.minor() as i128 * self.0 as i128;
        let half = if num >= 0 { 5_000 } else { -5_000 };
        Money::from_minor(((num + half) / 10_000) as i64)
    }

    /// `1 - self`.
    pub fn complement(self) -> Ratio {
        Ratio(10_000u32.saturating_sub(self.0))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(100) {
            write!(f, "{}%", self.0 / 100)
        } else {
            write!(f, "{:.2}%", self.0 as f64 / 100.0)
        }
    }
}

/// A value for one dimension. The variant must match the dimension's kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DimensionValue {
    Ratio(Ratio),
    Days(u32),
    Months(u32),
}

impl DimensionValue {
    pub fn matches(self, key: DimensionKey) -> bool {
        matches!(
            (key, self),
            (DimensionKey::DiscRatio | DimensionKey::PmtRatio, DimensionValue::Ratio(_))
                | (DimensionKey::PmtDays, DimensionValue::Days(_))
                | (DimensionKey::InstPrds, DimensionValue::Months(_))
        )
    }

    pub fn to_json(self) -> Value {
        match self {
            DimensionValue::Ratio(r) => Value::from(r.as_f64()),
            DimensionValue::Days(d) => Value::from(d),
            DimensionValue::Months(m) => Value::from(m),
        }
    }

    /// Parses a wire value for `key`. Ratios are written as fractions; a
    /// percent string such as `"15%"` is also accepted.
    pub fn from_json(key: DimensionKey, value: &Value) -> Result<Self, DomainError> {
        let bad = || DomainError::ValueType {
            dim: key,
            value: value.to_string(),
        };
        match key {
            DimensionKey::DiscRatio | DimensionKey::PmtRatio => {
                let frac = match value {
                    Value::Number(n) => n.as_f64().ok_or_else(bad)?,
                    Value::String(s) => {
                        let s = s.trim();
                        match s.strip_suffix('%') {
                            Some(p) => p.trim().parse::<f64>().map_err(|_| bad())? / 100.0,
                            None => s.parse::<f64>().map_err(|_| bad())?,
                        }
                    }
                    _ => return Err(bad()),
                };
                Ratio::from_fraction(frac).map(DimensionValue::Ratio).ok_or_else(bad)
            }
            DimensionKey::PmtDays | DimensionKey::InstPrds => {
                let n = match value {
                    Value::Number(n) => match n.as_u64() {
                        Some(n) => n,
                        None => {
                            let f = n.as_f64().ok_or_else(bad)?;
                            if f >= 0.0 && f.fract() == 0.0 {
                                f as u64
                            } else {
                                return Err(bad());
                            }
                        }
                    },
                    Value::String(s) => s.trim().parse::<u64>().map_err(|_| bad())?,
                    _ => return Err(bad()),
                };
                let n = u32::try_from(n).map_err(|_| bad())?;
                Ok(if key == DimensionKey::PmtDays {
                    DimensionValue::Days(n)
                } else {
                    DimensionValue::Months(n)
                })
            }
        }
    }

    pub fn as_ratio(self) -> Option<Ratio> {
        match self {
            DimensionValue::Ratio(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_count(self) -> Option<u32> {
        match self {
            DimensionValue::Days(n) | DimensionValue::Months(n) => Some(n),
            DimensionValue::Ratio(_) => None,
        }
    }

    /// Position on a common numeric axis, used for debtor-preference comparisons.
    fn magnitude(self) -> u32 {
        match self {
            DimensionValue::Ratio(r) => r.bps(),
            DimensionValue::Days(n) | DimensionValue::Months(n) => n,
        }
    }
}

impl fmt::Display for DimensionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimensionValue::Ratio(r) => write!(f, "{r}"),
            DimensionValue::Days(d) => write!(f, "{d} days"),
            DimensionValue::Months(m) => write!(f, "{m} months"),
        }
    }
}

const fn pct(p: u32) -> DimensionValue {
    DimensionValue::Ratio(Ratio::from_percent(p))
}

const DISC_GRID: [DimensionValue; 7] = [pct(0), pct(5), pct(10), pct(15), pct(20), pct(25), pct(30)];
const PMT_RATIO_GRID: [DimensionValue; 10] = [
    pct(5),
    pct(10),
    pct(15),
    pct(20),
    pct(25),
    pct(30),
    pct(35),
    pct(40),
    pct(45),
    pct(50),
];
const PMT_DAYS_GRID: [DimensionValue; 14] = [
    DimensionValue::Days(1),
    DimensionValue::Days(2),
    DimensionValue::Days(3),
    DimensionValue::Days(4),
    DimensionValue::Days(5),
    DimensionValue::Days(6),
    DimensionValue::Days(7),
    DimensionValue::Days(8),
    DimensionValue::Days(9),
    DimensionValue::Days(10),
    DimensionValue::Days(11),
    DimensionValue::Days(12),
    DimensionValue::Days(13),
    DimensionValue::Days(14),
];
const INST_GRID: [DimensionValue; 6] = [
    DimensionValue::Months(3),
    DimensionValue::Months(6),
    DimensionValue::Months(9),
    DimensionValue::Months(12),
    DimensionValue::Months(18),
    DimensionValue::Months(24),
];

/// The admissible values for `key`, ascending.
pub fn grid_of(key: DimensionKey) -> &'static [DimensionValue] {
    match key {
        DimensionKey::DiscRatio => &DISC_GRID,
        DimensionKey::PmtRatio => &PMT_RATIO_GRID,
        DimensionKey::PmtDays => &PMT_DAYS_GRID,
        DimensionKey::InstPrds => &INST_GRID,
    }
}

pub fn is_on_grid(key: DimensionKey, value: DimensionValue) -> bool {
    grid_of(key).contains(&value)
}

/// Compares two values of `key` from the debtor's point of view:
/// `Greater` means `a` is more lenient to the debtor than `b`.
pub fn debtor_preference(key: DimensionKey, a: DimensionValue, b: DimensionValue) -> std::cmp::Ordering {
    let ord = a.magnitude().cmp(&b.magnitude());
    if key.debtor_favours_higher() {
        ord
    } else {
        ord.reverse()
    }
}

/// The next grid value one step more lenient to the debtor, if any.
pub fn concede_step(key: DimensionKey, value: DimensionValue) -> Option<DimensionValue> {
    let grid = grid_of(key);
    let pos = grid.iter().position(|v| *v == value)?;
    if key.debtor_favours_higher() {
        grid.get(pos + 1).copied()
    } else {
        pos.checked_sub(1).map(|p| grid[p])
    }
}

/// The next grid value one step less lenient to the debtor, if any.
pub fn harden_step(key: DimensionKey, value: DimensionValue) -> Option<DimensionValue> {
    let grid = grid_of(key);
    let pos = grid.iter().position(|v| *v == value)?;
    if key.debtor_favours_higher() {
        pos.checked_sub(1).map(|p| grid[p])
    } else {
        grid.get(pos + 1).copied()
    }
}

/// Nearest grid value to `value` (by magnitude, ties toward the lower value).
pub fn snap_to_grid(key: DimensionKey, value: DimensionValue) -> DimensionValue {
    let target = value.magnitude() as i64;
    *grid_of(key)
        .iter()
        .min_by_key(|v| (v.magnitude() as i64 - target).abs())
        .expect("grids are non-empty")
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Ask,
    Reject,
    Accept,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Ask => "ask",
            ActionKind::Reject => "reject",
            ActionKind::Accept => "accept",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionViolation {
    #[error("off-grid value {value} for {dim}")]
    OffGrid { dim: DimensionKey, value: DimensionValue },
    #[error("missing value for {kind} on {dim}")]
    MissingValue { kind: ActionKind, dim: DimensionKey },
    #[error("value {value} has the wrong type for {dim}")]
    TypeMismatch { dim: DimensionKey, value: DimensionValue },
    #[error("more than one action targets {0} in the same turn")]
    DuplicateDimension(DimensionKey),
}

/// One operation on one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub kind: ActionKind,
    pub dim: DimensionKey,
    pub value: Option<DimensionValue>,
}

impl Action {
    pub fn ask(dim: DimensionKey, value: DimensionValue) -> Self {
        Action { kind: ActionKind::Ask, dim, value: Some(value) }
    }

    pub fn accept(dim: DimensionKey, value: DimensionValue) -> Self {
        Action { kind: ActionKind::Accept, dim, value: Some(value) }
    }

    pub fn reject(dim: DimensionKey, value: Option<DimensionValue>) -> Self {
        Action { kind: ActionKind::Reject, dim, value }
    }

    /// Checks kind/value pairing, value type, and (when `strict_grid`) grid membership.
    pub fn validate(&self, strict_grid: bool) -> Result<(), ActionViolation> {
        match (self.kind, self.value) {
            (ActionKind::Ask | ActionKind::Accept, None) => {
                Err(ActionViolation::MissingValue { kind: self.kind, dim: self.dim })
            }
            (_, Some(value)) if !value.matches(self.dim) => {
                Err(ActionViolation::TypeMismatch { dim: self.dim, value })
            }
            (_, Some(value)) if strict_grid && !is_on_grid(self.dim, value) => {
                Err(ActionViolation::OffGrid { dim: self.dim, value })
            }
            _ => Ok(()),
        }
    }
}

/// Strict validation of a single action against the dimension grids.
pub fn validate_action(action: &Action) -> Result<(), ActionViolation> {
    action.validate(true)
}

/// Validates every action of a turn and rejects repeated dimensions.
pub fn validate_actions(actions: &[Action], strict_grid: bool) -> Result<(), ActionViolation> {
    let mut seen = [false; 4];
    for action in actions {
        action.validate(strict_grid)?;
        let slot = &mut seen[action.dim.index()];
        if *slot {
            return Err(ActionViolation::DuplicateDimension(action.dim));
        }
        *slot = true;
    }
    Ok(())
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "{}({}, {})", self.kind, self.dim, v),
            None => write!(f, "{}({})", self.kind, self.dim),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ActionWire {
    kind: ActionKind,
    dim: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<Value>,
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ActionWire {
            kind: self.kind,
            dim: self.dim.as_str().to_string(),
            value: self.value.map(DimensionValue::to_json),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = ActionWire::deserialize(deserializer)?;
        let dim: DimensionKey = wire.dim.parse().map_err(D::Error::custom)?;
        let value = match wire.value {
            None | Some(Value::Null) => None,
            Some(v) => Some(DimensionValue::from_json(dim, &v).map_err(D::Error::custom)?),
        };
        Ok(Action { kind: wire.kind, dim, value })
    }
}

// ---------------------------------------------------------------------------
// Debt records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverdueReason {
    pub category: String,
    pub detail: String,
}

/// The debtor's private finances. Surplus is always income minus expense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinancialProfile {
    total_assets: Money,
    daily_income: Money,
    daily_expense: Money,
    daily_surplus: Money,
}

impl FinancialProfile {
    pub fn new(total_assets: Money, daily_income: Money, daily_expense: Money) -> Result<Self, DomainError> {
        Self::from_parts(total_assets, daily_income, daily_expense, daily_income - daily_expense)
    }

    pub fn from_parts(
        total_assets: Money,
        daily_income: Money,
        daily_expense: Money,
        daily_surplus: Money,
    ) -> Result<Self, DomainError> {
        if total_assets < Money::ZERO {
            return Err(DomainError::NegativeAssets(total_assets));
        }
        if daily_surplus != daily_income - daily_expense {
            return Err(DomainError::SurplusMismatch {
                income: daily_income,
                expense: daily_expense,
                surplus: daily_surplus,
            });
        }
        Ok(FinancialProfile { total_assets, daily_income, daily_expense, daily_surplus })
    }

    pub fn total_assets(&self) -> Money {
        self.total_assets
    }

    pub fn daily_income(&self) -> Money {
        self.daily_income
    }

    pub fn daily_expense(&self) -> Money {
        self.daily_expense
    }

    pub fn daily_surplus(&self) -> Money {
        self.daily_surplus
    }
}

/// Debt information known to both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicInfo {
    pub record_id: String,
    pub name: String,
    pub sex: Sex,
    pub amount: Money,
    pub overdue_days: u32,
}

/// Information only the debtor holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateInfo {
    pub profile: FinancialProfile,
    pub overdue_reason: OverdueReason,
}

/// One debtor case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebtRecord {
    basic: BasicInfo,
    private: PrivateInfo,
}

impl DebtRecord {
    pub fn new(basic: BasicInfo, overdue_reason: OverdueReason, profile: FinancialProfile) -> Result<Self, DomainError> {
        if basic.amount <= Money::ZERO {
            return Err(DomainError::NonPositiveAmount(basic.amount));
        }
        Ok(DebtRecord { basic, private: PrivateInfo { profile, overdue_reason } })
    }

    pub fn record_id(&self) -> &str {
        &self.basic.record_id
    }

    pub fn amount(&self) -> Money {
        self.basic.amount
    }

    pub fn basic(&self) -> &BasicInfo {
        &self.basic
    }

    pub fn private(&self) -> &PrivateInfo {
        &self.private
    }

    pub fn profile(&self) -> &FinancialProfile {
        &self.private.profile
    }
}

/// Flat JSONL line layout for [`DebtRecord`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordLine {
    record_id: String,
    name: String,
    sex: Sex,
    amount: i64,
    overdue_days: u32,
    overdue_reason: OverdueReason,
    assets: i64,
    daily_income: i64,
    daily_expense: i64,
    daily_surplus: i64,
}

impl Serialize for DebtRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let p = &self.private.profile;
        RecordLine {
            record_id: self.basic.record_id.clone(),
            name: self.basic.name.clone(),
            sex: self.basic.sex,
            amount: self.basic.amount.minor(),
            overdue_days: self.basic.overdue_days,
            overdue_reason: self.private.overdue_reason.clone(),
            assets: p.total_assets.minor(),
            daily_income: p.daily_income.minor(),
            daily_expense: p.daily_expense.minor(),
            daily_surplus: p.daily_surplus.minor(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DebtRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let line = RecordLine::deserialize(deserializer)?;
        let profile = FinancialProfile::from_parts(
            Money::from_minor(line.assets),
            Money::from_minor(line.daily_income),
            Money::from_minor(line.daily_expense),
            Money::from_minor(line.daily_surplus),
        )
        .map_err(D::Error::custom)?;
        DebtRecord::new(
            BasicInfo {
                record_id: line.record_id,
                name: line.name,
                sex: line.sex,
                amount: Money::from_minor(line.amount),
                overdue_days: line.overdue_days,
            },
            line.overdue_reason,
            profile,
        )
        .map_err(D::Error::custom)
    }
}

/// Reads a JSONL record file; blank lines are skipped.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<DebtRecord>, DomainError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DomainError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DomainError::RecordLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut writer: W, records: &[DebtRecord]) -> Result<(), DomainError> {
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| DomainError::Io(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| DomainError::Io(e.to_string()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Outcomes, turns, transcripts
// ---------------------------------------------------------------------------

/// The agreed terms, complete over all four dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NegotiationOutcome(BTreeMap<DimensionKey, DimensionValue>);

impl NegotiationOutcome {
    pub fn new(terms: BTreeMap<DimensionKey, DimensionValue>) -> Result<Self, DomainError> {
        let missing: Vec<_> = DimensionKey::ALL.into_iter().filter(|k| !terms.contains_key(k)).collect();
        if !missing.is_empty() {
            return Err(DomainError::IncompleteOutcome(missing));
        }
        for (k, v) in &terms {
            if !v.matches(*k) {
                return Err(DomainError::ValueType { dim: *k, value: v.to_string() });
            }
        }
        Ok(NegotiationOutcome(terms))
    }

    /// Builds an outcome from grid-style raw values: ratios in percent,
    /// days and months as counts.
    pub fn from_terms(disc_pct: u32, pmt_pct: u32, pmt_days: u32, inst_prds: u32) -> Self {
        NegotiationOutcome(BTreeMap::from([
            (DimensionKey::DiscRatio, pct(disc_pct)),
            (DimensionKey::PmtRatio, pct(pmt_pct)),
            (DimensionKey::PmtDays, DimensionValue::Days(pmt_days)),
            (DimensionKey::InstPrds, DimensionValue::Months(inst_prds)),
        ]))
    }

    pub fn get(&self, key: DimensionKey) -> DimensionValue {
        self.0[&key]
    }

    pub fn disc_ratio(&self) -> Ratio {
        self.get(DimensionKey::DiscRatio).as_ratio().expect("validated on construction")
    }

    pub fn pmt_ratio(&self) -> Ratio {
        self.get(DimensionKey::PmtRatio).as_ratio().expect("validated on construction")
    }

    pub fn pmt_days(&self) -> u32 {
        self.get(DimensionKey::PmtDays).as_count().expect("validated on construction")
    }

    pub fn inst_prds(&self) -> u32 {
        self.get(DimensionKey::InstPrds).as_count().expect("validated on construction")
    }

    pub fn terms(&self) -> &BTreeMap<DimensionKey, DimensionValue> {
        &self.0
    }

    pub fn is_on_grid(&self) -> bool {
        self.0.iter().all(|(k, v)| is_on_grid(*k, *v))
    }
}

impl Serialize for NegotiationOutcome {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k.as_str(), &v.to_json())?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for NegotiationOutcome {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, Value>::deserialize(deserializer)?;
        let mut terms = BTreeMap::new();
        for (k, v) in raw {
            let key: DimensionKey = k.parse().map_err(D::Error::custom)?;
            terms.insert(key, DimensionValue::from_json(key, &v).map_err(D::Error::custom)?);
        }
        NegotiationOutcome::new(terms).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Creditor,
    Debtor,
}

impl Side {
    pub fn opponent(self) -> Side {
        match self {
            Side::Creditor => Side::Debtor,
            Side::Debtor => Side::Creditor,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Creditor => "creditor",
            Side::Debtor => "debtor",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One utterance: private thought, public dialogue, and structured actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub side: Side,
    /// 1-based round number.
    pub round: u32,
    pub thought: String,
    pub dialogue: String,
    pub actions: Vec<Action>,
}

impl TurnRecord {
    pub fn validate(&self, strict_grid: bool) -> Result<(), ActionViolation> {
        validate_actions(&self.actions, strict_grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Agreement,
    MaxTurns,
}

/// A finished session. `outcome` is present exactly when the session ended in agreement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub record_id: String,
    pub turns: Vec<TurnRecord>,
    pub outcome: Option<NegotiationOutcome>,
    pub terminated_reason: TerminationReason,
}

impl Transcript {
    pub fn rounds(&self) -> u32 {
        self.turns.iter().map(|t| t.round).max().unwrap_or(0)
    }

    pub fn is_consistent(&self) -> bool {
        self.outcome.is_some() == (self.terminated_reason == TerminationReason::Agreement)
    }
}

#[derive(Serialize, Deserialize)]
struct TranscriptFile {
    record_id: String,
    rounds: u32,
    turns: Vec<TurnRecord>,
    outcome: Option<NegotiationOutcome>,
    terminated_reason: TerminationReason,
}

impl Serialize for Transcript {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TranscriptFile {
            record_id: self.record_id.clone(),
            rounds: self.rounds(),
            turns: self.turns.clone(),
            outcome: self.outcome.clone(),
            terminated_reason: self.terminated_reason,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Transcript {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = TranscriptFile::deserialize(deserializer)?;
        let transcript = Transcript {
            record_id: file.record_id,
            turns: file.turns,
            outcome: file.outcome,
            terminated_reason: file.terminated_reason,
        };
        if !transcript.is_consistent() {
            return Err(D::Error::custom("outcome must be present exactly when terminated_reason is agreement"));
        }
        Ok(transcript)
    }
}
