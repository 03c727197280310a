//! Repayment schedules and the day-by-day asset/debt projection that every
//! outcome metric is computed from.
//!
//! Day 0 is the negotiation day. Each later day the debtor earns their daily
//! surplus and pays whatever installment falls due; payments are never skipped,
//! so an unaffordable plan shows up as negative assets.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FinancialProfile, Money, NegotiationOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("debt amount must be positive, got {0}")]
    NonPositiveAmount(Money),
    #[error("schedule days must be >= 1 and strictly increasing (offending day {0})")]
    BadScheduleDay(u32),
    #[error("invalid projection config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub horizon_days: u32,
    pub month_days: u32,
    /// Assets must stay strictly above this on every day for a plan to count as successful.
    pub success_floor: Money,
    /// Flat monthly fee rate on installment principal; 0 disables interest.
    pub monthly_interest_rate: f64,
    /// Lower bounds of tiers 2..=5.
    pub tier_bounds: [Money; 4],
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            horizon_days: 720,
            month_days: 30,
            success_floor: Money::from_major(500),
            monthly_interest_rate: 0.0,
            tier_bounds: [
                Money::from_major(2_000),
                Money::from_major(5_000),
                Money::from_major(10_000),
                Money::from_major(20_000),
            ],
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if self.horizon_days < 1 {
            return Err(ProjectionError::Config("horizon_days must be >= 1".into()));
        }
        if self.month_days < 1 {
            return Err(ProjectionError::Config("month_days must be >= 1".into()));
        }
        if !self.tier_bounds.windows(2).all(|w| w[0] < w[1]) {
            return Err(ProjectionError::Config("tier_bounds must be strictly ascending".into()));
        }
        if !(self.monthly_interest_rate >= 0.0 && self.monthly_interest_rate.is_finite()) {
            return Err(ProjectionError::Config("monthly_interest_rate must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payment {
    pub day: u32,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepaymentSchedule {
    payments: Vec<Payment>,
    recoverable_total: Money,
}

impl RepaymentSchedule {
    /// The schedule of a session that reached no agreement: nothing is paid.
    pub fn empty() -> Self {
        RepaymentSchedule { payments: Vec::new(), recoverable_total: Money::ZERO }
    }

    pub fn from_payments(payments: Vec<Payment>, recoverable_total: Money) -> Result<Self, ProjectionError> {
        let mut prev = 0;
        for p in &payments {
            if p.day < 1 || p.day <= prev {
                return Err(ProjectionError::BadScheduleDay(p.day));
            }
            prev = p.day;
        }
        Ok(RepaymentSchedule { payments, recoverable_total })
    }

    pub fn payments(&self) -> &[Payment] {
        &self.payments
    }

    /// Post-discount principal.
    pub fn recoverable_total(&self) -> Money {
        self.recoverable_total
    }

    /// Sum of all scheduled payments (principal plus any interest).
    pub fn total_due(&self) -> Money {
        self.payments.iter().map(|p| p.amount).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }
}

/// Turns agreed terms into dated payments.
///
/// The up-front payment is `pmt_ratio` of the post-discount balance, due on
/// day `pmt_days`. The rest is split into `inst_prds` equal monthly shares due
/// `month_days` apart after that; the integer-division residue goes to the last
/// installment. With a positive monthly rate, installment `k` carries a flat
/// fee of `share * rate * k`.
pub fn build_schedule(
    outcome: &NegotiationOutcome,
    amount: Money,
    cfg: &ProjectionConfig,
) -> Result<RepaymentSchedule, ProjectionError> {
    if amount <= Money::ZERO {
        return Err(ProjectionError::NonPositiveAmount(amount));
    }
    let recoverable = outcome.disc_ratio().complement().apply(amount);
    let first_day = outcome.pmt_days().max(1);
    let periods = outcome.inst_prds();

    let immediate = if periods == 0 { recoverable } else { outcome.pmt_ratio().apply(recoverable) };
    let mut payments = vec![Payment { day: first_day, amount: immediate }];

    if periods > 0 {
        let remainder = (recoverable - immediate).minor();
        let n = periods as i64;
        let share = remainder / n;
        let residue = remainder % n;
        for k in 1..=periods {
            let principal = if k == periods { share + residue } else { share };
            let fee = if cfg.monthly_interest_rate > 0.0 {
                (principal as f64 * cfg.monthly_interest_rate * k as f64).round() as i64
            } else {
                0
            };
            payments.push(Payment {
                day: first_day + cfg.month_days * k,
                amount: Money::from_minor(principal + fee),
            });
        }
    }
    RepaymentSchedule::from_payments(payments, recoverable)
}

/// Day-indexed series over `0..=horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub assets: Vec<Money>,
    /// Scheduled payments still to come within the horizon.
    pub debt_remaining: Vec<Money>,
    pub tier: Vec<u8>,
    pub cumulative_paid: Vec<Money>,
    /// Payments scheduled after the horizon; never made inside the projection.
    pub unmet: Money,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.assets.len().saturating_sub(1)
    }

    pub fn min_assets(&self) -> Money {
        self.assets.iter().copied().min().unwrap_or(Money::ZERO)
    }

    /// Writes `day,assets,debt_remaining,tier,cumulative_paid` rows; money in minor units.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ProjectionError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| ProjectionError::Csv(e.to_string());
        w.write_record(["day", "assets", "debt_remaining", "tier", "cumulative_paid"]).map_err(err)?;
        for day in 0..self.assets.len() {
            w.write_record([
                day.to_string(),
                self.assets[day].minor().to_string(),
                self.debt_remaining[day].minor().to_string(),
                self.tier[day].to_string(),
                self.cumulative_paid[day].minor().to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| ProjectionError::Csv(e.to_string()))
    }
}

/// Difficulty tier 1 (hardest) to 5; each bound belongs to the tier above it.
pub fn tier_of(assets: Money, cfg: &ProjectionConfig) -> u8 {
    1 + cfg.tier_bounds.iter().filter(|b| assets >= **b).count() as u8
}

/// Projects assets and debt forward over the configured horizon.
pub fn simulate(profile: &FinancialProfile, schedule: &RepaymentSchedule, cfg: &ProjectionConfig) -> Trajectory {
    let horizon = cfg.horizon_days as usize;
    let mut due = vec![Money::ZERO; horizon + 1];
    let mut unmet = Money::ZERO;
    for p in schedule.payments() {
        match due.get_mut(p.day as usize) {
            Some(slot) if p.day >= 1 => *slot += p.amount,
            _ => unmet += p.amount,
        }
    }
    let in_horizon: Money = due.iter().sum();

    let mut assets = Vec::with_capacity(horizon + 1);
    let mut debt_remaining = Vec::with_capacity(horizon + 1);
    let mut cumulative_paid = Vec::with_capacity(horizon + 1);
    assets.push(profile.total_assets());
    debt_remaining.push(in_horizon);
    cumulative_paid.push(Money::ZERO);
    for t in 1..=horizon {
        assets.push(assets[t - 1] + profile.daily_surplus() - due[t]);
        debt_remaining.push(debt_remaining[t - 1] - due[t]);
        cumulative_paid.push(cumulative_paid[t - 1] + due[t]);
    }
    let tier = assets.iter().map(|a| tier_of(*a, cfg)).collect();
    Trajectory { assets, debt_remaining, tier, cumulative_paid, unmet }
}

/// Caps applied to recovery dates that are never reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayCaps {
    pub qrd: u32,
    pub hrd: u32,
    pub cd: u32,
}

impl Default for DayCaps {
    fn default() -> Self {
        DayCaps { qrd: 180, hrd: 360, cd: 720 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryDays {
    pub qrd: u32,
    pub hrd: u32,
    pub cd: u32,
}

/// First days on which 25%, 50% and 100% of the scheduled total has been paid.
///
/// Unreached milestones take their cap. A later milestone is never reported
/// before an earlier one.
pub fn recovery_days(traj: &Trajectory, schedule: &RepaymentSchedule, caps: DayCaps) -> RecoveryDays {
    let total = schedule.total_due().minor() as i128;
    if total <= 0 {
        return RecoveryDays { qrd: caps.qrd, hrd: caps.hrd, cd: caps.cd };
    }
    let first_reaching = |num: i128, den: i128, cap: u32| {
        traj.cumulative_paid
            .iter()
            .position(|p| p.minor() as i128 * den >= total * num)
            .map_or(cap, |d| d as u32)
    };
    let qrd = first_reaching(1, 4, caps.qrd);
    let hrd = first_reaching(1, 2, caps.hrd).max(qrd);
    let cd = first_reaching(1, 1, caps.cd).max(hrd);
    RecoveryDays { qrd, hrd, cd }
}
