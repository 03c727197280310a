use dcn_core::datagen::{generate, GenSpec};
use dcn_core::domain::{grid_of, DebtRecord, DimensionKey, FinancialProfile, Money, NegotiationOutcome};
use dcn_core::projection::{build_schedule, recovery_days, simulate, DayCaps, ProjectionConfig};
use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Integer-only schedule written without reference to the library code.
fn oracle_schedule(amount: i64, disc_bps: i64, pmt_bps: i64, pmt_days: i64, inst: i64, rate_bps: i64) -> Vec<(i64, i64)> {
    let recoverable = (amount * (10_000 - disc_bps) + 5_000) / 10_000;
    let immediate = (recoverable * pmt_bps + 5_000) / 10_000;
    let rest = recoverable - immediate;
    let mut out = vec![(pmt_days, immediate)];
    for k in 1..=inst {
        let share = if k == inst { rest - (rest / inst) * (inst - 1) } else { rest / inst };
        let fee = if rate_bps > 0 { (rest / inst * rate_bps * k + 5_000) / 10_000 } else { 0 };
        out.push((pmt_days + 30 * k, share + fee));
    }
    out
}

/// Day loop that rescans the whole schedule every day.
fn oracle_assets(start: i64, surplus: i64, schedule: &[(i64, i64)], horizon: i64) -> Vec<i64> {
    let mut assets = vec![start];
    for t in 1..=horizon {
        let due: i64 = schedule.iter().filter(|(d, _)| *d == t).map(|(_, a)| a).sum();
        assets.push(assets[(t - 1) as usize] + surplus - due);
    }
    assets
}

fn random_outcome(rng: &mut ChaCha8Rng) -> NegotiationOutcome {
    let terms = DimensionKey::ALL
        .iter()
        .map(|k| (*k, *grid_of(*k).choose(rng).unwrap()))
        .collect();
    NegotiationOutcome::new(terms).unwrap()
}

#[test]
fn simulate_matches_naive_day_loop() {
    let records = generate(&GenSpec { n_total: 100, seed: 9, ..GenSpec::default() }).unwrap();
    let records: Vec<DebtRecord> = records.train.into_iter().chain(records.test).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = ProjectionConfig::default();
    for record in &records {
        let outcome = random_outcome(&mut rng);
        let schedule = build_schedule(&outcome, record.amount(), &cfg).unwrap();
        let expected = oracle_schedule(
            record.amount().minor(),
            outcome.disc_ratio().bps() as i64,
            outcome.pmt_ratio().bps() as i64,
            outcome.pmt_days() as i64,
            outcome.inst_prds() as i64,
            0,
        );
        let got: Vec<(i64, i64)> = schedule.payments().iter().map(|p| (p.day as i64, p.amount.minor())).collect();
        assert_eq!(got, expected, "{}", record.record_id());

        let p = record.profile();
        let traj = simulate(p, &schedule, &cfg);
        let oracle = oracle_assets(p.total_assets().minor(), p.daily_surplus().minor(), &expected, 720);
        let assets: Vec<i64> = traj.assets.iter().map(|m| m.minor()).collect();
        assert_eq!(assets, oracle);

        let in_horizon: i64 = expected.iter().filter(|(d, _)| *d <= 720).map(|(_, a)| a).sum();
        for t in 0..=720usize {
            assert_eq!(
                traj.assets[t],
                p.total_assets() + Money::from_minor(p.daily_surplus().minor() * t as i64) - traj.cumulative_paid[t]
            );
            assert_eq!((traj.cumulative_paid[t] + traj.debt_remaining[t]).minor(), in_horizon);
        }
        assert_eq!(traj.cumulative_paid[720] + traj.debt_remaining[720] + traj.unmet, schedule.recoverable_total());
    }
}

#[test]
fn flat_fee_matches_oracle() {
    let cfg = ProjectionConfig { monthly_interest_rate: 0.01, ..ProjectionConfig::default() };
    let outcome = NegotiationOutcome::from_terms(10, 20, 5, 6);
    let schedule = build_schedule(&outcome, Money::from_minor(987_654), &cfg).unwrap();
    let got: Vec<(i64, i64)> = schedule.payments().iter().map(|p| (p.day as i64, p.amount.minor())).collect();
    assert_eq!(got, oracle_schedule(987_654, 1_000, 2_000, 5, 6, 100));
}

/// Twelve thousand in assets, a small daily surplus, and a large balance: the
/// short plan breaks the debtor, the longer ones keep them afloat.
#[test]
fn longer_plans_protect_a_fragile_debtor() {
    let cfg = ProjectionConfig::default();
    let profile = FinancialProfile::new(Money::from_major(12_000), Money::from_major(100), Money::from_major(75)).unwrap();
    let amount = Money::from_major(20_000);
    let run = |inst| {
        let outcome = NegotiationOutcome::from_terms(0, 10, 7, inst);
        let schedule = build_schedule(&outcome, amount, &cfg).unwrap();
        let traj = simulate(&profile, &schedule, &cfg);
        let rd = recovery_days(&traj, &schedule, DayCaps::default());
        (traj.min_assets(), rd.cd)
    };
    let (min6, _) = run(6);
    let (min12, cd12) = run(12);
    let (min18, cd18) = run(18);
    assert!(min6 < Money::ZERO, "{min6}");
    assert!(min12 > cfg.success_floor, "{min12}");
    assert!(min18 > cfg.success_floor, "{min18}");
    assert!(cd12 < cd18);
}

fn outcome_strategy() -> impl Strategy<Value = NegotiationOutcome> {
    (0..7usize, 0..10usize, 0..14usize, 0..6usize).prop_map(|(a, b, c, d)| {
        let pick = |k: DimensionKey, i: usize| (k, grid_of(k)[i]);
        NegotiationOutcome::new(
            [
                pick(DimensionKey::DiscRatio, a),
                pick(DimensionKey::PmtRatio, b),
                pick(DimensionKey::PmtDays, c),
                pick(DimensionKey::InstPrds, d),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn schedule_sums_to_recoverable(outcome in outcome_strategy(), amount in 1i64..50_000_000) {
        let cfg = ProjectionConfig::default();
        let schedule = build_schedule(&outcome, Money::from_minor(amount), &cfg).unwrap();
        prop_assert_eq!(schedule.total_due(), schedule.recoverable_total());
        let days: Vec<u32> = schedule.payments().iter().map(|p| p.day).collect();
        prop_assert!(days.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(days.len() as u32, outcome.inst_prds() + 1);
    }

    #[test]
    fn recovery_days_are_ordered(
        outcome in outcome_strategy(),
        amount in 100_000i64..5_000_000,
        assets in 0i64..5_000_000,
        surplus in -5_000i64..20_000,
    ) {
        let cfg = ProjectionConfig::default();
        let expense = 20_000 - surplus;
        let profile = FinancialProfile::new(Money::from_minor(assets), Money::from_minor(20_000), Money::from_minor(expense)).unwrap();
        let schedule = build_schedule(&outcome, Money::from_minor(amount), &cfg).unwrap();
        let traj = simulate(&profile, &schedule, &cfg);
        let rd = recovery_days(&traj, &schedule, DayCaps::default());
        prop_assert!(rd.qrd <= rd.hrd && rd.hrd <= rd.cd);
        prop_assert!(rd.cd <= 720);
        for (a, t) in traj.assets.iter().zip(&traj.tier) {
            prop_assert!((1..=5).contains(t));
            if *a < Money::from_major(2_000) { prop_assert_eq!(*t, 1); }
            if *a >= Money::from_major(20_000) { prop_assert_eq!(*t, 5); }
        }
    }
}
