use dcn_core::datagen::{generate, GenSpec};
use dcn_core::domain::{grid_of, Action, ActionKind, DimensionKey, DimensionValue, Ratio, Side};
use dcn_core::engine::{
    format_actions, parse_actions, replay_commits, run_session, Agent, AgentError, AgentTurn, EngineConfig,
    FailureKind, TurnContext,
};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Picks random grid values and random action kinds.
struct RandomAgent {
    side: Side,
    rng: ChaCha8Rng,
    p_accept: f64,
}

impl Agent for RandomAgent {
    fn side(&self) -> Side {
        self.side
    }

    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        if self.side == Side::Debtor {
            assert!(ctx.private.is_some());
        } else {
            assert!(ctx.private.is_none());
            assert!(ctx.history.iter().filter(|t| t.side == Side::Debtor).all(|t| t.thought.is_none()));
        }
        let mut actions = Vec::new();
        for key in DimensionKey::ALL {
            if ctx.committed.contains_key(&key) || !self.rng.random_bool(0.6) {
                continue;
            }
            let value = *grid_of(key).choose(&mut self.rng).unwrap();
            let action = match self.side {
                Side::Creditor => Action::ask(key, value),
                Side::Debtor if self.rng.random_bool(self.p_accept) => Action::accept(key, value),
                Side::Debtor => Action::reject(key, Some(value)),
            };
            actions.push(action);
        }
        Ok(AgentTurn { thought: format!("{} thinking", self.side), dialogue: "...".into(), actions, notes: vec![] })
    }
}

#[test]
fn random_sessions_terminate_with_traceable_outcomes() {
    let records = generate(&GenSpec { n_total: 40, ..GenSpec::default() }).unwrap().train;
    let cfg = EngineConfig::default();
    for seed in 0..300u64 {
        let record = &records[seed as usize % records.len()];
        let mut creditor = RandomAgent { side: Side::Creditor, rng: ChaCha8Rng::seed_from_u64(seed), p_accept: 0.0 };
        let mut debtor =
            RandomAgent { side: Side::Debtor, rng: ChaCha8Rng::seed_from_u64(seed + 10_000), p_accept: (seed % 5) as f64 / 4.0 };
        let out = run_session(&mut creditor, &mut debtor, record, &cfg, &format!("s{seed}")).unwrap();
        let t = &out.transcript;
        assert!(t.rounds() <= cfg.max_rounds);
        assert!(t.is_consistent());
        if let Some(outcome) = &t.outcome {
            assert!(outcome.is_on_grid());
            for key in DimensionKey::ALL {
                let first_accept = t
                    .turns
                    .iter()
                    .filter(|turn| turn.side == Side::Debtor)
                    .flat_map(|turn| &turn.actions)
                    .find(|a| a.kind == ActionKind::Accept && a.dim == key)
                    .and_then(|a| a.value);
                assert_eq!(first_accept, Some(outcome.get(key)));
            }
        } else {
            assert_eq!(t.rounds(), cfg.max_rounds);
        }
        let commits: usize = replay_commits(t, &cfg).unwrap().iter().map(Vec::len).sum();
        assert_eq!(commits, out.committed.len());
    }
}

/// Always asks for an off-grid discount, then complies after feedback.
struct StubbornOnce {
    attempts: u32,
    comply: bool,
}

impl Agent for StubbornOnce {
    fn side(&self) -> Side {
        Side::Creditor
    }

    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        self.attempts += 1;
        let pct = if ctx.feedback.is_some() && self.comply { 10 } else { 13 };
        Ok(AgentTurn {
            actions: vec![Action::ask(DimensionKey::DiscRatio, DimensionValue::Ratio(Ratio::from_percent(pct)))],
            ..Default::default()
        })
    }
}

struct Silent;

impl Agent for Silent {
    fn side(&self) -> Side {
        Side::Debtor
    }

    fn generate(&mut self, _: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        Ok(AgentTurn::default())
    }
}

#[test]
fn off_grid_turn_gets_one_regeneration() {
    let record = &generate(&GenSpec { n_total: 5, ..GenSpec::default() }).unwrap().train[0];
    let cfg = EngineConfig { max_rounds: 2, ..EngineConfig::default() };

    let mut creditor = StubbornOnce { attempts: 0, comply: true };
    let out = run_session(&mut creditor, &mut Silent, record, &cfg, "s").unwrap();
    assert!(out.transcript.outcome.is_none());
    assert_eq!(creditor.attempts, 4);
    assert_eq!(out.sidecar.iter().filter(|e| e.stage == "rejected_turn").count(), 2);

    let mut creditor = StubbornOnce { attempts: 0, comply: false };
    let err = run_session(&mut creditor, &mut Silent, record, &cfg, "s").unwrap_err();
    assert_eq!(creditor.attempts, 2);
    assert!(matches!(err.kind, FailureKind::Turn(_)));
    assert!(err.partial.is_empty());

    let lax = EngineConfig { strict_grid: false, ..cfg };
    let mut creditor = StubbornOnce { attempts: 0, comply: false };
    assert!(run_session(&mut creditor, &mut Silent, record, &lax, "s").is_ok());
}

fn action_strategy() -> impl Strategy<Value = Action> {
    (0..3usize, 0..4usize, any::<prop::sample::Index>(), any::<bool>()).prop_map(|(k, d, idx, with_value)| {
        let dim = DimensionKey::ALL[d];
        let value = *idx.get(grid_of(dim));
        match k {
            0 => Action::ask(dim, value),
            1 => Action::accept(dim, value),
            _ => Action::reject(dim, with_value.then_some(value)),
        }
    })
}

proptest! {
    #[test]
    fn action_syntax_round_trips(actions in prop::collection::vec(action_strategy(), 0..6)) {
        prop_assert_eq!(parse_actions(&format_actions(&actions)).unwrap(), actions);
    }

    #[test]
    fn parse_never_panics(raw in ".{0,80}") {
        let _ = parse_actions(&raw);
    }
}
