//! Core model for simulated debt-collection negotiations: debtor records, the
//! negotiation protocol, repayment projection and outcome metrics.

pub mod datagen;
pub mod domain;
pub mod engine;
pub mod metrics;
pub mod projection;

pub use domain::{
    Action, ActionKind, ActionViolation, BasicInfo, DebtRecord, DimensionKey, DimensionValue, DomainError,
    FinancialProfile, Money, NegotiationOutcome, OverdueReason, PrivateInfo, Ratio, Sex, Side, TerminationReason,
    Transcript, TurnRecord,
};
pub use engine::{Agent, AgentError, AgentNote, AgentTurn, EngineConfig, Session, TurnContext, VisibleTurn};
pub use metrics::{MetricWeights, MetricsReport, SampleMetrics};
pub use projection::{ProjectionConfig, RepaymentSchedule, Trajectory};
