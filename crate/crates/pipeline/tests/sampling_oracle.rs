use dcn_core::domain::{TerminationReason, Transcript};
use dcn_core::metrics::{MetricWeights, SampleMetrics};
use dcn_pipeline::{filter1, filter2, keep_count, select_best_per_record, Candidate, Filter1};
use proptest::prelude::*;

fn cand(record: &str, style: &str, cci: f64) -> Candidate {
    let metrics = SampleMetrics {
        record_id: record.into(),
        agreed: true,
        success: true,
        rr: 0.9,
        qrd: 10,
        hrd: 100,
        cd: 300,
        l1d: 0,
        l2d: 0,
        atv: 0.0,
        dc: 1.0,
        ds: None,
    };
    let transcript = Transcript {
        record_id: record.into(),
        turns: vec![],
        outcome: Some(dcn_core::domain::NegotiationOutcome::from_terms(0, 30, 3, 6)),
        terminated_reason: TerminationReason::Agreement,
    };
    let mut c = Candidate::from_metrics(style, transcript, metrics, &MetricWeights::default());
    c.cci = cci;
    c
}

fn ccis(cs: &[Candidate]) -> Vec<f64> {
    cs.iter().map(|c| c.cci).collect()
}

#[test]
fn five_element_example() {
    let pool: Vec<_> = [0.6, 0.9, 0.5, 0.7, 0.8].iter().enumerate().map(|(i, v)| cand(&format!("R{i}"), "standard", *v)).collect();
    assert_eq!(ccis(&filter2(pool)), [0.9, 0.8, 0.7]);
    assert_eq!(filter2(vec![cand("R1", "a", 0.1)]).len(), 1);
    assert!(filter2(vec![]).is_empty());
}

#[test]
fn filter1_examples() {
    let mut incomplete = cand("R1", "s", 0.9);
    incomplete.complete = false;
    let mut low_rr = cand("R2", "s", 0.9);
    low_rr.metrics.rr = 0.65;
    let mut failed = cand("R3", "s", 0.9);
    failed.metrics.success = false;
    let ok = cand("R4", "s", 0.9);
    let kept = filter1(vec![incomplete, low_rr, failed, ok.clone()], &Filter1::default());
    assert_eq!(kept, vec![ok.clone()]);
    let all = vec![ok.clone(), cand("R5", "s", 0.2)];
    assert_eq!(filter1(all.clone(), &Filter1::default()), all);
    let mut tier1 = cand("R6", "s", 0.9);
    tier1.metrics.l1d = 40;
    let strict = Filter1 { max_l1d: Some(30), ..Filter1::default() };
    assert!(filter1(vec![tier1], &strict).is_empty());
}

#[test]
fn best_per_record() {
    let order = vec!["standard".to_string(), "strict".into(), "gentle".into()];
    let picked = select_best_per_record(vec![cand("R1", "standard", 0.7), cand("R1", "gentle", 0.9), cand("R2", "strict", 0.5)], &order);
    assert_eq!(picked.len(), 2);
    assert_eq!((picked[0].style.as_str(), picked[0].cci), ("gentle", 0.9));
    let tie = select_best_per_record(vec![cand("R1", "gentle", 0.8), cand("R1", "strict", 0.8)], &order);
    assert_eq!(tie[0].style, "strict");
    assert!(select_best_per_record(vec![], &order).is_empty());
}

proptest! {
    #[test]
    fn filter2_keeps_the_top_sixty_percent(values in prop::collection::vec(0.0f64..1.0, 2..200)) {
        let n = values.len();
        let pool: Vec<_> = values.iter().enumerate().map(|(i, v)| cand(&format!("R{i:03}"), "s", *v)).collect();
        let kept = filter2(pool);
        prop_assert_eq!(kept.len(), n * 6 / 10);
        prop_assert_eq!(kept.len(), keep_count(n));
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let min_kept = kept.iter().map(|c| c.cci).fold(f64::INFINITY, f64::min);
        let max_dropped = sorted[kept.len()..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_kept >= max_dropped);
    }

    #[test]
    fn best_candidate_is_the_argmax(values in prop::collection::vec((0usize..5, 0usize..3, 0.0f64..1.0), 1..60)) {
        let styles = ["a", "b", "c"];
        let order: Vec<String> = styles.iter().map(|s| s.to_string()).collect();
        let cands: Vec<_> = values.iter().map(|(r, s, v)| cand(&format!("R{r}"), styles[*s], *v)).collect();
        let picked = select_best_per_record(cands.clone(), &order);
        for p in &picked {
            let max = cands.iter().filter(|c| c.record_id == p.record_id).map(|c| c.cci).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(p.cci, max);
        }
        let records: std::collections::BTreeSet<_> = cands.iter().map(|c| c.record_id.clone()).collect();
        prop_assert_eq!(picked.len(), records.len());
    }
}
