use std::collections::BTreeMap;

use optimas_core::ingest::{KernelProfile, RooflineRaw, StallSample};
use optimas_core::insight::{
    aggregate_stalls, classify_roofline, filter_salient, render_stall_summary, select_hot_kernels, StallAggregate,
    StallKey, SUMMARY_BYTE_BUDGET,
};
use optimas_core::ExecMode;
use proptest::prelude::*;

/// Straight from the rule: for each line take the stall type with the most
/// cycles (first by name on ties), keep it when its share is at least tau,
/// rank by line cycles then (kernel, line), keep top_n.
fn salient_oracle(agg: &StallAggregate, tau: f64, top_n: usize) -> Vec<(String, u32, String, u64)> {
    let mut lines: BTreeMap<(String, u32), Vec<(String, u64)>> = BTreeMap::new();
    for (k, &c) in agg {
        lines.entry((k.kernel.clone(), k.line)).or_default().push((k.stall_type.clone(), c));
    }
    let mut kept = Vec::new();
    for ((kernel, line), types) in lines {
        let total: u64 = types.iter().map(|t| t.1).sum();
        if total == 0 {
            continue;
        }
        let best = types.iter().map(|t| t.1).max().unwrap();
        let name = types.iter().filter(|t| t.1 == best).map(|t| t.0.clone()).min().unwrap();
        if best as f64 / total as f64 >= tau {
            kept.push((kernel, line, name, total));
        }
    }
    kept.sort_by(|a, b| b.3.cmp(&a.3).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    kept.truncate(top_n);
    kept
}

fn arb_agg() -> impl Strategy<Value = StallAggregate> {
    prop::collection::btree_map((0u8..3, 1u32..30, 0u8..5), 0u64..10_000, 0..120).prop_map(|m| {
        m.into_iter()
            .map(|((k, l, s), c)| (StallKey { kernel: format!("k{k}"), line: l, stall_type: format!("stall_{s}") }, c))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn salient_matches_rule_oracle(agg in arb_agg(), tau in 0.01..=1.0f64, top_n in 1usize..40) {
        let got = filter_salient(&agg, &BTreeMap::new(), tau, top_n).unwrap();
        let got: Vec<_> = got.iter().map(|s| (s.kernel_name.clone(), s.source_line, s.stall_type.clone(), s.line_cycles)).collect();
        prop_assert_eq!(got, salient_oracle(&agg, tau, top_n));
    }

    #[test]
    fn salient_invariants(agg in arb_agg(), t1 in 0.01..=1.0f64, t2 in 0.01..=1.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = filter_salient(&agg, &BTreeMap::new(), lo, usize::MAX).unwrap();
        let b = filter_salient(&agg, &BTreeMap::new(), hi, usize::MAX).unwrap();
        prop_assert!(b.len() <= a.len());
        for s in &a {
            prop_assert!(s.dominance_share >= lo);
            let key = StallKey { kernel: s.kernel_name.clone(), line: s.source_line, stall_type: s.stall_type.clone() };
            prop_assert!(agg.contains_key(&key));
        }
    }

    #[test]
    fn summary_within_budget(
        rows in prop::collection::vec((0u8..4, 1u32..100_000, "[a-z_]{1,200}", 1u64..1_000_000), 1..400),
        snippet_len in 0usize..400,
    ) {
        let samples: Vec<StallSample> = rows.into_iter().map(|(k, l, s, c)| StallSample {
            kernel_name: format!("kernel_{k}"), source_line: l, stall_type: s, cycles: c,
        }).collect();
        let src: String = (0..100_000).map(|_| "x".repeat(snippet_len) + "\n").take(2000).collect();
        let sources: BTreeMap<String, String> = (0..4).map(|k| (format!("kernel_{k}"), src.clone())).collect();
        let agg = aggregate_stalls(&samples, ExecMode::default());
        let salient = filter_salient(&agg, &sources, 0.01, usize::MAX).unwrap();
        let rendered: usize = render_stall_summary(&salient).iter().map(|l| l.rendered().len() + 1).sum();
        prop_assert!(rendered <= SUMMARY_BYTE_BUDGET);
    }

    #[test]
    fn hot_set_is_a_minimal_prefix(times in prop::collection::vec(0u64..1_000_000, 1..12), alpha in 0.01..=1.0f64) {
        prop_assume!(times.iter().any(|&t| t > 0));
        let profiles: Vec<KernelProfile> = times.iter().enumerate().map(|(i, &t)| KernelProfile::new(format!("k{i:02}"), t)).collect();
        let ks = select_hot_kernels(&profiles, alpha).unwrap();
        let total: u128 = times.iter().map(|&t| t as u128).sum();
        let time_of = |n: &str| profiles.iter().find(|p| p.kernel_name == n).unwrap().time_ns as u128;
        let covered: u128 = ks.selected.iter().map(|n| time_of(n)).sum();
        prop_assert!(covered as f64 / total as f64 >= alpha);
        let without_last = covered - time_of(ks.selected.last().unwrap());
        prop_assert!((without_last as f64 / total as f64) < alpha);
    }

    #[test]
    fn roofline_is_a_threshold_and_scale_free(
        ac in 0.0..2e12f64, pc in 1e9..2e12f64, ab in 0.0..2e12f64, pb in 1e9..2e12f64,
        ai in 0.01..100.0f64, tau in 0.05..0.95f64, scale in 1e-3..1e3f64,
    ) {
        let raw = RooflineRaw {
            kernel_name: "k".into(), achieved_compute: ac, peak_compute: pc, achieved_bandwidth: ab,
            peak_bandwidth: pb, arithmetic_intensity: ai, profiler_notes: vec![],
        };
        let s = classify_roofline(&raw, tau).unwrap();
        prop_assert_eq!(s.compute_state.as_str() == "saturated", s.rho_compute >= tau);
        prop_assert_eq!(s.memory_state.as_str() == "saturated", s.rho_memory >= tau);
        let scaled = RooflineRaw {
            achieved_compute: ac * scale, peak_compute: pc * scale,
            achieved_bandwidth: ab * scale, peak_bandwidth: pb * scale, ..raw
        };
        let t = classify_roofline(&scaled, tau).unwrap();
        // exact ratios can differ in the last bit; states only flip right at the threshold
        prop_assume!((s.rho_compute - tau).abs() > 1e-12 && (s.rho_memory - tau).abs() > 1e-12);
        prop_assert_eq!((s.compute_state, s.memory_state, s.bound_type), (t.compute_state, t.memory_state, t.bound_type));
    }
}
