use mrdmix::clustering::kmeans::wss_of;
use mrdmix::clustering::{
    binder_loss, binder_partition, kmeans, similarity_matrix, wss_profile, ImputedPanel,
};
use mrdmix::diagnostics::{ess, quantile, split_rhat, summarize, DrawTable};
use mrdmix::io::{merge_subtypes, parse_dataset_str, write_dataset, IngestOptions, SubtypeRules};
use mrdmix::model::density::log_ndtr;
use mrdmix::model::likelihood::{loglik_censored, mean_day15_label, mean_day42_label};
use mrdmix::model::{
    Day15Params, Day42Params, Gender, MixtureState, PatientRecord, Protocol, N_DRUGS,
};
use mrdmix::sampler::kernels::apply_label_permutation;
use mrdmix::simulate::{recovery_truth, simulate_dataset};
use proptest::prelude::*;
use std::path::Path;

fn partitions(n: usize, draws: usize, k: u8) -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0..k, n), draws)
}

fn permutation(k: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..k).collect::<Vec<_>>()).prop_shuffle()
}

fn record(id: usize, subtype: &str) -> PatientRecord {
    PatientRecord {
        id: format!("p{id}"),
        age: 5.0,
        gender: Gender::Male,
        log10_wbc: 1.0,
        subtype: subtype.to_string(),
        protocol: Protocol::T16,
        z1: None,
        z2: None,
        lc50: [0.0; N_DRUGS],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_ignores_label_names(draws in partitions(7, 12, 4), perm in permutation(4)) {
        let refs: Vec<&[u8]> = draws.iter().map(Vec::as_slice).collect();
        let renamed: Vec<Vec<u8>> = draws.iter().map(|d| d.iter().map(|&l| perm[l as usize] as u8).collect()).collect();
        let renamed_refs: Vec<&[u8]> = renamed.iter().map(Vec::as_slice).collect();
        let a = similarity_matrix(&refs);
        let b = similarity_matrix(&renamed_refs);
        prop_assert!(a.is_valid());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn binder_estimate_beats_every_candidate(draws in partitions(9, 15, 3), seed in any::<u64>()) {
        let refs: Vec<&[u8]> = draws.iter().map(Vec::as_slice).collect();
        let sim = similarity_matrix(&refs);
        let est = binder_partition(&sim, &refs, 10, 8, seed);
        prop_assert!((binder_loss(&est.partition, &sim) - est.loss).abs() < 1e-9);
        for c in &refs {
            prop_assert!(est.loss <= binder_loss(c, &sim) + 1e-9);
        }
    }

    #[test]
    fn kmeans_reports_its_own_wss(
        data in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 12..40),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let fit = kmeans(&data, k, 3, seed).unwrap();
        let recomputed = wss_of(&data, &fit.assignment, k);
        prop_assert!((fit.wss - recomputed).abs() <= 1e-9 * recomputed.max(1.0));
    }

    #[test]
    fn wss_profile_is_non_increasing(
        data in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, N_DRUGS), 15..30),
        seed in any::<u64>(),
    ) {
        let panel = ImputedPanel::new(vec![data], vec!["d".into()]).unwrap();
        let profile = wss_profile(&panel, &[1, 2, 3, 4, 5, 6], 3, seed).unwrap();
        for w in profile.average.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn quantiles_are_monotone(
        data in prop::collection::vec(-100.0..100.0f64, 1..60),
        mut ps in prop::collection::vec(0.0..=1.0f64, 2..10),
    ) {
        ps.sort_by(f64::total_cmp);
        let qs: Vec<f64> = ps.iter().map(|&p| quantile(&data, p)).collect();
        for w in qs.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn summaries_follow_parameter_order(
        rows in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 4), 20..40),
        perm in permutation(4),
    ) {
        let names: Vec<String> = (0..4).map(|i| format!("x{i}")).collect();
        let mut table = DrawTable::new(names.clone(), 2);
        let mut shuffled = DrawTable::new(perm.iter().map(|&i| names[i].clone()).collect(), 2);
        for (r, row) in rows.iter().enumerate() {
            table.push(r % 2, row);
            let moved: Vec<f64> = perm.iter().map(|&i| row[i]).collect();
            shuffled.push(r % 2, &moved);
        }
        let a = summarize(&table);
        let b = summarize(&shuffled);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(&b[j], &a[i]);
        }
    }

    #[test]
    fn ess_and_rhat_are_affine_invariant(
        chains in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 40), 2..4),
        scale in prop_oneof![0.01..100.0f64, -100.0..-0.01f64],
        shift in -1e3..1e3f64,
    ) {
        let moved: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| scale * v + shift).collect()).collect();
        let a: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let b: Vec<&[f64]> = moved.iter().map(Vec::as_slice).collect();
        if let (Ok(x), Ok(y)) = (ess(a[0]), ess(b[0])) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y}");
        }
        if let (Ok(x), Ok(y)) = (split_rhat(&a), split_rhat(&b)) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn subtype_merging_is_idempotent_and_order_free(
        labels in prop::collection::vec(prop::sample::select(vec!["B-other", "ETV6-RUNX1", "Ph-like CRLF2", "Ph-like", "Rare", "Hyperdiploid"]), 1..60),
        min_count in 0usize..8,
        rotate in 0usize..60,
    ) {
        let rules = SubtypeRules { min_count, ..SubtypeRules::default() };
        let mut once: Vec<PatientRecord> = labels.iter().enumerate().map(|(i, s)| record(i, s)).collect();
        merge_subtypes(&mut once, &rules);
        let mut twice = once.clone();
        merge_subtypes(&mut twice, &rules);
        prop_assert_eq!(&once, &twice);

        let mut rotated: Vec<PatientRecord> = labels.iter().enumerate().map(|(i, s)| record(i, s)).collect();
        rotated.rotate_left(rotate % labels.len());
        merge_subtypes(&mut rotated, &rules);
        rotated.sort_by_key(|r| r.id[1..].parse::<usize>().unwrap());
        prop_assert_eq!(&once, &rotated);
    }

    #[test]
    fn label_permutation_preserves_means(
        perm in permutation(3),
        gamma1 in prop::collection::vec(-2.0..2.0f64, 2),
        gamma2 in prop::collection::vec(-2.0..2.0f64, 2),
        x in prop::collection::vec(-2.0..2.0f64, 4),
        z1 in -2.0..2.0f64,
    ) {
        let mut t1 = Day15Params::initial(4, 3);
        let mut t2 = Day42Params::initial(4, 3);
        t1.beta0 = 0.3;
        t1.beta = vec![0.5, -0.2, 0.1, 1.0];
        t1.gamma = gamma1;
        t2.rho0 = -0.4;
        t2.rho = 0.8;
        t2.beta = vec![0.2, 0.0, -0.7, 0.3];
        t2.gamma = gamma2;
        let mut mixture = MixtureState {
            w: vec![0.2, 0.3, 0.5],
            mu: vec![vec![0.0; N_DRUGS], vec![1.0; N_DRUGS], vec![2.0; N_DRUGS]],
            comp_var: vec![0.1, 0.2, 0.3],
            alloc: vec![0, 1, 2],
        };
        let before: Vec<(f64, f64, f64)> = (0..3)
            .map(|c| (mean_day15_label(&x, c, &t1), mean_day42_label(z1, true, &x, c, &t2), mean_day42_label(z1, false, &x, c, &t2)))
            .collect();
        let (mut p1, mut p2) = (t1.clone(), t2.clone());
        apply_label_permutation(&perm, &mut p1, &mut p2, &mut mixture);
        for old in 0..3 {
            let new = mixture.alloc[old];
            prop_assert_eq!(perm[new], old);
            let after = (mean_day15_label(&x, new, &p1), mean_day42_label(z1, true, &x, new, &p2), mean_day42_label(z1, false, &x, new, &p2));
            prop_assert!((after.0 - before[old].0).abs() < 1e-12);
            prop_assert!((after.1 - before[old].1).abs() < 1e-12);
            prop_assert!((after.2 - before[old].2).abs() < 1e-12);
        }
    }

    #[test]
    fn log_ndtr_is_monotone(a in -60.0..60.0f64, d in 0.0..10.0f64) {
        prop_assert!(log_ndtr(a) <= log_ndtr(a + d));
        prop_assert!(log_ndtr(a) <= 0.0);
    }

    #[test]
    fn censored_loglik_is_a_log_probability(mu in -20.0..20.0f64, var in 1e-3..50.0f64, z in -5.0..5.0f64) {
        let l = loglik_censored(mu, var, z).unwrap();
        prop_assert!(l <= 0.0 && !l.is_nan());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_data_round_trips_through_csv(seed in any::<u64>(), n in 20usize..120) {
        let sim = simulate_dataset(&recovery_truth(n), seed, true).unwrap();
        let mut buf = Vec::new();
        write_dataset(&sim.records, &mut buf).unwrap();
        let options = IngestOptions {
            subtypes: SubtypeRules { min_count: 0, merge: Default::default() },
            ..IngestOptions::default()
        };
        let parsed = parse_dataset_str(std::str::from_utf8(&buf).unwrap(), Path::new("sim.csv"), &options).unwrap();
        prop_assert!(!parsed.has_missing());
        prop_assert_eq!(parsed.records, sim.records);
    }
}
