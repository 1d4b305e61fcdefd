use std::collections::{BTreeMap, BTreeSet};

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use flakeshot_core::baseline::{select_k_best, tfidf_fit, SparseVec};
use flakeshot_core::harness::{metrics, rank_sum_test_with, stratified_split, RankSumMethod, SplitRatios};
use flakeshot_core::labeler::{auto_labels, build_rerun_groups, error_rate_from_pairs};
use flakeshot_core::synth::{synth_log, SynthConfig};
use flakeshot_core::{preprocess, seed, JobRecord, JobStatus, Label, PrepConfig};

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Regular), Just(Label::Intermittent)]
}

fn raw_log() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-zA-Z]{1,8}",
        "[0-9]{1,6}",
        "[a-f0-9]{6,12}",
        "(https?://)?[a-z]{2,6}\\.[a-z]{2,3}(/[a-z0-9]{1,5}){0,3}",
        "/?[a-z]{1,5}(/[a-z]{1,5}){1,3}(\\.[a-z]{1,3})?(:[0-9]{1,3})?",
        "v?[0-9]{1,2}\\.[0-9]{1,2}(\\.[0-9]{1,2})?",
        "[0-9]{1,3}(ms|s|m)",
        "(exit code|exit status|HTTP|status) [0-9]{1,4}",
        "<(ID|URL|FILEPATH|DIRPATH|DURATION|VERSION)>",
        "[ \t]{1,3}",
        "\n",
        "\r?\n\n",
        "[!-/:-@\\[-`{-~]{1,3}",
        "\x1b\\[[0-9;]{0,5}m",
        "[éßλ中]",
    ];
    prop::collection::vec(piece, 0..60).prop_map(|v| v.concat())
}

fn realistic_log() -> impl Strategy<Value = String> {
    (any::<u64>(), label(), 0usize..6, any::<bool>()).prop_map(|(s, l, c, ansi)| {
        let cfg = SynthConfig { ansi, ..SynthConfig::default() };
        synth_log(&mut seed::rng(s), l, c, &cfg, "0123456789abcdef0123")
    })
}

fn digits_are_protected(text: &str) -> bool {
    text.lines().all(|line| {
        let toks: Vec<String> = line.split(' ').map(str::to_lowercase).collect();
        toks.iter().enumerate().all(|(i, t)| {
            if !t.bytes().any(|b| b.is_ascii_digit()) {
                return true;
            }
            let ctx = toks[i.saturating_sub(2)..i].iter().any(|p| matches!(p.as_str(), "http" | "status" | "code"));
            t.bytes().all(|b| b.is_ascii_digit()) && ctx
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn preprocess_is_idempotent(raw in raw_log()) {
        let cfg = PrepConfig::default();
        let once = preprocess(&raw, &cfg).text;
        prop_assert_eq!(&preprocess(&once, &cfg).text, &once);
    }

    #[test]
    fn preprocess_output_is_clean(raw in raw_log()) {
        let out = preprocess(&raw, &PrepConfig::default()).text;
        prop_assert!(out.chars().all(|c| c.is_alphabetic() || c.is_ascii_digit() || matches!(c, ' ' | '\n' | '<' | '>')), "{:?}", out);
        prop_assert!(digits_are_protected(&out), "{:?}", out);
        let lines: Vec<&str> = out.lines().collect();
        let unique: BTreeSet<&str> = lines.iter().copied().collect();
        prop_assert_eq!(unique.len(), lines.len());
        prop_assert!(lines.iter().all(|l| !l.is_empty() && !l.starts_with(' ') && !l.ends_with(' ') && !l.contains("  ")));
    }

    #[test]
    fn realistic_logs_shrink(raw in realistic_log()) {
        let cfg = PrepConfig::default();
        let p = preprocess(&raw, &cfg);
        prop_assert!(p.processed_bytes <= p.original_bytes);
        prop_assert_eq!(p.processed_bytes, p.text.len());
        prop_assert!((0.0..=1.0).contains(&p.reduction));
        prop_assert_eq!(&preprocess(&p.text, &cfg).text, &p.text);
        prop_assert!(digits_are_protected(&p.text));
    }
}

fn job(id: u64, name: u8, commit: u8, status: JobStatus) -> JobRecord {
    JobRecord {
        project_id: "p".into(),
        job_id: id,
        name: format!("job{name}"),
        commit_sha: format!("{commit:040x}"),
        status,
        created_at: Utc.timestamp_opt(1_700_000_000 + id as i64 * 60, 0).unwrap(),
        finished_at: None,
        log_path: None,
        git_ref: "main".into(),
    }
}

fn runs() -> impl Strategy<Value = Vec<(u8, u8, bool)>> {
    prop::collection::vec((0u8..3, 0u8..3, any::<bool>()), 0..12)
}

proptest! {
    #[test]
    fn heuristic_matches_reference(runs in runs()) {
        let jobs: Vec<JobRecord> = runs
            .iter()
            .enumerate()
            .map(|(i, &(n, c, ok))| job(i as u64, n, c, if ok { JobStatus::Success } else { JobStatus::Failed }))
            .collect();
        let got = auto_labels(&build_rerun_groups(&jobs));
        let mut want = BTreeMap::new();
        for (i, &(n, c, ok)) in runs.iter().enumerate() {
            if ok {
                continue;
            }
            let passed_elsewhere = runs.iter().any(|&(n2, c2, ok2)| n2 == n && c2 == c && ok2);
            want.insert(i as u64, if passed_elsewhere { Label::Intermittent } else { Label::Regular });
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn adding_a_success_never_demotes(runs in runs(), n in 0u8..3, c in 0u8..3) {
        let mut jobs: Vec<JobRecord> = runs
            .iter()
            .enumerate()
            .map(|(i, &(n, c, ok))| job(i as u64, n, c, if ok { JobStatus::Success } else { JobStatus::Failed }))
            .collect();
        let before = auto_labels(&build_rerun_groups(&jobs));
        jobs.push(job(99, n, c, JobStatus::Success));
        let after = auto_labels(&build_rerun_groups(&jobs));
        for (id, l) in before {
            prop_assert!(!(l.is_intermittent() && after[&id] == Label::Regular));
        }
    }

    #[test]
    fn error_rate_bounds(pairs in prop::collection::vec((label(), label()), 1..200)) {
        let e = error_rate_from_pairs(&pairs).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(e == 0.0, pairs.iter().all(|(a, m)| a == m));
        let d = pairs.iter().filter(|(a, m)| a != m).count();
        prop_assert_eq!(e, d as f64 / pairs.len() as f64);
    }

    #[test]
    fn splits_partition_and_stratify(n_int in 8usize..80, n_reg in 8usize..80, s in any::<u64>()) {
        let mut labels = vec![Label::Intermittent; n_int];
        labels.extend(vec![Label::Regular; n_reg]);
        let mut rng = seed::rng(s);
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
        let sp = stratified_split(&labels, &SplitRatios::default(), s).unwrap();
        let all: Vec<usize> = sp.learn.iter().chain(&sp.validation).chain(&sp.test).copied().collect();
        let set: BTreeSet<usize> = all.iter().copied().collect();
        prop_assert_eq!(set.len(), all.len());
        prop_assert_eq!(set, (0..labels.len()).collect::<BTreeSet<_>>());
        for part in [&sp.learn, &sp.validation, &sp.test] {
            let k = part.iter().filter(|&&i| labels[i].is_intermittent()).count();
            prop_assert!(k >= 2 && part.len() - k >= 2);
        }
        prop_assert_eq!(stratified_split(&labels, &SplitRatios::default(), s).unwrap(), sp);
    }

    #[test]
    fn metrics_match_recount(pairs in prop::collection::vec((label(), label()), 1..300)) {
        let (pred, truth): (Vec<Label>, Vec<Label>) = pairs.iter().copied().unzip();
        let m = metrics(&pred, &truth).unwrap();
        let count = |p: Label, t: Label| pairs.iter().filter(|&&(a, b)| a == p && b == t).count() as f64;
        let (tp, fp) = (count(Label::Intermittent, Label::Intermittent), count(Label::Intermittent, Label::Regular));
        let (fn_, tn) = (count(Label::Regular, Label::Intermittent), count(Label::Regular, Label::Regular));
        let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        prop_assert_eq!(m.intermittent.precision, ratio(tp, tp + fp));
        prop_assert_eq!(m.intermittent.recall, ratio(tp, tp + fn_));
        prop_assert_eq!(m.intermittent.f1, ratio(2.0 * tp, 2.0 * tp + fp + fn_));
        prop_assert_eq!(m.regular.precision, ratio(tn, tn + fn_));
        prop_assert_eq!(m.regular.recall, ratio(tn, tn + fp));
    }

    #[test]
    fn select_k_commutes_with_column_permutation(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 6), 4..20),
        labels in prop::collection::vec(label(), 20),
        perm_seed in any::<u64>(),
        k in 1usize..=6,
    ) {
        let labels = &labels[..rows.len()];
        // Distinct column scales keep chi2 scores tie-free.
        let dense: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().enumerate().map(|(j, v)| v * (1.0 + j as f64 * 0.137)).collect()).collect();
        let sparse = |m: &[Vec<f64>]| -> Vec<SparseVec> {
            m.iter().map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect()).collect()
        };
        let mut perm: Vec<usize> = (0..6).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut seed::rng(perm_seed));
        // Column j of the permuted matrix is column perm[j] of the original.
        let permuted: Vec<Vec<f64>> = dense.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
        let a = select_k_best(&sparse(&dense), 6, labels, k).unwrap();
        let b = select_k_best(&sparse(&permuted), 6, labels, k).unwrap();
        let scores = flakeshot_core::baseline::chi2_scores(&sparse(&dense), 6, labels);
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        prop_assume!(distinct.len() == 6 && scores.iter().all(|s| s.is_finite()));
        let mapped: BTreeSet<usize> = b.iter().map(|&j| perm[j]).collect();
        prop_assert_eq!(mapped, a.into_iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn tfidf_rows_are_unit(docs in prop::collection::vec("[a-c]{1,3}( [a-c]{1,3}){0,6}", 2..12)) {
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let model = tfidf_fit(&refs).unwrap();
        for d in &refs {
            let norm: f64 = model.transform(d).iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

/// All splits of `pooled` into a group of size `n` and the rest; returns how
/// many give a U statistic at most / at least the observed one.
fn enumerate_p(xs: &[f64], ys: &[f64]) -> f64 {
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let total = pooled.len();
    let u_of = |mask: u32| {
        let mut u = 0;
        for i in (0..total).filter(|i| mask >> i & 1 == 1) {
            u += (0..total).filter(|j| mask >> j & 1 == 0 && pooled[*j] < pooled[i]).count();
        }
        u
    };
    let observed = u_of((1u32 << xs.len()) - 1);
    let (mut le, mut ge, mut all) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != xs.len() {
            continue;
        }
        let u = u_of(mask);
        all += 1;
        le += u64::from(u <= observed);
        ge += u64::from(u >= observed);
    }
    (2.0 * le.min(ge) as f64 / all as f64).min(1.0)
}

proptest! {
    #[test]
    fn exact_rank_sum_matches_enumeration(values in prop::collection::btree_set(-1000i32..1000, 2..=10), split in any::<u64>()) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let mut v = values.clone();
        rand::seq::SliceRandom::shuffle(v.as_mut_slice(), &mut seed::rng(split));
        let n = 1 + (split as usize % (v.len() - 1));
        let (xs, ys) = v.split_at(n);
        let p = rank_sum_test_with(xs, ys, RankSumMethod::Exact).unwrap();
        prop_assert!((p - enumerate_p(xs, ys)).abs() < 1e-12);
    }
}
