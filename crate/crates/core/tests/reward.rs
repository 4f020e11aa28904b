use std::collections::BTreeMap;

use num_rational::Ratio;
use proptest::prelude::*;
use softworld::task::compute_reward;
use softworld::verifier::VerdictRecord;

fn verdict(i: usize, passed: bool, errored: bool) -> VerdictRecord {
    VerdictRecord {
        criterion_id: Some(format!("c{i}")),
        endpoint: "check-folder-exists".into(),
        ok: !errored,
        passed: Some(passed && !errored),
        evidence: serde_json::json!({}),
        error: errored.then(|| "unbound".to_string()),
        bindings: BTreeMap::new(),
        revision: 0,
    }
}

fn verdicts(flags: &[bool]) -> Vec<VerdictRecord> {
    flags
        .iter()
        .enumerate()
        .map(|(i, p)| verdict(i, *p, false))
        .collect()
}

#[test]
fn reward_is_exactly_k_over_n() {
    for n in 1..=12usize {
        for k in 0..=n {
            let flags: Vec<bool> = (0..n).map(|i| i < k).collect();
            let r = compute_reward(&verdicts(&flags)).unwrap();
            assert_eq!(r.reward, Ratio::new(k as u64, n as u64));
            assert_eq!((r.n_pass, r.n_total), (k as u64, n as u64));
            assert_eq!(r.is_full(), k == n);
        }
    }
    assert!(compute_reward(&[]).is_err());
}

#[test]
fn errored_verdicts_count_as_failures() {
    let v = vec![verdict(0, true, false), verdict(1, true, true)];
    assert_eq!(compute_reward(&v).unwrap().reward, Ratio::new(1, 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn single_flip_moves_reward_strictly(flags in prop::collection::vec(any::<bool>(), 1..=12), pick in any::<prop::sample::Index>()) {
        let i = pick.index(flags.len());
        let before = compute_reward(&verdicts(&flags)).unwrap().reward;
        let mut flipped = flags.clone();
        flipped[i] = !flipped[i];
        let after = compute_reward(&verdicts(&flipped)).unwrap().reward;
        if flags[i] {
            prop_assert!(after < before);
        } else {
            prop_assert!(after > before);
        }
        let step = if after > before { after - before } else { before - after };
        prop_assert_eq!(step, Ratio::new(1, flags.len() as u64));
    }
}
