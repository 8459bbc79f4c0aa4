mod common;

use common::{calibration_phenomenon, spike_heavy_cohort, COHORT_SEED};

#[test]
fn nicon_pulls_spike_heavy_nci_toward_one() {
    let cohort = spike_heavy_cohort(COHORT_SEED, 50);
    let out = calibration_phenomenon(&cohort);
    println!("{out:?}");
    assert_eq!(out.n, 50);
    assert!(out.nicon_improved * 10 >= out.n * 9);
    assert!(out.ts_improved * 10 < out.n * 9);
}

#[test]
fn cohort_is_reproducible() {
    assert_eq!(spike_heavy_cohort(7, 5), spike_heavy_cohort(7, 5));
    assert_ne!(spike_heavy_cohort(7, 5), spike_heavy_cohort(8, 5));
}
