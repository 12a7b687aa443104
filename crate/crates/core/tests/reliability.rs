mod common;

#[test]
fn every_short_delivery_schedule_matches_clean_analysis() {
    let n = common::model_check_delivery(4, 8).unwrap();
    assert_eq!(n, (0..=8).map(|k| 4u64.pow(k)).sum::<u64>());
}

#[test]
fn redelivered_and_late_acked_streams_analyze_like_clean_ones() {
    for seed in 0..20 {
        common::check_redelivery_schedule(seed).unwrap();
    }
}
