mod common;

use twinwall::hub::InteractionKind;

#[test]
fn two_by_two_interleavings_converge() {
    let pool = common::interaction_pool();
    let a = [pool[0].clone(), pool[1].clone()];
    let b = [pool[2].clone(), pool[4].clone()];
    // Each side orders its 4 events 2 ways; the sides merge C(8, 4) ways.
    assert_eq!(common::check_federation(&a, &b).unwrap(), 2 * 2 * 70);
}

#[test]
fn one_sided_script_reaches_the_peer() {
    let z = InteractionKind::Zoom { factor: 2.0 };
    assert_eq!(common::check_federation(&[z.clone(), z.clone(), z], &[]).unwrap(), 5);
}

#[test]
fn all_splits_up_to_four_converge() {
    assert!(common::check_all_federations().unwrap() > 1000);
}
