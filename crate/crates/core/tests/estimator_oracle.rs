mod common;

use common::{batch_vs_recursive_long, compare_with_oracle, families};

fn check(name: &str, seed: u64) {
    let gen = families().into_iter().find(|(n, _)| *n == name).unwrap().1;
    let dev = compare_with_oracle(&gen, 200, 12, seed);
    assert!(dev.worst() < 1e-9, "{name}: {dev:?}");
    assert!(dev.batch_vs_recursive < 1e-12, "{name}: {dev:?}");
    assert_eq!(dev.ordering_violations, 0, "{name}");
    assert!(
        dev.repeats > 0 && dev.acks > 0,
        "{name}: traces lack repeats or acks"
    );
}

#[test]
fn periodic_matches_oracle() {
    check("periodic", 1);
}

#[test]
fn uniform_matches_oracle() {
    check("uniform", 2);
}

#[test]
fn geometric_matches_oracle() {
    check("geometric", 3);
}

#[test]
fn explicit_matches_oracle() {
    check("explicit", 4);
}

#[test]
fn batch_equals_recursive_on_long_traces() {
    for (name, gen) in families() {
        let dev = batch_vs_recursive_long(&gen, 10, 600, 7);
        assert!(dev.batch_vs_recursive < 1e-12, "{name}: {dev:?}");
        assert!(dev.repeats > 0 && dev.acks > 0);
    }
}

#[test]
fn closed_forms_agree_with_renewal_filter() {
    for (name, gen) in families() {
        if !matches!(name, "periodic" | "geometric") {
            continue;
        }
        let dev = batch_vs_recursive_long(&gen, 10, 600, 8);
        assert!(
            dev.source_timestamp < 1e-9 && dev.dest_timestamp < 1e-9,
            "{name}: {dev:?}"
        );
    }
}
