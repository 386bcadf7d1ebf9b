#[path = "support/oracles.rs"]
mod oracles;

#[test]
fn toy_chain_visits_match_enumerated_posterior() {
    println!("{}", oracles::check_frl_toy(100_000, 17).unwrap());
}

#[test]
fn enumeration_of_toy_space() {
    assert_eq!(oracles::enumerate_lists(2, 2).len(), 5);
    assert_eq!(oracles::enumerate_lists(2, 1).len(), 3);
}
