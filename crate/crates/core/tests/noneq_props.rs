use subrad::{
    currents, detailed_balance_check, entropy_rates, steady_state, Distribution, Generator, Level, ModelParams,
};

fn solve(n: u32, w: f64, gamma: f64) -> (Generator, Distribution) {
    let gen = Generator::build(&ModelParams::new(n, w, gamma).unwrap());
    let ss = steady_state(&gen).unwrap();
    (gen, ss)
}

#[test]
fn entropy_balance_in_steady_state() {
    for n in [10, 40, 100] {
        for w in [0.05, 0.1, 0.2, 0.5] {
            let (gen, ss) = solve(n, w, 0.1);
            let e = entropy_rates(&gen, &ss).unwrap();
            assert!(e.s_i >= 0.0, "N={n} w={w}");
            assert!((e.s_e + e.s_i).abs() < 1e-8 * e.s_i.max(1.0), "N={n} w={w}: {e:?}");
            assert!(e.s_tot.abs() < 1e-8 * e.s_i.max(1.0));
        }
    }
}

#[test]
fn boundary_chain_satisfies_detailed_balance() {
    let p = ModelParams::new(100, 0.05, 0.1).unwrap();
    let gen = Generator::build(&p).restricted(|l| l.is_dark());
    let ss = steady_state(&gen).unwrap();
    let check = detailed_balance_check(&gen, &ss, 1e-9).unwrap();
    assert!(check.balanced, "{check:?}");
    let e = entropy_rates(&gen, &ss).unwrap();
    assert!(e.s_i.abs() < 1e-12);
}

#[test]
fn driven_phase_breaks_detailed_balance() {
    let (gen, ss) = solve(40, 0.2, 0.1);
    let check = detailed_balance_check(&gen, &ss, 1e-3).unwrap();
    assert!(!check.balanced);
    assert!(check.worst_edge.is_some());
}

#[test]
fn flux_weighted_violation_separates_the_phases() {
    let (gen_lo, lo) = solve(100, 0.05, 0.1);
    let (gen_hi, hi) = solve(100, 0.2, 0.1);
    let below = detailed_balance_check(&gen_lo, &lo, 1e-3).unwrap();
    let above = detailed_balance_check(&gen_hi, &hi, 1e-3).unwrap();
    assert!(10.0 * below.flux_weighted_violation < above.flux_weighted_violation);
}

#[test]
fn currents_are_much_weaker_below_threshold() {
    let (gen_lo, lo) = solve(100, 0.05, 0.1);
    let (gen_hi, hi) = solve(100, 0.2, 0.1);
    let weak = currents(&gen_lo, &lo).unwrap();
    let strong = currents(&gen_hi, &hi).unwrap();
    assert!(10.0 * weak.max_abs() < strong.max_abs());
    assert!(strong.max_circulation() > 0.0);
}

#[test]
fn currents_conserve_probability_at_every_node() {
    let (gen, ss) = solve(50, 0.2, 0.1);
    let field = currents(&gen, &ss).unwrap();
    let scale = field.max_abs();
    assert!(field.net_outflow().iter().all(|x| x.abs() < 1e-10 * scale));
    let a = Level::new(3, 0);
    let b = Level::new(3, 1);
    assert_eq!(field.current(a, b), -field.current(b, a));
}

#[test]
fn entropy_production_per_atom_grows_across_threshold() {
    let per_atom = |w| {
        let (gen, ss) = solve(100, w, 0.1);
        entropy_rates(&gen, &ss).unwrap().s_i_per_atom(ss.params())
    };
    assert!(per_atom(0.05) < per_atom(0.1));
    assert!(per_atom(0.1) < per_atom(0.2));
    assert!(per_atom(0.2) > 100.0 * per_atom(0.05));
}
