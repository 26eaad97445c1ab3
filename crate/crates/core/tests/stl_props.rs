mod common;

use common::*;
use fedstl::stl::{eval_bool, parse, robustness, Formula, Monitor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn case(seed: u64, vars: &[&str], fragment: Fragment) -> (Formula, fedstl::stl::Trace) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = gen_formula(&mut rng, &GenOpts::new(vars, 4, 6, fragment));
    let len = f.horizon() + 1 + (seed % 3) as usize;
    (f, gen_trace(&mut rng, vars, len))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matches_naive_semantics(seed in any::<u64>()) {
        let (f, tr) = case(seed, &["x", "y"], Fragment::Full);
        for t in 0..tr.len() - f.horizon() {
            prop_assert_eq!(eval_bool(&f, &tr, t).unwrap(), naive_bool(&f, &tr, t));
            prop_assert_eq!(robustness(&f, &tr, t).unwrap(), naive_rob(&f, &tr, t));
        }
    }

    #[test]
    fn robustness_sign_is_sound(seed in any::<u64>()) {
        let (f, tr) = case(seed, &["x", "y"], Fragment::Full);
        let r = robustness(&f, &tr, 0).unwrap();
        let b = eval_bool(&f, &tr, 0).unwrap();
        prop_assert!(!(r > 0.0 && !b) && !(r < 0.0 && b), "{f}: rho={r} sat={b}");
    }

    #[test]
    fn negation_flips_robustness(seed in any::<u64>()) {
        let (f, tr) = case(seed, &["x"], Fragment::Full);
        let r = robustness(&f, &tr, 0).unwrap();
        prop_assert_eq!(robustness(&Formula::not(f.clone()), &tr, 0).unwrap(), -r);
        prop_assert_eq!(
            eval_bool(&Formula::not(f.clone()), &tr, 0).unwrap(),
            !eval_bool(&f, &tr, 0).unwrap()
        );
    }

    #[test]
    fn evaluation_is_shift_consistent(seed in any::<u64>()) {
        let (f, tr) = case(seed, &["x", "y"], Fragment::Full);
        let m = Monitor::new(&f, tr.schema()).unwrap();
        for t in 0..tr.len() - f.horizon() {
            let s = tr.suffix(t).unwrap();
            prop_assert_eq!(m.robustness(&tr, t).unwrap(), m.robustness(&s, 0).unwrap());
            prop_assert_eq!(m.eval_bool(&tr, t).unwrap(), m.eval_bool(&s, 0).unwrap());
        }
    }

    #[test]
    fn de_morgan(seed in any::<u64>()) {
        let (a, tr) = case(seed, &["x"], Fragment::Full);
        let (b, _) = case(seed ^ 0x9e37, &["x"], Fragment::Full);
        let tr = if b.horizon() >= tr.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            gen_trace(&mut rng, &["x"], a.horizon().max(b.horizon()) + 1)
        } else { tr };
        if a.horizon() >= tr.len() { return Ok(()); }
        let lhs = Formula::not(Formula::and(a.clone(), b.clone()));
        let rhs = Formula::or(Formula::not(a), Formula::not(b));
        prop_assert_eq!(robustness(&lhs, &tr, 0).unwrap(), robustness(&rhs, &tr, 0).unwrap());
        prop_assert_eq!(eval_bool(&lhs, &tr, 0).unwrap(), eval_bool(&rhs, &tr, 0).unwrap());
    }

    #[test]
    fn render_parse_roundtrip(seed in any::<u64>()) {
        let (f, _) = case(seed, &["x", "y"], Fragment::Full);
        let text = f.to_string();
        prop_assert_eq!(parse(&text).unwrap(), f, "{}", text);
    }
}

#[test]
fn out_of_range_window_is_an_error() {
    let f = parse("G[0,3](x >= 0)").unwrap();
    let tr = fedstl::stl::Trace::univariate("x", &[1.0, 2.0, 3.0]).unwrap();
    assert!(eval_bool(&f, &tr, 0).is_err());
    assert!(robustness(&f, &tr, 0).is_err());
}
