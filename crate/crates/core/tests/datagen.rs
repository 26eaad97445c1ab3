use fedstl::datagen::{generate, write_csv, GenSpec, GroupFamily};
use fedstl::mining::{builtin_template, default_tolerance, infer_tight, TemplateOptions};
use fedstl::stl::{eval_bool, parse, Formula};

fn small(n_clients: usize, groups: usize, seed: u64) -> GenSpec {
    let mut s = GenSpec::new(n_clients, groups, 2, seed);
    s.series_len = 260;
    s.input_len = 24;
    s.output_len = 8;
    s
}

#[test]
fn generation_is_byte_deterministic() {
    let s = small(6, 3, 42);
    let (a, la) = generate(&s).unwrap();
    let (b, lb) = generate(&s).unwrap();
    assert_eq!(la, lb);
    for (x, y) in a.iter().zip(&b) {
        let (mut p, mut q) = (Vec::new(), Vec::new());
        write_csv(&x.series, &mut p).unwrap();
        write_csv(&y.series, &mut q).unwrap();
        assert_eq!(p, q);
    }
    let (c, _) = generate(&small(6, 3, 43)).unwrap();
    assert_ne!(a[0].series, c[0].series);
}

#[test]
fn planted_range_and_gap_hold_on_every_window() {
    let mut s = small(6, 3, 1);
    s.gap = Some(3.0);
    let (clients, labels) = generate(&s).unwrap();
    let gap = parse("G[0,7](x1 - x2 > 3)").unwrap();
    for c in &clients {
        let (lo, hi) = s.groups[labels[c.id]].signal_range();
        let range = Formula::always(
            0,
            7,
            Formula::and(
                Formula::atom("x1", fedstl::stl::Cmp::Ge, lo),
                Formula::atom("x1", fedstl::stl::Cmp::Le, hi),
            ),
        );
        for split in [&c.train, &c.val, &c.test] {
            for y in &split.targets {
                assert!(eval_bool(&gap, y, 0).unwrap());
                assert!(eval_bool(&range, y, 0).unwrap());
            }
        }
    }
}

#[test]
fn single_group_without_noise_differs_only_in_phase() {
    let mut s = small(3, 1, 2);
    s.gap = None;
    s.groups[0].noise = 0.0;
    let (clients, _) = generate(&s).unwrap();
    for c in &clients {
        let (lo, hi) = c.series.range_of(0);
        assert!(
            (lo - (1.0 - 0.08)).abs() < 1e-3 && (hi - 1.08).abs() < 1e-3,
            "{lo} {hi}"
        );
    }
}

#[test]
fn mined_bounds_separate_distant_groups() {
    let mut s = small(4, 2, 3);
    s.gap = None;
    s.groups = vec![
        GroupFamily {
            level: 10.0,
            amplitude: 5.0,
            period: 12.0,
            noise: 1.0,
            offsets: vec![0.0, 0.0],
        },
        GroupFamily {
            level: 100.0,
            amplitude: 5.0,
            period: 12.0,
            noise: 1.0,
            offsets: vec![0.0, 0.0],
        },
    ];
    let (clients, labels) = generate(&s).unwrap();
    let t = &builtin_template(1, &s.schema(), 8, TemplateOptions::default()).unwrap()[0];
    let mut spans = Vec::new();
    for c in &clients {
        let m = infer_tight(t, &c.train.targets, default_tolerance(&c.train.targets)).unwrap();
        let vals: Vec<f64> = m.values.iter().map(|v| v.1).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        spans.push((labels[c.id], lo, hi));
    }
    for a in &spans {
        for b in &spans {
            if a.0 != b.0 {
                assert!(a.2 < b.1 || b.2 < a.1, "{a:?} overlaps {b:?}");
            }
        }
    }
}
