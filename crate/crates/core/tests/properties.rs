//! Property tests over randomly drawn inputs.

use ergovar::tower::{build_first_return_tower, Dyadic, Separation, SymbolicPoint, TowerModel};
use ergovar::{DynamicalSystem, EnsembleSpec, Observable, Point, SiteFunction, UlamOperator};
use proptest::prelude::*;
use std::sync::OnceLock;

fn system(idx: usize) -> DynamicalSystem {
    let none = Default::default();
    DynamicalSystem::from_name(ergovar::maps::CATALOG[idx], &none).unwrap()
}

fn seed_in(sys: &DynamicalSystem, u: f64, v: f64) -> Point {
    let b = sys.seed_box();
    let x = b.lower[0] + u * (b.upper[0] - b.lower[0]);
    if sys.dim() == 1 {
        Point::scalar(x)
    } else {
        Point::planar(x, b.lower[1] + v * (b.upper[1] - b.lower[1]))
    }
}

fn half_tower() -> &'static TowerModel {
    static T: OnceLock<TowerModel> = OnceLock::new();
    T.get_or_init(|| build_first_return_tower(&DynamicalSystem::doubling(), Dyadic::ZERO, Dyadic::half_pow(1), 30).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evolve_is_deterministic(idx in 0usize..5, u in 0.0f64..1.0, v in 0.0f64..1.0, steps in 1u64..200) {
        let sys = system(idx);
        let p = seed_in(&sys, u, v);
        let a = sys.evolve(p, steps).unwrap();
        let b = sys.evolve(p, steps).unwrap();
        prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
        prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
    }

    #[test]
    fn evolve_is_a_semigroup(idx in 0usize..5, u in 0.0f64..1.0, v in 0.0f64..1.0, m in 1u64..60, n in 1u64..60) {
        let sys = system(idx);
        let p = seed_in(&sys, u, v);
        let whole = sys.evolve(p, m + n).unwrap();
        let split = sys.evolve(sys.evolve(p, m).unwrap(), n).unwrap();
        prop_assert_eq!(whole, split);
    }

    #[test]
    fn ulam_rows_are_stochastic_under_powers(idx in 0usize..3, bins in 1usize..200) {
        let op = UlamOperator::build(&system(idx), bins).unwrap();
        for s in op.matrix().power_row_sums(50) {
            prop_assert!((s - 1.0).abs() <= 1e-10, "row sum {}", s);
        }
    }

    #[test]
    fn padding_leaves_values_and_constants(n in 1usize..8, extra in 1usize..5, xs in prop::collection::vec(0.0f64..1.0, 12), kind in 0usize..3) {
        let phi = SiteFunction::cos2pi();
        let n = if kind == 1 { n.max(2) } else { n };
        let k = match kind {
            0 => Observable::birkhoff(phi, n).unwrap(),
            1 => Observable::pair_correlation(phi, n).unwrap(),
            _ => Observable::weighted_sup(phi, vec![1.0 / n as f64; n]).unwrap(),
        };
        let p = k.padded(extra);
        prop_assert_eq!(p.arity(), n + extra);
        let mut pts: Vec<Point> = xs[..n + extra].iter().map(|&x| Point::scalar(x)).collect();
        prop_assert_eq!(k.evaluate(&pts[..n]).to_bits(), p.evaluate(&pts).to_bits());
        prop_assert!(p.holder_constants()[n..].iter().all(|&l| l == 0.0));
        prop_assert_eq!(&p.holder_constants()[..n], k.holder_constants());
        // Coordinates with zero constant do not influence the value.
        let before = p.evaluate(&pts);
        for j in n..n + extra {
            pts[j] = Point::scalar(1.0 - pts[j].x);
        }
        prop_assert_eq!(before.to_bits(), p.evaluate(&pts).to_bits());
    }

    #[test]
    fn scaling_multiplies_constants(c in -5.0f64..5.0, n in 1usize..6) {
        let k = Observable::birkhoff(SiteFunction::identity(), n).unwrap();
        let s = k.scaled(c);
        for (a, b) in k.holder_constants().iter().zip(s.holder_constants()) {
            prop_assert!((b - c.abs() * a).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn variance_is_nonnegative(seed in any::<u64>(), idx in 0usize..5, n in 1usize..20) {
        let sys = system(idx);
        let k = Observable::birkhoff(SiteFunction::cos2pi(), n).unwrap();
        let spec = EnsembleSpec::new(sys, 100, seed).with_burn_in(50);
        let v = ergovar::montecarlo::estimate_variance(&k, &spec).unwrap();
        prop_assert!(v.value >= 0.0);
        prop_assert!(v.std_error >= 0.0);
    }

    #[test]
    fn separation_is_monotone_in_horizon(shared in prop::collection::vec(0u8..2, 0..12), a in prop::collection::vec(0u8..2, 1..12), b in prop::collection::vec(0u8..2, 1..12), h in 1usize..40) {
        let t = half_tower();
        let mut za = vec![0u8];
        za.extend(&shared);
        let mut zb = za.clone();
        za.extend(&a);
        zb.extend(&b);
        let (x, y) = (SymbolicPoint::new(za, 0, 0).unwrap(), SymbolicPoint::new(zb, 0, 0).unwrap());
        let Ok(short) = t.separation_time(&x, &y, h) else { return Ok(()) };
        let long = t.separation_time(&x, &y, 2 * h).unwrap();
        match short {
            Separation::Exact(s) => prop_assert_eq!(long, Separation::Exact(s)),
            Separation::AtLeast(hh) => {
                prop_assert_eq!(hh, h);
                match long {
                    Separation::Exact(s) => prop_assert!(s > h),
                    Separation::AtLeast(l) => prop_assert_eq!(l, 2 * h),
                }
            }
        }
        prop_assert_eq!(long.truncated(h), short);
    }

    #[test]
    fn separation_is_at_least_return_time(r in 1usize..20, a in prop::collection::vec(0u8..2, 0..10), b in prop::collection::vec(0u8..2, 0..10)) {
        // Base [0,1/2): the branch with return time r is the cylinder 0 1^{r-1} 0.
        let t = half_tower();
        let mut word = vec![0u8];
        word.extend(std::iter::repeat_n(1u8, r - 1));
        word.push(0);
        let (mut wa, mut wb) = (word.clone(), word);
        wa.extend(&a);
        wb.extend(&b);
        let (x, y) = (SymbolicPoint::new(wa, 0, 0).unwrap(), SymbolicPoint::new(wb, 0, 0).unwrap());
        prop_assert_eq!(t.return_time_of(&x).unwrap(), r);
        match t.separation_time(&x, &y, 200).unwrap() {
            Separation::Exact(s) => prop_assert!(s >= r, "s = {} < R = {}", s, r),
            Separation::AtLeast(_) => {}
        }
    }

    #[test]
    fn dyadic_arithmetic_is_exact(p in 0u64..1 << 40, q in 0u64..1 << 40, e in 40u32..80) {
        let a = Dyadic::new(p as u128, e);
        let b = Dyadic::new(q as u128, e);
        let s = a.add(b);
        prop_assert_eq!(s.checked_sub(b), Some(a));
        let text = s.to_string();
        prop_assert_eq!(text.parse::<Dyadic>().unwrap(), s);
    }
}
