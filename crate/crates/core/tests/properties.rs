use fbslab::elliptic::{harmonic_replacement, region_interior};
use fbslab::energy::{energy, rescale_growth, Problem, Region};
use fbslab::estimators::dini_sum;
use fbslab::field::{
    Ball, CoefficientField, CoefficientSpec, ExponentField, FieldSpec, ForcingField, Grid,
    ModulusOfContinuity, ScalarField,
};
use fbslab::minimize::{minimize, MinimizeOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(g: Grid, seed: u64, lo: f64, hi: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..g.node_count()).map(|_| rng.random_range(lo..hi)).collect();
    ScalarField::new(g, v).unwrap()
}

fn scaled(u: &ScalarField, t: f64) -> ScalarField {
    ScalarField::new(*u.grid(), u.values().iter().map(|v| t * v).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bisection_inverse_is_leftmost(
        steps in prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 1..8),
        frac in 0.01f64..0.99,
    ) {
        let mut t = vec![0.0];
        let mut w = vec![0.0];
        for (dt, dw) in steps {
            t.push(t.last().unwrap() + dt);
            w.push(w.last().unwrap() + dw);
        }
        let top = *w.last().unwrap();
        prop_assume!(top > 0.0);
        let omega = ModulusOfContinuity::Tabulated { t, omega: w };
        omega.validate().unwrap();
        let nu = frac * top;
        let x = omega.inverse(nu).unwrap();
        prop_assert!(omega.eval(x) >= nu * (1.0 - 1e-12));
        prop_assert!(omega.eval(x * (1.0 - 1e-9)) < nu);
    }

    #[test]
    fn power_inverse_roundtrip(coeff in 0.1f64..10.0, exponent in 0.1f64..3.0, nu in 1e-6f64..5.0) {
        let omega = ModulusOfContinuity::power(coeff, exponent);
        let x = omega.inverse(nu).unwrap();
        prop_assert!((omega.eval(x) - nu).abs() <= 1e-12 * nu);
        let hi = 2.0 * x + 1.0;
        let b = omega.inverse_by_bisection(nu, hi);
        prop_assert!((b - x).abs() <= 1e-12 * hi);
    }

    #[test]
    fn power_dini_sum_is_geometric(coeff in 0.1f64..5.0, exponent in 0.25f64..2.0, gamma0 in 0.0f64..1.9) {
        let q = (-exponent).exp2();
        let exact = coeff * q / (1.0 - q);
        let r = dini_sum(&ModulusOfContinuity::power(coeff, exponent), gamma0).unwrap();
        prop_assert!((r.sum - exact).abs() <= 1e-10 * exact.max(1.0));
        prop_assert!((r.log2m - 2.0 / (2.0 - gamma0) * r.sum).abs() <= 1e-12 * r.log2m.max(1.0));
    }

    #[test]
    fn energy_is_nonnegative_and_homogeneous(seed in any::<u64>(), t in 0.1f64..4.0, gamma in 0.0f64..1.9) {
        let g = Grid::cube(2, 9).unwrap();
        let a = CoefficientSpec::Random { lo: 0.5, hi: 2.0, seed }.sample(&g, 0.5).unwrap();
        let lam = ForcingField::constant(g, 1.5).unwrap();
        let gam = ExponentField::constant(g, gamma).unwrap();
        let u = random_field(g, seed ^ 1, 0.0, 1.0);
        let e = energy(&u, &a, &lam, &gam, &Region::Whole).unwrap();
        let et = energy(&scaled(&u, t), &a, &lam, &gam, &Region::Whole).unwrap();
        prop_assert!(e.dirichlet >= 0.0 && e.singular >= 0.0);
        prop_assert!((e.total - e.dirichlet - e.singular).abs() <= 1e-12 * e.total.max(1.0));
        prop_assert!((et.dirichlet - t * t * e.dirichlet).abs() <= 1e-10 * et.dirichlet.max(1e-12));
        prop_assert!((et.singular - t.powf(gamma) * e.singular).abs() <= 1e-10 * et.singular.max(1e-12));
    }

    #[test]
    fn energy_ignores_sign_of_nonpositive_part(seed in any::<u64>()) {
        let g = Grid::cube(1, 33).unwrap();
        let a = CoefficientField::identity(g, 1.0).unwrap();
        let lam = ForcingField::constant(g, 2.0).unwrap();
        let gam = ExponentField::constant(g, 0.0).unwrap();
        let u = random_field(g, seed, -1.0, 1.0);
        let e = energy(&u, &a, &lam, &gam, &Region::Whole).unwrap();
        let h = g.max_spacing();
        let positive = u.values().iter().enumerate().map(|(i, &v)| {
            let w = if i == 0 || i == 32 { 0.5 * h } else { h };
            if v > 0.0 { w } else { 0.0 }
        }).sum::<f64>();
        prop_assert!((e.singular - 2.0 * positive).abs() <= 1e-12);
    }

    #[test]
    fn minimizer_is_truncated_and_beats_perturbations(seed in any::<u64>(), gamma in 0.0f64..1.9) {
        let g = Grid::cube(1, 17).unwrap();
        let p = Problem::new(
            CoefficientSpec::Random { lo: 0.5, hi: 2.0, seed }.sample(&g, 0.5).unwrap(),
            FieldSpec::Random { lo: 0.0, hi: 3.0, seed: seed ^ 2 }.sample_forcing(&g, 3.0).unwrap(),
            ExponentField::constant(g, gamma).unwrap(),
        ).unwrap();
        let phi = random_field(g, seed ^ 3, 0.0, 1.0);
        let (u, report) = minimize(&phi, &p, &MinimizeOptions::default()).unwrap();
        let top = phi.values()[0].max(phi.values()[16]);
        prop_assert!(u.values().iter().all(|&v| (0.0..=top).contains(&v)));
        prop_assert!(report.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        let e = p.energy(&u, &Region::Whole).unwrap().total;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        for _ in 0..20 {
            let mut v = u.values().to_vec();
            for x in v.iter_mut().take(16).skip(1) {
                *x = (*x + rng.random_range(-0.1..0.1)).max(0.0);
            }
            let v = ScalarField::new(g, v).unwrap();
            prop_assert!(e <= p.energy(&v, &Region::Whole).unwrap().total + 1e-10);
        }
    }

    #[test]
    fn replacement_obeys_maximum_principle(seed in any::<u64>(), radius in 0.4f64..0.9) {
        let g = Grid::cube(2, 13).unwrap();
        let a = CoefficientSpec::Random { lo: 0.5, hi: 2.0, seed }.sample(&g, 0.5).unwrap();
        let u = random_field(g, seed ^ 5, -1.0, 1.0);
        let ball = Ball::new(&[0.0, 0.0], radius).unwrap();
        let r = harmonic_replacement(&u, &a, &ball).unwrap();
        let inside = region_interior(&g, &ball);
        let outside: Vec<f64> = (0..g.node_count())
            .filter(|i| !inside.contains(i))
            .map(|i| u.values()[i])
            .collect();
        let lo = outside.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = outside.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &i in &inside {
            let v = r.h.values()[i];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn growth_admissibility_sign(gamma in 0.0f64..3.0, beta in 1.01f64..10.0) {
        let sign = gamma * beta - 2.0 * (beta - 1.0);
        prop_assume!(sign.abs() > 1e-9);
        let g = Grid::cube(1, 17).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * x[0]).unwrap();
        let r = rescale_growth(
            &u,
            &CoefficientField::identity(g, 1.0).unwrap(),
            &ForcingField::constant(g, 1.0).unwrap(),
            &ExponentField::constant(g, gamma).unwrap(),
            0.5,
            beta,
        ).unwrap();
        prop_assert_eq!(r.admissible(), Some(sign > 0.0));
    }
}
