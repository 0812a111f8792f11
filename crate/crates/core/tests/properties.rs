use proptest::prelude::*;
use shelab::config::DEFAULT_CONFIG;
use shelab::{apply_m, semigroup_apply, Boundary, ExperimentConfig, RandomField, ReactionFn, SpaceTimeGrid, YosidaApprox};

fn small_grid() -> SpaceTimeGrid {
    SpaceTimeGrid::new(0.25, 32, 4.0, 32, Boundary::Periodic).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resolvent_is_nonexpansive(lambda in 1e-3f64..1.0, u in -20.0f64..20.0, v in -20.0f64..20.0) {
        for f in [ReactionFn::cubic(), ReactionFn::exponential()] {
            let y = YosidaApprox::new(&f, lambda).unwrap();
            let (ju, jv) = (y.resolvent(u).unwrap(), y.resolvent(v).unwrap());
            prop_assert!((ju - jv).abs() <= (u - v).abs() * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn periodic_semigroup_keeps_mass_and_sup_bound(
        values in prop::collection::vec(-5.0f64..5.0, 32),
        t in 1e-4f64..2.0,
    ) {
        let grid = small_grid();
        let out = semigroup_apply(&values, t, &grid).unwrap();
        let mass_in: f64 = values.iter().sum();
        let mass_out: f64 = out.iter().sum();
        prop_assert!((mass_in - mass_out).abs() <= 1e-9 * (1.0 + mass_in.abs()));
        let sup_in = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup_out = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(sup_out <= sup_in + 1e-9);
    }

    #[test]
    fn map_commutes_with_periodic_shifts(
        amp in 0.0f64..2.0,
        phase in 0.0f64..6.3,
        shift in 1usize..32,
    ) {
        let grid = small_grid();
        let f = ReactionFn::cubic();
        let n = grid.n_x();
        let z = RandomField::from_fn(&grid, |t, x| amp * (x + phase).sin() * (1.0 + t) + 0.3 * (2.0 * x).cos());
        let mut shifted = RandomField::zeros(&grid);
        for k in 0..grid.n_slices() {
            for i in 0..n {
                shifted.slice_mut(k)[i] = z.at(k, (i + shift) % n);
            }
        }
        let m = apply_m(&z, &f, &grid).unwrap().solution;
        let ms = apply_m(&shifted, &f, &grid).unwrap().solution;
        for k in 0..grid.n_slices() {
            for i in 0..n {
                prop_assert!((ms.at(k, i) - m.at(k, (i + shift) % n)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn config_round_trips_with_stable_hash(theta in 0.05f64..0.6, eta in 0.01f64..0.45, seed in 0u64..=i64::MAX as u64) {
        let overrides = vec![
            format!("weight.theta={theta}"),
            format!("noise.eta={eta}"),
            format!("run.base_seed={seed}"),
        ];
        let cfg = ExperimentConfig::parse_with_overrides(DEFAULT_CONFIG, &overrides).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        prop_assert_eq!(cfg.hash(), again.hash());
        prop_assert_eq!(again.run.base_seed, seed);
        prop_assert!(cfg.validate().is_valid());
    }
}
