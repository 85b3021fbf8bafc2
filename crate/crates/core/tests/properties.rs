//! Property tests for model, solver, filter and simulator invariants.

use fadmm::filters::{self, CtmcFilter, FilterState};
use fadmm::hjb_fd::{self, GridSpec};
use fadmm::model::{self, Mark, ModelParams};
use fadmm::sim::{self, Side, Strategy};
use fadmm::solvers::{self, StrategyKind};
use proptest::prelude::*;

fn params(q: f64, gamma: f64, eta: f64) -> ModelParams {
    let mut p = ModelParams::baseline().with_q_weight(q);
    p.gamma = gamma;
    p.eta = eta;
    p.recalibrated(30.0).unwrap()
}

fn capped(q: f64, gamma: f64, lo: f64, hi: f64) -> ModelParams {
    ModelParams {
        cap_lo: lo,
        cap_hi: hi,
        ..params(q, gamma, 10.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn intensities_decrease_in_own_displacement(
        q in 0.0f64..=1.0, gamma in 0.0f64..4.0, u in -2.0f64..2.0,
        d in -1.0f64..3.0, step in 1e-3f64..1.0,
    ) {
        let p = params(q, gamma, 10.0);
        prop_assert!(model::intensity_ask(&p, u, 0, d + step).unwrap() < model::intensity_ask(&p, u, 0, d).unwrap());
        prop_assert!(model::intensity_bid(&p, u, 0, d + step).unwrap() < model::intensity_bid(&p, u, 0, d).unwrap());
    }

    #[test]
    fn ask_falls_and_bid_rises_with_the_fad(
        q in 0.0f64..=1.0, gamma in 0.0f64..4.0, u in -2.0f64..2.0,
        du in 0.0f64..1.0, d in -1.0f64..3.0, lo in -1.0f64..0.0, hi in 0.0f64..1.0,
    ) {
        for p in [params(q, gamma, 10.0), capped(q, gamma, lo, hi)] {
            prop_assert!(model::intensity_ask(&p, u + du, 0, d).unwrap() <= model::intensity_ask(&p, u, 0, d).unwrap());
            prop_assert!(model::intensity_bid(&p, u + du, 0, d).unwrap() >= model::intensity_bid(&p, u, 0, d).unwrap());
        }
    }

    #[test]
    fn intensities_are_continuous_in_the_fad(
        q in 0.0f64..=1.0, gamma in 0.0f64..4.0, u in -2.0f64..2.0, lo in -1.0f64..0.0, hi in 0.0f64..1.0,
    ) {
        let p = capped(q, gamma, lo, hi);
        let h = 1e-9;
        for f in [model::intensity_ask, model::intensity_bid] {
            let (a, b) = (f(&p, u, 0, 0.3).unwrap(), f(&p, u + h, 0, 0.3).unwrap());
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn caps_bound_the_informed_factors(
        q in 0.0f64..=1.0, gamma in 0.0f64..4.0, u in -50.0f64..50.0, lo in -1.0f64..0.0, hi in 0.0f64..1.0,
    ) {
        let p = capped(q, gamma, lo, hi);
        let psi = p.psi_informed;
        let tol = 1e-12 * psi;
        let ask = p.informed_ask_factor(u);
        let bid = p.informed_bid_factor(u);
        prop_assert!(ask <= psi * (-gamma * lo).exp() + tol);
        prop_assert!(bid <= psi * (gamma * hi).exp() + tol);
        prop_assert!(ask >= 0.0 && bid >= 0.0);
    }

    #[test]
    fn calibration_is_homogeneous(q in 0.05f64..=1.0, gamma in 0.1f64..4.0, extra in 0.1f64..40.0) {
        let p = params(q, gamma, 10.0);
        let base = p.phi_uninformed * p.horizon;
        let one = model::calibrate_psi(&p, base + extra).unwrap();
        let two = model::calibrate_psi(&p, base + 2.0 * extra).unwrap();
        prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two);
    }

    #[test]
    fn spread_is_free_of_inventory_and_fad(
        q in 0.0f64..=1.0, gamma in 0.0f64..3.0, t in 0.0f64..=1.0,
        inv in -19i64..19, u in -1.5f64..1.5, mu in -0.2f64..0.2,
    ) {
        let mut p = params(q, gamma, 10.0);
        p.mu = mu;
        let c = solvers::solve_fi_coefficients(&p, 201).unwrap();
        let row = c.at(t).unwrap();
        let qt = solvers::quote(&c, &p, t, inv, u).unwrap();
        let spread = 2.0 / p.k_decay - 2.0 * row.a;
        prop_assert!((qt.delta_a + qt.delta_b - spread).abs() <= 1e-12 * (1.0 + spread.abs()));
    }

    #[test]
    fn quotes_are_ordered_in_inventory(
        q in 0.0f64..=1.0, gamma in 0.0f64..3.0, t in 0.0f64..=1.0, inv in -18i64..18, u in -1.5f64..1.5,
    ) {
        let p = params(q, gamma, 10.0);
        let c = solvers::solve_fi_coefficients(&p, 201).unwrap();
        prop_assert!(c.a.iter().all(|&a| a <= 0.0));
        let lo = solvers::quote(&c, &p, t, inv, u).unwrap();
        let hi = solvers::quote(&c, &p, t, inv + 1, u).unwrap();
        prop_assert!(hi.delta_a <= lo.delta_a);
        prop_assert!(hi.delta_b >= lo.delta_b);
    }

    #[test]
    fn variance_curve_rises_to_a_fixed_point(q in 0.05f64..0.99, eta in 1.0f64..20.0) {
        let p = params(q, 1.0, eta);
        let v = filters::solve_variance_curve(&p, 401).unwrap();
        prop_assert!(v.p_hat.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        let star = filters::stationary_variance(p.q_weight, p.p_weight, eta);
        prop_assert!(*v.p_hat.last().unwrap() <= star + 1e-12);
        prop_assert!(filters::variance_rhs(star, p.q_weight, p.p_weight, eta).abs() < 1e-8);
    }

    #[test]
    fn kalman_mean_scales_with_innovations(
        q in 0.0f64..=1.0, incs in prop::collection::vec(-0.1f64..0.1, 1..60), scale in -3.0f64..3.0,
    ) {
        let p = params(q, 1.0, 10.0);
        let v = filters::solve_variance_curve(&p, 101).unwrap();
        let dt = 1e-3;
        let run = |c: f64| {
            incs.iter().fold(FilterState::initial(), |s, &ds| {
                filters::kalman_step(s, c * ds, dt, &p, &v).unwrap()
            }).u_hat
        };
        let (one, many) = (run(1.0), run(scale));
        prop_assert!((many - scale * one).abs() <= 1e-12 * (1.0 + many.abs()));
    }

    #[test]
    fn ctmc_weights_stay_normalised_and_scale_free(
        arrivals in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200),
        c in 1e-3f64..1e3, rate in 0.1f64..20.0,
    ) {
        let p = ModelParams::baseline();
        let th = 0.25;
        let g = vec![vec![-rate, rate], vec![rate, -rate]];
        let mut f = CtmcFilter::new(&p, vec![-th, th], g, vec![1.0, 1.0]).unwrap();
        let dt = 1e-3;
        for &(a, b) in &arrivals {
            let mut scaled = f.clone();
            scaled.delta.iter_mut().for_each(|d| *d *= c);
            let next = filters::ctmc_filter_step(&f, dt, a, b).unwrap();
            let next_scaled = filters::ctmc_filter_step(&scaled, dt, a, b).unwrap();
            let post = filters::ctmc_posteriors(&next);
            prop_assert!((post.pi.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for (x, y) in next.delta.iter().zip(&next_scaled.delta) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            f = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fi_and_pi_share_quote_slopes(q in 0.0f64..=1.0, gamma in 0.0f64..3.0, eta in 2.0f64..15.0) {
        let p = params(q, gamma, eta);
        let fi = solvers::solve_fi_coefficients(&p, 2001).unwrap();
        let v = filters::solve_variance_curve(&p, 2001).unwrap();
        let pi = solvers::solve_pi_coefficients(&p, &v, 2001).unwrap();
        for i in 0..fi.time_grid.len() {
            prop_assert!((fi.a[i] - pi.a[i]).abs() < 1e-10);
            prop_assert!((fi.b0[i] - pi.b0[i]).abs() < 1e-10);
            prop_assert!((fi.b1[i] - pi.b1[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn simulated_accounting_is_exact(seed in any::<u64>(), idx in 0u64..1000, q in 0.0f64..=1.0) {
        let p = params(q, 1.0, 10.0);
        let trio = Strategy::standard_trio(&p, 201, Mark::Mid).unwrap();
        for r in sim::simulate_paths_lockstep(&p, &trio, 200, seed, idx).unwrap() {
            let cash: f64 = r.fills.iter().map(|f| match f.side {
                Side::Ask => f.price,
                Side::Bid => -f.price,
            }).sum();
            let bids = r.fills.iter().filter(|f| f.side == Side::Bid).count() as i64;
            let asks = r.fills.len() as i64 - bids;
            prop_assert_eq!(*r.q.last().unwrap(), r.q0 + bids - asks);
            prop_assert!((r.x.last().unwrap() - r.x0 - cash).abs() < 1e-9 * (1.0 + cash.abs()));
            let mid = model::performance(&r, &p, Mark::Mid).unwrap();
            let fun = model::performance(&r, &p, Mark::Fundamental).unwrap();
            let gap = *r.q.last().unwrap() as f64 * p.fad_scale() * r.u.last().unwrap();
            prop_assert!((mid - fun - gap).abs() < 1e-9 * (1.0 + mid.abs()));
        }
    }
}

fn fd_spec() -> GridSpec {
    GridSpec {
        n_t: 200,
        n_u: 41,
        u_max: 1.5,
        n_snapshots: 11,
    }
}

fn fd_params(p: ModelParams) -> ModelParams {
    ModelParams {
        q_min: -6,
        q_max: 6,
        ..p
    }
}

#[test]
fn fd_value_is_point_symmetric_without_drift() {
    for q in [0.0, 0.6] {
        let p = fd_params(params(q, 1.0, 10.0));
        let g = hjb_fd::solve_hjb_fd(&p, StrategyKind::Fi, &fd_spec()).unwrap();
        let n_u = g.u_nodes.len();
        for ti in 0..g.t_nodes.len() {
            for &inv in &g.q_levels {
                for ui in 0..n_u {
                    let a = g.at(ti, inv, ui);
                    let b = g.at(ti, -inv, n_u - 1 - ui);
                    assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn fd_value_without_informed_flow_is_symmetric_in_inventory() {
    let mut p = fd_params(ModelParams::baseline().with_q_weight(0.0));
    p.psi_informed = 0.0;
    let g = hjb_fd::solve_hjb_fd(&p, StrategyKind::Fi, &fd_spec()).unwrap();
    for ti in 0..g.t_nodes.len() {
        for &inv in &g.q_levels {
            for ui in 0..g.u_nodes.len() {
                let a = g.at(ti, inv, ui) + p.term_penalty * (inv * inv) as f64;
                let b = g.at(ti, -inv, ui) + p.term_penalty * (inv * inv) as f64;
                assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}

#[test]
fn fd_quotes_satisfy_the_first_order_condition() {
    let p = fd_params(ModelParams::baseline());
    let g = hjb_fd::solve_hjb_fd(&p, StrategyKind::Fi, &fd_spec()).unwrap();
    let ti = 0;
    for &inv in &g.q_levels[1..g.q_levels.len() - 1] {
        for ui in 0..g.u_nodes.len() {
            let u = g.u_nodes[ui];
            let qt = hjb_fd::fd_quotes(&g, &p, g.t_nodes[ti], inv, u).unwrap();
            let jump = g.at(ti, inv - 1, ui) - g.at(ti, inv, ui);
            assert!((qt.delta_a + jump - 1.0 / p.k_decay).abs() < 1e-9);
        }
    }
}
