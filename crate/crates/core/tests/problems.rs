//! Benchmark surfaces: ground truths and the noisy/noiseless optimum flips.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ubo::harness::integrated_outcome;
use ubo::problems::{
    gm_eval, gm_mode, michalewicz4_eval, noisy_query, rkhs_eval, GmMode, Problem, Rect, RoverWorld, GM_BROAD_CENTER,
    GM_NARROW_CENTER, ROVER_DETOUR_ROUTE, ROVER_SLIT_ROUTE,
};
use ubo::sobol::Sobol;

fn argmax_1d(f: impl Fn(f64) -> f64, n: usize) -> (f64, f64) {
    (0..n).map(|i| i as f64 / (n - 1) as f64).map(|x| (x, f(x))).fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
}

#[test]
fn rkhs_noiseless_peak_is_narrow_but_integrated_peak_is_broad() {
    let (x_star, f_star) = argmax_1d(rkhs_eval, 1_000_000);
    assert!((x_star - 0.82).abs() < 0.01, "grid argmax {x_star}");
    assert!(f_star > rkhs_eval(0.2) + 0.1, "peak {f_star}");

    let p = Problem::rkhs();
    let g = |x: f64| integrated_outcome(&p, &[x], 4000, &mut ChaCha8Rng::seed_from_u64(1));
    let (g_star, _) = argmax_1d(g, 401);
    assert!((g_star - 0.2).abs() < 0.05, "integrated argmax {g_star}");
}

#[test]
fn gm_argmax_moves_to_the_broad_mode_under_noise() {
    let n = 401;
    let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            let x = [i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64];
            let v = gm_eval(x);
            if v > best.1 {
                best = (x, v);
            }
        }
    }
    // the broad mode's tail tilts the ridge, so only x is pinned tightly
    assert_eq!(gm_mode(&best.0), GmMode::Narrow, "grid argmax {:?}", best.0);
    assert!((best.0[0] - GM_NARROW_CENTER[0]).abs() <= 0.0025 && (best.0[1] - GM_NARROW_CENTER[1]).abs() <= 0.1);

    let p = Problem::gm2d();
    let n = 41;
    let mut best = (vec![0.0, 0.0], f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            let x = vec![i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64];
            let v = integrated_outcome(&p, &x, 2000, &mut ChaCha8Rng::seed_from_u64(2));
            if v > best.1 {
                best = (x, v);
            }
        }
    }
    // the ridge is thinner than the grid, so also score its exact center
    let ridge = integrated_outcome(&p, &GM_NARROW_CENTER, 20_000, &mut ChaCha8Rng::seed_from_u64(3));
    let broad = integrated_outcome(&p, &GM_BROAD_CENTER, 20_000, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(gm_mode(&best.0), GmMode::Broad, "integrated argmax {:?}", best.0);
    assert!(broad > ridge, "broad {broad} vs ridge {ridge}");
}

#[test]
fn michalewicz_dense_sobol_reference() {
    let mut s = Sobol::new(4);
    let best = (0..1_000_000).map(|_| s.next_point()).map(|p| michalewicz4_eval([p[0], p[1], p[2], p[3]])).fold(0.0, f64::max);
    // global maximum of the 4-D function is about 3.6988
    assert!(best > 3.0 && best <= 3.6989, "Sobol reference {best}");
}

#[test]
fn straight_line_through_free_space_costs_its_length() {
    let w = RoverWorld::default();
    let (s, g) = (w.start, w.goal);
    let lerp = |t: f64| [s[0] + t * (g[0] - s[0]), s[1] + t * (g[1] - s[1])];
    let (c1, c2) = (lerp(1.0 / 3.0), lerp(2.0 / 3.0));
    let len = ((g[0] - s[0]).powi(2) + (g[1] - s[1]).powi(2)).sqrt();
    let cost = w.path_cost(&[c1[0], c1[1], c2[0], c2[1]], w.segments);
    assert!((cost - len).abs() < 1e-3, "cost {cost} vs length {len}");
}

#[test]
fn crossing_an_obstacle_pays_the_penalty() {
    let world = RoverWorld {
        start: [0.1, 0.5],
        goal: [0.9, 0.5],
        obstacles: vec![Rect::new(0.4, 0.3, 0.6, 0.7)],
        slopes: vec![],
        slope_factor: 4.0,
        obstacle_penalty: 50.0,
        segments: 200,
    };
    let line = [0.1 + 0.8 / 3.0, 0.5, 0.1 + 1.6 / 3.0, 0.5];
    let cost = world.path_cost(&line, world.segments);
    let free = RoverWorld { obstacles: vec![], ..world.clone() }.path_cost(&line, world.segments);
    assert!(cost - free >= 50.0 * 0.2 * 0.9, "excess {}", cost - free);
}

#[test]
fn fine_discretization_agrees_with_default_resolution() {
    let w = RoverWorld::default();
    let probes = [ROVER_SLIT_ROUTE, ROVER_DETOUR_ROUTE, [0.3, 0.9, 0.7, 0.9], [0.2, 0.2, 0.8, 0.8], [0.5, 0.05, 0.5, 0.95]];
    for params in probes {
        let coarse = w.path_cost(&params, w.segments);
        let fine = w.path_cost(&params, 100_000);
        assert!(((coarse - fine) / fine).abs() < 0.005, "{params:?}: {coarse} vs {fine}");
    }
}

#[test]
fn rover_route_preference_flips_with_noise_level() {
    let score = |sigma: f64, x: &[f64; 4]| {
        let p = Problem::rover().with_sigma(sigma);
        integrated_outcome(&p, x, 20_000, &mut ChaCha8Rng::seed_from_u64(4))
    };
    let (slit_lo, detour_lo) = (score(0.015, &ROVER_SLIT_ROUTE), score(0.015, &ROVER_DETOUR_ROUTE));
    let (slit_hi, detour_hi) = (score(0.02, &ROVER_SLIT_ROUTE), score(0.02, &ROVER_DETOUR_ROUTE));
    assert!(slit_lo > detour_lo, "σ=0.015: slit {slit_lo} vs detour {detour_lo}");
    assert!(detour_hi > slit_hi, "σ=0.02: slit {slit_hi} vs detour {detour_hi}");
    // the slit is the shorter route when there is no noise
    let w = RoverWorld::default();
    assert!(w.path_cost(&ROVER_SLIT_ROUTE, w.segments) < w.path_cost(&ROVER_DETOUR_ROUTE, w.segments));
}

#[test]
fn rover_world_serializes_to_json() {
    let w = RoverWorld::default();
    let text = serde_json::to_string(&w).unwrap();
    assert_eq!(serde_json::from_str::<RoverWorld>(&text).unwrap(), w);
}

#[test]
fn noisy_queries_average_to_the_integrated_outcome() {
    let p = Problem::gm2d();
    let x = [0.7, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let draws: Vec<f64> = (0..n).map(|_| noisy_query(&p, &x, &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let reference = integrated_outcome(&p, &x, 200_000, &mut ChaCha8Rng::seed_from_u64(6));
    assert!((mean - reference).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {reference}");
}

#[test]
fn noiseless_evaluation_is_deterministic() {
    for name in Problem::NAMES {
        let p = Problem::by_name(name).unwrap();
        let x = vec![0.37; p.dim];
        assert_eq!(p.eval(&x).to_bits(), p.eval(&x).to_bits());
        let a = noisy_query(&p, &x, &mut ChaCha8Rng::seed_from_u64(7));
        let b = noisy_query(&p, &x, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
