//! Benchmark objectives on the unit cube, all maximized.
//!
//! The constant tables are fixed here. Their qualitative structure matters more than the
//! exact values: every noisy benchmark has a tall unstable optimum and a lower stable one,
//! so plain and noise-integrated optima disagree at σ = 0.02.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UboError};

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A named objective with its experiment preset.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub dim: usize,
    pub input_sigma: f64,
    pub init_samples: usize,
    pub budget: usize,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("input_sigma", &self.input_sigma)
            .field("init_samples", &self.init_samples)
            .field("budget", &self.budget)
            .finish()
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        input_sigma: f64,
        init_samples: usize,
        budget: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), dim, input_sigma, init_samples, budget, eval: Arc::new(eval) }
    }

    /// Noiseless objective value.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.input_sigma = sigma;
        self
    }

    pub fn rkhs() -> Self {
        Self::new("rkhs", 1, 0.02, 5, 40, |x| rkhs_eval(x[0]))
    }

    pub fn gm2d() -> Self {
        Self::new("gm2d", 2, 0.02, 20, 40, |x| gm_eval([x[0], x[1]]))
    }

    pub fn michalewicz4() -> Self {
        Self::new("michalewicz4", 4, 0.02, 30, 40, |x| michalewicz4_eval([x[0], x[1], x[2], x[3]]))
    }

    pub fn rover() -> Self {
        Self::rover_with(RoverWorld::default())
    }

    pub fn rover_with(world: RoverWorld) -> Self {
        Self::new("rover", 4, 0.02, 30, 40, move |x| rover_cost(&[x[0], x[1], x[2], x[3]], &world))
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "rkhs" => Ok(Self::rkhs()),
            "gm2d" | "gm" => Ok(Self::gm2d()),
            "michalewicz4" | "michalewicz" => Ok(Self::michalewicz4()),
            "rover" => Ok(Self::rover()),
            other => Err(UboError::UnknownProblem(other.to_string())),
        }
    }

    pub const NAMES: [&'static str; 4] = ["rkhs", "gm2d", "michalewicz4", "rover"];
}

/// Clamps every coordinate to `[0,1]`.
pub fn clamp_to_domain(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Evaluates the objective at `x + ε`, `ε ~ N(0, σ²I)`, clamped to the domain.
pub fn noisy_query<R: Rng + ?Sized>(problem: &Problem, x: &[f64], rng: &mut R) -> f64 {
    if problem.input_sigma == 0.0 {
        return problem.eval(x);
    }
    let mut p: Vec<f64> = x
        .iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(rng);
            v + problem.input_sigma * e
        })
        .collect();
    clamp_to_domain(&mut p);
    problem.eval(&p)
}

/// Squared-exponential bumps `(amplitude, center, lengthscale)` of the 1-D RKHS function:
/// a tall narrow peak near 0.82 and a lower broad one near 0.2.
pub const RKHS_BUMPS: [(f64, f64, f64); 5] = [
    (0.70, 0.20, 0.090),
    (0.25, 0.45, 0.060),
    (0.30, 0.80, 0.150),
    (0.60, 0.82, 0.010),
    (-0.25, 0.65, 0.050),
];

pub fn rkhs_eval(x: f64) -> f64 {
    RKHS_BUMPS.iter().map(|&(a, c, l)| a * (-(x - c) * (x - c) / (2.0 * l * l)).exp()).sum()
}

/// Weighted bivariate normal component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Covariance `[[s_xx, s_xy], [s_xy, s_yy]]`.
    pub cov: [[f64; 2]; 2],
}

impl GaussianComponent {
    pub const fn isotropic(weight: f64, mean: [f64; 2], sd: f64) -> Self {
        Self { weight, mean, cov: [[sd * sd, 0.0], [0.0, sd * sd]] }
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        let [[a, b], [_, c]] = self.cov;
        let det = a * c - b * b;
        let (dx, dy) = (x[0] - self.mean[0], x[1] - self.mean[1]);
        let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        (-0.5 * q).exp() / (std::f64::consts::TAU * det.sqrt())
    }

    pub fn peak(&self) -> f64 {
        self.weight * self.density(self.mean)
    }
}

pub const GM_NARROW_CENTER: [f64; 2] = [0.72, 0.35];
pub const GM_BROAD_CENTER: [f64; 2] = [0.28, 0.68];

/// The 2-D mixture: a tall ridge that is razor thin along x, and a lower broad mode.
/// Under input noise the ridge averages out below the broad mode.
pub const GM_COMPONENTS: [GaussianComponent; 2] = [
    GaussianComponent {
        weight: 1.3 * std::f64::consts::TAU * 0.012 * 0.4,
        mean: GM_NARROW_CENTER,
        cov: [[0.012 * 0.012, 0.0], [0.0, 0.4 * 0.4]],
    },
    GaussianComponent::isotropic(0.78 * std::f64::consts::TAU * 0.25 * 0.25, GM_BROAD_CENTER, 0.25),
];

pub fn gm_eval_with(components: &[GaussianComponent], x: [f64; 2]) -> f64 {
    components.iter().map(|c| c.weight * c.density(x)).sum()
}

pub fn gm_eval(x: [f64; 2]) -> f64 {
    gm_eval_with(&GM_COMPONENTS, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GmMode {
    Narrow,
    Broad,
}

/// Mode whose center is nearest to `x`.
pub fn gm_mode(x: &[f64]) -> GmMode {
    let d = |c: [f64; 2]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
    if d(GM_NARROW_CENTER) <= d(GM_BROAD_CENTER) {
        GmMode::Narrow
    } else {
        GmMode::Broad
    }
}

/// Michalewicz function (m = 10) on `[0,1]^4` mapped to `[0,π]^4`, sign flipped for maximization.
pub fn michalewicz4_eval(x: [f64; 4]) -> f64 {
    michalewicz(&x.map(|v| v * std::f64::consts::PI))
}

/// `Σ sin(z_i)·sin(i z_i²/π)^20` on raw coordinates.
pub fn michalewicz(z: &[f64]) -> f64 {
    z.iter()
        .enumerate()
        .map(|(i, &zi)| zi.sin() * ((i as f64 + 1.0) * zi * zi / std::f64::consts::PI).sin().powi(20))
        .sum()
}

/// Axis-aligned rectangle `[x0,x1] × [y0,y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    #[inline]
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Terrain for the rover: obstacles, slopes and fixed endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverWorld {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub obstacles: Vec<Rect>,
    pub slopes: Vec<Rect>,
    pub slope_factor: f64,
    pub obstacle_penalty: f64,
    pub segments: usize,
}

impl Default for RoverWorld {
    /// Two routes from left to right: a short straight run through a slit of width 0.024
    /// between two blocks, and a longer detour over the upper block that crosses a slope.
    /// Under input noise of 0.015 the slit is still the better route; at 0.02 the detour is.
    fn default() -> Self {
        Self {
            start: [0.1, 0.5],
            goal: [0.9, 0.5],
            obstacles: vec![Rect::new(0.30, 0.000, 0.70, 0.488), Rect::new(0.30, 0.512, 0.70, 0.780)],
            slopes: vec![Rect::new(0.40, 0.78, 0.60, 1.00)],
            slope_factor: 4.0,
            obstacle_penalty: 50.0,
            segments: 200,
        }
    }
}

/// Control points `[c1x, c1y, c2x, c2y]` of a near-robust run through the slit.
pub const ROVER_SLIT_ROUTE: [f64; 4] = [0.13, 0.51, 0.0, 0.5];
/// Control points of a near-robust detour over the upper block.
pub const ROVER_DETOUR_ROUTE: [f64; 4] = [0.21, 0.99, 0.79, 0.99];

impl RoverWorld {
    #[inline]
    pub fn terrain_rate(&self, p: [f64; 2]) -> f64 {
        if self.obstacles.iter().any(|r| r.contains(p)) {
            self.obstacle_penalty
        } else if self.slopes.iter().any(|r| r.contains(p)) {
            self.slope_factor
        } else {
            1.0
        }
    }

    /// Control points of the cubic Bézier for a parameter vector.
    pub fn control_points(&self, params: &[f64; 4]) -> [[f64; 2]; 4] {
        [self.start, [params[0], params[1]], [params[2], params[3]], self.goal]
    }

    /// Path cost with an explicit polyline resolution. The terrain integral along each
    /// segment is exact: the segment is split where it crosses rectangle edges.
    pub fn path_cost(&self, params: &[f64; 4], segments: usize) -> f64 {
        let cps = self.control_points(params);
        let mut prev = bezier(&cps, 0.0);
        let mut cost = 0.0;
        let mut cuts = Vec::new();
        for s in 1..=segments {
            let p = bezier(&cps, s as f64 / segments as f64);
            cost += self.segment_cost(prev, p, &mut cuts);
            prev = p;
        }
        cost
    }

    fn segment_cost(&self, a: [f64; 2], b: [f64; 2], cuts: &mut Vec<f64>) -> f64 {
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if len == 0.0 {
            return 0.0;
        }
        cuts.clear();
        cuts.extend([0.0, 1.0]);
        for r in self.obstacles.iter().chain(&self.slopes) {
            for (lo, hi, o, v) in [(r.x0, r.x1, a[0], d[0]), (r.y0, r.y1, a[1], d[1])] {
                if v != 0.0 {
                    for edge in [lo, hi] {
                        let t = (edge - o) / v;
                        if t > 0.0 && t < 1.0 {
                            cuts.push(t);
                        }
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        let at = |t: f64| [a[0] + t * d[0], a[1] + t * d[1]];
        let rate: f64 = cuts.windows(2).map(|w| (w[1] - w[0]) * self.terrain_rate(at(0.5 * (w[0] + w[1])))).sum();
        len * rate
    }
}

/// Point on a cubic Bézier curve.
pub fn bezier(cps: &[[f64; 2]; 4], t: f64) -> [f64; 2] {
    let u = 1.0 - t;
    let b = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
    let mut p = [0.0; 2];
    for (w, c) in b.iter().zip(cps) {
        p[0] += w * c[0];
        p[1] += w * c[1];
    }
    p
}

/// Negated traversal cost of the trajectory (so larger is better).
pub fn rover_cost(params: &[f64; 4], world: &RoverWorld) -> f64 {
    -world.path_cost(params, world.segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rkhs_matches_definition_at_centers() {
        for &(_, c, _) in &RKHS_BUMPS {
            let direct: f64 = RKHS_BUMPS.iter().map(|&(a, cj, l)| a * (-(c - cj).powi(2) / (2.0 * l * l)).exp()).sum();
            assert!((rkhs_eval(c) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn rkhs_is_continuous() {
        for i in 0..10_000 {
            let x = i as f64 / 10_000.0;
            assert!((rkhs_eval(x + 1e-6) - rkhs_eval(x)).abs() < 1e-3);
        }
    }

    #[test]
    fn gm_density_at_mode_centers() {
        for c in &GM_COMPONENTS {
            let oracle = 1.0 / (std::f64::consts::TAU * (c.cov[0][0] * c.cov[1][1]).sqrt());
            assert!((c.density(c.mean) - oracle).abs() < 1e-9 * oracle);
        }
    }

    #[test]
    fn gm_order_invariant() {
        let mut rev = GM_COMPONENTS;
        rev.reverse();
        for x in [[0.1, 0.2], [0.72, 0.35], [0.5, 0.5]] {
            assert!((gm_eval(x) - gm_eval_with(&rev, x)).abs() < 1e-14);
        }
    }

    #[test]
    fn michalewicz_nonnegative_and_zero_at_origin() {
        assert_eq!(michalewicz4_eval([0.0; 4]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = [rng.random(), rng.random(), rng.random(), rng.random()];
            assert!(michalewicz4_eval(x) >= 0.0);
        }
    }

    #[test]
    fn michalewicz_two_dimensional_slice() {
        // published 2-D optimum z* = (2.20, 1.57) with value 1.8013
        let z = [2.20, 1.57];
        let oracle = 2.20f64.sin() * (2.20f64 * 2.20 / std::f64::consts::PI).sin().powi(20)
            + 1.57f64.sin() * (2.0 * 1.57f64 * 1.57 / std::f64::consts::PI).sin().powi(20);
        let x = [z[0] / std::f64::consts::PI, z[1] / std::f64::consts::PI, 0.0, 0.0];
        assert!((michalewicz4_eval(x) - oracle).abs() < 1e-10);
        assert!((oracle - 1.8013).abs() < 1e-3);
    }

    #[test]
    fn noisy_query_without_noise_is_exact() {
        let p = Problem::gm2d().with_sigma(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(noisy_query(&p, &[0.3, 0.4], &mut rng), gm_eval([0.3, 0.4]));
    }

    #[test]
    fn noisy_query_stays_in_domain_at_boundary() {
        let p = Problem::new("probe", 2, 0.05, 1, 1, |x| {
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            0.0
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            noisy_query(&p, &[0.0, 1.0], &mut rng);
        }
    }

    #[test]
    fn registry_knows_every_name() {
        for name in Problem::NAMES {
            let p = Problem::by_name(name).unwrap();
            assert_eq!(p.name, name);
            let x = vec![0.5; p.dim];
            assert!(p.eval(&x).is_finite());
        }
        assert!(Problem::by_name("push3d").is_err());
    }

    #[test]
    fn rover_world_endpoints_are_free() {
        let w = RoverWorld::default();
        assert_eq!(w.terrain_rate(w.start), 1.0);
        assert_eq!(w.terrain_rate(w.goal), 1.0);
        let json = serde_json::to_string(&w).unwrap();
        let back: RoverWorld = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
    }
}
