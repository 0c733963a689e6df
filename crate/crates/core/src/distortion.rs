//! Cocycle distortion accounting over a ball system: per-step distances,
//! telescoped versus direct totals, per-ball flatness fits, and the
//! volume-sum bound that keeps the direct total finite.
//!
//! The mechanism under test: if each step's distortion is at most a fixed
//! multiple of the volume of the ball it happens in, and the balls are
//! pairwise disjoint inside the unit torus, the whole orbit's distortion
//! stays below that multiple of the total volume, no matter how long the
//! orbit runs.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::blowup::{chord_half_length, BallSystem, SimilarityMap, SyntheticField};
use crate::confspace::dist_to_base;
use crate::dynamics::denjoy::Compensated;
use crate::dynamics::{TorusMap, TorusPoint, TranslationMap};
use crate::error::Error;
use crate::sample;
use crate::Result;

/// One step of a distortion trace. `ball` is the index of the ball the step
/// happened in, or `None` for an off-system (identity) step.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionStep {
    pub ball: Option<i64>,
    pub distance: f64,
    pub volume: f64,
}

/// Distortion ledger of one orbit segment: per-step distances d_i, their
/// running sums T_n, and the direct distances D_n of the ordered products.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTrace {
    start: Vec<f64>,
    steps: Vec<DistortionStep>,
    telescoped: Vec<f64>,
    direct: Vec<f64>,
}

impl DistortionTrace {
    /// Builds the ledger from ordered cocycle factors. `factors[i]` is the
    /// step matrix applied i-th; `balls[i]` tags the ball it happened in.
    fn from_factors(
        start: Vec<f64>,
        factors: &[DMatrix<f64>],
        balls: &[Option<(i64, f64)>],
    ) -> Result<Self> {
        assert_eq!(factors.len(), balls.len());
        let mut steps = Vec::with_capacity(factors.len());
        let mut telescoped = vec![0.0];
        let mut direct = vec![0.0];
        let mut product: Option<DMatrix<f64>> = None;
        for (i, a) in factors.iter().enumerate() {
            let d = dist_to_base(a)?;
            let (ball, volume) = match balls[i] {
                Some((j, v)) => (Some(j), v),
                None => (None, 0.0),
            };
            steps.push(DistortionStep { ball, distance: d, volume });
            telescoped.push(telescoped[i] + d);
            let p = match product.take() {
                None => a.clone(),
                Some(p) => a * p,
            };
            // dist_to_base ignores positive scalar factors, so the running
            // product can be renormalized before it drifts out of range
            let norm = p.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::NonFinite { step: i });
            }
            let p = if !(1e-100..=1e100).contains(&norm) { p / norm } else { p };
            direct.push(dist_to_base(&p)?);
            product = Some(p);
        }
        Ok(Self { start, steps, telescoped, direct })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn steps(&self) -> &[DistortionStep] {
        &self.steps
    }

    /// T_n for n = 0..=len; exact running sums of the per-step distances.
    pub fn telescoped(&self) -> &[f64] {
        &self.telescoped
    }

    /// D_n for n = 0..=len; distance of the ordered n-step product.
    pub fn direct(&self) -> &[f64] {
        &self.direct
    }

    pub fn sup_direct(&self) -> f64 {
        self.direct.iter().copied().fold(0.0, f64::max)
    }

    /// Distinct balls visited, in first-visit order, plus the revisit count.
    /// Revisits would contradict the wandering property, so callers report
    /// them rather than silently deduplicating volume.
    pub fn visited(&self) -> (Vec<(i64, f64)>, usize) {
        let mut seen = HashSet::new();
        let mut distinct = Vec::new();
        let mut revisits = 0;
        for s in &self.steps {
            if let (Some(j), v) = (s.ball, s.volume) {
                if seen.insert(j) {
                    distinct.push((j, v));
                } else {
                    revisits += 1;
                }
            }
        }
        (distinct, revisits)
    }
}

/// Distortion ledger of a raw matrix cocycle, with no ball bookkeeping.
pub fn matrix_cocycle_trace(factors: &[DMatrix<f64>]) -> Result<DistortionTrace> {
    let balls = vec![None; factors.len()];
    DistortionTrace::from_factors(Vec::new(), factors, &balls)
}

/// Walks `n` steps of the ball dynamics from `x` and records the field's
/// distortion ledger along the way. Off-system points step by the bare
/// translation and contribute identity factors.
pub fn trace_cocycle_distortion(
    field: &SyntheticField,
    x: &TorusPoint,
    n: usize,
) -> Result<DistortionTrace> {
    let system = field.system();
    let k = system.dim();
    if x.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, got: x.dim() });
    }
    let ball_map = SimilarityMap::new(system);
    let translation = TranslationMap::new(system.theta().clone());
    let mut factors = Vec::with_capacity(n);
    let mut balls = Vec::with_capacity(n);
    let mut p = x.clone();
    for _ in 0..n {
        match system.locate(&p) {
            Some(j) => {
                factors.push(field.jacobian_at(&p)?);
                balls.push(Some((j, system.volume(j).expect("located ball in range"))));
                p = ball_map.eval(&p)?;
            }
            None => {
                factors.push(DMatrix::identity(k, k));
                balls.push(None);
                p = translation.eval(&p);
            }
        }
    }
    DistortionTrace::from_factors(x.coords().to_vec(), &factors, &balls)
}

/// Per-ball flatness fit: the supremum constant and log-log slope of the
/// field's distortion against the chord half-length.
#[derive(Debug, Clone, PartialEq)]
pub struct BallFit {
    /// sup over samples of distance / l^k, with k the torus dimension.
    pub c_sup: f64,
    /// Least-squares slope of log distance against log l; `None` when the
    /// field is conformal on the ball (no usable points).
    pub slope: Option<f64>,
    pub samples: usize,
}

/// Samples ball `j` stratified in chord half-length and fits the flatness
/// constant. Needs at least 100 samples for a meaningful sup.
pub fn fit_per_ball_constant(
    field: &SyntheticField,
    j: i64,
    count: usize,
    seed: u64,
) -> Result<BallFit> {
    if count < 100 {
        return Err(Error::InvalidParameter(
            "flatness fits need at least 100 samples".into(),
        ));
    }
    let system = field.system();
    let ball = system.ball(j).ok_or(Error::NotInSystem)?;
    let k = system.dim();
    let mut rng = sample::rng(seed, j as u64 ^ 0x0b5e55);
    let mut pairs = Vec::with_capacity(count);
    let mut c_sup = 0.0_f64;
    let mut max_l = 0.0_f64;
    for t in 0..count {
        // strata cover (0, r], with the last sample at the center where the
        // chord is the full radius
        let l_target = ball.radius * (t + 1) as f64 / count as f64;
        let offset = (ball.radius * ball.radius - l_target * l_target).max(0.0).sqrt();
        let dir = sample::unit_vector(k, &mut rng);
        let coords: Vec<f64> = ball
            .center
            .coords()
            .iter()
            .zip(dir.iter())
            .map(|(&c, &u)| (c + offset * u).rem_euclid(1.0))
            .collect();
        let point = TorusPoint::new(coords)?;
        let l = chord_half_length(&point, &ball)?;
        max_l = max_l.max(l);
        if l < 1e-9 {
            continue;
        }
        let d = dist_to_base(&field.jacobian_at(&point)?)?;
        c_sup = c_sup.max(d / l.powi(k as i32));
        if d > 1e-300 {
            pairs.push((l.ln(), d.ln()));
        }
    }
    if max_l < 1e-9 {
        return Err(Error::DegenerateSamples);
    }
    Ok(BallFit { c_sup, slope: log_log_slope(&pairs), samples: count })
}

fn log_log_slope(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    (sxx > 1e-12).then(|| sxy / sxx)
}

/// Outcome of checking one trace against the volume bound at multiplier M.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    /// sup_n D_n <= M * sum of distinct visited volumes + 1e-8.
    pub pass: bool,
    pub sup_direct: f64,
    /// Volume of the distinct balls the trace visited.
    pub visited_volume: f64,
    /// M times the visited volume.
    pub bound: f64,
    /// bound - sup_direct; negative exactly when the bound fails.
    pub margin: f64,
    /// Whether every in-ball step satisfied d_i <= M * vol_i.
    pub per_step_ok: bool,
    /// First step breaking the per-step budget: (step, distance, budget).
    pub first_violation: Option<(usize, f64, f64)>,
    /// Smallest multiplier the trace would certify per step.
    pub best_multiplier: Option<f64>,
    pub distinct_balls: usize,
    /// Ball revisits; nonzero would contradict the wandering property.
    pub revisits: usize,
}

/// Reports both halves of the volume-bound check without enforcing the
/// per-step hypothesis; callers probing contrast configurations use this to
/// see the bound fail.
pub fn lemma1_report(trace: &DistortionTrace, multiplier: f64) -> Result<Lemma1Report> {
    if !(multiplier > 0.0) || !multiplier.is_finite() {
        return Err(Error::InvalidParameter("bound multiplier must be positive".into()));
    }
    let (distinct, revisits) = trace.visited();
    let mut vol = Compensated::default();
    for (_, v) in &distinct {
        vol.add(*v);
    }
    let visited_volume = vol.value();
    let bound = multiplier * visited_volume;
    let sup_direct = trace.sup_direct();
    let mut per_step_ok = true;
    let mut first_violation = None;
    let mut best = None::<f64>;
    for (i, s) in trace.steps().iter().enumerate() {
        if s.ball.is_none() {
            continue;
        }
        let budget = multiplier * s.volume;
        // tolerate rounding when amplitudes are configured to sit exactly
        // on the budget
        if s.distance > budget * (1.0 + 1e-9) + 1e-15 && first_violation.is_none() {
            per_step_ok = false;
            first_violation = Some((i, s.distance, budget));
        }
        if s.volume > 0.0 {
            let m = s.distance / s.volume;
            best = Some(best.map_or(m, |b: f64| b.max(m)));
        }
    }
    Ok(Lemma1Report {
        pass: sup_direct <= bound + 1e-8,
        sup_direct,
        visited_volume,
        bound,
        margin: bound - sup_direct,
        per_step_ok,
        first_violation,
        best_multiplier: best,
        distinct_balls: distinct.len(),
        revisits,
    })
}

/// Certifying entry point: first checks the per-step hypothesis
/// d_i <= M * vol(ball_i) and refuses traces that break it, then reports
/// the volume bound. Under the hypothesis the bound can only fail through
/// rounding, which the report would expose.
pub fn verify_lemma1_bound(trace: &DistortionTrace, multiplier: f64) -> Result<Lemma1Report> {
    let report = lemma1_report(trace, multiplier)?;
    if let Some((step, distance, budget)) = report.first_violation {
        return Err(Error::PerStepViolation { step, distance, budget });
    }
    Ok(report)
}

/// Total volume of the system's balls. Refuses systems whose disjointness
/// certificate does not hold, since overlapping balls would double-count.
pub fn volume_sum(system: &BallSystem) -> Result<f64> {
    if system.min_clearance() < 0.0 {
        return Err(Error::NotDisjoint { clearance: system.min_clearance() });
    }
    let mut acc = Compensated::default();
    for ball in system.balls() {
        acc.add(system.volume(ball.index).expect("listed ball in range"));
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blowup::{
        build_ball_system, AmplitudeRule, BallSchedule, BallSystemParams, DistortionProfile,
    };
    use crate::dynamics::TranslationVector;
    use crate::linalg::sym_exp;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::dmatrix;

    fn small_system(window: usize) -> BallSystem {
        let params = BallSystemParams {
            theta: TranslationVector::new(vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0], true)
                .unwrap(),
            seed: TorusPoint::origin(2),
            window,
            schedule: BallSchedule { c_r: 0.05, exponent: 0.8 },
            volume_budget: 0.5,
        };
        build_ball_system(&params).unwrap()
    }

    fn profile(order: u32, amplitude: AmplitudeRule) -> DistortionProfile {
        DistortionProfile::new(order, amplitude, DistortionProfile::diagonal_direction(2))
            .unwrap()
    }

    #[test]
    fn conformal_field_has_zero_ledger() {
        let system = small_system(6);
        let field = SyntheticField::new(&system, profile(2, AmplitudeRule::Constant { eps: 0.0 }))
            .unwrap();
        let start = system.center(-4).unwrap().clone();
        let trace = trace_cocycle_distortion(&field, &start, 8).unwrap();
        assert_eq!(trace.len(), 8);
        for n in 0..=8 {
            assert_abs_diff_eq!(trace.direct()[n], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(trace.telescoped()[n], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn off_system_orbit_is_identity() {
        let system = small_system(1);
        let field = SyntheticField::new(&system, profile(2, AmplitudeRule::Constant { eps: 0.3 }))
            .unwrap();
        // pick a start whose short orbit stays off the three balls
        let start = TorusPoint::new(vec![0.55, 0.55]).unwrap();
        let trace = trace_cocycle_distortion(&field, &start, 3).unwrap();
        for s in trace.steps() {
            assert_eq!(s.ball, None);
            assert_abs_diff_eq!(s.distance, 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(trace.sup_direct(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_nonconformal_step_freezes_the_totals() {
        let system = small_system(6);
        let field = SyntheticField::new(
            &system,
            profile(2, AmplitudeRule::SingleBall { index: -3, eps: 0.3 }),
        )
        .unwrap();
        // start at the ball center, where the chord equals the radius and
        // the step distortion is exactly 2 * eps
        let start = system.center(-3).unwrap().clone();
        let trace = trace_cocycle_distortion(&field, &start, 5).unwrap();
        for n in 1..=5 {
            assert_abs_diff_eq!(trace.direct()[n], 0.6, epsilon = 1e-10);
            assert_abs_diff_eq!(trace.telescoped()[n], 0.6, epsilon = 1e-10);
        }
    }

    #[test]
    fn shared_sign_commuting_steps_telescope_to_equality() {
        let system = small_system(10);
        let field = SyntheticField::new(&system, profile(1, AmplitudeRule::Constant { eps: 0.2 }))
            .unwrap();
        let start = system.center(-8).unwrap().clone();
        let trace = trace_cocycle_distortion(&field, &start, 12).unwrap();
        // similarity steps preserve l/r, so every step carries the same
        // distortion 2 * eps
        for s in trace.steps() {
            assert_abs_diff_eq!(s.distance, 0.4, epsilon = 1e-10);
        }
        for n in 0..=12 {
            assert_abs_diff_eq!(trace.direct()[n], trace.telescoped()[n], epsilon = 1e-9);
        }
    }

    #[test]
    fn mixed_signs_telescope_strictly() {
        let n = DistortionProfile::diagonal_direction(2);
        let factors = vec![
            sym_exp(&(&n * 0.3)).unwrap(),
            sym_exp(&(&n * -0.2)).unwrap(),
        ];
        let trace = matrix_cocycle_trace(&factors).unwrap();
        assert_abs_diff_eq!(trace.telescoped()[2], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(trace.direct()[2], 0.2, epsilon = 1e-10);
    }

    #[test]
    fn telescoping_holds_on_random_cocycles() {
        for (seed, k) in [(1u64, 2usize), (2, 3), (3, 4)] {
            let mut rng = sample::rng(seed, 20);
            let factors: Vec<_> = (0..100)
                .map(|_| sample::bounded_eccentricity_matrix(k, 0.2, &mut rng).unwrap())
                .collect();
            let trace = matrix_cocycle_trace(&factors).unwrap();
            for i in 0..factors.len() {
                assert!(trace.direct()[i + 1] <= trace.telescoped()[i + 1] + 1e-8);
                // the running sums must be the exact stored increments
                assert_eq!(
                    trace.telescoped()[i + 1],
                    trace.telescoped()[i] + trace.steps()[i].distance
                );
                assert!(trace.telescoped()[i + 1] >= trace.telescoped()[i]);
            }
        }
    }

    #[test]
    fn long_products_stay_finite_after_rescaling() {
        let a = dmatrix![1e60, 0.0; 0.0, 1e60];
        let factors = vec![a.clone(), a.clone(), a.clone(), a];
        let trace = matrix_cocycle_trace(&factors).unwrap();
        // scalar matrices are conformal no matter the scale
        assert_abs_diff_eq!(trace.direct()[4], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn flatness_fit_matches_the_closed_form() {
        let system = small_system(1);
        assert_relative_eq!(system.radius(0).unwrap(), 0.05, max_relative = 1e-12);
        let field = SyntheticField::new(&system, profile(2, AmplitudeRule::Constant { eps: 0.3 }))
            .unwrap();
        let fit = fit_per_ball_constant(&field, 0, 400, 7).unwrap();
        // order matches the dimension: constant ratio 2|eps|/r^k, slope k
        let expected = 2.0 * 0.3 / 0.05f64.powi(2);
        assert_relative_eq!(fit.c_sup, expected, max_relative = 1e-2);
        assert_abs_diff_eq!(fit.slope.unwrap(), 2.0, epsilon = 0.1);
    }

    #[test]
    fn conformal_fit_is_zero() {
        let system = small_system(1);
        let field = SyntheticField::new(&system, profile(2, AmplitudeRule::Constant { eps: 0.0 }))
            .unwrap();
        let fit = fit_per_ball_constant(&field, 0, 200, 7).unwrap();
        assert_eq!(fit.c_sup, 0.0);
        assert!(fit.slope.is_none());
    }

    #[test]
    fn superflat_order_decays_below_the_dimension_scaling() {
        let system = small_system(1);
        let field = SyntheticField::new(&system, profile(3, AmplitudeRule::Constant { eps: 0.3 }))
            .unwrap();
        let fit = fit_per_ball_constant(&field, 0, 400, 7).unwrap();
        assert_abs_diff_eq!(fit.slope.unwrap(), 3.0, epsilon = 0.1);
        // the dist / l^k ratio vanishes toward the rim, so the sup sits at
        // the center and equals 2 eps / r^k there as well
        let ball = system.ball(0).unwrap();
        let rim = {
            let l = ball.radius / 400.0;
            let d = (ball.radius * ball.radius - l * l).sqrt();
            let coords: Vec<f64> = ball
                .center
                .coords()
                .iter()
                .zip([1.0, 0.0])
                .map(|(&c, u)| (c + d * u).rem_euclid(1.0))
                .collect();
            let p = TorusPoint::new(coords).unwrap();
            let dist = dist_to_base(&field.jacobian_at(&p).unwrap()).unwrap();
            dist / l.powi(2)
        };
        assert!(rim < fit.c_sup * 1e-2, "rim ratio {rim} vs sup {}", fit.c_sup);
    }

    #[test]
    fn volume_scaled_field_passes_the_bound() {
        let system = small_system(40);
        let field = SyntheticField::new(
            &system,
            profile(2, AmplitudeRule::VolumeScaled { bound: 0.3 }),
        )
        .unwrap();
        let start = system.center(-30).unwrap().clone();
        let trace = trace_cocycle_distortion(&field, &start, 60).unwrap();
        let report = verify_lemma1_bound(&trace, 0.3).unwrap();
        assert!(report.pass);
        assert!(report.per_step_ok);
        assert_eq!(report.revisits, 0);
        assert_eq!(report.distinct_balls, 60);
        // the center samples sit exactly on the budget
        assert_relative_eq!(report.best_multiplier.unwrap(), 0.3, max_relative = 1e-9);
        assert!(report.margin >= 0.0);
    }

    #[test]
    fn constant_contrast_breaks_the_bound() {
        let system = small_system(400);
        let field =
            SyntheticField::new(&system, profile(2, AmplitudeRule::Constant { eps: 0.025 }))
                .unwrap();
        let start = system.center(-300).unwrap().clone();
        let trace = trace_cocycle_distortion(&field, &start, 600).unwrap();
        // linear growth: every step carries 2 * eps
        let delta = 0.05;
        for n in (100..=600).step_by(100) {
            assert!(trace.direct()[n] >= 0.9 * delta * n as f64);
        }
        let report = lemma1_report(&trace, 1.0).unwrap();
        assert!(!report.pass, "sup {} vs bound {}", report.sup_direct, report.bound);
        assert!(!report.per_step_ok);
        assert!(matches!(
            verify_lemma1_bound(&trace, 1.0),
            Err(Error::PerStepViolation { .. })
        ));
    }

    #[test]
    fn window_edge_stops_the_trace() {
        let system = small_system(3);
        let field = SyntheticField::new(&system, profile(2, AmplitudeRule::Constant { eps: 0.1 }))
            .unwrap();
        let start = system.center(2).unwrap().clone();
        assert!(matches!(
            trace_cocycle_distortion(&field, &start, 2),
            Err(Error::WindowEdge { .. })
        ));
    }

    #[test]
    fn volume_sum_matches_hand_values() {
        let system = small_system(0);
        assert_relative_eq!(
            volume_sum(&system).unwrap(),
            std::f64::consts::PI * 0.0025,
            max_relative = 1e-12
        );
        let bigger = small_system(3);
        let direct: f64 = bigger
            .balls()
            .map(|b| std::f64::consts::PI * b.radius * b.radius)
            .sum();
        assert_relative_eq!(volume_sum(&bigger).unwrap(), direct, max_relative = 1e-12);
    }
}
