//! The trapping endgame: search for a return time whose ball is small and
//! close enough, verify that the slightly enlarged ball maps into itself,
//! locate the fixed point that Brouwer then guarantees, and assemble the
//! contradiction record against minimality of the underlying translation.

use serde::{Deserialize, Serialize};

use crate::blowup::{AffineSimilarity, BallSystem, SimilarityMap};
use crate::dynamics::{torus_distance, TorusPoint, TranslationVector};
use crate::error::Error;
use crate::sample;
use crate::Result;

/// Tuning constants for the trap search and its verification passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    /// Enlargement factor of the seed ball; must exceed 1.
    pub lambda: f64,
    /// Image-enlargement constant; must exceed 1. Usually an empirical
    /// estimate, see [`estimate_lambda_prime`].
    pub lambda_prime: f64,
    /// How many return times to scan.
    pub horizon: usize,
    /// Boundary samples for the inclusion check.
    pub boundary_samples: usize,
    /// Required slack between image points and the trapping sphere.
    pub inclusion_margin: f64,
}

impl TrapParams {
    pub fn new(
        lambda: f64,
        lambda_prime: f64,
        horizon: usize,
        boundary_samples: usize,
        inclusion_margin: f64,
    ) -> Result<Self> {
        let p = Self { lambda, lambda_prime, horizon, boundary_samples, inclusion_margin };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter("lambda must exceed 1".into()));
        }
        if !(self.lambda_prime > 1.0) || !self.lambda_prime.is_finite() {
            return Err(Error::InvalidParameter("lambda_prime must exceed 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("search horizon must be positive".into()));
        }
        if self.boundary_samples == 0 {
            return Err(Error::InvalidParameter("need at least one boundary sample".into()));
        }
        if !(self.inclusion_margin >= 0.0) {
            return Err(Error::InvalidParameter("inclusion margin must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Radius threshold for a trap at time n: alpha_n must fall below
/// (lambda - 1) * alpha_0 / (2 * lambda').
pub fn threshold_radius(lambda: f64, lambda_prime: f64, alpha0: f64) -> f64 {
    (lambda - 1.0) * alpha0 / (2.0 * lambda_prime)
}

/// Displacement threshold: the return center must stay within
/// alpha_0 + ((lambda - 1) / 2) * alpha_0 of the start center.
pub fn threshold_displacement(lambda: f64, alpha0: f64) -> f64 {
    alpha0 + (lambda - 1.0) / 2.0 * alpha0
}

/// A certified return time with the two measured quantities it was
/// accepted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapTime {
    pub n: i64,
    pub alpha0: f64,
    pub alpha_n: f64,
    pub threshold_radius: f64,
    pub displacement: f64,
    pub threshold_displacement: f64,
}

/// Scans return times 1..=horizon for the first n whose ball is smaller
/// than the radius threshold and whose center has drifted less than the
/// displacement threshold, measured through the deck-reduced lift.
pub fn find_trap_time(system: &BallSystem, params: &TrapParams) -> Result<TrapTime> {
    params.validate()?;
    if params.horizon > system.window() {
        return Err(Error::InvalidParameter(format!(
            "horizon {} exceeds the ball window {}",
            params.horizon,
            system.window()
        )));
    }
    let alpha0 = system.radius(0).expect("seed ball exists");
    let c0 = system.center(0).expect("seed ball exists");
    let t_radius = threshold_radius(params.lambda, params.lambda_prime, alpha0);
    let t_disp = threshold_displacement(params.lambda, alpha0);
    let mut closest: Option<(f64, usize, f64, f64)> = None;
    for n in 1..=params.horizon {
        let alpha_n = system.radius(n as i64).expect("index inside window");
        let cn = system.center(n as i64).expect("index inside window");
        let displacement = torus_distance(c0, cn);
        let (r_ratio, d_ratio) = (alpha_n / t_radius, displacement / t_disp);
        if r_ratio < 1.0 && d_ratio < 1.0 {
            return Ok(TrapTime {
                n: n as i64,
                alpha0,
                alpha_n,
                threshold_radius: t_radius,
                displacement,
                threshold_displacement: t_disp,
            });
        }
        let miss = r_ratio.max(d_ratio);
        if closest.is_none_or(|(m, _, _, _)| miss < m) {
            closest = Some((miss, n, r_ratio, d_ratio));
        }
    }
    let (_, closest_n, radius_ratio, displacement_ratio) =
        closest.expect("horizon is positive");
    Err(Error::TrapNotFound {
        horizon: params.horizon,
        closest_n,
        radius_ratio,
        displacement_ratio,
    })
}

/// The n-step chain out of the seed ball as one affine similarity in lift
/// coordinates, with the image center deck-reduced next to the start.
pub fn trap_chain(system: &BallSystem, n: i64) -> Result<AffineSimilarity> {
    if n < 1 {
        return Err(Error::InvalidParameter("trap chains need at least one step".into()));
    }
    SimilarityMap::new(system).return_map(0, n as usize)
}

/// Empirical image-enlargement estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPrimeEstimate {
    /// Measured supremum of |g(x) - y_0| / beta over the sampled lambda-ball.
    pub raw: f64,
    /// The raw supremum inflated by the 5% sampling safety factor; this is
    /// the value the trap search should consume.
    pub safe: f64,
    pub samples: usize,
}

/// Samples the ball B(center, lambda * alpha) and measures how far g spreads
/// it around the known image center, in units of the known image radius.
/// The estimate certifies nothing; it stands in for a constant the theory
/// obtains from equicontinuity without giving a value.
#[allow(clippy::too_many_arguments)]
pub fn estimate_lambda_prime<F>(
    g: F,
    center: &[f64],
    alpha: f64,
    image_center: &[f64],
    beta: f64,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<LambdaPrimeEstimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(lambda > 1.0) || !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidParameter(
            "lambda must exceed 1 and both radii must be positive".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let mut rng = sample::rng(seed, 0x5eed1a);
    let mut probes = sample::sphere_points(center, lambda * alpha, samples, &mut rng);
    for _ in 0..samples / 4 {
        probes.push(sample::in_ball(center, lambda * alpha, &mut rng));
    }
    let mut sup = 0.0_f64;
    for x in &probes {
        let y = g(x).map_err(|e| {
            Error::UndefinedAtSample(format!("at {:?}: {e}", x))
        })?;
        let d = dist(&y, image_center);
        if !d.is_finite() {
            return Err(Error::UndefinedAtSample(format!("non-finite image at {:?}", x)));
        }
        sup = sup.max(d / beta);
    }
    Ok(LambdaPrimeEstimate { raw: sup, safe: sup * 1.05, samples: probes.len() })
}

/// Outcome of the self-inclusion check of a trapping ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionCheck {
    pub verified: bool,
    /// Smallest observed gap between an image point and the sphere.
    pub worst_margin: f64,
    pub samples: usize,
}

/// Samples the boundary sphere (at least `boundary_samples` points) plus a
/// coarse interior grid and checks every image lands strictly inside the
/// ball with at least the required margin.
pub fn verify_inclusion<F>(
    g: F,
    center: &[f64],
    radius: f64,
    required_margin: f64,
    boundary_samples: usize,
    seed: u64,
) -> Result<InclusionCheck>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter("trap radius must be positive".into()));
    }
    if !(required_margin >= 0.0) {
        return Err(Error::InvalidParameter("inclusion margin must be nonnegative".into()));
    }
    if boundary_samples == 0 {
        return Err(Error::InvalidParameter("need at least one boundary sample".into()));
    }
    let mut rng = sample::rng(seed, 0x17c11);
    let mut probes = sample::sphere_points(center, radius, boundary_samples, &mut rng);
    probes.push(center.to_vec());
    for shell in [0.25, 0.5, 0.75] {
        let count = (boundary_samples / 10).max(8);
        probes.extend(sample::sphere_points(center, radius * shell, count, &mut rng));
    }
    let mut worst = f64::INFINITY;
    for x in &probes {
        let y = g(x).map_err(|e| {
            Error::UndefinedAtSample(format!("at {:?}: {e}", x))
        })?;
        let d = dist(&y, center);
        if !d.is_finite() {
            return Err(Error::UndefinedAtSample(format!("non-finite image at {:?}", x)));
        }
        worst = worst.min(radius - d);
    }
    Ok(InclusionCheck {
        verified: worst > required_margin,
        worst_margin: worst,
        samples: probes.len(),
    })
}

/// A numerically located fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub point: Vec<f64>,
    /// |g(p) - p| re-evaluated once at the returned point.
    pub residual: f64,
    pub iterations: usize,
    /// Whether the damped phase was needed.
    pub damped: bool,
}

const FP_TOL: f64 = 1e-10;
const FP_ROUNDS: usize = 10_000;

/// Iterates g from the ball center; if plain iteration stalls, switches to
/// damped steps whose weight halves whenever the residual grows. Existence
/// is Brouwer's business; this routine only tries to exhibit the point, and
/// reports failure distinctly via NoConvergence.
pub fn locate_fixed_point<F>(g: F, center: &[f64], radius: f64) -> Result<FixedPointResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter("trap radius must be positive".into()));
    }
    let eval = |x: &[f64]| -> Result<Vec<f64>> {
        let y = g(x).map_err(|e| Error::UndefinedAtSample(format!("at {:?}: {e}", x)))?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::UndefinedAtSample(format!("non-finite image at {:?}", x)));
        }
        Ok(y)
    };
    let mut x = center.to_vec();
    let mut iterations = 0;
    for _ in 0..FP_ROUNDS {
        let y = eval(&x)?;
        iterations += 1;
        let r = dist(&y, &x);
        x = y;
        if r < FP_TOL {
            let residual = dist(&eval(&x)?, &x);
            return Ok(FixedPointResult { point: x, residual, iterations, damped: false });
        }
        if dist(&x, center) > 1e3 * radius {
            break;
        }
    }
    // damped phase, restarted from the center
    let mut s = 0.5;
    x = center.to_vec();
    let mut prev_residual = f64::INFINITY;
    let mut best = (f64::INFINITY, center.to_vec());
    for _ in 0..FP_ROUNDS {
        let y = eval(&x)?;
        iterations += 1;
        let r = dist(&y, &x);
        if r < best.0 {
            best = (r, x.clone());
        }
        if r < FP_TOL {
            let residual = dist(&eval(&x)?, &x);
            return Ok(FixedPointResult { point: x, residual, iterations, damped: true });
        }
        if r > prev_residual {
            s *= 0.5;
            if s < 1e-8 {
                break;
            }
        }
        prev_residual = r;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = (1.0 - s) * *xi + s * yi;
        }
    }
    Err(Error::NoConvergence { residual: best.0 })
}

/// Orbit-separation evidence for minimality at numerical scale: how close
/// the translation orbit returns to its start within a horizon. A true
/// minimal translation never returns exactly; a rational one exposes its
/// period here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalityEvidence {
    pub horizon: usize,
    pub min_separation: f64,
    pub closest_n: i64,
    /// No orbit point within 1e-9 of the start.
    pub separated: bool,
    /// First n whose orbit point collapses onto the start, if any.
    pub period: Option<i64>,
}

pub const SEPARATION_TOL: f64 = 1e-9;

pub fn minimality_evidence(theta: &TranslationVector, horizon: usize) -> MinimalityEvidence {
    let origin = TorusPoint::origin(theta.dim());
    let mut min_separation = f64::INFINITY;
    let mut closest_n = 0i64;
    let mut period = None;
    for n in 1..=horizon as i64 {
        let p = crate::blowup::orbit_center(&origin, theta, n);
        let d = torus_distance(&origin, &p);
        if d < min_separation {
            min_separation = d;
            closest_n = n;
        }
        if period.is_none() && d < SEPARATION_TOL {
            period = Some(n);
        }
    }
    MinimalityEvidence {
        horizon,
        min_separation,
        closest_n,
        separated: period.is_none(),
        period,
    }
}

/// Everything the closing argument measured, in one serializable record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapCertificate {
    pub trap_time: i64,
    pub alpha0: f64,
    pub alpha_n: f64,
    pub threshold_radius: f64,
    pub center_displacement: f64,
    pub threshold_displacement: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub lambda_prime_raw: f64,
    pub inclusion_verified: bool,
    pub worst_margin: f64,
    pub inclusion_samples: usize,
    pub fixed_point: Vec<f64>,
    pub fixed_point_residual: f64,
    pub fixed_point_converged: bool,
    /// Distance between the located point and the closed-form fixed point
    /// of the affine chain.
    pub closed_form_gap: f64,
    pub rng_seed: u64,
    /// Set by the contradiction report once all clauses check out.
    pub contradiction: bool,
}

impl TrapCertificate {
    /// The two search inequalities plus the verified inclusion.
    pub fn is_valid(&self) -> bool {
        self.alpha_n < self.threshold_radius
            && self.center_displacement < self.threshold_displacement
            && self.inclusion_verified
    }

    /// Margin of the intermediate inclusion B(x_n, lambda' * alpha_n)
    /// inside B(x_0, lambda * alpha_0), by the triangle inequality.
    pub fn intermediate_inclusion_margin(&self) -> f64 {
        self.lambda * self.alpha0
            - (self.center_displacement + self.lambda_prime * self.alpha_n)
    }
}

/// Runs the full trap pipeline on a ball system: probe lambda', search the
/// horizon, verify self-inclusion of the enlarged seed ball, and locate the
/// fixed point of the trapped chain.
pub fn certify_trap(
    system: &BallSystem,
    lambda: f64,
    horizon: usize,
    boundary_samples: usize,
    inclusion_margin: f64,
    seed: u64,
) -> Result<TrapCertificate> {
    let alpha0 = system.radius(0).ok_or(Error::NotInSystem)?;
    let map = SimilarityMap::new(system);

    // probe the image-enlargement constant over dyadic chain lengths; each
    // chain is an affine similarity, so the raw estimate is lambda itself
    // and the 5% inflation is pure safety
    let mut raw = 0.0_f64;
    let mut probed = 0usize;
    let mut len = 1usize;
    while len <= horizon.min(system.window()) {
        let chain = map.return_map(0, len)?;
        let beta = alpha0 * chain.ratio;
        let image_center = chain.offset.clone();
        let est = estimate_lambda_prime(
            |x| Ok(chain.eval(x)),
            &system.center_lift(0),
            alpha0,
            &image_center,
            beta,
            lambda,
            512,
            seed ^ len as u64,
        )?;
        raw = raw.max(est.raw);
        probed += 1;
        len *= 2;
    }
    if probed == 0 {
        return Err(Error::InvalidParameter("horizon leaves no chain to probe".into()));
    }
    let lambda_prime_raw = raw;
    let lambda_prime = (raw * 1.05).max(1.0 + 1e-9);

    let params =
        TrapParams::new(lambda, lambda_prime, horizon, boundary_samples, inclusion_margin)?;
    let t = find_trap_time(system, &params)?;

    let chain = trap_chain(system, t.n)?;
    let center = system.center_lift(0);
    let trap_radius = lambda * alpha0;
    let inclusion = verify_inclusion(
        |x| Ok(chain.eval(x)),
        &center,
        trap_radius,
        inclusion_margin,
        boundary_samples,
        seed,
    )?;

    let closed_form = chain.fixed_point()?;
    let (fixed_point, residual, converged) =
        match locate_fixed_point(|x| Ok(chain.eval(x)), &center, trap_radius) {
            Ok(fp) => (fp.point, fp.residual, true),
            Err(Error::NoConvergence { residual }) => (closed_form.clone(), residual, false),
            Err(e) => return Err(e),
        };
    let closed_form_gap = dist(&fixed_point, &closed_form);

    Ok(TrapCertificate {
        trap_time: t.n,
        alpha0,
        alpha_n: t.alpha_n,
        threshold_radius: t.threshold_radius,
        center_displacement: t.displacement,
        threshold_displacement: t.threshold_displacement,
        lambda,
        lambda_prime,
        lambda_prime_raw,
        inclusion_verified: inclusion.verified,
        worst_margin: inclusion.worst_margin,
        inclusion_samples: inclusion.samples,
        fixed_point,
        fixed_point_residual: residual,
        fixed_point_converged: converged,
        closed_form_gap,
        rng_seed: seed,
        contradiction: false,
    })
}

/// The assembled demonstration record: the model follows a translation
/// whose orbit stays separated, yet the trapped chain has a periodic point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContradictionReport {
    /// Clause one: centers follow the translation orbit and the orbit stays
    /// separated from its start.
    pub orbit_follows_translation: bool,
    pub max_orbit_deviation: f64,
    pub minimality: MinimalityEvidence,
    /// Clause two: the trap yields a periodic point (located or certified
    /// to exist by the verified inclusion).
    pub periodic_point_found: bool,
    pub periodic_point: Vec<f64>,
    pub period: i64,
    /// Clause three: the two above together contradict semiconjugacy to a
    /// periodic-point-free translation.
    pub contradiction: bool,
    pub certificate: TrapCertificate,
}

impl ContradictionReport {
    pub fn clauses(&self) -> [bool; 3] {
        [self.orbit_follows_translation, self.periodic_point_found, self.contradiction]
    }
}

/// Checks the three clauses of the closing argument. Declines to flag a
/// contradiction when the minimality evidence fails (a periodic translation
/// has periodic points, nothing is absurd); refuses outright when the
/// certificate itself is invalid.
pub fn contradiction_report(
    system: &BallSystem,
    certificate: &TrapCertificate,
    evidence: &MinimalityEvidence,
) -> Result<ContradictionReport> {
    if !certificate.is_valid() {
        let mut missing = Vec::new();
        if !(certificate.alpha_n < certificate.threshold_radius) {
            missing.push("radius inequality");
        }
        if !(certificate.center_displacement < certificate.threshold_displacement) {
            missing.push("displacement inequality");
        }
        if !certificate.inclusion_verified {
            missing.push("verified inclusion");
        }
        return Err(Error::IncompleteEvidence { missing: missing.join(", ") });
    }

    // clause one: every placed center is the translation image of its
    // predecessor
    let theta = system.theta();
    let mut max_dev = 0.0_f64;
    let range = system.index_range();
    for j in *range.start()..*range.end() {
        let here = system.center(j).expect("index in range");
        let there = system.center(j + 1).expect("index in range");
        let expected = crate::blowup::orbit_center(here, theta, 1);
        max_dev = max_dev.max(torus_distance(&expected, there));
    }
    let follows = max_dev <= SEPARATION_TOL && evidence.separated;

    // clause two: a valid certificate already carries the inclusion, which
    // certifies existence even when the locator did not converge
    let periodic = certificate.fixed_point_converged || certificate.inclusion_verified;

    let contradiction = follows && periodic;
    let mut cert = certificate.clone();
    cert.contradiction = contradiction;
    Ok(ContradictionReport {
        orbit_follows_translation: follows,
        max_orbit_deviation: max_dev,
        minimality: evidence.clone(),
        periodic_point_found: periodic,
        periodic_point: cert.fixed_point.clone(),
        period: cert.trap_time,
        contradiction,
        certificate: cert,
    })
}

/// End-to-end demonstration: certify a trap and assemble the report.
/// Maps a missing trap to incomplete evidence, since without a certificate
/// there is nothing to contradict.
pub fn demo_contradiction(
    system: &BallSystem,
    lambda: f64,
    horizon: usize,
    boundary_samples: usize,
    inclusion_margin: f64,
    seed: u64,
) -> Result<ContradictionReport> {
    let certificate =
        match certify_trap(system, lambda, horizon, boundary_samples, inclusion_margin, seed) {
            Ok(c) => c,
            Err(Error::TrapNotFound { horizon, closest_n, .. }) => {
                return Err(Error::IncompleteEvidence {
                    missing: format!(
                        "trap time within horizon {horizon} (closest miss at n = {closest_n})"
                    ),
                });
            }
            Err(e) => return Err(e),
        };
    let evidence = minimality_evidence(system.theta(), horizon);
    contradiction_report(system, &certificate, &evidence)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
