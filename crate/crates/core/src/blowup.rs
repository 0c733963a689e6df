//! Disjoint ball systems along a translation orbit, the piecewise-similarity
//! model of the dynamics on them, the collapse semiconjugacy back to the
//! translation, and synthetic Jacobian fields with prescribed conformal
//! distortion supported on the balls.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{frac_mul, torus_displacement, torus_distance, TorusPoint, TranslationVector};
use crate::linalg::{asymmetry, check_square, sym_exp};
use crate::{Error, Result};

/// Relative clearance demanded between distinct balls: the gap between two
/// balls must be at least `CLEARANCE_FACTOR * min(r_i, r_j)`.
pub const CLEARANCE_FACTOR: f64 = 1e-6;

/// Radii below this are considered collapsed and make the window infeasible.
pub const MIN_RADIUS: f64 = 1e-12;

/// Volume of the Euclidean unit ball in dimension `k`.
pub fn unit_ball_volume(k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => unit_ball_volume(k - 2) * 2.0 * std::f64::consts::PI / k as f64,
    }
}

/// Radius schedule `r_j = c_r / (1 + |j|)^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSchedule {
    pub c_r: f64,
    pub exponent: f64,
}

impl BallSchedule {
    pub fn radius(&self, j: i64) -> f64 {
        self.c_r / (1.0 + j.unsigned_abs() as f64).powf(self.exponent)
    }
}

/// Assembly parameters for [`build_ball_system`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSystemParams {
    pub theta: TranslationVector,
    pub seed: TorusPoint,
    /// Balls carry indices `-window ..= window`.
    pub window: usize,
    pub schedule: BallSchedule,
    /// Cap on the total Euclidean volume of the system.
    pub volume_budget: f64,
}

/// One entry of the audit trail left by the disjointness repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RepairEvent {
    /// Ball `index` was shrunk to clear an earlier-placed ball `against`.
    PairShrink {
        index: i64,
        against: i64,
        old_radius: f64,
        new_radius: f64,
    },
    /// Ball `index` was shrunk to clear its own deck translates.
    SelfWrapShrink {
        index: i64,
        old_radius: f64,
        new_radius: f64,
    },
    /// All radii were rescaled to meet the volume budget.
    BudgetRescale { factor: f64 },
    /// `exponent * dimension <= 1`: the schedule would not be summable over
    /// an infinite window; accepted because the window is finite.
    SummabilityWarning { product: f64 },
}

/// A single ball of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub index: i64,
    pub center: TorusPoint,
    pub radius: f64,
}

/// A finite family of pairwise disjoint round balls centered on the
/// translation orbit `seed + j * theta`, with shrinking radii.
///
/// Disjointness (with relative clearance [`CLEARANCE_FACTOR`]) is certified
/// at construction; `min_clearance` stores the worst slack found.
#[derive(Debug, Clone)]
pub struct BallSystem {
    theta: TranslationVector,
    seed: TorusPoint,
    window: usize,
    schedule: BallSchedule,
    volume_budget: f64,
    /// Center per slot `j + window`.
    centers: Vec<TorusPoint>,
    /// Radius per slot `j + window`.
    radii: Vec<f64>,
    repair_log: Vec<RepairEvent>,
    min_clearance: f64,
}

/// The j-th orbit point of the translation, computed with compensated
/// products so huge |j| stay exact on the torus.
pub fn orbit_center(seed: &TorusPoint, theta: &TranslationVector, j: i64) -> TorusPoint {
    let coords: Vec<f64> = seed
        .coords()
        .iter()
        .zip(theta.components())
        .map(|(&s, &t)| (s + frac_mul(j, t)).rem_euclid(1.0))
        .collect();
    TorusPoint::new(coords).expect("orbit center coordinates are finite")
}

/// Clearance slack between two balls: `d - r_a - r_b - factor * min(r_a, r_b)`.
fn clearance_slack(d: f64, r_a: f64, r_b: f64) -> f64 {
    d - r_a - r_b - CLEARANCE_FACTOR * r_a.min(r_b)
}

/// Largest radius a ball may keep against a fixed neighbor at distance `d`,
/// shaved by 1e-9 so the restored clearance is strictly positive in floats.
/// `None` when the fixed ball already reaches past the center.
fn shrink_target(d: f64, fixed: f64) -> Option<f64> {
    // the slack is piecewise linear in r with the kink at r = fixed
    let root = if clearance_slack(d, fixed, fixed) >= 0.0 {
        d - fixed * (1.0 + CLEARANCE_FACTOR)
    } else {
        (d - fixed) / (1.0 + CLEARANCE_FACTOR)
    };
    let t = root * (1.0 - 1e-9);
    (t > 0.0).then_some(t)
}

/// Places balls in order of increasing `|j|` (ties: negative first), shrinking
/// the newcomer whenever it would crowd an earlier ball or its own deck
/// translates, then rescales everything to the volume budget.
pub fn build_ball_system(params: &BallSystemParams) -> Result<BallSystem> {
    let k = params.seed.dim();
    if params.theta.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, got: params.theta.dim() });
    }
    if !(params.schedule.c_r > 0.0) || !params.schedule.c_r.is_finite() {
        return Err(Error::InvalidParameter("radius amplitude c_r must be positive".into()));
    }
    if params.schedule.exponent < 0.0 || !params.schedule.exponent.is_finite() {
        return Err(Error::InvalidParameter("radius exponent must be nonnegative".into()));
    }
    if !(params.volume_budget > 0.0) || !params.volume_budget.is_finite() {
        return Err(Error::InvalidParameter("volume budget must be positive".into()));
    }

    let mut log = Vec::new();
    let summability = params.schedule.exponent * k as f64;
    if summability <= 1.0 {
        log.push(RepairEvent::SummabilityWarning { product: summability });
    }

    let j_max = params.window as i64;
    // placement order: 0, -1, 1, -2, 2, ...
    let mut order = vec![0i64];
    for a in 1..=j_max {
        order.push(-a);
        order.push(a);
    }

    let mut placed: Vec<(i64, TorusPoint, f64)> = Vec::with_capacity(order.len());
    // nontrivial deck translates of a center are at distance >= 1
    let self_cap = 1.0 / (2.0 + CLEARANCE_FACTOR);
    for &j in &order {
        let center = orbit_center(&params.seed, &params.theta, j);
        let mut r = params.schedule.radius(j);
        if r > self_cap {
            log.push(RepairEvent::SelfWrapShrink { index: j, old_radius: r, new_radius: self_cap });
            r = self_cap;
        }
        for (i, other_center, other_r) in &mut placed {
            let d = torus_distance(other_center, &center);
            if d <= 1e-12 {
                return Err(Error::RationalOrbit { i: *i, j });
            }
            if clearance_slack(d, *other_r, r) >= 0.0 {
                continue;
            }
            // the larger radius is the offender; orbit returns can drop a
            // late center inside an early ball, so either side may shrink
            let (off_idx, off_r, kept) =
                if *other_r > r { (*i, &mut *other_r, r) } else { (j, &mut r, *other_r) };
            if let Some(t) = shrink_target(d, kept).filter(|t| *t >= MIN_RADIUS) {
                log.push(RepairEvent::PairShrink {
                    index: off_idx,
                    against: if off_idx == j { *i } else { j },
                    old_radius: *off_r,
                    new_radius: t,
                });
                *off_r = t;
            } else {
                // centers sit inside both balls; shrink the pair jointly
                let f = d / (*other_r + r + CLEARANCE_FACTOR * other_r.min(r)) * (1.0 - 1e-9);
                let (na, nb) = (*other_r * f, r * f);
                if !(na.min(nb) >= MIN_RADIUS) {
                    return Err(Error::InfeasibleWindow { index: j });
                }
                log.push(RepairEvent::PairShrink {
                    index: *i,
                    against: j,
                    old_radius: *other_r,
                    new_radius: na,
                });
                log.push(RepairEvent::PairShrink {
                    index: j,
                    against: *i,
                    old_radius: r,
                    new_radius: nb,
                });
                *other_r = na;
                r = nb;
            }
        }
        placed.push((j, center, r));
    }

    // budget pass: uniform rescale preserves clearances
    let v_unit = unit_ball_volume(k);
    let total: f64 = placed.iter().map(|(_, _, r)| v_unit * r.powi(k as i32)).sum();
    if total > params.volume_budget {
        // shaved slightly so the rescaled sum stays below the budget in floats
        let factor = (params.volume_budget / total).powf(1.0 / k as f64) * (1.0 - 1e-13);
        for (_, _, r) in &mut placed {
            *r *= factor;
        }
        log.push(RepairEvent::BudgetRescale { factor });
    }

    placed.sort_by_key(|(j, _, _)| *j);
    let centers: Vec<TorusPoint> = placed.iter().map(|(_, c, _)| c.clone()).collect();
    let radii: Vec<f64> = placed.iter().map(|(_, _, r)| *r).collect();

    let min_clearance = certify_clearance(&centers, &radii)?;
    Ok(BallSystem {
        theta: params.theta.clone(),
        seed: params.seed.clone(),
        window: params.window,
        schedule: params.schedule.clone(),
        volume_budget: params.volume_budget,
        centers,
        radii,
        repair_log: log,
        min_clearance,
    })
}

/// Worst clearance slack over all pairs (and each ball against its own deck
/// translates). Negative slack means the family is not properly disjoint.
fn certify_clearance(centers: &[TorusPoint], radii: &[f64]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for a in 0..centers.len() {
        worst = worst.min(1.0 - 2.0 * radii[a] - CLEARANCE_FACTOR * radii[a]);
        for b in (a + 1)..centers.len() {
            let d = torus_distance(&centers[a], &centers[b]);
            worst = worst.min(clearance_slack(d, radii[a], radii[b]));
        }
    }
    if !worst.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(worst)
}

impl BallSystem {
    pub fn dim(&self) -> usize {
        self.seed.dim()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn index_range(&self) -> std::ops::RangeInclusive<i64> {
        -(self.window as i64)..=self.window as i64
    }

    pub fn theta(&self) -> &TranslationVector {
        &self.theta
    }

    pub fn seed(&self) -> &TorusPoint {
        &self.seed
    }

    pub fn schedule(&self) -> &BallSchedule {
        &self.schedule
    }

    pub fn volume_budget(&self) -> f64 {
        self.volume_budget
    }

    pub fn repair_log(&self) -> &[RepairEvent] {
        &self.repair_log
    }

    /// Certified worst clearance slack; nonnegative for a valid system.
    pub fn min_clearance(&self) -> f64 {
        self.min_clearance
    }

    fn slot(&self, j: i64) -> Option<usize> {
        if j.abs() > self.window as i64 {
            None
        } else {
            Some((j + self.window as i64) as usize)
        }
    }

    pub fn center(&self, j: i64) -> Option<&TorusPoint> {
        self.slot(j).map(|s| &self.centers[s])
    }

    pub fn radius(&self, j: i64) -> Option<f64> {
        self.slot(j).map(|s| self.radii[s])
    }

    pub fn ball(&self, j: i64) -> Option<Ball> {
        self.slot(j).map(|s| Ball {
            index: j,
            center: self.centers[s].clone(),
            radius: self.radii[s],
        })
    }

    pub fn balls(&self) -> impl Iterator<Item = Ball> + '_ {
        self.index_range().map(|j| self.ball(j).expect("index in range"))
    }

    pub fn volume(&self, j: i64) -> Option<f64> {
        self.slot(j)
            .map(|s| unit_ball_volume(self.dim()) * self.radii[s].powi(self.dim() as i32))
    }

    /// Plain sum of ball volumes (callers wanting a certified disjoint total
    /// should use `distortion::volume_sum`).
    pub fn total_volume(&self) -> f64 {
        let k = self.dim() as i32;
        let v = unit_ball_volume(self.dim());
        self.radii.iter().map(|r| v * r.powi(k)).sum()
    }

    /// Index of the (unique, by disjointness) open ball containing `x`.
    pub fn locate(&self, x: &TorusPoint) -> Option<i64> {
        for j in self.index_range() {
            let s = self.slot(j).expect("index in range");
            if torus_distance(x, &self.centers[s]) < self.radii[s] {
                return Some(j);
            }
        }
        None
    }

    /// Lift of the center of ball `j` along the orbit lift `seed + j * theta`
    /// (components taken from the reduced translation representative).
    pub fn center_lift(&self, j: i64) -> Vec<f64> {
        self.seed
            .coords()
            .iter()
            .zip(self.theta.components())
            .map(|(&s, &t)| s + j as f64 * t)
            .collect()
    }

    /// Collapse semiconjugacy: crush every ball to its center, leave the
    /// complement alone. Conjugates the similarity model to the translation.
    pub fn collapse(&self, x: &TorusPoint) -> TorusPoint {
        match self.locate(x) {
            Some(j) => self.center(j).expect("located index in range").clone(),
            None => x.clone(),
        }
    }

    /// Validating reassembly used by record deserialization; the arguments
    /// mirror the record fields one to one.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        theta: TranslationVector,
        seed: TorusPoint,
        window: usize,
        schedule: BallSchedule,
        volume_budget: f64,
        centers: Vec<TorusPoint>,
        radii: Vec<f64>,
        repair_log: Vec<RepairEvent>,
    ) -> Result<Self> {
        let expected = 2 * window + 1;
        if centers.len() != expected || radii.len() != expected {
            return Err(Error::RecordFormat(format!(
                "ball system with window {window} needs {expected} balls, got {} centers / {} radii",
                centers.len(),
                radii.len()
            )));
        }
        let k = seed.dim();
        if theta.dim() != k || centers.iter().any(|c| c.dim() != k) {
            return Err(Error::RecordFormat("mixed dimensions in ball system record".into()));
        }
        if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::RecordFormat("radii must be positive and finite".into()));
        }
        // centers must follow the translation orbit
        for (s, pair) in centers.windows(2).enumerate() {
            let step = torus_displacement(&pair[0], &pair[1]);
            for (i, &t) in theta.components().iter().enumerate() {
                let mut dev = (step[i] - t).abs();
                dev = dev.min((step[i] - t + 1.0).abs());
                if dev > 1e-9 {
                    return Err(Error::RecordFormat(format!(
                        "centers {} -> {} do not step by theta (deviation {dev:.3e})",
                        s as i64 - window as i64,
                        s as i64 + 1 - window as i64
                    )));
                }
            }
        }
        let min_clearance = certify_clearance(&centers, &radii)?;
        if min_clearance < 0.0 {
            return Err(Error::NotDisjoint { clearance: min_clearance });
        }
        let v = unit_ball_volume(k);
        let total: f64 = radii.iter().map(|r| v * r.powi(k as i32)).sum();
        if total > volume_budget * (1.0 + 1e-12) {
            return Err(Error::RecordFormat(format!(
                "total volume {total:.6e} exceeds budget {volume_budget:.6e}"
            )));
        }
        Ok(Self {
            theta,
            seed,
            window,
            schedule,
            volume_budget,
            centers,
            radii,
            repair_log,
            min_clearance,
        })
    }
}

/// The similarity model: on ball `j` the map is the orientation-preserving
/// similarity onto ball `j+1` fixing the center correspondence,
/// `x -> c_{j+1} + (r_{j+1}/r_j)(x - c_j)`. Undefined off the system and on
/// the topmost ball.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityMap<'a> {
    system: &'a BallSystem,
}

impl<'a> SimilarityMap<'a> {
    pub fn new(system: &'a BallSystem) -> Self {
        Self { system }
    }

    pub fn system(&self) -> &'a BallSystem {
        self.system
    }

    /// Contraction ratio of the step out of ball `j`.
    pub fn ratio(&self, j: i64) -> Result<f64> {
        let top = self.system.window as i64;
        if j.abs() > top {
            return Err(Error::NotInSystem);
        }
        if j == top {
            return Err(Error::WindowEdge { index: j });
        }
        Ok(self.system.radius(j + 1).expect("successor in range")
            / self.system.radius(j).expect("index in range"))
    }

    pub fn eval(&self, x: &TorusPoint) -> Result<TorusPoint> {
        let j = self.system.locate(x).ok_or(Error::NotInSystem)?;
        if j == self.system.window as i64 {
            return Err(Error::WindowEdge { index: j });
        }
        let ratio = self.ratio(j)?;
        let c_from = self.system.center(j).expect("index in range");
        let c_to = self.system.center(j + 1).expect("successor in range");
        let offset = torus_displacement(c_from, x);
        let coords: Vec<f64> = c_to
            .coords()
            .iter()
            .zip(&offset)
            .map(|(&c, &d)| (c + ratio * d).rem_euclid(1.0))
            .collect();
        TorusPoint::new(coords)
    }

    /// Jacobian at any interior point of a ball: a conformal scaling.
    pub fn jacobian(&self, x: &TorusPoint) -> Result<DMatrix<f64>> {
        let j = self.system.locate(x).ok_or(Error::NotInSystem)?;
        if j == self.system.window as i64 {
            return Err(Error::WindowEdge { index: j });
        }
        let k = self.system.dim();
        Ok(DMatrix::identity(k, k) * self.ratio(j)?)
    }

    /// The `steps`-fold composition started at ball `start`, as an affine map
    /// in lift coordinates with its image displacement deck-reduced to the
    /// closest representative.
    pub fn return_map(&self, start: i64, steps: usize) -> Result<AffineSimilarity> {
        let top = self.system.window as i64;
        if start.abs() > top {
            return Err(Error::NotInSystem);
        }
        let end = start + steps as i64;
        if end > top {
            return Err(Error::WindowEdge { index: end });
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("return map needs at least one step".into()));
        }
        let ratio = self.system.radius(end).expect("end in range")
            / self.system.radius(start).expect("start in range");
        let base = self.system.center_lift(start);
        let c_start = self.system.center(start).expect("start in range");
        let c_end = self.system.center(end).expect("end in range");
        let hop = torus_displacement(c_start, c_end);
        let offset: Vec<f64> = base.iter().zip(&hop).map(|(&b, &d)| b + d).collect();
        Ok(AffineSimilarity { ratio, base, offset })
    }
}

/// Affine similarity `x -> offset + ratio * (x - base)` on R^k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineSimilarity {
    pub ratio: f64,
    pub base: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineSimilarity {
    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.offset)
            .zip(x)
            .map(|((&b, &a), &v)| a + self.ratio * (v - b))
            .collect()
    }

    /// Closed-form fixed point, defined when the map is not an isometry.
    pub fn fixed_point(&self) -> Result<Vec<f64>> {
        if (1.0 - self.ratio).abs() < 1e-15 {
            return Err(Error::InvalidParameter("affine similarity has no contraction".into()));
        }
        Ok(self
            .base
            .iter()
            .zip(&self.offset)
            .map(|(&b, &a)| (a - self.ratio * b) / (1.0 - self.ratio))
            .collect())
    }
}

/// Half-length of the chord of `ball` through `x` orthogonal to the radius:
/// `sqrt(r^2 - |x - c|^2)`.
pub fn chord_half_length(x: &TorusPoint, ball: &Ball) -> Result<f64> {
    let d = torus_distance(x, &ball.center);
    if d > ball.radius * (1.0 + 1e-12) {
        return Err(Error::OutsideBall { dist: d, radius: ball.radius });
    }
    Ok((ball.radius * ball.radius - d * d).max(0.0).sqrt())
}

/// How the per-ball distortion amplitude `eps_j` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AmplitudeRule {
    /// The same amplitude on every ball.
    Constant { eps: f64 },
    /// `eps_j = bound * vol(B_j) / 2`, so the peak distortion of ball `j`
    /// is exactly `bound * vol(B_j)`.
    VolumeScaled { bound: f64 },
    /// Nonconformal on one ball only, conformal everywhere else.
    SingleBall { index: i64, eps: f64 },
}

/// Shape of the synthetic distortion profile supported on the balls.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionProfile {
    /// Flatness order `m >= 1`: the profile scales like `(l/r)^m` in the
    /// chord half-length `l`.
    pub order: u32,
    pub amplitude: AmplitudeRule,
    /// Traceless symmetric direction with unit Frobenius norm.
    pub direction: DMatrix<f64>,
}

impl DistortionProfile {
    pub fn new(order: u32, amplitude: AmplitudeRule, direction: DMatrix<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("flatness order must be at least 1".into()));
        }
        match amplitude {
            AmplitudeRule::Constant { eps } if !(eps >= 0.0) || !eps.is_finite() => {
                return Err(Error::InvalidParameter("constant amplitude must be nonnegative".into()));
            }
            AmplitudeRule::VolumeScaled { bound } if !(bound >= 0.0) || !bound.is_finite() => {
                return Err(Error::InvalidParameter("volume-scaled bound must be nonnegative".into()));
            }
            _ => {}
        }
        check_square(&direction)?;
        if asymmetry(&direction) > 1e-12 {
            return Err(Error::InvalidParameter("direction must be symmetric".into()));
        }
        if direction.trace().abs() > 1e-12 {
            return Err(Error::InvalidParameter("direction must be traceless".into()));
        }
        if (direction.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("direction must have unit Frobenius norm".into()));
        }
        Ok(Self { order, amplitude, direction })
    }

    /// The standard direction `diag(1, -1, 0, ...) / sqrt(2)`.
    pub fn diagonal_direction(k: usize) -> DMatrix<f64> {
        assert!(k >= 2, "a traceless direction needs k >= 2");
        let mut n = DMatrix::zeros(k, k);
        n[(0, 0)] = 1.0 / std::f64::consts::SQRT_2;
        n[(1, 1)] = -1.0 / std::f64::consts::SQRT_2;
        n
    }
}

/// A synthetic Jacobian field over a ball system: on ball `j` the field is
/// `ratio_j * exp(eps_j (l(x)/r_j)^m N)`, identity off the system. Its
/// distance to the round structure is exactly `2 eps_j (l(x)/r_j)^m`.
#[derive(Debug, Clone)]
pub struct SyntheticField<'a> {
    system: &'a BallSystem,
    profile: DistortionProfile,
}

impl<'a> SyntheticField<'a> {
    pub fn new(system: &'a BallSystem, profile: DistortionProfile) -> Result<Self> {
        if profile.direction.nrows() != system.dim() {
            return Err(Error::DimensionMismatch {
                expected: system.dim(),
                got: profile.direction.nrows(),
            });
        }
        Ok(Self { system, profile })
    }

    pub fn system(&self) -> &'a BallSystem {
        self.system
    }

    pub fn profile(&self) -> &DistortionProfile {
        &self.profile
    }

    /// Distortion amplitude assigned to ball `j`.
    pub fn amplitude(&self, j: i64) -> Result<f64> {
        let vol = self.system.volume(j).ok_or(Error::NotInSystem)?;
        Ok(match self.profile.amplitude {
            AmplitudeRule::Constant { eps } => eps,
            AmplitudeRule::VolumeScaled { bound } => bound * vol / 2.0,
            AmplitudeRule::SingleBall { index, eps } => {
                if j == index {
                    eps
                } else {
                    0.0
                }
            }
        })
    }

    /// The field at `x`. Identity off the system; on the topmost ball the
    /// underlying dynamics has no successor, so the field is undefined.
    pub fn jacobian_at(&self, x: &TorusPoint) -> Result<DMatrix<f64>> {
        let k = self.system.dim();
        let Some(j) = self.system.locate(x) else {
            return Ok(DMatrix::identity(k, k));
        };
        if j == self.system.window as i64 {
            return Err(Error::WindowEdge { index: j });
        }
        let ball = self.system.ball(j).expect("located index in range");
        let l = chord_half_length(x, &ball)?;
        let eps = self.amplitude(j)?;
        let t = eps * (l / ball.radius).powi(self.profile.order as i32);
        let ratio = SimilarityMap::new(self.system).ratio(j)?;
        Ok(sym_exp(&(&self.profile.direction * t))? * ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confspace::dist_to_base;
    use crate::dynamics::{TorusMap, TranslationMap};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn default_params(window: usize) -> BallSystemParams {
        BallSystemParams {
            theta: TranslationVector::new(
                vec![2.0f64.sqrt() - 1.0, 3.0f64.sqrt() - 1.0],
                true,
            )
            .unwrap(),
            seed: TorusPoint::origin(2),
            window,
            schedule: BallSchedule { c_r: 0.05, exponent: 0.8 },
            volume_budget: 0.5,
        }
    }

    #[test]
    fn schedule_and_centers() {
        let params = default_params(10);
        let system = build_ball_system(&params).unwrap();
        assert_eq!(system.index_range().count(), 21);
        assert_abs_diff_eq!(system.radius(0).unwrap(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(
            system.radius(3).unwrap(),
            0.05 / 4.0f64.powf(0.8),
            epsilon = 1e-15
        );
        assert_eq!(system.radius(3), system.radius(-3));
        // centers follow the translation orbit
        let f = TranslationMap::new(params.theta.clone());
        for j in -10i64..10 {
            let stepped = f.eval(system.center(j).unwrap());
            assert!(torus_distance(&stepped, system.center(j + 1).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn built_systems_are_certified_disjoint() {
        let system = build_ball_system(&default_params(40)).unwrap();
        assert!(system.min_clearance() >= 0.0);
        assert!(system.total_volume() <= system.volume_budget() + 1e-12);
    }

    #[test]
    fn crowded_schedule_triggers_repair() {
        let params = BallSystemParams {
            theta: TranslationVector::new(vec![0.1 + 1e-4], true).unwrap(),
            seed: TorusPoint::origin(1),
            window: 4,
            schedule: BallSchedule { c_r: 0.06, exponent: 0.0 },
            volume_budget: 10.0,
        };
        let system = build_ball_system(&params).unwrap();
        assert!(system
            .repair_log()
            .iter()
            .any(|e| matches!(e, RepairEvent::PairShrink { .. })));
        assert!(system.min_clearance() >= 0.0);
        // warning because exponent * k = 0 <= 1
        assert!(system
            .repair_log()
            .iter()
            .any(|e| matches!(e, RepairEvent::SummabilityWarning { .. })));
    }

    #[test]
    fn oversized_seed_ball_respects_self_wrap() {
        let params = BallSystemParams {
            theta: TranslationVector::new(vec![0.45, 0.7], true).unwrap(),
            seed: TorusPoint::origin(2),
            window: 1,
            schedule: BallSchedule { c_r: 0.7, exponent: 2.0 },
            volume_budget: 10.0,
        };
        let system = build_ball_system(&params).unwrap();
        assert!(system.radius(0).unwrap() <= 0.5);
        assert!(system
            .repair_log()
            .iter()
            .any(|e| matches!(e, RepairEvent::SelfWrapShrink { .. })));
    }

    #[test]
    fn coincident_orbit_points_are_rejected() {
        let params = BallSystemParams {
            theta: TranslationVector::new(vec![0.25], false).unwrap(),
            seed: TorusPoint::origin(1),
            window: 4,
            schedule: BallSchedule { c_r: 0.01, exponent: 1.5 },
            volume_budget: 1.0,
        };
        assert!(matches!(
            build_ball_system(&params),
            Err(Error::RationalOrbit { .. })
        ));
    }

    #[test]
    fn near_coincident_centers_are_infeasible() {
        // step barely above the coincidence cutoff, so the pair repair
        // would need radii below the 1e-12 floor
        let params = BallSystemParams {
            theta: TranslationVector::new(vec![1.5e-12], true).unwrap(),
            seed: TorusPoint::origin(1),
            window: 1,
            schedule: BallSchedule { c_r: 0.1, exponent: 0.0 },
            volume_budget: 10.0,
        };
        assert!(matches!(
            build_ball_system(&params),
            Err(Error::InfeasibleWindow { .. })
        ));
    }

    #[test]
    fn budget_rescale_logged_and_enforced() {
        let mut params = default_params(5);
        params.volume_budget = 1e-3;
        let system = build_ball_system(&params).unwrap();
        assert!(system.total_volume() <= 1e-3);
        assert!(system
            .repair_log()
            .iter()
            .any(|e| matches!(e, RepairEvent::BudgetRescale { .. })));
        assert!(system.min_clearance() >= 0.0);
    }

    #[test]
    fn zero_window_gives_single_ball_and_plain_budget_rescale() {
        // one planar ball of radius 0.2 against a budget of pi * 0.1^2
        // must come back with radius 0.1
        let params = BallSystemParams {
            theta: TranslationVector::new(vec![0.3, 0.4], true).unwrap(),
            seed: TorusPoint::origin(2),
            window: 0,
            schedule: BallSchedule { c_r: 0.2, exponent: 0.8 },
            volume_budget: std::f64::consts::PI * 0.01,
        };
        let system = build_ball_system(&params).unwrap();
        assert_eq!(system.balls().count(), 1);
        assert_relative_eq!(system.radius(0).unwrap(), 0.1, max_relative = 1e-12);
        assert!(system.total_volume() <= params.volume_budget);
    }

    #[test]
    fn locate_and_collapse() {
        let system = build_ball_system(&default_params(10)).unwrap();
        let c3 = system.center(3).unwrap().clone();
        let r3 = system.radius(3).unwrap();
        let inside = TorusPoint::new(vec![
            c3.coords()[0] + 0.5 * r3,
            c3.coords()[1],
        ])
        .unwrap();
        assert_eq!(system.locate(&inside), Some(3));
        assert_eq!(system.collapse(&inside), c3);
        let outside = TorusPoint::new(vec![
            c3.coords()[0] + 2.0 * r3,
            c3.coords()[1] + 2.0 * r3,
        ])
        .unwrap();
        if system.locate(&outside).is_none() {
            assert_eq!(system.collapse(&outside), outside);
        }
    }

    #[test]
    fn similarity_step_is_a_similarity() {
        let system = build_ball_system(&default_params(10)).unwrap();
        let map = SimilarityMap::new(&system);
        let c = system.center(-2).unwrap().clone();
        let r = system.radius(-2).unwrap();
        let x = TorusPoint::new(vec![c.coords()[0] + 0.4 * r, c.coords()[1] - 0.3 * r]).unwrap();
        let y = map.eval(&x).unwrap();
        let ratio = map.ratio(-2).unwrap();
        let d_in = torus_distance(&x, &c);
        let d_out = torus_distance(&y, system.center(-1).unwrap());
        assert_abs_diff_eq!(d_out, ratio * d_in, epsilon = 1e-12);
        // conformal Jacobian
        let jac = map.jacobian(&x).unwrap();
        assert!(dist_to_base(&jac).unwrap() <= 1e-12);
    }

    #[test]
    fn collapse_conjugates_model_to_translation() {
        let params = default_params(10);
        let system = build_ball_system(&params).unwrap();
        let map = SimilarityMap::new(&system);
        let f = TranslationMap::new(params.theta.clone());
        for j in [-9i64, -1, 0, 5] {
            let c = system.center(j).unwrap().clone();
            let r = system.radius(j).unwrap();
            let x = TorusPoint::new(vec![c.coords()[0] - 0.2 * r, c.coords()[1] + 0.6 * r]).unwrap();
            let lhs = system.collapse(&map.eval(&x).unwrap());
            let rhs = f.eval(&system.collapse(&x));
            assert!(torus_distance(&lhs, &rhs) <= 1e-12);
        }
    }

    #[test]
    fn window_edge_and_outside_errors() {
        let system = build_ball_system(&default_params(3)).unwrap();
        let map = SimilarityMap::new(&system);
        let top = system.center(3).unwrap().clone();
        assert!(matches!(map.eval(&top), Err(Error::WindowEdge { .. })));
        let far = TorusPoint::new(vec![0.5, 0.013]).unwrap();
        if system.locate(&far).is_none() {
            assert!(matches!(map.eval(&far), Err(Error::NotInSystem)));
        }
    }

    #[test]
    fn return_map_contracts_to_its_fixed_point() {
        let system = build_ball_system(&default_params(10)).unwrap();
        let map = SimilarityMap::new(&system);
        let g = map.return_map(0, 7).unwrap();
        assert!(g.ratio < 1.0);
        let p = g.fixed_point().unwrap();
        let image = g.eval(&p);
        for i in 0..2 {
            assert_abs_diff_eq!(image[i], p[i], epsilon = 1e-12);
        }
        // iterating from the base converges to the same point
        let mut x = g.base.clone();
        for _ in 0..200 {
            x = g.eval(&x);
        }
        for i in 0..2 {
            assert_abs_diff_eq!(x[i], p[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn chord_half_length_profile() {
        let system = build_ball_system(&default_params(5)).unwrap();
        let ball = system.ball(1).unwrap();
        assert_abs_diff_eq!(
            chord_half_length(&ball.center, &ball).unwrap(),
            ball.radius,
            epsilon = 1e-15
        );
        let edge = TorusPoint::new(vec![
            ball.center.coords()[0] + ball.radius,
            ball.center.coords()[1],
        ])
        .unwrap();
        assert_abs_diff_eq!(chord_half_length(&edge, &ball).unwrap(), 0.0, epsilon = 1e-7);
        let out = TorusPoint::new(vec![
            ball.center.coords()[0] + 2.0 * ball.radius,
            ball.center.coords()[1],
        ])
        .unwrap();
        assert!(matches!(
            chord_half_length(&out, &ball),
            Err(Error::OutsideBall { .. })
        ));
    }

    #[test]
    fn field_peaks_at_centers_and_flattens_at_rims() {
        let system = build_ball_system(&default_params(6)).unwrap();
        let profile = DistortionProfile::new(
            2,
            AmplitudeRule::Constant { eps: 0.15 },
            DistortionProfile::diagonal_direction(2),
        )
        .unwrap();
        let field = SyntheticField::new(&system, profile).unwrap();
        let ball = system.ball(2).unwrap();
        // at the center the distortion is exactly 2 eps
        let at_center = field.jacobian_at(&ball.center).unwrap();
        assert_abs_diff_eq!(dist_to_base(&at_center).unwrap(), 0.3, epsilon = 1e-12);
        // at fraction t of the radius the chord factor is (1 - t^2)^(m/2)
        for t in [0.3, 0.7, 0.95] {
            let x = TorusPoint::new(vec![
                ball.center.coords()[0] + t * ball.radius,
                ball.center.coords()[1],
            ])
            .unwrap();
            let expected = 0.3 * (1.0 - t * t);
            let got = dist_to_base(&field.jacobian_at(&x).unwrap()).unwrap();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-10);
        }
        // off the system the field is the identity
        let far = TorusPoint::new(vec![0.52, 0.04]).unwrap();
        if system.locate(&far).is_none() {
            let jac = field.jacobian_at(&far).unwrap();
            assert_eq!(jac, DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn volume_scaled_amplitudes() {
        let system = build_ball_system(&default_params(6)).unwrap();
        let profile = DistortionProfile::new(
            2,
            AmplitudeRule::VolumeScaled { bound: 0.3 },
            DistortionProfile::diagonal_direction(2),
        )
        .unwrap();
        let field = SyntheticField::new(&system, profile).unwrap();
        for j in [-5i64, 0, 4] {
            let eps = field.amplitude(j).unwrap();
            assert_abs_diff_eq!(eps, 0.3 * system.volume(j).unwrap() / 2.0, epsilon = 1e-15);
            let center = system.center(j).unwrap();
            let d = dist_to_base(&field.jacobian_at(center).unwrap()).unwrap();
            assert_abs_diff_eq!(d, 0.3 * system.volume(j).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn profile_validation() {
        let bad_dir = DMatrix::from_element(2, 2, 0.5);
        assert!(matches!(
            DistortionProfile::new(1, AmplitudeRule::Constant { eps: 0.1 }, bad_dir),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            DistortionProfile::new(
                0,
                AmplitudeRule::Constant { eps: 0.1 },
                DistortionProfile::diagonal_direction(2)
            ),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn unit_ball_volumes_match_the_recursion() {
        assert_abs_diff_eq!(unit_ball_volume(1), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(unit_ball_volume(2), std::f64::consts::PI, epsilon = 1e-15);
        assert_abs_diff_eq!(
            unit_ball_volume(3),
            4.0 * std::f64::consts::PI / 3.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            unit_ball_volume(4),
            std::f64::consts::PI.powi(2) / 2.0,
            epsilon = 1e-14
        );
    }
}
