//! Points of the k-torus and their lifts, rigid translations, orbit traces,
//! rotation-vector estimation and Jacobian cocycles along orbits.
//!
//! The torus is R^k / Z^k with the flat metric; distances always use the
//! minimal representative of each coordinate difference.

pub mod denjoy;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_finite_slice(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(())
}

/// Exact fractional part of `n * alpha` via compensated multiplication;
/// accurate to about one ulp for `|n|` up to 1e7.
pub(crate) fn frac_mul(n: i64, alpha: f64) -> f64 {
    let nf = n as f64;
    let hi = nf * alpha;
    let lo = nf.mul_add(alpha, -hi);
    let k = (hi + lo).floor();
    // hi and k are both multiples of ulp(hi) and the difference is O(1),
    // so this subtraction is exact
    let mut r = (hi - k) + lo;
    if r < 0.0 {
        r += 1.0;
    }
    if r >= 1.0 {
        r -= 1.0;
    }
    r
}

fn reduce_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A point of the k-torus, coordinates kept in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Reduces every coordinate mod 1.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite_slice(&coords)?;
        if coords.is_empty() {
            return Err(Error::InvalidParameter("torus point needs at least one coordinate".into()));
        }
        Ok(Self {
            coords: coords.into_iter().map(reduce_unit).collect(),
        })
    }

    pub fn origin(k: usize) -> Self {
        Self { coords: vec![0.0; k] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    /// Canonical lift with coordinates in `[0, 1)`.
    pub fn lift(&self) -> LiftPoint {
        LiftPoint { coords: self.coords.clone() }
    }
}

/// A point of R^k regarded as a lift of its projection to the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftPoint {
    coords: Vec<f64>,
}

impl LiftPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite_slice(&coords)?;
        if coords.is_empty() {
            return Err(Error::InvalidParameter("lift point needs at least one coordinate".into()));
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    pub fn project(&self) -> TorusPoint {
        TorusPoint {
            coords: self.coords.iter().map(|&x| reduce_unit(x)).collect(),
        }
    }
}

/// Translation datum on the k-torus. Irrationality of the components cannot
/// be certified in floating point, so independence is a declared attribute;
/// consumers that need minimality check finite-orbit separation instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationVector {
    components: Vec<f64>,
    declared_irrational: bool,
}

impl TranslationVector {
    pub fn new(components: Vec<f64>, declared_irrational: bool) -> Result<Self> {
        check_finite_slice(&components)?;
        if components.is_empty() {
            return Err(Error::InvalidParameter("translation needs at least one component".into()));
        }
        Ok(Self {
            components: components.into_iter().map(reduce_unit).collect(),
            declared_irrational,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn declared_irrational(&self) -> bool {
        self.declared_irrational
    }
}

/// Flat distance between torus points (minimal coordinate representatives).
pub fn torus_distance(x: &TorusPoint, y: &TorusPoint) -> f64 {
    x.coords
        .iter()
        .zip(&y.coords)
        .map(|(&a, &b)| {
            let d = (a - b).abs();
            d.min(1.0 - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Signed coordinate displacement from `x` to `y`, each component the
/// representative in `[-0.5, 0.5)`.
pub fn torus_displacement(x: &TorusPoint, y: &TorusPoint) -> Vec<f64> {
    x.coords
        .iter()
        .zip(&y.coords)
        .map(|(&a, &b)| {
            let mut d = (b - a).rem_euclid(1.0);
            if d >= 0.5 {
                d -= 1.0;
            }
            d
        })
        .collect()
}

/// A self-map of the k-torus with a distinguished lift and a Jacobian.
///
/// `eval_lift` must commute with deck translations: shifting the input by an
/// integer vector shifts the output by the same vector.
pub trait TorusMap {
    fn dim(&self) -> usize;
    fn eval(&self, x: &TorusPoint) -> TorusPoint;
    fn eval_lift(&self, x: &LiftPoint) -> LiftPoint;
    fn jacobian(&self, x: &TorusPoint) -> DMatrix<f64>;
    fn describe(&self) -> String;
}

/// Rigid translation `x -> x + theta`.
#[derive(Debug, Clone)]
pub struct TranslationMap {
    theta: TranslationVector,
}

impl TranslationMap {
    pub fn new(theta: TranslationVector) -> Self {
        Self { theta }
    }

    pub fn theta(&self) -> &TranslationVector {
        &self.theta
    }
}

impl TorusMap for TranslationMap {
    fn dim(&self) -> usize {
        self.theta.dim()
    }

    fn eval(&self, x: &TorusPoint) -> TorusPoint {
        TorusPoint {
            coords: x
                .coords
                .iter()
                .zip(self.theta.components())
                .map(|(&a, &t)| reduce_unit(a + t))
                .collect(),
        }
    }

    fn eval_lift(&self, x: &LiftPoint) -> LiftPoint {
        LiftPoint {
            coords: x
                .coords
                .iter()
                .zip(self.theta.components())
                .map(|(&a, &t)| a + t)
                .collect(),
        }
    }

    fn jacobian(&self, x: &TorusPoint) -> DMatrix<f64> {
        DMatrix::identity(x.dim(), x.dim())
    }

    fn describe(&self) -> String {
        format!("translation by {:?}", self.theta.components())
    }
}

/// Orbit segment: `points[m]` is the m-th iterate, `lifts[m]` the matching
/// lift path (so `points[m] == lifts[m].project()`).
#[derive(Debug, Clone)]
pub struct OrbitTrace {
    pub points: Vec<TorusPoint>,
    pub lifts: Vec<LiftPoint>,
}

impl OrbitTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Iterates `f` for `n` steps from `x`, tracking the lift path.
pub fn iterate<M: TorusMap + ?Sized>(f: &M, x: &TorusPoint, n: usize) -> Result<OrbitTrace> {
    if f.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: x.dim() });
    }
    let mut lifts = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    let mut lift = x.lift();
    points.push(x.clone());
    lifts.push(lift.clone());
    for step in 1..=n {
        lift = f.eval_lift(&lift);
        if lift.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        points.push(lift.project());
        lifts.push(lift.clone());
    }
    Ok(OrbitTrace { points, lifts })
}

/// Birkhoff estimate of the rotation vector together with an a-posteriori
/// error bar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Mean lift displacement per step, reduced to `[0, 1)`.
    pub vector: Vec<f64>,
    /// `2 * sup_m ||lift_m - lift_0 - m * vector||_inf / n`; rigorous for maps
    /// semiconjugate to a translation.
    pub error_bound: f64,
    pub iterations: usize,
}

pub fn rotation_vector<M: TorusMap + ?Sized>(
    f: &M,
    x: &TorusPoint,
    n: usize,
) -> Result<RotationEstimate> {
    if n == 0 {
        return Err(Error::InvalidParameter("rotation estimate needs n >= 1".into()));
    }
    let trace = iterate(f, x, n)?;
    let k = x.dim();
    let first = &trace.lifts[0];
    let last = &trace.lifts[n];
    let mean: Vec<f64> = (0..k)
        .map(|i| (last.coords[i] - first.coords[i]) / n as f64)
        .collect();
    let mut worst: f64 = 0.0;
    for (m, lift) in trace.lifts.iter().enumerate() {
        for (i, mean_i) in mean.iter().enumerate() {
            let dev = (lift.coords[i] - first.coords[i] - m as f64 * mean_i).abs();
            worst = worst.max(dev);
        }
    }
    Ok(RotationEstimate {
        vector: mean.into_iter().map(reduce_unit).collect(),
        error_bound: 2.0 * worst / n as f64,
        iterations: n,
    })
}

/// Jacobian factors collected along an orbit: `factors[i]` is the Jacobian at
/// the i-th orbit point, so the cocycle matrix is the ordered product
/// `factors[n-1] * ... * factors[0]`.
#[derive(Debug, Clone)]
pub struct Cocycle {
    pub factors: Vec<DMatrix<f64>>,
}

impl Cocycle {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Ordered product `A_{n-1} ... A_0`.
    pub fn product(&self) -> DMatrix<f64> {
        let k = self.factors.first().map_or(0, |m| m.nrows());
        let mut acc = DMatrix::identity(k, k);
        for a in &self.factors {
            acc = a * acc;
        }
        acc
    }
}

/// Collects the Jacobian cocycle of `f` along the orbit of `x`.
pub fn cocycle<M: TorusMap + ?Sized>(f: &M, x: &TorusPoint, n: usize) -> Result<Cocycle> {
    let trace = iterate(f, x, n)?;
    let mut factors = Vec::with_capacity(n);
    for (step, point) in trace.points[..n].iter().enumerate() {
        let jac = f.jacobian(point);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        let det = jac.determinant();
        if det.abs() < crate::confspace::DET_TOL {
            return Err(Error::SingularMatrix { det });
        }
        factors.push(jac);
    }
    Ok(Cocycle { factors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn theta2() -> TranslationVector {
        TranslationVector::new(vec![2.0f64.sqrt() - 1.0, 3.0f64.sqrt() - 1.0], true).unwrap()
    }

    #[test]
    fn points_reduce_into_unit_cube() {
        let p = TorusPoint::new(vec![1.25, -0.25]).unwrap();
        assert_abs_diff_eq!(p.coords()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p.coords()[1], 0.75, epsilon = 1e-15);
        let q = TorusPoint::new(vec![-1e-18, 1.0]).unwrap();
        assert!(q.coords().iter().all(|&c| (0.0..1.0).contains(&c)));
    }

    #[test]
    fn distance_uses_minimal_representative() {
        let x = TorusPoint::new(vec![0.9, 0.0]).unwrap();
        let y = TorusPoint::new(vec![0.1, 0.0]).unwrap();
        assert_abs_diff_eq!(torus_distance(&x, &y), 0.2, epsilon = 1e-15);
        let d = torus_displacement(&x, &y);
        assert_abs_diff_eq!(d[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn displacement_is_signed() {
        let x = TorusPoint::new(vec![0.1]).unwrap();
        let y = TorusPoint::new(vec![0.9]).unwrap();
        let d = torus_displacement(&x, &y);
        assert_abs_diff_eq!(d[0], -0.2, epsilon = 1e-15);
    }

    #[test]
    fn lift_path_projects_onto_orbit() {
        let f = TranslationMap::new(theta2());
        let x = TorusPoint::new(vec![0.3, 0.7]).unwrap();
        let trace = iterate(&f, &x, 50).unwrap();
        let mut p = x;
        for m in 0..=50 {
            assert!(torus_distance(&p, &trace.points[m]) <= 1e-12);
            assert_eq!(trace.lifts[m].project(), trace.points[m]);
            p = f.eval(&p);
        }
    }

    #[test]
    fn rotation_vector_of_translation_is_theta() {
        let theta = theta2();
        let f = TranslationMap::new(theta.clone());
        let x = TorusPoint::origin(2);
        let est = rotation_vector(&f, &x, 1000).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(est.vector[i], theta.components()[i], epsilon = 1e-12);
        }
        assert!(est.error_bound <= 1e-10);
    }

    #[test]
    fn translation_cocycle_is_trivial() {
        let f = TranslationMap::new(theta2());
        let x = TorusPoint::origin(2);
        let c = cocycle(&f, &x, 20).unwrap();
        assert_eq!(c.len(), 20);
        let prod = c.product();
        assert!((prod - DMatrix::<f64>::identity(2, 2)).abs().max() <= 1e-15);
    }

    #[test]
    fn rational_translation_is_periodic() {
        let theta = TranslationVector::new(vec![0.25, 0.5], false).unwrap();
        let f = TranslationMap::new(theta);
        let x = TorusPoint::new(vec![0.125, 0.375]).unwrap();
        let trace = iterate(&f, &x, 4).unwrap();
        assert_abs_diff_eq!(torus_distance(&trace.points[0], &trace.points[4]), 0.0, epsilon = 1e-15);
    }
}
