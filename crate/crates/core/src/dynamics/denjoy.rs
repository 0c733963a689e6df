//! Denjoy-type circle homeomorphism with an explicit wandering-interval
//! structure.
//!
//! Open intervals of length `l_n = c / (1 + n^2)^p` are inserted at the
//! rotation orbit points `{n alpha}` for `|n| <= truncation`; the remaining
//! Cantor set keeps the rescaled linear coordinate. The map sends the
//! interval at `{n alpha}` onto the interval at `{(n+1) alpha}` by a cubic
//! bridge whose derivative is 1 at both endpoints, and translates the Cantor
//! complement rigidly. The total circumference is exactly 1 and the rotation
//! number is alpha.
//!
//! Truncation defects: the bridge out of the outermost positive-index gap
//! targets a virtual interval, and the one Cantor bracket containing the
//! phantom point `{-(truncation+1) alpha}` has its image slide over the
//! outermost negative-index gap. Both defects have size `O(c / truncation^2)`
//! (about 1e-13 at defaults), far below every tolerance used here.

use serde::{Deserialize, Serialize};

use crate::dynamics::{frac_mul, LiftPoint, TorusMap, TorusPoint};
use crate::{Error, Result};

/// Parameters of the construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenjoyParams {
    /// Rotation number, reduced mod 1; must behave irrationally out to the
    /// truncation window (coincident orbit points are rejected).
    pub alpha: f64,
    /// Amplitude of the inserted-length schedule.
    pub c: f64,
    /// Gaps are inserted for orbit indices `|n| <= truncation`.
    pub truncation: usize,
    /// The certified tail bound must stay below this.
    pub tail_tol: f64,
    /// Exponent `p` in `l_n = c / (1 + n^2)^p`.
    pub interval_exponent: f64,
}

impl Default for DenjoyParams {
    fn default() -> Self {
        Self {
            alpha: (5.0f64.sqrt() - 1.0) / 2.0,
            c: 0.1,
            truncation: 1_000_000,
            tail_tol: 1e-6,
            interval_exponent: 1.0,
        }
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// The assembled circle map.
#[derive(Debug, Clone)]
pub struct DenjoyCircleMap {
    params: DenjoyParams,
    /// Total inserted length over the truncated window.
    inserted: f64,
    /// Certified bound on the length omitted by truncation.
    tail: f64,
    /// Cantor density `1 - inserted`.
    scale: f64,
    /// Base-circle gap positions `{n alpha}`, sorted.
    ys: Vec<f64>,
    /// Orbit index per sorted slot.
    idx: Vec<i32>,
    /// Gap left endpoints on the unit-circumference circle, sorted.
    lefts: Vec<f64>,
    /// Sorted slot per orbit index (`slot_of[n + truncation]`).
    slot_of: Vec<u32>,
}

impl DenjoyCircleMap {
    pub fn build(params: DenjoyParams) -> Result<Self> {
        if !(params.alpha.is_finite() && params.c.is_finite() && params.tail_tol.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        if params.alpha <= 0.0 || params.alpha >= 1.0 {
            return Err(Error::InvalidParameter("alpha must lie strictly between 0 and 1".into()));
        }
        if params.c <= 0.0 {
            return Err(Error::InvalidParameter("schedule amplitude c must be positive".into()));
        }
        if params.interval_exponent < 1.0 {
            return Err(Error::InvalidParameter("interval exponent must be at least 1".into()));
        }
        if params.truncation < 2 {
            return Err(Error::InvalidParameter("truncation must be at least 2".into()));
        }
        if params.tail_tol <= 0.0 {
            return Err(Error::InvalidParameter("tail tolerance must be positive".into()));
        }
        let n_t = params.truncation as i64;
        let p = params.interval_exponent;

        // tail: sum over |n| > N of c / (1+n^2)^p <= 2c * N^(1-2p) / (2p-1)
        let tail = 2.0 * params.c * (n_t as f64).powf(1.0 - 2.0 * p) / (2.0 * p - 1.0);
        if tail > params.tail_tol {
            return Err(Error::TailTooLarge { bound: tail, tol: params.tail_tol });
        }

        let gap = |n: i64| -> f64 {
            let q = 1.0 + (n as f64) * (n as f64);
            if p == 1.0 {
                params.c / q
            } else {
                params.c / q.powf(p)
            }
        };

        // Total inserted length, and feasibility of the cubic bridges: the
        // midpoint derivative 1 + 1.5 (l_{n+1}/l_n - 1) must stay positive.
        let mut total = Compensated::default();
        let mut min_ratio = f64::INFINITY;
        let mut prev = gap(-n_t);
        total.add(prev);
        for n in (-n_t + 1)..=(n_t + 1) {
            let len = gap(n);
            if n <= n_t {
                total.add(len);
            }
            min_ratio = min_ratio.min(len / prev);
            prev = len;
        }
        let inserted = total.value();
        if inserted + tail >= 1.0 {
            return Err(Error::BudgetExceeded { total: inserted + tail });
        }
        if 1.0 + 1.5 * (min_ratio - 1.0) <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "interval schedule too steep: successive length ratio {min_ratio:.4} \
                 makes the bridge derivative nonpositive"
            )));
        }

        let count = (2 * n_t + 1) as usize;
        let mut tagged: Vec<(f64, i32)> = Vec::with_capacity(count);
        for n in -n_t..=n_t {
            tagged.push((frac_mul(n, params.alpha), n as i32));
        }
        tagged.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        for w in tagged.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::RationalOrbit { i: w[0].1 as i64, j: w[1].1 as i64 });
            }
        }

        let scale = 1.0 - inserted;
        let mut ys = Vec::with_capacity(count);
        let mut idx = Vec::with_capacity(count);
        let mut lefts = Vec::with_capacity(count);
        let mut slot_of = vec![0u32; count];
        let mut prefix = Compensated::default();
        for (slot, &(y, n)) in tagged.iter().enumerate() {
            ys.push(y);
            idx.push(n);
            lefts.push(scale * y + prefix.value());
            slot_of[(n as i64 + n_t) as usize] = slot as u32;
            prefix.add(gap(n as i64));
        }

        Ok(Self { params, inserted, tail, scale, ys, idx, lefts, slot_of })
    }

    pub fn params(&self) -> &DenjoyParams {
        &self.params
    }

    /// Total length of the inserted wandering intervals.
    pub fn inserted_length(&self) -> f64 {
        self.inserted
    }

    /// Certified bound on the schedule mass beyond the truncation window.
    pub fn tail_bound(&self) -> f64 {
        self.tail
    }

    /// Lebesgue measure of the invariant Cantor set.
    pub fn cantor_measure(&self) -> f64 {
        self.scale
    }

    pub fn gap_count(&self) -> usize {
        self.idx.len()
    }

    fn gap_len(&self, n: i64) -> f64 {
        let q = 1.0 + (n as f64) * (n as f64);
        if self.params.interval_exponent == 1.0 {
            self.params.c / q
        } else {
            self.params.c / q.powf(self.params.interval_exponent)
        }
    }

    /// `(left endpoint, length)` of the wandering interval with orbit index `n`.
    pub fn interval(&self, n: i64) -> Result<(f64, f64)> {
        let n_t = self.params.truncation as i64;
        if n.abs() > n_t {
            return Err(Error::WindowEdge { index: n });
        }
        let slot = self.slot_of[(n + n_t) as usize] as usize;
        Ok((self.lefts[slot], self.gap_len(n)))
    }

    /// Embedding of the base circle: `h(y) = scale * y + (inserted length
    /// strictly below y)`. Maps the rotation orbit to the gap left endpoints.
    pub fn embedding(&self, y: f64) -> f64 {
        let y = y.rem_euclid(1.0);
        let j = self.ys.partition_point(|&v| v < y);
        let a = if j == self.ys.len() {
            self.inserted
        } else {
            // prefix sums are not stored; reconstruct from the left endpoint
            self.lefts[j] - self.scale * self.ys[j]
        };
        self.scale * y + a
    }

    /// Left endpoint and length of the interval with orbit index `n`, even
    /// just past the window (a virtual target used by the outermost bridge).
    fn target_interval(&self, n: i64) -> (f64, f64) {
        let n_t = self.params.truncation as i64;
        if n.abs() <= n_t {
            let slot = self.slot_of[(n + n_t) as usize] as usize;
            (self.lefts[slot], self.gap_len(n))
        } else {
            let y = frac_mul(n, self.params.alpha);
            (self.embedding(y), self.gap_len(n))
        }
    }

    /// The circle map on `[0, 1)`.
    pub fn map_unit(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        // the first gap sits at y = 0, so lefts[0] == 0 and the search
        // always finds a slot
        let i = self.lefts.partition_point(|&l| l <= x).saturating_sub(1);
        let len = self.gap_len(self.idx[i] as i64);
        let s = x - self.lefts[i];
        let target = self.idx[i] as i64 + 1;
        let value = if s < len {
            // cubic bridge onto the successor interval
            let (left_t, len_t) = self.target_interval(target);
            let u = s / len;
            let delta = len_t - len;
            left_t + s + 6.0 * delta * (u * u / 2.0 - u * u * u / 3.0)
        } else {
            // rigid translation of the Cantor piece above gap i
            let (left_t, len_t) = self.target_interval(target);
            (left_t + len_t) + (s - len)
        };
        let r = value.rem_euclid(1.0);
        if r >= 1.0 {
            0.0
        } else {
            r
        }
    }

    /// Derivative of the circle map; exactly 1 off the wandering intervals.
    pub fn derivative_unit(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        let i = self.lefts.partition_point(|&l| l <= x).saturating_sub(1);
        let len = self.gap_len(self.idx[i] as i64);
        let s = x - self.lefts[i];
        if s < len {
            let len_t = self.gap_len(self.idx[i] as i64 + 1);
            let u = s / len;
            1.0 + 6.0 * (len_t - len) / len * u * (1.0 - u)
        } else {
            1.0
        }
    }

    /// Largest absolute logarithmic derivative `sup |log Df^n|` over a grid
    /// in the interior of the seed interval.
    pub fn seed_gap_log_growth(&self, n: usize, grid: usize) -> Result<f64> {
        let (left, len) = self.interval(0)?;
        let mut worst: f64 = 0.0;
        for g in 0..grid.max(1) {
            let mut x = left + len * (g as f64 + 0.5) / grid.max(1) as f64;
            let mut log_sum = 0.0;
            for _ in 0..n {
                log_sum += self.derivative_unit(x).ln();
                x = self.map_unit(x);
            }
            worst = worst.max(log_sum.abs());
        }
        Ok(worst)
    }
}

impl TorusMap for DenjoyCircleMap {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &TorusPoint) -> TorusPoint {
        TorusPoint::new(vec![self.map_unit(x.coords()[0])]).expect("map output is finite")
    }

    fn eval_lift(&self, x: &LiftPoint) -> LiftPoint {
        let raw = x.coords()[0];
        let base = raw.floor();
        let u = raw - base;
        let v = self.map_unit(u);
        // lift fixing g(0) = map_unit(0): add a full turn past the wrap point
        let g = if v >= self.map_unit(0.0) { v } else { v + 1.0 };
        LiftPoint::new(vec![base + g]).expect("lift output is finite")
    }

    fn jacobian(&self, x: &TorusPoint) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_element(1, 1, self.derivative_unit(x.coords()[0]))
    }

    fn describe(&self) -> String {
        format!(
            "Denjoy-type circle map (alpha = {}, c = {}, window {})",
            self.params.alpha, self.params.c, self.params.truncation
        )
    }
}
