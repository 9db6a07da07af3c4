//! Traffic observation fields and their normalization to temporal importance.
//!
//! Two generators are provided: [`SyntheticEnv`], a sum of Gaussian
//! disturbances whose amplitudes decay (`Big`) or pulse (`Small`), and
//! [`DemandEnv`], a seeded stochastic hotspot schedule used for
//! zero-shot transfer runs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PatrolError, Result};
use crate::gridmap::{CellIndex, GridSpec};
use crate::scalar::Scalar;

pub const DEFAULT_BETA1: f64 = 0.7;
pub const DEFAULT_BETA2: f64 = 5.0;

/// Number of (big, small) disturbances on the training and test maps.
pub const TRAINING_LAYOUT: (usize, usize) = (4, 3);
pub const TEST_LAYOUT: (usize, usize) = (2, 3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceKind {
    /// Slowly dissipating: `exp(-k / (beta1 T))`.
    Big,
    /// Periodic: `max(0, sin(2 beta2 pi k / T))`.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub origin: CellIndex,
}

/// Clamp-and-rescale bounds applied to raw observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationBounds<S> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> ObservationBounds<S> {
    pub fn new(lo: S, hi: S) -> Result<Self> {
        if !(lo >= S::zero() && hi > lo && hi.is_finite()) {
            return Err(PatrolError::InvalidParameter {
                name: "bounds",
                reason: format!("need 0 <= z_lo < z_hi, got [{lo}, {hi}]"),
            });
        }
        Ok(Self { lo, hi })
    }
}

impl<S: Scalar> Default for ObservationBounds<S> {
    fn default() -> Self {
        Self { lo: S::zero(), hi: S::one() }
    }
}

/// Normalized importance of cell `c` given raw observation `z`: zero on
/// obstacles, otherwise `(clamp(z) - lo) / (hi - lo)`.
pub fn temporal_importance<S: Scalar>(bounds: &ObservationBounds<S>, grid: &GridSpec, c: CellIndex, z: S) -> S {
    if grid.is_obstacle(c) {
        return S::zero();
    }
    let z = z.max(bounds.lo).min(bounds.hi);
    (z - bounds.lo) / (bounds.hi - bounds.lo)
}

/// Anything that produces a raw traffic observation per cell and step.
pub trait TrafficField<S: Scalar> {
    fn grid(&self) -> &GridSpec;

    fn bounds(&self) -> &ObservationBounds<S>;

    fn raw_observation(&self, c: CellIndex, k: usize) -> S;

    fn importance(&self, c: CellIndex, k: usize) -> S {
        temporal_importance(self.bounds(), self.grid(), c, self.raw_observation(c, k))
    }

    /// Row-major importance snapshot of the whole grid at step `k`.
    fn importance_map(&self, k: usize) -> Vec<S> {
        self.grid().cells().map(|c| self.importance(c, k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnv<S> {
    pub grid: GridSpec,
    pub disturbances: Vec<Disturbance>,
    pub horizon: usize,
    pub beta1: S,
    pub beta2: S,
    pub bounds: ObservationBounds<S>,
}

impl<S: Scalar> SyntheticEnv<S> {
    pub fn new(
        grid: GridSpec,
        disturbances: Vec<Disturbance>,
        horizon: usize,
        beta1: S,
        beta2: S,
        bounds: ObservationBounds<S>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(PatrolError::InvalidParameter { name: "horizon", reason: "must be >= 1".into() });
        }
        if !(beta1 > S::zero() && beta2 > S::zero()) {
            return Err(PatrolError::InvalidParameter {
                name: "beta",
                reason: format!("beta1 and beta2 must be positive, got {beta1}, {beta2}"),
            });
        }
        for d in &disturbances {
            grid.check_bounds(d.origin)?;
        }
        Ok(Self { grid, disturbances, horizon, beta1, beta2, bounds })
    }

    /// Places `big + small` disturbances on distinct free cells drawn from
    /// `rng`.
    pub fn random_layout<R: Rng>(
        grid: GridSpec,
        big: usize,
        small: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let free: Vec<CellIndex> = grid.free_cells().collect();
        let needed = big + small;
        if free.len() < needed {
            return Err(PatrolError::GridTooSmall { needed, available: free.len() });
        }
        let disturbances = sample(rng, free.len(), needed)
            .into_iter()
            .enumerate()
            .map(|(n, idx)| Disturbance {
                kind: if n < big { DisturbanceKind::Big } else { DisturbanceKind::Small },
                origin: free[idx],
            })
            .collect();
        Self::new(
            grid,
            disturbances,
            horizon,
            S::lit(DEFAULT_BETA1),
            S::lit(DEFAULT_BETA2),
            ObservationBounds::default(),
        )
    }

    /// Four big and three small disturbances.
    pub fn training_map(grid: GridSpec, horizon: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        Self::random_layout(grid, TRAINING_LAYOUT.0, TRAINING_LAYOUT.1, horizon, &mut rng)
    }

    /// Two big and three small disturbances, drawn from a different stream
    /// than [`SyntheticEnv::training_map`] so equal seeds give different maps.
    pub fn test_map(grid: GridSpec, horizon: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self::random_layout(grid, TEST_LAYOUT.0, TEST_LAYOUT.1, horizon, &mut rng)
    }

    pub fn amplitude(&self, kind: DisturbanceKind, k: usize) -> S {
        amplitude(kind, k, self.horizon, self.beta1, self.beta2)
    }
}

/// Disturbance amplitude at step `k` of a horizon `T`. Lies in `[0, 1]`.
pub fn amplitude<S: Scalar>(kind: DisturbanceKind, k: usize, horizon: usize, beta1: S, beta2: S) -> S {
    let k = S::from_usize_lossy(k);
    let t = S::from_usize_lossy(horizon);
    match kind {
        DisturbanceKind::Big => (-k / (beta1 * t)).exp(),
        DisturbanceKind::Small => {
            let phase = S::lit(2.0) * beta2 * S::lit(std::f64::consts::PI) * k / t;
            phase.sin().max(S::zero())
        }
    }
}

fn gaussian_index_kernel<S: Scalar>(c: CellIndex, origin: CellIndex) -> S {
    let di = S::from_usize_lossy(c.i.abs_diff(origin.i));
    let dj = S::from_usize_lossy(c.j.abs_diff(origin.j));
    (-S::lit(0.5) * (di * di + dj * dj)).exp()
}

impl<S: Scalar> TrafficField<S> for SyntheticEnv<S> {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn bounds(&self) -> &ObservationBounds<S> {
        &self.bounds
    }

    /// Sum of Gaussian bumps in index space, scaled by each amplitude.
    /// Defined for any `k`, including `k >= T`.
    fn raw_observation(&self, c: CellIndex, k: usize) -> S {
        self.disturbances
            .iter()
            .map(|d| self.amplitude(d.kind, k) * gaussian_index_kernel(c, d.origin))
            .fold(S::zero(), |acc, v| acc + v)
    }
}

/// A demand hotspot active during `[start, start + duration)`, with a
/// trapezoidal ramp in time and a Gaussian footprint of the given radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot<S> {
    pub start: usize,
    pub origin: CellIndex,
    pub peak: S,
    pub radius: S,
    pub duration: usize,
}

impl<S: Scalar> Hotspot<S> {
    fn ramp(&self, k: usize) -> S {
        if k < self.start || k >= self.start + self.duration {
            return S::zero();
        }
        let t = k - self.start;
        let ramp_len = (self.duration / 4).max(1);
        let up = S::from_usize_lossy(t + 1) / S::from_usize_lossy(ramp_len);
        let down = S::from_usize_lossy(self.duration - t) / S::from_usize_lossy(ramp_len);
        up.min(down).min(S::one())
    }

    fn value(&self, c: CellIndex, k: usize) -> S {
        let ramp = self.ramp(k);
        if ramp == S::zero() {
            return S::zero();
        }
        let di = S::from_usize_lossy(c.i.abs_diff(self.origin.i));
        let dj = S::from_usize_lossy(c.j.abs_diff(self.origin.j));
        let r2 = self.radius * self.radius;
        self.peak * ramp * (-(di * di + dj * dj) / (S::lit(2.0) * r2)).exp()
    }
}

/// Stochastic demand field: scheduled hotspots plus bounded zero-mean noise.
/// The noise at `(c, k)` is drawn from its own position in a seeded stream,
/// so queries are pure and order-independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandEnv<S> {
    pub grid: GridSpec,
    pub hotspots: Vec<Hotspot<S>>,
    pub seed: u64,
    /// Noise half-width as a fraction of the largest hotspot peak.
    pub noise_frac: S,
    pub bounds: ObservationBounds<S>,
}

pub const DEFAULT_NOISE_FRAC: f64 = 0.1;

impl<S: Scalar> DemandEnv<S> {
    pub fn new(
        grid: GridSpec,
        hotspots: Vec<Hotspot<S>>,
        seed: u64,
        noise_frac: S,
        bounds: ObservationBounds<S>,
    ) -> Result<Self> {
        for h in &hotspots {
            grid.check_bounds(h.origin)?;
            if !(h.peak >= S::zero()) || h.duration == 0 || !(h.radius > S::zero()) {
                return Err(PatrolError::InvalidParameter {
                    name: "hotspot",
                    reason: "peak must be >= 0, radius > 0 and duration >= 1".into(),
                });
            }
        }
        if !(noise_frac >= S::zero()) {
            return Err(PatrolError::InvalidParameter { name: "noise_frac", reason: "must be >= 0".into() });
        }
        Ok(Self { grid, hotspots, seed, noise_frac, bounds })
    }

    /// A rush-hour style schedule: `count` hotspots with random origins,
    /// start times, durations, peaks and radii, all drawn from `seed`.
    pub fn rush_hour(grid: GridSpec, horizon: usize, count: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(PatrolError::InvalidParameter { name: "horizon", reason: "must be >= 1".into() });
        }
        let free: Vec<CellIndex> = grid.free_cells().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let hotspots = (0..count)
            .map(|_| {
                let duration = rng.gen_range((horizon / 4).max(1)..=(horizon / 2).max(1));
                Hotspot {
                    start: rng.gen_range(0..horizon),
                    origin: free[rng.gen_range(0..free.len())],
                    peak: S::lit(rng.gen_range(0.5..=1.0)),
                    radius: S::lit(rng.gen_range(1.0..=2.5)),
                    duration,
                }
            })
            .collect();
        Self::new(grid, hotspots, seed, S::lit(DEFAULT_NOISE_FRAC), ObservationBounds::default())
    }

    fn noise(&self, c: CellIndex, k: usize) -> S {
        if self.noise_frac == S::zero() || self.hotspots.is_empty() {
            return S::zero();
        }
        let max_peak = self.hotspots.iter().map(|h| h.peak).fold(S::zero(), S::max);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.grid.flat(c) as u64 + 16);
        rng.set_word_pos(k as u128 * 2);
        let u: f64 = rng.gen_range(-1.0..1.0);
        self.noise_frac * max_peak * S::lit(u)
    }
}

impl<S: Scalar> TrafficField<S> for DemandEnv<S> {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn bounds(&self) -> &ObservationBounds<S> {
        &self.bounds
    }

    fn raw_observation(&self, c: CellIndex, k: usize) -> S {
        let signal = self.hotspots.iter().map(|h| h.value(c, k)).fold(S::zero(), |a, v| a + v);
        (signal + self.noise(c, k)).max(S::zero())
    }
}

/// Either environment kind behind one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Environment<S> {
    Synthetic(SyntheticEnv<S>),
    Demand(DemandEnv<S>),
}

impl<S: Scalar> TrafficField<S> for Environment<S> {
    fn grid(&self) -> &GridSpec {
        match self {
            Environment::Synthetic(e) => &e.grid,
            Environment::Demand(e) => &e.grid,
        }
    }

    fn bounds(&self) -> &ObservationBounds<S> {
        match self {
            Environment::Synthetic(e) => &e.bounds,
            Environment::Demand(e) => &e.bounds,
        }
    }

    fn raw_observation(&self, c: CellIndex, k: usize) -> S {
        match self {
            Environment::Synthetic(e) => e.raw_observation(c, k),
            Environment::Demand(e) => e.raw_observation(c, k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> GridSpec {
        GridSpec::unit(20, 30).unwrap()
    }

    fn single(kind: DisturbanceKind, at: (usize, usize)) -> SyntheticEnv<f64> {
        SyntheticEnv::new(
            grid(),
            vec![Disturbance { kind, origin: at.into() }],
            2000,
            0.7,
            5.0,
            ObservationBounds::default(),
        )
        .unwrap()
    }

    #[test]
    fn amplitude_cases() {
        assert_eq!(amplitude(DisturbanceKind::Big, 0, 2000, 0.7, 5.0), 1.0);
        assert_eq!(amplitude(DisturbanceKind::Small, 0, 2000, 0.7, 5.0), 0.0);
        // k / (beta1 T) = 1400 / 1400
        let a: f64 = amplitude(DisturbanceKind::Big, 1400, 2000, 0.7, 5.0);
        assert_relative_eq!(a, (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(a, 0.36787944117144233, max_relative = 1e-12);
        // quarter period of the small pulse: 2*5*pi*k/2000 = pi/2 at k = 100
        let s: f64 = amplitude(DisturbanceKind::Small, 100, 2000, 0.7, 5.0);
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        let neg: f64 = amplitude(DisturbanceKind::Small, 300, 2000, 0.7, 5.0);
        assert_eq!(neg, 0.0);
    }

    #[test]
    fn raw_observation_examples() {
        let empty = SyntheticEnv::<f64>::new(grid(), vec![], 10, 0.7, 5.0, Default::default()).unwrap();
        assert!(grid().cells().all(|c| empty.raw_observation(c, 3) == 0.0));

        let env = single(DisturbanceKind::Big, (5, 5));
        assert_eq!(env.raw_observation(CellIndex::new(5, 5), 0), 1.0);
        assert_relative_eq!(env.raw_observation(CellIndex::new(5, 6), 0), 0.6065306597126334, max_relative = 1e-12);
    }

    #[test]
    fn importance_normalization() {
        let b = ObservationBounds::new(0.2, 0.7).unwrap();
        let g = GridSpec::new(3.0, 3.0, 3, 3, [CellIndex::new(1, 1)]).unwrap();
        let c = CellIndex::new(0, 0);
        assert_eq!(temporal_importance(&b, &g, c, 0.2), 0.0);
        assert_eq!(temporal_importance(&b, &g, c, 0.7), 1.0);
        assert_eq!(temporal_importance(&b, &g, c, 5.0), 1.0);
        assert_eq!(temporal_importance(&b, &g, c, -1.0), 0.0);
        assert_eq!(temporal_importance(&b, &g, CellIndex::new(1, 1), 0.5), 0.0);
        assert!(ObservationBounds::new(1.0, 1.0).is_err());
    }

    #[test]
    fn map_layouts() {
        let train = SyntheticEnv::<f64>::training_map(grid(), 2000, 3).unwrap();
        let count = |e: &SyntheticEnv<f64>, k| e.disturbances.iter().filter(|d| d.kind == k).count();
        assert_eq!(train.disturbances.len(), 7);
        assert_eq!(count(&train, DisturbanceKind::Big), 4);
        assert_eq!(count(&train, DisturbanceKind::Small), 3);
        let test = SyntheticEnv::<f64>::test_map(grid(), 2000, 3).unwrap();
        assert_eq!(test.disturbances.len(), 5);
        assert_eq!(count(&test, DisturbanceKind::Big), 2);
        assert_eq!(test, SyntheticEnv::<f64>::test_map(grid(), 2000, 3).unwrap());
        assert_eq!((train.beta1, train.beta2), (0.7, 5.0));

        let mut origins: Vec<_> = train.disturbances.iter().map(|d| d.origin).collect();
        origins.sort();
        origins.dedup();
        assert_eq!(origins.len(), 7);

        let tiny = GridSpec::unit(2, 3).unwrap();
        assert!(matches!(
            SyntheticEnv::<f64>::training_map(tiny, 10, 0),
            Err(PatrolError::GridTooSmall { needed: 7, available: 6 })
        ));
    }

    #[test]
    fn demand_env_examples() {
        let g = GridSpec::unit(6, 6).unwrap();
        let quiet = DemandEnv::<f64>::new(g.clone(), vec![], 1, 0.0, Default::default()).unwrap();
        assert_eq!(quiet.raw_observation(CellIndex::new(2, 2), 5), 0.0);

        let h = Hotspot { start: 0, origin: CellIndex::new(2, 2), peak: 1.0, radius: 1.5, duration: 40 };
        let one = DemandEnv::new(g.clone(), vec![h], 1, 0.0, Default::default()).unwrap();
        assert_eq!(one.raw_observation(CellIndex::new(2, 2), 20), 1.0);
        assert_eq!(one.raw_observation(CellIndex::new(2, 2), 40), 0.0);
        assert!(one.raw_observation(CellIndex::new(2, 2), 0) < 1.0);

        let a = DemandEnv::<f64>::rush_hour(g.clone(), 144, 6, 9).unwrap();
        let b = DemandEnv::<f64>::rush_hour(g.clone(), 144, 6, 9).unwrap();
        for c in g.cells() {
            for k in [0, 17, 143] {
                assert_eq!(a.raw_observation(c, k).to_bits(), b.raw_observation(c, k).to_bits());
                assert!(a.raw_observation(c, k) >= 0.0);
            }
        }
    }

    #[test]
    fn noise_is_bounded() {
        let g = GridSpec::unit(4, 4).unwrap();
        let h = Hotspot { start: 0, origin: CellIndex::new(0, 0), peak: 2.0, radius: 1.0, duration: 1 };
        let env = DemandEnv::new(g.clone(), vec![h], 5, 0.1, Default::default()).unwrap();
        // hotspot inactive after k = 0, only noise remains
        for c in g.cells() {
            for k in 1..50 {
                assert!(env.raw_observation(c, k) <= 0.2 + 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn amplitude_bounds_and_monotonicity(k in 0usize..1999, t in 2000usize..4000) {
                let big: f64 = amplitude(DisturbanceKind::Big, k, t, 0.7, 5.0);
                let next: f64 = amplitude(DisturbanceKind::Big, k + 1, t, 0.7, 5.0);
                prop_assert!((0.0..=1.0).contains(&big) && next < big);
                let small: f64 = amplitude(DisturbanceKind::Small, k, t, 0.7, 5.0);
                prop_assert!((0.0..=1.0).contains(&small));
            }

            #[test]
            fn observation_ignores_disturbance_order(seed in 0u64..200, k in 0usize..100) {
                let env = SyntheticEnv::<f64>::training_map(GridSpec::unit(8, 9).unwrap(), 100, seed).unwrap();
                let mut rev = env.clone();
                rev.disturbances.reverse();
                for c in env.grid.cells() {
                    prop_assert!((env.raw_observation(c, k) - rev.raw_observation(c, k)).abs() <= 1e-15);
                }
            }

            #[test]
            fn importance_is_monotone(a in -1.0f64..2.0, b in -1.0f64..2.0) {
                let g = GridSpec::unit(2, 2).unwrap();
                let bounds = ObservationBounds::default();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let c = CellIndex::new(0, 1);
                prop_assert!(temporal_importance(&bounds, &g, c, lo) <= temporal_importance(&bounds, &g, c, hi));
            }
        }
    }
}
