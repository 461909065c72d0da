//! Coarse-to-fine action discretization: uniform bin partitions, zooming,
//! bin location for given actions, and the level-path encoding whose
//! centroids condition the critic. Pure value arithmetic, no state.
//!
//! Bin indices are 1-based (1..=B) throughout this module's public API.

use crate::error::{CoreError, Result};

/// Largest out-of-bounds overshoot that is silently clamped instead of
/// rejected; ensembling clipped actions can produce overshoot of this order.
pub const CLAMP_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Semantics {
    Position,
    Torque,
}

#[derive(Clone, Copy, Debug)]
pub struct ActionSpaceSpec {
    pub dims: usize,
    pub levels: usize,
    pub bins: usize,
    pub low: f64,
    pub high: f64,
    pub semantics: Semantics,
}

impl ActionSpaceSpec {
    pub fn new(dims: usize, levels: usize, bins: usize, semantics: Semantics) -> Self {
        assert!(levels >= 1 && bins >= 2 && dims >= 1);
        ActionSpaceSpec { dims, levels, bins, low: -1.0, high: 1.0, semantics }
    }

    pub fn root(&self) -> Interval {
        Interval { lo: self.low, hi: self.high }
    }

    /// Half the finest bin width: the worst-case round-trip error of
    /// encode-then-decode.
    pub fn finest_half_width(&self) -> f64 {
        (self.high - self.low) / (2.0 * (self.bins as f64).powi(self.levels as i32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Boundary i (0..=B) of a B-way split, as the weighted mean of the
    /// endpoints. discretize, zoom_in and locate_bin all call this, so they
    /// agree bit-for-bit; the symmetric form keeps boundaries of round
    /// intervals exact (e.g. splitting [-1, 1] five ways yields 0.6, not
    /// 0.6000000000000001 as `lo + width * i / B` would).
    fn edge(self, i: usize, bins: usize) -> f64 {
        if i == 0 {
            self.lo
        } else if i == bins {
            self.hi
        } else {
            (self.lo * (bins - i) as f64 + self.hi * i as f64) / bins as f64
        }
    }
}

/// One zoom state per action dimension.
#[derive(Clone, Debug)]
pub struct IntervalBox {
    pub dims: Vec<Interval>,
}

impl IntervalBox {
    pub fn root(spec: &ActionSpaceSpec) -> Self {
        IntervalBox { dims: vec![spec.root(); spec.dims] }
    }
}

/// The chosen bin (1-based) and centroid per level and dimension for one
/// action vector. The level-0 conditioning action is the zero vector and is
/// not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPath {
    /// [levels][dims], entries in 1..=B
    pub bins: Vec<Vec<usize>>,
    /// [levels][dims]
    pub centroids: Vec<Vec<f64>>,
}

impl LevelPath {
    /// The decoded action: centroids of the finest level.
    pub fn decode(&self) -> &[f64] {
        self.centroids.last().expect("at least one level")
    }
}

/// B equal-width sub-intervals tiling `iv` (half-open, last closed), plus
/// their centroids.
pub fn discretize(iv: Interval, bins: usize) -> (Vec<Interval>, Vec<f64>) {
    assert!(bins >= 1);
    let mut ivs = Vec::with_capacity(bins);
    let mut cents = Vec::with_capacity(bins);
    for b in 0..bins {
        let sub = Interval { lo: iv.edge(b, bins), hi: iv.edge(b + 1, bins) };
        cents.push(sub.midpoint());
        ivs.push(sub);
    }
    (ivs, cents)
}

/// The `bin_index`-th (1-based) sub-interval of `iv`.
pub fn zoom_in(iv: Interval, bin_index: usize, bins: usize) -> Result<Interval> {
    if bin_index < 1 || bin_index > bins {
        return Err(CoreError::OutOfBounds(format!(
            "zoom_in: bin {bin_index} outside 1..={bins}"
        )));
    }
    Ok(Interval { lo: iv.edge(bin_index - 1, bins), hi: iv.edge(bin_index, bins) })
}

/// Centroid of the 1-based bin of `iv`.
pub fn centroid(iv: Interval, bin_index: usize, bins: usize) -> Result<f64> {
    Ok(zoom_in(iv, bin_index, bins)?.midpoint())
}

/// The 1-based bin containing `a` under the half-open convention (last bin
/// closed). Overshoot up to CLAMP_TOLERANCE is clamped; worse is an error.
pub fn locate_bin(iv: Interval, a: f64, bins: usize) -> Result<usize> {
    if a.is_nan() {
        return Err(CoreError::InvalidInput("locate_bin: NaN action".into()));
    }
    let a = clamp_into(iv, a)?;
    let raw = ((a - iv.lo) / iv.width() * bins as f64).floor();
    let mut idx = (raw.max(0.0) as usize).min(bins - 1);
    // Float fixup so the arithmetic guess matches the edge lerp exactly.
    while idx > 0 && a < iv.edge(idx, bins) {
        idx -= 1;
    }
    while idx + 1 < bins && a >= iv.edge(idx + 1, bins) {
        idx += 1;
    }
    Ok(idx + 1)
}

fn clamp_into(iv: Interval, a: f64) -> Result<f64> {
    if a < iv.lo {
        if iv.lo - a <= CLAMP_TOLERANCE {
            return Ok(iv.lo);
        }
        return Err(CoreError::OutOfBounds(format!("action {a} below {}", iv.lo)));
    }
    if a > iv.hi {
        if a - iv.hi <= CLAMP_TOLERANCE {
            return Ok(iv.hi);
        }
        return Err(CoreError::OutOfBounds(format!("action {a} above {}", iv.hi)));
    }
    Ok(a)
}

/// Iterates locate + zoom from the root interval for every dimension,
/// producing the per-level bins and centroids for a given action vector.
pub fn action_to_level_path(spec: &ActionSpaceSpec, a: &[f64]) -> Result<LevelPath> {
    if a.len() != spec.dims {
        return Err(CoreError::ShapeMismatch(format!(
            "action has {} dims, spec has {}",
            a.len(),
            spec.dims
        )));
    }
    let mut bins = vec![vec![0usize; spec.dims]; spec.levels];
    let mut cents = vec![vec![0f64; spec.dims]; spec.levels];
    for (d, &ad) in a.iter().enumerate() {
        let mut iv = spec.root();
        for l in 0..spec.levels {
            let b = locate_bin(iv, ad, spec.bins)?;
            iv = zoom_in(iv, b, spec.bins)?;
            bins[l][d] = b;
            cents[l][d] = iv.midpoint();
        }
    }
    Ok(LevelPath { bins, centroids: cents })
}

/// Per-dimension affine map between the environment's action range actually
/// covered by demonstrations and the critic's [-1, 1] space. Falls back to
/// the identity when fitted without data or over a degenerate range.
#[derive(Clone, Debug)]
pub struct ActionScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionScaler {
    pub fn identity(dims: usize) -> Self {
        ActionScaler { lo: vec![-1.0; dims], hi: vec![1.0; dims] }
    }

    /// Per-dimension min/max over demo actions. Dimensions with no spread or
    /// no data stay identity.
    pub fn fit<'a>(dims: usize, actions: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut lo = vec![f64::INFINITY; dims];
        let mut hi = vec![f64::NEG_INFINITY; dims];
        for a in actions {
            assert_eq!(a.len(), dims);
            for d in 0..dims {
                lo[d] = lo[d].min(a[d]);
                hi[d] = hi[d].max(a[d]);
            }
        }
        for d in 0..dims {
            if !(hi[d] - lo[d]).is_finite() || hi[d] - lo[d] < 1e-9 {
                lo[d] = -1.0;
                hi[d] = 1.0;
            }
        }
        ActionScaler { lo, hi }
    }

    /// Environment action -> critic space [-1, 1].
    pub fn encode(&self, a: &[f64], out: &mut [f64]) {
        for d in 0..a.len() {
            out[d] = 2.0 * (a[d] - self.lo[d]) / (self.hi[d] - self.lo[d]) - 1.0;
        }
    }

    /// Critic-space action -> environment action.
    pub fn decode(&self, a: &[f64], out: &mut [f64]) {
        for d in 0..a.len() {
            out[d] = self.lo[d] + 0.5 * (a[d] + 1.0) * (self.hi[d] - self.lo[d]);
        }
    }

    /// Clips an environment action into the fitted range, so that a later
    /// encode is always in bounds.
    pub fn clip(&self, a: &mut [f64]) {
        for d in 0..a.len() {
            a[d] = a[d].clamp(self.lo[d], self.hi[d]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FULL: Interval = Interval { lo: -1.0, hi: 1.0 };

    #[test]
    fn discretize_centroids() {
        let (_, c) = discretize(FULL, 5);
        for (got, want) in c.iter().zip([-0.8, -0.4, 0.0, 0.4, 0.8]) {
            assert_relative_eq!(got, &want, epsilon = 1e-12);
        }

        let (_, c2) = discretize(Interval { lo: 0.2, hi: 0.6 }, 5);
        for (got, want) in c2.iter().zip([0.24, 0.32, 0.40, 0.48, 0.56]) {
            assert_relative_eq!(got, &want, epsilon = 1e-12);
        }

        let (ivs, c3) = discretize(Interval { lo: 0.3, hi: 0.9 }, 1);
        assert_eq!(ivs[0], Interval { lo: 0.3, hi: 0.9 });
        assert_relative_eq!(c3[0], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn zoom_in_examples() {
        let z4 = zoom_in(FULL, 4, 5).unwrap();
        assert_relative_eq!(z4.lo, 0.2, epsilon = 1e-12);
        assert_relative_eq!(z4.hi, 0.6, epsilon = 1e-12);
        let z = zoom_in(Interval { lo: 0.2, hi: 0.6 }, 5, 5).unwrap();
        assert_relative_eq!(z.lo, 0.52, epsilon = 1e-12);
        assert_relative_eq!(z.hi, 0.6, epsilon = 1e-12);
        assert_eq!(zoom_in(FULL, 1, 2).unwrap(), Interval { lo: -1.0, hi: 0.0 });
        assert!(zoom_in(FULL, 0, 5).is_err());
        assert!(zoom_in(FULL, 6, 5).is_err());
    }

    #[test]
    fn locate_bin_examples() {
        assert_eq!(locate_bin(FULL, 0.55, 5).unwrap(), 4);
        assert_eq!(locate_bin(FULL, 1.0, 5).unwrap(), 5);
        // half-open convention: boundary promotes to the upper bin
        assert_eq!(locate_bin(FULL, 0.6, 5).unwrap(), 5);
        assert!(locate_bin(FULL, f64::NAN, 5).is_err());
        assert!(locate_bin(FULL, 1.1, 5).is_err());
        // tiny overshoot clamps
        assert_eq!(locate_bin(FULL, 1.0 + 5e-7, 5).unwrap(), 5);
        assert_eq!(locate_bin(FULL, -1.0 - 5e-7, 5).unwrap(), 1);
    }

    #[test]
    fn level_path_examples() {
        let spec = ActionSpaceSpec::new(1, 3, 5, Semantics::Position);
        let p = action_to_level_path(&spec, &[0.55]).unwrap();
        assert_eq!(p.bins, vec![vec![4], vec![5], vec![2]]);
        assert_relative_eq!(p.centroids[0][0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(p.centroids[1][0], 0.56, epsilon = 1e-12);
        assert_relative_eq!(p.centroids[2][0], 0.544, epsilon = 1e-12);

        let z = action_to_level_path(&spec, &[0.0]).unwrap();
        for l in 0..3 {
            assert_relative_eq!(z.centroids[l][0], 0.0, epsilon = 1e-12);
        }

        let lo = action_to_level_path(&spec, &[-1.0]).unwrap();
        assert_eq!(lo.bins, vec![vec![1], vec![1], vec![1]]);
        assert_relative_eq!(lo.decode()[0], -1.0 + 1.0 / 125.0, epsilon = 1e-12);
    }

    #[test]
    fn centroid_locates_back_to_its_bin() {
        for bins in [2, 3, 5, 7] {
            let (_, cents) = discretize(FULL, bins);
            for (i, &c) in cents.iter().enumerate() {
                assert_eq!(locate_bin(FULL, c, bins).unwrap(), i + 1);
            }
        }
    }

    #[test]
    fn repeated_zoom_width() {
        let spec = ActionSpaceSpec::new(1, 3, 5, Semantics::Position);
        let mut iv = spec.root();
        for _ in 0..spec.levels {
            iv = zoom_in(iv, 3, spec.bins).unwrap();
        }
        assert_relative_eq!(iv.width(), 2.0 / 125.0, epsilon = 1e-15);
    }

    #[test]
    fn scaler_round_trip_and_fallback() {
        let demo: Vec<Vec<f64>> = vec![vec![-0.4, 0.2], vec![0.6, 0.2]];
        let s = ActionScaler::fit(2, demo.iter().map(|a| a.as_slice()));
        // dim 1 has zero spread -> identity
        assert_eq!((s.lo[1], s.hi[1]), (-1.0, 1.0));
        assert_eq!((s.lo[0], s.hi[0]), (-0.4, 0.6));
        let mut enc = [0.0; 2];
        let mut dec = [0.0; 2];
        s.encode(&[0.1, 0.5], &mut enc);
        assert_relative_eq!(enc[0], 0.0, epsilon = 1e-12);
        s.decode(&enc, &mut dec);
        assert_relative_eq!(dec[0], 0.1, epsilon = 1e-12);
        assert_relative_eq!(dec[1], 0.5, epsilon = 1e-12);

        let id = ActionScaler::fit(2, std::iter::empty());
        assert_eq!(id.lo, vec![-1.0, -1.0]);
    }
}
