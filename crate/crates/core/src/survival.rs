//! Discrete-time survival primitives: quantile time bins, the hazard to
//! survival conversion, the time-dependent concordance index and median
//! survival.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Partition of the time axis into `n_bins` half-open bins `(edges[b], edges[b+1]]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    edges: Vec<f64>,
    requested_bins: usize,
}

impl TimeGrid {
    /// Builds a grid from explicit edges (`edges[0] = 0`, strictly increasing).
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::DegenerateGrid("a grid needs at least two edges".into()));
        }
        if edges[0] != 0.0 {
            return Err(Error::DegenerateGrid(format!("first edge is {}, not 0", edges[0])));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateGrid("edges must be finite and strictly increasing".into()));
        }
        let requested_bins = edges.len() - 1;
        Ok(Self {
            edges,
            requested_bins,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bin count asked for before duplicate quantiles were merged.
    pub fn requested_bins(&self) -> usize {
        self.requested_bins
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Upper edge of every bin.
    pub fn upper_edges(&self) -> &[f64] {
        &self.edges[1..]
    }

    /// Index of the bin containing `t`. Times past the last edge clamp to the
    /// final bin; non-positive times fall in the first.
    pub fn bin_index(&self, t: f64) -> usize {
        let upper = &self.edges[1..];
        upper.partition_point(|&e| e < t).min(upper.len() - 1)
    }
}

/// Builds quantile time bins from (training) observations.
///
/// The bin count is `n_override`, or `round(sqrt(count))`. Interior edges are
/// nearest-rank quantiles of the times; duplicate edges are merged, shrinking
/// the grid (the request stays visible through [`TimeGrid::requested_bins`]).
pub fn build_time_grid(times: &[f64], events: &[u8], n_override: Option<usize>) -> Result<TimeGrid> {
    if times.len() != events.len() {
        return Err(Error::Contract(format!(
            "{} times but {} events",
            times.len(),
            events.len()
        )));
    }
    if times.len() < 2 {
        return Err(Error::Contract("a time grid needs at least two observations".into()));
    }
    if let Some(bad) = times.iter().find(|t| !t.is_finite() || **t <= 0.0) {
        return Err(Error::Contract(format!("time {bad} is not positive and finite")));
    }
    if let Some(bad) = events.iter().find(|&&e| e > 1) {
        return Err(Error::Contract(format!("event indicator {bad} is not 0/1")));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Err(Error::DegenerateGrid(format!("all {} times equal {min}", times.len())));
    }
    let n = match n_override {
        Some(0) => return Err(Error::Config("bin count override must be positive".into())),
        Some(n) => n,
        None => (math::round(math::sqrt(times.len() as f64)) as usize).max(1),
    };
    let count = sorted.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    for k in 1..n {
        // Nearest-rank: the ceil(k/n * N)-th smallest observation.
        let rank = (k * count).div_ceil(n);
        let q = sorted[rank.max(1) - 1];
        if q > *edges.last().unwrap() && q < max {
            edges.push(q);
        }
    }
    edges.push(max);
    Ok(TimeGrid {
        edges,
        requested_bins: n,
    })
}

/// Per-bin hazards and the survival they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub grid: TimeGrid,
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
}

impl SurvivalCurve {
    /// Survival probability at time `t` (the value of the bin containing `t`).
    pub fn at(&self, t: f64) -> f64 {
        self.survival[self.grid.bin_index(t)]
    }
}

/// `S(b) = exp(-sum_{s <= b} h(s))`.
pub fn cumulative_survival(hazards: &[f64]) -> Vec<f64> {
    let mut cumulative = 0.0;
    hazards
        .iter()
        .map(|h| {
            cumulative += h;
            math::exp(-cumulative)
        })
        .collect()
}

pub fn hazards_to_survival(hazards: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
    if hazards.len() != grid.n_bins() {
        return Err(Error::Contract(format!(
            "{} hazards for a {}-bin grid",
            hazards.len(),
            grid.n_bins()
        )));
    }
    if let Some(bad) = hazards.iter().find(|h| !(**h >= 0.0) || !h.is_finite()) {
        return Err(Error::Contract(format!("hazard {bad} is negative or non-finite")));
    }
    Ok(SurvivalCurve {
        grid: grid.clone(),
        hazards: hazards.to_vec(),
        survival: cumulative_survival(hazards),
    })
}

/// Time-dependent concordance: over pairs with `T_i < T_j` and `E_i = 1`, the
/// fraction where `S_i(T_i) < S_j(T_i)`, ties counting one half.
pub fn antolini_cindex(curves: &[SurvivalCurve], times: &[f64], events: &[u8]) -> Result<f64> {
    if curves.len() != times.len() || times.len() != events.len() {
        return Err(Error::Contract(format!(
            "lengths differ: {} curves, {} times, {} events",
            curves.len(),
            times.len(),
            events.len()
        )));
    }
    let (halves, pairs) = concordance_counts(times, events, |i, j| {
        let t = times[i];
        (curves[i].at(t), curves[j].at(t))
    });
    ratio(halves, pairs)
}

/// Same statistic for predictions stored as survival rows on one shared grid.
pub fn antolini_cindex_rows(
    grid: &TimeGrid,
    survival: &[Vec<f64>],
    times: &[f64],
    events: &[u8],
) -> Result<f64> {
    if survival.len() != times.len() || times.len() != events.len() {
        return Err(Error::Contract(format!(
            "lengths differ: {} curves, {} times, {} events",
            survival.len(),
            times.len(),
            events.len()
        )));
    }
    let (halves, pairs) = concordance_counts(times, events, |i, j| {
        let b = grid.bin_index(times[i]);
        (survival[i][b], survival[j][b])
    });
    ratio(halves, pairs)
}

/// Counts concordance in half units so the result does not depend on summation order.
fn concordance_counts(
    times: &[f64],
    events: &[u8],
    mut at_earlier: impl FnMut(usize, usize) -> (f64, f64),
) -> (u64, u64) {
    let (mut halves, mut pairs) = (0u64, 0u64);
    for i in 0..times.len() {
        if events[i] != 1 {
            continue;
        }
        for j in 0..times.len() {
            if times[i] < times[j] {
                pairs += 1;
                let (si, sj) = at_earlier(i, j);
                if si < sj {
                    halves += 2;
                } else if si == sj {
                    halves += 1;
                }
            }
        }
    }
    (halves, pairs)
}

fn ratio(halves: u64, pairs: u64) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(halves as f64 / (2 * pairs) as f64)
}

/// Time at which survival first reaches 0.5, interpolating linearly inside
/// the crossing bin (survival is 1 at time 0).
pub fn median_survival_time(curve: &SurvivalCurve) -> Option<f64> {
    let edges = curve.grid.edges();
    let mut previous = 1.0;
    for (b, &s) in curve.survival.iter().enumerate() {
        if s <= 0.5 {
            let (lo, hi) = (edges[b], edges[b + 1]);
            let frac = (previous - 0.5) / (previous - s);
            return Some(lo + frac * (hi - lo));
        }
        previous = s;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid(edges: &[f64]) -> TimeGrid {
        TimeGrid::from_edges(edges.to_vec()).unwrap()
    }

    #[test]
    fn sqrt_rule_and_override() {
        let times: Vec<f64> = (1..=144).map(|t| t as f64 * 0.5).collect();
        let events = vec![1u8; 144];
        let g = build_time_grid(&times, &events, None).unwrap();
        assert_eq!(g.n_bins(), 12);
        let g16 = build_time_grid(&times, &events, Some(16)).unwrap();
        assert_eq!(g16.n_bins(), 16);
        assert_eq!(g16.requested_bins(), 16);
    }

    #[test]
    fn uniform_times_fill_bins_equally() {
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let g = build_time_grid(&times, &[0; 100], Some(10)).unwrap();
        assert_eq!(g.n_bins(), 10);
        let mut counts = [0usize; 10];
        for &t in &times {
            counts[g.bin_index(t)] += 1;
        }
        assert_eq!(counts, [10; 10]);
        assert_eq!(g.edges()[0], 0.0);
        assert_eq!(*g.edges().last().unwrap(), 100.0);
    }

    #[test]
    fn duplicate_quantiles_shrink_the_grid() {
        let times = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0];
        let g = build_time_grid(&times, &[1; 8], Some(4)).unwrap();
        assert_eq!(g.requested_bins(), 4);
        assert!(g.n_bins() < 4);
        assert!(g.edges().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert!(matches!(
            build_time_grid(&[2.0, 2.0, 2.0], &[1, 0, 1], None),
            Err(Error::DegenerateGrid(_))
        ));
        assert!(build_time_grid(&[1.0], &[1], None).is_err());
        assert!(build_time_grid(&[1.0, -1.0], &[1, 1], None).is_err());
        assert!(build_time_grid(&[1.0, 2.0], &[1], None).is_err());
        assert!(build_time_grid(&[1.0, 2.0], &[1, 2], None).is_err());
    }

    #[test]
    fn bin_index_edges_and_clamping() {
        let g = grid(&[0.0, 10.0, 20.0]);
        assert_eq!(g.bin_index(0.5), 0);
        assert_eq!(g.bin_index(10.0), 0);
        assert_eq!(g.bin_index(10.0001), 1);
        assert_eq!(g.bin_index(20.0), 1);
        assert_eq!(g.bin_index(500.0), 1);
        assert_eq!(g.bin_index(0.0), 0);
    }

    #[test]
    fn hazards_to_survival_cases() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let zero = hazards_to_survival(&[0.0, 0.0], &g).unwrap();
        assert_eq!(zero.survival, vec![1.0, 1.0]);
        let c = hazards_to_survival(&[0.1, 0.2], &g).unwrap();
        assert!((c.survival[0] - 0.904_837_418_035_959_6).abs() < 1e-15);
        assert!((c.survival[1] - 0.740_818_220_681_717_8).abs() < 1e-15);
        assert!(matches!(
            hazards_to_survival(&[0.1, -0.2], &g),
            Err(Error::Contract(_))
        ));
        assert!(hazards_to_survival(&[0.1], &g).is_err());
    }

    #[test]
    fn cindex_fixed_points() {
        let g = grid(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let times = [1.0, 2.0, 3.0, 4.0];
        let events = [1, 1, 1, 0];
        // Earlier death, lower survival everywhere.
        let ordered: Vec<SurvivalCurve> = (0..4)
            .map(|i| hazards_to_survival(&[0.1 * (4 - i) as f64; 4], &g).unwrap())
            .collect();
        assert_eq!(antolini_cindex(&ordered, &times, &events).unwrap(), 1.0);
        let same: Vec<SurvivalCurve> =
            (0..4).map(|_| hazards_to_survival(&[0.1; 4], &g).unwrap()).collect();
        assert_eq!(antolini_cindex(&same, &times, &events).unwrap(), 0.5);
        assert_eq!(
            antolini_cindex(&same, &times, &[0, 0, 0, 0]),
            Err(Error::UndefinedMetric)
        );
    }

    #[test]
    fn median_survival_cases() {
        let g = grid(&[0.0, 10.0, 20.0]);
        let curve = |s: Vec<f64>| SurvivalCurve {
            grid: g.clone(),
            hazards: vec![0.0; 2],
            survival: s,
        };
        assert_eq!(median_survival_time(&curve(vec![1.0, 1.0])), None);
        let m = median_survival_time(&curve(vec![0.9, 0.4])).unwrap();
        assert!((m - 18.0).abs() < 1e-12 && m > 10.0 && m < 20.0);
        assert_eq!(median_survival_time(&curve(vec![0.5, 0.3])), Some(10.0));
    }
}
