//! Histograms and distances between binned distributions.

use crate::error::{Error, Result};

/// Number of bins per axis used by every total-variation comparison.
pub const TV_BINS: usize = 64;

/// Equal-width bins on `[lo, hi)`; samples outside land in an overflow bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Bins {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(hi > lo) || count == 0 {
            return Err(Error::Validation(format!("bad bins [{lo}, {hi}) x {count}")));
        }
        Ok(Self { lo, hi, count })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.count).map(|i| self.lo + i as f64 * self.width()).collect()
    }

    pub fn index(&self, x: f64) -> Option<usize> {
        if x < self.lo || x >= self.hi || !x.is_finite() {
            return None;
        }
        Some((((x - self.lo) / self.width()) as usize).min(self.count - 1))
    }

    /// Normalized histogram of `samples`; the last entry is the overflow mass.
    pub fn histogram(&self, samples: impl IntoIterator<Item = f64>) -> Vec<f64> {
        let mut h = vec![0.0; self.count + 1];
        let mut n = 0usize;
        for x in samples {
            n += 1;
            match self.index(x) {
                Some(i) => h[i] += 1.0,
                None => h[self.count] += 1.0,
            }
        }
        if n > 0 {
            h.iter_mut().for_each(|v| *v /= n as f64);
        }
        h
    }

    /// Bin masses of a density that is constant on cells of width `cell`
    /// centred at `centers`, with per-cell mass `masses`. Cells straddling a
    /// bin edge are split proportionally. The last entry is the overflow.
    pub fn masses_from_cells(&self, centers: &[f64], cell: f64, masses: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.count + 1];
        let w = self.width();
        for (&c, &m) in centers.iter().zip(masses) {
            if m == 0.0 {
                continue;
            }
            let (a, b) = (c - 0.5 * cell, c + 0.5 * cell);
            let mut inside = 0.0;
            if b > self.lo && a < self.hi {
                let first = (((a.max(self.lo)) - self.lo) / w).floor() as usize;
                let last = ((((b.min(self.hi)) - self.lo) / w).ceil() as usize).min(self.count);
                for i in first.min(self.count - 1)..last {
                    let (el, eh) = (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w);
                    let overlap = (b.min(eh) - a.max(el)).max(0.0);
                    let frac = overlap / cell;
                    out[i] += m * frac;
                    inside += frac;
                }
            }
            out[self.count] += m * (1.0 - inside).max(0.0);
        }
        out
    }

    /// Smallest bins covering every cell whose density is at least
    /// `rel_threshold` times the peak.
    pub fn covering_support(
        centers: &[f64],
        cell: f64,
        density: &[f64],
        rel_threshold: f64,
        count: usize,
    ) -> Result<Self> {
        let peak = density.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Validation("density has no support".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (&c, &d) in centers.iter().zip(density) {
            if d >= rel_threshold * peak {
                lo = lo.min(c - 0.5 * cell);
                hi = hi.max(c + 0.5 * cell);
            }
        }
        Self::new(lo, hi, count)
    }
}

/// Half the L1 distance between two probability vectors of equal length.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "tv_distance: length mismatch");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Standard deviation of a binomial frequency.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_overlap_conserves_mass() {
        let bins = Bins::new(-1.0, 1.0, 7).unwrap();
        let centers: Vec<f64> = (0..50).map(|i| -1.3 + 0.05 * i as f64).collect();
        let masses = vec![0.02; 50];
        let m = bins.masses_from_cells(&centers, 0.05, &masses);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // cells entirely inside [-1, 1): 40 cells of the 50, up to edge splits
        let inside: f64 = m[..7].iter().sum();
        assert!((inside - 0.8).abs() < 0.021);
    }

    #[test]
    fn histogram_and_tv() {
        let bins = Bins::new(0.0, 1.0, 4).unwrap();
        let h = bins.histogram([0.1, 0.3, 0.6, 0.9, 1.5]);
        assert_eq!(h, vec![0.2, 0.2, 0.2, 0.2, 0.2]);
        assert!((tv_distance(&h, &[0.25, 0.25, 0.25, 0.25, 0.0]) - 0.2).abs() < 1e-15);
    }
}
