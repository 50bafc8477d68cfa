use crate::error::{CylError, Result};

/// A strictly increasing time grid `0 = t_0 < t_1 < ... < t_M = T`.
///
/// Cell `i` (1-based) is the left-open interval `(t_{i-1}, t_i]`; values
/// attached to the singleton `{0}` carry no Lebesgue weight and are ignored
/// by every integral.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(CylError::config("grid needs at least two time points"));
        }
        if times[0] != 0.0 {
            return Err(CylError::config("grid must start at t = 0"));
        }
        if !times.iter().all(|t| t.is_finite()) {
            return Err(CylError::config("grid times must be finite"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CylError::config("grid times must be strictly increasing"));
        }
        Ok(Self { times })
    }

    /// Uniform grid with `cells` cells on `[0, horizon]`.
    pub fn uniform(cells: usize, horizon: f64) -> Result<Self> {
        if cells == 0 {
            return Err(CylError::config("grid needs at least one cell"));
        }
        if !(horizon > 0.0) {
            return Err(CylError::config("horizon must be positive"));
        }
        let times = (0..=cells)
            .map(|i| horizon * i as f64 / cells as f64)
            .collect();
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of cells `M`.
    pub fn num_cells(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Endpoints `(t_{i-1}, t_i]` of 1-based cell `i`.
    pub fn cell(&self, i: usize) -> (f64, f64) {
        assert!(i >= 1 && i <= self.num_cells(), "cell index out of range");
        (self.times[i - 1], self.times[i])
    }

    pub fn cell_length(&self, i: usize) -> f64 {
        let (a, b) = self.cell(i);
        b - a
    }

    /// True when every time point of `self` occurs in `fine`.
    pub fn is_subgrid_of(&self, fine: &TimeGrid) -> bool {
        let mut j = 0;
        'outer: for &t in &self.times {
            while j < fine.times.len() {
                if fine.times[j] == t {
                    continue 'outer;
                }
                if fine.times[j] > t {
                    return false;
                }
                j += 1;
            }
            return false;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.7, 0.3]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5]).is_err());
    }

    #[test]
    fn uniform_cells() {
        let g = TimeGrid::uniform(4, 1.0).unwrap();
        assert_eq!(g.num_cells(), 4);
        assert_eq!(g.cell(1), (0.0, 0.25));
        assert_eq!(g.cell(4), (0.75, 1.0));
    }

    #[test]
    fn subgrid_detection() {
        let coarse = TimeGrid::uniform(2, 1.0).unwrap();
        let fine = TimeGrid::uniform(8, 1.0).unwrap();
        assert!(coarse.is_subgrid_of(&fine));
        assert!(!fine.is_subgrid_of(&coarse));
        let offset = TimeGrid::new(vec![0.0, 0.3, 1.0]).unwrap();
        assert!(!offset.is_subgrid_of(&fine));
    }
}
