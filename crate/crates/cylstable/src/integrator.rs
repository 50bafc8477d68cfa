//! The stochastic integral: exact sums of Radonified increments for adapted
//! step processes, extended to general predictable programs through
//! approximating step sequences on a dyadic refinement schedule, plus the
//! running integral path and the integrability predicate.
//!
//! The theory defines the extended integral as a limit in probability along
//! approximating step processes and provides no rate, so self-convergence of
//! the refinement sequence (Cauchy increments) is the only observable
//! surrogate and is reported alongside every value.

use serde::Serialize;

use crate::error::{CylError, Result};
use crate::grid::TimeGrid;
use crate::hilbert::HVector;
use crate::processes::{
    approximate_by_steps, lalpha_integral_quadrature, lalpha_metric_from_integral, prefix_at,
    AdaptedStepProcess, IntegrandProgram, QuadStatus,
};
use crate::rng::RngStream;
use crate::sampler::{sample_driving_path, DrivingPath, StabilityIndex};
use crate::stats::MCEstimate;

/// Cauchy stopping tolerance of the refinement schedule.
pub const CAUCHY_TOL: f64 = 1e-3;

/// H-valued cadlag values of the running integral on the driving grid;
/// between grid points the path is interpreted as a right-continuous step
/// function. `values[0] = 0` always.
#[derive(Debug, Clone)]
pub struct IntegralPath {
    pub grid: TimeGrid,
    pub values: Vec<HVector>,
}

impl IntegralPath {
    pub fn terminal(&self) -> &HVector {
        self.values.last().unwrap()
    }

    /// `sup_{t <= T} ||I(t)||` over the grid values.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(HVector::norm).fold(0.0, f64::max)
    }

    /// `sup_t ||I(t) - other(t)||` over the shared grid.
    pub fn sup_distance(&self, other: &IntegralPath) -> f64 {
        assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.sub(b).norm())
            .fold(0.0, f64::max)
    }
}

/// Map the points of `coarse` onto indices of `fine`; errors when `coarse`
/// is not a subgrid.
fn subgrid_positions(coarse: &TimeGrid, fine: &TimeGrid) -> Result<Vec<usize>> {
    let mut positions = Vec::with_capacity(coarse.times().len());
    let ft = fine.times();
    let mut j = 0;
    for &t in coarse.times() {
        while j < ft.len() && ft[j] < t {
            j += 1;
        }
        if j >= ft.len() || ft[j] != t {
            return Err(CylError::config(
                "step-process grid is not a subgrid of the driving grid",
            ));
        }
        positions.push(j);
    }
    Ok(positions)
}

/// Running integral of an adapted step process along a driving path:
/// within step cell `i` the value advances by
/// `coefficient(i, prefix) (Z(t) - Z(cell start))`, and the terminal value
/// is the exact sum of Radonified increments (no discretisation error
/// beyond the truncation of the spaces).
pub fn integral_path_step(
    theta: &AdaptedStepProcess,
    path: &DrivingPath,
) -> Result<IntegralPath> {
    if theta.dims().1 != path.dim() {
        return Err(CylError::config(format!(
            "step process expects d_G = {}, path has {}",
            theta.dims().1,
            path.dim()
        )));
    }
    let positions = subgrid_positions(&theta.grid, path.grid())?;
    let d_h = theta.dims().0;
    let mut values = vec![HVector::zeros(d_h); path.num_cells() + 1];
    let mut base = HVector::zeros(d_h);
    for i in 1..=theta.grid.num_cells() {
        let start = theta.grid.times()[i - 1];
        let prefix = prefix_at(path, start);
        let coeff = theta.coefficient(i, &prefix);
        let mut partial = vec![0.0; path.dim()];
        for j in (positions[i - 1] + 1)..=positions[i] {
            for (p, z) in partial.iter_mut().zip(path.increment(j)) {
                *p += z;
            }
            values[j] = base.add(&coeff.apply(&partial));
        }
        base = values[positions[i]].clone();
    }
    Ok(IntegralPath {
        grid: path.grid().clone(),
        values,
    })
}

/// Terminal value `I(Theta) = sum_i Theta_i (Z(t_i) - Z(t_{i-1}))`.
pub fn integrate_step(theta: &AdaptedStepProcess, path: &DrivingPath) -> Result<HVector> {
    Ok(integral_path_step(theta, path)?.terminal().clone())
}

/// One refinement level: a dyadic step grid and a truncation threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RefinementLevel {
    pub cells: usize,
    pub truncation: f64,
}

/// Dyadic refinement schedule: `2^k` cells with truncation level `2^k`.
#[derive(Debug, Clone, Serialize)]
pub struct RefinementSchedule {
    pub levels: Vec<RefinementLevel>,
}

impl RefinementSchedule {
    pub fn dyadic(first: u32, last: u32) -> Self {
        assert!(first <= last);
        Self {
            levels: (first..=last)
                .map(|k| RefinementLevel {
                    cells: 1usize << k,
                    truncation: (1u64 << k) as f64,
                })
                .collect(),
        }
    }

    pub fn finest_cells(&self) -> usize {
        self.levels.last().map(|l| l.cells).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelDiagnostic {
    pub cells: usize,
    pub truncation: f64,
    pub terminal: Vec<f64>,
    /// `||I_k - I_{k-1}||`, NaN on the first level.
    pub cauchy_increment: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrationDiagnostics {
    pub levels: Vec<LevelDiagnostic>,
    /// The last two increments fell below [`CAUCHY_TOL`].
    pub converged: bool,
}

fn level_grid(path_grid: &TimeGrid, cells: usize) -> Result<TimeGrid> {
    let m = path_grid.num_cells();
    if cells == 0 || m % cells != 0 {
        return Err(CylError::config(format!(
            "refinement level with {cells} cells does not divide the driving grid ({m} cells)"
        )));
    }
    let stride = m / cells;
    TimeGrid::new(
        path_grid
            .times()
            .iter()
            .step_by(stride)
            .copied()
            .collect(),
    )
}

/// Integral of a predictable program along one path, as the finest value of
/// the approximating step sequence, with the Cauchy increment sequence as
/// convergence diagnostics. A non-Cauchy refinement is flagged (the value is
/// still returned).
pub fn integrate(
    psi: std::sync::Arc<dyn IntegrandProgram>,
    path: &DrivingPath,
    schedule: &RefinementSchedule,
) -> Result<(HVector, IntegrationDiagnostics)> {
    if schedule.levels.is_empty() {
        return Err(CylError::config("empty refinement schedule"));
    }
    let mut diagnostics = Vec::with_capacity(schedule.levels.len());
    let mut previous: Option<HVector> = None;
    for level in &schedule.levels {
        let grid = level_grid(path.grid(), level.cells)?;
        let theta = approximate_by_steps(psi.clone(), grid, level.truncation);
        let value = integrate_step(&theta, path)?;
        let inc = previous
            .as_ref()
            .map(|p| value.sub(p).norm())
            .unwrap_or(f64::NAN);
        diagnostics.push(LevelDiagnostic {
            cells: level.cells,
            truncation: level.truncation,
            terminal: value.coords.clone(),
            cauchy_increment: inc,
        });
        previous = Some(value);
    }
    let n = diagnostics.len();
    let converged = n >= 3
        && diagnostics[n - 1].cauchy_increment < CAUCHY_TOL
        && diagnostics[n - 2].cauchy_increment < CAUCHY_TOL;
    Ok((
        previous.unwrap(),
        IntegrationDiagnostics {
            levels: diagnostics,
            converged,
        },
    ))
}

/// Running integral `t -> int_0^t psi dL` of a predictable program: the
/// integral path of the finest approximating step process, so its terminal
/// value coincides exactly with [`integrate`].
pub fn integral_path(
    psi: std::sync::Arc<dyn IntegrandProgram>,
    path: &DrivingPath,
    schedule: &RefinementSchedule,
) -> Result<(IntegralPath, IntegrationDiagnostics)> {
    let (_, diagnostics) = integrate(psi.clone(), path, schedule)?;
    let finest = schedule.levels.last().unwrap();
    let grid = level_grid(path.grid(), finest.cells)?;
    let theta = approximate_by_steps(psi, grid, finest.truncation);
    Ok((integral_path_step(&theta, path)?, diagnostics))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IntegrabilityVerdict {
    Integrable,
    NotIntegrable,
    Inconclusive,
}

/// Outcome of the integrability check of a predictable program.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    pub verdict: IntegrabilityVerdict,
    /// Estimate of `E[|Psi|_{L^alpha} ^ 1]` over the sampled scenarios
    /// (exact for deterministic programs).
    pub metric: MCEstimate,
    /// Realized `int |Psi|^alpha dt` per scenario; infinite when divergent.
    pub scenario_norms: Vec<f64>,
    pub diverged_scenarios: usize,
    pub inconclusive_scenarios: usize,
}

/// Decide membership of the integrable class: the program is integrable
/// precisely when its paths lie in `L^alpha`, so every sampled scenario must
/// produce a finite, mesh-convergent `L^alpha` integral. Deterministic
/// programs bypass sampling.
pub fn is_integrable(
    psi: &dyn IntegrandProgram,
    alpha: StabilityIndex,
    grid: &TimeGrid,
    n_scenarios: usize,
    stream: RngStream,
) -> Result<IntegrabilityReport> {
    let (d_h, d_g) = psi.dims();
    let config = crate::hilbert::TruncationConfig::new(d_g, d_h)?;
    let scenarios = if psi.is_deterministic() { 1 } else { n_scenarios.max(1) };
    let mut norms = Vec::with_capacity(scenarios);
    let mut clipped = Vec::with_capacity(scenarios);
    let mut diverged = 0usize;
    let mut inconclusive = 0usize;
    for s in 0..scenarios {
        let mut rng = stream.substream(s as u64).rng();
        let path = sample_driving_path(alpha, config, grid, &mut rng);
        let q = lalpha_integral_quadrature(psi, &path, alpha);
        match q.status {
            QuadStatus::Converged => {
                norms.push(q.value);
                clipped.push(lalpha_metric_from_integral(alpha, q.value).min(1.0));
            }
            QuadStatus::Diverged => {
                diverged += 1;
                norms.push(f64::INFINITY);
                clipped.push(1.0);
            }
            QuadStatus::Inconclusive => {
                inconclusive += 1;
                norms.push(q.value);
                clipped.push(lalpha_metric_from_integral(alpha, q.value).min(1.0));
            }
        }
    }
    let verdict = if diverged > 0 {
        IntegrabilityVerdict::NotIntegrable
    } else if inconclusive > 0 {
        IntegrabilityVerdict::Inconclusive
    } else {
        IntegrabilityVerdict::Integrable
    };
    Ok(IntegrabilityReport {
        verdict,
        metric: MCEstimate::from_samples(&clipped),
        scenario_norms: norms,
        diverged_scenarios: diverged,
        inconclusive_scenarios: inconclusive,
    })
}
