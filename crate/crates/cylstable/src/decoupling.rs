//! Decoupled tangent sequences of Radonified increments.
//!
//! The product space `(Omega x Omega', P (x) P')` is realised as two
//! independent RNG streams over the same grid: the coupled sum applies the
//! coefficients (evaluated on base-path prefixes) to the base increments,
//! the decoupled sum applies the *same* coefficients to the ghost
//! increments. Re-running the noise with frozen coefficients is literally
//! the tangent construction; both terms share the conditional law
//! `exp(-(t_n - t_{n-1}) ||Theta_n^* h||^alpha)` given the past, and for a
//! fixed base path the decoupled terms are independent across cells.

use crate::error::{CylError, Result};
use crate::hilbert::{HVector, TruncationConfig};
use crate::processes::{prefix_at, AdaptedStepProcess, ContractionStepProcess};
use crate::rng::RngStream;
use crate::sampler::{sample_driving_path, sample_increment, DrivingPath, StabilityIndex};
use crate::stats::MCEstimate;

/// A coupled/decoupled pair: one adapted step process, one base scenario
/// and one independent ghost scenario on the same grid.
pub struct TangentPair {
    pub theta: AdaptedStepProcess,
    pub base: DrivingPath,
    pub ghost: DrivingPath,
}

impl TangentPair {
    /// Coefficient of cell `i`, evaluated from the base-path prefix in both
    /// the coupled and the decoupled sum.
    fn coefficient(&self, i: usize) -> crate::hilbert::HSOperator {
        let start = self.theta.grid.times()[i - 1];
        self.theta.coefficient(i, &prefix_at(&self.base, start))
    }

    /// `sum_n Theta_n(omega) (L(t_n) - L(t_{n-1}))(omega)`.
    pub fn coupled_sum(&self) -> HVector {
        let mut acc = HVector::zeros(self.theta.dims().0);
        for i in 1..=self.theta.grid.num_cells() {
            acc = acc.add(&self.coefficient(i).apply(self.base.increment(i)));
        }
        acc
    }

    /// `sum_n Theta_n(omega) (L~(t_n) - L~(t_{n-1}))(omega, omega')`: base
    /// coefficients, ghost increments.
    pub fn decoupled_sum(&self) -> HVector {
        let mut acc = HVector::zeros(self.theta.dims().0);
        for i in 1..=self.theta.grid.num_cells() {
            acc = acc.add(&self.coefficient(i).apply(self.ghost.increment(i)));
        }
        acc
    }

    /// Single decoupled term `Theta_n(omega) dZ~_n`.
    pub fn decoupled_term(&self, i: usize) -> HVector {
        self.coefficient(i).apply(self.ghost.increment(i))
    }

    /// The pair with the roles of base and ghost exchanged.
    pub fn swapped(&self) -> TangentPair {
        TangentPair {
            theta: self.theta.clone(),
            base: self.ghost.clone(),
            ghost: self.base.clone(),
        }
    }
}

/// Simulate a tangent pair for `theta` on its own grid. The two streams
/// must differ; identical streams would couple the "independent" copy.
pub fn build_tangent_pair(
    theta: &AdaptedStepProcess,
    alpha: StabilityIndex,
    rng_base: RngStream,
    rng_ghost: RngStream,
) -> Result<TangentPair> {
    if rng_base == rng_ghost {
        return Err(CylError::config(
            "base and ghost streams must differ for a decoupled tangent pair",
        ));
    }
    let (d_h, d_g) = theta.dims();
    let config = TruncationConfig::new(d_g, d_h)?;
    let base = sample_driving_path(alpha, config, &theta.grid, &mut rng_base.rng());
    let ghost = sample_driving_path(alpha, config, &theta.grid, &mut rng_ghost.rng());
    Ok(TangentPair {
        theta: theta.clone(),
        base,
        ghost,
    })
}

/// Worst conditional characteristic-function deviation over sampled
/// prefixes: for each of `n_outer` base scenarios one cell is conditioned
/// on (cells cycle round-robin), its increment is resampled `n_inner`
/// times, and the inner average of `exp(i <Y_n, h>)` is compared with
/// `exp(-dt ||Theta_n(prefix)^* h||^alpha)` in the complex modulus.
pub fn conditional_charfn_check(
    theta: &AdaptedStepProcess,
    alpha: StabilityIndex,
    h: &HVector,
    n_inner: usize,
    n_outer: usize,
    stream: RngStream,
) -> Result<f64> {
    assert!(n_inner >= 1 && n_outer >= 1);
    let (d_h, d_g) = theta.dims();
    if h.dim() != d_h {
        return Err(CylError::config("test vector dimension must match d_H"));
    }
    let config = TruncationConfig::new(d_g, d_h)?;
    let cells = theta.grid.num_cells();
    let mut worst: f64 = 0.0;
    for outer in 0..n_outer {
        let mut rng = stream.substream(outer as u64).rng();
        let base = sample_driving_path(alpha, config, &theta.grid, &mut rng);
        let cell = (outer % cells) + 1;
        let start = theta.grid.times()[cell - 1];
        let dt = theta.grid.cell_length(cell);
        let coeff = theta.coefficient(cell, &prefix_at(&base, start));
        let scale: f64 = coeff
            .apply_adjoint(&h.coords)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let target = (-dt * scale.powf(alpha.value())).exp();
        let mut re = 0.0;
        let mut im = 0.0;
        for _ in 0..n_inner {
            let dz = sample_increment(alpha, d_g, dt, &mut rng);
            let phase = coeff.apply(&dz).inner(h);
            re += phase.cos();
            im += phase.sin();
        }
        re /= n_inner as f64;
        im /= n_inner as f64;
        let deviation = ((re - target).powi(2) + im.powi(2)).sqrt();
        worst = worst.max(deviation);
    }
    Ok(worst)
}

/// Directional decoupling ratios for `Gamma Theta`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DecouplingRatios {
    /// `E[||coupled|| ^ 1] / E[||decoupled|| ^ 1]`.
    pub forward: MCEstimate,
    /// The reciprocal direction.
    pub reverse: MCEstimate,
    pub coupled_metric: MCEstimate,
    pub decoupled_metric: MCEstimate,
}

/// Estimate both directional ratios of the decoupling inequalities applied
/// to `Gamma Theta`, over independent (base, ghost) scenario pairs. When
/// both clipped metrics vanish the ratio is 1 by convention (degenerate but
/// distribution-equal).
pub fn decoupling_ratio(
    theta: &AdaptedStepProcess,
    gamma: &ContractionStepProcess,
    alpha: StabilityIndex,
    n_scenarios: usize,
    stream: RngStream,
) -> Result<DecouplingRatios> {
    assert!(n_scenarios >= 1);
    let composed = gamma.compose_with(theta)?;
    let mut coupled = Vec::with_capacity(n_scenarios);
    let mut decoupled = Vec::with_capacity(n_scenarios);
    for s in 0..n_scenarios {
        let pair = build_tangent_pair(
            &composed,
            alpha,
            stream.substream(2 * s as u64),
            stream.substream(2 * s as u64 + 1),
        )?;
        coupled.push(pair.coupled_sum().norm().min(1.0));
        decoupled.push(pair.decoupled_sum().norm().min(1.0));
    }
    let coupled_metric = MCEstimate::from_samples(&coupled);
    let decoupled_metric = MCEstimate::from_samples(&decoupled);
    let degenerate = coupled_metric.value < 1e-12 && decoupled_metric.value < 1e-12;
    let unit = MCEstimate {
        n: n_scenarios,
        value: 1.0,
        std_error: 0.0,
    };
    Ok(DecouplingRatios {
        forward: if degenerate {
            unit
        } else {
            coupled_metric.ratio(&decoupled_metric)
        },
        reverse: if degenerate {
            unit
        } else {
            decoupled_metric.ratio(&coupled_metric)
        },
        coupled_metric,
        decoupled_metric,
    })
}

/// Empirical pairwise-independence witness for Condition (1) of the tangent
/// definition: for a fixed base path, correlations of a bounded test
/// function across decoupled cell terms, maximised over cell pairs.
pub fn decoupled_terms_max_correlation(
    theta: &AdaptedStepProcess,
    alpha: StabilityIndex,
    h: &HVector,
    n_ghost: usize,
    stream: RngStream,
) -> Result<(f64, f64)> {
    let (d_h, d_g) = theta.dims();
    if h.dim() != d_h {
        return Err(CylError::config("test vector dimension must match d_H"));
    }
    let config = TruncationConfig::new(d_g, d_h)?;
    let base = sample_driving_path(alpha, config, &theta.grid, &mut stream.substream(0).rng());
    let cells = theta.grid.num_cells();
    let mut rng = stream.substream(1).rng();
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(n_ghost); cells];
    for _ in 0..n_ghost {
        let ghost =
            sample_driving_path(alpha, config, &theta.grid, &mut rng);
        let pair = TangentPair {
            theta: theta.clone(),
            base: base.clone(),
            ghost,
        };
        for (i, bucket) in samples.iter_mut().enumerate() {
            bucket.push(pair.decoupled_term(i + 1).inner(h).cos());
        }
    }
    let mut max_corr: f64 = 0.0;
    for i in 0..cells {
        for j in (i + 1)..cells {
            max_corr = max_corr.max(correlation(&samples[i], &samples[j]).abs());
        }
    }
    // null standard error of a sample correlation
    Ok((max_corr, 1.0 / (n_ghost as f64).sqrt()))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// An adapted two-valued test process whose later coefficients genuinely
/// depend on the path: cell 1 uses `low`, every later cell uses `high` or
/// `low` according to the sign of the first coordinate of the last visible
/// increment.
pub fn sign_switching_process(
    grid: crate::grid::TimeGrid,
    low: crate::hilbert::HSOperator,
    high: crate::hilbert::HSOperator,
) -> AdaptedStepProcess {
    assert_eq!(low.dims(), high.dims());
    let dims = low.dims();
    AdaptedStepProcess::from_fn(
        grid,
        dims,
        std::sync::Arc::new(move |_i, prefix| {
            let k = prefix.num_visible_cells();
            if k == 0 || prefix.increment(k)[0] <= 0.0 {
                low.clone()
            } else {
                high.clone()
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::hilbert::{random_hs_operator, HSOperator};
    use crate::processes::DetStepFunction;
    use crate::stats::decile_gap;

    fn alpha(a: f64) -> StabilityIndex {
        StabilityIndex::new(a).unwrap()
    }

    fn unit_hs(seed: u64, d_h: usize, d_g: usize) -> HSOperator {
        let mut rng = RngStream::new(500, seed).rng();
        let phi = random_hs_operator(d_h, d_g, 1.0, &mut rng);
        let n = phi.hs_norm();
        phi.scale(1.0 / n)
    }

    #[test]
    fn identical_streams_are_rejected() {
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        let theta = AdaptedStepProcess::constant(grid, unit_hs(0, 2, 2));
        let s = RngStream::new(501, 0);
        assert!(build_tangent_pair(&theta, alpha(1.0), s, s).is_err());
        assert!(build_tangent_pair(&theta, alpha(1.0), s, s.substream(1)).is_ok());
    }

    #[test]
    fn deterministic_theta_gives_equally_distributed_sums() {
        // coefficients carry no omega-dependence, so coupled and decoupled
        // sums are identically distributed; deciles must agree.
        let idx = alpha(1.4);
        let grid = TimeGrid::uniform(3, 1.0).unwrap();
        let step = DetStepFunction::new(grid, vec![
            unit_hs(1, 2, 2),
            unit_hs(2, 2, 2).scale(0.5),
            unit_hs(3, 2, 2).scale(1.5),
        ])
        .unwrap();
        let theta = AdaptedStepProcess::deterministic(step);
        let n = 100_000;
        let mut coupled = Vec::with_capacity(n);
        let mut decoupled = Vec::with_capacity(n);
        for s in 0..n {
            let pair = build_tangent_pair(
                &theta,
                idx,
                RngStream::new(502, 2 * s as u64),
                RngStream::new(502, 2 * s as u64 + 1),
            )
            .unwrap();
            coupled.push(pair.coupled_sum().coords[0]);
            decoupled.push(pair.decoupled_sum().coords[0]);
        }
        let gap = decile_gap(&coupled, &decoupled);
        assert!(gap < 0.05, "decile gap {gap}");
    }

    #[test]
    fn adapted_theta_sums_differ_pathwise_but_terms_agree_marginally() {
        let idx = alpha(1.0);
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        let theta = sign_switching_process(
            grid.clone(),
            unit_hs(4, 2, 2).scale(0.5),
            unit_hs(5, 2, 2).scale(1.5),
        );
        let h = HVector::new(vec![0.8, -0.5]);
        let n = 200_000;
        let mut diff_seen = false;
        let (mut c_re, mut d_re) = (0.0, 0.0);
        for s in 0..n {
            let pair = build_tangent_pair(
                &theta,
                idx,
                RngStream::new(503, 2 * s as u64),
                RngStream::new(503, 2 * s as u64 + 1),
            )
            .unwrap();
            let x2 = pair.coefficient(2).apply(pair.base.increment(2));
            let y2 = pair.decoupled_term(2);
            if x2.sub(&y2).norm() > 1e-9 {
                diff_seen = true;
            }
            c_re += x2.inner(&h).cos();
            d_re += y2.inner(&h).cos();
        }
        assert!(diff_seen, "coupled and decoupled terms never differed pathwise");
        let gap = (c_re / n as f64 - d_re / n as f64).abs();
        assert!(gap < 0.01, "marginal characteristic functions differ: {gap}");
    }

    #[test]
    fn conditional_charfn_zero_vector_is_exact() {
        let idx = alpha(1.2);
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        let theta = AdaptedStepProcess::constant(grid, unit_hs(6, 2, 2));
        let dev = conditional_charfn_check(
            &theta,
            idx,
            &HVector::zeros(2),
            100,
            4,
            RngStream::new(504, 0),
        )
        .unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn conditional_charfn_deterministic_within_band() {
        let idx = alpha(0.7);
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        let theta = AdaptedStepProcess::constant(grid, unit_hs(7, 2, 2));
        let n_inner = 40_000;
        let dev = conditional_charfn_check(
            &theta,
            idx,
            &HVector::new(vec![0.6, 0.9]),
            n_inner,
            6,
            RngStream::new(505, 0),
        )
        .unwrap();
        assert!(dev < 4.0 / (n_inner as f64).sqrt(), "deviation {dev}");
    }

    #[test]
    fn conditional_charfn_adapted_small_deviation() {
        let idx = alpha(1.5);
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let theta = sign_switching_process(
            grid,
            unit_hs(8, 2, 2).scale(0.6),
            unit_hs(9, 2, 2).scale(1.4),
        );
        let dev = conditional_charfn_check(
            &theta,
            idx,
            &HVector::new(vec![1.0, 0.3]),
            20_000,
            12,
            RngStream::new(506, 0),
        )
        .unwrap();
        assert!(dev < 0.025, "deviation {dev}");
    }

    #[test]
    fn conditional_charfn_deviation_shrinks_with_inner_size() {
        let idx = alpha(1.0);
        let grid = TimeGrid::uniform(3, 1.0).unwrap();
        let theta = sign_switching_process(
            grid,
            unit_hs(10, 2, 2).scale(0.5),
            unit_hs(11, 2, 2),
        );
        let h = HVector::new(vec![0.7, 0.7]);
        let d_small =
            conditional_charfn_check(&theta, idx, &h, 2_000, 10, RngStream::new(507, 0)).unwrap();
        let d_large =
            conditional_charfn_check(&theta, idx, &h, 32_000, 10, RngStream::new(507, 0)).unwrap();
        // inner averages shrink like n^{-1/2}; a factor-16 sample increase
        // should show clearly even through max-statistics noise
        assert!(
            d_large < 0.6 * d_small,
            "no shrinkage: {d_small} -> {d_large}"
        );
    }

    #[test]
    fn decoupled_terms_are_pairwise_uncorrelated() {
        let idx = alpha(1.3);
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let theta = sign_switching_process(
            grid,
            unit_hs(12, 2, 2).scale(0.8),
            unit_hs(13, 2, 2).scale(1.2),
        );
        let (max_corr, se) = decoupled_terms_max_correlation(
            &theta,
            idx,
            &HVector::new(vec![0.5, -1.0]),
            20_000,
            RngStream::new(508, 0),
        )
        .unwrap();
        // 6 pairs examined; allow a max-statistics margin over 3 se
        assert!(max_corr < 3.5 * se, "max corr {max_corr}, se {se}");
    }

    #[test]
    fn exchange_symmetry_of_the_decoupled_sum() {
        let idx = alpha(1.1);
        let grid = TimeGrid::uniform(3, 1.0).unwrap();
        let theta = sign_switching_process(
            grid,
            unit_hs(14, 2, 2).scale(0.7),
            unit_hs(15, 2, 2).scale(1.3),
        );
        let n = 100_000;
        let mut direct = Vec::with_capacity(n);
        let mut swapped = Vec::with_capacity(n);
        for s in 0..n {
            let pair = build_tangent_pair(
                &theta,
                idx,
                RngStream::new(509, 2 * s as u64),
                RngStream::new(509, 2 * s as u64 + 1),
            )
            .unwrap();
            direct.push(pair.decoupled_sum().coords[1]);
            swapped.push(pair.swapped().decoupled_sum().coords[1]);
        }
        let gap = decile_gap(&direct, &swapped);
        assert!(gap < 0.05, "decile gap {gap}");
    }

    #[test]
    fn deterministic_ratio_is_one_within_three_se() {
        let idx = alpha(1.5);
        let grid = TimeGrid::uniform(3, 1.0).unwrap();
        let step = DetStepFunction::new(
            grid.clone(),
            vec![unit_hs(16, 2, 2), unit_hs(17, 2, 2), unit_hs(18, 2, 2)],
        )
        .unwrap();
        let theta = AdaptedStepProcess::deterministic(step);
        let gamma = ContractionStepProcess::identity(grid, 2);
        let ratios =
            decoupling_ratio(&theta, &gamma, idx, 60_000, RngStream::new(510, 0)).unwrap();
        assert!(
            (ratios.forward.value - 1.0).abs() <= 3.0 * ratios.forward.std_error,
            "forward {} +- {}",
            ratios.forward.value,
            ratios.forward.std_error
        );
        assert!(
            (ratios.reverse.value - 1.0).abs() <= 3.0 * ratios.reverse.std_error,
            "reverse {} +- {}",
            ratios.reverse.value,
            ratios.reverse.std_error
        );
    }

    #[test]
    fn zero_theta_ratio_is_one_by_convention() {
        let idx = alpha(0.9);
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        let theta = AdaptedStepProcess::constant(grid.clone(), HSOperator::zeros(2, 2));
        let gamma = ContractionStepProcess::identity(grid, 2);
        let ratios = decoupling_ratio(&theta, &gamma, idx, 100, RngStream::new(511, 0)).unwrap();
        assert_eq!(ratios.forward.value, 1.0);
        assert_eq!(ratios.reverse.value, 1.0);
        assert_eq!(ratios.forward.std_error, 0.0);
    }
}
