//! Natural measures on critical self-similar Markov trees: gamma-length
//! measures, the additive/derivative/truncated-derivative martingales,
//! truncated harmonic spreading masses, the expected-length closed form
//! R_gamma(c), and the length -> harmonic convergence experiment.

use std::collections::BTreeMap;

use crate::error::{Result, SsmtError};
use crate::fluctuation::RenewalTable;
use crate::genealogy::{
    grow_family, truncate_at_barrier, GenealogySample, GrowthConfig, StopRule, Ulam,
};
use crate::levy_sim::{DecorationPath, SimCaps};
use crate::quadruplet::CharQuadruplet;
use crate::rng::stream;
use crate::stats::Running;

// ---------------------------------------------------------------------------
// Weighted atoms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    LengthGamma { gamma: f64, barrier: Option<f64> },
    HarmonicTruncated { barrier: f64 },
    Harmonic,
}

/// A finite measure carried by tree nodes (branch labels), with one weight
/// per atom and the total mass.
#[derive(Debug, Clone)]
pub struct WeightedAtoms {
    pub atoms: Vec<(Ulam, f64)>,
    pub total: f64,
    pub kind: MeasureKind,
}

// ---------------------------------------------------------------------------
// gamma-length measure
// ---------------------------------------------------------------------------

/// gamma-length of one branch: the integral of f(t)^(gamma - alpha) against
/// tree length over the retained portion. Computed in simulation time, where
/// the same integral reads as the integral of X(s)^gamma (the time change is
/// d(length) = X^alpha ds): this avoids the integrable endpoint singularity
/// of f^(gamma - alpha) at branch death when gamma < alpha. Zero-width cells
/// at jump times make the trapezoid rule jump-aware.
pub fn branch_gamma_length(branch: &DecorationPath, gamma: f64) -> f64 {
    let tc = &branch.time_change;
    let mut acc = 0.0;
    for i in 1..tc.len() {
        let h = tc[i].0 - tc[i - 1].0;
        if h > 0.0 {
            acc += 0.5 * h * (branch.values[i - 1].powf(gamma) + branch.values[i].powf(gamma));
        }
    }
    acc
}

/// The gamma-length measure of the sample, one atom per branch. With a
/// finite barrier the sample is truncated first (idempotent when it already
/// was); gamma <= omega_minus is permitted — the measure of the truncated
/// tree is still finite sample-by-sample, only its expectation diverges.
pub fn length_measure(
    sample: &GenealogySample,
    gamma: f64,
    barrier: Option<f64>,
) -> Result<WeightedAtoms> {
    let owned;
    let s = match barrier {
        Some(c) => {
            owned = truncate_at_barrier(sample, c)?;
            &owned
        }
        None => sample,
    };
    let mut atoms = Vec::with_capacity(s.individuals.len());
    let mut total = 0.0;
    for (u, ind) in &s.individuals {
        let w = branch_gamma_length(&ind.branch, gamma);
        total += w;
        atoms.push((u.clone(), w));
    }
    Ok(WeightedAtoms {
        atoms,
        total,
        kind: MeasureKind::LengthGamma { gamma, barrier },
    })
}

// ---------------------------------------------------------------------------
// Expected length below a barrier: R_gamma(c)
// ---------------------------------------------------------------------------

/// Stieltjes integral of f against the tabulated non-decreasing function
/// (values on grid, linear slope beyond it) over [0, upper], by midpoint
/// rule on the grid cells; the atom at the origin (value at grid 0) counts
/// with f(0).
fn stieltjes_midpoint<F: Fn(f64) -> f64>(
    grid: &[f64],
    values: &[f64],
    slope: f64,
    upper: f64,
    f: F,
) -> f64 {
    let mut acc = values[0] * f(0.0);
    let mut prev_x = grid[0];
    let mut prev_v = values[0];
    for i in 1..grid.len() {
        if grid[i] <= upper {
            acc += (values[i] - prev_v) * f(0.5 * (prev_x + grid[i]));
            prev_x = grid[i];
            prev_v = values[i];
        } else {
            // Partial last cell up to upper.
            let frac = (upper - prev_x) / (grid[i] - prev_x);
            let v_up = prev_v + frac * (values[i] - prev_v);
            acc += (v_up - prev_v) * f(0.5 * (prev_x + upper));
            return acc;
        }
    }
    // Beyond the grid the measure has constant density `slope`.
    if upper > prev_x {
        acc += numeric_exp_cell(slope, prev_x, upper, f);
    }
    acc
}

/// Exact continuation integral of f against slope * dx on (lo, hi] for the
/// f's used here (evaluated by fine midpoint subdivision; the extension
/// region is smooth so 64 cells are ample).
fn numeric_exp_cell<F: Fn(f64) -> f64>(slope: f64, lo: f64, hi: f64, f: F) -> f64 {
    let n = 64;
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| slope * h * f(lo + (i as f64 + 0.5) * h)).sum()
}

/// Closed-form expected gamma-length of the tree truncated at barrier c,
/// for root type 1:
/// R_gamma(c) = K (int_[0, log c] e^((gamma-omega)x) R(dx))
///               (int_[0, inf) e^(-(gamma-omega)x) R-(dx)),
/// evaluated against the tabulated R, R- by midpoint rule; the R- tail
/// beyond the grid uses the fitted linear growth c0-, summed until the
/// analytic remainder is below 1e-6 of the partial sum.
pub fn expected_length_rgamma(
    quad: &CharQuadruplet,
    gamma: f64,
    c: f64,
    table: &RenewalTable,
) -> Result<f64> {
    let omega = table.omega;
    // Guard against a table built for a different quadruplet: omega must be
    // a root of this kappa.
    let kap = quad.kappa(omega);
    if kap.abs() > 1e-6 {
        return Err(SsmtError::InvalidRegime(format!(
            "renewal table tilt omega = {omega} is not critical for this quadruplet \
             (kappa(omega) = {kap})"
        )));
    }
    let delta = gamma - omega;
    if delta <= 0.0 {
        return Err(SsmtError::InvalidRegime(format!(
            "expected length requires gamma > omega_minus, got gamma - omega = {delta}"
        )));
    }
    if !(c >= 1.0) {
        return Err(SsmtError::InvalidCutoff(format!(
            "barrier must be >= the unit root type, got {c}"
        )));
    }
    let step = table.grid[1] - table.grid[0];
    let limit = 1.0 / (delta * 20.0);
    if step > limit {
        return Err(SsmtError::TableTooCoarse { step, limit, delta });
    }
    let big_l = c.ln();
    let i1 = stieltjes_midpoint(&table.grid, &table.r_values, table.c0, big_l, |x| {
        (delta * x).exp()
    });
    // R- integral over [0, inf): tabulated part, then the linear tail in
    // geometric blocks until the remainder (c0-/delta e^(-delta x)) is
    // negligible against the partial sum.
    let bmax = *table.grid.last().unwrap();
    let mut i2 = stieltjes_midpoint(&table.grid, &table.rminus_values, table.c0_minus, bmax, |x| {
        (-delta * x).exp()
    });
    let mut lo = bmax;
    loop {
        let remainder = table.c0_minus / delta * (-delta * lo).exp();
        if remainder < 1e-6 * i2 {
            break;
        }
        let hi = lo + 1.0 / delta;
        i2 += numeric_exp_cell(table.c0_minus, lo, hi, |x| (-delta * x).exp());
        lo = hi;
    }
    Ok(table.k * i1 * i2)
}

// ---------------------------------------------------------------------------
// Martingale traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MartingaleRow {
    pub n: usize,
    /// Additive martingale W_n = sum of chi^omega over generation n.
    pub w: f64,
    /// Derivative martingale D_n = -sum of chi^omega log chi.
    pub d: f64,
    /// Truncated derivative martingale D_n^c, with the barrier indicator
    /// and the renewal factor R(log c - log chi).
    pub d_trunc: f64,
}

#[derive(Debug, Clone)]
pub struct MartingaleTrace {
    pub rows: Vec<MartingaleRow>,
    pub barrier: f64,
}

/// Per-generation W_n, D_n, D_n^c of one sample. W_n and D_n are read off
/// the sample as given (grow it without a barrier for them to be the
/// untruncated martingales); D_n^c is computed on the c-truncation, so an
/// individual contributes iff its ancestors' decorations never exceeded c
/// before its birth — the optional-stopping form under which the tabulated
/// R is (skeleton-)harmonic.
pub fn martingale_trace(
    sample: &GenealogySample,
    c: f64,
    table: &RenewalTable,
) -> Result<MartingaleTrace> {
    let omega = table.omega;
    let truncated = truncate_at_barrier(sample, c)?;
    let big_l = c.ln();
    let n_max = sample.stop.n_max;
    let mut rows: Vec<MartingaleRow> = (0..=n_max)
        .map(|n| MartingaleRow {
            n,
            w: 0.0,
            d: 0.0,
            d_trunc: 0.0,
        })
        .collect();
    for (u, ind) in &sample.individuals {
        let n = u.generation();
        if n > n_max {
            continue;
        }
        let cw = ind.chi.powf(omega);
        rows[n].w += cw;
        rows[n].d -= cw * ind.chi.ln();
    }
    for (u, ind) in &truncated.individuals {
        let n = u.generation();
        if n > n_max {
            continue;
        }
        rows[n].d_trunc += ind.chi.powf(omega) * table.r(big_l - ind.chi.ln());
    }
    Ok(MartingaleTrace { rows, barrier: c })
}

// ---------------------------------------------------------------------------
// Truncated harmonic measure (spreading masses)
// ---------------------------------------------------------------------------

/// Spreading masses m_u^(c) approximated at a finite generation horizon:
/// the mass at u is the truncated-derivative sum over u's generation-
/// n_limit descendants, so additivity over children is exact by
/// construction. Atoms cover every individual of the truncated sample with
/// generation <= n_limit; the total is the root mass D_{n_limit}^c.
pub fn harmonic_measure_truncated(
    sample: &GenealogySample,
    c: f64,
    n_limit: usize,
    table: &RenewalTable,
) -> Result<WeightedAtoms> {
    if n_limit > sample.stop.n_max {
        return Err(SsmtError::ShallowSample {
            depth: sample.stop.n_max,
            requested: n_limit,
        });
    }
    let truncated = truncate_at_barrier(sample, c)?;
    let big_l = c.ln();
    let mut masses: BTreeMap<Ulam, f64> = BTreeMap::new();
    for (u, ind) in &truncated.individuals {
        let g = u.generation();
        if g > n_limit {
            continue;
        }
        let leaf_mass = if g == n_limit {
            ind.chi.powf(table.omega) * table.r(big_l - ind.chi.ln())
        } else {
            0.0
        };
        masses.insert(u.clone(), leaf_mass);
    }
    // Children sort after their parent in Ulam order; accumulate upward by
    // visiting deepest labels first.
    let labels: Vec<Ulam> = masses.keys().cloned().collect();
    for u in labels.iter().rev() {
        if let Some(p) = u.parent() {
            let m = masses[u];
            *masses.get_mut(&p).expect("parent present") += m;
        }
    }
    let total = masses.get(&Ulam::root()).copied().unwrap_or(0.0);
    Ok(WeightedAtoms {
        atoms: masses.into_iter().collect(),
        total,
        kind: MeasureKind::HarmonicTruncated { barrier: c },
    })
}

// ---------------------------------------------------------------------------
// Length -> harmonic convergence experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub gamma: f64,
    pub mean_scaled_length_mass: f64,
    pub mean_harmonic_mass: f64,
    pub mean_abs_gap: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub non_increasing: bool,
    pub halved: bool,
    pub pass: bool,
    pub ensemble: usize,
    pub barrier: f64,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("gamma,mean_scaled_length_mass,mean_harmonic_mass,mean_abs_gap,stderr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.gamma,
                r.mean_scaled_length_mass,
                r.mean_harmonic_mass,
                r.mean_abs_gap,
                r.stderr
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "ensemble": self.ensemble,
            "barrier": self.barrier,
            "gammas": self.rows.iter().map(|r| r.gamma).collect::<Vec<_>>(),
            "mean_abs_gap": self.rows.iter().map(|r| r.mean_abs_gap).collect::<Vec<_>>(),
            "non_increasing": self.non_increasing,
            "halved": self.halved,
            "pass": self.pass,
        })
        .to_string()
    }
}

/// Growth depth and type floor for the convergence experiment. Both the
/// rescaled length mass and the harmonic mass are computed on the *same*
/// floor-and-depth-truncated ensemble, so the truncation (which is large in
/// absolute terms: the critical spine is null-recurrent, and a floor at
/// depth F = |ln floor| removes a ~1/F fraction of every occupation-type
/// expectation) cancels to first order in their comparison; what the floor
/// buys is keeping the near-floor population — which grows like
/// e^(omega F) and dominates simulation cost — affordable.
const CONVERGENCE_DEPTH: usize = 64;
const CONVERGENCE_FLOOR: f64 = 3e-4;

/// For each replica and each gamma (decreasing toward omega), the paired
/// gap e_gamma = (kappa''/2)(gamma - omega) lambda^gamma(T^c) -
/// mu^c(T^c)/c0; reports ensemble mean |e_gamma| per gamma. PASS when the
/// means are non-increasing along the sequence and the final is below half
/// the initial. Trees are grown with the table's own time step so that
/// barrier monitoring matches the skeleton the renewal functions were
/// estimated on.
pub fn convergence_experiment(
    quad: &CharQuadruplet,
    c: f64,
    gammas: &[f64],
    ensemble: usize,
    table: &RenewalTable,
    seed: u64,
) -> Result<ConvergenceReport> {
    let omega = table.omega;
    for pair in gammas.windows(2) {
        if pair[1] >= pair[0] {
            return Err(SsmtError::Config(
                "gammas must decrease toward omega_minus".into(),
            ));
        }
    }
    if let Some(&last) = gammas.last() {
        if last <= omega {
            return Err(SsmtError::Config(format!(
                "gammas must stay above omega_minus = {omega}"
            )));
        }
    }
    let cfg = GrowthConfig {
        stop: StopRule {
            n_max: CONVERGENCE_DEPTH,
            type_floor: CONVERGENCE_FLOOR,
            barrier: Some(c),
            pop_cap: 2_000_000,
            birth_horizon: None,
        },
        caps: SimCaps {
            horizon: 60.0,
            dt: table.dt,
            jump_cutoff: 1e-3,
            offspring_floor: 1e-9,
        },
        decimate: 2,
        keep_levy: false,
    };
    let big_l = c.ln();
    let half_kss = 0.5 * table.kappa_second;
    let mut gap_acc: Vec<Running> = vec![Running::default(); gammas.len()];
    let mut scaled_acc: Vec<Running> = vec![Running::default(); gammas.len()];
    let mut harm_acc = Running::default();
    for rep in 0..ensemble {
        let mut rng = stream(seed, rep as u64);
        let s = grow_family(quad, 1.0, cfg, &mut rng)?;
        // mu^c total at the growth horizon (root spreading mass).
        let mut mu = 0.0;
        for (u, ind) in &s.individuals {
            if u.generation() == CONVERGENCE_DEPTH {
                mu += ind.chi.powf(omega) * table.r(big_l - ind.chi.ln());
            }
        }
        let harm = mu / table.c0;
        harm_acc.push(harm);
        for (gi, &gamma) in gammas.iter().enumerate() {
            let lam = length_measure(&s, gamma, None)?.total;
            let scaled = half_kss * (gamma - omega) * lam;
            scaled_acc[gi].push(scaled);
            gap_acc[gi].push((scaled - harm).abs());
        }
    }
    let rows: Vec<ConvergenceRow> = gammas
        .iter()
        .enumerate()
        .map(|(gi, &gamma)| ConvergenceRow {
            gamma,
            mean_scaled_length_mass: scaled_acc[gi].mean(),
            mean_harmonic_mass: harm_acc.mean(),
            mean_abs_gap: gap_acc[gi].mean(),
            stderr: gap_acc[gi].stderr(),
        })
        .collect();
    let non_increasing = rows.windows(2).all(|w| {
        w[1].mean_abs_gap <= w[0].mean_abs_gap + 1e-12
    });
    let halved = rows.len() >= 2
        && rows.last().unwrap().mean_abs_gap <= 0.5 * rows[0].mean_abs_gap;
    Ok(ConvergenceReport {
        rows,
        non_increasing,
        halved,
        pass: non_increasing && halved,
        ensemble,
        barrier: c,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fluctuation::{estimate_renewal, RenewalParams};
    use crate::genealogy::Individual;
    use crate::levy_sim::{lamperti_forward, LevyPath, ReproductionAtoms};
    use crate::quadruplet::{builtin, Builtin};
    use approx::assert_relative_eq;
    use std::sync::OnceLock;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    /// Fine-step table: validates the Stieltjes numerics against closed
    /// forms (at small dt the renewal functions are linear from the first
    /// grid cell on, since the mean ladder height sqrt(dt/2) is far below
    /// the grid step).
    fn fine_table() -> &'static RenewalTable {
        static TABLE: OnceLock<RenewalTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let quad = builtin(Builtin::Bessel);
            let params = RenewalParams {
                paths: 250,
                horizon: 60.0,
                dt: 1e-3,
                jump_cutoff: 1e-2,
                bmax: 6.0,
                grid_step: 0.05,
                replay: 10_000,
                richardson: false,
            };
            estimate_renewal(&quad, SQRT2, params, 600).unwrap()
        })
    }

    /// Table at the tree-growth time step: comparisons between grown trees
    /// and renewal predictions need the barrier monitored on the same
    /// skeleton the table was estimated on, otherwise the under-detection
    /// of exceedances between grid points biases the tree side upward.
    pub(crate) fn tree_table() -> &'static RenewalTable {
        static TABLE: OnceLock<RenewalTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let quad = builtin(Builtin::Bessel);
            let params = RenewalParams {
                paths: 1200,
                horizon: 60.0,
                dt: 0.02,
                jump_cutoff: 1e-2,
                bmax: 6.0,
                grid_step: 0.05,
                replay: 20_000,
                richardson: false,
            };
            estimate_renewal(&quad, SQRT2, params, 640).unwrap()
        })
    }

    pub(crate) fn tree_caps() -> SimCaps {
        SimCaps {
            horizon: 60.0,
            dt: 0.02,
            jump_cutoff: 1e-3,
            offspring_floor: 1e-9,
        }
    }

    fn single_branch_sample(branch: DecorationPath) -> GenealogySample {
        let mut individuals = BTreeMap::new();
        individuals.insert(
            Ulam::root(),
            Individual {
                chi: 1.0,
                birth_time: 0.0,
                attach: 0.0,
                branch,
                atoms: ReproductionAtoms::default(),
                atom_sim_times: Vec::new(),
                exp_clock: 1.0,
                levy: None,
                cut: None,
            },
        );
        GenealogySample {
            individuals,
            root_type: 1.0,
            stop: StopRule::default(),
            truncation_marks: Vec::new(),
        }
    }

    #[test]
    fn constant_decoration_weight_is_branch_length() {
        let l = 2.75;
        let branch = DecorationPath {
            times: vec![0.0, l],
            values: vec![1.0, 1.0],
            z: l,
            time_change: vec![(0.0, 0.0), (l, l)],
            truncated: false,
        };
        let sample = single_branch_sample(branch);
        for gamma in [0.7, 1.0, 2.4] {
            let m = length_measure(&sample, gamma, None).unwrap();
            assert_relative_eq!(m.total, l, epsilon = 1e-12);
            assert_eq!(m.atoms.len(), 1);
        }
    }

    #[test]
    fn deterministic_decreasing_branch_integral() {
        // X(t) = 1 - t on [0, 1) in tree time, alpha = 1, gamma = 3:
        // integral of X^(gamma-alpha) = int_0^1 (1-t)^2 dt = 1/3. In
        // simulation time the same branch is xi(s) = -s.
        let n = 20_000;
        let ds = 1e-3;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * ds).collect();
        let values: Vec<f64> = times.iter().map(|&s| -s).collect();
        let path = LevyPath {
            times,
            values,
            jumps: Vec::new(),
            lifetime: f64::INFINITY,
            killed: false,
        };
        let branch = lamperti_forward(&path, 1.0, 1.0);
        let sample = single_branch_sample(branch);
        let m = length_measure(&sample, 3.0, None).unwrap();
        assert_relative_eq!(m.total, 1.0 / 3.0, epsilon = 1e-4);
    }

    #[test]
    fn length_measure_additive_over_atoms() {
        let quad = builtin(Builtin::Bessel);
        let cfg = GrowthConfig {
            stop: StopRule {
                n_max: 4,
                type_floor: 1e-4,
                barrier: None,
                pop_cap: 100_000,
                birth_horizon: None,
            },
            caps: SimCaps::default(),
            decimate: 1,
            keep_levy: false,
        };
        let mut rng = stream(601, 0);
        let s = grow_family(&quad, 1.0, cfg, &mut rng).unwrap();
        let m = length_measure(&s, 1.8, None).unwrap();
        let sum: f64 = m.atoms.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(m.total, sum, epsilon = 1e-12);
        assert!(m.total.is_finite() && m.total > 0.0);
        assert!(m.atoms.iter().all(|&(_, w)| w >= 0.0));
    }

    /// A table whose renewal functions are exactly linear with the unit
    /// atom at the origin — the regime the closed form below integrates
    /// analytically — for isolating quadrature error from estimation noise.
    fn synthetic_linear_table(dt: f64) -> RenewalTable {
        let c0 = (2.0 / dt).sqrt();
        let step = 0.05f64;
        let n = (6.0 / step).round() as usize;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        let r_values: Vec<f64> = grid.iter().map(|x| 1.0 + c0 * x).collect();
        RenewalTable {
            omega: SQRT2,
            grid,
            r_values: r_values.clone(),
            rminus_values: r_values,
            c0,
            c0_stderr: 0.0,
            c0_minus: c0,
            c0_minus_stderr: 0.0,
            k: dt,
            k_identity: dt,
            kappa_second: 1.0,
            dt,
            paths: 0,
            richardson_c0: None,
            richardson_c0_minus: None,
            normalization_note: String::new(),
        }
    }

    #[test]
    fn rgamma_matches_linear_renewal_closed_form() {
        let quad = builtin(Builtin::Bessel);
        let gamma = 1.8;
        let delta = gamma - SQRT2;
        let c = std::f64::consts::E;
        // With R = 1 + c0 x, R- = 1 + c0- x the two Stieltjes integrals
        // have closed forms (atom at 0 plus exponential-weighted density);
        // on the synthetic table only quadrature error remains.
        let table = synthetic_linear_table(1e-3);
        let got = expected_length_rgamma(&quad, gamma, c, &table).unwrap();
        let i1 = 1.0 + table.c0 * ((delta * 1.0).exp() - 1.0) / delta;
        let i2 = 1.0 + table.c0_minus / delta;
        let expect = table.k * i1 * i2;
        assert!(
            (got - expect).abs() / expect < 0.005,
            "midpoint {got} vs closed form {expect}"
        );
        assert_relative_eq!(got, 6.498, max_relative = 0.01);
        // The estimated table agrees up to its near-origin transient (the
        // renewal function sits below the fitted line for the first few
        // mean ladder heights) and constant-estimation noise.
        let emp = expected_length_rgamma(&quad, gamma, c, fine_table()).unwrap();
        assert!(
            (emp - got).abs() / got < 0.02,
            "empirical-table value {emp} vs linear-model value {got}"
        );
    }

    #[test]
    fn rgamma_monotone_decreasing_in_gamma() {
        let quad = builtin(Builtin::Bessel);
        let table = fine_table();
        let c = std::f64::consts::E;
        let vals: Vec<f64> = [1.6, 1.8, 2.0, 2.2]
            .iter()
            .map(|&g| expected_length_rgamma(&quad, g, c, table).unwrap())
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0], "R_gamma must decrease in gamma: {vals:?}");
        }
    }

    #[test]
    fn rgamma_small_delta_limit_trend() {
        // (gamma - omega) R_gamma(c) -> K c0- R(log c) as gamma -> omega.
        let quad = builtin(Builtin::Bessel);
        let table = fine_table();
        let c = std::f64::consts::E;
        let target = table.k * table.c0_minus * table.r(1.0);
        let gaps: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&d| {
                let v = expected_length_rgamma(&quad, SQRT2 + d, c, table).unwrap();
                (d * v - target).abs()
            })
            .collect();
        assert!(
            gaps[1] < gaps[0] && gaps[2] < gaps[1],
            "gap to the small-delta limit should shrink: {gaps:?}"
        );
    }

    #[test]
    fn rgamma_rejects_coarse_table() {
        let quad = builtin(Builtin::Bessel);
        let table = fine_table();
        // delta = 2 requires step <= 1/40 but the table has 0.05.
        let err = expected_length_rgamma(&quad, SQRT2 + 2.0, 10.0, table).unwrap_err();
        assert!(matches!(err, SsmtError::TableTooCoarse { .. }), "{err}");
        let err2 = expected_length_rgamma(&quad, 1.8, 0.5, table).unwrap_err();
        assert!(matches!(err2, SsmtError::InvalidCutoff(_)), "{err2}");
    }

    /// Mean gamma-length of barrier-grown trees against an independently
    /// computed reference for the *same truncated object*.
    ///
    /// The untruncated closed form R_gamma(c) is out of reach for a direct
    /// tree estimate: the critical spine is null-recurrent, so a type floor
    /// at e^(-F) loses a ~1/F fraction of the expected length (absorbed
    /// spines never contribute their re-ascending occupation) while the
    /// population grows like e^(omega F). Instead we match truncations: the
    /// reference below is the exact value of the grid-monitored occupation
    /// functional E int e^((gamma-omega) xi) dt for a driftless unit-variance
    /// spine killed strictly above log c and strictly below log(floor), with
    /// occupation counted while the number of rate-2 spine events is < n_max,
    /// computed by density evolution (transfer-operator iteration) at
    /// dt = 0.02 and Richardson-extrapolated in the space step. The tie back
    /// to R_gamma(c) itself is covered by `rgamma_matches_linear_renewal_
    /// closed_form` and `rgamma_discrete_premium_positive_and_scales`.
    #[test]
    fn bessel_mean_length_matches_spine_occupation() {
        let quad = builtin(Builtin::Bessel);
        let gamma = 1.8;
        let c = std::f64::consts::E;
        // Density-evolution value for dt = 0.02, barrier log c = 1, floor
        // log(1e-2), generation budget 24 (frozen; se in the last digit).
        let reference = 3.066;
        let cfg = GrowthConfig {
            stop: StopRule {
                n_max: 24,
                type_floor: 1e-2,
                barrier: Some(c),
                pop_cap: 200_000,
                birth_horizon: None,
            },
            caps: tree_caps(),
            decimate: 1,
            keep_levy: false,
        };
        let mut acc = Running::default();
        for rep in 0..1500 {
            let mut rng = stream(602, rep);
            let s = grow_family(&quad, 1.0, cfg, &mut rng).unwrap();
            acc.push(length_measure(&s, gamma, None).unwrap().total);
        }
        // 2.5% systematic allowance: the tree monitors the barrier at event
        // times as well as grid times, drops the final partial cell of a cut
        // branch, and integrates by trapezoid where the reference uses the
        // left rule; each effect is well under a percent.
        let tol = 3.0 * acc.stderr() + 0.025 * reference;
        assert!(
            (acc.mean() - reference).abs() < tol,
            "mean gamma-length {} (se {}) vs spine occupation reference {} (tol {})",
            acc.mean(),
            acc.stderr(),
            reference,
            tol
        );
    }

    /// The discrete-monitoring premium of the table closed form over the
    /// continuum limit 2 (e^(delta L) - 1) / delta^2 is positive and shrinks
    /// with dt (the effective barrier sits ~0.58 sigma sqrt(dt) beyond log c
    /// because exceedances between monitoring times go unseen).
    #[test]
    fn rgamma_discrete_premium_positive_and_scales() {
        let quad = builtin(Builtin::Bessel);
        let gamma = 1.8;
        let c = std::f64::consts::E;
        let premium = |table: &RenewalTable| {
            let delta = gamma - table.omega;
            let continuum = 2.0 * ((delta * 1.0f64).exp() - 1.0) / (delta * delta);
            expected_length_rgamma(&quad, gamma, c, table).unwrap() / continuum - 1.0
        };
        let coarse = premium(tree_table());
        let fine = premium(fine_table());
        assert!(
            (0.02..0.12).contains(&coarse),
            "dt=0.02 premium out of range: {coarse}"
        );
        assert!(
            (0.005..0.055).contains(&fine),
            "dt=1e-3 premium out of range: {fine}"
        );
        assert!(
            coarse > fine,
            "premium should grow with dt: coarse {coarse} fine {fine}"
        );
    }

    #[test]
    fn truncated_derivative_root_value() {
        let quad = builtin(Builtin::Bessel);
        let table = tree_table();
        let cfg = GrowthConfig {
            stop: StopRule {
                n_max: 0,
                type_floor: 1e-4,
                barrier: None,
                pop_cap: 1_000,
                birth_horizon: None,
            },
            caps: SimCaps::default(),
            decimate: 1,
            keep_levy: false,
        };
        let mut rng = stream(603, 0);
        let s = grow_family(&quad, 1.0, cfg, &mut rng).unwrap();
        let c = (2.0f64).exp();
        let trace = martingale_trace(&s, c, table).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_relative_eq!(trace.rows[0].d_trunc, table.r(2.0), epsilon = 1e-12);
        assert_relative_eq!(trace.rows[0].w, 1.0);
        assert_relative_eq!(trace.rows[0].d, 0.0);
    }

    #[test]
    fn bessel_truncated_derivative_means_stay_at_r2() {
        let quad = builtin(Builtin::Bessel);
        let table = tree_table();
        let c = (2.0f64).exp();
        let n_gen = 4;
        let cfg = GrowthConfig {
            stop: StopRule {
                n_max: n_gen,
                type_floor: 1e-4,
                barrier: Some(c),
                pop_cap: 100_000,
                birth_horizon: None,
            },
            caps: tree_caps(),
            decimate: 2,
            keep_levy: false,
        };
        let mut accs: Vec<Running> = vec![Running::default(); n_gen + 1];
        for rep in 0..600 {
            let mut rng = stream(604, rep);
            let s = grow_family(&quad, 1.0, cfg, &mut rng).unwrap();
            let trace = martingale_trace(&s, c, table).unwrap();
            for (g, row) in trace.rows.iter().enumerate() {
                accs[g].push(row.d_trunc);
            }
        }
        let r2 = table.r(2.0);
        for (g, acc) in accs.iter().enumerate().skip(1) {
            let z = acc.z_against(r2);
            assert!(
                z.abs() < 3.5,
                "generation {g}: mean D^c {} (se {}) vs R(2) {} (z = {z})",
                acc.mean(),
                acc.stderr(),
                r2
            );
        }
    }

    #[test]
    fn additive_martingale_mean_one_median_collapsing() {
        let quad = builtin(Builtin::Bessel);
        let table = tree_table();
        let n_gen = 6;
        let cfg = GrowthConfig {
            stop: StopRule {
                n_max: n_gen,
                type_floor: 1e-4,
                barrier: None,
                pop_cap: 100_000,
                birth_horizon: None,
            },
            caps: SimCaps {
                horizon: 50.0,
                dt: 0.05,
                jump_cutoff: 1e-3,
                offspring_floor: 1e-9,
            },
            decimate: 4,
            keep_levy: false,
        };
        let mut acc3 = Running::default();
        let mut acc6 = Running::default();
        let mut w1 = Vec::new();
        let mut w6 = Vec::new();
        for rep in 0..400 {
            let mut rng = stream(605, rep);
            let s = grow_family(&quad, 1.0, cfg, &mut rng).unwrap();
            let trace = martingale_trace(&s, 10.0, table).unwrap();
            acc3.push(trace.rows[3].w);
            acc6.push(trace.rows[n_gen].w);
            w1.push(trace.rows[1].w);
            w6.push(trace.rows[n_gen].w);
        }
        // Unit mean at every generation, while the bulk of the
        // distribution drifts to zero (the critical martingale limit is
        // degenerate): the median falls as the generations pass.
        for (n, acc) in [(3, &acc3), (6, &acc6)] {
            let z = acc.z_against(1.0);
            assert!(z.abs() < 3.0, "W_{n} mean {} z {}", acc.mean(), z);
        }
        let m1 = crate::stats::median(&w1);
        let m6 = crate::stats::median(&w6);
        assert!(
            m6 < m1 && m6 < 1.0,
            "additive-martingale median should collapse: median W_1 = {m1}, W_6 = {m6}"
        );
    }

    fn grown_truncated(depth: usize, seed: u64, c: f64) -> GenealogySample {
        let quad = builtin(Builtin::Bessel);
        let cfg = GrowthConfig {
            stop: StopRule {
                n_max: depth,
                type_floor: 1e-4,
                barrier: Some(c),
                pop_cap: 200_000,
                birth_horizon: None,
            },
            caps: tree_caps(),
            decimate: 4,
            keep_levy: false,
        };
        let mut rng = stream(seed, 0);
        grow_family(&quad, 1.0, cfg, &mut rng).unwrap()
    }

    #[test]
    fn harmonic_masses_are_additive_with_root_total() {
        let table = tree_table();
        let c = (2.0f64).exp();
        let s = grown_truncated(6, 606, c);
        let n_limit = 6;
        let m = harmonic_measure_truncated(&s, c, n_limit, table).unwrap();
        let by_label: BTreeMap<&Ulam, f64> = m.atoms.iter().map(|(u, w)| (u, *w)).collect();
        // Exact additivity at internal nodes.
        for (u, w) in &m.atoms {
            if u.generation() >= n_limit {
                continue;
            }
            let child_sum: f64 = m
                .atoms
                .iter()
                .filter(|(v, _)| v.parent().as_ref() == Some(u))
                .map(|(_, wv)| wv)
                .sum();
            assert!(
                (w - child_sum).abs() <= 1e-12 * w.max(1.0),
                "additivity at {u}: {w} vs children {child_sum}"
            );
        }
        // Root total equals the truncated derivative martingale at n_limit.
        let trace = martingale_trace(&s, c, table).unwrap();
        assert_relative_eq!(m.total, trace.rows[n_limit].d_trunc, epsilon = 1e-9);
        assert_relative_eq!(
            by_label[&Ulam::root()],
            m.total,
            epsilon = 1e-12
        );
        // Barrier-pruned leaves (cut, no retained children) carry zero mass.
        for (u, ind) in &truncate_at_barrier(&s, c).unwrap().individuals {
            if ind.cut.is_some() && u.generation() < n_limit && ind.atoms.atoms.is_empty() {
                assert_eq!(by_label.get(u).copied().unwrap_or(0.0), 0.0);
            }
        }
    }

    #[test]
    fn harmonic_measure_rejects_shallow_samples() {
        let table = tree_table();
        let c = (2.0f64).exp();
        let s = grown_truncated(3, 607, c);
        let err = harmonic_measure_truncated(&s, c, 5, table).unwrap_err();
        assert!(matches!(err, SsmtError::ShallowSample { .. }), "{err}");
    }

    #[test]
    fn spreading_masses_stable_in_the_horizon() {
        let table = tree_table();
        let c = (2.0f64).exp();
        let mut at10 = Vec::new();
        let mut at12 = Vec::new();
        for seed in 0..8 {
            let s = grown_truncated(12, 608 + seed, c);
            let m10 = harmonic_measure_truncated(&s, c, 10, table).unwrap();
            let m12 = harmonic_measure_truncated(&s, c, 12, table).unwrap();
            let by12: BTreeMap<&Ulam, f64> = m12.atoms.iter().map(|(u, w)| (u, *w)).collect();
            for (u, w10) in &m10.atoms {
                if u.generation() > 8 {
                    continue;
                }
                let w12 = by12.get(u).copied().unwrap_or(0.0);
                if *w10 > 0.0 || w12 > 0.0 {
                    at10.push(*w10);
                    at12.push(w12);
                }
            }
        }
        assert!(at10.len() > 40, "need atoms to correlate, got {}", at10.len());
        let rho = crate::stats::spearman(&at10, &at12);
        assert!(
            rho > 0.9,
            "spreading masses should be stable in the horizon: rho = {rho} over {} atoms",
            at10.len()
        );
    }

    #[test]
    fn constants_identity_within_five_percent() {
        // The product K c0 c0- = 2/kappa'' is time-step free; it must hold
        // at both table resolutions.
        for table in [fine_table(), tree_table()] {
            let lhs = table.k * table.c0 * table.c0_minus;
            let rhs = 2.0 / table.kappa_second;
            assert!(
                (lhs - rhs).abs() / rhs < 0.05,
                "K c0 c0- = {lhs} vs 2/kappa'' = {rhs} (dt = {})",
                table.dt
            );
        }
    }

    #[test]
    fn convergence_control_far_gamma_records_gap_without_pass() {
        let quad = builtin(Builtin::Bessel);
        let table = tree_table();
        let report = convergence_experiment(
            &quad,
            std::f64::consts::E,
            &[SQRT2 + 0.5],
            40,
            table,
            609,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(!report.pass);
        assert!(report.rows[0].mean_abs_gap > 0.0);
        let json: serde_json::Value = serde_json::from_str(&report.summary_json()).unwrap();
        assert_eq!(json["pass"], serde_json::Value::Bool(false));
        assert!(report.to_csv().lines().count() == 2);
    }

    #[test]
    fn convergence_gap_shrinks_toward_omega() {
        let quad = builtin(Builtin::Bessel);
        let table = tree_table();
        let report = convergence_experiment(
            &quad,
            std::f64::consts::E,
            &[SQRT2 + 0.6, SQRT2 + 0.42, SQRT2 + 0.3],
            250,
            table,
            610,
        )
        .unwrap();
        let gaps: Vec<f64> = report.rows.iter().map(|r| r.mean_abs_gap).collect();
        assert!(
            gaps.last().unwrap() < &gaps[0],
            "mean |e_gamma| should shrink toward omega: {gaps:?}"
        );
    }

    /// Localization probe for the mean gamma-length (not part of the
    /// suite): compares shallow no-barrier trees against exact geometric
    /// oracles to separate branch-level bias from genealogy bookkeeping.
    #[test]
    #[ignore]
    fn length_oracle_probe() {
        let quad = builtin(Builtin::Bessel);
        let gamma = 1.8f64;
        // psi0 = gamma^2/2 - sqrt(2) gamma (diffusion/drift part), branch
        // killed at unit rate: E[branch length] = 1/(1 - psi0); per
        // generation mass factor 2/(1 - psi0).
        let psi0 = gamma * gamma / 2.0 - SQRT2 * gamma;
        let branch = 1.0 / (1.0 - psi0);
        for depth in [1usize, 4, 8] {
            let factor = 2.0 / (1.0 - psi0);
            let mut expect = 0.0;
            let mut pow = 1.0;
            for _ in 0..depth {
                expect += branch * pow;
                pow *= factor;
            }
            let cfg = GrowthConfig {
                stop: StopRule {
                    n_max: depth,
                    type_floor: 1e-6,
                    barrier: None,
                    pop_cap: 1_000_000,
                    birth_horizon: None,
                },
                caps: tree_caps(),
                decimate: 1,
                keep_levy: false,
            };
            let mut acc = Running::default();
            for rep in 0..2000 {
                let mut rng = stream(777, rep);
                let s = grow_family(&quad, 1.0, cfg, &mut rng).unwrap();
                acc.push(length_measure(&s, gamma, None).unwrap().total);
            }
            println!(
                "depth {depth}: mean {:.4} se {:.4} expect {expect:.4} z {:+.2}",
                acc.mean(),
                acc.stderr(),
                acc.z_against(expect)
            );
        }
    }

    /// The tilted spine (here: driftless unit-variance Brownian motion with
    /// displacement-free rate-2 events) reproduces the grid-monitored
    /// occupation functional int_0^300 e^(delta xi_t) 1{no monitored point
    /// exceeded L} dt. The reference is the exact density-evolution value at
    /// dt = 0.02, L = 1, horizon 300, Richardson-extrapolated in the space
    /// step. This pins the tilted quadruplet's law and the path sampler's
    /// event handling against an independent numerical oracle. (The horizon
    /// matters: the critical spine is null-recurrent and the tail of the
    /// integrand decays like t^(-3/2), so about 14% of the infinite-horizon
    /// value sits beyond t = 300.)
    #[test]
    fn tilted_spine_occupation_matches_grid_reference() {
        let quad = builtin(Builtin::Bessel);
        let gamma = 1.8;
        let delta = gamma - SQRT2;
        let big_l = 1.0f64;
        let reference = 5.972;
        let tilted = quad.tilted_quadruplet(SQRT2).unwrap();
        let dt = 0.02;
        let mut acc = Running::default();
        for rep in 0..20_000u64 {
            let mut rng = stream(778, rep);
            let path =
                crate::levy_sim::sample_levy_path(&tilted, 300.0, dt, 1e-2, &mut rng).unwrap();
            let mut total = 0.0;
            for (i, &v) in path.values.iter().enumerate() {
                if !v.is_finite() || v > big_l {
                    break;
                }
                let h = if i + 1 < path.times.len() {
                    path.times[i + 1] - path.times[i]
                } else {
                    0.0
                };
                total += h * (delta * v).exp();
            }
            acc.push(total);
        }
        // 1.5% systematic allowance: the sampler also monitors at event
        // times (displacement zero, so only the between-grid value can newly
        // exceed there) while the reference monitors on the grid alone.
        let tol = 3.0 * acc.stderr() + 0.015 * reference;
        assert!(
            (acc.mean() - reference).abs() < tol,
            "spine occupation {} (se {}) vs reference {} (tol {})",
            acc.mean(),
            acc.stderr(),
            reference,
            tol
        );
    }

    /// Calibration probe for depth/floor budgets (not part of the suite):
    /// prints population statistics of barrier-truncated deep growth.
    #[test]
    #[ignore]
    fn population_probe() {
        let quad = builtin(Builtin::Bessel);
        for (depth, floor) in [(48usize, 1e-3), (64, 1e-3), (48, 3e-4), (64, 3e-4)] {
            let cfg = GrowthConfig {
                stop: StopRule {
                    n_max: depth,
                    type_floor: floor,
                    barrier: Some(std::f64::consts::E),
                    pop_cap: 5_000_000,
                    birth_horizon: None,
                },
                caps: tree_caps(),
                decimate: 2,
                keep_levy: false,
            };
            let t0 = std::time::Instant::now();
            let mut pops = Vec::new();
            for rep in 0..40 {
                let mut rng = stream(999, rep);
                let s = grow_family(&quad, 1.0, cfg, &mut rng).unwrap();
                pops.push(s.individuals.len() as f64);
            }
            let mean = pops.iter().sum::<f64>() / pops.len() as f64;
            let max = pops.iter().cloned().fold(0.0, f64::max);
            println!(
                "depth {depth} floor {floor:e}: pop mean {mean:.0} max {max:.0} elapsed {:?}",
                t0.elapsed()
            );
        }
    }
}
