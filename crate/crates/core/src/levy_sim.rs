//! Lévy path simulation and the Lamperti transform.
//!
//! Paths carry killing (-inf jumps), reproduction marks, and a uniform Euler
//! grid with jump times inserted exactly. The finite-activity part of the
//! measure (everything outside the jump cutoff) is sampled as a marked
//! Poisson process; the infinite-activity remainder is replaced by its
//! compensating drift plus a Gaussian of matching variance.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Result, SsmtError};
use crate::quadruplet::{CharQuadruplet, GeneralizedLevyMeasure};

/// One recorded atom of the reproduction point process along a path.
#[derive(Debug, Clone)]
pub struct Jump {
    pub time: f64,
    /// Displacement of the running particle (-inf kills it).
    pub y0: f64,
    /// Log-displacements of the children relative to the pre-jump position.
    pub offspring: Vec<f64>,
    /// Index into `times`/`values` of the pre-jump grid point.
    pub grid_index: usize,
}

/// A simulated Lévy path with killing.
#[derive(Debug, Clone)]
pub struct LevyPath {
    /// Non-decreasing grid; jump times appear twice (pre and post value).
    pub times: Vec<f64>,
    /// Position at each grid point; -inf terminal value when killed.
    pub values: Vec<f64>,
    pub jumps: Vec<Jump>,
    /// Death time; +inf when the path reached the horizon alive.
    pub lifetime: f64,
    pub killed: bool,
}

impl LevyPath {
    /// Debug CSV: t, value, is_jump, y0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value,is_jump,y0\n");
        let mut jump_at = std::collections::HashMap::new();
        for j in &self.jumps {
            jump_at.insert(j.grid_index, j.y0);
        }
        for (i, (&t, &v)) in self.times.iter().zip(&self.values).enumerate() {
            match jump_at.get(&i) {
                Some(y0) => out.push_str(&format!("{t},{v},1,{y0}\n")),
                None => out.push_str(&format!("{t},{v},0,\n")),
            }
        }
        out
    }
}

/// Decoration (positive self-similar) path on its intrinsic length interval.
#[derive(Debug, Clone)]
pub struct DecorationPath {
    /// Intrinsic coordinate grid on [0, z].
    pub times: Vec<f64>,
    /// Decoration values; 0 is recorded at z when the path dies.
    pub values: Vec<f64>,
    /// Branch length.
    pub z: f64,
    /// Monotone table (simulation time t, eps(t) = ∫_0^t e^{alpha xi}) in
    /// unscaled (x = 1) units.
    pub time_change: Vec<(f64, f64)>,
    /// True when the underlying path hit the horizon before dying; the
    /// branch continues beyond z and the caller must extend or accept.
    pub truncated: bool,
}

/// Reproduction atoms (position on [0, z], child type), sorted by position.
#[derive(Debug, Clone, Default)]
pub struct ReproductionAtoms {
    pub atoms: Vec<(f64, f64)>,
}

impl ReproductionAtoms {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,y\n");
        for &(t, y) in &self.atoms {
            out.push_str(&format!("{t},{y}\n"));
        }
        out
    }
}

/// Simulation caps for decoration-reproduction sampling.
#[derive(Debug, Clone, Copy)]
pub struct SimCaps {
    /// Simulation-time horizon for the underlying path.
    pub horizon: f64,
    pub dt: f64,
    pub jump_cutoff: f64,
    /// Children of type below floor * x are discarded, and the path itself
    /// stops once its decoration falls below floor * x.
    pub offspring_floor: f64,
}

impl Default for SimCaps {
    fn default() -> Self {
        SimCaps {
            horizon: 50.0,
            dt: 1e-3,
            jump_cutoff: 1e-3,
            offspring_floor: 1e-6,
        }
    }
}

/// Finite-activity view of a quadruplet at a given jump cutoff: the event
/// rate of the marked Poisson part, the Euler drift (original drift minus
/// the compensator of the simulated small jumps), and the per-unit-time
/// Gaussian variance (sigma2 plus the substituted small-jump variance).
pub(crate) struct SimLaw<'a> {
    pub event_rate: f64,
    pub drift_eff: f64,
    pub gauss_var: f64,
    sampler: Sampler<'a>,
}

enum Sampler<'a> {
    Atoms {
        atoms: &'a [crate::quadruplet::Atom],
        cum: Vec<f64>,
    },
    Density {
        spec: &'a dyn crate::quadruplet::DensitySpec,
        eps: f64,
    },
}

impl<'a> SimLaw<'a> {
    pub fn new(quad: &'a CharQuadruplet, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(SsmtError::InvalidCutoff(format!(
                "jump cutoff must lie in (0, 1], got {eps}"
            )));
        }
        match &quad.levy {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => {
                let mut cum = Vec::with_capacity(atoms.len());
                let mut total = 0.0;
                let mut comp = 0.0;
                for a in atoms {
                    total += a.rate;
                    cum.push(total);
                    if a.y0.is_finite() && a.y0.abs() <= 1.0 {
                        comp += a.rate * a.y0;
                    }
                }
                Ok(SimLaw {
                    event_rate: total,
                    drift_eff: quad.a - comp,
                    gauss_var: quad.sigma2,
                    sampler: Sampler::Atoms { atoms, cum },
                })
            }
            GeneralizedLevyMeasure::DensityForm(d) => {
                let mass = d.spec.restricted_mass(eps);
                if !mass.is_finite() || mass < 0.0 {
                    return Err(SsmtError::InvalidCutoff(format!(
                        "restricted mass at cutoff {eps} is {mass}"
                    )));
                }
                let comp = d.spec.compensator_restricted(eps);
                let var_small = d.spec.small_var(eps).max(0.0);
                Ok(SimLaw {
                    event_rate: mass,
                    drift_eff: quad.a - comp,
                    gauss_var: quad.sigma2 + var_small,
                    sampler: Sampler::Density {
                        spec: d.spec.as_ref(),
                        eps,
                    },
                })
            }
        }
    }

    fn sample_event(&self, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
        match &self.sampler {
            Sampler::Atoms { atoms, cum } => {
                let total = *cum.last().unwrap();
                let u = rng.gen::<f64>() * total;
                let i = cum.partition_point(|&c| c <= u).min(atoms.len() - 1);
                (atoms[i].y0, atoms[i].offspring.clone())
            }
            Sampler::Density { spec, eps } => spec.sample_restricted(*eps, rng),
        }
    }
}

/// Simulate a path of the Lévy process with characteristics taken from
/// `quad` (the alpha component is not used here), started at 0, on
/// [0, horizon], with killing. See `sample_levy_path_stopped` for the
/// variant that also stops when the path falls below a level.
pub fn sample_levy_path(
    quad: &CharQuadruplet,
    horizon: f64,
    dt: f64,
    jump_cutoff: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LevyPath> {
    sample_levy_path_stopped(quad, horizon, dt, jump_cutoff, f64::NEG_INFINITY, rng)
}

/// As `sample_levy_path`, but the path is also stopped (and treated as dead,
/// with -inf terminal semantics) the first time it falls below `stop_below`.
/// Used for decoration sampling where everything below a type floor is
/// discarded anyway; pass -inf to disable.
pub fn sample_levy_path_stopped(
    quad: &CharQuadruplet,
    horizon: f64,
    dt: f64,
    jump_cutoff: f64,
    stop_below: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LevyPath> {
    assert!(dt > 0.0, "dt must be positive");
    assert!(horizon > 0.0, "horizon must be positive");
    let law = SimLaw::new(quad, jump_cutoff)?;
    let sd_unit = law.gauss_var.max(0.0).sqrt();
    let exp_event = if law.event_rate > 0.0 {
        Some(Exp::new(law.event_rate).expect("positive rate"))
    } else {
        None
    };

    let n_hint = (horizon / dt).min(1e7) as usize + 16;
    let mut times = Vec::with_capacity(n_hint);
    let mut values = Vec::with_capacity(n_hint);
    let mut jumps = Vec::new();
    times.push(0.0);
    values.push(0.0);

    let mut t = 0.0;
    let mut xi = 0.0;
    let mut killed = false;
    let mut lifetime = f64::INFINITY;
    let mut grid_k: u64 = 1; // next uniform grid index
    let mut next_event = match &exp_event {
        Some(e) => e.sample(rng),
        None => f64::INFINITY,
    };

    while t < horizon {
        let t_grid = (grid_k as f64) * dt;
        let t_next = t_grid.min(next_event).min(horizon);
        let h = t_next - t;
        if h > 0.0 {
            let g: f64 = StandardNormal.sample(rng);
            xi += law.drift_eff * h + sd_unit * h.sqrt() * g;
            t = t_next;
            times.push(t);
            values.push(xi);
        } else {
            t = t_next;
        }
        if t >= t_grid {
            grid_k += 1;
        }
        if t >= next_event && t < horizon {
            let (y0, offspring) = law.sample_event(rng);
            let grid_index = values.len() - 1;
            jumps.push(Jump {
                time: t,
                y0,
                offspring,
                grid_index,
            });
            if y0 == f64::NEG_INFINITY {
                times.push(t);
                values.push(f64::NEG_INFINITY);
                killed = true;
                lifetime = t;
                break;
            }
            xi += y0;
            times.push(t);
            values.push(xi);
            next_event = t + exp_event.as_ref().unwrap().sample(rng);
        }
        if xi < stop_below {
            // Below the tracking floor: the remaining contribution to every
            // tracked statistic is negligible; treat as death.
            times.push(t);
            values.push(f64::NEG_INFINITY);
            killed = true;
            lifetime = t;
            break;
        }
    }
    Ok(LevyPath {
        times,
        values,
        jumps,
        lifetime,
        killed,
    })
}

/// Lamperti transform of a path started at log 1, rescaled to start type x:
/// the decoration is X(s) = x e^{xi(tau(x^{-alpha} s))} on [0, z] with
/// z = x^alpha * eps(lifetime ∧ horizon), eps(t) = ∫_0^t e^{alpha xi}.
pub fn lamperti_forward(path: &LevyPath, alpha: f64, x: f64) -> DecorationPath {
    assert!(x > 0.0, "start type must be positive");
    let n = path.times.len();
    let mut time_change = Vec::with_capacity(n);
    let mut dec_times = Vec::with_capacity(n);
    let mut dec_values = Vec::with_capacity(n);
    let scale_t = x.powf(alpha);
    let mut eps = 0.0;
    let mut prev_t = 0.0;
    let mut prev_e = weight(path.values[0], alpha);
    for i in 0..n {
        let t = path.times[i];
        let e = weight(path.values[i], alpha);
        let h = t - prev_t;
        if h > 0.0 {
            eps += 0.5 * (prev_e + e) * h;
        }
        prev_t = t;
        prev_e = e;
        time_change.push((t, eps));
        dec_times.push(scale_t * eps);
        dec_values.push(if path.values[i] == f64::NEG_INFINITY {
            0.0
        } else {
            x * path.values[i].exp()
        });
    }
    let z = scale_t * eps;
    DecorationPath {
        times: dec_times,
        values: dec_values,
        z,
        time_change,
        truncated: !path.killed,
    }
}

fn weight(xi: f64, alpha: f64) -> f64 {
    if xi == f64::NEG_INFINITY {
        0.0
    } else {
        (alpha * xi).exp()
    }
}

/// Inverse Lamperti transform: recovers the underlying Lévy path (geometry
/// only; reproduction marks are not reconstructible) from a decoration path.
/// The recovered values start at log X(0).
pub fn lamperti_inverse(dec: &DecorationPath, alpha: f64) -> Result<LevyPath> {
    let n = dec.times.len();
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut t = 0.0;
    let mut killed = false;
    let mut lifetime = f64::INFINITY;
    for i in 0..n {
        let xv = dec.values[i];
        if xv <= 0.0 {
            if i + 1 == n {
                killed = true;
                lifetime = t;
                times.push(t);
                values.push(f64::NEG_INFINITY);
                break;
            }
            return Err(SsmtError::ZeroDecoration);
        }
        if i > 0 {
            let h = dec.times[i] - dec.times[i - 1];
            if h > 0.0 {
                let w_prev = dec.values[i - 1].powf(-alpha);
                let w_cur = xv.powf(-alpha);
                t += 0.5 * (w_prev + w_cur) * h;
            }
        }
        times.push(t);
        values.push(xv.ln());
    }
    Ok(LevyPath {
        times,
        values,
        jumps: Vec::new(),
        lifetime,
        killed,
    })
}

/// Sample the decoration of a branch of start type x together with its
/// reproduction atoms: children appear at intrinsic position x^alpha eps(s)
/// with type x e^{xi(s-) + y_l}, kept only above offspring_floor * x.
pub fn sample_decoration_reproduction(
    quad: &CharQuadruplet,
    x: f64,
    rng: &mut ChaCha8Rng,
    caps: SimCaps,
) -> Result<(DecorationPath, ReproductionAtoms)> {
    let stop_below = caps.offspring_floor.max(1e-300).ln();
    let path = sample_levy_path_stopped(
        quad,
        caps.horizon,
        caps.dt,
        caps.jump_cutoff,
        stop_below,
        rng,
    )?;
    let dec = lamperti_forward(&path, quad.alpha, x);
    let scale_t = x.powf(quad.alpha);
    let floor_abs = caps.offspring_floor * x;
    let mut atoms = Vec::new();
    for j in &path.jumps {
        let xi_pre = path.values[j.grid_index];
        if xi_pre == f64::NEG_INFINITY {
            continue;
        }
        let eps_at = dec.time_change[j.grid_index].1;
        let pos = scale_t * eps_at;
        for &yl in &j.offspring {
            if !yl.is_finite() {
                continue;
            }
            let child = x * (xi_pre + yl).exp();
            if child > floor_abs {
                atoms.push((pos, child));
            }
        }
    }
    Ok((dec, ReproductionAtoms { atoms }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadruplet::{builtin, Atom, Builtin, CharQuadruplet, GeneralizedLevyMeasure};
    use crate::rng::stream;
    use crate::stats::Running;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn pure_bm() -> CharQuadruplet {
        CharQuadruplet::new(1.0, 0.0, GeneralizedLevyMeasure::FiniteAtoms(vec![]), 2.0)
    }

    fn drift_only(a: f64) -> CharQuadruplet {
        CharQuadruplet::new(0.0, a, GeneralizedLevyMeasure::FiniteAtoms(vec![]), 1.0)
    }

    #[test]
    fn brownian_variance_at_unit_time() {
        let quad = pure_bm();
        let mut rng = stream(7, 0);
        let mut acc = Running::default();
        for _ in 0..10_000 {
            let p = sample_levy_path(&quad, 1.0, 0.05, 1e-3, &mut rng).unwrap();
            assert!(!p.killed);
            acc.push(*p.values.last().unwrap());
        }
        assert_abs_diff_eq!(acc.mean(), 0.0, epsilon = 4.0 * acc.stderr());
        // Var estimator SE ~ var * sqrt(2/(n-1)).
        let var = acc.variance();
        let se_var = var * (2.0 / 9999.0f64).sqrt();
        assert_abs_diff_eq!(var, 1.0, epsilon = 3.0 * se_var);
    }

    #[test]
    fn bessel_laplace_exponent_at_omega() {
        // E[e^{sqrt2 xi_1} 1_{alive}] = e^{psi(sqrt2)} = e^{-2}.
        let quad = builtin(Builtin::Bessel);
        let mut rng = stream(11, 0);
        let mut acc = Running::default();
        for _ in 0..20_000 {
            let p = sample_levy_path(&quad, 1.0, 0.05, 1e-3, &mut rng).unwrap();
            let v = if p.killed {
                0.0
            } else {
                (SQRT2 * p.values.last().unwrap()).exp()
            };
            acc.push(v);
        }
        let expect = (-2.0f64).exp();
        assert!(
            (acc.mean() - expect).abs() <= 3.0 * acc.stderr(),
            "mean {} vs {} (se {})",
            acc.mean(),
            expect,
            acc.stderr()
        );
    }

    #[test]
    fn bessel_kill_time_is_unit_exponential() {
        let quad = builtin(Builtin::Bessel);
        let mut rng = stream(13, 0);
        let mut acc = Running::default();
        for _ in 0..5_000 {
            let p = sample_levy_path(&quad, 50.0, 0.05, 1e-3, &mut rng).unwrap();
            assert!(p.killed, "kill rate 1 must kill well before horizon 50");
            acc.push(p.lifetime);
            assert_eq!(*p.values.last().unwrap(), f64::NEG_INFINITY);
        }
        assert_abs_diff_eq!(acc.mean(), 1.0, epsilon = 3.0 * acc.stderr());
    }

    #[test]
    fn ads_event_count_matches_restricted_mass() {
        let quad = builtin(Builtin::Ads);
        let eps = 1e-2;
        let expected_rate = match &quad.levy {
            GeneralizedLevyMeasure::DensityForm(d) => d.spec.restricted_mass(eps),
            _ => unreachable!(),
        };
        let mut rng = stream(17, 0);
        let horizon = 200.0;
        let p = sample_levy_path(&quad, horizon, 1e-2, eps, &mut rng).unwrap();
        let n = p.jumps.len() as f64;
        let lam = expected_rate * horizon;
        let z = (n - lam) / lam.sqrt();
        assert!(z.abs() < 4.0, "Poisson count z = {z} (n = {n}, lam = {lam})");
    }

    #[test]
    fn ads_laplace_exponent_probe() {
        // E[e^{xi_1}] = e^{psi(1)}; psi_ads(1) = -4/pi.
        let quad = builtin(Builtin::Ads);
        let mut rng = stream(19, 0);
        let mut acc = Running::default();
        for _ in 0..8_000 {
            let p = sample_levy_path(&quad, 1.0, 1e-3, 1e-3, &mut rng).unwrap();
            acc.push(p.values.last().unwrap().exp());
        }
        let expect = (-4.0 / std::f64::consts::PI).exp();
        assert!(
            (acc.mean() - expect).abs() <= 3.5 * acc.stderr(),
            "mean {} vs {} (se {})",
            acc.mean(),
            expect,
            acc.stderr()
        );
    }

    #[test]
    fn invalid_cutoff_rejected_for_density() {
        let quad = builtin(Builtin::Ads);
        let mut rng = stream(1, 0);
        assert!(matches!(
            sample_levy_path(&quad, 1.0, 1e-2, 0.0, &mut rng),
            Err(SsmtError::InvalidCutoff(_))
        ));
    }

    #[test]
    fn lamperti_identity_on_constant_path() {
        let quad = drift_only(0.0);
        let mut rng = stream(2, 0);
        let p = sample_levy_path(&quad, 1.0, 0.1, 1e-3, &mut rng).unwrap();
        let dec = lamperti_forward(&p, 2.0, 1.0);
        assert!(dec.truncated);
        assert_relative_eq!(dec.z, 1.0, epsilon = 1e-12);
        for (t, e) in &dec.time_change {
            assert_relative_eq!(t, e, epsilon = 1e-12);
        }
        for v in &dec.values {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lamperti_deterministic_drift_closed_form() {
        // xi(t) = -t, alpha = 1: eps(t) = 1 - e^{-t}; X(s) = 1 - s.
        let quad = drift_only(-1.0);
        let mut rng = stream(3, 0);
        let p = sample_levy_path(&quad, 8.0, 1e-3, 1e-3, &mut rng).unwrap();
        let dec = lamperti_forward(&p, 1.0, 1.0);
        assert_abs_diff_eq!(dec.z, 1.0 - (-8.0f64).exp(), epsilon = 1e-5);
        for (s, v) in dec.times.iter().zip(&dec.values).step_by(97) {
            assert_abs_diff_eq!(*v, 1.0 - s, epsilon = 1e-5);
        }
    }

    #[test]
    fn lamperti_scaling_is_exact_on_grids() {
        let quad = builtin(Builtin::Bessel);
        let mut rng = stream(5, 0);
        let p = sample_levy_path(&quad, 30.0, 1e-2, 1e-3, &mut rng).unwrap();
        let d1 = lamperti_forward(&p, 2.0, 1.0);
        let d2 = lamperti_forward(&p, 2.0, 2.0);
        assert_relative_eq!(d2.z, 4.0 * d1.z, epsilon = 1e-12);
        for i in 0..d1.times.len() {
            assert_relative_eq!(d2.times[i], 4.0 * d1.times[i], epsilon = 1e-12);
            assert_relative_eq!(d2.values[i], 2.0 * d1.values[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn lamperti_round_trip_on_bessel_branches() {
        let quad = builtin(Builtin::Bessel);
        let mut rng = stream(23, 0);
        let dt = 1e-2;
        for _ in 0..100 {
            let p = sample_levy_path(&quad, 40.0, dt, 1e-3, &mut rng).unwrap();
            let dec = lamperti_forward(&p, 2.0, 1.0);
            let back = lamperti_inverse(&dec, 2.0).unwrap();
            assert_eq!(back.killed, p.killed);
            let mut max_dev: f64 = 0.0;
            for (tb, tp) in back.times.iter().zip(&p.times) {
                max_dev = max_dev.max((tb - tp).abs());
            }
            assert!(max_dev < 10.0 * dt, "round-trip time deviation {max_dev}");
            for (vb, vp) in back.values.iter().zip(&p.values) {
                if vp.is_finite() {
                    assert_abs_diff_eq!(vb, vp, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn lamperti_inverse_rejects_interior_zero() {
        let dec = DecorationPath {
            times: vec![0.0, 0.5, 1.0],
            values: vec![1.0, 0.0, 1.0],
            z: 1.0,
            time_change: vec![],
            truncated: false,
        };
        assert!(matches!(
            lamperti_inverse(&dec, 1.0),
            Err(SsmtError::ZeroDecoration)
        ));
    }

    #[test]
    fn bessel_deaths_spawn_twin_children_at_death_position() {
        let quad = builtin(Builtin::Bessel);
        let mut rng = stream(29, 0);
        for _ in 0..200 {
            let (dec, atoms) =
                sample_decoration_reproduction(&quad, 1.0, &mut rng, SimCaps::default()).unwrap();
            if dec.truncated {
                continue;
            }
            assert_eq!(atoms.atoms.len(), 2, "every death is a binary branch point");
            let (t0, y0) = atoms.atoms[0];
            let (t1, y1) = atoms.atoms[1];
            assert_relative_eq!(t0, dec.z, epsilon = 1e-12);
            assert_relative_eq!(t1, dec.z, epsilon = 1e-12);
            assert_relative_eq!(y0, y1, epsilon = 1e-12);
            // Child type equals the decoration just before death.
            let last_pos = dec.values.iter().rev().find(|v| **v > 0.0).unwrap();
            assert_relative_eq!(y0, *last_pos, epsilon = 1e-9);
        }
    }

    #[test]
    fn bessel_children_harmonic_weight_is_one() {
        // E[sum_i chi_i^{sqrt2}] = 1 (the harmonic identity at omega_minus).
        let quad = builtin(Builtin::Bessel);
        let mut rng = stream(31, 0);
        let mut acc = Running::default();
        let caps = SimCaps {
            horizon: 60.0,
            dt: 0.05,
            jump_cutoff: 1e-3,
            offspring_floor: 1e-9,
        };
        for _ in 0..20_000 {
            let (_, atoms) = sample_decoration_reproduction(&quad, 1.0, &mut rng, caps).unwrap();
            acc.push(atoms.atoms.iter().map(|&(_, y)| y.powf(SQRT2)).sum::<f64>());
        }
        assert!(
            (acc.mean() - 1.0).abs() <= 3.0 * acc.stderr(),
            "mean {} (se {})",
            acc.mean(),
            acc.stderr()
        );
    }

    #[test]
    fn offspring_floor_drops_small_children() {
        let quad = CharQuadruplet::new(
            1.0,
            -SQRT2,
            GeneralizedLevyMeasure::FiniteAtoms(vec![Atom::new(
                1.0,
                f64::NEG_INFINITY,
                vec![0.0, -30.0],
            )]),
            2.0,
        );
        let mut rng = stream(37, 0);
        let caps = SimCaps::default();
        for _ in 0..50 {
            let (dec, atoms) =
                sample_decoration_reproduction(&quad, 1.0, &mut rng, caps).unwrap();
            if dec.truncated {
                continue;
            }
            // The e^{-30}-displaced child sits far below floor * x = 1e-6.
            assert_eq!(atoms.atoms.len(), 1);
            for &(_, y) in &atoms.atoms {
                assert!(y > caps.offspring_floor);
            }
        }
    }

    #[test]
    fn ads_floor_stop_terminates_paths() {
        // No killing atoms: termination must come from the decoration floor.
        let quad = builtin(Builtin::Ads);
        let mut rng = stream(41, 0);
        let caps = SimCaps {
            horizon: 400.0,
            dt: 1e-2,
            jump_cutoff: 1e-2,
            offspring_floor: 1e-4,
        };
        for _ in 0..20 {
            let (dec, atoms) = sample_decoration_reproduction(&quad, 1.0, &mut rng, caps).unwrap();
            assert!(!dec.truncated, "drift -1.89 must reach the floor well before t = 400");
            assert!(dec.z.is_finite() && dec.z > 0.0);
            assert_eq!(*dec.values.last().unwrap(), 0.0);
            for &(t, y) in &atoms.atoms {
                assert!(t <= dec.z + 1e-12);
                assert!(y > caps.offspring_floor);
            }
        }
    }

    #[test]
    fn branch_length_scaling_in_distribution_via_common_paths() {
        let quad = builtin(Builtin::Bessel);
        let mut rng = stream(43, 0);
        let p = sample_levy_path(&quad, 40.0, 1e-2, 1e-3, &mut rng).unwrap();
        let z1 = lamperti_forward(&p, 2.0, 1.0).z;
        let z2 = lamperti_forward(&p, 2.0, 2.0).z;
        assert_relative_eq!(z2, 2.0f64.powi(2) * z1, epsilon = 1e-12);
    }

    #[test]
    fn time_change_monotone_and_consistent() {
        let quad = builtin(Builtin::Ads);
        let mut rng = stream(47, 0);
        let p = sample_levy_path(&quad, 5.0, 1e-2, 1e-2, &mut rng).unwrap();
        let dec = lamperti_forward(&p, 1.0, 1.0);
        for w in dec.time_change.windows(2) {
            assert!(w[1].0 >= w[0].0);
            assert!(w[1].1 >= w[0].1);
        }
        assert_relative_eq!(dec.z, dec.time_change.last().unwrap().1, epsilon = 1e-12);
    }
}
