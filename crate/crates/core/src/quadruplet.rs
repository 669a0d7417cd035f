//! Characteristic quadruplets `(sigma2, a, Lambda; alpha)` and the cumulant
//! calculus on them: Laplace exponent `psi`, cumulant `kappa`, criticality
//! detection (the root `omega_minus` of `kappa` and the regime
//! classification), the spine tilting `Lambda_omega` with its corrected
//! drift, bifurcator equivalence, and the two built-in example quadruplets.
//!
//! The generalized Lévy measure comes in two concrete representations:
//! finitely many weighted atoms (finite activity, exact arithmetic), or a
//! density specification exposing samplers and numeric integrals (used for
//! the Aïdékon–Da Silva measure, whose density has second-order poles).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsmtError};
use crate::numeric::{brent_root, deriv2, integrate, integrate_to_inf};

/// Relative tolerance used for every adaptive quadrature in this module.
pub const QUAD_REL_TOL: f64 = 1e-8;
/// Absolute tolerance used for every adaptive quadrature in this module.
pub const QUAD_ABS_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Extended reals: -inf displacements are first-class (they encode killing and
// absent children). JSON cannot hold -inf, so it round-trips as the string
// "-inf".
// ---------------------------------------------------------------------------

mod ext_serde {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize, serde::Serialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    fn encode(v: f64) -> Repr {
        if v == f64::NEG_INFINITY {
            Repr::Str("-inf".to_owned())
        } else {
            Repr::Num(v)
        }
    }

    fn decode<E: Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) if v.is_finite() => Ok(v),
            Repr::Num(v) => Err(E::custom(format!("displacement {v} must be finite or \"-inf\""))),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(E::custom(format!("unrecognized displacement string {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&encode(*v), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let repr: Vec<Repr> = v.iter().map(|&x| encode(x)).collect();
            serde::Serialize::serialize(&repr, s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let repr: Vec<Repr> = Vec::deserialize(d)?;
            repr.into_iter().map(decode).collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Measure representations
// ---------------------------------------------------------------------------

/// One atom of a finite-activity generalized Lévy measure: at rate `rate`
/// per unit time, the running particle jumps by `y0` (possibly -inf, which
/// kills it) while children appear at log-displacements `offspring`
/// (entries of -inf are absent children and carry no mass).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Atom {
    pub rate: f64,
    #[serde(with = "ext_serde")]
    pub y0: f64,
    #[serde(with = "ext_serde::vec")]
    pub offspring: Vec<f64>,
}

impl Atom {
    pub fn new(rate: f64, y0: f64, offspring: Vec<f64>) -> Self {
        let mut a = Atom { rate, y0, offspring };
        a.normalize();
        a
    }

    /// Offspring lists are kept non-increasing (-inf entries sink to the end).
    pub fn normalize(&mut self) {
        self.offspring
            .sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    }

    /// Finite offspring displacements.
    pub fn finite_offspring(&self) -> impl Iterator<Item = f64> + '_ {
        self.offspring.iter().copied().filter(|y| y.is_finite())
    }

    /// The full displacement multiset {y0} ∪ offspring, sorted non-increasing
    /// with trailing -inf entries trimmed. Two atoms with equal `ord` describe
    /// the same reproduction event up to the choice of which child continues
    /// the running particle.
    pub fn ord_key(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.offspring.clone();
        all.push(self.y0);
        all.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
        while all.last() == Some(&f64::NEG_INFINITY) {
            all.pop();
        }
        all
    }
}

/// Contract a density-form measure must implement. `eps` always refers to
/// the simulation restriction set `{|y0| > eps or e^{y1} > eps}`: events in
/// it are sampled as marked Poisson atoms, events outside it are folded into
/// the Gaussian small-jump substitution (children there are below every
/// tracked threshold and are dropped).
pub trait DensitySpec: Send + Sync {
    /// Total mass of the restriction set.
    fn restricted_mass(&self, eps: f64) -> f64;
    /// Sample one event from the normalized restriction of the measure.
    fn sample_restricted(&self, eps: f64, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>);
    /// ∫ y0 1_{|y0|<=1} over the restriction set (drift de-compensation of
    /// the simulated atoms).
    fn compensator_restricted(&self, eps: f64) -> f64;
    /// ∫ y0^2 over the complement of the restriction set (variance of the
    /// Gaussian substituted for the small jumps).
    fn small_var(&self, eps: f64) -> f64;
    /// ∫ (e^{gamma y0} - 1 - gamma y0 1_{|y0|<=1}) Λ0(dy0).
    fn psi_jump_integral(&self, gamma: f64) -> Result<f64>;
    /// ∫ Σ_i e^{gamma y_i} Λ(du); +inf encodes divergence.
    fn offspring_integral(&self, gamma: f64) -> f64;
    /// ∫ (Σ_i e^{gamma y_i})^p Λ1(dy); +inf encodes divergence.
    fn offspring_p_integral(&self, gamma: f64, p: f64) -> f64;
    /// ∫ [ y0 (e^{omega y0} - 1) 1_{|y0|<=1} + Σ_i y_i e^{omega y_i} 1_{|y_i|<=1} ] Λ(du).
    fn tilt_drift_integral(&self, omega: f64) -> Result<f64>;
    /// The tilted measure e^{omega y}Λ + Λ~_omega, when available in density
    /// form for this spec.
    fn tilted(&self, omega: f64) -> Option<DensityMeasure>;
}

/// A named density-form measure. `name`/`params` carry the serializable
/// identity; `spec` carries the numeric contract.
#[derive(Clone)]
pub struct DensityMeasure {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub spec: Arc<dyn DensitySpec>,
}

impl fmt::Debug for DensityMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityMeasure")
            .field("name", &self.name)
            .field("params", &self.params)
            .finish()
    }
}

impl DensityMeasure {
    pub fn by_name(name: &str, params: BTreeMap<String, f64>) -> Result<Self> {
        let spec: Arc<dyn DensitySpec> = match name {
            "ads" => Arc::new(AdsDensity),
            "ads-tilted" => Arc::new(AdsTiltedDensity),
            other => {
                return Err(SsmtError::Config(format!(
                    "unknown density name {other:?} (known: ads, ads-tilted)"
                )))
            }
        };
        Ok(DensityMeasure {
            name: name.to_owned(),
            params,
            spec,
        })
    }

    /// Wrap an ad-hoc spec (used by tests for synthetic measures).
    pub fn custom(name: &str, spec: Arc<dyn DensitySpec>) -> Self {
        DensityMeasure {
            name: name.to_owned(),
            params: BTreeMap::new(),
            spec,
        }
    }
}

/// The generalized Lévy measure of a quadruplet.
#[derive(Debug, Clone)]
pub enum GeneralizedLevyMeasure {
    FiniteAtoms(Vec<Atom>),
    DensityForm(DensityMeasure),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LevyRepr {
    FiniteAtoms {
        atoms: Vec<Atom>,
    },
    Density {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
}

impl Serialize for GeneralizedLevyMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => LevyRepr::FiniteAtoms {
                atoms: atoms.clone(),
            },
            GeneralizedLevyMeasure::DensityForm(d) => LevyRepr::Density {
                name: d.name.clone(),
                params: d.params.clone(),
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GeneralizedLevyMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LevyRepr::deserialize(d)? {
            LevyRepr::FiniteAtoms { atoms } => {
                let atoms = atoms
                    .into_iter()
                    .map(|mut a| {
                        a.normalize();
                        a
                    })
                    .collect();
                Ok(GeneralizedLevyMeasure::FiniteAtoms(atoms))
            }
            LevyRepr::Density { name, params } => DensityMeasure::by_name(&name, params)
                .map(GeneralizedLevyMeasure::DensityForm)
                .map_err(serde::de::Error::custom),
        }
    }
}

impl GeneralizedLevyMeasure {
    /// ∫ Σ_i e^{gamma y_i} Λ(du) (+inf when divergent).
    pub fn offspring_integral(&self, gamma: f64) -> f64 {
        match self {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => atoms
                .iter()
                .map(|a| a.rate * a.finite_offspring().map(|y| (gamma * y).exp()).sum::<f64>())
                .sum(),
            GeneralizedLevyMeasure::DensityForm(d) => d.spec.offspring_integral(gamma),
        }
    }

    /// ∫ (Σ_i e^{gamma y_i})^p Λ1(dy) (+inf when divergent).
    pub fn offspring_p_integral(&self, gamma: f64, p: f64) -> f64 {
        match self {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => atoms
                .iter()
                .map(|a| {
                    let s: f64 = a.finite_offspring().map(|y| (gamma * y).exp()).sum();
                    a.rate * s.powf(p)
                })
                .sum(),
            GeneralizedLevyMeasure::DensityForm(d) => d.spec.offspring_p_integral(gamma, p),
        }
    }

    /// ∫ (e^{gamma y0} - 1 - gamma y0 1_{|y0|<=1}) Λ0(dy0). A killing atom
    /// (y0 = -inf) contributes -rate.
    pub fn psi_jump(&self, gamma: f64) -> Result<f64> {
        match self {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => Ok(atoms
                .iter()
                .map(|a| {
                    let e = if a.y0 == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (gamma * a.y0).exp()
                    };
                    let comp = if a.y0.is_finite() && a.y0.abs() <= 1.0 {
                        gamma * a.y0
                    } else {
                        0.0
                    };
                    a.rate * (e - 1.0 - comp)
                })
                .sum()),
            GeneralizedLevyMeasure::DensityForm(d) => d.spec.psi_jump_integral(gamma),
        }
    }

    /// Total rate of killing atoms (y0 = -inf).
    pub fn kill_rate(&self) -> f64 {
        match self {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => atoms
                .iter()
                .filter(|a| a.y0 == f64::NEG_INFINITY)
                .map(|a| a.rate)
                .sum(),
            GeneralizedLevyMeasure::DensityForm(_) => 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// The quadruplet and its calculus
// ---------------------------------------------------------------------------

/// Characteristic quadruplet (sigma2, a, Lambda; alpha).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharQuadruplet {
    pub sigma2: f64,
    pub a: f64,
    pub levy: GeneralizedLevyMeasure,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    CriticalA,
    CriticalAPrime,
    Subcritical,
    Supercritical,
    Indeterminate,
}

/// Outcome of criticality detection plus the verified moment assumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub omega_minus: Option<f64>,
    pub kappa_prime_at_root: f64,
    pub kappa_second_at_root: Option<f64>,
    pub gamma1: Option<f64>,
    pub p0: Option<f64>,
    pub delta0: Option<f64>,
    pub regime: Regime,
    /// Minimum of kappa over the probed finite domain (diagnostic).
    pub kappa_min: f64,
}

impl CharQuadruplet {
    pub fn new(sigma2: f64, a: f64, levy: GeneralizedLevyMeasure, alpha: f64) -> Self {
        assert!(sigma2 >= 0.0, "sigma2 must be nonnegative");
        assert!(alpha > 0.0, "alpha must be positive");
        CharQuadruplet {
            sigma2,
            a,
            levy,
            alpha,
        }
    }

    /// Laplace exponent of the running particle:
    /// psi(gamma) = sigma2 gamma^2 / 2 + a gamma + ∫(e^{gamma y} - 1 - gamma y 1_{|y|<=1}) Λ0(dy).
    pub fn psi(&self, gamma: f64) -> Result<f64> {
        let jump = self.levy.psi_jump(gamma)?;
        if !jump.is_finite() {
            return Err(SsmtError::DivergentIntegral(format!(
                "psi jump integral diverges at gamma = {gamma}"
            )));
        }
        Ok(0.5 * self.sigma2 * gamma * gamma + self.a * gamma + jump)
    }

    /// Cumulant kappa(gamma) = psi(gamma) + ∫ Σ_i e^{gamma y_i} Λ(du);
    /// divergence is encoded as +inf.
    pub fn kappa(&self, gamma: f64) -> f64 {
        let off = self.levy.offspring_integral(gamma);
        if !off.is_finite() {
            return f64::INFINITY;
        }
        match self.psi(gamma) {
            Ok(p) => p + off,
            Err(_) => f64::INFINITY,
        }
    }

    /// Moment generating function of first-generation types,
    /// M(gamma) = 1 - kappa(gamma)/psi(gamma); valid where psi(gamma) < 0.
    pub fn moment_gen(&self, gamma: f64) -> Result<f64> {
        let p = self.psi(gamma)?;
        if p >= 0.0 {
            return Err(SsmtError::InvalidRegime(format!(
                "moment_gen requires psi(gamma) < 0, got psi({gamma}) = {p}"
            )));
        }
        let k = self.kappa(gamma);
        if !k.is_finite() {
            return Err(SsmtError::DivergentIntegral(format!(
                "kappa({gamma}) diverges"
            )));
        }
        Ok(1.0 - k / p)
    }

    /// Locate the first root omega_minus of kappa on [0, 8] and classify the
    /// regime. kappa is convex, so a critical quadruplet has kappa >= 0 with
    /// the root at its minimum (tangent root under Assumption A, boundary
    /// root with negative slope under Assumption A').
    pub fn find_omega_minus(&self, tol: f64) -> Result<CriticalityReport> {
        let kap = |g: f64| self.kappa(g);
        let gamma_hi = 8.0;
        let n_grid = 257;
        let mut finite: Vec<(f64, f64)> = Vec::with_capacity(n_grid);
        for i in 0..n_grid {
            let g = gamma_hi * i as f64 / (n_grid - 1) as f64;
            let k = kap(g);
            if k.is_finite() {
                finite.push((g, k));
            }
        }
        if finite.is_empty() {
            return Err(SsmtError::NoRoot(
                "kappa is not finite anywhere on [0, 8]".into(),
            ));
        }
        // Coarse minimizer, then refinement.
        let (mut g_star, mut k_star) = finite
            .iter()
            .copied()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let grid_step = gamma_hi / (n_grid - 1) as f64;
        let h = tol.cbrt().max(1e-5);
        // Refine the minimizer: kappa' is increasing (convexity), so look for
        // its sign change around the coarse minimum. If the right neighbor is
        // infinite we are at a domain boundary (Assumption A' shape).
        let lo = (g_star - grid_step).max(0.0);
        let hi = g_star + grid_step;
        let dk = |g: f64| (kap(g + h) - kap(g - h)) / (2.0 * h);
        let right_finite = kap(hi).is_finite() && kap(g_star + h).is_finite();
        if right_finite {
            let (dlo, dhi) = (dk(lo.max(h)), dk(hi));
            if dlo < 0.0 && dhi > 0.0 {
                if let Ok(r) = brent_root(dk, lo.max(h), hi, tol, 200) {
                    g_star = r;
                    k_star = kap(r);
                }
            } else {
                // Ternary refinement as a fallback (flat or boundary cases).
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let m1 = a + (b - a) / 3.0;
                    let m2 = b - (b - a) / 3.0;
                    if kap(m1) <= kap(m2) {
                        b = m2;
                    } else {
                        a = m1;
                    }
                    if b - a < tol {
                        break;
                    }
                }
                g_star = 0.5 * (a + b);
                k_star = kap(g_star);
            }
        } else {
            // Minimum against the finiteness boundary: bisect for the edge.
            let (mut a, mut b) = (g_star, hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if kap(m).is_finite() {
                    a = m;
                } else {
                    b = m;
                }
                if b - a < tol.max(1e-12) {
                    break;
                }
            }
            g_star = a;
            k_star = kap(a);
        }

        let zero_tol = (10.0 * tol).max(5e-8);
        let mut report = CriticalityReport {
            omega_minus: None,
            kappa_prime_at_root: f64::NAN,
            kappa_second_at_root: None,
            gamma1: None,
            p0: None,
            delta0: None,
            regime: Regime::Indeterminate,
            kappa_min: k_star,
        };
        if k_star < -zero_tol {
            report.regime = Regime::Subcritical;
            return Ok(report);
        }
        if k_star > zero_tol {
            report.regime = Regime::Supercritical;
            return Ok(report);
        }

        let omega = g_star;
        report.omega_minus = Some(omega);
        // Slope at the root: central difference where possible, one-sided at
        // a finiteness boundary.
        let kp = if kap(omega + h).is_finite() {
            (kap(omega + h) - kap(omega - h)) / (2.0 * h)
        } else {
            (kap(omega) - kap(omega - h)) / h
        };
        report.kappa_prime_at_root = kp;
        let deriv_tol = 1e-2;
        if kp < -deriv_tol {
            report.regime = Regime::CriticalAPrime;
            // A' only demands some gamma1 with psi(gamma1) < 0.
            report.gamma1 = self.search_gamma1(omega, false);
            return Ok(report);
        }
        report.regime = Regime::CriticalA;
        if kap(omega + h).is_finite() && kap(omega - h).is_finite() {
            report.kappa_second_at_root = Some(deriv2(kap, omega, h.max(1e-4)));
        }
        report.gamma1 = self.search_gamma1(omega, true);
        if report.gamma1.is_none() {
            // Assumption A requires gamma1; without it the classification is
            // not usable downstream.
            report.regime = Regime::Indeterminate;
        }
        Ok(report)
    }

    /// First gamma1 > omega with psi(gamma1) < 0 (and kappa finite when
    /// `need_kappa_finite`), on a geometric grid omega*1.01 .. omega*4.
    fn search_gamma1(&self, omega: f64, need_kappa_finite: bool) -> Option<f64> {
        let base = if omega > 0.0 { omega } else { 0.25 };
        let lo = base * 1.01;
        let hi = base * 4.0;
        let n = 64;
        for i in 0..n {
            let g = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
            if g <= omega {
                continue;
            }
            let psi_ok = matches!(self.psi(g), Ok(p) if p < 0.0);
            let kappa_ok = !need_kappa_finite || self.kappa(g).is_finite();
            if psi_ok && kappa_ok {
                return Some(g);
            }
        }
        None
    }

    /// Verify the p-moment assumption: find p0 in {2, 1.5, 1.25} and delta0
    /// with ∫(Σ e^{gamma y_i})^{p0} Λ1 < inf at gamma = omega ± delta0 and
    /// psi(omega ± delta0) < 0. Failures leave p0/delta0 absent.
    pub fn check_assumptions(&self, report: &CriticalityReport) -> CriticalityReport {
        let mut out = report.clone();
        let Some(omega) = report.omega_minus else {
            return out;
        };
        // omega carries root-finding error, so probe slightly outside the
        // nominal points: a moment boundary sitting exactly at omega ± delta
        // must count as divergent, not as barely finite.
        let slack = 1e-3;
        for &p in &[2.0, 1.5, 1.25] {
            for &delta in &[0.5, 0.4, 0.3, 0.2, 0.1] {
                if omega - delta - slack <= 0.0 {
                    continue;
                }
                let gs = [omega - delta - slack, omega + delta + slack];
                let ok = gs.iter().all(|&g| {
                    let psi_neg = matches!(self.psi(g), Ok(v) if v < 0.0);
                    let moment = self.levy.offspring_p_integral(g, p);
                    psi_neg && moment.is_finite()
                });
                if ok {
                    out.p0 = Some(p);
                    out.delta0 = Some(delta);
                    return out;
                }
            }
        }
        out
    }

    /// The spine-tilted quadruplet (sigma2, a_omega, Lambda_omega; alpha).
    ///
    /// Lambda_omega = e^{omega y0} Lambda + Lambda~, where Lambda~ collects
    /// the swaps: each finite offspring displacement y_i may take over the
    /// running-particle role with weight e^{omega y_i}, the old y0 dropping
    /// into the offspring list. The drift picks up the Esscher correction
    ///   a_omega = a + sigma2*omega
    ///           + ∫ [ y0 (e^{omega y0}-1) 1_{|y0|<=1} + Σ_i y_i e^{omega y_i} 1_{|y_i|<=1} ] Λ,
    /// which is exactly what makes the tilted Laplace exponent satisfy
    /// psi_omega(q) = kappa(omega + q).
    pub fn tilted_quadruplet(&self, omega: f64) -> Result<CharQuadruplet> {
        let psi_omega = self.psi(omega)?;
        let swap_target = -psi_omega;
        let (levy, swap_mass, drift_int) = match &self.levy {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => {
                let mut tilted: Vec<Atom> = Vec::new();
                let mut swap_mass = 0.0;
                let mut drift_int = 0.0;
                for atom in atoms {
                    // Direct part, weight e^{omega y0}.
                    let w0 = if atom.y0 == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (omega * atom.y0).exp()
                    };
                    if w0 * atom.rate > 0.0 {
                        tilted.push(Atom::new(atom.rate * w0, atom.y0, atom.offspring.clone()));
                    }
                    if atom.y0.is_finite() && atom.y0.abs() <= 1.0 {
                        drift_int += atom.rate * atom.y0 * ((omega * atom.y0).exp() - 1.0);
                    }
                    // Swap parts, one per finite offspring entry.
                    for (i, yi) in atom.offspring.iter().enumerate() {
                        if !yi.is_finite() {
                            continue;
                        }
                        let wi = (omega * yi).exp();
                        if wi * atom.rate <= 0.0 {
                            continue;
                        }
                        let mut off = atom.offspring.clone();
                        off.remove(i);
                        off.push(atom.y0);
                        tilted.push(Atom::new(atom.rate * wi, *yi, off));
                        swap_mass += atom.rate * wi;
                        if yi.abs() <= 1.0 {
                            drift_int += atom.rate * yi * wi;
                        }
                    }
                }
                (GeneralizedLevyMeasure::FiniteAtoms(tilted), swap_mass, drift_int)
            }
            GeneralizedLevyMeasure::DensityForm(d) => {
                let swap_mass = d.spec.offspring_integral(omega);
                let drift_int = d.spec.tilt_drift_integral(omega)?;
                let tilted = d.spec.tilted(omega).ok_or(SsmtError::Unsupported)?;
                (GeneralizedLevyMeasure::DensityForm(tilted), swap_mass, drift_int)
            }
        };
        let tol = match &self.levy {
            GeneralizedLevyMeasure::FiniteAtoms(_) => 1e-8,
            GeneralizedLevyMeasure::DensityForm(_) => 1e-4,
        };
        if (swap_mass - swap_target).abs() > tol * (1.0 + swap_target.abs()) {
            return Err(SsmtError::MassMismatch {
                computed: swap_mass,
                expected: swap_target,
            });
        }
        Ok(CharQuadruplet {
            sigma2: self.sigma2,
            a: self.a + self.sigma2 * omega + drift_int,
            levy,
            alpha: self.alpha,
        })
    }
}

/// Bifurcator equivalence: two quadruplets generate the same tree law iff
/// sigma2 and alpha agree, the ord-projected measures agree (the multiset of
/// full displacement sequences, forgetting which entry is the running
/// particle), and the drifts differ by the compensator gap
/// a2 - a1 = ∫ y0 1_{|y0|<=1} Λ2 - ∫ y0 1_{|y0|<=1} Λ1 (as an eps-truncated
/// limit; exact sums for finite atoms).
pub fn bifurcator_equivalent(
    q1: &CharQuadruplet,
    q2: &CharQuadruplet,
    tol: f64,
) -> Result<bool> {
    let (a1, a2) = match (&q1.levy, &q2.levy) {
        (GeneralizedLevyMeasure::FiniteAtoms(a1), GeneralizedLevyMeasure::FiniteAtoms(a2)) => {
            (a1, a2)
        }
        _ => return Err(SsmtError::Unsupported),
    };
    if (q1.sigma2 - q2.sigma2).abs() > tol || (q1.alpha - q2.alpha).abs() > tol {
        return Ok(false);
    }
    // ord-projected multiset equality.
    let key = |atoms: &[Atom]| -> Vec<(f64, Vec<f64>)> {
        let mut ks: Vec<(f64, Vec<f64>)> =
            atoms.iter().map(|a| (a.rate, a.ord_key())).collect();
        ks.sort_by(|x, y| {
            x.1.partial_cmp(&y.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal))
        });
        ks
    };
    let (k1, k2) = (key(a1), key(a2));
    if k1.len() != k2.len() {
        return Ok(false);
    }
    for (x, y) in k1.iter().zip(&k2) {
        if (x.0 - y.0).abs() > tol || x.1.len() != y.1.len() {
            return Ok(false);
        }
        for (u, v) in x.1.iter().zip(&y.1) {
            let same = (u == v) || (u - v).abs() <= tol;
            if !same {
                return Ok(false);
            }
        }
    }
    // Drift condition via truncated first-coordinate integrals; for finite
    // atoms the eps-limit is attained at eps = 0.
    let comp = |atoms: &[Atom]| -> f64 {
        atoms
            .iter()
            .filter(|a| a.y0.is_finite() && a.y0.abs() <= 1.0)
            .map(|a| a.rate * a.y0)
            .sum()
    };
    Ok(((q2.a - q1.a) - (comp(a2) - comp(a1))).abs() <= tol)
}

// ---------------------------------------------------------------------------
// Builtins
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// Binary branching Brownian motion with drift -sqrt(2):
    /// (1, -sqrt(2), delta_{(-inf, (0,0))}; 2). kappa(g) = g^2/2 - sqrt(2) g + 1.
    Bessel,
    /// The Aïdékon–Da Silva quadruplet (0, a_ads, Lambda_ads; 1);
    /// kappa(g) = 2 (g-2) tan(pi g / 2) on (3/2, 5/2).
    Ads,
}

impl Builtin {
    pub fn parse(name: &str) -> Option<Builtin> {
        match name {
            "bessel" => Some(Builtin::Bessel),
            "ads" => Some(Builtin::Ads),
            _ => None,
        }
    }
}

pub fn builtin(which: Builtin) -> CharQuadruplet {
    match which {
        Builtin::Bessel => CharQuadruplet::new(
            1.0,
            -std::f64::consts::SQRT_2,
            GeneralizedLevyMeasure::FiniteAtoms(vec![Atom::new(
                1.0,
                f64::NEG_INFINITY,
                vec![0.0, 0.0],
            )]),
            2.0,
        ),
        Builtin::Ads => CharQuadruplet::new(
            0.0,
            ads_drift(),
            GeneralizedLevyMeasure::DensityForm(
                DensityMeasure::by_name("ads", BTreeMap::new()).unwrap(),
            ),
            1.0,
        ),
    }
}

/// a_ads = -4/pi + (2/pi) ∫_{-log 2}^inf (y 1_{|y|<=1} - (e^y - 1)) e^{-y} (e^y - 1)^{-2} dy,
/// computed once by adaptive quadrature and cached.
pub fn ads_drift() -> f64 {
    use std::sync::OnceLock;
    static CACHE: OnceLock<f64> = OnceLock::new();
    *CACHE.get_or_init(|| {
        let f = |y: f64| {
            if y.abs() < 1e-5 {
                // (y - (e^y-1)) e^{-y} (e^y-1)^{-2} = -1/2 + (5/6) y + O(y^2)
                return -0.5 + (5.0 / 6.0) * y;
            }
            let em1 = y.exp_m1();
            let ind = if y.abs() <= 1.0 { y } else { 0.0 };
            (ind - em1) * (-y).exp() / (em1 * em1)
        };
        let left = integrate(f, -(2.0f64.ln()), 0.0, QUAD_REL_TOL, QUAD_ABS_TOL).unwrap();
        let mid = integrate(f, 0.0, 2.0, QUAD_REL_TOL, QUAD_ABS_TOL).unwrap();
        let tail = integrate_to_inf(f, 2.0, QUAD_REL_TOL, QUAD_ABS_TOL).unwrap();
        -4.0 / std::f64::consts::PI
            + (2.0 / std::f64::consts::PI) * (left + mid + tail)
    })
}

/// Closed-form cumulant of the ads quadruplet, valid on (3/2, 5/2) (and in
/// fact on (1, 3)): kappa(gamma) = 2 (gamma - 2) tan(pi gamma / 2).
pub fn ads_kappa_closed_form(gamma: f64) -> f64 {
    2.0 * (gamma - 2.0) * (std::f64::consts::PI * gamma / 2.0).tan()
}

// ---------------------------------------------------------------------------
// The ads density: two branches in type space,
//   (2/pi) dx / (x(1-x))^2 on (1/2, 1) with event (e^{y0}, e^{y1}) = (x, 1-x),
//   (2/pi) dx / (x(1+x))^2 on (0, inf) with event (x+1, x).
// The first-coordinate projection in log space is
//   Λ0(dy) = (2/pi) e^{-y} (e^y - 1)^{-2} dy on (-log 2, inf) \ {0}.
// ---------------------------------------------------------------------------

const FRAC_2_PI: f64 = 2.0 / std::f64::consts::PI;

/// Antiderivative of 1/(x(1-x))^2: 2 ln(x/(1-x)) - 1/x + 1/(1-x).
fn ads_f1(x: f64) -> f64 {
    2.0 * (x / (1.0 - x)).ln() - 1.0 / x + 1.0 / (1.0 - x)
}

/// Antiderivative of 1/(x(1+x))^2: 2 ln((1+x)/x) - 1/x - 1/(1+x); tends to 0
/// at +inf.
fn ads_g2(x: f64) -> f64 {
    2.0 * ((1.0 + x) / x).ln() - 1.0 / x - 1.0 / (1.0 + x)
}

/// Branch-1 restricted region for cutoff eps: x in (1/2, e^{-eps}); the
/// excluded corner (e^{-eps}, 1) has both a tiny running-particle jump and a
/// child below eps. Branch-2 restricted region: x in (eps, inf).
fn ads_branch_masses(eps: f64) -> (f64, f64) {
    let hi = (-eps).exp();
    // ads_f1(1/2) = 0.
    let m1 = FRAC_2_PI * ads_f1(hi);
    let m2 = FRAC_2_PI * (-ads_g2(eps));
    (m1, m2)
}

pub struct AdsDensity;

impl AdsDensity {
    /// Λ0 kernel in log coordinates (without the 2/pi factor), stabilized
    /// near the removable pole at y = 0 where the compensated integrands
    /// need series values.
    fn kernel(y: f64) -> f64 {
        let em1 = y.exp_m1();
        (-y).exp() / (em1 * em1)
    }
}

impl DensitySpec for AdsDensity {
    fn restricted_mass(&self, eps: f64) -> f64 {
        let (m1, m2) = ads_branch_masses(eps);
        m1 + m2
    }

    fn sample_restricted(&self, eps: f64, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
        let (m1, m2) = ads_branch_masses(eps);
        let u: f64 = rng.gen();
        if u * (m1 + m2) < m1 {
            // Branch 1 on (1/2, e^{-eps}): invert F1 by bisection-free Brent.
            let hi = (-eps).exp();
            let target = rng.gen::<f64>() * ads_f1(hi);
            let x = brent_root(|x| ads_f1(x) - target, 0.5, hi, 1e-13, 200)
                .unwrap_or(0.75);
            (x.ln(), vec![(1.0 - x).ln()])
        } else {
            // Branch 2 on (eps, inf): invert G2. For u -> 1 the solution has
            // the closed tail form G2(x) ~ -1/(3x^3).
            let target = (1.0 - rng.gen::<f64>()) * ads_g2(eps);
            let mut hi = 2.0 * eps.max(1.0);
            while ads_g2(hi) < target {
                hi *= 2.0;
                if hi > 1e12 {
                    break;
                }
            }
            let x = brent_root(|x| ads_g2(x) - target, eps, hi, 1e-13, 200)
                .unwrap_or(1.0);
            ((1.0 + x).ln(), vec![x.ln()])
        }
    }

    fn compensator_restricted(&self, eps: f64) -> f64 {
        // Branch 1: y0 = log x on (1/2, e^{-eps}), always within [-1, 0).
        let hi = (-eps).exp();
        let b1 = integrate(
            |x| x.ln() / (x * (1.0 - x)).powi(2),
            0.5,
            hi,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )
        .unwrap_or(0.0);
        // Branch 2: y0 = log(1+x) on (eps, inf), indicator cuts at x = e - 1.
        let cut = std::f64::consts::E - 1.0;
        let b2 = if eps < cut {
            integrate(
                |x| (1.0 + x).ln() / (x * (1.0 + x)).powi(2),
                eps,
                cut,
                QUAD_REL_TOL,
                QUAD_ABS_TOL,
            )
            .unwrap_or(0.0)
        } else {
            0.0
        };
        FRAC_2_PI * (b1 + b2)
    }

    fn small_var(&self, eps: f64) -> f64 {
        // Complement of the restriction: branch 1 on (e^{-eps}, 1), branch 2
        // on (0, eps]; both corners have |y0| <= eps.
        let lo = (-eps).exp();
        let b1 = integrate(
            |x| {
                let u = 1.0 - x;
                if u < 1e-6 {
                    // (log x)^2 / (1-x)^2 -> 1 + u + O(u^2)
                    (1.0 + u) / (x * x)
                } else {
                    let l = x.ln();
                    l * l / (x * u).powi(2)
                }
            },
            lo,
            1.0,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )
        .unwrap_or(0.0);
        let b2 = integrate(
            |x| {
                if x < 1e-6 {
                    (1.0 - x) / (1.0 + x).powi(2)
                } else {
                    let l = (1.0 + x).ln();
                    l * l / (x * (1.0 + x)).powi(2)
                }
            },
            0.0,
            eps,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )
        .unwrap_or(0.0);
        FRAC_2_PI * (b1 + b2)
    }

    fn psi_jump_integral(&self, gamma: f64) -> Result<f64> {
        if gamma >= 3.0 {
            return Err(SsmtError::DivergentIntegral(format!(
                "ads psi integrand grows like e^{{(gamma-3)y}} at +inf, gamma = {gamma}"
            )));
        }
        let f = |y: f64| {
            if y.abs() < 1e-5 {
                // (e^{gy} - 1 - gy) kernel(y) = g^2/2 + (g^3/6 - g^2) y + O(y^2)
                return 0.5 * gamma * gamma + (gamma.powi(3) / 6.0 - gamma * gamma) * y;
            }
            let num = (gamma * y).exp_m1() - if y.abs() <= 1.0 { gamma * y } else { 0.0 };
            num * Self::kernel(y)
        };
        let a = integrate(f, -(2.0f64.ln()), 0.0, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        let b = integrate(f, 0.0, 1.0, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        let c = integrate(f, 1.0, 10.0, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        let d = integrate_to_inf(f, 10.0, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        Ok(FRAC_2_PI * (a + b + c + d))
    }

    fn offspring_integral(&self, gamma: f64) -> f64 {
        // (2/pi) [ ∫_{1/2}^1 (1-x)^{gamma-2} x^{-2} dx + ∫_0^inf x^{gamma-2} (1+x)^{-2} dx ];
        // the second is Beta(gamma-1, 3-gamma), finite iff 1 < gamma < 3.
        if gamma <= 1.0 || gamma >= 3.0 {
            return f64::INFINITY;
        }
        let b1 = integrate(
            |u: f64| u.powf(gamma - 2.0) / (1.0 - u).powi(2),
            0.0,
            0.5,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        );
        let b2 = integrate_to_inf(
            |x: f64| x.powf(gamma - 2.0) / (1.0 + x).powi(2),
            0.0,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        );
        match (b1, b2) {
            (Ok(v1), Ok(v2)) => FRAC_2_PI * (v1 + v2),
            _ => f64::INFINITY,
        }
    }

    fn offspring_p_integral(&self, gamma: f64, p: f64) -> f64 {
        let gp = gamma * p;
        if gp <= 1.0 || gp >= 3.0 {
            return f64::INFINITY;
        }
        let b1 = integrate(
            |u: f64| u.powf(gp - 2.0) / (1.0 - u).powi(2),
            0.0,
            0.5,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        );
        let b2 = integrate_to_inf(
            |x: f64| x.powf(gp - 2.0) / (1.0 + x).powi(2),
            0.0,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        );
        match (b1, b2) {
            (Ok(v1), Ok(v2)) => FRAC_2_PI * (v1 + v2),
            _ => f64::INFINITY,
        }
    }

    fn tilt_drift_integral(&self, omega: f64) -> Result<f64> {
        // Running-particle part, in log coordinates over Λ0.
        let f0 = |y: f64| {
            if y.abs() <= 1.0 {
                y * (omega * y).exp_m1() * Self::kernel(y)
            } else {
                0.0
            }
        };
        let p0 = integrate(f0, -(2.0f64.ln()), 1.0, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        // Child part: branch 1 child 1-x, branch 2 child x.
        let cut1 = 1.0 - (-1.0f64).exp(); // |log(1-x)| <= 1 iff x <= 1 - 1/e
        let p1 = integrate(
            |x: f64| (1.0 - x).ln() * (1.0 - x).powf(omega) / (x * (1.0 - x)).powi(2),
            0.5,
            cut1,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )?;
        let p2 = integrate(
            |x: f64| x.ln() * x.powf(omega) / (x * (1.0 + x)).powi(2),
            (-1.0f64).exp(),
            1.0f64.exp(),
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )?;
        Ok(FRAC_2_PI * (p0 + p1 + p2))
    }

    fn tilted(&self, omega: f64) -> Option<DensityMeasure> {
        if (omega - 2.0).abs() > 1e-6 {
            return None;
        }
        let mut params = BTreeMap::new();
        params.insert("omega".to_owned(), 2.0);
        Some(DensityMeasure {
            name: "ads-tilted".to_owned(),
            params,
            spec: Arc::new(AdsTiltedDensity),
        })
    }
}

// ---------------------------------------------------------------------------
// The tilted ads density at omega = 2. Tilting merges the direct parts and
// swaps into three families (derived by the substitutions u = 1-x, v = x):
//   T1: x in (0,1), rate (2/pi)(1-x)^{-2} dx, event (y0, y1) = (log x, log(1-x));
//   T2: x in (0,inf), rate (2/pi) x^{-2} dx, event (log(1+x), log x);
//   T3: x in (0,inf), rate (2/pi)(1+x)^{-2} dx, event (log x, log(1+x)).
// ---------------------------------------------------------------------------

pub struct AdsTiltedDensity;

impl AdsTiltedDensity {
    /// Restricted masses of the three families at cutoff eps.
    /// T1 restriction: x < e^{-eps}; T2: x > eps; T3: everything (children
    /// are of type 1+x > 1).
    fn masses(eps: f64) -> (f64, f64, f64) {
        let x1 = (-eps).exp();
        let m1 = FRAC_2_PI * (1.0 / (1.0 - x1) - 1.0);
        let m2 = FRAC_2_PI / eps;
        let m3 = FRAC_2_PI;
        (m1, m2, m3)
    }
}

impl DensitySpec for AdsTiltedDensity {
    fn restricted_mass(&self, eps: f64) -> f64 {
        let (m1, m2, m3) = Self::masses(eps);
        m1 + m2 + m3
    }

    fn sample_restricted(&self, eps: f64, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
        let (m1, m2, m3) = Self::masses(eps);
        let u: f64 = rng.gen::<f64>() * (m1 + m2 + m3);
        if u < m1 {
            // T1: density (1-x)^{-2} on (0, e^{-eps}); antiderivative 1/(1-x).
            let v: f64 = rng.gen();
            let top = 1.0 / (1.0 - (-eps).exp()) - 1.0;
            let x = 1.0 - 1.0 / (1.0 + v * top);
            (x.ln(), vec![(1.0 - x).ln()])
        } else if u < m1 + m2 {
            // T2: density x^{-2} on (eps, inf); x = eps / (1 - v).
            let v: f64 = rng.gen();
            let x = eps / (1.0 - v).max(1e-300);
            ((1.0 + x).ln(), vec![x.ln()])
        } else {
            // T3: density (1+x)^{-2} on (0, inf); x = v / (1 - v).
            let v: f64 = rng.gen();
            let x = v / (1.0 - v).max(1e-300);
            (x.ln(), vec![(1.0 + x).ln()])
        }
    }

    fn compensator_restricted(&self, eps: f64) -> f64 {
        // T1: y0 = log x, |y0| <= 1 iff x >= 1/e; region (1/e, e^{-eps}).
        let x1 = (-eps).exp();
        let e_inv = (-1.0f64).exp();
        let t1 = if x1 > e_inv {
            integrate(
                |x| x.ln() / (1.0 - x).powi(2),
                e_inv,
                x1,
                QUAD_REL_TOL,
                QUAD_ABS_TOL,
            )
            .unwrap_or(0.0)
        } else {
            0.0
        };
        // T2: y0 = log(1+x) <= 1 iff x <= e-1; region (eps, e-1).
        let cut = std::f64::consts::E - 1.0;
        let t2 = if eps < cut {
            integrate(
                |x| (1.0 + x).ln() / (x * x),
                eps,
                cut,
                QUAD_REL_TOL,
                QUAD_ABS_TOL,
            )
            .unwrap_or(0.0)
        } else {
            0.0
        };
        // T3: y0 = log x in [-1,1] iff x in [1/e, e]; all of T3 is simulated.
        let t3 = integrate(
            |x| x.ln() / (1.0 + x).powi(2),
            e_inv,
            std::f64::consts::E,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )
        .unwrap_or(0.0);
        FRAC_2_PI * (t1 + t2 + t3)
    }

    fn small_var(&self, eps: f64) -> f64 {
        // Complement: T1 on (e^{-eps}, 1) and T2 on (0, eps].
        let lo = (-eps).exp();
        let t1 = integrate(
            |x| {
                let u = 1.0 - x;
                if u < 1e-6 {
                    1.0 + u
                } else {
                    let l = x.ln();
                    l * l / (u * u)
                }
            },
            lo,
            1.0,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )
        .unwrap_or(0.0);
        let t2 = integrate(
            |x| {
                if x < 1e-6 {
                    1.0 - x
                } else {
                    let l = (1.0 + x).ln();
                    l * l / (x * x)
                }
            },
            0.0,
            eps,
            QUAD_REL_TOL,
            QUAD_ABS_TOL,
        )
        .unwrap_or(0.0);
        FRAC_2_PI * (t1 + t2)
    }

    fn psi_jump_integral(&self, q: f64) -> Result<f64> {
        if q >= 1.0 {
            return Err(SsmtError::DivergentIntegral(format!(
                "tilted ads psi diverges for q >= 1 (kappa(2+q) = +inf), q = {q}"
            )));
        }
        // T1: ∫_0^1 (x^q - 1 - q log x 1_{x >= 1/e}) (1-x)^{-2} dx.
        let e_inv = (-1.0f64).exp();
        let f1 = |x: f64| {
            let u = 1.0 - x;
            if u < 1e-5 {
                // ((1-u)^q - 1 - q log(1-u)) / u^2 = q^2/2 + (q/3 - C(q,3)) u + O(u^2)
                let c3 = q * (q - 1.0) * (q - 2.0) / 6.0;
                return 0.5 * q * q + (q / 3.0 - c3) * u;
            }
            let comp = if x >= e_inv { q * x.ln() } else { 0.0 };
            (x.powf(q) - 1.0 - comp) / (u * u)
        };
        let t1 = integrate(f1, 0.0, e_inv, QUAD_REL_TOL, QUAD_ABS_TOL)?
            + integrate(f1, e_inv, 1.0, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        // T2: ∫_0^inf ((1+x)^q - 1 - q log(1+x) 1_{x <= e-1}) x^{-2} dx.
        let cut = std::f64::consts::E - 1.0;
        let f2 = |x: f64| {
            if x < 1e-5 {
                // ((1+x)^q - 1 - q log(1+x)) / x^2 = q^2/2 + (C(q,3) - q/3) x + O(x^2)
                let c3 = q * (q - 1.0) * (q - 2.0) / 6.0;
                return 0.5 * q * q + (c3 - q / 3.0) * x;
            }
            let comp = if x <= cut { q * (1.0 + x).ln() } else { 0.0 };
            ((1.0 + x).powf(q) - 1.0 - comp) / (x * x)
        };
        let t2 = integrate(f2, 0.0, cut, QUAD_REL_TOL, QUAD_ABS_TOL)?
            + integrate(f2, cut, 20.0, QUAD_REL_TOL, QUAD_ABS_TOL)?
            + integrate_to_inf(f2, 20.0, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        // T3: ∫_0^inf (x^q - 1 - q log x 1_{1/e <= x <= e}) (1+x)^{-2} dx.
        let f3 = |x: f64| {
            let comp = if (e_inv..=std::f64::consts::E).contains(&x) {
                q * x.ln()
            } else {
                0.0
            };
            (x.powf(q) - 1.0 - comp) / (1.0 + x).powi(2)
        };
        let t3 = integrate(f3, 0.0, std::f64::consts::E, QUAD_REL_TOL, QUAD_ABS_TOL)?
            + integrate_to_inf(f3, std::f64::consts::E, QUAD_REL_TOL, QUAD_ABS_TOL)?;
        Ok(FRAC_2_PI * (t1 + t2 + t3))
    }

    fn offspring_integral(&self, _gamma: f64) -> f64 {
        // The T2 family has children of every size with rate x^{-2} dx; the
        // omega-weighted child integral diverges at one end for every gamma.
        f64::INFINITY
    }

    fn offspring_p_integral(&self, _gamma: f64, _p: f64) -> f64 {
        f64::INFINITY
    }

    fn tilt_drift_integral(&self, _omega: f64) -> Result<f64> {
        Err(SsmtError::Unsupported)
    }

    fn tilted(&self, _omega: f64) -> Option<DensityMeasure> {
        None
    }
}
