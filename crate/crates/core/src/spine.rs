//! Spinal samplers: the barrier-conditioned spine (a Doob h-transform of the
//! tilted spine process by the tabulated one-sided renewal function), the
//! spinal construction of a marked tree (conditioned spine plus independent
//! dangling subtrees hung at its reproduction events), the size-biased marked
//! tree (unconditioned growth importance-weighted by the truncated derivative
//! martingale, with the mark chosen from the finite-depth spreading masses),
//! and a weighted two-sample harness checking that the two constructions
//! produce the same marked-tree law.
//!
//! Supported measures: finite-atom reproduction where every atom kills the
//! running particle (reproduction by death). For those quadruplets every
//! tilted event is a swap — the spine continues as one of the children — so
//! the genealogical coordinates of the spinal construction coincide with the
//! coordinates of ordinary family growth. Density-form measures (and atoms
//! that let the particle survive its own reproduction event) would need an
//! unbounded thinning majorant, and are reported as unsupported.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SsmtError};
use crate::fluctuation::RenewalTable;
use crate::genealogy::{
    decimate_path, grow_family, GenealogySample, GrowthConfig, Individual, StopRule, Ulam,
};
use crate::levy_sim::{
    lamperti_forward, DecorationPath, Jump, LevyPath, ReproductionAtoms, SimCaps, SimLaw,
};
use crate::measures::{harmonic_measure_truncated, length_measure};
use crate::quadruplet::{CharQuadruplet, GeneralizedLevyMeasure};
use crate::stats::ks_permutation_pvalue;

/// Consecutive rejected proposals after which one conditioned increment is
/// declared stuck (acceptance below 1e-3 over the window).
const STUCK_WINDOW: usize = 4_000;

// ---------------------------------------------------------------------------
// Conditioned spine sampler
// ---------------------------------------------------------------------------

/// One reproduction event of the tilted spine: the spine displaces by `y0`
/// (one child of the original atom) and the remaining children dangle.
#[derive(Debug, Clone)]
struct TiltedAtom {
    rate: f64,
    y0: f64,
    dangles: Vec<f64>,
    /// State-free thinning majorant: sup over gaps g of R(g - y0) / R(g).
    majorant: f64,
}

/// Exact sampler for the tilted spine conditioned to stay below a barrier.
///
/// The conditioned law is the sequential h-chain of the monitored walk: at
/// every monitored point (per-generation dt grid point or candidate event
/// time) the next increment X over a window of length h is drawn from
/// density proportional to phi_{mh, s^2 h}(X) R(g - X) 1{X <= g}, with g the
/// current log-gap to the barrier. Each increment is sampled exactly by
/// rejection from the two-part envelope phi(X) [C + B (mh - X)_+] with
/// B = c0 (the renewal slope), C = A + B (g - mh)_+ and A the tight linear
/// intercept of the tabulated R; the wing component is a Rayleigh pull-down.
/// Events are a thinned Poisson stream: candidates arrive at the constant
/// majorant rate and survive with probability sum_j rate_j R(g - y0_j) /
/// (rate_M R(g)), which is identically one for displacement-free events.
struct SpineSampler<'a> {
    drift_eff: f64,
    gauss_sd: f64,
    atoms: Vec<TiltedAtom>,
    lam_major: f64,
    a_lin: f64,
    b_lin: f64,
    dt: f64,
    big_l: f64,
    r_big_l: f64,
    table: &'a RenewalTable,
}

/// Barrier-conditioned spine over a fixed simulation-time window.
#[derive(Debug, Clone)]
pub struct ConditionedSpine {
    /// Decoration of the whole spine, Lamperti-transformed from the
    /// conditioned log path (start type x, absolute simulation time).
    pub dec: DecorationPath,
    /// Dangling children (intrinsic position, child type), one entry per
    /// non-spine child of each reproduction event.
    pub atoms: ReproductionAtoms,
    /// Simulation time of each dangling child (parallel to `atoms`).
    pub atom_sim_times: Vec<f64>,
    /// h-weight trace: (simulation time, R(L - xi_t) / R(L)) at every
    /// monitored point; the final entry inverts the change of measure.
    pub weight_trace: Vec<(f64, f64)>,
    /// Mean acceptance probability of the envelope rejection.
    pub acceptance: f64,
}

/// Internal record of one spine generation.
struct SpineGen {
    chi: f64,
    birth_abs: f64,
    /// Branch-local log path relative to the generation's birth value,
    /// ending in the killed (-inf) terminal when the generation reproduced.
    path: LevyPath,
    /// (local event time, local pre-event value index, spine displacement,
    /// dangling displacements); None when the horizon cut the generation.
    event: Option<(f64, usize, f64, Vec<f64>)>,
}

struct RawSpine {
    global: LevyPath,
    gens: Vec<SpineGen>,
    weight_trace: Vec<(f64, f64)>,
    proposals: u64,
    accepts: u64,
    /// True when the requested number of generations completed before the
    /// simulation horizon.
    complete: bool,
}

impl<'a> SpineSampler<'a> {
    fn new(
        quad: &CharQuadruplet,
        x: f64,
        c: f64,
        table: &'a RenewalTable,
        caps: SimCaps,
    ) -> Result<Self> {
        if c < x {
            return Err(SsmtError::BarrierBelowRoot { barrier: c, root: x });
        }
        match &quad.levy {
            GeneralizedLevyMeasure::FiniteAtoms(atoms) => {
                if atoms
                    .iter()
                    .any(|a| a.rate > 0.0 && a.y0 != f64::NEG_INFINITY)
                {
                    return Err(SsmtError::Unsupported);
                }
            }
            GeneralizedLevyMeasure::DensityForm(_) => return Err(SsmtError::Unsupported),
        }
        let tilted = quad.tilted_quadruplet(table.omega)?;
        let law = SimLaw::new(&tilted, caps.jump_cutoff)?;
        let (drift_eff, gauss_var) = (law.drift_eff, law.gauss_var);
        let mut atoms = Vec::new();
        if let GeneralizedLevyMeasure::FiniteAtoms(tilted_atoms) = &tilted.levy {
            for a in tilted_atoms {
                if a.rate <= 0.0 || !a.y0.is_finite() {
                    continue;
                }
                let dangles: Vec<f64> = a.offspring.iter().copied().filter(|y| y.is_finite()).collect();
                atoms.push(TiltedAtom {
                    rate: a.rate,
                    y0: a.y0,
                    dangles,
                    majorant: ratio_majorant(table, a.y0),
                });
            }
        }
        let lam_major: f64 = atoms.iter().map(|a| a.rate * a.majorant).sum();
        // Tight linear majorant R(y) <= a_lin + b_lin y on [0, inf): with
        // b_lin the extension slope, R - b_lin y is piecewise linear and
        // constant beyond the grid, so the knot scan is exact.
        let b_lin = table.c0;
        let mut a_lin = table.r(0.0).max(1e-12);
        for (g, r) in table.grid.iter().zip(&table.r_values) {
            a_lin = a_lin.max(r - b_lin * g);
        }
        let big_l = (c / x).ln();
        Ok(SpineSampler {
            drift_eff,
            gauss_sd: gauss_var.max(0.0).sqrt(),
            atoms,
            lam_major,
            a_lin,
            b_lin,
            dt: table.dt,
            big_l,
            r_big_l: table.r(big_l),
            table,
        })
    }

    /// Exact draw of one conditioned increment over a window of length h at
    /// gap g, with the proposal/acceptance counters threaded through.
    fn step(
        &self,
        g: f64,
        h: f64,
        t_abs: f64,
        rng: &mut ChaCha8Rng,
        proposals: &mut u64,
        accepts: &mut u64,
    ) -> Result<f64> {
        let m = self.drift_eff * h;
        let s = self.gauss_sd * h.sqrt();
        if s <= 0.0 {
            return Ok(m.min(g));
        }
        let c_env = self.a_lin + self.b_lin * (g - m).max(0.0);
        let mass2 = self.b_lin * s / (2.0 * std::f64::consts::PI).sqrt();
        let p2 = mass2 / (c_env + mass2);
        let mut consecutive = 0usize;
        loop {
            let x = if rng.gen::<f64>() < p2 {
                let u: f64 = rng.gen::<f64>().max(1e-300);
                m - s * (-2.0 * u.ln()).sqrt()
            } else {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            };
            *proposals += 1;
            let num = self.table.r(g - x);
            let den = c_env + self.b_lin * (m - x).max(0.0);
            debug_assert!(num <= den * (1.0 + 1e-9), "envelope violated: {num} > {den}");
            if num > 0.0 && rng.gen::<f64>() * den < num {
                *accepts += 1;
                return Ok(x);
            }
            consecutive += 1;
            if consecutive >= STUCK_WINDOW {
                return Err(SsmtError::StuckNearBarrier {
                    rate: 1.0 / consecutive as f64,
                    window: consecutive,
                    gap: g,
                    time: t_abs,
                });
            }
        }
    }

    /// Thinned event at gap g: None when the candidate is rejected,
    /// otherwise the index of the chosen tilted atom.
    fn event(&self, g: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
        let rg = self.table.r(g.max(0.0));
        if rg <= 0.0 {
            return None;
        }
        let weights: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| a.rate * self.table.r(g - a.y0))
            .collect();
        let total: f64 = weights.iter().sum();
        let bound = self.lam_major * rg;
        debug_assert!(total <= bound * (1.0 + 1e-9), "thinning majorant violated");
        if rng.gen::<f64>() * bound >= total {
            return None;
        }
        let mut u = rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                return Some(i);
            }
        }
        Some(weights.len() - 1)
    }

    /// Run the conditioned spine until `horizon` (absolute simulation time)
    /// or, when `max_generations` is set, until that many reproduction
    /// events have been accepted.
    fn run(
        &self,
        horizon: f64,
        max_generations: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<RawSpine> {
        let mut g_times = vec![0.0];
        let mut g_values = vec![0.0];
        let mut g_jumps: Vec<Jump> = Vec::new();
        let mut gens: Vec<SpineGen> = Vec::new();
        let mut weight_trace = vec![(0.0, 1.0)];
        let (mut proposals, mut accepts) = (0u64, 0u64);

        let mut t_abs = 0.0;
        let mut xi_abs = 0.0;
        let mut complete = max_generations.is_none();

        'spine: loop {
            if let Some(n) = max_generations {
                if gens.len() >= n {
                    complete = true;
                    break;
                }
            }
            // Fresh generation: local clock, local grid, local path.
            let birth_abs = t_abs;
            let xi_birth = xi_abs;
            let mut l_times = vec![0.0];
            let mut l_values = vec![0.0];
            let mut tl = 0.0;
            let mut grid_k: u64 = 1;
            let mut next_event = exp_draw(self.lam_major, rng);
            loop {
                let t_grid = grid_k as f64 * self.dt;
                let local_horizon = horizon - birth_abs;
                let t_next = t_grid.min(next_event).min(local_horizon);
                let h = t_next - tl;
                if h > 0.0 {
                    let gap = self.big_l - xi_abs;
                    let x = self.step(gap, h, t_abs, rng, &mut proposals, &mut accepts)?;
                    xi_abs += x;
                    tl = t_next;
                    t_abs = birth_abs + tl;
                    l_times.push(tl);
                    l_values.push(xi_abs - xi_birth);
                    g_times.push(t_abs);
                    g_values.push(xi_abs);
                    weight_trace.push((t_abs, self.table.r(self.big_l - xi_abs) / self.r_big_l));
                } else {
                    tl = t_next;
                    t_abs = birth_abs + tl;
                }
                if tl >= t_grid {
                    grid_k += 1;
                }
                if tl >= local_horizon {
                    // Horizon reached mid-generation: truncated spine end.
                    gens.push(SpineGen {
                        chi: 0.0, // filled by the caller from xi_birth
                        birth_abs,
                        path: LevyPath {
                            times: l_times,
                            values: l_values,
                            jumps: Vec::new(),
                            lifetime: f64::INFINITY,
                            killed: false,
                        },
                        event: None,
                    });
                    gens.last_mut().unwrap().chi = xi_birth;
                    break 'spine;
                }
                if tl >= next_event {
                    match self.event(self.big_l - xi_abs, rng) {
                        Some(j) => {
                            let atom = &self.atoms[j];
                            let pre_idx_local = l_values.len() - 1;
                            let pre_idx_global = g_values.len() - 1;
                            g_jumps.push(Jump {
                                time: t_abs,
                                y0: atom.y0,
                                offspring: atom.dangles.clone(),
                                grid_index: pre_idx_global,
                            });
                            l_times.push(tl);
                            l_values.push(f64::NEG_INFINITY);
                            let mut offspring = Vec::with_capacity(1 + atom.dangles.len());
                            offspring.push(atom.y0);
                            offspring.extend_from_slice(&atom.dangles);
                            let path = LevyPath {
                                times: l_times,
                                values: l_values,
                                jumps: vec![Jump {
                                    time: tl,
                                    y0: f64::NEG_INFINITY,
                                    offspring,
                                    grid_index: pre_idx_local,
                                }],
                                lifetime: tl,
                                killed: true,
                            };
                            gens.push(SpineGen {
                                chi: xi_birth,
                                birth_abs,
                                path,
                                event: Some((tl, pre_idx_local, atom.y0, atom.dangles.clone())),
                            });
                            xi_abs += atom.y0;
                            g_times.push(t_abs);
                            g_values.push(xi_abs);
                            weight_trace
                                .push((t_abs, self.table.r(self.big_l - xi_abs) / self.r_big_l));
                            break; // next generation
                        }
                        None => {
                            next_event = tl + exp_draw(self.lam_major, rng);
                        }
                    }
                }
            }
            if t_abs >= horizon {
                break;
            }
        }

        Ok(RawSpine {
            global: LevyPath {
                times: g_times,
                values: g_values,
                jumps: g_jumps,
                lifetime: f64::INFINITY,
                killed: false,
            },
            gens,
            weight_trace,
            proposals,
            accepts,
            complete,
        })
    }
}

fn exp_draw(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    -rng.gen::<f64>().max(1e-300).ln() / rate
}

/// sup over g >= 0 of R(g - y0) / R(g): 1 for upward displacements; for
/// downward ones a breakpoint scan of the piecewise-linear ratio (the ratio
/// is monotone between knots of either argument and tends to 1 at infinity).
fn ratio_majorant(table: &RenewalTable, y0: f64) -> f64 {
    if y0 >= 0.0 {
        return 1.0;
    }
    let d = -y0;
    let mut best = 1.0f64;
    let mut check = |g: f64| {
        let rg = table.r(g);
        if rg > 0.0 {
            best = best.max(table.r(g + d) / rg);
        }
    };
    check(0.0);
    for &g in &table.grid {
        check(g);
        if g - d >= 0.0 {
            check(g - d);
        }
    }
    if let Some(&end) = table.grid.last() {
        check(end + d);
    }
    best * (1.0 + 1e-12)
}

/// Sample the tilted spine started at type x, conditioned (by the renewal
/// h-transform) to keep its decoration at or below the barrier c at every
/// monitored point, on the window [0, caps.horizon]. Stepping uses the
/// table's dt — the monitoring geometry its R was calibrated on; caps
/// supplies the horizon, jump cutoff, and offspring floor.
pub fn sample_conditioned_spine(
    quad: &CharQuadruplet,
    x: f64,
    c: f64,
    table: &RenewalTable,
    caps: SimCaps,
    rng: &mut ChaCha8Rng,
) -> Result<ConditionedSpine> {
    let sampler = SpineSampler::new(quad, x, c, table, caps)?;
    let raw = sampler.run(caps.horizon, None, rng)?;
    let dec = lamperti_forward(&raw.global, quad.alpha, x);
    let scale_t = x.powf(quad.alpha);
    let floor_abs = caps.offspring_floor * x;
    let mut atoms = Vec::new();
    let mut atom_sim_times = Vec::new();
    for j in &raw.global.jumps {
        let xi_pre = raw.global.values[j.grid_index];
        let pos = scale_t * dec.time_change[j.grid_index].1;
        for &yl in &j.offspring {
            let child = x * (xi_pre + yl).exp();
            if child > floor_abs {
                atoms.push((pos, child));
                atom_sim_times.push(j.time);
            }
        }
    }
    Ok(ConditionedSpine {
        dec,
        atoms: ReproductionAtoms { atoms },
        atom_sim_times,
        weight_trace: raw.weight_trace,
        acceptance: if raw.proposals > 0 {
            raw.accepts as f64 / raw.proposals as f64
        } else {
            1.0
        },
    })
}

// ---------------------------------------------------------------------------
// Marked trees: spinal construction and size-biased growth
// ---------------------------------------------------------------------------

/// Which law a marked-tree sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawTag {
    SizeBiased,
    SpinalConstruction,
}

/// One spine node of a marked tree.
#[derive(Debug, Clone)]
pub struct SpineNode {
    pub generation: usize,
    pub label: Ulam,
    pub chi: f64,
}

/// A genealogical sample with a distinguished leaf.
#[derive(Debug, Clone)]
pub struct MarkedTreeSample {
    pub tree: GenealogySample,
    /// The marked leaf; None for a zero-mass size-biased draw.
    pub mark: Option<Ulam>,
    /// Root-to-mark lineage (the spine).
    pub spine: Vec<SpineNode>,
    /// Relative density of the sample against the marked law: 1 for the
    /// spinal construction (a direct sample), D_n^c / (x^omega R(log c/x))
    /// for size-biased growth (an importance sample), 0 for zero mass.
    pub importance_weight: f64,
    pub law_tag: LawTag,
    /// False when the spine did not reach the requested depth (horizon
    /// truncation, or zero spreading mass on the size-biased side).
    pub complete: bool,
}

/// Spinal construction of a marked tree to depth `n_limit`: a conditioned
/// spine provides the marked lineage, and every non-spine child of each
/// spine reproduction event grows an independent, unconditioned subtree with
/// the same caps, floor, and barrier truncation as ordinary growth. The mark
/// sits at the spine extremity.
pub fn sample_spinal_tree(
    quad: &CharQuadruplet,
    x: f64,
    c: f64,
    n_limit: usize,
    cfg: GrowthConfig,
    table: &RenewalTable,
    rng: &mut ChaCha8Rng,
) -> Result<MarkedTreeSample> {
    let sampler = SpineSampler::new(quad, x, c, table, cfg.caps)?;
    let raw = sampler.run(cfg.caps.horizon, Some(n_limit), rng)?;

    let mut individuals: BTreeMap<Ulam, Individual> = BTreeMap::new();
    let mut truncation_marks: Vec<Ulam> = Vec::new();
    let mut spine_nodes: Vec<SpineNode> = Vec::new();
    let mut label = Ulam::root();
    let mut attach = 0.0;
    let mut population = 0usize;

    for (k, gen) in raw.gens.iter().enumerate() {
        let chi = x * gen.chi.exp();
        let dec = lamperti_forward(&gen.path, quad.alpha, chi);
        let scale_t = chi.powf(quad.alpha);
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut sim_times: Vec<f64> = Vec::new();
        let mut child_types: Vec<f64> = Vec::new();
        if let Some((t_local, pre_idx, spine_disp, dangles)) = &gen.event {
            let xi_pre = gen.path.values[*pre_idx];
            let pos = scale_t * dec.time_change[*pre_idx].1;
            let floor_abs = chi * cfg.caps.offspring_floor.max(cfg.stop.type_floor / chi);
            // The spine child is part of the conditioned law and is kept
            // unconditionally; dangling children obey the ordinary floor.
            let spine_child = chi * (xi_pre + spine_disp).exp();
            atoms.push((pos, spine_child));
            sim_times.push(*t_local);
            child_types.push(spine_child);
            for &y in dangles {
                let child = chi * (xi_pre + y).exp();
                if child > floor_abs {
                    atoms.push((pos, child));
                    sim_times.push(*t_local);
                    child_types.push(child);
                }
            }
        }
        spine_nodes.push(SpineNode {
            generation: k,
            label: label.clone(),
            chi,
        });
        individuals.insert(
            label.clone(),
            Individual {
                chi,
                birth_time: gen.birth_abs,
                attach,
                branch: decimate_path(&dec, cfg.decimate),
                atoms: ReproductionAtoms {
                    atoms: atoms.clone(),
                },
                atom_sim_times: sim_times.clone(),
                exp_clock: rng.gen::<f64>().max(1e-300).ln().abs(),
                levy: if cfg.keep_levy {
                    Some(gen.path.clone())
                } else {
                    None
                },
                cut: None,
            },
        );
        population += 1;

        // Children: index 1 continues the spine, the rest dangle.
        for (i, &child_type) in child_types.iter().enumerate() {
            let child_label = label.child(i as u32 + 1);
            let birth = gen.birth_abs + sim_times[i];
            let child_attach = atoms[i].0;
            if i == 0 {
                attach = child_attach;
                continue; // the next spine generation (or the marked leaf)
            }
            let depth = k + 1;
            let sub_cfg = GrowthConfig {
                stop: StopRule {
                    n_max: n_limit.saturating_sub(depth),
                    barrier: Some(c),
                    ..cfg.stop
                },
                ..cfg
            };
            if child_type > c {
                // Born above the barrier: ordinary growth would cut the
                // branch at its first point; record the equivalent stub.
                individuals.insert(
                    child_label.clone(),
                    Individual {
                        chi: child_type,
                        birth_time: birth,
                        attach: child_attach,
                        branch: DecorationPath {
                            times: vec![0.0],
                            values: vec![child_type],
                            z: 0.0,
                            time_change: vec![(0.0, 0.0)],
                            truncated: false,
                        },
                        atoms: ReproductionAtoms::default(),
                        atom_sim_times: Vec::new(),
                        exp_clock: rng.gen::<f64>().max(1e-300).ln().abs(),
                        levy: None,
                        cut: Some(0.0),
                    },
                );
                truncation_marks.push(child_label);
                population += 1;
                continue;
            }
            let sub = grow_family(quad, child_type, sub_cfg, rng)?;
            population += sub.individuals.len();
            if population > cfg.stop.pop_cap {
                return Err(SsmtError::BudgetExceeded(cfg.stop.pop_cap));
            }
            for (sub_label, sub_ind) in sub.individuals {
                let mut grafted = Ulam(Vec::with_capacity(
                    child_label.0.len() + sub_label.0.len(),
                ));
                grafted.0.extend_from_slice(&child_label.0);
                grafted.0.extend_from_slice(&sub_label.0);
                let mut ind = sub_ind;
                ind.birth_time += birth;
                if sub_label.0.is_empty() {
                    ind.attach = child_attach;
                }
                individuals.insert(grafted, ind);
            }
            for sub_mark in sub.truncation_marks {
                let mut grafted = Ulam(child_label.0.clone());
                grafted.0.extend_from_slice(&sub_mark.0);
                truncation_marks.push(grafted);
            }
        }
        if gen.event.is_some() {
            label = label.child(1);
        }
    }

    // The marked leaf at depth n_limit (a generation-cap stub, exactly as
    // ordinary growth records depth-capped children).
    let mark = if raw.complete {
        if let Some(last) = raw.gens.last() {
            if let Some((_, pre_idx, spine_disp, _)) = &last.event {
                let chi_parent = x * last.chi.exp();
                let leaf_chi = chi_parent * (last.path.values[*pre_idx] + spine_disp).exp();
                let birth = last.birth_abs + last.path.lifetime;
                spine_nodes.push(SpineNode {
                    generation: raw.gens.len(),
                    label: label.clone(),
                    chi: leaf_chi,
                });
                individuals.insert(
                    label.clone(),
                    Individual {
                        chi: leaf_chi,
                        birth_time: birth,
                        attach,
                        branch: DecorationPath {
                            times: vec![0.0],
                            values: vec![leaf_chi],
                            z: 0.0,
                            time_change: vec![(0.0, 0.0)],
                            truncated: false,
                        },
                        atoms: ReproductionAtoms::default(),
                        atom_sim_times: Vec::new(),
                        exp_clock: rng.gen::<f64>().max(1e-300).ln().abs(),
                        levy: None,
                        cut: None,
                    },
                );
            }
        }
        Some(label)
    } else {
        // Horizon-truncated ("non-dead") spine: mark the spine extremity.
        Some(label)
    };

    Ok(MarkedTreeSample {
        tree: GenealogySample {
            individuals,
            root_type: x,
            stop: StopRule {
                n_max: n_limit,
                barrier: Some(c),
                ..cfg.stop
            },
            truncation_marks,
        },
        mark,
        spine: spine_nodes,
        importance_weight: 1.0,
        law_tag: LawTag::SpinalConstruction,
        complete: raw.complete,
    })
}

/// Size-biased marked tree at depth `n_limit`: ordinary barrier-truncated
/// growth, importance weight D_n^c / (x^omega R(log c/x)), and the mark
/// drawn by descending the finite-depth spreading masses (each child chosen
/// with probability m_child / m_parent). Zero spreading mass is recorded as
/// a weight-0 sample with no mark.
pub fn sample_size_biased_marked(
    quad: &CharQuadruplet,
    x: f64,
    c: f64,
    n_limit: usize,
    cfg: GrowthConfig,
    table: &RenewalTable,
    rng: &mut ChaCha8Rng,
) -> Result<MarkedTreeSample> {
    let cfg = GrowthConfig {
        stop: StopRule {
            n_max: n_limit,
            barrier: Some(c),
            ..cfg.stop
        },
        ..cfg
    };
    let tree = grow_family(quad, x, cfg, rng)?;
    let masses = harmonic_measure_truncated(&tree, c, n_limit, table)?;
    let denom = x.powf(table.omega) * table.r((c / x).ln());
    let weight = masses.total / denom;
    if !(masses.total > 0.0) {
        let root = SpineNode {
            generation: 0,
            label: Ulam::root(),
            chi: x,
        };
        return Ok(MarkedTreeSample {
            tree,
            mark: None,
            spine: vec![root],
            importance_weight: 0.0,
            law_tag: LawTag::SizeBiased,
            complete: false,
        });
    }
    let mass_of: BTreeMap<Ulam, f64> = masses.atoms.iter().cloned().collect();
    let mut cur = Ulam::root();
    let mut spine = vec![SpineNode {
        generation: 0,
        label: cur.clone(),
        chi: tree.individuals[&cur].chi,
    }];
    let mut complete = true;
    for _ in 0..n_limit {
        let mut children: Vec<(Ulam, f64)> = Vec::new();
        let mut k = 1u32;
        while let Some(m) = mass_of.get(&cur.child(k)) {
            if *m > 0.0 {
                children.push((cur.child(k), *m));
            }
            k += 1;
        }
        let total: f64 = children.iter().map(|(_, m)| m).sum();
        if !(total > 0.0) {
            complete = false;
            break;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = children.last().unwrap().0.clone();
        for (label, m) in &children {
            u -= m;
            if u <= 0.0 {
                chosen = label.clone();
                break;
            }
        }
        cur = chosen;
        spine.push(SpineNode {
            generation: cur.generation(),
            label: cur.clone(),
            chi: tree.individuals[&cur].chi,
        });
    }
    Ok(MarkedTreeSample {
        tree,
        mark: complete.then(|| cur.clone()),
        spine,
        importance_weight: weight,
        law_tag: LawTag::SizeBiased,
        complete,
    })
}

// ---------------------------------------------------------------------------
// Equivalence harness
// ---------------------------------------------------------------------------

/// One statistic of the equivalence comparison.
#[derive(Debug, Clone)]
pub struct EquivalenceStat {
    pub name: String,
    pub ks: f64,
    pub p_value: f64,
    pub replicas: usize,
    pub pass: bool,
}

/// Weighted two-sample comparison of the spinal construction against
/// size-biased growth.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub stats: Vec<EquivalenceStat>,
    pub pass: bool,
    pub replicas: usize,
    pub n_limit: usize,
    /// Spine samples that did not reach the requested depth, per side;
    /// excluded from the statistics.
    pub excluded_spinal: usize,
    pub excluded_marked: usize,
    pub exclusion_rate: f64,
}

impl EquivalenceReport {
    pub fn to_json(&self) -> String {
        let stats: Vec<serde_json::Value> = self
            .stats
            .iter()
            .map(|s| {
                serde_json::json!({
                    "name": s.name,
                    "ks": s.ks,
                    "p_value": s.p_value,
                    "replicas": s.replicas,
                    "pass": s.pass,
                })
            })
            .collect();
        serde_json::json!({
            "stats": stats,
            "pass": self.pass,
            "replicas": self.replicas,
            "n_limit": self.n_limit,
            "excluded_spinal": self.excluded_spinal,
            "excluded_marked": self.excluded_marked,
            "exclusion_rate": self.exclusion_rate,
        })
        .to_string()
    }
}

/// Statistics compared between the two marked-tree laws: spine types at the
/// first generations, the number of reproduction-atom entries along the
/// spine up to the comparison depth, and the total gamma-length of the tree
/// at gamma = omega + 0.3. Boundary generations are excluded: statistics
/// stop at n_limit - 2.
fn marked_statistics(
    sample: &MarkedTreeSample,
    gens: &[usize],
    atom_cap: usize,
    gamma: f64,
) -> Option<Vec<f64>> {
    if !sample.complete {
        return None;
    }
    let mark = sample.mark.as_ref()?;
    let mut out = Vec::with_capacity(gens.len() + 2);
    for &g in gens {
        let prefix = Ulam(mark.0[..g].to_vec());
        out.push(sample.tree.individuals.get(&prefix)?.chi);
    }
    let mut atom_count = 0.0;
    for k in 0..atom_cap {
        let prefix = Ulam(mark.0[..k].to_vec());
        atom_count += sample.tree.individuals.get(&prefix)?.atoms.atoms.len() as f64;
    }
    out.push(atom_count);
    let total = length_measure(&sample.tree, gamma, None).ok()?.total;
    out.push(total);
    if out.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(out)
}

fn stat_names(gens: &[usize], atom_cap: usize, gamma: f64) -> Vec<String> {
    let mut names: Vec<String> = gens.iter().map(|g| format!("spine_type_gen{g}")).collect();
    names.push(format!("spine_atom_entries_to_gen{atom_cap}"));
    names.push(format!("gamma_length_{gamma:.3}"));
    names
}

/// Equivalence test with separate tables for the two sides (the perturbation
/// control replaces the spinal side's renewal table while the size-biased
/// side keeps the estimated one).
#[allow(clippy::too_many_arguments)]
pub fn spinal_equivalence_with_tables(
    quad: &CharQuadruplet,
    x: f64,
    c: f64,
    replicas: usize,
    n_limit: usize,
    table_spinal: &RenewalTable,
    table_marked: &RenewalTable,
    rng: &mut ChaCha8Rng,
) -> Result<EquivalenceReport> {
    let cfg = GrowthConfig {
        stop: StopRule {
            n_max: n_limit,
            type_floor: 1e-9,
            barrier: Some(c),
            pop_cap: 2_000_000,
            birth_horizon: None,
        },
        caps: SimCaps {
            horizon: 60.0,
            dt: table_marked.dt,
            jump_cutoff: 1e-3,
            offspring_floor: 1e-9,
        },
        decimate: 1,
        keep_levy: false,
    };
    let compare_to = n_limit.saturating_sub(2).max(1);
    let gens: Vec<usize> = (1..=3).filter(|g| *g <= compare_to).collect();
    let gamma = table_marked.omega + 0.3;

    let n_stats = gens.len() + 2;
    let mut spinal: Vec<Vec<f64>> = vec![Vec::new(); n_stats];
    let mut spinal_w: Vec<f64> = Vec::new();
    let mut marked: Vec<Vec<f64>> = vec![Vec::new(); n_stats];
    let mut marked_w: Vec<f64> = Vec::new();
    let mut excluded_spinal = 0usize;
    let mut excluded_marked = 0usize;

    for _ in 0..replicas {
        let s = sample_spinal_tree(quad, x, c, n_limit, cfg, table_spinal, rng)?;
        match marked_statistics(&s, &gens, compare_to, gamma) {
            Some(vals) => {
                for (col, v) in spinal.iter_mut().zip(&vals) {
                    col.push(*v);
                }
                spinal_w.push(1.0);
            }
            None => excluded_spinal += 1,
        }
        let m = sample_size_biased_marked(quad, x, c, n_limit, cfg, table_marked, rng)?;
        if m.importance_weight > 0.0 {
            match marked_statistics(&m, &gens, compare_to, gamma) {
                Some(vals) => {
                    for (col, v) in marked.iter_mut().zip(&vals) {
                        col.push(*v);
                    }
                    marked_w.push(m.importance_weight);
                }
                None => excluded_marked += 1,
            }
        } else {
            excluded_marked += 1;
        }
    }

    let names = stat_names(&gens, compare_to, gamma);
    let threshold = 0.01 / n_stats as f64;
    let mut stats = Vec::with_capacity(n_stats);
    let mut pass = true;
    for i in 0..n_stats {
        let (ks, p) = ks_permutation_pvalue(
            &spinal[i],
            &spinal_w,
            &marked[i],
            &marked_w,
            499,
            rng,
        );
        let ok = p > threshold;
        pass &= ok;
        stats.push(EquivalenceStat {
            name: names[i].clone(),
            ks,
            p_value: p,
            replicas,
            pass: ok,
        });
    }
    let exclusion_rate = (excluded_spinal + excluded_marked) as f64 / (2 * replicas) as f64;
    Ok(EquivalenceReport {
        stats,
        pass,
        replicas,
        n_limit,
        excluded_spinal,
        excluded_marked,
        exclusion_rate,
    })
}

/// Two-sample check that the spinal construction and size-biased growth
/// produce the same marked-tree law: weighted KS distance with a permutation
/// p-value per statistic, passing when every Bonferroni-adjusted p exceeds
/// 0.01.
pub fn spinal_equivalence_test(
    quad: &CharQuadruplet,
    x: f64,
    c: f64,
    replicas: usize,
    n_limit: usize,
    table: &RenewalTable,
    rng: &mut ChaCha8Rng,
) -> Result<EquivalenceReport> {
    spinal_equivalence_with_tables(quad, x, c, replicas, n_limit, table, table, rng)
}
