//! Genealogy growth over the Ulam tree, barrier truncation, gluing into a
//! decorated metric tree, geometric statistics (height, diameter, box
//! dimension), and the three subcritical couplings.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SsmtError};
use crate::levy_sim::{
    lamperti_forward, sample_levy_path_stopped, DecorationPath, LevyPath, ReproductionAtoms,
    SimCaps,
};
use crate::numeric::{interp, linear_fit};
use crate::quadruplet::CharQuadruplet;

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// A node of the Ulam tree: a finite sequence of positive child indices.
/// The root is the empty sequence, displayed as ".".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ulam(pub Vec<u32>);

impl Ulam {
    pub fn root() -> Self {
        Ulam(Vec::new())
    }

    pub fn child(&self, i: u32) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        Ulam(v)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Ulam(self.0[..self.0.len() - 1].to_vec()).into()
        }
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "." {
            return Ok(Ulam::root());
        }
        let mut v = Vec::new();
        for part in s.split('.') {
            let k: u32 = part
                .parse()
                .map_err(|_| SsmtError::Parse(format!("bad Ulam label component {part:?}")))?;
            if k == 0 {
                return Err(SsmtError::Parse("Ulam indices are 1-based".into()));
            }
            v.push(k);
        }
        Ok(Ulam(v))
    }
}

impl fmt::Display for Ulam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, ".");
        }
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

// ---------------------------------------------------------------------------
// Family growth
// ---------------------------------------------------------------------------

/// One individual of a grown family.
#[derive(Debug, Clone)]
pub struct Individual {
    /// Start type chi(u).
    pub chi: f64,
    /// Birth time in simulation-time units: the sum of the atom times of
    /// the ancestors, b(u) = sum_k s_{u_k}.
    pub birth_time: f64,
    /// Intrinsic attach position on the parent branch (0 for the root).
    pub attach: f64,
    pub branch: DecorationPath,
    pub atoms: ReproductionAtoms,
    /// Simulation time of each reproduction atom (parallel to atoms).
    pub atom_sim_times: Vec<f64>,
    /// Standard exponential mark shared by all killing couplings.
    pub exp_clock: f64,
    /// Raw path, retained only when requested (drift coupling needs it).
    pub levy: Option<LevyPath>,
    /// Intrinsic position where the barrier cut this branch, if it did.
    pub cut: Option<f64>,
}

/// Stopping rules for family growth.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub n_max: usize,
    /// Individuals born with type below this become leaves.
    pub type_floor: f64,
    /// Barrier level: lineages are cut at the first decoration exceedance.
    pub barrier: Option<f64>,
    /// Hard cap on the population.
    pub pop_cap: usize,
    /// Individuals born after this simulation time become leaves (useful
    /// for fixed-time population slices).
    pub birth_horizon: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            n_max: 20,
            type_floor: 1e-4,
            barrier: None,
            pop_cap: 10_000_000,
            birth_horizon: None,
        }
    }
}

/// Growth configuration: stopping rules plus per-branch simulation caps.
#[derive(Debug, Clone, Copy)]
pub struct GrowthConfig {
    pub stop: StopRule,
    pub caps: SimCaps,
    /// Keep every k-th decoration grid point (plus jump pairs) in stored
    /// branches; 1 keeps everything.
    pub decimate: usize,
    pub keep_levy: bool,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            stop: StopRule::default(),
            caps: SimCaps::default(),
            decimate: 1,
            keep_levy: false,
        }
    }
}

/// A grown decorated-reproduction family.
#[derive(Debug, Clone)]
pub struct GenealogySample {
    pub individuals: BTreeMap<Ulam, Individual>,
    pub root_type: f64,
    pub stop: StopRule,
    /// Labels whose branch was cut by the barrier.
    pub truncation_marks: Vec<Ulam>,
}

impl GenealogySample {
    /// Sum of chi(u)^gamma over generation n (the additive-martingale
    /// summand when gamma = omega_minus).
    pub fn generation_weight(&self, n: usize, gamma: f64) -> f64 {
        self.individuals
            .iter()
            .filter(|(u, _)| u.generation() == n)
            .map(|(_, ind)| ind.chi.powf(gamma))
            .sum()
    }

    pub fn population(&self) -> usize {
        self.individuals.len()
    }
}

pub(crate) fn decimate_path(dec: &DecorationPath, keep: usize) -> DecorationPath {
    if keep <= 1 || dec.times.len() <= 2 {
        return dec.clone();
    }
    let n = dec.times.len();
    let mut idx: Vec<usize> = Vec::with_capacity(n / keep + 8);
    for i in 0..n {
        let is_jump_pair = (i > 0 && dec.times[i] == dec.times[i - 1])
            || (i + 1 < n && dec.times[i + 1] == dec.times[i]);
        if i == 0 || i + 1 == n || is_jump_pair || i % keep == 0 {
            idx.push(i);
        }
    }
    DecorationPath {
        times: idx.iter().map(|&i| dec.times[i]).collect(),
        values: idx.iter().map(|&i| dec.values[i]).collect(),
        z: dec.z,
        time_change: idx.iter().map(|&i| dec.time_change[i]).collect(),
        truncated: dec.truncated,
    }
}

/// Grow the decorated-reproduction family from start type x, breadth-first,
/// with generation cap, type floor, and optional barrier truncation.
/// Individuals below the type floor become leaves (the omitted subtrees are
/// null families contributing vanishing mass to tracked statistics).
pub fn grow_family(
    quad: &CharQuadruplet,
    x: f64,
    cfg: GrowthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GenealogySample> {
    if let Some(c) = cfg.stop.barrier {
        if c < x {
            return Err(SsmtError::BarrierBelowRoot { barrier: c, root: x });
        }
    }
    let mut individuals: BTreeMap<Ulam, Individual> = BTreeMap::new();
    let mut marks = Vec::new();
    let mut queue: std::collections::VecDeque<(Ulam, f64, f64, f64)> =
        std::collections::VecDeque::new();
    queue.push_back((Ulam::root(), x, 0.0, 0.0));
    while let Some((label, chi, birth_time, attach)) = queue.pop_front() {
        if individuals.len() >= cfg.stop.pop_cap {
            return Err(SsmtError::BudgetExceeded(cfg.stop.pop_cap));
        }
        // Floor leaves, generation-cap leaves, and individuals born beyond
        // the observation horizon get no branch of their own.
        let is_floor_leaf = chi < cfg.stop.type_floor;
        let at_gen_cap = label.generation() >= cfg.stop.n_max;
        let beyond_horizon = cfg
            .stop
            .birth_horizon
            .map(|h| birth_time > h)
            .unwrap_or(false);
        if is_floor_leaf || at_gen_cap || beyond_horizon {
            individuals.insert(
                label,
                Individual {
                    chi,
                    birth_time,
                    attach,
                    branch: DecorationPath {
                        times: vec![0.0],
                        values: vec![chi],
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
            continue;
        }
        // Per-branch floor: the global type floor expressed relative to chi.
        let mut caps = cfg.caps;
        if cfg.stop.type_floor > 0.0 {
            caps.offspring_floor = caps.offspring_floor.max(cfg.stop.type_floor / chi);
        }
        let stop_below = caps.offspring_floor.max(1e-300).ln();
        let path = sample_levy_path_stopped(
            quad,
            caps.horizon,
            caps.dt,
            caps.jump_cutoff,
            stop_below,
            rng,
        )?;
        let dec = lamperti_forward(&path, quad.alpha, chi);
        // Collect atoms (children above the absolute floor).
        let floor_abs = caps.offspring_floor * chi;
        let scale_t = chi.powf(quad.alpha);
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut sim_times: Vec<f64> = Vec::new();
        for j in &path.jumps {
            let xi_pre = path.values[j.grid_index];
            if xi_pre == f64::NEG_INFINITY {
                continue;
            }
            let pos = scale_t * dec.time_change[j.grid_index].1;
            for &yl in &j.offspring {
                if !yl.is_finite() {
                    continue;
                }
                let child = chi * (xi_pre + yl).exp();
                if child > floor_abs {
                    atoms.push((pos, child));
                    sim_times.push(j.time);
                }
            }
        }
        // Barrier: cut at the first grid exceedance.
        let mut dec = dec;
        let mut cut = None;
        if let Some(c) = cfg.stop.barrier {
            if let Some(i) = dec.values.iter().position(|&v| v > c) {
                let cut_pos = if i == 0 { 0.0 } else { dec.times[i - 1] };
                dec.times.truncate(i.max(1));
                dec.values.truncate(i.max(1));
                dec.time_change.truncate(i.max(1));
                dec.z = cut_pos;
                dec.truncated = false;
                let kept = atoms
                    .iter()
                    .zip(&sim_times)
                    .filter(|((pos, _), _)| *pos <= cut_pos)
                    .map(|((p, y), t)| ((*p, *y), *t))
                    .collect::<Vec<_>>();
                atoms = kept.iter().map(|(a, _)| *a).collect();
                sim_times = kept.iter().map(|(_, t)| *t).collect();
                cut = Some(cut_pos);
                marks.push(label.clone());
            }
        }
        // Enqueue children in atom order (1-based labels).
        for (k, ((_, child_type), st)) in atoms.iter().zip(&sim_times).enumerate() {
            queue.push_back((
                label.child(k as u32 + 1),
                *child_type,
                birth_time + st,
                atoms[k].0,
            ));
        }
        let stored = decimate_path(&dec, cfg.decimate);
        individuals.insert(
            label,
            Individual {
                chi,
                birth_time,
                attach,
                branch: stored,
                atoms: ReproductionAtoms { atoms },
                atom_sim_times: sim_times,
                exp_clock: rng.gen::<f64>().max(1e-300).ln().abs(),
                levy: if cfg.keep_levy { Some(path) } else { None },
                cut,
            },
        );
    }
    Ok(GenealogySample {
        individuals,
        root_type: x,
        stop: cfg.stop,
        truncation_marks: marks,
    })
}

/// Apply (or re-apply) barrier truncation to an already-grown sample:
/// T^c keeps the points whose root path never exceeds decoration c.
/// Idempotent, and monotone in c.
pub fn truncate_at_barrier(sample: &GenealogySample, c: f64) -> Result<GenealogySample> {
    if c < sample.root_type {
        return Err(SsmtError::BarrierBelowRoot {
            barrier: c,
            root: sample.root_type,
        });
    }
    let mut out = GenealogySample {
        individuals: BTreeMap::new(),
        root_type: sample.root_type,
        stop: StopRule {
            barrier: Some(c),
            ..sample.stop
        },
        truncation_marks: Vec::new(),
    };
    // BFS so that removed ancestors prune their descendants.
    let mut removed: std::collections::BTreeSet<Ulam> = Default::default();
    for (label, ind) in &sample.individuals {
        if let Some(p) = label.parent() {
            if removed.contains(&p) {
                removed.insert(label.clone());
                continue;
            }
            if let Some(parent) = out.individuals.get(&p) {
                // Children attached beyond the parent's cut are gone.
                if let Some(cp) = parent.cut {
                    if ind.attach > cp {
                        removed.insert(label.clone());
                        continue;
                    }
                }
            } else {
                removed.insert(label.clone());
                continue;
            }
        }
        let mut ind = ind.clone();
        if let Some(i) = ind.branch.values.iter().position(|&v| v > c) {
            let cut_pos = if i == 0 { 0.0 } else { ind.branch.times[i - 1] };
            ind.branch.times.truncate(i.max(1));
            ind.branch.values.truncate(i.max(1));
            ind.branch.time_change.truncate(i.max(1));
            ind.branch.z = cut_pos;
            ind.branch.truncated = false;
            let kept: Vec<usize> = (0..ind.atoms.atoms.len())
                .filter(|&k| ind.atoms.atoms[k].0 <= cut_pos)
                .collect();
            ind.atoms.atoms = kept.iter().map(|&k| ind.atoms.atoms[k]).collect();
            ind.atom_sim_times = kept.iter().map(|&k| ind.atom_sim_times[k]).collect();
            ind.cut = Some(match ind.cut {
                Some(prev) => prev.min(cut_pos),
                None => cut_pos,
            });
            out.truncation_marks.push(label.clone());
        }
        out.individuals.insert(label.clone(), ind);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Glued metric tree
// ---------------------------------------------------------------------------

/// One branch segment of a glued tree.
#[derive(Debug, Clone)]
pub struct Segment {
    pub label: Ulam,
    pub parent: Option<usize>,
    /// Position along the parent segment where this one attaches.
    pub attach: f64,
    pub length: f64,
    /// Decoration resampled on a uniform grid over [0, length].
    pub decoration: Vec<f64>,
    /// Root distance of the segment's start point.
    pub depth_start: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GlueDiagnostics {
    /// max_u sup |f_u| per generation (null-family decay indicator).
    pub gen_sup_decoration: Vec<f64>,
    /// sup over leaf rays of the tail length sums sum_{n >= k} z, per k.
    pub ray_tail_lengths: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoratedTree {
    pub segments: Vec<Segment>,
    pub leaves: Vec<usize>,
    pub diagnostics: GlueDiagnostics,
}

/// Number of uniform decoration samples stored per glued segment.
const GLUE_SAMPLES: usize = 33;

/// Glue the branches of a sample into a decorated metric tree.
pub fn glue(sample: &GenealogySample) -> DecoratedTree {
    let mut segments: Vec<Segment> = Vec::with_capacity(sample.individuals.len());
    let mut index_of: BTreeMap<&Ulam, usize> = BTreeMap::new();
    for (label, ind) in &sample.individuals {
        let parent_idx = label.parent().and_then(|p| index_of.get(&p).copied());
        let depth_start = match parent_idx {
            Some(pi) => segments[pi].depth_start + ind.attach,
            None => 0.0,
        };
        let decoration = resample_decoration(&ind.branch, GLUE_SAMPLES);
        let idx = segments.len();
        segments.push(Segment {
            label: label.clone(),
            parent: parent_idx,
            attach: ind.attach,
            length: ind.branch.z,
            decoration,
            depth_start,
        });
        index_of.insert(label, idx);
    }
    let leaves = leaf_indices(&segments);
    let diagnostics = compute_diagnostics(&segments, &leaves);
    DecoratedTree {
        segments,
        leaves,
        diagnostics,
    }
}

pub(crate) fn leaf_indices(segments: &[Segment]) -> Vec<usize> {
    let mut has_child = vec![false; segments.len()];
    for seg in segments {
        if let Some(p) = seg.parent {
            has_child[p] = true;
        }
    }
    (0..segments.len()).filter(|&i| !has_child[i]).collect()
}

/// Null-family diagnostics: generation-wise sup decoration and, per
/// generation k, the sup over leaf rays of the tail length sums from k on.
pub(crate) fn compute_diagnostics(segments: &[Segment], leaves: &[usize]) -> GlueDiagnostics {
    let mut gen_sup: Vec<f64> = Vec::new();
    for seg in segments {
        let g = seg.label.generation();
        if gen_sup.len() <= g {
            gen_sup.resize(g + 1, 0.0);
        }
        let sup = seg.decoration.iter().copied().fold(0.0f64, f64::max);
        gen_sup[g] = gen_sup[g].max(sup);
    }
    let mut ray_tails: Vec<f64> = Vec::new();
    for &leaf in leaves {
        let mut chain = Vec::new();
        let mut cur = Some(leaf);
        while let Some(i) = cur {
            chain.push(segments[i].length);
            cur = segments[i].parent;
        }
        chain.reverse();
        let mut suffix = vec![0.0; chain.len() + 1];
        for k in (0..chain.len()).rev() {
            suffix[k] = suffix[k + 1] + chain[k];
        }
        if ray_tails.len() < chain.len() {
            ray_tails.resize(chain.len(), 0.0);
        }
        for k in 0..chain.len() {
            ray_tails[k] = ray_tails[k].max(suffix[k]);
        }
    }
    GlueDiagnostics {
        gen_sup_decoration: gen_sup,
        ray_tail_lengths: ray_tails,
    }
}

fn resample_decoration(dec: &DecorationPath, n: usize) -> Vec<f64> {
    if dec.times.len() <= 1 || dec.z <= 0.0 {
        return vec![dec.values.first().copied().unwrap_or(0.0)];
    }
    let m = n.max(2);
    (0..m)
        .map(|k| {
            let s = dec.z * k as f64 / (m - 1) as f64;
            interp(&dec.times, &dec.values, s)
        })
        .collect()
}

impl DecoratedTree {
    /// Root distance of the end point of segment i.
    pub fn end_depth(&self, i: usize) -> f64 {
        self.segments[i].depth_start + self.segments[i].length
    }

    fn chain(&self, i: usize) -> Vec<usize> {
        let mut c = Vec::new();
        let mut cur = Some(i);
        while let Some(k) = cur {
            c.push(k);
            cur = self.segments[k].parent;
        }
        c.reverse();
        c
    }

    /// Metric distance between the end points of segments i and j.
    pub fn end_distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let ci = self.chain(i);
        let cj = self.chain(j);
        let mut l = 0;
        while l < ci.len() && l < cj.len() && ci[l] == cj[l] {
            l += 1;
        }
        // l >= 1 always (shared root segment).
        let k = ci[l - 1];
        let ai = if l < ci.len() {
            self.segments[ci[l]].attach
        } else {
            self.segments[i].length
        };
        let aj = if l < cj.len() {
            self.segments[cj[l]].attach
        } else {
            self.segments[j].length
        };
        let meet_depth = self.segments[k].depth_start + ai.min(aj);
        self.end_depth(i) + self.end_depth(j) - 2.0 * meet_depth
    }

    /// Total length of the tree (sum of segment lengths).
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }
}

/// Height (max root distance) and exact two-sweep diameter.
pub fn height_diameter(tree: &DecoratedTree) -> (f64, f64) {
    let n = tree.segments.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut height = 0.0f64;
    let mut far = 0usize;
    for i in 0..n {
        let d = tree.end_depth(i);
        if d > height {
            height = d;
            far = i;
        }
    }
    // Second sweep from the farthest end point.
    let mut diameter = 0.0f64;
    for i in 0..n {
        diameter = diameter.max(tree.end_distance(far, i));
    }
    // The root itself is a candidate endpoint.
    diameter = diameter.max(tree.end_depth(far));
    (height, diameter)
}

/// Box-counting dimension estimate of the leaf set: greedy farthest-point
/// epsilon-nets at each scale, least-squares slope of log N(eps) against
/// log(1/eps).
pub fn box_dimension_estimate(
    tree: &DecoratedTree,
    scales: &[f64],
    leaf_sample: usize,
) -> Result<(f64, f64)> {
    if scales.len() < 4 {
        return Err(SsmtError::DegenerateScales(format!(
            "need at least 4 scales, got {}",
            scales.len()
        )));
    }
    let lo = scales.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().cloned().fold(0.0f64, f64::max);
    if !(lo > 0.0) || hi / lo < 10f64.powf(1.5) {
        return Err(SsmtError::DegenerateScales(format!(
            "scales must span 1.5 decades, got [{lo}, {hi}]"
        )));
    }
    let mut pts: Vec<usize> = tree.leaves.clone();
    if pts.len() > leaf_sample {
        let stride = pts.len() as f64 / leaf_sample as f64;
        pts = (0..leaf_sample)
            .map(|k| tree.leaves[(k as f64 * stride) as usize])
            .collect();
    }
    let radii = greedy_net_radii(tree, &pts);
    let mut xs = Vec::with_capacity(scales.len());
    let mut ys = Vec::with_capacity(scales.len());
    for &eps in scales {
        let n = radii.iter().filter(|&&r| r >= eps).count().max(1);
        xs.push((1.0 / eps).ln());
        ys.push((n as f64).ln());
    }
    let fit = linear_fit(&xs, &ys)?;
    Ok((fit.slope, fit.slope_stderr))
}

/// Insertion radii of the greedy farthest-point permutation: radii[0] = inf,
/// radii[k] = distance from the k-th chosen point to the first k.
/// N(eps) = #{k : radii[k] >= eps} is a 2-approximate covering number.
fn greedy_net_radii(tree: &DecoratedTree, pts: &[usize]) -> Vec<f64> {
    let m = pts.len();
    if m == 0 {
        return vec![];
    }
    let mut mind = vec![f64::INFINITY; m];
    let mut chosen = vec![false; m];
    let mut radii = Vec::with_capacity(m);
    let mut cur = 0usize;
    radii.push(f64::INFINITY);
    chosen[0] = true;
    for _ in 1..m {
        let mut best = 0usize;
        let mut bestd = -1.0;
        for i in 0..m {
            if chosen[i] {
                continue;
            }
            let d = tree.end_distance(pts[cur], pts[i]);
            if d < mind[i] {
                mind[i] = d;
            }
            if mind[i] > bestd {
                bestd = mind[i];
                best = i;
            }
        }
        if bestd <= 0.0 {
            break;
        }
        radii.push(bestd);
        chosen[best] = true;
        cur = best;
    }
    radii
}

/// Synthetic dyadic midpoint-splitting tree: generation-k segments have
/// length 2^{-(k+1)} and split in two at their ends. The leaf set has box
/// dimension exactly 1.
pub fn synthetic_dyadic_tree(depth: usize) -> DecoratedTree {
    let mut segments = Vec::new();
    segments.push(Segment {
        label: Ulam::root(),
        parent: None,
        attach: 0.0,
        length: 0.5,
        decoration: vec![1.0, 1.0],
        depth_start: 0.0,
    });
    let mut frontier = vec![0usize];
    for g in 1..=depth {
        let len = 0.5f64.powi(g as i32 + 1);
        let mut next = Vec::new();
        for &p in &frontier {
            for k in 1..=2u32 {
                let idx = segments.len();
                let parent_len = segments[p].length;
                let depth_start = segments[p].depth_start + parent_len;
                segments.push(Segment {
                    label: segments[p].label.child(k),
                    parent: Some(p),
                    attach: parent_len,
                    length: len,
                    decoration: vec![1.0, 1.0],
                    depth_start,
                });
                next.push(idx);
            }
        }
        frontier = next;
    }
    let mut has_child = vec![false; segments.len()];
    for s in &segments {
        if let Some(p) = s.parent {
            has_child[p] = true;
        }
    }
    let leaves = (0..segments.len()).filter(|&i| !has_child[i]).collect();
    DecoratedTree {
        segments,
        leaves,
        diagnostics: GlueDiagnostics::default(),
    }
}

// ---------------------------------------------------------------------------
// Subcritical couplings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// xi -> xi - eps t on every branch (requires retained paths).
    Drift,
    /// Kill each branch at an independent exponential(eps) clock.
    Killing,
    /// Multiply every child type by e^{-eps}.
    Reproduction,
}

#[derive(Debug, Clone, Default)]
pub struct ProjectionReport {
    /// Coupled / original branch length per retained individual.
    pub length_ratios: Vec<f64>,
    pub lipschitz_checked: usize,
    pub lipschitz_violations: usize,
    /// Individuals removed by the coupling.
    pub removed: usize,
}

/// Couple a grown sample to its eps-subcritical counterpart. The coupled
/// sample lives on the same randomness and is pointwise dominated: branch
/// lengths shrink, child types never grow, and the point projection onto
/// the coupled tree is 1-Lipschitz (verified on sampled end-point pairs).
pub fn couple_subcritical(
    sample: &GenealogySample,
    quad: &CharQuadruplet,
    mode: CouplingMode,
    eps: f64,
) -> Result<(GenealogySample, ProjectionReport)> {
    assert!(eps >= 0.0, "eps must be nonnegative");
    let mut out = GenealogySample {
        individuals: BTreeMap::new(),
        root_type: sample.root_type,
        stop: sample.stop,
        truncation_marks: sample.truncation_marks.clone(),
    };
    let mut report = ProjectionReport::default();
    let alpha = quad.alpha;
    // New types propagate parent -> child, so BTreeMap iteration order
    // (parents before children) is enough.
    let mut new_type: BTreeMap<Ulam, f64> = BTreeMap::new();
    new_type.insert(Ulam::root(), sample.root_type);
    for (label, ind) in &sample.individuals {
        let Some(&chi_new) = new_type.get(label) else {
            report.removed += 1;
            continue;
        };
        let mut ind_new = ind.clone();
        let scale = chi_new / ind.chi;
        match mode {
            CouplingMode::Reproduction => {
                // Same driving path, rescaled start type: decoration scales
                // by `scale`, intrinsic positions by scale^alpha. Child
                // types pick up one extra factor e^{-eps}.
                rescale_individual(&mut ind_new, scale, alpha);
                for (k, atom) in ind.atoms.atoms.iter().enumerate() {
                    let y_new = atom.1 * scale * (-eps).exp();
                    ind_new.atoms.atoms[k].1 = y_new;
                    new_type.insert(label.child(k as u32 + 1), y_new);
                }
            }
            CouplingMode::Killing => {
                rescale_individual(&mut ind_new, scale, alpha);
                if eps > 0.0 {
                    let kill_t = ind.exp_clock / eps;
                    truncate_at_sim_time(&mut ind_new, kill_t, chi_new, alpha);
                }
                for (k, atom) in ind_new.atoms.atoms.iter().enumerate() {
                    new_type.insert(label.child(k as u32 + 1), atom.1);
                }
            }
            CouplingMode::Drift if ind.branch.z == 0.0 && ind.atoms.atoms.is_empty() => {
                // Leaf without a simulated branch: only the start type
                // contracts (set by the parent's rebuild).
                ind_new.chi = chi_new;
                ind_new.branch.values = vec![chi_new];
            }
            CouplingMode::Drift => {
                let Some(path) = &ind.levy else {
                    return Err(SsmtError::MissingLevyPath);
                };
                let mut tilted = path.clone();
                for (v, t) in tilted.values.iter_mut().zip(&tilted.times) {
                    if v.is_finite() {
                        *v -= eps * t;
                    }
                }
                let dec = lamperti_forward(&tilted, alpha, chi_new);
                let scale_t = chi_new.powf(alpha);
                let mut atoms = Vec::new();
                let mut sim_times = Vec::new();
                for j in &tilted.jumps {
                    let xi_pre = tilted.values[j.grid_index];
                    if xi_pre == f64::NEG_INFINITY {
                        continue;
                    }
                    let pos = scale_t * dec.time_change[j.grid_index].1;
                    for &yl in &j.offspring {
                        if !yl.is_finite() {
                            continue;
                        }
                        atoms.push((pos, chi_new * (xi_pre + yl).exp()));
                        sim_times.push(j.time);
                    }
                }
                ind_new.branch = dec;
                // Pair tilted atoms with the original ones. Several
                // offspring can share one jump time, so match each original
                // atom to the unused same-time tilted atom whose type is
                // closest to the exact contraction orig * e^{-eps s}.
                let mut used = vec![false; atoms.len()];
                let mut kept_atoms = Vec::new();
                let mut kept_times = Vec::new();
                for (orig_k, (&ot, &(_, oy))) in ind
                    .atom_sim_times
                    .iter()
                    .zip(&ind.atoms.atoms)
                    .enumerate()
                {
                    let expect = oy * (-eps * ot).exp();
                    let mut best: Option<usize> = None;
                    for (p, &t) in sim_times.iter().enumerate() {
                        if used[p] || (t - ot).abs() > 1e-9 {
                            continue;
                        }
                        if best
                            .map(|b| {
                                (atoms[p].1 - expect).abs() < (atoms[b].1 - expect).abs()
                            })
                            .unwrap_or(true)
                        {
                            best = Some(p);
                        }
                    }
                    if let Some(p) = best {
                        used[p] = true;
                        kept_atoms.push(atoms[p]);
                        kept_times.push(sim_times[p]);
                        new_type.insert(label.child(orig_k as u32 + 1), atoms[p].1);
                    }
                }
                ind_new.atoms.atoms = kept_atoms;
                ind_new.atom_sim_times = kept_times;
                ind_new.chi = chi_new;
            }
        }
        // Attach position on the coupled parent: the image of the same atom.
        if let Some(parent_label) = label.parent() {
            let Some(parent_new) = out.individuals.get(&parent_label) else {
                report.removed += 1;
                new_type.remove(label);
                continue;
            };
            let k = *label.0.last().unwrap() as usize - 1;
            if k < parent_new.atoms.atoms.len() {
                ind_new.attach = parent_new.atoms.atoms[k].0;
            } else {
                // Parent lost this atom (killed before it): drop the subtree.
                report.removed += 1;
                new_type.remove(label);
                continue;
            }
        }
        if ind.branch.z > 0.0 {
            report.length_ratios.push(ind_new.branch.z / ind.branch.z);
        }
        out.individuals.insert(label.clone(), ind_new);
    }
    // Lipschitz verification on sampled end-point pairs.
    let t_orig = glue(sample);
    let t_new = glue(&out);
    let mut new_index: BTreeMap<&Ulam, usize> = BTreeMap::new();
    for (i, s) in t_new.segments.iter().enumerate() {
        new_index.insert(&s.label, i);
    }
    let mut mapped: Vec<(usize, usize)> = Vec::new();
    for (i, s) in t_orig.segments.iter().enumerate() {
        if let Some(&j) = new_index.get(&s.label) {
            mapped.push((i, j));
            if mapped.len() >= 48 {
                break;
            }
        }
    }
    for a in 0..mapped.len() {
        for b in (a + 1)..mapped.len() {
            let d_orig = t_orig.end_distance(mapped[a].0, mapped[b].0);
            let d_new = t_new.end_distance(mapped[a].1, mapped[b].1);
            report.lipschitz_checked += 1;
            if d_new > d_orig + 1e-9 {
                report.lipschitz_violations += 1;
            }
        }
    }
    Ok((out, report))
}

fn rescale_individual(ind: &mut Individual, scale: f64, alpha: f64) {
    if (scale - 1.0).abs() < 1e-15 {
        return;
    }
    let st = scale.powf(alpha);
    ind.chi *= scale;
    for v in &mut ind.branch.values {
        *v *= scale;
    }
    for t in &mut ind.branch.times {
        *t *= st;
    }
    ind.branch.z *= st;
    for (pos, y) in &mut ind.atoms.atoms {
        *pos *= st;
        *y *= scale;
    }
}

/// Truncate an individual's branch at a simulation-time kill and drop the
/// atoms born afterwards.
fn truncate_at_sim_time(ind: &mut Individual, kill_t: f64, chi: f64, alpha: f64) {
    let tc = &ind.branch.time_change;
    if tc.is_empty() || kill_t >= tc[tc.len() - 1].0 {
        return;
    }
    let j = tc.partition_point(|&(t, _)| t <= kill_t).max(1);
    let (t0, e0) = tc[j - 1];
    let eps_kill = if j < tc.len() {
        let (t1, e1) = tc[j];
        if t1 > t0 {
            e0 + (e1 - e0) * (kill_t - t0) / (t1 - t0)
        } else {
            e0
        }
    } else {
        e0
    };
    let z_new = chi.powf(alpha) * eps_kill;
    ind.branch.times.truncate(j);
    ind.branch.values.truncate(j);
    ind.branch.time_change.truncate(j);
    // Dead end: record the kill point with zero decoration.
    ind.branch.times.push(z_new);
    ind.branch.values.push(0.0);
    ind.branch.time_change.push((kill_t, eps_kill));
    ind.branch.z = z_new;
    ind.branch.truncated = false;
    let kept: Vec<usize> = (0..ind.atom_sim_times.len())
        .filter(|&k| ind.atom_sim_times[k] < kill_t)
        .collect();
    ind.atoms.atoms = kept.iter().map(|&k| ind.atoms.atoms[k]).collect();
    ind.atom_sim_times = kept.iter().map(|&k| ind.atom_sim_times[k]).collect();
}
