//! Robust aggregation of transmitted local estimates: centre-of-attention
//! selection, distance filtering, mixture reduction by an MM loop with
//! analytic barycentres, and the trimmed-barycentre baseline.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::divergence::{component_cost, l2_distance, CostKind};
use crate::error::{Error, Result};
use crate::mixture::{Component, Family, GaussianComponent, MixingDistribution};

/// The `m` transmitted estimates plus machine weights, with an optional
/// ground-truth failure mask used only for oracle baselines and diagnostics.
#[derive(Debug, Clone)]
pub struct LocalEstimateSet {
    estimates: Vec<MixingDistribution>,
    machine_weights: Vec<f64>,
    failure_mask: Option<Vec<bool>>,
}

impl LocalEstimateSet {
    /// Uniform machine weights `1/m`.
    pub fn uniform(estimates: Vec<MixingDistribution>) -> Result<Self> {
        let m = estimates.len();
        Self::new(estimates, vec![1.0 / m as f64; m], None)
    }

    pub fn new(
        estimates: Vec<MixingDistribution>,
        machine_weights: Vec<f64>,
        failure_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::Aggregation("no estimates".into()));
        }
        let first = &estimates[0];
        for e in &estimates[1..] {
            if e.family() != first.family() {
                return Err(Error::FamilyMismatch);
            }
            if e.order() != first.order() {
                return Err(Error::OrderMismatch {
                    left: e.order(),
                    right: first.order(),
                });
            }
            if e.dim() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    got: e.dim(),
                });
            }
        }
        if machine_weights.len() != estimates.len() {
            return Err(Error::Aggregation(format!(
                "{} machine weights for {} estimates",
                machine_weights.len(),
                estimates.len()
            )));
        }
        if machine_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(
                "machine weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = machine_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!(
                "machine weights sum to {sum}, expected 1"
            )));
        }
        if let Some(mask) = &failure_mask {
            if mask.len() != estimates.len() {
                return Err(Error::Aggregation("failure mask length mismatch".into()));
            }
        }
        Ok(LocalEstimateSet {
            estimates,
            machine_weights,
            failure_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires m >= 1
    }

    pub fn estimates(&self) -> &[MixingDistribution] {
        &self.estimates
    }

    pub fn machine_weights(&self) -> &[f64] {
        &self.machine_weights
    }

    pub fn failure_mask(&self) -> Option<&[bool]> {
        self.failure_mask.as_deref()
    }

    pub fn order(&self) -> usize {
        self.estimates[0].order()
    }

    pub fn family(&self) -> Family {
        self.estimates[0].family()
    }

    /// Restrict to the given machine indices, renormalizing machine weights.
    pub fn subset(&self, indices: &[usize]) -> Result<LocalEstimateSet> {
        if indices.is_empty() {
            return Err(Error::Aggregation("empty machine subset".into()));
        }
        if indices.len() == self.len() && indices.iter().enumerate().all(|(p, &i)| p == i) {
            return Ok(self.clone());
        }
        let total: f64 = indices.iter().map(|&i| self.machine_weights[i]).sum();
        if total <= 0.0 {
            return Err(Error::Aggregation("subset has zero machine weight".into()));
        }
        LocalEstimateSet::new(
            indices.iter().map(|&i| self.estimates[i].clone()).collect(),
            indices
                .iter()
                .map(|&i| self.machine_weights[i] / total)
                .collect(),
            self.failure_mask
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i]).collect()),
        )
    }

    /// Pool every (machine, component) atom: mass `lambda_i * w_ik`.
    pub fn pooled_atoms(&self) -> Vec<(f64, Component)> {
        let mut atoms = Vec::with_capacity(self.len() * self.order());
        for (lambda, est) in self.machine_weights.iter().zip(&self.estimates) {
            for (w, c) in est.weights().iter().zip(est.components()) {
                atoms.push((lambda * w, c.clone()));
            }
        }
        atoms
    }
}

/// COAT selection output: the chosen machine, its median radius, and the
/// full pairwise distance matrix it was derived from.
#[derive(Debug, Clone)]
pub struct CoatResult {
    pub index: usize,
    pub r_coat: f64,
    pub distance_matrix: DMatrix<f64>,
}

/// Symmetric matrix of pairwise L2 distances between transmitted estimates,
/// with a zero diagonal. Unordered pairs are filled in parallel.
pub fn pairwise_distances(set: &LocalEstimateSet) -> Result<DMatrix<f64>> {
    let m = set.len();
    if m < 2 {
        return Err(Error::Aggregation("need at least two estimates".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| l2_distance(&set.estimates[i], &set.estimates[j]))
        .collect::<Result<_>>()?;
    let mut matrix = DMatrix::zeros(m, m);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        matrix[(i, j)] = v;
        matrix[(j, i)] = v;
    }
    Ok(matrix)
}

/// The median statistic of one row: the `ceil(m/2)`-th smallest entry
/// including the zero self-distance, so the closed ball of that radius
/// around the estimate contains at least half of all estimates.
fn row_median(row: &[f64]) -> f64 {
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[row.len().div_ceil(2) - 1]
}

/// Centre of attention: the estimate whose median distance to the others is
/// smallest (lowest index on ties).
pub fn coat(set: &LocalEstimateSet) -> Result<CoatResult> {
    let matrix = pairwise_distances(set)?;
    coat_from_distances(matrix)
}

/// COAT from a precomputed distance matrix.
pub fn coat_from_distances(matrix: DMatrix<f64>) -> Result<CoatResult> {
    let m = matrix.nrows();
    if m < 2 || matrix.ncols() != m {
        return Err(Error::Aggregation(
            "distance matrix must be m x m with m >= 2".into(),
        ));
    }
    let mut best = 0;
    let mut best_med = f64::INFINITY;
    for i in 0..m {
        let row: Vec<f64> = matrix.row(i).iter().cloned().collect();
        let med = row_median(&row);
        if med < best_med {
            best_med = med;
            best = i;
        }
    }
    Ok(CoatResult {
        index: best,
        r_coat: best_med,
        distance_matrix: matrix,
    })
}

/// The selection set: machines whose distance to the COAT estimate is within
/// `rho` times the COAT radius. An infinite `rho` selects everything.
pub fn select(set: &LocalEstimateSet, coat: &CoatResult, rho: f64) -> Result<Vec<usize>> {
    if !(rho >= 1.0) {
        return Err(Error::Aggregation(format!(
            "rho must be at least 1, got {rho}"
        )));
    }
    let m = set.len();
    if rho.is_infinite() {
        return Ok((0..m).collect());
    }
    let radius = rho * coat.r_coat;
    Ok((0..m)
        .filter(|&i| coat.distance_matrix[(coat.index, i)] <= radius)
        .collect())
}

/// Weighted KL barycentre of Gaussian components: moment matching of the
/// mean and of the covariance inflated by the mean spread.
pub fn kl_barycentre_gaussian(items: &[(f64, GaussianComponent)]) -> Result<GaussianComponent> {
    if items.is_empty() {
        return Err(Error::Aggregation("empty barycentre input".into()));
    }
    if items.iter().any(|(w, _)| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights(
            "barycentre masses must be nonnegative".into(),
        ));
    }
    let total: f64 = items.iter().map(|(w, _)| w).sum();
    if total <= 0.0 {
        return Err(Error::Aggregation("barycentre has zero total mass".into()));
    }
    let d = items[0].1.dim();
    let mut mean = DVector::zeros(d);
    for (w, c) in items {
        mean += c.mean() * (*w / total);
    }
    let mut cov = DMatrix::zeros(d, d);
    for (w, c) in items {
        let diff = c.mean() - &mean;
        cov += (c.covariance() + diff.clone() * diff.transpose()) * (*w / total);
    }
    GaussianComponent::new(mean, cov)
}

/// Barycentre of components under the given cost: analytic KL barycentre for
/// Gaussians, mass-weighted parameter mean for the squared Euclidean cost.
fn barycentre(items: &[(f64, &Component)], kind: CostKind) -> Result<Component> {
    match kind {
        CostKind::Kl => {
            let gs: Vec<(f64, GaussianComponent)> = items
                .iter()
                .map(|(w, c)| match c {
                    Component::Gaussian(g) => Ok((*w, g.clone())),
                    _ => Err(Error::Metric("KL barycentre requires Gaussians".into())),
                })
                .collect::<Result<_>>()?;
            Ok(Component::Gaussian(kl_barycentre_gaussian(&gs)?))
        }
        CostKind::SqEuclidean => {
            let total: f64 = items.iter().map(|(w, _)| w).sum();
            if total <= 0.0 {
                return Err(Error::Aggregation("barycentre has zero total mass".into()));
            }
            let family = items[0].1.family();
            let d = items[0].1.dim();
            let p = items[0].1.param_dim();
            let mut acc = vec![0.0; p];
            let mut flat = Vec::with_capacity(p);
            for (w, c) in items {
                flat.clear();
                c.flatten_into(&mut flat);
                for (a, f) in acc.iter_mut().zip(&flat) {
                    *a += *w / total * f;
                }
            }
            Component::from_flat(family, d, &acc)
        }
        CostKind::L2CrossIntegral | CostKind::D1 => Err(Error::Metric(
            "no barycentre defined for this cost kind".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct MmOptions {
    pub cost: CostKind,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MmOptions {
    fn default() -> Self {
        MmOptions {
            cost: CostKind::Kl,
            tol: 1e-9,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmResult {
    pub estimate: MixingDistribution,
    pub objective: f64,
    /// Reduced-CTD objective after each assignment pass; non-increasing up
    /// to float slack.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Reduce pooled atoms to a `k`-component mixture by alternating nearest-cost
/// assignment with barycentre updates. Ties assign to the lowest target
/// index; an emptied target is reseeded at the atom with the largest current
/// assignment cost.
pub fn mm_reduce(
    pooled: &[(f64, Component)],
    k: usize,
    init: &MixingDistribution,
    opts: &MmOptions,
) -> Result<MmResult> {
    if pooled.is_empty() {
        return Err(Error::Aggregation("empty atom list".into()));
    }
    let mass: f64 = pooled.iter().map(|(w, _)| w).sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "atom masses sum to {mass}, expected 1"
        )));
    }
    if init.order() != k {
        return Err(Error::OrderMismatch {
            left: init.order(),
            right: k,
        });
    }
    let n = pooled.len();
    let mut targets: Vec<Component> = init.components().to_vec();
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let assign_all = |targets: &[Component], assignment: &mut [usize]| -> Result<(f64, Vec<f64>)> {
        let mut objective = 0.0;
        let mut costs = vec![0.0; n];
        for (gamma, (w, atom)) in pooled.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut best_j = 0;
            for (j, t) in targets.iter().enumerate() {
                let c = component_cost(opts.cost, atom, t)?;
                if c < best {
                    best = c;
                    best_j = j;
                }
            }
            assignment[gamma] = best_j;
            costs[gamma] = best;
            objective += w * best;
        }
        Ok((objective, costs))
    };

    for _ in 0..opts.max_iters {
        let (mut objective, costs) = assign_all(&targets, &mut assignment)?;

        // Reseed empty targets at the worst-assigned atoms, one atom each;
        // this can only lower the objective.
        let mut occupied = vec![false; k];
        for &a in &assignment {
            occupied[a] = true;
        }
        if occupied.iter().any(|&o| !o) {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| costs[b].partial_cmp(&costs[a]).unwrap().then(a.cmp(&b)));
            let mut worst = order.into_iter();
            for j in 0..k {
                if !occupied[j] {
                    if let Some(gamma) = worst.next() {
                        targets[j] = pooled[gamma].1.clone();
                    }
                }
            }
            objective = assign_all(&targets, &mut assignment)?.0;
        }

        let improved_below_tol = trace
            .last()
            .map(|&prev| (prev - objective).abs() < opts.tol);
        trace.push(objective);
        if improved_below_tol == Some(true) {
            converged = true;
            break;
        }

        // Minimisation: barycentre per cluster, weight = transported mass.
        let mut new_targets = Vec::with_capacity(k);
        for j in 0..k {
            let members: Vec<(f64, &Component)> = pooled
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == j)
                .map(|((w, c), _)| (*w, c))
                .collect();
            let cluster_mass: f64 = members.iter().map(|(w, _)| w).sum();
            if members.is_empty() || cluster_mass <= 0.0 {
                new_targets.push(targets[j].clone());
            } else {
                new_targets.push(barycentre(&members, opts.cost)?);
            }
        }
        targets = new_targets;
        iterations += 1;
    }

    if !converged {
        // Price the final targets so the reported objective and weights
        // correspond to the returned estimate.
        let objective = assign_all(&targets, &mut assignment)?.0;
        trace.push(objective);
    }

    let mut weights = vec![0.0; k];
    for ((w, _), &a) in pooled.iter().zip(&assignment) {
        weights[a] += w;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let estimate = MixingDistribution::new(weights, targets)?;
    Ok(MmResult {
        objective: *trace.last().unwrap(),
        estimate,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// `mm_reduce` with optional random restarts: each restart seeds the targets
/// at `k` atoms drawn by cost-weighted sampling, and the lowest final
/// objective wins (the deterministic COAT-initialized run on ties).
pub fn mm_reduce_restarts<R: Rng>(
    pooled: &[(f64, Component)],
    k: usize,
    init: &MixingDistribution,
    opts: &MmOptions,
    restarts: usize,
    rng: &mut R,
) -> Result<MmResult> {
    let mut best = mm_reduce(pooled, k, init, opts)?;
    for _ in 0..restarts {
        let seeds = seed_targets(pooled, k, opts.cost, rng)?;
        let init_r = MixingDistribution::new(vec![1.0 / k as f64; k], seeds)?;
        let candidate = mm_reduce(pooled, k, &init_r, opts)?;
        if candidate.objective < best.objective {
            best = candidate;
        }
    }
    Ok(best)
}

fn seed_targets<R: Rng>(
    pooled: &[(f64, Component)],
    k: usize,
    cost: CostKind,
    rng: &mut R,
) -> Result<Vec<Component>> {
    let n = pooled.len();
    if k > n {
        return Err(Error::Aggregation(format!(
            "cannot seed {k} targets from {n} atoms"
        )));
    }
    let mut chosen: Vec<Component> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(pooled[first].1.clone());
    let mut dist: Vec<f64> = pooled
        .iter()
        .map(|(_, c)| component_cost(cost, c, &chosen[0]))
        .collect::<Result<_>>()?;
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u: f64 = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        };
        let c = pooled[pick].1.clone();
        for (i, (_, atom)) in pooled.iter().enumerate() {
            let d = component_cost(cost, atom, &c)?;
            if d < dist[i] {
                dist[i] = d;
            }
        }
        chosen.push(c);
    }
    Ok(chosen)
}

/// Options for the distance-filtered reduction.
#[derive(Debug, Clone)]
pub struct ReduceOptions {
    pub mm: MmOptions,
    /// Extra random restarts beyond the COAT-initialized run.
    pub restarts: usize,
    pub restart_seed: u64,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions {
            mm: MmOptions::default(),
            restarts: 0,
            restart_seed: 0,
        }
    }
}

/// Distance-filtered mixture reduction output.
#[derive(Debug, Clone)]
pub struct DfmrResult {
    pub estimate: MixingDistribution,
    pub coat: CoatResult,
    pub selected: Vec<usize>,
    pub mm: MmResult,
}

/// The full robust pipeline: COAT, select machines within `rho` times the
/// COAT radius, pool their atoms with renormalized machine weights, and
/// reduce starting from the COAT estimate.
pub fn dfmr(
    set: &LocalEstimateSet,
    rho: f64,
    k: usize,
    opts: &ReduceOptions,
) -> Result<DfmrResult> {
    let coat_result = coat(set)?;
    dfmr_with_coat(set, coat_result, rho, k, opts)
}

/// DFMR reusing a precomputed COAT; the distance matrix is the expensive
/// part when sweeping over `rho`.
pub fn dfmr_with_coat(
    set: &LocalEstimateSet,
    coat: CoatResult,
    rho: f64,
    k: usize,
    opts: &ReduceOptions,
) -> Result<DfmrResult> {
    let selected = select(set, &coat, rho)?;
    let subset = set.subset(&selected)?;
    let pooled = subset.pooled_atoms();
    let init = &set.estimates()[coat.index];
    let mm = if opts.restarts == 0 {
        mm_reduce(&pooled, k, init, &opts.mm)?
    } else {
        let mut rng = crate::seed::rng(opts.restart_seed, &[crate::seed::stream::RESTART]);
        mm_reduce_restarts(&pooled, k, init, &opts.mm, opts.restarts, &mut rng)?
    };
    Ok(DfmrResult {
        estimate: mm.estimate.clone(),
        coat,
        selected,
        mm,
    })
}

#[derive(Debug, Clone)]
pub struct TrimResult {
    pub estimate: MixingDistribution,
    pub iterations: usize,
    pub converged: bool,
}

/// Trimmed-barycentre baseline: assign atoms to their nearest target, sort by
/// assignment loss, keep cumulative mass `1 - eta` with a partial mass at the
/// boundary atom, update barycentres with the kept masses, and renormalize
/// weights by `1/(1 - eta)`. Iterates until the assignment stabilizes.
pub fn trim(
    set: &LocalEstimateSet,
    eta: f64,
    k: usize,
    init: &MixingDistribution,
    cost: CostKind,
) -> Result<TrimResult> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Aggregation(format!(
            "eta must be in (0, 1), got {eta}"
        )));
    }
    if init.order() != k {
        return Err(Error::OrderMismatch {
            left: init.order(),
            right: k,
        });
    }
    let pooled = set.pooled_atoms();
    let n = pooled.len();
    let keep = 1.0 - eta;
    let max_iters = 100;
    let mut targets: Vec<Component> = init.components().to_vec();
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut weights = vec![1.0 / k as f64; k];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iters {
        let mut losses = vec![0.0; n];
        let mut next_assignment = vec![0usize; n];
        for (gamma, (_, atom)) in pooled.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut best_j = 0;
            for (j, t) in targets.iter().enumerate() {
                let c = component_cost(cost, atom, t)?;
                if c < best {
                    best = c;
                    best_j = j;
                }
            }
            next_assignment[gamma] = best_j;
            losses[gamma] = best;
        }
        if next_assignment == assignment {
            converged = true;
            break;
        }
        assignment = next_assignment;
        iterations += 1;

        // Trimming walk: keep atoms in loss order until mass 1 - eta is
        // reached; the boundary atom keeps only the remaining budget.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap().then(a.cmp(&b)));
        let mut kept = vec![0.0; n];
        let mut acc = 0.0;
        for &gamma in &order {
            let w = pooled[gamma].0;
            if acc + w <= keep {
                kept[gamma] = w;
                acc += w;
            } else {
                kept[gamma] = (keep - acc).max(0.0);
                acc = keep;
            }
        }

        for j in 0..k {
            let members: Vec<(f64, &Component)> = pooled
                .iter()
                .zip(&assignment)
                .zip(&kept)
                .filter(|((_, &a), &kw)| a == j && kw > 0.0)
                .map(|(((_, c), _), &kw)| (kw, c))
                .collect();
            weights[j] = members.iter().map(|(w, _)| w).sum::<f64>() / keep;
            if !members.is_empty() {
                targets[j] = barycentre(&members, cost)?;
            }
        }
    }

    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Aggregation("trimming removed all mass".into()));
    }
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let estimate = MixingDistribution::new(weights, targets)?;
    Ok(TrimResult {
        estimate,
        iterations,
        converged,
    })
}
