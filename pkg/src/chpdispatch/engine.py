"""Evolutionary core: indicator-based selection with crowding-managed
archive, plus an NSGA-II baseline.

Three algorithm tags share one machinery set. IDBEA runs indicator-based
environmental selection on the merged parent/archive pool and additionally
prunes the archive each generation by crowding distance, keeping the most
spread-out four fifths (configurable). IBEA is the same loop with the
pruning step disabled. NSGA2 is the classic generational baseline built
from the same dominance, crowding, and variation primitives.

Fitness orientation: each individual accumulates exp(-I/(c*kappa)) over
the scaled pairwise hypervolume indicator values against it, so dominated
individuals collect large sums and the worst individual is the argmax.
Environmental selection removes that argmax repeatedly, updating the sums
incrementally.

Selection operates on raw objectives; constraint pressure enters as a
feasibility layer (infeasible individuals lose tournaments and are evicted
first, largest violation first). Archives keep the raw cost/emission values
of the repaired dispatches, so re-evaluating stored genes reproduces the
stored objectives exactly.

Single-objective mode ("chped") runs the same loop on the cost axis alone;
dominance degenerates to scalar comparison and archive pruning is skipped.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .constraints import ConstraintConfig, evaluate_batch
from .model import DispatchVector, SystemDefinition

FEASIBILITY_TOL = 1e-9
_ALGORITHMS = ("IDBEA", "IBEA", "NSGA2")
_MODES = ("chped", "chpeed")


@dataclass(frozen=True)
class EngineConfig:
    population_size: int = 200
    max_evaluations: int = 25000
    crossover_prob: float = 0.9
    mutation_prob: float | None = None  # None -> 1 / n_genes
    sbx_eta: float = 20.0
    pm_eta: float = 20.0
    kappa: float = 0.05
    archive_keep_fraction: float = 0.8
    rng_seed: int = 0
    algorithm: str = "IDBEA"

    def __post_init__(self):
        if self.population_size < 4 or self.population_size % 2:
            raise ValueError("population_size must be even and at least 4")
        if self.max_evaluations < self.population_size:
            raise ValueError("max_evaluations must cover at least one population")
        if not 0 <= self.crossover_prob <= 1:
            raise ValueError("crossover_prob must be in [0, 1]")
        if self.mutation_prob is not None and not 0 <= self.mutation_prob <= 1:
            raise ValueError("mutation_prob must be in [0, 1]")
        if self.sbx_eta <= 0 or self.pm_eta <= 0:
            raise ValueError("distribution indices must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.archive_keep_fraction <= 1:
            raise ValueError("archive_keep_fraction must be in (0, 1]")
        if self.algorithm not in _ALGORITHMS:
            raise ValueError(f"algorithm must be one of {_ALGORITHMS}")


@dataclass
class Individual:
    genes: DispatchVector
    objectives: tuple
    violation: float = 0.0
    fitness: float = 0.0
    crowding: float = 0.0
    rank: int = -1


@dataclass(frozen=True, eq=False)
class FrontArchive:
    """Mutually non-dominated result set of one engine run."""
    genes: np.ndarray        # (n, n_genes) repaired decision vectors
    objectives: np.ndarray   # (n, 2) = (cost, emission), or (n, 1) cost only
    violations: np.ndarray   # (n,)
    run_id: str
    seed: int
    system_id: str
    algorithm: str
    n_evaluations: int = 0

    def __len__(self):
        return self.genes.shape[0]

    @property
    def points(self) -> list[tuple]:
        return [tuple(row) for row in self.objectives]


# ---------------------------------------------------------------------------
# Dominance and hypervolume primitives.
# ---------------------------------------------------------------------------

def _effective_violation(v):
    return np.where(np.asarray(v, float) <= FEASIBILITY_TOL, 0.0, v)


def dominates(a, b, violation_a: float = 0.0, violation_b: float = 0.0) -> bool:
    """Constraint-aware Pareto dominance, minimization on all axes.

    A lower (effective) violation dominates outright; at equal violation,
    componentwise <= with at least one strict <.
    """
    av = np.asarray(a, float).ravel()
    bv = np.asarray(b, float).ravel()
    if av.shape != bv.shape:
        raise ValueError(f"objective dimensions differ: {av.shape} vs {bv.shape}")
    va = float(_effective_violation(violation_a))
    vb = float(_effective_violation(violation_b))
    if va != vb:
        return va < vb
    return bool(np.all(av <= bv) and np.any(av < bv))


def _domination_matrix(objs: np.ndarray, viol: np.ndarray) -> np.ndarray:
    """D[i, j] = individual i dominates individual j."""
    v = _effective_violation(viol)
    le = (objs[:, None, :] <= objs[None, :, :]).all(-1)
    lt = (objs[:, None, :] < objs[None, :, :]).any(-1)
    pareto = le & lt
    v_lt = v[:, None] < v[None, :]
    v_eq = v[:, None] == v[None, :]
    return v_lt | (v_eq & pareto)


def hypervolume_2d(points, ref=(1.1, 1.1)) -> float:
    """Exact area dominated by a 2-D minimization point set within the
    reference box, by sweep over the cost axis."""
    pts = np.asarray(points, float)
    if pts.size == 0:
        return 0.0
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 2:
        raise ValueError("hypervolume_2d expects points with 2 objectives")
    rx, ry = float(ref[0]), float(ref[1])
    pts = pts[(pts[:, 0] < rx) & (pts[:, 1] < ry)]
    if pts.shape[0] == 0:
        return 0.0
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    area = 0.0
    prev_y = ry
    for x, y in pts[order]:
        if y < prev_y:
            area += (rx - x) * (prev_y - y)
            prev_y = y
    return area


def indicator_ihd(a_set, b_set, ref=(1.1, 1.1)) -> float:
    """Binary hypervolume indicator I(A, B): the volume by which B would
    have to shrink the advantage of A. When A weakly dominates B the value
    is IH(B) - IH(A) (non-positive); otherwise the volume dominated by B
    but not by A."""
    a = np.atleast_2d(np.asarray(a_set, float))
    b = np.atleast_2d(np.asarray(b_set, float))
    hv_a = hypervolume_2d(a, ref)
    covered = all(
        any(np.all(row_a <= row_b) for row_a in a) for row_b in b
    )
    if covered:
        return hypervolume_2d(b, ref) - hv_a
    return hypervolume_2d(np.vstack([a, b]), ref) - hv_a


# ---------------------------------------------------------------------------
# Indicator fitness.
# ---------------------------------------------------------------------------

def _normalize_objs(objs: np.ndarray) -> np.ndarray:
    lo = objs.min(axis=0)
    span = objs.max(axis=0) - lo
    out = np.zeros_like(objs)
    nz = span > 0
    out[:, nz] = (objs[:, nz] - lo[nz]) / span[nz]
    return out


def _pairwise_indicator(nobjs: np.ndarray, ref: float = 1.1) -> np.ndarray:
    """I[j, i] = indicator of singleton j against singleton i, on
    normalized objectives. Generic in the number of objectives."""
    box = ref - nobjs
    ih = box.prod(axis=1)
    worse = np.maximum(nobjs[:, None, :], nobjs[None, :, :])
    overlap = (ref - worse).prod(axis=-1)
    weak = (nobjs[:, None, :] <= nobjs[None, :, :]).all(axis=-1)
    return np.where(weak, ih[None, :] - ih[:, None], ih[None, :] - overlap)


def _indicator_fitness(objs: np.ndarray, kappa: float):
    """Fitness vector F and contribution matrix E.

    E[j, i] = exp(-I[j, i] / (c_i * kappa)) where c_i is the largest
    absolute indicator value against individual i, so each individual's
    incoming comparisons use its own scale; F_i = sum_{j != i} E[j, i].
    Larger F marks a worse individual. An individual attacked weakly by
    everything (an isolated extreme) collects a near-zero sum; one covered
    tightly by neighbors or dominators collects a large one.
    """
    nobjs = _normalize_objs(objs)
    ind = _pairwise_indicator(nobjs)
    c = np.abs(ind).max(axis=0)
    c[c == 0.0] = 1.0
    e = np.exp(-ind / (c[None, :] * kappa))
    np.fill_diagonal(e, 0.0)
    return e.sum(axis=0), e


def _neumaier_add(fit, comp, b):
    """One compensated-summation step: returns fit + b, accumulating the
    rounding error of the addition into comp."""
    t = fit + b
    comp += np.where(np.abs(fit) >= np.abs(b), (fit - t) + b, (b - t) + fit)
    return t


def _env_select(objs: np.ndarray, viol: np.ndarray, n_keep: int,
                kappa: float):
    """Remove worst individuals until n_keep remain.

    Constraint layer first: while any (effectively) infeasible individual
    is alive, the one with the largest violation goes, fitness breaking
    ties. Among feasible individuals the largest fitness goes, first
    occurrence breaking exact ties. Returns (alive indices in original
    order, fitness after all removals, removal order). Normalization and
    indicator scaling are fixed at entry; removals only subtract each
    removed individual's contribution terms.

    The running sums are compensated (Neumaier): the exponential terms
    span ~9 orders of magnitude, and both the initial accumulation and
    the removal of a dominator's huge contribution would otherwise leave
    rounding residue far above the 1e-9 agreement the
    recompute-from-scratch check expects.
    """
    n = objs.shape[0]
    _, e = _indicator_fitness(objs, kappa)
    fit = np.zeros(n)
    comp = np.zeros(n)
    for j in range(n):
        fit = _neumaier_add(fit, comp, e[j])
    veff = _effective_violation(viol)
    alive = np.ones(n, dtype=bool)
    removal_order = []
    for _ in range(n - n_keep):
        idx = np.flatnonzero(alive)
        corrected = fit[idx] + comp[idx]
        v_max = veff[idx].max()
        if v_max > 0.0:
            cand = veff[idx] == v_max
            worst = idx[cand][np.argmax(corrected[cand])]
        else:
            worst = idx[np.argmax(corrected)]
        alive[worst] = False
        removal_order.append(int(worst))
        fit = _neumaier_add(fit, comp, -e[worst])
    return np.flatnonzero(alive), fit + comp, removal_order


# ---------------------------------------------------------------------------
# Crowding distance.
# ---------------------------------------------------------------------------

def _crowding(objs: np.ndarray) -> np.ndarray:
    n = objs.shape[0]
    if n <= 2:
        return np.full(n, np.inf)
    dist = np.zeros(n)
    for j in range(objs.shape[1]):
        order = np.argsort(objs[:, j], kind="stable")
        vals = objs[order, j]
        span = vals[-1] - vals[0]
        if span > 0:
            dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
    return dist


# ---------------------------------------------------------------------------
# Variation operators (array level).
# ---------------------------------------------------------------------------

def _sbx_pair(a, b, lower, upper, cfg: EngineConfig, rng):
    if rng.random() >= cfg.crossover_prob:
        return a.copy(), b.copy()
    u = rng.random(a.shape[0])
    mask = rng.random(a.shape[0]) < 0.5
    exp = 1.0 / (cfg.sbx_eta + 1.0)
    beta = np.where(u <= 0.5, (2.0 * u) ** exp,
                    (1.0 / (2.0 * (1.0 - u))) ** exp)
    c1 = 0.5 * ((1.0 + beta) * a + (1.0 - beta) * b)
    c2 = 0.5 * ((1.0 - beta) * a + (1.0 + beta) * b)
    c1 = np.where(mask, c1, a)
    c2 = np.where(mask, c2, b)
    return np.clip(c1, lower, upper), np.clip(c2, lower, upper)


def _pm_genes(x, lower, upper, cfg: EngineConfig, rng, pm_prob: float):
    y = x.copy()
    do = rng.random(x.shape[0]) < pm_prob
    k = int(do.sum())
    if k == 0:
        return y
    r = rng.random(k)
    exp = 1.0 / (cfg.pm_eta + 1.0)
    delta = np.where(r < 0.5, (2.0 * r) ** exp - 1.0,
                     1.0 - (2.0 * (1.0 - r)) ** exp)
    y[do] += delta * (upper[do] - lower[do])
    return np.clip(y, lower, upper)


def _tournament_idx(fitness: np.ndarray, veff: np.ndarray, rng) -> int:
    """Binary tournament: feasible beats infeasible, lower violation beats
    higher, then lower fitness; exact ties keep the first draw."""
    i, j = rng.integers(0, fitness.shape[0], size=2)
    i, j = int(i), int(j)
    if veff[j] < veff[i]:
        return j
    if veff[i] < veff[j]:
        return i
    return i if fitness[i] <= fitness[j] else j


# ---------------------------------------------------------------------------
# Public wrappers on Individual lists.
# ---------------------------------------------------------------------------

def _objs_of(pop) -> np.ndarray:
    return np.array([ind.objectives for ind in pop], float)


def assign_fitness(pop: list, cfg: EngineConfig) -> list:
    if len(pop) < 2:
        raise ValueError("fitness assignment needs at least 2 individuals")
    fit, _ = _indicator_fitness(_objs_of(pop), cfg.kappa)
    for ind, f in zip(pop, fit):
        ind.fitness = float(f)
    return pop


def environmental_selection(pool: list, cfg: EngineConfig) -> list:
    n_keep = cfg.population_size
    if len(pool) < n_keep:
        raise ValueError(f"pool of {len(pool)} cannot fill {n_keep} slots")
    if len(pool) == n_keep:
        return list(pool)
    viol = np.array([ind.violation for ind in pool], float)
    alive, fit, _ = _env_select(_objs_of(pool), viol, n_keep, cfg.kappa)
    for i in alive:
        pool[i].fitness = float(fit[i])
    return [pool[i] for i in alive]


def crowding_distance(front: list) -> list:
    if not front:
        raise ValueError("crowding distance needs at least 1 individual")
    dist = _crowding(_objs_of(front))
    for ind, d in zip(front, dist):
        ind.crowding = float(d)
    return front


def binary_tournament(archive: list, rng) -> Individual:
    i, j = rng.integers(0, len(archive), size=2)
    a, b = archive[int(i)], archive[int(j)]
    va = a.violation if a.violation > FEASIBILITY_TOL else 0.0
    vb = b.violation if b.violation > FEASIBILITY_TOL else 0.0
    if vb < va:
        return b
    if va < vb:
        return a
    return a if a.fitness <= b.fitness else b


def nondominated_sort(pop: list) -> list:
    objs = _objs_of(pop)
    viol = np.array([ind.violation for ind in pop], float)
    fronts = _fast_nds(objs, viol)
    for rank, idx in enumerate(fronts):
        for i in idx:
            pop[i].rank = rank
    return [[pop[i] for i in idx] for idx in fronts]


def _dv_like(template: DispatchVector, genes: np.ndarray) -> DispatchVector:
    n_p, n_c = template.p.shape[0], template.o.shape[0]
    return DispatchVector(
        p=genes[:n_p],
        o=genes[n_p:n_p + n_c],
        h=genes[n_p + n_c:n_p + 2 * n_c],
        t=genes[n_p + 2 * n_c:],
    )


def sbx_crossover(p1: DispatchVector, p2: DispatchVector, bounds,
                  cfg: EngineConfig, rng):
    lower = np.asarray(bounds[0], float)
    upper = np.asarray(bounds[1], float)
    c1, c2 = _sbx_pair(p1.to_genes(), p2.to_genes(), lower, upper, cfg, rng)
    return _dv_like(p1, c1), _dv_like(p1, c2)


def polynomial_mutation(x: DispatchVector, bounds, cfg: EngineConfig, rng,
                        ) -> DispatchVector:
    genes = x.to_genes()
    lower = np.asarray(bounds[0], float)
    upper = np.asarray(bounds[1], float)
    pm_prob = cfg.mutation_prob
    if pm_prob is None:
        pm_prob = 1.0 / genes.shape[0]
    return _dv_like(x, _pm_genes(genes, lower, upper, cfg, rng, pm_prob))


def _fast_nds(objs: np.ndarray, viol: np.ndarray) -> list:
    """Ranked fronts as index arrays, constraint-aware."""
    d = _domination_matrix(objs, viol)
    n = objs.shape[0]
    n_dom = d.sum(axis=0).astype(np.int64)
    unranked = np.ones(n, dtype=bool)
    fronts = []
    while unranked.any():
        cur = np.flatnonzero(unranked & (n_dom == 0))
        fronts.append(cur)
        unranked[cur] = False
        n_dom -= d[cur].sum(axis=0)
        n_dom[~unranked] = np.iinfo(np.int64).max // 2
    return fronts


# ---------------------------------------------------------------------------
# Engine loops.
# ---------------------------------------------------------------------------

def _raw_objs(ev, n_objs: int) -> np.ndarray:
    if n_objs == 1:
        return ev.cost[:, None]
    return np.column_stack([ev.cost, ev.emission])


def _make_front(genes, raw, viol, system, ecfg, seed, evals) -> FrontArchive:
    fronts = _fast_nds(raw, viol)
    keep = fronts[0]
    genes, raw, viol = genes[keep], raw[keep], viol[keep]
    _, first = np.unique(genes, axis=0, return_index=True)
    keep = np.sort(first)
    return FrontArchive(
        genes=genes[keep].copy(),
        objectives=raw[keep].copy(),
        violations=viol[keep].copy(),
        run_id=f"{system.name}-{ecfg.algorithm}-s{seed}",
        seed=seed,
        system_id=system.name,
        algorithm=ecfg.algorithm,
        n_evaluations=evals,
    )


def _spawn_children(arch_genes, pick_parent, lower, upper, ecfg, rng,
                    pm_prob):
    n, m = ecfg.population_size, arch_genes.shape[1]
    children = np.empty((n, m))
    filled = 0
    while filled < n:
        pa = pick_parent(rng)
        pb = pick_parent(rng)
        c1, c2 = _sbx_pair(arch_genes[pa], arch_genes[pb], lower, upper,
                           ecfg, rng)
        children[filled] = _pm_genes(c1, lower, upper, ecfg, rng, pm_prob)
        filled += 1
        if filled < n:
            children[filled] = _pm_genes(c2, lower, upper, ecfg, rng, pm_prob)
            filled += 1
    return children


def _indicator_loop(system, ecfg, ccfg, mode) -> FrontArchive:
    rng = np.random.default_rng(ecfg.rng_seed)
    lower, upper = system.gene_bounds()
    n = ecfg.population_size
    n_objs = 1 if mode == "chped" else 2
    pm_prob = ecfg.mutation_prob
    if pm_prob is None:
        pm_prob = 1.0 / system.n_genes
    prune = ecfg.algorithm == "IDBEA" and n_objs == 2
    n_keep = int(np.floor(n * ecfg.archive_keep_fraction))

    genes = rng.random((n, system.n_genes)) * (upper - lower) + lower
    ev = evaluate_batch(genes, system, ccfg)
    p_genes, p_objs, p_viol = ev.genes, _raw_objs(ev, n_objs), ev.violation
    evals = n

    a_genes = np.empty((0, system.n_genes))
    a_objs = np.empty((0, n_objs))
    a_viol = np.empty(0)

    while True:
        q_genes = np.vstack([p_genes, a_genes])
        q_objs = np.vstack([p_objs, a_objs])
        q_viol = np.concatenate([p_viol, a_viol])

        if q_genes.shape[0] > n:
            alive, fit, _ = _env_select(q_objs, q_viol, n, ecfg.kappa)
        else:
            fit, _ = _indicator_fitness(q_objs, ecfg.kappa)
            alive = np.arange(q_genes.shape[0])
        a_genes, a_objs, a_viol = q_genes[alive], q_objs[alive], q_viol[alive]
        a_fit, a_veff = fit[alive], _effective_violation(q_viol[alive])

        if evals >= ecfg.max_evaluations:
            return _make_front(a_genes, a_objs, a_viol, system, ecfg,
                               ecfg.rng_seed, evals)

        children = _spawn_children(
            a_genes, lambda r: _tournament_idx(a_fit, a_veff, r), lower,
            upper, ecfg, rng, pm_prob)
        ev = evaluate_batch(children, system, ccfg)
        p_genes, p_objs = ev.genes, _raw_objs(ev, n_objs)
        p_viol = ev.violation
        evals += n

        if prune and a_genes.shape[0] > n_keep:
            dist = _crowding(a_objs)
            order = np.argsort(-dist, kind="stable")
            keep = np.sort(order[:n_keep])
            a_genes, a_objs, a_viol = (a_genes[keep], a_objs[keep],
                                       a_viol[keep])


def _crowding_by_front(objs: np.ndarray, fronts: list) -> np.ndarray:
    dist = np.zeros(objs.shape[0])
    for idx in fronts:
        dist[idx] = _crowding(objs[idx])
    return dist


def _rank_crowd_tournament(ranks, crowd, rng) -> int:
    i, j = rng.integers(0, ranks.shape[0], size=2)
    i, j = int(i), int(j)
    if ranks[j] < ranks[i] or (ranks[j] == ranks[i] and crowd[j] > crowd[i]):
        return j
    return i


def _nsga2_loop(system, ecfg, ccfg, mode) -> FrontArchive:
    rng = np.random.default_rng(ecfg.rng_seed)
    lower, upper = system.gene_bounds()
    n = ecfg.population_size
    n_objs = 1 if mode == "chped" else 2
    pm_prob = ecfg.mutation_prob
    if pm_prob is None:
        pm_prob = 1.0 / system.n_genes

    genes = rng.random((n, system.n_genes)) * (upper - lower) + lower
    ev = evaluate_batch(genes, system, ccfg)
    p_genes, p_objs, p_viol = ev.genes, _raw_objs(ev, n_objs), ev.violation
    evals = n
    fronts = _fast_nds(p_objs, p_viol)
    ranks = np.empty(n, dtype=np.int64)
    for r, idx in enumerate(fronts):
        ranks[idx] = r
    crowd = _crowding_by_front(p_objs, fronts)

    while evals < ecfg.max_evaluations:
        children = _spawn_children(
            p_genes, lambda r: _rank_crowd_tournament(ranks, crowd, r),
            lower, upper, ecfg, rng, pm_prob)
        ev = evaluate_batch(children, system, ccfg)
        evals += n

        r_genes = np.vstack([p_genes, ev.genes])
        r_objs = np.vstack([p_objs, _raw_objs(ev, n_objs)])
        r_viol = np.concatenate([p_viol, ev.violation])
        r_fronts = _fast_nds(r_objs, r_viol)
        r_crowd = _crowding_by_front(r_objs, r_fronts)

        chosen: list[int] = []
        for idx in r_fronts:
            if len(chosen) + idx.shape[0] <= n:
                chosen.extend(idx.tolist())
            else:
                need = n - len(chosen)
                order = np.argsort(-r_crowd[idx], kind="stable")
                chosen.extend(idx[order[:need]].tolist())
                break
        pick = np.array(chosen)
        p_genes, p_objs, p_viol = r_genes[pick], r_objs[pick], r_viol[pick]
        rank_of = np.empty(r_objs.shape[0], dtype=np.int64)
        for r, idx in enumerate(r_fronts):
            rank_of[idx] = r
        ranks, crowd = rank_of[pick], r_crowd[pick]

    return _make_front(p_genes, p_objs, p_viol, system, ecfg,
                       ecfg.rng_seed, evals)


def run(system: SystemDefinition, ecfg: EngineConfig,
        ccfg: ConstraintConfig | None = None, mode: str = "chpeed",
        ) -> FrontArchive:
    """Run the configured algorithm to its evaluation budget and return
    the first non-dominated front of the final archive."""
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    if ccfg is None:
        ccfg = ConstraintConfig()
    if ecfg.algorithm == "NSGA2":
        return _nsga2_loop(system, ecfg, ccfg, mode)
    return _indicator_loop(system, ecfg, ccfg, mode)


def idbea_run(system, ecfg: EngineConfig, ccfg=None, mode="chpeed"):
    return run(system, replace(ecfg, algorithm="IDBEA"), ccfg, mode)


def ibea_run(system, ecfg: EngineConfig, ccfg=None, mode="chpeed"):
    return run(system, replace(ecfg, algorithm="IBEA"), ccfg, mode)


def nsga2_run(system, ecfg: EngineConfig, ccfg=None, mode="chpeed"):
    return run(system, replace(ecfg, algorithm="NSGA2"), ccfg, mode)
