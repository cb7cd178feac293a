"""Constraint handling: repair to the feasible set, then penalty.

Repair order matters. Box clamping and region projection first, so the
slack adjustments below start from capacity-feasible points. The heat
balance is closed through a designated heat-only slack unit. The power
balance is closed through a designated power-only slack unit; with network
loss active the slack output appears on both sides of the balance, so it
is solved by fixed-point iteration (the loss surface is shallow in any
single output, so the iteration contracts fast).

Slack units are restricted to power-only and heat-only units. When a slack
hits its box bound and cannot close the balance alone, the leftover is
spread proportionally over the remaining outputs within their own feasible
room: box room for power-only and heat-only units, and for cogeneration
units the feasible interval of the moved coordinate at the fixed value of
the other one. A single-coordinate move inside that interval cannot leave
the convex operating region, so redistribution never undoes the projection
step. Whatever residual survives every room is charged through the
penalty.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import DispatchVector, SystemDefinition, capacity_violation_batch, \
    cost_batch, emission_batch, loss_batch

_MODES = ("repair_then_penalty", "penalty_only")


@dataclass(frozen=True)
class ConstraintConfig:
    mode: str = "repair_then_penalty"
    power_slack_index: int | None = None
    heat_slack_index: int | None = None
    loss_fixed_point_tol: float = 1e-6
    loss_fixed_point_max_iters: int = 50
    penalty_weight: float = 1e4

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")
        if self.loss_fixed_point_tol <= 0:
            raise ValueError("loss_fixed_point_tol must be positive")
        if self.loss_fixed_point_max_iters < 1:
            raise ValueError("loss_fixed_point_max_iters must be at least 1")


def resolve_slack_units(system: SystemDefinition, cfg: ConstraintConfig):
    """(power slack index, heat slack index); defaults pick the largest unit."""
    pk = cfg.power_slack_index
    if pk is None and system.n_power:
        pk = int(np.argmax([u.p_max for u in system.power_units]))
    if pk is not None and not 0 <= pk < system.n_power:
        raise ValueError(
            f"power_slack_index {pk} out of range for {system.n_power} power unit(s)"
        )
    hk = cfg.heat_slack_index
    if hk is None and system.n_heat:
        hk = int(np.argmax([u.h_max for u in system.heat_units]))
    if hk is not None and not 0 <= hk < system.n_heat:
        raise ValueError(
            f"heat_slack_index {hk} out of range for {system.n_heat} heat unit(s)"
        )
    return pk, hk


def _proportional_share(room, amount):
    """Split per-row amounts over columns proportionally to the available
    room, never exceeding it. room: (R, K) non-negative, amount: (R,)
    non-negative. Returns (R, K) non-negative moves."""
    total = room.sum(axis=1)
    scale = np.minimum(1.0, amount / np.where(total > 0.0, total, 1.0))
    scale[total <= 0.0] = 0.0
    return room * scale[:, None]


def _cogen_heat_room(o, h, system, rows, upward):
    """Heat headroom of each cogen output along the vertical chord of its
    region at the current power setting."""
    room = np.zeros((rows.size, system.n_cogen))
    for j, u in enumerate(system.cogen_units):
        p_lo, p_hi = u.region.power_range
        for k, m in enumerate(rows):
            b = u.region.heat_bounds_at_power(min(max(o[m, j], p_lo), p_hi))
            if b is not None:
                room[k, j] = b[1] - h[m, j] if upward else h[m, j] - b[0]
    return np.clip(room, 0.0, None)


def _cogen_power_room(o, h, system, rows, upward):
    """Power headroom of each cogen output along the horizontal chord of
    its region at the current heat setting."""
    room = np.zeros((rows.size, system.n_cogen))
    for j, u in enumerate(system.cogen_units):
        h_lo, h_hi = u.region.heat_range
        for k, m in enumerate(rows):
            b = u.region.power_bounds_at_heat(min(max(h[m, j], h_lo), h_hi))
            if b is not None:
                room[k, j] = b[1] - o[m, j] if upward else o[m, j] - b[0]
    return np.clip(room, 0.0, None)


def _close_heat_balance(o, h, t, system, hk):
    """Set the heat slack so total heat meets demand; spread what the
    slack cannot absorb over the other heat outputs."""
    u = system.heat_units[hk]
    need = system.heat_demand - h.sum(axis=1) - (t.sum(axis=1) - t[:, hk])
    t[:, hk] = np.clip(need, u.h_min, u.h_max)
    leftover = need - t[:, hk]
    for sign in (1.0, -1.0):
        rows = np.flatnonzero(sign * leftover > 0.0)
        if rows.size == 0:
            continue
        upward = sign > 0
        box = np.zeros((rows.size, system.n_heat))
        for j, hu in enumerate(system.heat_units):
            if j == hk:
                continue
            box[:, j] = hu.h_max - t[rows, j] if upward else t[rows, j] - hu.h_min
        box = np.clip(box, 0.0, None)
        chords = _cogen_heat_room(o, h, system, rows, upward)
        moves = _proportional_share(np.hstack([box, chords]), sign * leftover[rows])
        t[rows] += sign * moves[:, :system.n_heat]
        h[rows] += sign * moves[:, system.n_heat:]


def _close_power_balance(p, o, h, system, pk, cfg):
    """Set the power slack so generation meets demand plus loss, spreading
    what the slack cannot absorb; with loss active this is a fixed point
    because the loss itself moves with the outputs."""
    u = system.power_units[pk]
    delta = np.inf
    for _ in range(cfg.loss_fixed_point_max_iters):
        others = p.sum(axis=1) - p[:, pk] + o.sum(axis=1)
        need = system.power_demand + loss_batch(p, o, system) - others
        new = np.clip(need, u.p_min, u.p_max)
        delta = float(np.abs(new - p[:, pk]).max())
        p[:, pk] = new
        leftover = need - new
        for sign in (1.0, -1.0):
            rows = np.flatnonzero(sign * leftover > 0.0)
            if rows.size == 0:
                continue
            upward = sign > 0
            box = np.zeros((rows.size, system.n_power))
            for j, pu in enumerate(system.power_units):
                if j == pk:
                    continue
                box[:, j] = pu.p_max - p[rows, j] if upward else p[rows, j] - pu.p_min
            box = np.clip(box, 0.0, None)
            chords = _cogen_power_room(o, h, system, rows, upward)
            moves = _proportional_share(np.hstack([box, chords]), sign * leftover[rows])
            p[rows] += sign * moves[:, :system.n_power]
            o[rows] += sign * moves[:, system.n_power:]
            if moves.size:
                delta = max(delta, float(moves.max()))
        if not system.loss_enabled or delta < 1e-14:
            break
    if system.loss_enabled and delta > cfg.loss_fixed_point_tol:
        warnings.warn(
            "power balance fixed point stopped after "
            f"{cfg.loss_fixed_point_max_iters} iteration(s); last change "
            f"{delta:.3g} MW",
            RuntimeWarning,
            stacklevel=2,
        )


def repair_batch(genes: np.ndarray, system: SystemDefinition,
                 cfg: ConstraintConfig) -> np.ndarray:
    """Repair an (M, n_genes) array. Returns a new array."""
    lower, upper = system.gene_bounds()
    g = np.clip(np.atleast_2d(np.asarray(genes, float)), lower, upper)
    p, o, h, t = system.split_genes(g)

    for j, u in enumerate(system.cogen_units):
        pts = np.column_stack([o[:, j], h[:, j]])
        proj, dist = u.region.project_many(pts)
        outside = dist > 0
        if np.any(outside):
            o[outside, j] = proj[outside, 0]
            h[outside, j] = proj[outside, 1]

    pk, hk = resolve_slack_units(system, cfg)
    # Power redistribution moves cogen powers, which changes the heat room
    # available along the region chords, so the pair is iterated to a
    # joint fixed point (heat moves never disturb the power balance, so
    # two passes normally settle it).
    for _ in range(4):
        before = g.copy()
        if hk is not None:
            _close_heat_balance(o, h, t, system, hk)
        if pk is not None:
            _close_power_balance(p, o, h, system, pk, cfg)
        if np.abs(g - before).max() < 1e-12:
            break
    return g


def repair(x: DispatchVector, system: SystemDefinition,
           cfg: ConstraintConfig) -> DispatchVector:
    repaired = repair_batch(x.to_genes()[None, :], system, cfg)
    return DispatchVector.from_genes(repaired[0], system)


@dataclass(frozen=True, eq=False)
class PopulationEval:
    """Evaluation of a gene batch after constraint handling.

    cost/emission are the raw objective values of the (possibly repaired)
    dispatches; penalized_* add the weighted constraint violation and are
    what selection should compare.
    """
    genes: np.ndarray
    cost: np.ndarray
    emission: np.ndarray
    violation: np.ndarray
    penalized_cost: np.ndarray
    penalized_emission: np.ndarray


def evaluate_batch(genes: np.ndarray, system: SystemDefinition,
                   cfg: ConstraintConfig) -> PopulationEval:
    g = np.atleast_2d(np.asarray(genes, float))
    if cfg.mode == "repair_then_penalty":
        g = repair_batch(g, system, cfg)
    p, o, h, t = system.split_genes(g)

    cost = cost_batch(p, o, h, t, system)
    emission = emission_batch(p, o, h, t, system)
    p_res = p.sum(axis=1) + o.sum(axis=1) - system.power_demand \
        - loss_batch(p, o, system)
    h_res = h.sum(axis=1) + t.sum(axis=1) - system.heat_demand
    violation = np.abs(p_res) + np.abs(h_res) \
        + capacity_violation_batch(p, o, h, t, system)
    penalty = cfg.penalty_weight * violation
    return PopulationEval(
        genes=g,
        cost=cost,
        emission=emission,
        violation=violation,
        penalized_cost=cost + penalty,
        penalized_emission=emission + penalty,
    )


def penalized_objectives(x: DispatchVector, system: SystemDefinition,
                         cfg: ConstraintConfig) -> tuple[float, float, float]:
    """(penalized cost, penalized emission, violation) for one dispatch."""
    ev = evaluate_batch(x.to_genes()[None, :], system, cfg)
    return float(ev.penalized_cost[0]), float(ev.penalized_emission[0]), \
        float(ev.violation[0])
