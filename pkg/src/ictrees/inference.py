"""Queries against a trained IC-Tree.

Densities follow the mixture form: every leaf contributes
``weight * |det W| * prod_j qpd_j(s_j) * prod_c pmf_c(x_c)`` with
``s = W (x - mean)``. Everything else (marginals, conditional moments) is
estimated by sampling, because exact integration over the transformed leaves
is not tractable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from . import ica
from .data_io import Dataset
from .errors import InconsistentEvidence, InsufficientAcceptance
from .tree import CONSTANT_MATCH_TOL, IcTreeModel, Leaf, LinearSplit

DEFAULT_MAX_RETRIES = 16
MAX_REGION_VERTEX_DIM = 16


# --------------------------------------------------------------------------- evidence


@dataclass(frozen=True)
class Evidence:
    """A hyperrectangle query: closed bounds on numeric columns, allowed sets on symbolic ones.

    Keys are full column indices. Missing columns are unconstrained.
    """

    numeric_bounds: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    symbolic_allowed: Mapping[int, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        bounds = {int(c): (float(lo), float(hi)) for c, (lo, hi) in self.numeric_bounds.items()}
        for c, (lo, hi) in bounds.items():
            if lo > hi:
                raise ValueError(f"evidence on column {c}: lower bound {lo} exceeds upper bound {hi}")
        allowed = {int(c): frozenset(int(v) for v in vals) for c, vals in self.symbolic_allowed.items()}
        object.__setattr__(self, "numeric_bounds", bounds)
        object.__setattr__(self, "symbolic_allowed", allowed)

    @property
    def is_empty(self) -> bool:
        return not self.numeric_bounds and not self.symbolic_allowed

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        ok = np.ones(X.shape[0], dtype=bool)
        for c, (lo, hi) in self.numeric_bounds.items():
            ok &= (X[:, c] >= lo) & (X[:, c] <= hi)
        for c, vals in self.symbolic_allowed.items():
            ok &= np.isin(X[:, c].astype(int), list(vals))
        return ok

    @classmethod
    def from_json(cls, columns, obj: Mapping) -> "Evidence":
        """Parse ``{name: {"lo": .., "hi": ..}}`` for numeric and ``{name: [labels]}`` for symbolic columns.

        A missing ``lo`` or ``hi`` leaves that side open.
        """
        names = [c.name for c in columns]
        bounds, allowed = {}, {}
        for name, spec in obj.items():
            if name not in names:
                raise KeyError(f"unknown column {name!r}")
            j = names.index(name)
            col = columns[j]
            if col.is_numeric:
                if not isinstance(spec, Mapping):
                    raise ValueError(f"numeric evidence for {name!r} must be an object with lo/hi")
                bounds[j] = (float(spec.get("lo", -math.inf)), float(spec.get("hi", math.inf)))
            else:
                if isinstance(spec, str):
                    spec = [spec]
                allowed[j] = frozenset(col.code(label) for label in spec)
        return cls(bounds, allowed)


# --------------------------------------------------------------------------- densities


def leaf_log_density(leaf: Leaf, X: np.ndarray) -> np.ndarray:
    """Unweighted log density of ``leaf`` at each row of ``X`` (full rows)."""
    X = np.atleast_2d(X)
    out = np.zeros(X.shape[0])
    if leaf.kept:
        s = ica.transform(X[:, list(leaf.kept)], leaf.transform)
        out = out + leaf.transform.log_abs_det_unmixing
        for j, q in enumerate(leaf.component_dists):
            out = out + q.log_pdf(s[:, j])
    for c, value in leaf.dropped:
        match = np.abs(X[:, c] - value) <= CONSTANT_MATCH_TOL * max(1.0, abs(value))
        out = np.where(match, out, -np.inf)
    for c, dist in zip(leaf.symbolic_columns, leaf.symbolic_dists):
        out = out + dist.log_pmf(X[:, c].astype(int))
    return out


def _logsumexp_rows(terms: np.ndarray) -> np.ndarray:
    top = terms.max(axis=1)
    finite = np.isfinite(top)
    safe_top = np.where(finite, top, 0.0)
    with np.errstate(under="ignore"):
        total = np.exp(terms - safe_top[:, None]).sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(finite, safe_top + np.log(total), -np.inf)


def log_density(model: IcTreeModel, X) -> np.ndarray:
    """Log of the mixture density at each row; ``-inf`` where every leaf assigns zero.

    Accepts a single row or an (n, m) block; returns a float for a single row.
    """
    single = np.asarray(X).ndim == 1
    X = model.check_rows(X)
    leaves = [l for l in model.leaves if l.weight > 0]
    terms = np.full((X.shape[0], len(leaves)), -np.inf)
    for k, leaf in enumerate(leaves):
        terms[:, k] = math.log(leaf.weight) + leaf_log_density(leaf, X)
    out = _logsumexp_rows(terms)
    return float(out[0]) if single else out


def avg_log_likelihood(model: IcTreeModel, data) -> tuple[Optional[float], float]:
    """Mean log density over rows with positive density, and the share of zero-density rows.

    The mean is ``None`` when every row has zero density.
    """
    X = data.values if isinstance(data, Dataset) else np.atleast_2d(data)
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    ll = log_density(model, X)
    positive = np.isfinite(ll)
    zero_fraction = 1.0 - positive.mean()
    avg = float(ll[positive].mean()) if positive.any() else None
    return avg, float(zero_fraction)


# --------------------------------------------------------------------------- sampling


def sample_leaf(model: IcTreeModel, leaf: Leaf, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` full rows from a single leaf, ignoring its path constraints."""
    X = np.zeros((n, len(model.columns)))
    if leaf.kept:
        s = np.column_stack([q.sample(n, rng) for q in leaf.component_dists])
        X[:, list(leaf.kept)] = ica.inverse_transform(s, leaf.transform)
    for c, value in leaf.dropped:
        X[:, c] = value
    for c, dist in zip(leaf.symbolic_columns, leaf.symbolic_dists):
        X[:, c] = dist.sample(n, rng)
    return X


def sample(
    model: IcTreeModel,
    n: int,
    rng: np.random.Generator,
    max_retries: int = DEFAULT_MAX_RETRIES,
    return_leaves: bool = False,
):
    """Pick a leaf by weight, draw each component from its QPD, map back.

    Draws that leave their leaf's path region are redrawn within the same
    leaf up to ``max_retries`` times and then discarded.

    Returns ``(rows, discarded)``, plus the generating leaf ids when
    ``return_leaves`` is set.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    leaves = [l for l in model.leaves if l.weight > 0]
    weights = np.array([l.weight for l in leaves])
    # stage 1 per draw; rows keep draw order so any prefix is an unbiased sample
    choice = rng.choice(len(leaves), size=n, p=weights / weights.sum())
    rows = np.zeros((n, len(model.columns)))
    keep = np.ones(n, dtype=bool)
    discarded = 0
    for k, leaf in enumerate(leaves):
        slots = np.flatnonzero(choice == k)
        if slots.size == 0:
            continue
        X = sample_leaf(model, leaf, slots.size, rng)
        bad = np.flatnonzero(model.route(X) != leaf.leaf_id)
        for _ in range(max_retries):
            if bad.size == 0:
                break
            redraw = sample_leaf(model, leaf, bad.size, rng)
            X[bad] = redraw
            bad = bad[model.route(redraw) != leaf.leaf_id]
        rows[slots] = X
        keep[slots[bad]] = False
        discarded += bad.size
    leaf_ids = np.array([l.leaf_id for l in leaves], dtype=int)[choice]
    rows, leaf_ids = rows[keep], leaf_ids[keep]
    if return_leaves:
        return rows, discarded, leaf_ids
    return rows, discarded


# --------------------------------------------------------------------------- evidence views


def component_ranges(leaf: Leaf, lower: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-component extremes of ``W (x - mean)`` over the box ``[lower, upper]`` of the kept columns.

    Equal to the min/max over the box's 2^m vertices (the map is linear and
    separable per column).
    """
    W = leaf.transform.unmixing
    lo_c = lower - leaf.transform.mean
    hi_c = upper - leaf.transform.mean
    a = W * lo_c
    b = W * hi_c
    return np.minimum(a, b).sum(axis=1), np.maximum(a, b).sum(axis=1)


def restrict_leaf(leaf: Leaf, ev: Evidence) -> tuple[Optional[Leaf], float]:
    """Leaf with distributions restricted to the evidence, plus the retained mass.

    ``(None, 0.0)`` when the evidence excludes the leaf entirely.
    """
    retained = 1.0
    for c, value in leaf.dropped:
        if c in ev.numeric_bounds:
            lo, hi = ev.numeric_bounds[c]
            tol = CONSTANT_MATCH_TOL * max(1.0, abs(value))
            if value < lo - tol or value > hi + tol:
                return None, 0.0

    dists = leaf.component_dists
    bounded = [k for k, c in enumerate(leaf.kept) if c in ev.numeric_bounds]
    if bounded:
        lower, upper = leaf.original_bounds()
        for k in bounded:
            lo, hi = ev.numeric_bounds[leaf.kept[k]]
            if math.isfinite(lo):
                lower[k] = lo
            if math.isfinite(hi):
                upper[k] = hi
            if lower[k] > upper[k]:
                return None, 0.0
        s_lo, s_hi = component_ranges(leaf, lower, upper)
        restricted = []
        for q, lo, hi in zip(dists, s_lo, s_hi):
            r, mass = q.restrict(lo, hi)
            if r is None:
                return None, 0.0
            restricted.append(r)
            retained *= mass
        dists = tuple(restricted)

    sym = []
    for c, dist in zip(leaf.symbolic_columns, leaf.symbolic_dists):
        if c in ev.symbolic_allowed:
            r, mass = dist.restrict(ev.symbolic_allowed[c])
            if r is None:
                return None, 0.0
            sym.append(r)
            retained *= mass
        else:
            sym.append(dist)
    return replace(leaf, component_dists=dists, symbolic_dists=tuple(sym)), retained


def apply_evidence(model: IcTreeModel, ev: Evidence) -> IcTreeModel:
    """Approximate conditional view of ``model`` under ``ev``.

    Each leaf's evidence box becomes a parallelepiped in component space; the
    component QPDs keep every interval meeting its bounding box. Leaf weights
    become ``weight * retained mass`` renormalised, which only approximates
    the true posterior leaf probabilities.

    Raises
    ------
    InconsistentEvidence
        If no leaf keeps any mass.
    """
    if ev.is_empty:
        return model
    new_leaves, raw = {}, {}
    for leaf in model.leaves:
        restricted, mass = restrict_leaf(leaf, ev)
        raw[leaf.leaf_id] = leaf.weight * mass
        new_leaves[leaf.leaf_id] = restricted if restricted is not None else leaf
    total = sum(raw.values())
    if total <= 0:
        raise InconsistentEvidence("the evidence excludes every leaf")
    for lid, leaf in new_leaves.items():
        new_leaves[lid] = replace(leaf, weight=raw[lid] / total)
    return model.replace_leaves(new_leaves)


def marginal_probability(
    model: IcTreeModel, ev: Evidence, n_samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Share of unrestricted model samples that satisfy ``ev``, with its binomial standard error."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rows, _ = sample(model, n_samples, rng)
    if rows.shape[0] == 0:
        raise InsufficientAcceptance("every draw was discarded")
    p = float(ev.contains(rows).mean())
    return p, math.sqrt(p * (1.0 - p) / rows.shape[0])


@dataclass(frozen=True)
class MomentEstimate:
    """Empirical moments of the numeric columns; arrays are (len(orders), n_columns)."""

    columns: tuple[str, ...]
    orders: tuple[int, ...]
    raw: np.ndarray
    raw_se: np.ndarray
    central: np.ndarray
    central_se: np.ndarray
    n_accepted: int
    n_drawn: int

    def get(self, column: str, order: int, central: bool = False) -> tuple[float, float]:
        i = self.orders.index(order)
        j = self.columns.index(column)
        if central:
            return float(self.central[i, j]), float(self.central_se[i, j])
        return float(self.raw[i, j]), float(self.raw_se[i, j])

    def to_dict(self) -> dict:
        out = {"n_accepted": self.n_accepted, "n_drawn": self.n_drawn, "moments": {}}
        for j, name in enumerate(self.columns):
            out["moments"][name] = {
                str(k): {
                    "raw": float(self.raw[i, j]),
                    "raw_se": float(self.raw_se[i, j]),
                    "central": float(self.central[i, j]),
                    "central_se": float(self.central_se[i, j]),
                }
                for i, k in enumerate(self.orders)
            }
        return out


def accepted_samples(
    model: IcTreeModel,
    ev: Evidence,
    n_samples: int,
    rng: np.random.Generator,
    max_draw_factor: int = 1000,
) -> tuple[np.ndarray, int]:
    """Sample the evidence view and keep draws that satisfy ``ev`` exactly.

    Stops at ``n_samples`` accepted rows or after ``max_draw_factor * n_samples`` draws.
    """
    view = apply_evidence(model, ev)
    kept, drawn, accepted = [], 0, 0
    budget = max_draw_factor * n_samples
    while accepted < n_samples and drawn < budget:
        batch = min(max(2 * (n_samples - accepted), 1024), budget - drawn)
        rows, _ = sample(view, batch, rng)
        drawn += batch
        rows = rows[ev.contains(rows)]
        kept.append(rows)
        accepted += rows.shape[0]
    rows = np.vstack(kept)[:n_samples] if kept else np.zeros((0, len(model.columns)))
    return rows, drawn


def conditional_moments(
    model: IcTreeModel,
    ev: Evidence,
    orders: Sequence[int],
    n_samples: int,
    rng: np.random.Generator,
    max_draw_factor: int = 1000,
) -> MomentEstimate:
    """Raw and central moments of the numeric columns given ``ev``, with standard errors.

    Central moments of order 2 use the n - 1 divisor.

    Raises
    ------
    InsufficientAcceptance
        If fewer than two draws satisfy the evidence.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    rows, drawn = accepted_samples(model, ev, n_samples, rng, max_draw_factor)
    n = rows.shape[0]
    if n < 2:
        raise InsufficientAcceptance(f"only {n} of {drawn} draws satisfied the evidence")
    numeric = model.numeric_index
    X = rows[:, numeric]
    centered = X - X.mean(axis=0)
    orders = tuple(int(k) for k in orders)
    raw, raw_se, cen, cen_se = [], [], [], []
    for k in orders:
        pk = X**k
        raw.append(pk.mean(axis=0))
        raw_se.append(pk.std(axis=0, ddof=1) / math.sqrt(n))
        ck = centered**k
        divisor = n - 1 if k == 2 else n
        cen.append(ck.sum(axis=0) / divisor)
        cen_se.append(ck.std(axis=0, ddof=1) / math.sqrt(n))
    names = tuple(model.columns[c].name for c in numeric)
    return MomentEstimate(names, orders, np.array(raw), np.array(raw_se), np.array(cen), np.array(cen_se), n, drawn)


# --------------------------------------------------------------------------- MPE


@dataclass(frozen=True)
class MpeResult:
    """Most probable region of the (optionally evidence-restricted) model.

    ``region_lower``/``region_upper`` bound the maximising box in the leaf's
    component space; ``region_vertices`` are its corners mapped back to the
    numeric columns (empty above 16 components).
    """

    leaf_id: int
    density: float
    log_density: float
    region_lower: np.ndarray
    region_upper: np.ndarray
    region_vertices: np.ndarray
    representative: np.ndarray

    def to_dict(self, model: IcTreeModel) -> dict:
        rep = {}
        for j, col in enumerate(model.columns):
            v = self.representative[j]
            rep[col.name] = float(v) if col.is_numeric else col.categories[int(v)]
        return {
            "leaf_id": self.leaf_id,
            "density": self.density,
            "log_density": self.log_density,
            "region_lower": self.region_lower.tolist(),
            "region_upper": self.region_upper.tolist(),
            "region_vertices": self.region_vertices.tolist(),
            "representative": rep,
        }


def _max_runs(q) -> list[tuple[float, float, float]]:
    """Maximal-density intervals merged into contiguous runs."""
    runs: list[list[float]] = []
    for lo, hi, dens in q.max_density_intervals():
        if runs and runs[-1][1] == lo:
            runs[-1][1] = hi
        else:
            runs.append([lo, hi, dens])
    return [tuple(r) for r in runs]


def _leaf_mpe_score(leaf: Leaf) -> float:
    score = math.log(leaf.weight) + (leaf.transform.log_abs_det_unmixing if leaf.kept else 0.0)
    for q in leaf.component_dists:
        score += math.log(q.densities.max())
    for d in leaf.symbolic_dists:
        score += math.log(d.probs.max())
    return score


def _path_rows(model: IcTreeModel, leaf: Leaf, fixed: np.ndarray):
    """Linear path constraints as ``(a_kept, rhs, left)`` over the leaf's kept columns."""
    kept = list(leaf.kept)
    out = []
    for split, left in model.paths()[leaf.leaf_id]:
        if not isinstance(split, LinearSplit):
            continue
        a = np.zeros(len(model.columns))
        a[list(split.columns)] = split.coefficients
        rhs = split.threshold - float(a @ np.where(np.isin(np.arange(a.size), kept), 0.0, fixed))
        out.append((a[kept], rhs, left))
    return out


def _representative(model, leaf, lower, upper, ev: Evidence, fixed: np.ndarray) -> np.ndarray:
    """A point of the region that satisfies the evidence and routes to ``leaf``.

    Prefers the centroid of the region; otherwise the Chebyshev centre of
    region, evidence box and path polytope; otherwise the point satisfying
    evidence and path that violates the region least.
    """
    x = fixed.copy()
    kept = list(leaf.kept)
    if not kept:
        return x
    t = leaf.transform
    x[kept] = ica.inverse_transform(0.5 * (lower + upper), t)
    if ev.contains(x)[0] and model.route(x)[0] == leaf.leaf_id:
        return x

    m = len(kept)
    W = t.unmixing
    shift = W @ t.mean
    A_ub, b_ub, norms, A_eq, b_eq = [], [], [], [], []
    for k in range(m):
        A_ub += [W[k], -W[k]]
        b_ub += [upper[k] + shift[k], -(lower[k] + shift[k])]
        norms += [np.linalg.norm(W[k])] * 2
    region_rows = len(A_ub)
    for k, c in enumerate(kept):
        if c not in ev.numeric_bounds:
            continue
        lo, hi = ev.numeric_bounds[c]
        e = np.eye(m)[k]
        if lo == hi:
            A_eq.append(e)
            b_eq.append(lo)
            continue
        if math.isfinite(hi):
            A_ub.append(e)
            b_ub.append(hi)
            norms.append(1.0)
        if math.isfinite(lo):
            A_ub.append(-e)
            b_ub.append(-lo)
            norms.append(1.0)
    for a, rhs, left in _path_rows(model, leaf, fixed):
        if not np.any(a):
            continue
        sign = 1.0 if left else -1.0
        A_ub.append(sign * a)
        b_ub.append(sign * rhs)
        norms.append(np.linalg.norm(a))
    A_ub = np.array(A_ub)
    b_ub = np.array(b_ub)
    norms = np.array(norms)
    eq = dict(A_eq=np.hstack([np.array(A_eq), np.zeros((len(A_eq), 1))]), b_eq=np.array(b_eq)) if A_eq else {}

    # maximise r subject to a.x + r |a| <= b
    res = linprog(
        np.r_[np.zeros(m), -1.0],
        A_ub=np.hstack([A_ub, norms[:, None]]),
        b_ub=b_ub,
        bounds=[(None, None)] * m + [(0, None)],
        method="highs",
        **eq,
    )
    if res.status == 0:
        x[kept] = res.x[:m]
        return x

    # region constraints become soft: minimise their total violation
    n_soft = region_rows
    A = np.hstack([A_ub, np.zeros((A_ub.shape[0], n_soft))])
    A[np.arange(n_soft), m + np.arange(n_soft)] = -1.0
    eq = dict(A_eq=np.hstack([np.array(A_eq), np.zeros((len(A_eq), n_soft))]), b_eq=np.array(b_eq)) if A_eq else {}
    res = linprog(
        np.r_[np.zeros(m), np.ones(n_soft)],
        A_ub=A,
        b_ub=b_ub,
        bounds=[(None, None)] * m + [(0, None)] * n_soft,
        method="highs",
        **eq,
    )
    if res.status == 0:
        x[kept] = res.x[:m]
        return x
    for k, c in enumerate(kept):
        if c in ev.numeric_bounds:
            lo, hi = ev.numeric_bounds[c]
            x[c] = min(max(x[c], lo), hi)
    return x


def mpe(model: IcTreeModel, ev: Optional[Evidence] = None) -> MpeResult:
    """Most probable explanation as a region.

    The winning leaf maximises ``weight * |det W| * prod max QPD density *
    prod max pmf`` (ties: lowest leaf id). Its region is the box of
    maximal-density intervals in component space; the first contiguous run
    is used when a component has several.

    Raises
    ------
    InconsistentEvidence
        If the evidence excludes every leaf.
    """
    ev = ev if ev is not None else Evidence()
    view = apply_evidence(model, ev)
    best, best_score = None, -math.inf
    for leaf in view.leaves:
        if leaf.weight <= 0:
            continue
        score = _leaf_mpe_score(leaf)
        if best is None or score > best_score + 1e-12 * max(1.0, abs(best_score)):
            best, best_score = leaf, score
    if best is None:
        raise InconsistentEvidence("the evidence excludes every leaf")

    fixed = np.zeros(len(model.columns))
    for c, value in best.dropped:
        fixed[c] = value
    for c, dist in zip(best.symbolic_columns, best.symbolic_dists):
        fixed[c] = dist.mode()[0]

    runs = [_max_runs(q) for q in best.component_dists]
    choice = [r[0] for r in runs]
    lower = np.array([r[0] for r in choice])
    upper = np.array([r[1] for r in choice])
    rep = _representative(model, best, lower, upper, ev, fixed)

    numeric = model.numeric_index
    if best.kept and len(best.kept) <= MAX_REGION_VERTEX_DIM:
        corners = np.array(list(itertools.product(*zip(lower, upper))))
        verts = np.tile(fixed, (corners.shape[0], 1))
        verts[:, list(best.kept)] = ica.inverse_transform(corners, best.transform)
        vertices = verts[:, numeric]
    elif best.kept:
        vertices = np.zeros((0, numeric.size))
    else:
        vertices = fixed[numeric][None, :]
    return MpeResult(
        leaf_id=best.leaf_id,
        density=math.exp(best_score),
        log_density=best_score,
        region_lower=lower,
        region_upper=upper,
        region_vertices=vertices,
        representative=rep,
    )
