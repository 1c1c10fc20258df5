"""IC-Tree structure and learner.

Every node decorrelates its numeric block with FastICA and searches for the
best impurity-reducing cut along the resulting component axes (and one-vs-rest
cuts on symbolic columns). A cut ``s_j < t`` on component ``j`` is stored as a
hyperplane ``sum_k a_k x_k < t + sum_k a_k mean_k`` in the original
coordinates, so routing never needs the node transform.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import ica
from .data_io import ColumnSpec, Dataset
from .distributions import DEFAULT_RESOLUTION, Multinomial, Qpd, multinomial_fit, qpd_fit
from .errors import DegenerateSupport, SingularCovariance, UnknownCategory

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SCORE_TIE_TOL = 1e-12
CONSTANT_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class Hyperparams:
    min_samples_leaf_fraction: float = 0.1
    max_depth: Optional[int] = None
    qpd_resolution: int = DEFAULT_RESOLUTION
    ica_max_iter: int = 1000
    ica_tol: float = 1e-4
    min_improvement: float = 1e-4
    baseline_mode: bool = False

    def __post_init__(self):
        if not 0.0 < self.min_samples_leaf_fraction < 1.0:
            raise ValueError("min_samples_leaf_fraction must lie in (0, 1)")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.qpd_resolution < 1 or self.ica_max_iter < 1:
            raise ValueError("qpd_resolution and ica_max_iter must be positive")
        if self.ica_tol <= 0 or self.min_improvement < 0:
            raise ValueError("ica_tol must be positive and min_improvement non-negative")


def _dot_rows(coefficients: np.ndarray, block: np.ndarray) -> np.ndarray:
    # Fixed left-to-right summation order, independent of the batch size.
    acc = np.zeros(block.shape[0])
    for j, a in enumerate(coefficients):
        acc = acc + a * block[:, j]
    return acc


@dataclass(frozen=True)
class LinearSplit:
    """Oblique cut ``sum_j coefficients[j] * x[columns[j]] < threshold`` (left side)."""

    columns: tuple[int, ...]
    coefficients: np.ndarray
    threshold: float

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float)
        if coef.shape != (len(self.columns),) or not np.any(coef != 0):
            raise ValueError("coefficients must be a nonzero vector over the split columns")
        coef.setflags(write=False)
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "threshold", float(self.threshold))

    @classmethod
    def from_centered(cls, columns, coefficients, center, offset) -> "LinearSplit":
        """Absorb the centering: ``a . (x - center) < offset`` becomes ``a . x < offset + a . center``."""
        coefficients = np.asarray(coefficients, dtype=float)
        shift = float(_dot_rows(coefficients, np.asarray(center, dtype=float)[None, :])[0])
        return cls(tuple(columns), coefficients, offset + shift)

    def score(self, X: np.ndarray) -> np.ndarray:
        return _dot_rows(self.coefficients, np.atleast_2d(X)[:, list(self.columns)])

    def goes_left(self, X: np.ndarray) -> np.ndarray:
        return self.score(X) < self.threshold

    def param_count(self) -> int:
        return len(self.columns) + 1

    def to_dict(self) -> dict:
        return {
            "type": "linear",
            "columns": list(self.columns),
            "coefficients": self.coefficients.tolist(),
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class SymbolicSplit:
    """One-vs-rest cut: rows whose ``column`` equals ``value`` go left."""

    column: int
    value: int

    def goes_left(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X)[:, self.column] == self.value

    def param_count(self) -> int:
        return 1

    def to_dict(self) -> dict:
        return {"type": "symbolic", "column": self.column, "value": self.value}


Split = Union[LinearSplit, SymbolicSplit]


def split_from_dict(d: dict) -> Split:
    if d["type"] == "linear":
        return LinearSplit(tuple(d["columns"]), np.asarray(d["coefficients"], dtype=float), d["threshold"])
    if d["type"] == "symbolic":
        return SymbolicSplit(int(d["column"]), int(d["value"]))
    raise ValueError(f"unknown split type {d['type']!r}")


@dataclass(frozen=True)
class Leaf:
    """A fully factorised distribution in the leaf's component coordinates.

    ``kept`` lists the full column indices entering ``transform`` (in order);
    ``dropped`` holds ``(column, value)`` for numeric columns that were
    constant on the leaf's rows.
    """

    leaf_id: int
    weight: float
    n_rows: int
    kept: tuple[int, ...]
    transform: ica.IcaTransform
    component_dists: tuple[Qpd, ...]
    symbolic_columns: tuple[int, ...]
    symbolic_dists: tuple[Multinomial, ...]
    dropped: tuple[tuple[int, float], ...] = ()

    @property
    def n_components(self) -> int:
        return len(self.kept)

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the component-space support."""
        lo = np.array([q.lower for q in self.component_dists])
        hi = np.array([q.upper for q in self.component_dists])
        return lo, hi

    def original_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box (over ``kept`` columns) of the support parallelepiped."""
        lo, hi = self.support_box()
        A = self.transform.mixing
        low = np.minimum(A * lo, A * hi).sum(axis=1) + self.transform.mean
        high = np.maximum(A * lo, A * hi).sum(axis=1) + self.transform.mean
        return low, high

    def param_count(self) -> int:
        m = self.n_components
        count = m * m + m + sum(q.param_count() for q in self.component_dists)
        count += sum(d.n_categories - 1 for d in self.symbolic_dists)
        return count + 1

    def to_dict(self) -> dict:
        return {
            "leaf_id": self.leaf_id,
            "weight": self.weight,
            "n_rows": self.n_rows,
            "kept": list(self.kept),
            "transform": self.transform.to_dict(),
            "component_dists": [q.to_dict() for q in self.component_dists],
            "symbolic_columns": list(self.symbolic_columns),
            "symbolic_dists": [d.to_dict() for d in self.symbolic_dists],
            "dropped": [[c, v] for c, v in self.dropped],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Leaf":
        return cls(
            leaf_id=int(d["leaf_id"]),
            weight=float(d["weight"]),
            n_rows=int(d["n_rows"]),
            kept=tuple(int(c) for c in d["kept"]),
            transform=ica.IcaTransform.from_dict(d["transform"]),
            component_dists=tuple(Qpd.from_dict(q) for q in d["component_dists"]),
            symbolic_columns=tuple(int(c) for c in d["symbolic_columns"]),
            symbolic_dists=tuple(Multinomial.from_dict(m) for m in d["symbolic_dists"]),
            dropped=tuple((int(c), float(v)) for c, v in d["dropped"]),
        )


@dataclass(frozen=True)
class InnerNode:
    split: Split
    left: "Node"
    right: "Node"


Node = Union[InnerNode, Leaf]


def _node_to_dict(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.to_dict()}
    return {"split": node.split.to_dict(), "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(d: dict) -> Node:
    if "leaf" in d:
        return Leaf.from_dict(d["leaf"])
    return InnerNode(split_from_dict(d["split"]), _node_from_dict(d["left"]), _node_from_dict(d["right"]))


@dataclass(frozen=True)
class IcTreeModel:
    columns: tuple[ColumnSpec, ...]
    root: Node
    hyperparams: Hyperparams
    n_train: int
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def leaves(self) -> list[Leaf]:
        out: list[Leaf] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    @property
    def numeric_index(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.columns) if c.is_numeric], dtype=int)

    @property
    def symbolic_index(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.columns) if not c.is_numeric], dtype=int)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def inner_nodes(self) -> list[InnerNode]:
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, InnerNode):
                out.append(node)
                stack.extend([node.right, node.left])
        return out

    def check_rows(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.columns):
            raise ValueError(f"rows have {X.shape[1]} cells, model has {len(self.columns)} columns")
        for j in self.symbolic_index:
            codes = X[:, j]
            bad = (codes < 0) | (codes >= len(self.columns[j].categories)) | (codes != np.floor(codes))
            if np.any(bad):
                raise UnknownCategory("category code out of range", column=self.columns[j].name)
        return X

    def route(self, X) -> np.ndarray:
        """Leaf id for every row; a linear split sends ``score == threshold`` right."""
        X = self.check_rows(X)
        out = np.empty(X.shape[0], dtype=int)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if isinstance(node, Leaf):
                out[rows] = node.leaf_id
                continue
            if rows.size == 0:
                continue
            left = node.split.goes_left(X[rows])
            stack.append((node.left, rows[left]))
            stack.append((node.right, rows[~left]))
        return out

    def paths(self) -> dict[int, list[tuple[Split, bool]]]:
        """For every leaf id, the ``(split, went_left)`` constraints from the root."""
        out = {}
        stack = [(self.root, [])]
        while stack:
            node, path = stack.pop()
            if isinstance(node, Leaf):
                out[node.leaf_id] = path
            else:
                stack.append((node.left, path + [(node.split, True)]))
                stack.append((node.right, path + [(node.split, False)]))
        return out

    def param_count(self) -> int:
        return sum(n.split.param_count() for n in self.inner_nodes()) + sum(l.param_count() for l in self.leaves)

    def replace_leaves(self, leaves: dict[int, Leaf]) -> "IcTreeModel":
        """Copy of the model with leaves swapped by id (used for evidence views)."""

        def rebuild(node: Node) -> Node:
            if isinstance(node, Leaf):
                return leaves.get(node.leaf_id, node)
            return InnerNode(node.split, rebuild(node.left), rebuild(node.right))

        return replace(self, root=rebuild(self.root))

    def to_dict(self) -> dict:
        return {
            "format": "ictrees-model",
            "schema_version": SCHEMA_VERSION,
            "matrix_layout": "row-major",
            "columns": [c.to_dict() for c in self.columns],
            "hyperparams": asdict(self.hyperparams),
            "n_train": self.n_train,
            "seed": self.seed,
            "metadata": self.metadata,
            "root": _node_to_dict(self.root),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IcTreeModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {d.get('schema_version')!r}")
        return cls(
            columns=tuple(ColumnSpec.from_dict(c) for c in d["columns"]),
            root=_node_from_dict(d["root"]),
            hyperparams=Hyperparams(**d["hyperparams"]),
            n_train=int(d["n_train"]),
            seed=int(d["seed"]),
            metadata=dict(d.get("metadata", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "IcTreeModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def param_count(model: IcTreeModel) -> int:
    return model.param_count()


def route(model: IcTreeModel, X) -> np.ndarray:
    return model.route(X)


# --------------------------------------------------------------------------- learning


@dataclass(frozen=True)
class NodeBasis:
    kept: tuple[int, ...]
    dropped: tuple[tuple[int, float], ...]
    transform: ica.IcaTransform
    components: np.ndarray
    inherited: bool = False


def _degenerate(components: np.ndarray) -> bool:
    return bool(components.shape[1]) and bool(np.any(np.all(components == components[:1], axis=0)))


def _fit_basis(
    X: np.ndarray, numeric: np.ndarray, hp: Hyperparams, seed: int, inherited: Optional[NodeBasis] = None
) -> NodeBasis:
    """Decorrelating basis of a node's numeric block.

    Constant columns are dropped before ICA. When the remaining block is too
    small or rank deficient for ICA, the nearest ancestor's ICA basis is
    reused if it stays non-degenerate on these rows; otherwise the identity
    around the column means is used.
    """
    block = X[:, numeric]
    constant = np.all(block == block[:1], axis=0)
    kept = tuple(int(c) for c in numeric[~constant])
    dropped = tuple((int(c), float(X[0, c])) for c in numeric[constant])
    sub = X[:, list(kept)]
    if kept and not hp.baseline_mode:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                transform = ica.fast_ica(sub, max_iter=hp.ica_max_iter, tol=hp.ica_tol, seed=seed)
            components = ica.transform(sub, transform)
            if not _degenerate(components):
                return NodeBasis(kept, dropped, transform, components)
        except SingularCovariance:
            pass
        if inherited is not None and inherited.kept:
            components = ica.transform(X[:, list(inherited.kept)], inherited.transform)
            consistent = all(np.all(X[:, c] == v) for c, v in inherited.dropped)
            if consistent and not _degenerate(components):
                return NodeBasis(inherited.kept, inherited.dropped, inherited.transform, components, inherited=True)
    transform = ica.IcaTransform.identity(sub.mean(axis=0) if kept else np.zeros(0))
    components = ica.transform(sub, transform) if kept else np.zeros((X.shape[0], 0))
    return NodeBasis(kept, dropped, transform, components)


@dataclass(frozen=True)
class SplitCandidate:
    kind: str  # "numeric" or "symbolic"
    index: int  # component axis, or position among the symbolic columns
    threshold: float  # numeric: component-space cut; symbolic: category code
    improvement: float
    gap: float


def _sse_from_sums(count, s1, s2):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.clip(s2 - s1 * s1 / count, 0.0, None)


def _entropy_from_counts(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / total
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def best_split(
    components: np.ndarray,
    symbolic: np.ndarray,
    n_categories: Sequence[int],
    min_rows: int,
) -> Optional[SplitCandidate]:
    """Best admissible cut of a node.

    The score of a candidate is the uniform average, over every variable with
    nonzero impurity at the node, of its relative impurity reduction
    (variance for component axes, Shannon entropy for symbolic columns).
    Numeric cuts sit at midpoints between consecutive distinct values; ties
    go to the cut in the widest empty gap, then to the lowest axis.
    """
    components = np.asarray(components, dtype=float)
    n, m = components.shape
    symbolic = np.asarray(symbolic, dtype=int).reshape(n, -1)
    min_rows = max(int(min_rows), 1)
    if n < 2 * min_rows:
        return None

    tot1 = components.sum(axis=0)
    tot2 = (components * components).sum(axis=0)
    sse_parent = _sse_from_sums(n, tot1, tot2)
    num_active = sse_parent > 1e-12 * np.maximum(tot2, 1.0)
    onehots = [np.eye(k)[symbolic[:, c]] for c, k in enumerate(n_categories)]
    sym_counts = [oh.sum(axis=0) for oh in onehots]
    h_parent = np.array([_entropy_from_counts(c) for c in sym_counts])
    sym_active = h_parent > 1e-12
    n_active = int(num_active.sum() + sym_active.sum())
    if n_active == 0:
        return None

    def score(nl, sum1_l, sum2_l, counts_l):
        # nl: (c,), sum*_l: (c, m), counts_l: list of (c, k)
        nr = n - nl
        total = np.zeros(nl.shape[0])
        if m:
            sse_l = _sse_from_sums(nl[:, None], sum1_l, sum2_l)
            sse_r = _sse_from_sums(nr[:, None], tot1 - sum1_l, tot2 - sum2_l)
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = (sse_parent - sse_l - sse_r) / sse_parent
            total += np.where(num_active, rel, 0.0).sum(axis=1)
        for c, cl in enumerate(counts_l):
            if not sym_active[c]:
                continue
            h_l = _entropy_from_counts(cl)
            h_r = _entropy_from_counts(sym_counts[c] - cl)
            total += (h_parent[c] - (nl * h_l + nr * h_r) / n) / h_parent[c]
        return total / n_active

    best: Optional[SplitCandidate] = None

    def consider(cand: SplitCandidate):
        nonlocal best
        if best is None or cand.improvement > best.improvement + SCORE_TIE_TOL:
            best = cand
        elif abs(cand.improvement - best.improvement) <= SCORE_TIE_TOL and cand.gap > best.gap:
            best = cand

    sizes = np.arange(1, n)
    admissible = (sizes >= min_rows) & (n - sizes >= min_rows)
    for j in range(m):
        order = np.argsort(components[:, j], kind="stable")
        sorted_c = components[order]
        values = sorted_c[:, j]
        ok = admissible & (values[1:] > values[:-1])
        if not ok.any():
            continue
        pos = sizes[ok]
        cs1 = np.cumsum(sorted_c, axis=0)[pos - 1]
        cs2 = np.cumsum(sorted_c * sorted_c, axis=0)[pos - 1]
        counts = [np.cumsum(oh[order], axis=0)[pos - 1] for oh in onehots]
        scores = score(pos.astype(float), cs1, cs2, counts)
        gaps = values[pos] - values[pos - 1]
        # best score, then widest gap among ties
        top = scores.max()
        tied = np.flatnonzero(scores >= top - SCORE_TIE_TOL)
        k = tied[np.argmax(gaps[tied])]
        i = pos[k]
        consider(SplitCandidate("numeric", j, 0.5 * (values[i - 1] + values[i]), float(scores[k]), float(gaps[k])))

    for c, k_cat in enumerate(n_categories):
        if not sym_active[c]:
            continue
        for value in range(k_cat):
            left = symbolic[:, c] == value
            nl = int(left.sum())
            if nl < min_rows or n - nl < min_rows:
                continue
            sub = components[left]
            counts = [oh[left].sum(axis=0)[None, :] for oh in onehots]
            s = score(np.array([float(nl)]), sub.sum(axis=0)[None, :], (sub * sub).sum(axis=0)[None, :], counts)
            consider(SplitCandidate("symbolic", c, float(value), float(s[0]), 0.0))
    return best


def _fit_leaf(X, rows, basis: NodeBasis, symbolic, n_total, hp: Hyperparams, leaf_id: int) -> Leaf:
    dists = []
    transform = basis.transform
    components = basis.components
    try:
        dists = [qpd_fit(components[:, j], hp.qpd_resolution) for j in range(components.shape[1])]
    except (DegenerateSupport, ValueError):
        sub = X[np.ix_(rows, list(basis.kept))]
        transform = ica.IcaTransform.identity(sub.mean(axis=0))
        dists = [qpd_fit(c, hp.qpd_resolution) for c in ica.transform(sub, transform).T]
    sym_dists = tuple(
        multinomial_fit(X[rows, c].astype(int), len(cats)) for c, cats in symbolic
    )
    return Leaf(
        leaf_id=leaf_id,
        weight=len(rows) / n_total,
        n_rows=len(rows),
        kept=basis.kept,
        transform=transform,
        component_dists=tuple(dists),
        symbolic_columns=tuple(c for c, _ in symbolic),
        symbolic_dists=sym_dists,
        dropped=basis.dropped,
    )


def _node_seed(seed: int, path: tuple[int, ...]) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=path)
    return int(ss.generate_state(1)[0])


def min_rows_for(fraction: float, n_total: int) -> int:
    # tolerate float noise such as 0.2 * 1000 == 200.00000000000003
    return max(1, math.ceil(fraction * n_total - 1e-9))


def fit(data: Dataset, hp: Hyperparams = Hyperparams(), seed: int = 0) -> IcTreeModel:
    """Grow an IC-Tree on ``data``.

    A node becomes a leaf when no cut keeps both children at
    ``min_samples_leaf_fraction * n`` rows or more, when ``max_depth`` is
    reached, or when the best relative impurity reduction is below
    ``min_improvement``. Leaf weights are training-row fractions.
    """
    X = np.asarray(data.values, dtype=float)
    n_total = data.n
    if n_total < 2:
        raise ValueError("fitting needs at least two rows")
    numeric = data.numeric_index
    symbolic = [(int(c), data.columns[c].categories) for c in data.symbolic_index]
    sym_cols = [c for c, _ in symbolic]
    n_cats = [len(cats) for _, cats in symbolic]
    min_rows = min_rows_for(hp.min_samples_leaf_fraction, n_total)
    counter = {"leaf": 0, "ica_not_converged": 0, "inherited_basis": 0}

    def grow(rows: np.ndarray, depth: int, path: tuple[int, ...], inherited: Optional[NodeBasis]) -> Node:
        Xn = X[rows]
        basis = _fit_basis(Xn, numeric, hp, _node_seed(seed, path), inherited)
        if not basis.transform.converged:
            counter["ica_not_converged"] += 1
        if basis.inherited:
            counter["inherited_basis"] += 1
        own = basis if not basis.inherited and not _is_identity(basis.transform) else inherited
        cand = None
        if hp.max_depth is None or depth < hp.max_depth:
            cand = best_split(basis.components, Xn[:, sym_cols].astype(int), n_cats, min_rows)
        if cand is not None and cand.improvement >= hp.min_improvement:
            if cand.kind == "numeric":
                coef = np.zeros(len(numeric))
                pos = {c: k for k, c in enumerate(numeric)}
                for k, c in enumerate(basis.kept):
                    coef[pos[c]] = basis.transform.unmixing[cand.index, k]
                split: Split = LinearSplit.from_centered(
                    tuple(numeric), coef, _full_mean(basis, numeric, Xn), cand.threshold
                )
            else:
                split = SymbolicSplit(sym_cols[cand.index], int(cand.threshold))
            left = split.goes_left(Xn)
            if min(left.sum(), (~left).sum()) >= min_rows:
                return InnerNode(
                    split,
                    grow(rows[left], depth + 1, path + (0,), own),
                    grow(rows[~left], depth + 1, path + (1,), own),
                )
        leaf = _fit_leaf(X, rows, basis, symbolic, n_total, hp, counter["leaf"])
        counter["leaf"] += 1
        return leaf

    root = grow(np.arange(n_total), 0, (), None)
    meta = {k: counter[k] for k in ("ica_not_converged", "inherited_basis")}
    meta["n_leaves"] = counter["leaf"]
    logger.debug("grew %d leaves on %d rows", counter["leaf"], n_total)
    return IcTreeModel(tuple(data.columns), root, hp, n_total, int(seed), meta)


def _is_identity(t: ica.IcaTransform) -> bool:
    return t.log_abs_det_unmixing == 0.0 and np.array_equal(t.unmixing, np.eye(t.dim))


def _full_mean(basis: NodeBasis, numeric: np.ndarray, Xn: np.ndarray) -> np.ndarray:
    # centre over all numeric columns; dropped columns carry zero coefficients
    pos = {c: k for k, c in enumerate(numeric)}
    mean = np.zeros(len(numeric))
    for k, c in enumerate(basis.kept):
        mean[pos[c]] = basis.transform.mean[k]
    for c, v in basis.dropped:
        mean[pos[c]] = v
    return mean
