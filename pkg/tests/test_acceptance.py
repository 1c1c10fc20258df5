"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line that is printed in the terminal summary.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
from scipy import stats

from conftest import ACCEPTANCE_LINES
from ictrees import data_io, ica
from ictrees.cli import DEFAULT_SWEEP, sweep
from ictrees.distributions import qpd_fit
from ictrees.inference import (
    Evidence,
    avg_log_likelihood,
    conditional_moments,
    log_density,
    mpe,
    sample,
)
from ictrees.tree import Hyperparams, IcTreeModel, fit

# every model trained in this module, for the partition check
TRAINED: dict[str, tuple[IcTreeModel, np.ndarray, np.ndarray]] = {}


def train(name, data, hp, seed=0):
    model = fit(data, hp, seed)
    TRAINED[name] = (model, data.values.min(axis=0), data.values.max(axis=0))
    return model


@contextmanager
def criterion(number, title, budget=None):
    detail = {}
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield detail
        elapsed = time.perf_counter() - start
        detail["seconds"] = round(elapsed, 2)
        if budget is not None:
            assert elapsed < budget, f"took {elapsed:.1f}s, budget {budget}s"
        status = "PASS"
    finally:
        info = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"criterion {number}: {status}  {title}  [{info}]"
        ACCEPTANCE_LINES.append(line)
        print(line)


def test_01_robot_grab_gap():
    with criterion(1, "robot-grab IC-Tree beats baseline by >= 2 nats", budget=5) as d:
        data = data_io.synth_robot_grab(1000, 10, seed=42)
        tr, te = data_io.split(data, 0.1, 42)
        ic = train("grab_ic", tr, Hyperparams(min_samples_leaf_fraction=0.9), 42)
        base = train("grab_base", tr, Hyperparams(min_samples_leaf_fraction=0.9, baseline_mode=True), 42)
        assert len(ic.leaves) == 1 and len(base.leaves) == 1
        ll_ic, zero_ic = avg_log_likelihood(ic, te)
        ll_base, _ = avg_log_likelihood(base, te)
        d.update(ic=round(ll_ic, 3), baseline=round(ll_base, 3), zero_test=round(zero_ic, 3))
        assert ll_ic - ll_base >= 2.0


def test_02_upper_right_mpe():
    with criterion(2, "MPE robot position upper-right of the object in >= 19/20", budget=5) as d:
        data = data_io.synth_robot_grab(1000, 10, seed=42)
        model = train("grab_full", data, Hyperparams(min_samples_leaf_fraction=0.9), 42)
        rng = np.random.default_rng(0)
        hits = 0
        for ox, oy in rng.uniform(0, 10, size=(20, 2)):
            rx, ry = mpe(model, Evidence({0: (ox, ox), 1: (oy, oy)})).representative[2:]
            hits += ox <= rx <= ox + 1 and oy <= ry <= oy + 1
        d["hits"] = f"{hits}/20"
        assert hits >= 19


def test_03_ica_recovery():
    with criterion(3, "FastICA Amari index < 0.1 over 5 seeds", budget=10) as d:
        A = np.array([[2.0, 1.0], [1.0, 1.0]])
        scores = []
        for seed in range(5):
            S = np.random.default_rng(seed).uniform(-1, 1, size=(10_000, 2))
            t = ica.fast_ica(S @ A.T, max_iter=1000, seed=seed)
            scores.append(ica.amari_index(t.unmixing, A))
        d["mean_amari"] = f"{np.mean(scores):.4f}"
        assert np.mean(scores) < 0.1


def mc_single_leaf(model, n, rng):
    leaf = model.leaves[0]
    lo, hi = leaf.support_box()
    s = rng.uniform(lo, hi, size=(n, lo.size))
    X = ica.inverse_transform(s, leaf.transform)
    volume = np.prod(hi - lo) * math.exp(-leaf.transform.log_abs_det_unmixing)
    return volume * np.exp(log_density(model, X)).mean()


def mc_union_box(model, n, rng):
    lows, highs = zip(*(leaf.original_bounds() for leaf in model.leaves))
    lo, hi = np.min(lows, axis=0), np.max(highs, axis=0)
    X = rng.uniform(lo, hi, size=(n, lo.size))
    return np.prod(hi - lo) * np.exp(log_density(model, X)).mean()


def test_04_normalisation():
    with criterion(4, "density integrates to 1 (single +-0.02, multi-leaf +-0.03)", budget=30) as d:
        data = data_io.synth_three_gaussians(3000, seed=0)
        rng = np.random.default_rng(0)
        one = train("gauss_single", data, Hyperparams(min_samples_leaf_fraction=0.9))
        many = train("gauss_multi", data, Hyperparams(min_samples_leaf_fraction=0.05))
        assert len(one.leaves) == 1 and len(many.leaves) > 1
        single = mc_single_leaf(one, 1_000_000, rng)
        multi = mc_union_box(many, 1_000_000, rng)
        d.update(single=f"{single:.4f}", multi=f"{multi:.4f}", leaves=len(many.leaves))
        assert abs(single - 1) <= 0.02
        assert abs(multi - 1) <= 0.03


def test_05_partition_determinism(iris, two_uniforms, two_uniforms_model, two_uniforms_deep, grab_model, grab_data):
    with criterion(5, "random points route to exactly one leaf, path predicates hold", budget=5) as d:
        data2u = two_uniforms[0]
        models = dict(TRAINED)
        box2u = (data2u.values.min(axis=0), data2u.values.max(axis=0))
        models["two_uniforms"] = (two_uniforms_model, *box2u)
        models["two_uniforms_deep"] = (two_uniforms_deep, *box2u)
        models["grab_fixture"] = (grab_model, grab_data.values.min(axis=0), grab_data.values.max(axis=0))
        models["iris"] = (fit(iris, Hyperparams(min_samples_leaf_fraction=0.01), seed=0), iris.values.min(0), iris.values.max(0))
        rng = np.random.default_rng(0)
        for name, (model, lo, hi) in models.items():
            pad = 0.1 * (hi - lo)
            X = rng.uniform(lo - pad, hi + pad, size=(10_000, lo.size))
            for j in model.symbolic_index:
                X[:, j] = rng.integers(0, len(model.columns[j].categories), X.shape[0])
            routed = model.route(X)
            hits = np.zeros(X.shape[0], dtype=int)
            for leaf_id, path in model.paths().items():
                ok = np.ones(X.shape[0], dtype=bool)
                for split, left in path:
                    side = split.goes_left(X)
                    ok &= side if left else ~side
                hits += ok
                assert np.all(routed[ok] == leaf_id)
            assert np.all(hits == 1), name
        d["models"] = len(models)


def test_06_iris_trend(iris):
    with criterion(6, "IRIS sweep: train LL nondecreasing (0.1 slack), zero-test fraction nondecreasing", budget=60) as d:
        reports = sweep("iris", iris, DEFAULT_SWEEP, Hyperparams(), seed=0, test_fraction=0.1)
        train_ll = [r.avg_train_ll for r in reports]
        zero = [r.zero_fraction_test for r in reports]
        d.update(train_ll=[round(v, 2) for v in train_ll], zero_test=[round(v, 3) for v in zero])
        assert all(b >= a - 0.1 for a, b in zip(train_ll, train_ll[1:]))
        assert all(b >= a for a, b in zip(zero, zero[1:]))


def test_07_qpd_suite():
    with criterion(7, "QPD: KS < 0.01, ppf(cdf) <= 1e-9, restrict mass 1 +- 1e-12", budget=10) as d:
        rng = np.random.default_rng(0)
        q = qpd_fit(rng.gamma(2.0, size=5000), 16)
        ks = stats.kstest(q.sample(100_000, rng), q.cdf).statistic
        b = q.breakpoints
        x = rng.uniform(b[0], b[-1], 10_000)
        x = x[np.min(np.abs(x[:, None] - b[None, :]), axis=1) > 1e-6]
        roundtrip = np.max(np.abs(q.ppf(q.cdf(x)) - x))
        worst = 0.0
        for lo, hi in np.sort(rng.uniform(b[0], b[-1], size=(200, 2)), axis=1):
            r, _ = q.restrict(lo, hi)
            worst = max(worst, abs(r.masses.sum() - 1.0))
        d.update(ks=f"{ks:.4f}", ppf_cdf=f"{roundtrip:.1e}", restrict=f"{worst:.1e}")
        assert ks < 0.01 and roundtrip <= 1e-9 and worst <= 1e-12


def test_08_conditional_moments():
    with criterion(8, "E[x_rob | object (5,5)] in [5, 6.1], offset variance 1/12 +- 0.02", budget=30) as d:
        data = data_io.synth_robot_grab(1000, 10, seed=42)
        model = train("grab_moments", data, Hyperparams(min_samples_leaf_fraction=0.9), 42)
        ev = Evidence({0: (4.9, 5.1), 1: (4.9, 5.1)})
        est = conditional_moments(model, ev, [1, 2], 100_000, np.random.default_rng(0))
        mean, _ = est.get("x_rob", 1)
        var, _ = est.get("x_rob", 2, central=True)
        d.update(mean=f"{mean:.3f}", var=f"{var:.4f}", accepted=est.n_accepted, drawn=est.n_drawn)
        assert est.n_accepted == 100_000
        assert 5.0 <= mean <= 6.1
        assert abs(var - 1 / 12) <= 0.02


def test_09_serialisation(tmp_path, iris):
    with criterion(9, "save/load keeps routes exactly and log-densities within 1e-12") as d:
        model = train("iris_ser", iris, Hyperparams(min_samples_leaf_fraction=0.05), 1)
        model.save(tmp_path / "m.json")
        again = IcTreeModel.load(tmp_path / "m.json")
        rng = np.random.default_rng(0)
        lo, hi = iris.values.min(0), iris.values.max(0)
        X = rng.uniform(lo, hi, size=(10_000, 5))
        X[:, 4] = rng.integers(0, 3, 10_000)
        X = np.vstack([X, iris.values])
        same_route = np.array_equal(model.route(X), again.route(X))
        a, b = log_density(model, X), log_density(again, X)
        finite = np.isfinite(a)
        diff = float(np.max(np.abs(a[finite] - b[finite]))) if finite.any() else 0.0
        d.update(routes_equal=same_route, max_logdens_diff=diff)
        assert same_route and np.array_equal(finite, np.isfinite(b)) and diff <= 1e-12


def test_10_sampling_paths(two_uniforms_model):
    with criterion(10, "two_uniforms sampling: discard rate < 5%, no path violations") as d:
        rows, discarded, leaves = sample(two_uniforms_model, 10_000, np.random.default_rng(0), return_leaves=True)
        violations = int((two_uniforms_model.route(rows) != leaves).sum())
        d.update(discard_rate=discarded / 10_000, violations=violations)
        assert discarded / 10_000 < 0.05 and violations == 0
