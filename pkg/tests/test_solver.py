from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfkl.errors import ConfigError, DataError
from mfkl.kernels import KernelSpec, gram, unit_trace_normalize
from mfkl.solver import (
    LabeledSet, combined_gram, compute_bias, decision_function, j_value, kkt_report, mfkl_select,
    project_feasible, recover_eta, solve_skm, write_trace_csv,
)

TOY_X = np.array([[0, 0.5], [1, 0], [3, 0.2], [5, 1.0]])
TOY_Y = np.array([-1, -1, 1, 1.0])


def toy_gram():
    return unit_trace_normalize(gram(KernelSpec("Linear"), TOY_X))


def grid_projection(alpha, y, C, h=1e-4):
    """Brute-force projection for n=2 by scanning the feasible segment."""
    best, arg = np.inf, None
    for a0 in np.arange(0, C + h / 2, h):
        a1 = -y[0] * a0 / y[1]
        if -1e-12 <= a1 <= C + 1e-12:
            cand = np.array([a0, a1])
            dist = np.sum((cand - alpha) ** 2)
            if dist < best:
                best, arg = dist, cand
    return arg


def test_j_value_examples(rng):
    assert j_value(np.zeros(3), np.eye(3), [1, -1, 1]) == 0.0
    a, k = 0.7, 1.3
    assert j_value([a], [[k]], [1]) == pytest.approx(a * a * k / 2 - a)
    K = rng.normal(size=(6, 6))
    K = K @ K.T
    al = rng.uniform(size=6)
    y = rng.choice([-1.0, 1.0], size=6)
    D = np.diag(y)
    assert j_value(al, K, y, d=2.0) == pytest.approx(al @ D @ K @ D @ al / 8 - al.sum())
    with pytest.raises(DataError):
        j_value(np.ones(2), np.eye(3), [1, -1, 1])


def test_projection_examples():
    y = np.array([1.0, -1.0])
    feasible = np.array([0.3, 0.3])
    np.testing.assert_allclose(project_feasible(feasible, y, 1.0), feasible)
    for alpha in ([2.0, 0.0], [1.5, 1.5], [-0.4, 0.9]):
        got = project_feasible(np.array(alpha), y, 1.0)
        np.testing.assert_allclose(got, grid_projection(np.array(alpha), y, 1.0), atol=1e-4)
    np.testing.assert_allclose(project_feasible(np.array([2.0, 0.0]), y, 1.0), [1.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 15), C=st.floats(0.1, 10))
def test_projection_is_feasible_and_optimal(seed, n, C):
    r = np.random.default_rng(seed)
    y = r.choice([-1.0, 1.0], size=n)
    y[0], y[1] = 1.0, -1.0
    v = r.normal(scale=2 * C, size=n)
    p = project_feasible(v, y, C)
    assert np.all(p >= -1e-12) and np.all(p <= C + 1e-12)
    assert abs(p @ y) <= 1e-8
    # Optimality: no feasible random point is closer.
    for _ in range(20):
        q = project_feasible(r.uniform(0, C, n), y, C)
        assert np.sum((v - p) ** 2) <= np.sum((v - q) ** 2) + 1e-9


def test_single_kernel_toy_matches_qp_oracle():
    # Frozen from a one-off conic QP solve of the standard SVM dual.
    sol = solve_skm([toy_gram()], TOY_Y, C=1.0)
    np.testing.assert_allclose(sol.alpha, [0.31861386, 1.0, 1.0, 0.31861386], atol=1e-6)
    assert sol.objective == pytest.approx(-1.9186138613860562, abs=1e-9)
    assert sol.eta.tolist() == [1.0]


def test_hard_margin_toy_analytic():
    # Support vectors (1,0) and (3,0.2); raw trace 36.29, n = 4.
    a = 2 * 36.29 / (4 * 4.04)
    sol = solve_skm([toy_gram()], TOY_Y, C=10.0)
    np.testing.assert_allclose(sol.alpha, [0, a, a, 0], atol=1e-6)
    assert sol.objective == pytest.approx(-a, abs=1e-9)
    f = decision_function(sol.alpha, TOY_Y, toy_gram().values, sol.bias)
    np.testing.assert_allclose(f[1:3], [-1, 1], atol=1e-8)
    assert np.all(np.sign(f) == TOY_Y)


def test_all_positive_labels_degenerate():
    K = toy_gram()
    sol = solve_skm([K], np.ones(4), C=1.0)
    assert sol.degenerate
    assert np.all(sol.alpha == 0) and sol.objective == 0.0
    assert sol.kkt_residuals["cond1_alpha_slackness"] == 0.0
    assert sol.kkt_residuals["cond2_box_slackness"] == 0.0


def test_rejects_unnormalised_gram():
    G = gram(KernelSpec("Linear"), TOY_X)
    with pytest.raises(DataError, match="unit-trace"):
        solve_skm([G], TOY_Y)
    with pytest.raises(ConfigError):
        solve_skm([toy_gram()], TOY_Y, C=0.0)


def _blobs(rng, n=16):
    X = np.vstack([rng.normal(-1, 0.6, size=(n // 2, 2)), rng.normal(1, 0.6, size=(n // 2, 2))])
    y = np.array([-1.0] * (n // 2) + [1.0] * (n // 2))
    return X, y


def test_duplicated_kernel_split(rng):
    X, y = _blobs(rng)
    K = unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=1.0), X))
    single = solve_skm([K], y)
    double = solve_skm([K, K], y)
    assert double.eta.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(double.eta, [0.5, 0.5], atol=1e-4)
    Kc = combined_gram(double.eta, [K, K])
    f2 = decision_function(double.alpha, y, Kc, double.bias)
    f1 = decision_function(single.alpha, y, K.values, single.bias)
    np.testing.assert_allclose(f2, f1, atol=1e-3)


def test_informative_kernel_wins(rng):
    X, y = _blobs(rng, 20)
    noise = rng.uniform(size=(20, 2))
    K1 = unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=1.0), X))
    K2 = unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=0.3), noise))
    sol = solve_skm([K1, K2], y)
    assert int(np.argmax(sol.eta)) == 0
    assert sol.eta[1] <= 1e-3


def test_kkt_converged_and_perturbed(rng):
    X, y = _blobs(rng)
    grams = [unit_trace_normalize(gram(KernelSpec(f, sigma=1.0), X)) for f in ("Gaussian", "RBF")]
    grams.append(unit_trace_normalize(gram(KernelSpec("Linear"), X)))
    sol = solve_skm(grams, y, C=1.0)
    assert max(sol.kkt_residuals.values()) < 1e-4
    bumped = type(sol)(**{**sol.__dict__, "alpha": sol.alpha.copy()})
    i = int(np.argmax((sol.alpha > 1e-6) & (sol.alpha < 0.9)))
    bumped.alpha[i] += 0.1
    assert kkt_report(bumped, grams, y)["cond1_alpha_slackness"] > 1e-3


def test_bias_without_free_vectors():
    y = np.array([1.0, 1.0, -1.0, -1.0])
    K = np.diag([1.0, 3.0, 1.0, 2.0])
    alpha = np.array([1.0, 0.0, 1.0, 0.0])  # C = 1: two at the bound, two at zero
    f0 = K @ (alpha * y)  # (1, 0, -1, 0)
    # Bounded +1 needs b <= 0, bounded -1 needs b >= 0, the zeros need b >= 1 and b <= -1:
    # the interval is empty, so the midpoint rule applies.
    assert compute_bias(alpha, y, K, C=1.0) == pytest.approx(-(f0[2:].max() + f0[:2].min()) / 2)
    # Every multiplier at C: bounded +1 needs b <= 1 - f0, bounded -1 needs b >= -1 - f0.
    alpha = np.ones(4)
    K = np.diag([0.5, 0.5, 0.5, 0.5])
    f0 = K @ (alpha * y)
    lo, hi = -1 - f0[2], 1 - f0[0]  # -0.5 and 0.5
    assert lo < hi
    assert compute_bias(alpha, y, K, C=1.0) == pytest.approx((lo + hi) / 2)
    assert compute_bias(np.zeros(3), np.ones(3), np.eye(3), 1.0) == 1.0
    np.testing.assert_allclose(decision_function(np.zeros(4), y, K, 0.25), 0.25)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), C=st.sampled_from([0.05, 0.1, 1.0, 10.0]))
def test_kkt_small_on_random_multikernel(seed, C):
    r = np.random.default_rng(seed)
    n = int(r.integers(6, 16))
    X = r.normal(size=(n, 3))
    y = np.where(X[:, 0] + 0.5 * r.normal(size=n) > 0, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    specs = [KernelSpec("Gaussian", sigma=1.0), KernelSpec("Linear"),
             KernelSpec("Polynomial", alpha=0.3, c=1.0, d=2)]
    grams = [unit_trace_normalize(gram(s, X)) for s in specs]
    sol = solve_skm(grams, y, C, max_iter=500)
    assert max(sol.kkt_residuals.values()) < 1e-4


def test_duplicated_test_point_decision(rng):
    X, y = _blobs(rng)
    K = unit_trace_normalize(gram(KernelSpec("Linear"), X))
    sol = solve_skm([K], y)
    f_train = decision_function(sol.alpha, y, K.values, sol.bias)
    f_dup = decision_function(sol.alpha, y, K.values[3:4], sol.bias)
    assert f_dup[0] == f_train[3]


def test_recover_eta_single_and_inactive(rng):
    X, y = _blobs(rng)
    K = unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=1.0), X))
    eta, act = recover_eta(np.full(16, 0.1), [K], y, C=1.0)
    assert eta.tolist() == [1.0] and act == (0,)
    Z = unit_trace_normalize(gram(KernelSpec("Linear", c=0.0), np.ones((16, 1)) * 2.0))
    eta, act = recover_eta(np.full(16, 0.1), [K, Z], y, C=1.0)
    assert act == (0,) and eta[1] == 0.0


def test_feasibility_determinism_and_trace(rng, tmp_path):
    X, y = _blobs(rng, 14)
    grams = [unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=s), X)) for s in (0.5, 2.0)]
    a = solve_skm(grams, y, C=0.5)
    b = solve_skm(grams, y, C=0.5)
    assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.eta, b.eta)
    assert np.all(a.alpha >= 0) and np.all(a.alpha <= 0.5) and abs(a.alpha @ y) <= 1e-8
    Js = np.array([t[1] for t in a.trace])
    # The returned point is at least as good as every iterate visited.
    assert a.objective <= Js.min() + 1e-12
    best = np.minimum.accumulate(Js[:-1])
    assert np.all(np.diff(best) <= 0)
    path = write_trace_csv(a, tmp_path / "trace.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,J,max_kernel" and len(lines) == len(a.trace) + 1


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.2, 5.0))
def test_scale_coherence(seed, scale):
    r = np.random.default_rng(seed)
    X, y = _blobs(r, 10)
    grams = [unit_trace_normalize(gram(KernelSpec(f, sigma=1.0), X)) for f in ("Gaussian", "RBF")]
    sol = solve_skm(grams, y, max_iter=300)
    J1 = np.array([j_value(sol.alpha, G, y, 1.0) for G in grams])
    J2 = np.array([j_value(sol.alpha, G, y, scale) for G in grams])
    assert np.argmax(J1) == np.argmax(J2)


def test_labeled_set_problems():
    K = toy_gram()
    assert len(LabeledSet({"f": [K]}, TOY_Y).binary_problems()) == 1
    two = LabeledSet({"f": [K]}, np.array(["a", "a", "b", "b"])).binary_problems()
    assert len(two) == 1 and two[0][1].tolist() == [-1, -1, 1, 1]
    many = LabeledSet({"f": [K]}, np.array(["a", "b", "c", "a"])).binary_problems()
    assert [n for n, _ in many] == ["a", "b", "c"]
    with pytest.raises(DataError):
        LabeledSet({}, TOY_Y)
    with pytest.raises(DataError):
        LabeledSet({"f": []}, TOY_Y)


def test_mfkl_trivial_and_identical_features(rng):
    X, y = _blobs(rng)
    K = unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=1.0), X))
    p = mfkl_select(LabeledSet({"only": [K]}, y))
    assert p.pairs == [("only", K.spec, 1.0)]
    specs = [KernelSpec("Linear"), KernelSpec("Gaussian", sigma=1.0)]
    blk = [unit_trace_normalize(gram(s, X)) for s in specs]
    p = mfkl_select(LabeledSet({"a": blk, "b": blk}, y))
    assert p.pairs[0][1] == p.pairs[1][1]
    np.testing.assert_allclose([b for _, _, b in p.pairs], [0.5, 0.5], atol=1e-4)
    assert sum(p.betas.values()) == pytest.approx(1.0)
    assert "provenance" in p.to_dict()


def test_mfkl_all_dropped_raises(rng):
    X, y = _blobs(rng)
    K = unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=1.0), X))
    with pytest.raises(ConfigError, match="threshold"):
        mfkl_select(LabeledSet({"a": [K], "b": [K]}, y), threshold=0.9)


def test_mfkl_threads_env(rng, monkeypatch):
    X, y = _blobs(rng)
    blk = [unit_trace_normalize(gram(KernelSpec("Gaussian", sigma=s), X)) for s in (0.5, 2.0)]
    data = LabeledSet({"a": blk, "b": blk[::-1]}, y)
    serial = mfkl_select(data)
    monkeypatch.setenv("MFKL_THREADS", "4")
    threaded = mfkl_select(data)
    assert serial.to_dict() == threaded.to_dict()
