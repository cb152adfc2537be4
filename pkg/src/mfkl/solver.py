"""Support kernel machine solver and multi-feature kernel selection (MFKL).

The solver minimises the non-smooth convex objective

    J(alpha) = max_j  1/(2 d_j^2) alpha^T D(y) K_j D(y) alpha - e^T alpha

over ``{0 <= alpha <= C, alpha^T y = 0}``.  It runs in two stages:

1. projected subgradient descent with diminishing steps ``a / sqrt(t)``,
   keeping the best iterate (the trace of this stage is what the
   diagnostic CSV dump records);
2. a refinement that maximises the concave dual over the kernel
   weights ``eta`` on the simplex, each evaluation being an exact box QP
   with the combined kernel ``sum_j eta_j K_j / d_j^2``.  The duality gap
   ``max_j q_j - eta . q`` certifies the result.

Kernel weights are then recovered as the Lagrange multipliers of the
active ``J_j <= t`` constraints.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import ConfigError, DataError
from .kernels import GramMatrix, KernelSpec

_TIE_TOL = 1e-10


def _values(K) -> np.ndarray:
    return K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=float).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("binary labels must be -1 or +1")
    return y


def j_value(alpha, K, labels, d: float = 1.0) -> float:
    """``1/(2 d^2) alpha^T D(y) K D(y) alpha - sum(alpha)``."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    Kv = _values(K)
    y = _labels(labels)
    if Kv.shape != (alpha.size, alpha.size) or y.size != alpha.size:
        raise DataError(f"dimension mismatch: alpha {alpha.size}, K {Kv.shape}, y {y.size}")
    ay = alpha * y
    return float(ay @ Kv @ ay / (2.0 * d * d) - alpha.sum())


def project_feasible(alpha, labels, C: float) -> np.ndarray:
    """Euclidean projection onto ``{0 <= a <= C, a^T y = 0}``.

    The projection is ``clip(v - lam * y, 0, C)`` for the multiplier ``lam``
    solving ``h(lam) = y^T clip(v - lam y, 0, C) = 0``.  ``h`` is piecewise
    linear and non-increasing, so a bisection over its sorted breakpoints
    followed by linear interpolation on the bracketing segment is exact.
    """
    v = np.asarray(alpha, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()

    def h(lam):
        return float(y @ np.clip(v - lam * y, 0.0, C))

    # y is +-1, so the breakpoints v_i / y_i and (v_i - C) / y_i are products.
    bps = np.unique(np.concatenate([v * y, (v - C) * y]))
    lo, hi = 0, bps.size - 1
    h_lo = h(bps[lo])
    if h_lo <= 0.0:
        lam = bps[lo]
    elif h(bps[hi]) >= 0.0:
        lam = bps[hi]
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if h(bps[mid]) >= 0.0:
                lo = mid
            else:
                hi = mid
        h_lo, h_hi = h(bps[lo]), h(bps[hi])
        lam = bps[lo] + h_lo * (bps[hi] - bps[lo]) / (h_lo - h_hi)
    return np.clip(v - lam * y, 0.0, C)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[k] / (k + 1.0), 0.0)


# -- exact box QP ---------------------------------------------------------

def _qp_objective(Q, alpha):
    return 0.5 * alpha @ Q @ alpha - alpha.sum()


def _polish(Q, y, C, alpha):
    """Solve the equality-constrained QP on the free set of ``alpha``.

    Returns the polished point if it is feasible and satisfies the sign
    conditions on the bound coordinates, else ``None``.
    """
    upper = alpha >= C
    free = (alpha > 0.0) & ~upper
    if not np.any(free):
        return None
    fi = np.flatnonzero(free)
    nf = fi.size
    rhs_fixed = Q[np.ix_(fi, np.flatnonzero(upper))] @ np.full(upper.sum(), C)
    A = np.zeros((nf + 1, nf + 1))
    A[:nf, :nf] = Q[np.ix_(fi, fi)]
    A[:nf, nf] = y[fi]
    A[nf, :nf] = y[fi]
    b = np.concatenate([1.0 - rhs_fixed, [-C * y[upper].sum()]])
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    a_free, lam = sol[:nf], sol[nf]
    tol = 1e-10 * max(1.0, C)
    if np.any(a_free < -tol) or np.any(a_free > C + tol):
        return None
    cand = alpha.copy()
    cand[fi] = np.clip(a_free, 0.0, C)
    g = Q @ cand - 1.0 + lam * y
    gtol = 1e-9 * (1.0 + np.max(np.abs(Q @ cand - 1.0)))
    lower = ~free & ~upper
    if np.any(g[lower] < -gtol) or np.any(g[upper] > gtol) or np.any(np.abs(g[fi]) > gtol):
        return None
    return project_feasible(cand, y, C)


def _solve_box_qp(Q, y, C, alpha0, tol=1e-12, max_iter=20000, polish_every=25):
    """Minimise ``0.5 a^T Q a - e^T a`` over the feasible set.

    Accelerated projected gradient with adaptive restart, with an
    active-set polish attempted periodically; a successful polish is a
    KKT point to round-off and ends the loop.
    """
    L = max(float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[-1]), 1e-12)
    step = 1.0 / L
    x = project_feasible(alpha0, y, C)
    z, t = x.copy(), 1.0
    best = x
    for it in range(1, max_iter + 1):
        x_new = project_feasible(z - step * (Q @ z - 1.0), y, C)
        if (z - x_new) @ (x_new - x) > 0.0:
            t = 1.0
            z = x_new.copy()
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new
        if it % polish_every == 0:
            pol = _polish(Q, y, C, x)
            if pol is not None and _qp_objective(Q, pol) <= _qp_objective(Q, x) + 1e-12 * (1 + abs(_qp_objective(Q, x))):
                return pol
            resid = np.max(np.abs(x - project_feasible(x - step * (Q @ x - 1.0), y, C)))
            if resid <= tol * max(1.0, C):
                best = x
                break
        best = x
    pol = _polish(Q, y, C, best)
    if pol is not None and _qp_objective(Q, pol) <= _qp_objective(Q, best):
        return pol
    return best


# -- solution container ---------------------------------------------------

@dataclass
class MklSolution:
    """Result of :func:`solve_skm`."""

    alpha: np.ndarray
    gamma: float
    eta: np.ndarray
    objective: float
    active_kernels: tuple[int, ...]
    kkt_residuals: dict[str, float]
    iterations: int
    bias: float = 0.0
    degenerate: bool = False
    duality_gap: float = 0.0
    C: float = 1.0
    d_weights: np.ndarray = field(default_factory=lambda: np.ones(1))
    trace: list[tuple[int, float, int]] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "eta": [float(e) for e in self.eta],
            "objective": float(self.objective),
            "gamma": float(self.gamma),
            "active_kernels": list(self.active_kernels),
            "iterations": int(self.iterations),
            "degenerate": bool(self.degenerate),
            "duality_gap": float(self.duality_gap),
            "max_kkt_residual": float(max(self.kkt_residuals.values(), default=0.0)),
        }


def _stack(grams, y, d):
    Ks = np.stack([_values(G) for G in grams])
    return Ks * np.outer(y, y)[None] / (d[:, None, None] ** 2)


def _quad(Qs, alpha):
    return 0.5 * np.einsum("i,mij,j->m", alpha, Qs, alpha)


def _active(J: np.ndarray, slack: float) -> np.ndarray:
    Jmax = J.max()
    return np.flatnonzero(J >= Jmax - slack * (1.0 + abs(Jmax)))


def recover_eta(alpha, grams, labels, C: float, d_weights=None, slack: float = 1e-6,
                prior=None) -> tuple[np.ndarray, tuple[int, ...]]:
    """Kernel weights as multipliers of the active ``J_j(alpha) <= t`` constraints.

    Kernels with ``J_j < max_k J_k - slack (1 + |J|)`` are inactive and get
    zero weight.  The active weights solve the stationarity condition
    ``sum_j eta_j grad J_j + lam y = 0`` on the free coordinates in the
    least-squares sense over the simplex, with a tiny pull toward
    ``prior`` (uniform by default) that makes the answer unique when
    gradients coincide.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    y = _labels(labels)
    m = len(grams)
    if m == 0:
        raise DataError("no Gram matrices given")
    d = np.ones(m) if d_weights is None else np.asarray(d_weights, dtype=float)
    Qs = _stack(grams, y, d)
    J = _quad(Qs, alpha) - alpha.sum()
    act = _active(J, slack)
    eta = np.zeros(m)
    if act.size == 1:
        eta[act] = 1.0
        return eta, tuple(int(a) for a in act)
    p = np.full(act.size, 1.0 / act.size) if prior is None else np.asarray(prior, float)[act]
    if p.sum() <= 0:
        p = np.full(act.size, 1.0 / act.size)
    p = p / p.sum()
    free = (alpha > 0.0) & (alpha < C)
    G = np.stack([Qs[j] @ alpha - 1.0 for j in act], axis=1)[free]
    if G.shape[0] == 0:
        eta[act] = p
        return eta, tuple(int(a) for a in act)
    yf = y[free]
    G = G - np.outer(yf, yf @ G) / (yf @ yf)
    scale = max(float(np.sum(G * G)), 1e-300)
    rho = 1e-8 * scale + 1e-300
    w = 1e2 * math.sqrt(scale) + 1.0
    A = np.vstack([G, math.sqrt(rho) * np.eye(act.size), w * np.ones((1, act.size))])
    b = np.concatenate([np.zeros(G.shape[0]), math.sqrt(rho) * p, [w]])
    sol, _ = nnls(A, b, maxiter=50 * act.size)
    if sol.sum() <= 0:
        sol = p
    eta[act] = sol / sol.sum()
    return eta, tuple(int(a) for a in act)


def _eta_from_dual(eta_dual, Qs, alpha, slack):
    """Dual weights with non-active kernels zeroed and the rest renormalised."""
    J = _quad(Qs, alpha) - alpha.sum()
    act = _active(J, slack)
    eta = np.zeros_like(eta_dual)
    eta[act] = np.maximum(eta_dual[act], 0.0)
    if eta.sum() <= 0:
        eta[act] = 1.0
    return eta / eta.sum(), tuple(int(a) for a in act)


def compute_bias(alpha, labels, K, C: float) -> float:
    """Offset ``b`` from the free support vectors, or the midpoint fallback."""
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(labels, dtype=float)
    if not (np.any(y > 0) and np.any(y < 0)):
        return float(y[0]) if y.size else 0.0
    f0 = _values(K) @ (alpha * y)
    tol = 1e-8 * C
    free = (alpha > tol) & (alpha < C - tol)
    if np.any(free):
        return float(np.mean(y[free] - f0[free]))
    # Every multiplier sits at a bound: each one confines b to a half-line.
    at_zero = alpha <= tol
    up = (at_zero & (y > 0)) | (~at_zero & (y < 0))
    lo = np.max((y - f0)[up], initial=-np.inf)
    hi = np.min((y - f0)[~up], initial=np.inf)
    if lo <= hi and np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    return float(-(f0[y < 0].max() + f0[y > 0].min()) / 2.0)


def decision_function(alpha, labels, K_test_train, bias: float) -> np.ndarray:
    """``f(x) = sum_i alpha_i y_i k(x_i, x) + b`` for each test row."""
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(labels, dtype=float)
    Kv = _values(K_test_train)
    if Kv.ndim != 2 or Kv.shape[1] != alpha.size or y.size != alpha.size:
        raise DataError(f"shape mismatch: K {Kv.shape}, alpha {alpha.size}")
    return Kv @ (alpha * y) + bias


def combined_gram(eta, grams, d_weights=None) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    d = np.ones(len(grams)) if d_weights is None else np.asarray(d_weights, dtype=float)
    return sum((e / dj**2) * _values(G) for e, dj, G in zip(eta, d, grams) if e != 0.0)


def kkt_report(solution: MklSolution, grams, labels) -> dict[str, float]:
    """Residuals of the four complementary-slackness conditions.

    1. ``alpha_i (y_i f(x_i) - 1 + zeta_i) = 0``
    2. ``(C - alpha_i) zeta_i = 0``
    3. ``(w_j, ||w_j||)^T (-sum_i alpha_i y_i phi_j(x_i), d_j gamma) = 0``
    4. ``gamma (sum_j d_j ||w_j|| - gamma) = 0``

    with ``w_j = eta_j / d_j^2 sum_i alpha_i y_i phi_j(x_i)``, ``zeta`` the
    hinge slacks and ``f`` the decision values under the combined kernel.
    Also reports the feasibility defects of ``alpha``.
    """
    alpha = np.asarray(solution.alpha, dtype=float)
    y = _labels(labels)
    C = solution.C
    d = np.asarray(solution.d_weights, dtype=float)
    if d.size != len(grams):
        d = np.ones(len(grams))
    Keta = combined_gram(solution.eta, grams, d)
    if np.isscalar(Keta):
        Keta = np.zeros((alpha.size, alpha.size))
    b = compute_bias(alpha, y, Keta, C)
    f = Keta @ (alpha * y) + b
    zeta = np.maximum(0.0, 1.0 - y * f)
    r1 = np.max(np.abs(alpha * (y * f - 1.0 + zeta)), initial=0.0)
    r2 = np.max(np.abs((C - alpha) * zeta), initial=0.0)
    ay = alpha * y
    u = np.sqrt(np.maximum([ay @ _values(G) @ ay for G in grams], 0.0))
    gamma = float(np.max(u / d))
    c = np.asarray(solution.eta, dtype=float) / d**2
    r3 = float(np.max(np.abs(c * u * (d * gamma - u)), initial=0.0))
    r4 = abs(gamma * (float(np.sum(d * c * u)) - gamma))
    return {
        "cond1_alpha_slackness": float(r1),
        "cond2_box_slackness": float(r2),
        "cond3_block_alignment": float(r3),
        "cond4_gamma_balance": float(r4),
        "box_violation": float(max(0.0, -alpha.min(initial=0.0), (alpha - C).max(initial=0.0))),
        "equality_violation": float(abs(alpha @ y)),
    }


def solve_skm(grams: Sequence, labels, C: float = 1.0, d_weights=None, *,
              max_iter: int = 5000, stall_window: int = 200, stall_tol: float = 1e-9,
              refine: bool = True, gap_tol: float = 1e-9, slack: float = 1e-6) -> MklSolution:
    """Minimise ``max_j J_j(alpha)`` for unit-trace Grams ``grams``."""
    if len(grams) == 0:
        raise DataError("solve_skm needs at least one Gram matrix")
    if not C > 0:
        raise ConfigError(f"C must be positive, got {C}")
    y = _labels(labels)
    n = y.size
    m = len(grams)
    d = np.ones(m) if d_weights is None else np.asarray(d_weights, dtype=float)
    if d.shape != (m,) or np.any(d <= 0):
        raise DataError("d_weights must hold one positive value per Gram")
    for j, G in enumerate(grams):
        Kv = _values(G)
        if Kv.shape != (n, n):
            raise DataError(f"Gram {j} has shape {Kv.shape}, expected {(n, n)}")
        if abs(np.trace(Kv) - n) > 1e-8 * n:
            raise DataError(f"Gram {j} is not unit-trace normalised (trace {np.trace(Kv):.6g}, n {n})")
    Qs = _stack(grams, y, d)

    if not (np.any(y > 0) and np.any(y < 0)):
        alpha = np.zeros(n)
        eta, act = recover_eta(alpha, grams, y, C, d, slack)
        sol = MklSolution(alpha, 0.0, eta, 0.0, act, {}, 0, float(y[0]), True, 0.0, C, d)
        sol.kkt_residuals = kkt_report(sol, grams, y)
        return sol

    def objective(a):
        J = _quad(Qs, a) - a.sum()
        return J, float(J.max())

    # Stage 1: projected subgradient with steps a/sqrt(t).
    alpha = np.zeros(n)
    J, Jmax = objective(alpha)
    best_alpha, best_J = alpha, Jmax
    history = [best_J]
    trace = [(0, Jmax, int(np.argmax(J)))]
    ties = np.flatnonzero(J >= Jmax - _TIE_TOL)
    g = np.mean([Qs[j] @ alpha - 1.0 for j in ties], axis=0)
    a0 = 0.1 * C / max(np.max(np.abs(g)), 1e-300)
    it = 0
    for it in range(1, max_iter + 1):
        alpha = project_feasible(alpha - (a0 / math.sqrt(it)) * g, y, C)
        J, Jmax = objective(alpha)
        if Jmax < best_J:
            best_alpha, best_J = alpha, Jmax
        history.append(best_J)
        trace.append((it, Jmax, int(np.argmax(J))))
        if it >= stall_window and history[it - stall_window] - best_J < stall_tol:
            break
        ties = np.flatnonzero(J >= Jmax - _TIE_TOL)
        g = np.mean([Qs[j] @ alpha - 1.0 for j in ties], axis=0)
    iterations = it

    # Stage 2: dual ascent over eta with exact inner QPs.
    eta_dual = None
    gap = float("nan")
    if refine:
        alpha_r, eta_dual, gap, outer = _refine(Qs, y, C, best_alpha, gap_tol)
        iterations += outer
        J_r = float((_quad(Qs, alpha_r) - alpha_r.sum()).max())
        if J_r <= best_J:
            best_alpha, best_J = alpha_r, J_r
        trace.append((iterations, best_J, int(np.argmax(_quad(Qs, best_alpha)))))

    alpha = best_alpha
    if eta_dual is not None:
        eta, act = _eta_from_dual(eta_dual, Qs, alpha, slack)
    else:
        eta, act = recover_eta(alpha, grams, y, C, d, slack)
    u = np.sqrt(np.maximum(2.0 * _quad(Qs, alpha), 0.0))
    Keta = combined_gram(eta, grams, d)
    sol = MklSolution(
        alpha=alpha, gamma=float(u.max()), eta=eta, objective=best_J, active_kernels=act,
        kkt_residuals={}, iterations=iterations, bias=compute_bias(alpha, y, Keta, C),
        duality_gap=gap, C=C, d_weights=d, trace=trace,
    )
    sol.kkt_residuals = kkt_report(sol, grams, y)
    return sol


def _refine(Qs, y, C, alpha0, gap_tol, max_outer=400):
    m = Qs.shape[0]
    if m == 1:
        alpha = _solve_box_qp(Qs[0], y, C, alpha0)
        return alpha, np.ones(1), 0.0, 1

    def evaluate(eta, warm):
        a = _solve_box_qp(np.tensordot(eta, Qs, axes=1), y, C, warm)
        q = _quad(Qs, a)
        return a, q, float(eta @ q - a.sum())

    eta = np.full(m, 1.0 / m)
    alpha, q, G = evaluate(eta, alpha0)
    best = (float(q.max() - alpha.sum()), alpha)
    spread = float(q.max() - q.min())
    step = 1.0 / spread if spread > 0 else 1.0
    gap = float(q.max() - eta @ q)
    outer = 1
    for outer in range(1, max_outer + 1):
        Jmax = float(q.max() - alpha.sum())
        gap = float(q.max() - eta @ q)
        if gap <= gap_tol * (1.0 + abs(Jmax)) or step < 1e-14:
            break
        eta_new = _project_simplex(eta + step * q)
        a_new, q_new, G_new = evaluate(eta_new, alpha)
        J_new = float(q_new.max() - a_new.sum())
        if J_new < best[0]:
            best = (J_new, a_new)
        if G_new >= G - 1e-15 * (1.0 + abs(G)):
            eta, alpha, q, G = eta_new, a_new, q_new, G_new
            step *= 1.5
        else:
            step *= 0.5
    J_last = float(q.max() - alpha.sum())
    if best[0] < J_last:
        return best[1], eta, gap, outer
    return alpha, eta, gap, outer


def write_trace_csv(solution: MklSolution, path) -> Path:
    """Dump the per-iteration objective as ``iteration,J,max_kernel`` rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "J", "max_kernel"])
        for it, J, k in solution.trace:
            w.writerow([it, repr(float(J)), k])
    return path


# -- MFKL selection -------------------------------------------------------

@dataclass
class LabeledSet:
    """Per-feature candidate Grams over one labelled sample set.

    ``labels`` may hold any class labels: two classes give one binary
    problem, more give one-vs-rest problems.
    """

    gram_blocks: Mapping[str, Sequence[GramMatrix]]
    labels: np.ndarray
    C: float = 1.0
    d_weights: Mapping[str, Sequence[float]] | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if not self.gram_blocks:
            raise DataError("LabeledSet needs at least one feature")
        n = self.labels.size
        ids = None
        for f, grams in self.gram_blocks.items():
            if len(grams) == 0:
                raise DataError(f"feature {f!r} has no kernels")
            for G in grams:
                if G.values.shape != (n, n):
                    raise DataError(f"feature {f!r}: Gram shape {G.values.shape} != {(n, n)}")
                if ids is None:
                    ids = G.row_ids
                elif G.row_ids != ids:
                    raise DataError(f"feature {f!r}: Gram sample ids differ")
        if not self.C > 0:
            raise ConfigError("C must be positive")

    def binary_problems(self) -> list[tuple[str, np.ndarray]]:
        classes = sorted(set(self.labels.tolist()), key=str)
        if set(classes) <= {-1, 1}:
            return [("+1/-1", self.labels.astype(float))]
        if len(classes) == 2:
            return [(f"{classes[1]}/{classes[0]}",
                     np.where(self.labels == classes[1], 1.0, -1.0))]
        return [(str(c), np.where(self.labels == c, 1.0, -1.0)) for c in classes]


@dataclass
class FeatureKernelPairing:
    """Selected ``(feature, kernel, beta)`` triples; betas sum to one."""

    pairs: list[tuple[str, KernelSpec, float]]
    provenance: dict[str, dict] = field(default_factory=dict)

    @property
    def betas(self) -> dict[str, float]:
        return {f: b for f, _, b in self.pairs}

    def to_dict(self) -> dict:
        return {
            "pairs": [{"feature": f, "kernel": k.to_dict(), "kernel_label": k.label, "beta": b}
                      for f, k, b in self.pairs],
            "provenance": self.provenance,
        }


def _max_workers() -> int:
    raw = os.environ.get("MFKL_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def mfkl_select(data: LabeledSet, threshold: float = 1e-3, **solver_kw) -> FeatureKernelPairing:
    """Pick one kernel per feature and weight the features.

    For every feature the support kernel machine is solved over that
    feature's kernels and the kernel with the largest mean weight (over
    the binary problems) is kept.  The kept Grams of all features are then
    solved jointly; features whose joint weight is ``<= threshold`` are
    dropped and the remaining weights, renormalised, become ``beta``.
    """
    problems = data.binary_problems()
    features = list(data.gram_blocks)
    dw = data.d_weights or {}

    def run(grams, y, d):
        return solve_skm(grams, y, data.C, d, **solver_kw)

    tasks = [(f, name, y) for f in features for name, y in problems]
    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        sols = list(pool.map(lambda t: run(data.gram_blocks[t[0]], t[2], dw.get(t[0])), tasks))
    per_feature: dict[str, list[MklSolution]] = {f: [] for f in features}
    for (f, _, _), s in zip(tasks, sols):
        per_feature[f].append(s)

    chosen: dict[str, int] = {}
    provenance: dict[str, dict] = {}
    for f in features:
        mean_eta = np.mean([s.eta for s in per_feature[f]], axis=0)
        j = int(np.argmax(mean_eta))
        chosen[f] = j
        provenance[f] = {
            "kernels": [G.spec.label if G.spec else f"K{i}" for i, G in enumerate(data.gram_blocks[f])],
            "mean_eta": [float(e) for e in mean_eta],
            "selected": j,
            "solutions": [s.summary() for s in per_feature[f]],
        }

    if len(features) == 1:
        weights = np.ones(1)
    else:
        union = [data.gram_blocks[f][chosen[f]] for f in features]
        d_union = [(dw.get(f) or [1.0] * len(data.gram_blocks[f]))[chosen[f]] for f in features]
        with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
            usols = list(pool.map(lambda p: run(union, p[1], np.asarray(d_union, float)), problems))
        weights = np.mean([s.eta for s in usols], axis=0)
    for f, w in zip(features, weights):
        provenance[f]["feature_weight"] = float(w)

    kept = [(f, w) for f, w in zip(features, weights) if w > threshold]
    if not kept:
        raise ConfigError(
            f"every feature has weight <= threshold {threshold:g}; lower mkl.threshold")
    total = sum(w for _, w in kept)
    pairs = []
    for f, w in kept:
        spec = data.gram_blocks[f][chosen[f]].spec
        pairs.append((f, spec, float(w / total)))
    return FeatureKernelPairing(pairs, provenance)
