"""Sinkhorn, scaled Sinkhorn and Bethe approximations of the permanent.

All three are maximizations over the doubly stochastic polytope restricted to
the support of the input matrix.  The Sinkhorn maximizer is the diagonal
scaling reached by alternating row/column normalization; the Bethe optimum is
found by conditional gradient (the linear subproblem is an assignment
problem) with exact line search, started from the Sinkhorn witness.

Also provides the two structured test-matrix generators used throughout the
test-suite: block-diagonal all-ones matrices and matrices with a prescribed
number of distinct columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from permpml.permanent import as_matrix, is_doubly_stochastic

SINKHORN_TOL = 1e-10
SINKHORN_MAX_ITER = 100_000
BETHE_TOL = 1e-8
BETHE_MAX_ITER = 10_000

_TINY = 1e-300


@dataclass(frozen=True)
class DoublyStochasticWitness:
    """Diagonal-scaling witness q = diag(row_scalers) a diag(col_scalers)."""

    q: np.ndarray
    row_scalers: np.ndarray
    col_scalers: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class ApproximationReport:
    method: str  # 'sinkhorn' | 'scaled_sinkhorn' | 'bethe'
    log_value: float
    witness: DoublyStochasticWitness
    converged: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method,
                "log_value": self.log_value,
                "iterations": self.witness.iterations,
                "residual": self.witness.residual,
                "converged": self.converged,
            }
        )


def functional_u(a, q) -> float:
    """U(A, Q) = sum Q log(A / Q) over the support of Q.

    Conventions: 0 log(0/0) = 0 and 0 log(a/0) = 0; returns -inf when Q puts
    mass where A is zero.
    """
    am = as_matrix(a)
    qm = as_matrix(q)
    if am.shape != qm.shape:
        raise ValueError(f"shape mismatch: {am.shape} vs {qm.shape}")
    if not is_doubly_stochastic(qm, 1e-8):
        raise ValueError("q must be doubly stochastic within 1e-8")
    return _u_value(am, qm)


def _u_value(am: np.ndarray, qm: np.ndarray) -> float:
    pos = qm > 0
    if np.any(pos & (am <= 0)):
        return -math.inf
    qp = qm[pos]
    return float(np.sum(qp * np.log(am[pos] / qp)))


def functional_v(q) -> float:
    """V(Q) = sum (1 - Q) log(1 - Q), with 0 log 0 = 0; lies in [-N, 0]."""
    qm = as_matrix(q)
    if np.any(qm > 1.0 + 1e-12):
        raise ValueError("entries must lie in [0, 1]")
    return _v_value(qm)


def _v_value(qm: np.ndarray) -> float:
    u = np.clip(1.0 - qm, 0.0, None)
    pos = u > 0
    return float(np.sum(u[pos] * np.log(u[pos])))


def _f_value(am: np.ndarray, qm: np.ndarray) -> float:
    return _u_value(am, qm) + _v_value(qm)


def sinkhorn_scale(a, tol: float = SINKHORN_TOL, max_iter: int = SINKHORN_MAX_ITER) -> DoublyStochasticWitness:
    """Alternating row/column normalization until the worst marginal error <= tol.

    Runs in the log domain so badly scaled inputs cannot overflow.  Matrices
    with support but no total support stagnate; the last iterate is returned
    and its residual exposes the failure (callers flag converged=False).
    """
    am = as_matrix(a)
    n = am.shape[0]
    if am.shape[0] != am.shape[1]:
        raise ValueError("sinkhorn_scale requires a square matrix")
    if np.any(am.sum(axis=0) == 0) or np.any(am.sum(axis=1) == 0):
        raise ValueError("every row and column needs at least one positive entry")
    with np.errstate(divide="ignore"):
        loga = np.where(am > 0, np.log(np.where(am > 0, am, 1.0)), -np.inf)
    logl = np.zeros(n)
    logr = np.zeros(n)
    q = np.full((n, n), 1.0 / n)
    residual = math.inf
    iterations = 0
    for it in range(1, max_iter + 1):
        logl = -logsumexp(loga + logr[None, :], axis=1)
        logr = -logsumexp(loga + logl[:, None], axis=0)
        q = np.exp(logl[:, None] + loga + logr[None, :])
        residual = float(
            max(np.abs(q.sum(axis=1) - 1.0).max(), np.abs(q.sum(axis=0) - 1.0).max())
        )
        iterations = it
        if residual <= tol:
            break
    return DoublyStochasticWitness(
        q=q,
        row_scalers=np.exp(logl),
        col_scalers=np.exp(logr),
        iterations=iterations,
        residual=residual,
    )


def sinkhorn_permanent(a, tol: float = SINKHORN_TOL, max_iter: int = SINKHORN_MAX_ITER) -> ApproximationReport:
    """exp(max_Q U(A, Q)): an e^N over-estimate of the permanent."""
    am = as_matrix(a)
    w = sinkhorn_scale(am, tol, max_iter)
    return ApproximationReport(
        method="sinkhorn",
        log_value=_u_value(am, w.q),
        witness=w,
        converged=w.residual <= tol,
    )


def scaled_sinkhorn_permanent(a, tol: float = SINKHORN_TOL, max_iter: int = SINKHORN_MAX_ITER) -> ApproximationReport:
    """exp(max_Q U(A, Q) - N): a lower bound on the permanent."""
    am = as_matrix(a)
    w = sinkhorn_scale(am, tol, max_iter)
    return ApproximationReport(
        method="scaled_sinkhorn",
        log_value=_u_value(am, w.q) - am.shape[0],
        witness=w,
        converged=w.residual <= tol,
    )


def _bethe_gradient(am: np.ndarray, qm: np.ndarray, support: np.ndarray) -> np.ndarray:
    qc = np.clip(qm, _TINY, None)
    one_m = np.clip(1.0 - qm, _TINY, None)
    g = np.where(support, np.log(np.where(support, am, 1.0)) - np.log(qc) - np.log(one_m) - 2.0, 0.0)
    return g


def _assignment_vertex(score: np.ndarray, support: np.ndarray) -> np.ndarray | None:
    """Permutation matrix within the support maximizing the linear score.

    Returns None when no permutation fits in the support (the permanent is
    zero on that support).
    """
    n = score.shape[0]
    penalty = float(np.abs(score).max() + 1.0) * (n + 1)
    cost = np.where(support, -score, penalty)
    rows, cols = linear_sum_assignment(cost)
    if not support[rows, cols].all():
        return None
    vertex = np.zeros_like(score)
    vertex[rows, cols] = 1.0
    return vertex


def _line_search_concave(deriv, t_max: float, iters: int = 70) -> float:
    """Bisection on the sign of the (decreasing) derivative of a concave 1-d slice."""
    if deriv(t_max) >= 0.0:
        return t_max
    lo, hi = 0.0, t_max
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if deriv(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bethe_newton_direction(am: np.ndarray, qm: np.ndarray, support: np.ndarray) -> np.ndarray | None:
    """Equality-constrained Newton step for F on the support entries.

    The coordinate-wise Hessian of F, diag(-1/Q + 1/(1-Q)), is indefinite; F
    is concave only on the doubly stochastic affine slice, so the step comes
    from the full KKT system with the marginal constraints (one column
    constraint dropped for rank).  Returns the full-matrix step, or None when
    the system is singular.
    """
    n = am.shape[0]
    rows, cols = np.where(support)
    ne = rows.size
    q = np.clip(qm[rows, cols], _TINY, 1.0 - 1e-16)
    g = np.log(am[rows, cols]) - np.log(q) - np.log1p(-q) - 2.0
    h = -1.0 / q + 1.0 / (1.0 - q)
    nc = 2 * n - 1
    kkt = np.zeros((ne + nc, ne + nc))
    kkt[np.arange(ne), np.arange(ne)] = h
    arange_e = np.arange(ne)
    kkt[arange_e, ne + rows] = 1.0
    kkt[ne + rows, arange_e] = 1.0
    keep = cols < n - 1
    kkt[arange_e[keep], ne + n + cols[keep]] = 1.0
    kkt[ne + n + cols[keep], arange_e[keep]] = 1.0
    rhs = np.concatenate(
        [-g, 1.0 - qm.sum(axis=1), (1.0 - qm.sum(axis=0))[: n - 1]]
    )
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    delta = np.zeros_like(qm)
    delta[rows, cols] = sol[:ne]
    return delta


def bethe_permanent(a, tol: float = BETHE_TOL, max_iter: int = BETHE_MAX_ITER, on_iteration=None) -> ApproximationReport:
    """exp(max_Q U(A, Q) + V(Q)) via conditional gradient with exact line search.

    Initialized at the Sinkhorn witness (same support, finite objective).
    Iterates stay inside the support of A and the objective never decreases
    across iterations; `on_iteration`, when given, receives it after every
    step.  Plain conditional gradient zigzags near the (interior) optimum, so
    each round first attempts an equality-constrained Newton step and falls
    back to the Frank-Wolfe step when Newton does not improve.  The reported
    value is certified by a Frank-Wolfe duality gap <= tol regardless of
    which steps were taken.
    """
    am = as_matrix(a)
    n = am.shape[0]
    if am.shape[0] != am.shape[1]:
        raise ValueError("bethe_permanent requires a square matrix")
    w = sinkhorn_scale(am, SINKHORN_TOL, SINKHORN_MAX_ITER)
    support = am > 0
    qm = w.q
    f_cur = _f_value(am, qm)
    best_f = f_cur
    converged = False
    allow_newton = True
    for _ in range(max_iter):
        grad = _bethe_gradient(am, qm, support)
        vertex = _assignment_vertex(grad, support)
        if vertex is None:
            return ApproximationReport("bethe", -math.inf, w, True)
        direction = vertex - qm
        gap = float(np.sum(grad * direction))
        if gap <= tol:
            converged = True
            break

        noise = 1e-12 * (1.0 + abs(f_cur))
        accepted = False
        if allow_newton:
            delta = _bethe_newton_direction(am, qm, support)
            # a sane Newton step never exceeds the polytope diameter; huge
            # steps are the ill-conditioned boundary regime, FW's territory
            if delta is not None and np.any(delta) and np.abs(delta).max() <= n:
                shrink = delta < 0
                grow = delta > 0
                alpha = 1.0
                if np.any(shrink):
                    alpha = min(alpha, 0.995 * float(np.min(qm[shrink] / -delta[shrink])))
                if np.any(grow):
                    alpha = min(alpha, 0.995 * float(np.min((1.0 - qm[grow]) / delta[grow])))
                for _try in range(40):
                    cand = qm + alpha * delta
                    f_new = _f_value(am, cand)
                    # near the optimum the improvement underflows while the
                    # gap is still linear in position error: tolerate noise
                    if f_new >= f_cur - noise:
                        # a within-noise step means Newton has stopped making
                        # progress: take a Frank-Wolfe step next round, whose
                        # gap contraction is guaranteed and cannot cycle
                        allow_newton = f_new > f_cur + noise
                        qm, f_cur, accepted = cand, f_new, True
                        break
                    alpha *= 0.5
                else:
                    allow_newton = False
        if not accepted:
            was_newton_allowed = allow_newton
            allow_newton = False

            def deriv(t: float) -> float:
                return float(np.sum(_bethe_gradient(am, qm + t * direction, support) * direction))

            # stay strictly inside the segment: the objective is finite at
            # the vertex but its clamped gradient is not trustworthy there
            t = _line_search_concave(deriv, 1.0 - 1e-9)
            f_new = _f_value(am, qm + t * direction)
            while f_new < f_cur and t > 1e-18:
                t *= 0.5
                f_new = _f_value(am, qm + t * direction)
            if f_new >= f_cur:
                qm = qm + t * direction
                f_cur = f_new
                allow_newton = True
            elif not was_newton_allowed:
                break  # numerically stalled on both step types
        best_f = max(best_f, f_cur)
        if on_iteration is not None:
            on_iteration(best_f)
    return ApproximationReport("bethe", best_f, w, converged)


def block_ones_matrix(n: int, k: int) -> np.ndarray:
    """Block-diagonal matrix of k all-ones blocks of size n//k plus a remainder block.

    The worst-case instance for Bethe: log perm - log bethe grows like
    k log(n/k).
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    m = n // k
    out = np.zeros((n, n))
    for b in range(k):
        out[b * m : (b + 1) * m, b * m : (b + 1) * m] = 1.0
    r = n - k * m
    if r:
        out[k * m :, k * m :] = 1.0
    return out


def k_distinct_column_matrix(n: int, k: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Random n x n positive matrix with exactly k distinct columns.

    Draws k positive columns and replicates them with random multiplicities
    summing to n.  Returns (matrix, multiplicities).
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    cols = rng.uniform(0.1, 1.0, size=(n, k))
    if k == 1:
        counts = np.array([n])
    else:
        cuts = np.sort(rng.choice(n - 1, size=k - 1, replace=False) + 1)
        counts = np.diff(np.concatenate(([0], cuts, [n])))
    out = np.repeat(cols, counts, axis=1)
    return out, counts
