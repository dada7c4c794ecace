"""Regularized kernel estimation by damped Newton in coefficient space.

Minimizes, over functions f in the kernel's Hilbert space,

    G(f) = sum_i w_i L(x_i, y_i, f(x_i)) + lam * ||f||_H^2

for a nonnegative finite measure with atoms (x_i, y_i, w_i). The minimizer
lies in the span of the features at the distinct atom locations, so the
problem reduces to the coefficient vector alpha on those m anchors with
Gram matrix K:

    G(alpha) = sum_i w_i L(x_i, y_i, (K alpha)_{a(i)}) + lam alpha^T K alpha.

The Hilbert-space gradient has coefficients g = 2 lam alpha + s, where
s_j aggregates w_i L'_i over the atoms sharing anchor j, and the Newton
step solves (diag(q) K + 2 lam I) delta = -g with q_j the aggregated
w_i L''_i. That system is nonsingular for every convex loss and lam > 0
and avoids inverting K itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .kernels import KernelSpec, RkhsFunction, gram, sup_norm_kernel
from .losses import SmoothLoss
from .measures import FiniteMeasure, integrate

_ARMIJO_C1 = 1e-4
_MIN_STEP = 1e-14


@dataclass(frozen=True)
class SolveReport:
    """Solver outcome. ``converged`` means the Hilbert gradient norm met
    tol = grad_tol_factor * max(1, |objective|); a False value is a real
    result, never a silently wrong one."""

    solution: RkhsFunction
    objective: float
    grad_norm_h: float
    iterations: int
    converged: bool


def _distinct_anchors(xs: np.ndarray):
    """First-seen distinct rows of xs and the atom -> anchor index map."""
    seen: dict[bytes, int] = {}
    idx = np.empty(xs.shape[0], dtype=int)
    rows = []
    for i in range(xs.shape[0]):
        key = xs[i].tobytes()
        j = seen.get(key)
        if j is None:
            j = len(rows)
            seen[key] = j
            rows.append(xs[i])
        idx[i] = j
    return np.asarray(rows, dtype=float), idx


def solve(mu: FiniteMeasure, loss: SmoothLoss, kernel: KernelSpec, lam: float,
          *, max_iter: int = 200, grad_tol_factor: float = 1e-10,
          init_coefficients=None) -> SolveReport:
    """Minimize the regularized empirical risk of ``loss`` under ``mu``.

    Parameters
    ----------
    mu : FiniteMeasure
        Nonnegative with positive total mass; duplicate x locations with
        different labels share one anchor.
    loss : SmoothLoss
        Convex (d2 >= 0); supplies value/d1/d2.
    kernel : KernelSpec
    lam : float
        Regularization weight, > 0.
    max_iter : int
        Newton iteration cap; on hitting it the report has converged=False.
    grad_tol_factor : float
        Convergence when ||grad||_H <= grad_tol_factor * max(1, |objective|).
    init_coefficients : array, optional
        Starting alpha (defaults to 0, i.e. f = 0).
    """
    if not lam > 0:
        raise InputError("regularization weight must be > 0")
    if not mu.is_nonnegative:
        raise InputError("solve requires a nonnegative measure with positive mass")
    if mu.dim != kernel.input_dim:
        raise InputError(f"measure dimension {mu.dim} != kernel input_dim {kernel.input_dim}")

    anchors, aidx = _distinct_anchors(mu.xs)
    m = anchors.shape[0]
    K = gram(kernel, anchors)
    w = mu.weights
    xs, ys = mu.xs, mu.ys
    lam = float(lam)

    if init_coefficients is None:
        alpha = np.zeros(m)
    else:
        alpha = np.asarray(init_coefficients, dtype=float).reshape(-1).copy()
        if alpha.shape[0] != m:
            raise InputError(f"init_coefficients must have length {m}")

    def objective_at(a):
        t = (K @ a)[aidx]
        vals = np.asarray(loss.value(xs, ys, t), dtype=float)
        return float(w @ vals + lam * (a @ K @ a)), t

    obj, t_atoms = objective_at(alpha)
    iterations = 0
    converged = False
    grad_norm = np.inf

    for _ in range(int(max_iter) + 1):
        l1 = np.asarray(loss.d1(xs, ys, t_atoms), dtype=float)
        g = 2.0 * lam * alpha + np.bincount(aidx, weights=w * l1, minlength=m)
        grad_norm = float(np.sqrt(max(g @ K @ g, 0.0)))
        if grad_norm <= grad_tol_factor * max(1.0, abs(obj)):
            converged = True
            break
        if iterations >= int(max_iter):
            break

        l2 = np.asarray(loss.d2(xs, ys, t_atoms), dtype=float)
        q = np.bincount(aidx, weights=w * l2, minlength=m)
        A = q[:, None] * K + 2.0 * lam * np.eye(m)
        try:
            delta = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError as exc:  # cannot occur for q >= 0, lam > 0
            raise NumericError(f"Newton system solve failed: {exc}") from None

        # directional derivative of the objective along delta
        dd = float(g @ (K @ delta))
        if not np.isfinite(dd) or dd >= 0.0:
            break  # no descent available; report non-convergence below

        if abs(dd) <= 8.0 * np.finfo(float).eps * max(1.0, abs(obj)):
            # The decrease is below the float resolution of the objective,
            # so no line search can certify it. This only happens deep in
            # the convex quadratic basin, where the undamped step contracts.
            alpha = alpha + delta
            obj, t_atoms = objective_at(alpha)
            iterations += 1
            continue

        step = 1.0
        while True:
            obj_try, t_try = objective_at(alpha + step * delta)
            if obj_try <= obj + _ARMIJO_C1 * step * dd:
                break
            step *= 0.5
            if step < _MIN_STEP:
                break
        if step < _MIN_STEP:
            break
        alpha = alpha + step * delta
        obj, t_atoms = obj_try, t_try
        iterations += 1

    return SolveReport(
        solution=RkhsFunction(kernel, anchors, alpha),
        objective=obj,
        grad_norm_h=grad_norm,
        iterations=iterations,
        converged=converged,
    )


def s_functional(F: FiniteMeasure, loss: SmoothLoss, kernel: KernelSpec,
                 lambda0: float, **solve_kwargs) -> RkhsFunction:
    """The measure-to-solution map S at the standard regularization weight.

    Satisfies the standardization identity: the solution for (mu, lam)
    equals s_functional(scale(mu, lambda0/lam), lambda0) for every lam > 0.
    Raises NumericError if the solver fails to converge.
    """
    report = solve(F, loss, kernel, lambda0, **solve_kwargs)
    if not report.converged:
        raise NumericError(
            f"solver did not converge (grad_norm_h={report.grad_norm_h:.3e} "
            f"after {report.iterations} iterations)"
        )
    return report.solution


def risk(mu: FiniteMeasure, loss: SmoothLoss, f: RkhsFunction) -> float:
    """Expected loss of f under mu: sum_i w_i L(x_i, y_i, f(x_i))."""
    if mu.n_atoms == 0:
        return 0.0
    t = f.eval(mu.xs)
    vals = np.asarray(loss.value(mu.xs, mu.ys, t), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericError("loss is non-finite on some atom")
    return float(mu.weights @ vals)


def norm_bound_check(F: FiniteMeasure, loss: SmoothLoss, kernel: KernelSpec,
                     lambda0: float) -> bool:
    """Check the a-priori solution bounds.

    The minimizer satisfies ||f||_H <= sqrt(F(b) / lambda0) where b is the
    loss's Nemitski envelope, and |f(x)| <= ||k||_inf * ||f||_H on the atom
    box. Returns True iff both hold (with 1e-9 slack).
    """
    f = s_functional(F, loss, kernel, lambda0)
    hnorm = f.norm_h()
    fb = integrate(F, lambda xs, ys: loss.envelope_b(xs, ys))
    h_bound = float(np.sqrt(max(fb, 0.0) / float(lambda0)))
    box = np.stack([F.xs.min(axis=0), F.xs.max(axis=0)], axis=1)
    ksup = sup_norm_kernel(kernel, box)
    sup_on_atoms = float(np.max(np.abs(f.eval(F.xs)))) if F.n_atoms else 0.0
    return bool(hnorm <= h_bound + 1e-9 and sup_on_atoms <= ksup * hnorm + 1e-9)
