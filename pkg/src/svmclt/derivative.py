"""Derivative of the measure-to-solution map, influence functions, and
plug-in asymptotic covariances.

At the solution f_F for a nonnegative base measure F, the curvature
operator of the regularized risk,

    C(h) = 2 lambda0 h + sum_i w_i L''(x_i, y_i, f_F(x_i)) h(x_i) k(., x_i),

is self-adjoint and positive definite (it dominates 2 lambda0 times the
identity), hence invertible. In the coefficient basis of the anchor set it
is the matrix 2 lambda0 I + D G, with G the anchor Gram matrix and D the
diagonal of aggregated w_i L''_i. The directional derivative of the
solution map at F in the direction of a signed measure G is then

    S'_F(G) = -C^{-1}( sum_j v_j L'(x_j, y_j, f_F(x_j)) k(., x_j) ),

the influence function is S'_F(dirac_z - F), and the plug-in covariance of
the scaled estimation error at grid points x_1..x_m is

    Sigma_ij = Cov_P(g_i, g_j),   g_i(x, y) = L'(x, y, f_P(x)) h_i(x),

with h_i = C^{-1} k(., x_i). The risk scale sigma uses the direction
h_u = C^{-1}(sum_j w_j L'_j k(., x_j)) the same way.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, InternalError
from .kernels import KernelSpec, RkhsFunction, gram, sup_norm_kernel
from .losses import SmoothLoss
from .measures import FiniteMeasure, combine, dirac
from .svm_solver import s_functional

_DEGENERACY_FLOOR = 1e-12


@dataclass(frozen=True)
class DerivativeContext:
    """Everything needed to apply the inverse curvature operator.

    anchors spans the computation: the distinct atom locations of F first,
    then any extra points requested at build time. k_matrix is the
    coefficient-space matrix of the curvature operator; lu its
    factorization, reused across right-hand sides.
    """

    F: FiniteMeasure
    loss: SmoothLoss
    kernel: KernelSpec
    lambda0: float
    f_F: RkhsFunction
    anchors: np.ndarray
    gram_matrix: np.ndarray
    k_matrix: np.ndarray
    condition_number: float
    _lu: tuple
    _atom_anchor_idx: np.ndarray
    _d1_atoms: np.ndarray

    def apply_kinv(self, rhs: np.ndarray) -> np.ndarray:
        """Solve k_matrix @ beta = rhs for one vector or a column stack."""
        return scipy.linalg.lu_solve(self._lu, np.asarray(rhs, dtype=float))


@dataclass(frozen=True)
class CovarianceEstimate:
    """Plug-in limit covariance at grid points, plus the risk scale."""

    grid: np.ndarray
    sigma_matrix: np.ndarray
    risk_sigma: float


def _distinct_rows(arrays) -> np.ndarray:
    """Stack (n, d) point arrays and drop exact duplicates, first-seen order."""
    seen = set()
    rows = []
    for arr in arrays:
        for row in np.asarray(arr, dtype=float):
            key = row.tobytes()
            if key not in seen:
                seen.add(key)
                rows.append(row)
    return np.asarray(rows, dtype=float)


def _anchor_index(anchors: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Index of each point row within the anchor rows (exact match)."""
    lookup = {anchors[j].tobytes(): j for j in range(anchors.shape[0])}
    idx = np.empty(pts.shape[0], dtype=int)
    for i in range(pts.shape[0]):
        key = pts[i].tobytes()
        if key not in lookup:
            raise InternalError("point missing from anchor set")
        idx[i] = lookup[key]
    return idx


def _assemble(F: FiniteMeasure, loss: SmoothLoss, kernel: KernelSpec,
              lambda0: float, f_F: RkhsFunction, anchors: np.ndarray) -> DerivativeContext:
    G = gram(kernel, anchors)
    m = anchors.shape[0]
    aidx = _anchor_index(anchors, F.xs)
    t_atoms = f_F.eval(F.xs)
    d2_atoms = np.asarray(loss.d2(F.xs, F.ys, t_atoms), dtype=float)
    d1_atoms = np.asarray(loss.d1(F.xs, F.ys, t_atoms), dtype=float)
    D = np.bincount(aidx, weights=F.weights * d2_atoms, minlength=m)
    k_matrix = 2.0 * float(lambda0) * np.eye(m) + D[:, None] * G
    lu = scipy.linalg.lu_factor(k_matrix)
    cond = float(np.linalg.cond(k_matrix))
    if not np.isfinite(cond):
        raise InternalError("curvature matrix is numerically singular")
    for a in (anchors, G, k_matrix, D, d1_atoms):
        a.setflags(write=False)
    return DerivativeContext(
        F=F, loss=loss, kernel=kernel, lambda0=float(lambda0), f_F=f_F,
        anchors=anchors, gram_matrix=G, k_matrix=k_matrix,
        condition_number=cond, _lu=lu, _atom_anchor_idx=aidx, _d1_atoms=d1_atoms,
    )


def build_context(F: FiniteMeasure, loss: SmoothLoss, kernel: KernelSpec,
                  lambda0: float, extra_points=None) -> DerivativeContext:
    """Solve for f_F and assemble the curvature operator over the anchors.

    ``extra_points`` (optional (k, d) array) are joined into the anchor
    set up front so later right-hand sides at those points stay within
    one factorization.
    """
    if not lambda0 > 0:
        raise InputError("lambda0 must be > 0")
    if not F.is_nonnegative:
        raise InputError("build_context requires a nonnegative measure")
    f_F = s_functional(F, loss, kernel, lambda0)
    pieces = [F.xs]
    if extra_points is not None:
        extra = np.asarray(extra_points, dtype=float)
        if extra.ndim == 1:
            extra = extra.reshape(-1, F.dim)
        pieces.append(extra)
    anchors = _distinct_rows(pieces)
    return _assemble(F, loss, kernel, lambda0, f_F, anchors)


def _extended(ctx: DerivativeContext, pts: np.ndarray) -> DerivativeContext:
    """ctx, or a rebuilt one whose anchors also cover pts (f_F reused)."""
    lookup = {ctx.anchors[j].tobytes() for j in range(ctx.anchors.shape[0])}
    new = [p for p in np.asarray(pts, dtype=float).reshape(-1, ctx.F.dim)
           if p.tobytes() not in lookup]
    if not new:
        return ctx
    anchors = np.vstack([ctx.anchors, np.asarray(new)])
    return _assemble(ctx.F, ctx.loss, ctx.kernel, ctx.lambda0, ctx.f_F, anchors)


def s_prime(ctx: DerivativeContext, G: FiniteMeasure) -> RkhsFunction:
    """Derivative of the solution map at ctx.F in the direction G (signed).

    Linear in G. The result lives on the union of ctx's anchors and G's
    atom locations.
    """
    if G.n_atoms == 0:
        return RkhsFunction(ctx.kernel, np.zeros((0, ctx.kernel.input_dim)), np.zeros(0))
    if G.dim != ctx.F.dim:
        raise InputError("direction measure has wrong input dimension")
    ext = _extended(ctx, G.xs)
    gidx = _anchor_index(ext.anchors, G.xs)
    tG = ext.f_F.eval(G.xs)
    l1 = np.asarray(ext.loss.d1(G.xs, G.ys, tG), dtype=float)
    u = np.bincount(gidx, weights=G.weights * l1, minlength=ext.anchors.shape[0])
    beta = -ext.apply_kinv(u)
    return RkhsFunction(ext.kernel, ext.anchors, beta)


def influence_function(ctx: DerivativeContext, z) -> RkhsFunction:
    """First-order effect of contaminating the base probability at z = (x, y)."""
    if not ctx.F.is_probability:
        raise InputError("influence_function requires a probability base measure")
    x, y = z
    return s_prime(ctx, combine(dirac(x, y), ctx.F, 1.0, -1.0))


@dataclass(frozen=True)
class FdCheckReport:
    """Finite-difference certification of the derivative.

    errors[i] = || (S(F + t_i G) - S(F)) / t_i  -  S'_F(G) ||_H. The
    Hadamard variant re-runs with directions G_t drifting toward G.
    """

    t_values: tuple
    errors: tuple
    slope: float
    deriv_norm: float
    hadamard_errors: tuple | None


def gateaux_fd_check(ctx: DerivativeContext, G: FiniteMeasure, t_sequence,
                     drift: bool = True) -> FdCheckReport:
    """Compare solver finite differences against s_prime along G.

    Every F + t G must stay a nonnegative measure; a violating t raises
    InputError naming it. With ``drift`` the check is repeated with
    perturbed directions G_t = G + t * (dirac_{z0} - F) -> G, exercising
    locally uniform (Hadamard-type) convergence rather than one fixed ray.
    """
    from .kernels import h_distance, rkhs_lincomb

    deriv = s_prime(ctx, G)
    dnorm = deriv.norm_h()
    ts = [float(t) for t in t_sequence]
    if any(t <= 0 for t in ts):
        raise InputError("t_sequence must be positive")

    z0 = (ctx.F.xs[0], float(ctx.F.ys[0]))
    drift_dir = combine(dirac(*z0), ctx.F, 1.0, -1.0)

    def one_error(t: float, direction: FiniteMeasure) -> float:
        mu_t = combine(ctx.F, direction, 1.0, t)
        if not mu_t.is_nonnegative:
            raise InputError(f"F + t*G leaves the nonnegative cone at t={t}")
        f_t = s_functional(mu_t, ctx.loss, ctx.kernel, ctx.lambda0)
        diff = rkhs_lincomb(ctx.kernel, [(1.0 / t, f_t), (-1.0 / t, ctx.f_F)])
        return h_distance(diff, deriv)

    errors = tuple(one_error(t, G) for t in ts)
    hadamard = None
    if drift:
        hadamard = tuple(one_error(t, combine(G, drift_dir, 1.0, t)) for t in ts)

    pos = [(t, e) for t, e in zip(ts, errors) if e > 0]
    slope = float("nan")
    if len(pos) >= 2:
        lt = np.log([p[0] for p in pos])
        le = np.log([p[1] for p in pos])
        slope = float(np.polyfit(lt, le, 1)[0])
    return FdCheckReport(
        t_values=tuple(ts), errors=errors, slope=slope,
        deriv_norm=dnorm, hadamard_errors=hadamard,
    )


def plugin_covariance(ctx: DerivativeContext, grid, also_risk: bool = True) -> CovarianceEstimate:
    """Limit covariance of the scaled estimation error at grid points.

    For each grid point the transported direction h_i solves the curvature
    system with right-hand side k(., x_i); Sigma_ij is the covariance of
    L'(x, y, f_P(x)) h_i(x) under the base probability, computed exactly
    over the atoms. ``also_risk`` adds the scalar scale for the risk limit
    (zero for e.g. a Dirac base measure).
    """
    if not ctx.F.is_probability:
        raise InputError("plugin_covariance requires a probability base measure")
    grid_arr = np.asarray(grid, dtype=float)
    if grid_arr.ndim == 1:
        grid_arr = grid_arr.reshape(-1, ctx.F.dim)
    ext = _extended(ctx, grid_arr)
    m = ext.anchors.shape[0]
    gidx = _anchor_index(ext.anchors, grid_arr)

    rhs = np.zeros((m, grid_arr.shape[0]))
    rhs[gidx, np.arange(grid_arr.shape[0])] = 1.0
    H = ext.apply_kinv(rhs)  # columns: transported directions in coeff space

    atom_rows = ext.gram_matrix[ext._atom_anchor_idx, :]  # h(x_atom) = rows @ beta
    M = atom_rows @ H
    gvals = ext._d1_atoms[:, None] * M
    w = ext.F.weights
    mean = w @ gvals
    sigma = gvals.T @ (w[:, None] * gvals) - np.outer(mean, mean)
    sigma = 0.5 * (sigma + sigma.T)

    risk_sigma = 0.0
    if also_risk:
        u = np.bincount(ext._atom_anchor_idx, weights=w * ext._d1_atoms, minlength=m)
        h_u = ext.apply_kinv(u)
        vals_u = ext._d1_atoms * (atom_rows @ h_u)
        var = float(w @ vals_u**2 - (w @ vals_u) ** 2)
        risk_sigma = float(np.sqrt(max(var, 0.0)))

    return CovarianceEstimate(grid=grid_arr, sigma_matrix=sigma, risk_sigma=risk_sigma)


@dataclass(frozen=True)
class DegeneracyReport:
    """Largest direction variance found and the scale-aware threshold."""

    degenerate: bool
    max_sigma2: float
    threshold: float
    argmax: str
    sigma2_values: tuple


def degeneracy_check(ctx: DerivativeContext, basis_size: int = 8,
                     seed: int = 0) -> DegeneracyReport:
    """Decide whether the Gaussian limit collapses to zero.

    The limit degenerates iff Var_P(L'(x, y, f_P(x)) h(x)) vanishes for
    every direction h. The check scans the feature directions at all
    anchors plus ``basis_size`` random unit-norm functions; the threshold
    is 1e-12 * (1 + max|L'|^2 * ||k||_inf^2).
    """
    if not ctx.F.is_probability:
        raise InputError("degeneracy_check requires a probability base measure")
    w = ctx.F.weights
    l1 = ctx._d1_atoms
    atom_rows = ctx.gram_matrix[ctx._atom_anchor_idx, :]

    def direction_var(h_atoms: np.ndarray) -> float:
        g = l1 * h_atoms
        return float(w @ g**2 - (w @ g) ** 2)

    labels, variances = [], []
    for j in range(ctx.anchors.shape[0]):
        labels.append(f"feature_anchor_{j}")
        variances.append(direction_var(atom_rows[:, j]))

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    m = ctx.anchors.shape[0]
    for i in range(int(basis_size)):
        beta = rng.standard_normal(m)
        nrm = float(np.sqrt(max(beta @ ctx.gram_matrix @ beta, 0.0)))
        if nrm <= 1e-12:
            continue
        beta /= nrm
        labels.append(f"random_{i}")
        variances.append(direction_var(atom_rows @ beta))

    box = np.stack([ctx.F.xs.min(axis=0), ctx.F.xs.max(axis=0)], axis=1)
    ksup = sup_norm_kernel(ctx.kernel, box)
    threshold = _DEGENERACY_FLOOR * (1.0 + float(np.max(np.abs(l1)) ** 2) * ksup**2)
    k = int(np.argmax(variances))
    return DegeneracyReport(
        degenerate=bool(variances[k] <= threshold),
        max_sigma2=float(variances[k]),
        threshold=float(threshold),
        argmax=labels[k],
        sigma2_values=tuple(float(v) for v in variances),
    )
