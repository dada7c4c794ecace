"""Loss functions with derivatives, growth envelopes, and mollifier smoothing.

A SmoothLoss carries L(x, y, t) together with its first and second partial
derivatives in t, a growth order p with envelope b(x, y) such that
|L| <= b + |t|^p, and envelopes for the derivatives on |t| <= a. A
LipschitzLoss is piecewise affine in t (hinge, epsilon-insensitive) and can
be smoothed into a SmoothLoss by convolution with a compactly supported
bump:

    phi(u) = exp(-1/(1 - u^2)) / GAMMA   on (-1, 1),  integral 1,
    L_eps(t) = integral phi(u) L(t - c u) du,  c = eps / b',

which guarantees |L - L_eps| <= eps, |L_eps'| <= b', and
|L_eps''| <= 2 b'^2 / (eps * GAMMA * e).

All value/d1/d2 callables broadcast over numpy arrays in (y, t); the x
argument is accepted for interface uniformity and ignored by the built-ins.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import InputError, InternalError

# integral of exp(-1/(1-u^2)) over (-1, 1), frozen from a 40-digit
# adaptive-quadrature computation; the test suite re-derives it
# independently with scipy.integrate.quad
_GAMMA = 0.4439938161680794

# integral of |phi'| = 2 phi(0) = 2 / (GAMMA * e)
_ABS_DPHI_MASS = 2.0 * float(np.exp(-1.0)) / _GAMMA


def mollifier_constant() -> float:
    """Normalizer of the bump: integral of exp(-1/(1-u^2)) over (-1, 1)."""
    return _GAMMA


def _bump_phi(u: np.ndarray) -> np.ndarray:
    """Normalized bump, zero outside (-1, 1); safe on inf/nan-free input."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui * ui)) / _GAMMA
    return out


def _bump_dphi(u: np.ndarray) -> np.ndarray:
    """First derivative of the normalized bump."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    q = 1.0 - ui * ui
    out[inside] = np.exp(-1.0 / q) / _GAMMA * (-2.0 * ui / (q * q))
    return out


@dataclass(frozen=True)
class SmoothLoss:
    """A loss with t-derivatives and growth envelopes.

    value, d1, d2 map (x, y, t) to elementwise arrays; envelope_b maps
    (x, y) to the Nemitski envelope with |L| <= envelope_b + |t|^p;
    envelope_b1(a) returns a function of (x, y) bounding sup_{|t|<=a} |L'|;
    envelope_b2(a) returns a constant bounding sup_{|t|<=a} |L''|.
    """

    name: str
    value: Callable
    d1: Callable
    d2: Callable
    nemitski_order: float
    envelope_b: Callable
    envelope_b1: Callable
    envelope_b2: Callable
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LipschitzLoss:
    """A convex loss that is piecewise affine in t.

    ``kinks(y)`` returns the fixed-length array of kink locations of
    t -> L(x, y, t) (positions may be +-inf when a label makes the loss
    affine), and ``kink_slope_jumps(y)`` the slope jump at each kink
    (nonnegative for convex losses). ``lipschitz_constant`` is the uniform
    constant b' with |L(t1) - L(t2)| <= b' |t1 - t2| over the documented
    label domain.
    """

    name: str
    value: Callable
    lipschitz_constant: float
    kinks: Callable
    kink_slope_jumps: Callable
    envelope_b: Callable
    nemitski_order: float
    params: dict = field(default_factory=dict)


# ----------------------------------------------------------------------
# built-in smooth losses


def least_squares() -> SmoothLoss:
    """L = (y - t)^2; envelope 2y^2 + 2t^2."""
    return SmoothLoss(
        name="least_squares",
        value=lambda x, y, t: (np.asarray(y, dtype=float) - t) ** 2,
        d1=lambda x, y, t: 2.0 * (np.asarray(t, dtype=float) - y),
        d2=lambda x, y, t: np.full(np.broadcast(y, t).shape, 2.0),
        nemitski_order=2.0,
        envelope_b=lambda x, y: 2.0 * np.asarray(y, dtype=float) ** 2,
        envelope_b1=lambda a: (lambda x, y: 2.0 * (np.abs(y) + float(a))),
        envelope_b2=lambda a: 2.0,
        params={},
    )


def logistic() -> SmoothLoss:
    """L = ln(1 + exp(-y t)) for labels with |y| <= 1 (classification: y = +-1).

    The envelopes b = ln 2 with p = 1 and b''_a = 1/4 are valid on that
    label domain, which every consumer in this package respects.
    """
    ln2 = float(np.log(2.0))
    return SmoothLoss(
        name="logistic",
        value=lambda x, y, t: np.logaddexp(0.0, -np.asarray(y, dtype=float) * t),
        d1=lambda x, y, t: -np.asarray(y, dtype=float)
        * expit(-np.asarray(y, dtype=float) * t),
        d2=lambda x, y, t: np.asarray(y, dtype=float) ** 2
        * expit(np.asarray(y, dtype=float) * t)
        * expit(-np.asarray(y, dtype=float) * t),
        nemitski_order=1.0,
        envelope_b=lambda x, y: np.full(np.shape(y) or (), ln2, dtype=float),
        envelope_b1=lambda a: (lambda x, y: np.abs(np.asarray(y, dtype=float))),
        envelope_b2=lambda a: 0.25,
        params={},
    )


def huber(delta: float = 1.0) -> SmoothLoss:
    """Quadratic near the residual origin, affine beyond |y - t| = delta."""
    if not delta > 0:
        raise InputError("huber requires delta > 0")
    d = float(delta)

    def value(x, y, t):
        r = np.asarray(y, dtype=float) - t
        a = np.abs(r)
        return np.where(a <= d, 0.5 * r * r, d * a - 0.5 * d * d)

    def d1(x, y, t):
        r = np.asarray(y, dtype=float) - t
        return -np.clip(r, -d, d)

    def d2(x, y, t):
        r = np.asarray(y, dtype=float) - t
        return np.where(np.abs(r) < d, 1.0, 0.0)

    return SmoothLoss(
        name="huber",
        value=value,
        d1=d1,
        d2=d2,
        nemitski_order=2.0,
        envelope_b=lambda x, y: np.asarray(y, dtype=float) ** 2,
        envelope_b1=lambda a: (lambda x, y: np.minimum(d, np.abs(y) + float(a))),
        envelope_b2=lambda a: 1.0,
        params={"delta": d},
    )


# ----------------------------------------------------------------------
# built-in Lipschitz losses (piecewise affine)


def hinge() -> LipschitzLoss:
    """L = max(0, 1 - y t); kink at t = 1/y with slope jump |y|.

    The declared uniform Lipschitz constant b' = 1 assumes |y| <= 1
    (classification labels y = +-1 in particular).
    """

    def kinks(y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            k = np.where(y != 0.0, 1.0 / np.where(y != 0.0, y, 1.0), np.inf)
        return k[..., None]

    return LipschitzLoss(
        name="hinge",
        value=lambda x, y, t: np.maximum(0.0, 1.0 - np.asarray(y, dtype=float) * t),
        lipschitz_constant=1.0,
        kinks=kinks,
        kink_slope_jumps=lambda y: np.abs(np.asarray(y, dtype=float))[..., None],
        envelope_b=lambda x, y: np.ones(np.shape(y) or (), dtype=float),
        nemitski_order=1.0,
        params={},
    )


def eps_insensitive(eps_ins: float = 0.1) -> LipschitzLoss:
    """L = max(0, |y - t| - eps_ins); kinks at y -+ eps_ins, slope jumps 1."""
    if eps_ins < 0:
        raise InputError("eps_insensitive requires eps_ins >= 0")
    e = float(eps_ins)

    def kinks(y):
        y = np.asarray(y, dtype=float)
        return np.stack([y - e, y + e], axis=-1)

    return LipschitzLoss(
        name="eps_insensitive",
        value=lambda x, y, t: np.maximum(0.0, np.abs(np.asarray(y, dtype=float) - t) - e),
        lipschitz_constant=1.0,
        kinks=kinks,
        kink_slope_jumps=lambda y: np.ones(np.shape(y) + (2,) if np.shape(y) else (2,)),
        envelope_b=lambda x, y: np.abs(np.asarray(y, dtype=float)),
        nemitski_order=1.0,
        params={"eps_ins": e},
    )


# ----------------------------------------------------------------------
# mollification


def mollify(loss: LipschitzLoss, eps: float, quadrature_nodes: int = 64) -> SmoothLoss:
    """Smooth a piecewise-affine Lipschitz loss by bump convolution.

    L_eps(x, y, t) = integral phi(u) L(x, y, t - c u) du with window
    half-width c = eps / b'. The integral is evaluated by fixed-order
    Gauss-Legendre applied per smoothness panel: the pullback interval
    [-1, 1] is split at the kink pullbacks (t - t_k)/c, so the integrand
    is smooth on every panel. Discrete weights are normalized by their
    mass (for the value) and first moment (for the first derivative),
    which makes the certificates

        |L - L_eps| <= eps,   |L_eps'| <= b',   L_eps = L off kink windows

    hold to machine precision. The second derivative uses the exact
    closed form (1/c) * sum_k J_k phi((t - t_k)/c) obtained from the
    kink slope jumps J_k, so convexity is preserved exactly.

    Fails with InternalError if the quadrature mass self-check
    |M0 - 1| > 1e-8 trips.
    """
    if not eps > 0:
        raise InputError("mollify requires eps > 0")
    if int(quadrature_nodes) < 32:
        raise InputError("mollify requires quadrature_nodes >= 32")
    bprime = float(loss.lipschitz_constant)
    if not bprime > 0:
        raise InputError("loss must declare a positive Lipschitz constant")
    c = float(eps) / bprime
    gl_u, gl_w = np.polynomial.legendre.leggauss(int(quadrature_nodes))

    mass = float(gl_w @ _bump_phi(gl_u))
    if abs(mass - 1.0) > 1e-8:
        raise InternalError(
            f"mollifier quadrature self-check failed: |mass - 1| = {abs(mass - 1.0):.3e}"
        )

    base_value = loss.value
    base_kinks = loss.kinks
    base_jumps = loss.kink_slope_jumps

    def _panels(y_flat: np.ndarray, t_flat: np.ndarray):
        """Panel nodes u (n, P, N) and weights w (n, P, N) in pullback coords."""
        uk = (t_flat[:, None] - base_kinks(y_flat)) / c
        np.clip(uk, -1.0, 1.0, out=uk)
        uk.sort(axis=1)
        n = t_flat.shape[0]
        ones = np.ones((n, 1))
        bks = np.concatenate([-ones, uk, ones], axis=1)
        half = 0.5 * (bks[:, 1:] - bks[:, :-1])
        mid = 0.5 * (bks[:, 1:] + bks[:, :-1])
        u = mid[..., None] + half[..., None] * gl_u
        w = half[..., None] * gl_w
        return u, w

    def _prepare(x, y, t):
        ybc, tbc = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(t, dtype=float))
        shape = ybc.shape
        return ybc.reshape(-1), tbc.reshape(-1), shape

    def _restore(flat: np.ndarray, shape):
        out = flat.reshape(shape)
        return float(out) if out.shape == () else out

    def value(x, y, t):
        yf, tf, shape = _prepare(x, y, t)
        u, w = _panels(yf, tf)
        ph = _bump_phi(u)
        m0 = np.einsum("npk,npk->n", w, ph)
        lv = base_value(x, yf[:, None, None], tf[:, None, None] - c * u)
        out = np.einsum("npk,npk->n", w, ph * lv) / m0
        return _restore(out, shape)

    def d1(x, y, t):
        yf, tf, shape = _prepare(x, y, t)
        u, w = _panels(yf, tf)
        dp = _bump_dphi(u)
        # u * phi'(u) <= 0 pointwise, so the first moment equals
        # sum w |u phi'|, making |d1| <= b' exact after normalization
        m1 = -np.einsum("npk,npk->n", w, u * dp)
        lv = base_value(x, yf[:, None, None], tf[:, None, None] - c * u)
        lt = base_value(x, yf, tf)
        out = np.einsum("npk,npk->n", w, dp * (lv - lt[:, None, None])) / (m1 * c)
        return _restore(out, shape)

    def d2(x, y, t):
        yf, tf, shape = _prepare(x, y, t)
        uk = (tf[:, None] - base_kinks(yf)) / c
        out = np.einsum("nk,nk->n", base_jumps(yf), _bump_phi(uk)) / c
        return _restore(out, shape)

    base_env = loss.envelope_b
    b2_const = bprime * bprime / float(eps) * _ABS_DPHI_MASS

    return SmoothLoss(
        name=f"mollified_{loss.name}",
        value=value,
        d1=d1,
        d2=d2,
        nemitski_order=loss.nemitski_order,
        envelope_b=lambda x, y: base_env(x, y) + float(eps),
        envelope_b1=lambda a: (lambda x, y: np.full(np.shape(y) or (), bprime, dtype=float)),
        envelope_b2=lambda a: b2_const,
        params={"eps": float(eps), "quadrature_nodes": int(quadrature_nodes), **loss.params},
    )


# ----------------------------------------------------------------------
# registry used by the CLI and experiment configs


def make_loss(name: str, **params) -> SmoothLoss:
    """Build a solver-ready loss from an id and parameters.

    Known ids: least_squares, logistic, huber(delta), mollified_hinge(eps,
    quadrature_nodes) and mollified_eps_insensitive(eps_ins, eps,
    quadrature_nodes).
    """
    if name == "least_squares":
        _reject_extra(name, params, ())
        return least_squares()
    if name == "logistic":
        _reject_extra(name, params, ())
        return logistic()
    if name == "huber":
        _reject_extra(name, params, ("delta",))
        return huber(**params)
    if name == "mollified_hinge":
        _reject_extra(name, params, ("eps", "quadrature_nodes"))
        return mollify(hinge(), params.get("eps", 0.1), params.get("quadrature_nodes", 64))
    if name == "mollified_eps_insensitive":
        _reject_extra(name, params, ("eps", "eps_ins", "quadrature_nodes"))
        return mollify(
            eps_insensitive(params.get("eps_ins", 0.1)),
            params.get("eps", 0.1),
            params.get("quadrature_nodes", 64),
        )
    raise InputError(f"unknown loss {name!r}")


def _reject_extra(name, params, allowed):
    extra = set(params) - set(allowed)
    if extra:
        raise InputError(f"loss {name!r} does not accept parameters {sorted(extra)}")


# ----------------------------------------------------------------------
# finite-difference validation


@dataclass(frozen=True)
class SmoothnessReport:
    """Finite-difference agreement of d1 with value and d2 with d1."""

    max_rel_err_d1: float
    max_rel_err_d2: float
    samples: int
    step: float
    tolerance: float
    passed: bool


def check_smoothness(loss: SmoothLoss, samples: int = 200, seed: int = 0,
                     step: float = 1e-5, tolerance: float = 1e-5) -> SmoothnessReport:
    """Validate d1 against central differences of value, and d2 against d1.

    Random triples draw y in [-1, 1] and t in [-3, 3]. Errors are relative
    to the scale 1 + |value|. Points where d2 changes across the stencil
    (a piecewise boundary, e.g. the huber radius) are excluded from the
    d2 comparison since the central difference is invalid there.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    n = int(samples)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    y = rng.uniform(-1.0, 1.0, size=n)
    t = rng.uniform(-3.0, 3.0, size=n)
    h = float(step)

    v0 = np.asarray(loss.value(x, y, t), dtype=float)
    scale_ = 1.0 + np.abs(v0)
    fd1 = (np.asarray(loss.value(x, y, t + h)) - np.asarray(loss.value(x, y, t - h))) / (2 * h)
    e1 = np.abs(fd1 - np.asarray(loss.d1(x, y, t))) / scale_

    d2p = np.asarray(loss.d2(x, y, t + h), dtype=float)
    d2m = np.asarray(loss.d2(x, y, t - h), dtype=float)
    fd2 = (np.asarray(loss.d1(x, y, t + h)) - np.asarray(loss.d1(x, y, t - h))) / (2 * h)
    e2 = np.abs(fd2 - np.asarray(loss.d2(x, y, t))) / scale_
    smooth_here = np.abs(d2p - d2m) <= 0.25 * (1.0 + np.abs(d2p) + np.abs(d2m))
    e2 = e2[smooth_here]

    m1 = float(e1.max()) if e1.size else 0.0
    m2 = float(e2.max()) if e2.size else 0.0
    return SmoothnessReport(
        max_rel_err_d1=m1,
        max_rel_err_d2=m2,
        samples=n,
        step=h,
        tolerance=float(tolerance),
        passed=bool(m1 <= tolerance and m2 <= tolerance),
    )
