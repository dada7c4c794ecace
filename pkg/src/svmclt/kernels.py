"""Kernel families, Gram matrices, and RKHS functions in representer form.

Four positive-definite kernel families on axis-aligned boxes in R^d:

    gaussian_rbf   k(x, x') = exp(-gamma * ||x - x'||^2)
    polynomial     k(x, x') = (scale * <x, x'> + offset)^degree
    linear         k(x, x') = <x, x'>
    exponential    k(x, x') = exp(scale * <x, x'>)

Functions in the associated Hilbert space are kept in representer form,
f = sum_j c_j k(., z_j), which is exact for everything this package
computes (solver outputs, derivatives, influence functions).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

FAMILIES = ("gaussian_rbf", "polynomial", "linear", "exponential")


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family with parameters, fixed to one input dimension.

    Parameters
    ----------
    family : str
        One of ``gaussian_rbf``, ``polynomial``, ``linear``, ``exponential``.
    input_dim : int
        Dimension d of the input space; all points must have d coordinates.
    gamma : float
        Width of the Gaussian RBF, > 0. Ignored by other families.
    degree : int
        Polynomial degree, >= 1. Ignored by other families.
    offset : float
        Polynomial additive offset, >= 0. Ignored by other families.
    scale : float
        Inner-product scale for polynomial/exponential, > 0.
    """

    family: str
    input_dim: int
    gamma: float = 1.0
    degree: int = 2
    offset: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if int(self.input_dim) < 1:
            raise InputError("input_dim must be a positive integer")
        if self.family == "gaussian_rbf" and not self.gamma > 0:
            raise InputError("gaussian_rbf requires gamma > 0")
        if self.family == "polynomial":
            if int(self.degree) < 1:
                raise InputError("polynomial requires degree >= 1")
            if self.offset < 0:
                raise InputError("polynomial requires offset >= 0")
        if self.family in ("polynomial", "exponential") and not self.scale > 0:
            raise InputError("scale must be > 0")


def as_points(spec: KernelSpec, x) -> np.ndarray:
    """Coerce x to an (n, d) float array and check d against the spec."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != spec.input_dim:
        raise InputError(
            f"points have dimension {arr.shape[-1] if arr.ndim else 0}, "
            f"kernel expects {spec.input_dim}"
        )
    if arr.size and not np.all(np.isfinite(arr)):
        raise InputError("points must be finite")
    return arr


def cross_gram(spec: KernelSpec, pts_a, pts_b) -> np.ndarray:
    """Matrix of kernel values k(a_i, b_j), shape (len(a), len(b))."""
    A = as_points(spec, pts_a)
    B = as_points(spec, pts_b)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    if spec.family == "gaussian_rbf":
        # direct differences, not the ||a||^2 + ||b||^2 - 2<a,b> expansion:
        # identical rows must give exactly 0 so that k(x, x) == 1.
        sq = np.empty((A.shape[0], B.shape[0]))
        step = max(1, 2_000_000 // (B.shape[0] * B.shape[1]))
        for i in range(0, A.shape[0], step):
            diff = A[i:i + step, None, :] - B[None, :, :]
            sq[i:i + step] = np.einsum("ijk,ijk->ij", diff, diff)
        return np.exp(-spec.gamma * sq)
    inner = A @ B.T
    if spec.family == "linear":
        return inner
    if spec.family == "polynomial":
        return (spec.scale * inner + spec.offset) ** spec.degree
    return np.exp(spec.scale * inner)


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    """Evaluate k(x, x2) for two single points."""
    return float(cross_gram(spec, x, x2)[0, 0])


def gram(spec: KernelSpec, points) -> np.ndarray:
    """Symmetric Gram matrix K_ij = k(p_i, p_j) of a nonempty point list."""
    P = as_points(spec, points)
    if P.shape[0] == 0:
        raise InputError("gram requires a nonempty point list")
    K = cross_gram(spec, P, P)
    return 0.5 * (K + K.T)  # exact symmetry against roundoff


def sup_norm_kernel(spec: KernelSpec, domain_box) -> float:
    """sup over the box of sqrt(k(x, x)).

    ``domain_box`` is an (d, 2) array of [low, high] per axis. For the
    Gaussian RBF the value is exactly 1; the other families attain the
    supremum at the box corner of maximal Euclidean norm since k(x, x)
    is increasing in ||x||^2.
    """
    box = np.asarray(domain_box, dtype=float)
    if box.ndim != 2 or box.shape != (spec.input_dim, 2):
        raise InputError(f"domain_box must have shape ({spec.input_dim}, 2)")
    if not np.all(np.isfinite(box)):
        raise InputError("domain_box must be bounded")
    if np.any(box[:, 0] > box[:, 1]):
        raise InputError("domain_box has low > high on some axis")
    if spec.family == "gaussian_rbf":
        return 1.0
    r2 = float(np.sum(np.maximum(box[:, 0] ** 2, box[:, 1] ** 2)))
    if spec.family == "linear":
        return float(np.sqrt(r2))
    if spec.family == "polynomial":
        return float((spec.scale * r2 + spec.offset) ** (spec.degree / 2.0))
    return float(np.exp(spec.scale * r2 / 2.0))


@dataclass(frozen=True)
class RkhsFunction:
    """f = sum_j coefficients[j] * k(., anchors[j]) for a fixed kernel.

    An empty anchor list is the zero function. Instances are immutable;
    the arrays are marked read-only at construction.
    """

    kernel: KernelSpec
    anchors: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.anchors, dtype=float).reshape(-1, self.kernel.input_dim)
        c = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if A.shape[0] != c.shape[0]:
            raise InputError(
                f"{A.shape[0]} anchors but {c.shape[0]} coefficients"
            )
        A.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "anchors", A)
        object.__setattr__(self, "coefficients", c)

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    def eval(self, x):
        """Evaluate pointwise: a float for one point, an (n,) array for (n, d)."""
        x_arr = np.asarray(x, dtype=float)
        single = x_arr.ndim == 1
        if self.n_anchors == 0:
            out = np.zeros(1 if single else x_arr.shape[0])
        else:
            out = cross_gram(self.kernel, x_arr, self.anchors) @ self.coefficients
        return float(out[0]) if single else out

    def norm_h(self) -> float:
        """Hilbert-space norm sqrt(c^T K c) over the anchor Gram matrix."""
        if self.n_anchors == 0:
            return 0.0
        K = gram(self.kernel, self.anchors)
        return float(np.sqrt(max(self.coefficients @ K @ self.coefficients, 0.0)))


def feature_function(kernel: KernelSpec, x) -> RkhsFunction:
    """The canonical feature map at x: the function k(., x)."""
    pt = as_points(kernel, x)
    if pt.shape[0] != 1:
        raise InputError("feature_function takes a single point")
    return RkhsFunction(kernel, pt, np.ones(1))


def rkhs_inner(f: RkhsFunction, g: RkhsFunction) -> float:
    """Hilbert-space inner product via the cross Gram matrix.

    Satisfies the reproducing identity <k(., x), f> = f(x).
    """
    if f.kernel != g.kernel:
        raise InputError("inner product requires functions over the same kernel")
    if f.n_anchors == 0 or g.n_anchors == 0:
        return 0.0
    C = cross_gram(f.kernel, f.anchors, g.anchors)
    return float(f.coefficients @ C @ g.coefficients)


def rkhs_lincomb(kernel: KernelSpec, terms) -> RkhsFunction:
    """Linear combination sum_i scale_i * f_i as a single representer function.

    ``terms`` is a sequence of (scale, RkhsFunction) pairs. Coefficients
    at bitwise-equal anchors are summed, so differences of nearly equal
    functions cancel in the coefficients rather than in the quadratic
    form downstream.
    """
    index: dict[bytes, int] = {}
    anchors = []
    coeffs = []
    for s, fn in terms:
        if fn.kernel != kernel:
            raise InputError("all terms must share the target kernel")
        for j in range(fn.n_anchors):
            key = fn.anchors[j].tobytes()
            at = index.get(key)
            if at is None:
                index[key] = len(anchors)
                anchors.append(fn.anchors[j])
                coeffs.append(s * fn.coefficients[j])
            else:
                coeffs[at] += s * fn.coefficients[j]
    if not anchors:
        return RkhsFunction(kernel, np.zeros((0, kernel.input_dim)), np.zeros(0))
    return RkhsFunction(kernel, np.asarray(anchors), np.asarray(coeffs))


def h_distance(f: RkhsFunction, g: RkhsFunction) -> float:
    """||f - g|| in the Hilbert norm, valid across different anchor sets.

    Forms the difference on the merged anchor set first; when f and g are
    close on shared anchors the cancellation happens in the coefficients,
    keeping the result accurate near zero.
    """
    return rkhs_lincomb(f.kernel, [(1.0, f), (-1.0, g)]).norm_h()
