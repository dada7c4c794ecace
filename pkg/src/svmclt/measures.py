"""Finite signed measures on X x Y as weighted atoms.

Everything downstream (solver targets, derivative directions, Monte Carlo
populations) is a finite weighted atom list. Probability and empirical
measures are special cases flagged by properties. Atoms with bitwise-equal
(x, y) are merged at construction by summing weights; atoms whose merged
weight is exactly 0.0 are dropped, so `combine(d, d, 1, -1)` is the empty
measure.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

_MASS_TOL = 1e-12


@dataclass(frozen=True)
class FiniteMeasure:
    """Weighted atoms (x_i, y_i, w_i); weights may be signed.

    xs is (n, d), ys and weights are (n,). Construction canonicalizes:
    exact-duplicate (x, y) atoms are merged in first-seen order and
    zero-weight atoms are removed.
    """

    xs: np.ndarray
    ys: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim == 1:
            xs = xs.reshape(-1, 1)
        ys = np.asarray(self.ys, dtype=float).reshape(-1)
        ws = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (xs.shape[0] == ys.shape[0] == ws.shape[0]):
            raise InputError("xs, ys, weights must have equal length")
        if xs.size and not np.all(np.isfinite(xs)):
            raise InputError("atom coordinates must be finite")
        if ys.size and not (np.all(np.isfinite(ys)) and np.all(np.isfinite(ws))):
            raise InputError("atom labels and weights must be finite")

        # merge bitwise-identical atoms, first-seen order
        order: dict[bytes, int] = {}
        acc: list[float] = []
        keep: list[int] = []
        for i in range(xs.shape[0]):
            key = xs[i].tobytes() + ys[i].tobytes()
            j = order.get(key)
            if j is None:
                order[key] = len(keep)
                keep.append(i)
                acc.append(float(ws[i]))
            else:
                acc[j] += float(ws[i])
        keep_arr = np.asarray(keep, dtype=int)
        merged_w = np.asarray(acc, dtype=float)
        nz = merged_w != 0.0
        xs = xs[keep_arr][nz]
        ys = ys[keep_arr][nz]
        ws = merged_w[nz]
        for a in (xs, ys, ws):
            a.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "weights", ws)

    @property
    def n_atoms(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum()) if self.n_atoms else 0.0

    @property
    def is_nonnegative(self) -> bool:
        """All weights >= 0 with strictly positive total mass."""
        return self.n_atoms > 0 and bool(np.all(self.weights >= 0.0)) and self.total_mass > 0.0

    @property
    def is_probability(self) -> bool:
        return (
            self.n_atoms > 0
            and bool(np.all(self.weights >= 0.0))
            and abs(self.total_mass - 1.0) <= _MASS_TOL
        )


def empirical(data) -> FiniteMeasure:
    """Uniform-weight measure of a nonempty (x, y) sample.

    ``data`` is a sequence of (x, y) pairs; repeated pairs merge into one
    atom whose weight is the repeat count over n.
    """
    pairs = list(data)
    if not pairs:
        raise InputError("empirical requires nonempty data")
    xs = np.asarray([np.atleast_1d(np.asarray(p[0], dtype=float)) for p in pairs], dtype=float)
    ys = np.asarray([p[1] for p in pairs], dtype=float)
    n = len(pairs)
    # count repeats here so each merged weight is the exact ratio count/n
    # (summing n copies of 1/n would leave accumulation dust)
    order: dict[bytes, int] = {}
    counts: list[int] = []
    keep: list[int] = []
    for i in range(n):
        key = xs[i].tobytes() + np.float64(ys[i]).tobytes()
        j = order.get(key)
        if j is None:
            order[key] = len(keep)
            keep.append(i)
            counts.append(1)
        else:
            counts[j] += 1
    idx = np.asarray(keep, dtype=int)
    return FiniteMeasure(xs[idx], ys[idx], np.asarray(counts, dtype=float) / n)


def dirac(x, y) -> FiniteMeasure:
    """Unit point mass at (x, y)."""
    return FiniteMeasure(np.atleast_2d(np.asarray(x, dtype=float)), [float(y)], [1.0])


def scale(mu: FiniteMeasure, c: float) -> FiniteMeasure:
    """The measure c * mu."""
    return FiniteMeasure(mu.xs, mu.ys, float(c) * mu.weights)


def combine(mu: FiniteMeasure, nu: FiniteMeasure, a: float = 1.0, b: float = 1.0) -> FiniteMeasure:
    """The signed measure a*mu + b*nu (atom-wise, merged)."""
    if mu.n_atoms and nu.n_atoms and mu.dim != nu.dim:
        raise InputError("cannot combine measures of different input dimension")
    if mu.n_atoms == 0:
        return scale(nu, b)
    if nu.n_atoms == 0:
        return scale(mu, a)
    xs = np.vstack([mu.xs, nu.xs])
    ys = np.concatenate([mu.ys, nu.ys])
    ws = np.concatenate([float(a) * mu.weights, float(b) * nu.weights])
    return FiniteMeasure(xs, ys, ws)


def _as_generator(seed) -> np.random.Generator:
    """Deterministic counter-based stream from an integer seed, or pass through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def sample(p: FiniteMeasure, n: int, seed):
    """n i.i.d. draws from a probability measure by inverse CDF.

    Parameters
    ----------
    p : FiniteMeasure with ``is_probability``
    n : int, number of draws (>= 1)
    seed : int or numpy Generator
        Integers seed a Philox stream; identical (seed, n, atom order)
        gives bit-identical output.

    Returns
    -------
    (xs, ys) : arrays of shape (n, d) and (n,)
    """
    if not p.is_probability:
        raise InputError("sample requires a probability measure")
    if int(n) < 1:
        raise InputError("sample requires n >= 1")
    rng = _as_generator(seed)
    cum = np.cumsum(p.weights)
    u = rng.random(int(n))
    idx = np.searchsorted(cum, u, side="right")
    np.clip(idx, 0, p.n_atoms - 1, out=idx)
    return p.xs[idx].copy(), p.ys[idx].copy()


def integrate(mu: FiniteMeasure, g) -> float:
    """sum_i w_i g(x_i, y_i); accepts vectorized or scalar integrands."""
    if mu.n_atoms == 0:
        return 0.0
    try:
        vals = np.asarray(g(mu.xs, mu.ys), dtype=float).reshape(-1)
        if vals.shape[0] != mu.n_atoms:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.asarray([float(g(mu.xs[i], mu.ys[i])) for i in range(mu.n_atoms)])
    if not np.all(np.isfinite(vals)):
        raise NumericError("integrand is non-finite on some atom")
    return float(mu.weights @ vals)


# --- CSV serialization: header x1,...,xd,y,weight, repr-exact floats ---

def write_measure_csv(mu: FiniteMeasure, path) -> None:
    """Write the atom table; floats use shortest exact representation."""
    d = mu.dim if mu.n_atoms else 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + ["y", "weight"])
        for i in range(mu.n_atoms):
            row = [repr(float(v)) for v in mu.xs[i]]
            row.append(repr(float(mu.ys[i])))
            row.append(repr(float(mu.weights[i])))
            w.writerow(row)


def read_measure_csv(path) -> FiniteMeasure:
    """Parse an atom table written by :func:`write_measure_csv`."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read measure file {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: empty measure file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[-2:] != ["y", "weight"]:
        raise InputError(f"{path}: header must be x1,...,xd,y,weight")
    d = len(header) - 2
    if header[:d] != [f"x{j + 1}" for j in range(d)]:
        raise InputError(f"{path}: header must be x1,...,xd,y,weight")
    xs, ys, ws = [], [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise InputError(f"{path}:{ln}: expected {d + 2} columns, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise InputError(f"{path}:{ln}: {exc}") from None
        xs.append(vals[:d])
        ys.append(vals[d])
        ws.append(vals[d + 1])
    if not xs:
        raise InputError(f"{path}: no atoms")
    return FiniteMeasure(np.asarray(xs), np.asarray(ys), np.asarray(ws))
