"""Finite truncations of half-lattice vectors and the basic operators.

Vectors live on sites x = 0..N with an implicit Dirichlet zero at x = N+1.
The central operator is the tridiagonal

    (L0 v)(x) = -(x+1) v(x+1) + (2x+1) v(x) - x v(x-1),   x > 0
    (L0 v)(0) = -v(1) + v(0),

together with the multiplication operators M (by x) and W_{kappa,tau}
(by (x+kappa)^tau), the site-0 projection P0, and the constant 2x2 block
matrices D = diag(1,-1) and J = [[0,1],[-1,0]] acting on stacked pairs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

TAIL_COMPACT = "compact"
TAIL_EXPONENTIAL = "exponential"
TAIL_UNKNOWN = "unknown"


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype not in (np.float64, np.complex128):
        a = a.astype(np.complex128 if np.iscomplexobj(a) else np.float64)
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LatticeVector:
    """Immutable finite-truncation sequence on {0..N} with tail metadata."""

    values: np.ndarray
    tail_tag: str = TAIL_UNKNOWN
    tail_rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _as_readonly(self.values))
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("LatticeVector needs a 1-d array with N >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("LatticeVector entries must be finite")

    @property
    def n_trunc(self) -> int:
        return self.values.size - 1

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, x):
        return self.values[x]

    def norm_l1(self) -> float:
        return float(np.sum(np.abs(self.values)))

    def norm_l2(self) -> float:
        return float(np.linalg.norm(self.values))

    def norm_linf(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)


def vector(values, tail_tag: str = TAIL_UNKNOWN, tail_rate: float | None = None) -> LatticeVector:
    return LatticeVector(np.asarray(values), tail_tag, tail_rate)


def chi(x: int, n_trunc: int) -> LatticeVector:
    v = np.zeros(n_trunc + 1)
    v[x] = 1.0
    return LatticeVector(v, TAIL_COMPACT)


def zeros(n_trunc: int, complex_dtype: bool = False) -> LatticeVector:
    v = np.zeros(n_trunc + 1, dtype=np.complex128 if complex_dtype else np.float64)
    return LatticeVector(v, TAIL_COMPACT)


@dataclass(frozen=True)
class MatrixVector:
    """A stacked pair (upper, lower) with equal truncations."""

    upper: LatticeVector
    lower: LatticeVector

    def __post_init__(self):
        if self.upper.n_trunc != self.lower.n_trunc:
            raise ValueError("MatrixVector blocks must share a truncation")

    @property
    def n_trunc(self) -> int:
        return self.upper.n_trunc

    def as_array(self) -> np.ndarray:
        return np.stack([self.upper.values, self.lower.values])

    def norm_l2(self) -> float:
        return float(np.sqrt(self.upper.norm_l2() ** 2 + self.lower.norm_l2() ** 2))

    def norm_linf(self) -> float:
        return max(self.upper.norm_linf(), self.lower.norm_linf())

    def norm_l1(self) -> float:
        return self.upper.norm_l1() + self.lower.norm_l1()


def matrix_vector(upper, lower) -> MatrixVector:
    u = upper if isinstance(upper, LatticeVector) else vector(upper)
    w = lower if isinstance(lower, LatticeVector) else vector(lower)
    return MatrixVector(u, w)


@dataclass(frozen=True)
class WeightSpec:
    """Polynomial weight (x + kappa)^tau; kappa > 1 in decay-estimate contexts."""

    kappa: float
    tau: float

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise ValueError("weight offset kappa must be positive")

    def profile(self, n_trunc: int) -> np.ndarray:
        x = np.arange(n_trunc + 1, dtype=np.float64)
        return (x + self.kappa) ** self.tau

    def inverse(self) -> "WeightSpec":
        return WeightSpec(self.kappa, -self.tau)


# -- operator actions on raw arrays ------------------------------------------

def l0_apply_array(v: np.ndarray) -> np.ndarray:
    """Stencil action of L0 with Dirichlet zero beyond the truncation."""
    n = v.size - 1
    x = np.arange(n + 1, dtype=np.float64)
    out = (2.0 * x + 1.0) * v
    out[:-1] -= (x[:-1] + 1.0) * v[1:]
    out[1:] -= x[1:] * v[:-1]
    out[0] = v[0] - v[1]
    return out


def l0_diagonals(n_trunc: int) -> tuple[np.ndarray, np.ndarray]:
    """(diagonal, superdiagonal) of the symmetric tridiagonal truncation.

    The subdiagonal equals the superdiagonal: entry -(x+1) couples x and x+1.
    """
    x = np.arange(n_trunc + 1, dtype=np.float64)
    diag = 2.0 * x + 1.0
    off = -(x[:-1] + 1.0)
    return diag, off


def l0_dense(n_trunc: int) -> np.ndarray:
    diag, off = l0_diagonals(n_trunc)
    m = np.diag(diag)
    m += np.diag(off, 1)
    m += np.diag(off, -1)
    return m


def apply_l0(v: LatticeVector) -> LatticeVector:
    out = l0_apply_array(v.values)
    # the boundary row used v(N+1) = 0; flag the tail unless nothing was there
    tag = v.tail_tag if abs(v.values[-1]) == 0.0 else TAIL_UNKNOWN
    return LatticeVector(out, tag, v.tail_rate)


def apply_m(v: LatticeVector) -> LatticeVector:
    x = np.arange(len(v), dtype=np.float64)
    return LatticeVector(x * v.values, v.tail_tag, v.tail_rate)


def apply_weight(w: WeightSpec, v: LatticeVector) -> LatticeVector:
    return LatticeVector(w.profile(v.n_trunc) * v.values, v.tail_tag, v.tail_rate)


def apply_p0(v: LatticeVector | MatrixVector):
    if isinstance(v, MatrixVector):
        return MatrixVector(apply_p0(v.upper), apply_p0(v.lower))
    out = np.zeros_like(v.values)
    out[0] = v.values[0]
    return LatticeVector(out, TAIL_COMPACT)


def apply_d(v: MatrixVector) -> MatrixVector:
    return MatrixVector(v.upper, LatticeVector(-v.lower.values, v.lower.tail_tag, v.lower.tail_rate))


def apply_j(v: MatrixVector) -> MatrixVector:
    return MatrixVector(v.lower, LatticeVector(-v.upper.values, v.upper.tail_tag, v.upper.tail_rate))


def inner(u: LatticeVector | np.ndarray, v: LatticeVector | np.ndarray) -> complex:
    """Inner product, conjugate-linear in the first argument."""
    ua = u.values if isinstance(u, LatticeVector) else np.asarray(u)
    va = v.values if isinstance(v, LatticeVector) else np.asarray(v)
    return complex(np.vdot(ua, va))


def norms(v: LatticeVector, weight: WeightSpec | None = None) -> tuple[float, float, float]:
    """(l1, l2, linf), optionally of the weighted vector W v."""
    w = v if weight is None else apply_weight(weight, v)
    return (w.norm_l1(), w.norm_l2(), w.norm_linf())


def boundary_mass(v: LatticeVector, width: int = 10) -> float:
    """l2 mass in the last `width` sites relative to the total; Dirichlet
    truncation monitor."""
    tail = float(np.linalg.norm(v.values[-width:]))
    total = v.norm_l2()
    return tail / total if total > 0 else 0.0


# -- CSV interface ------------------------------------------------------------

def write_vector_csv(path, v: LatticeVector) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "value_re", "value_im"])
        for x, z in enumerate(v.values):
            zc = complex(z)
            wr.writerow([x, format(zc.real, ".17g"), format(zc.imag, ".17g")])


def read_vector_csv(path) -> LatticeVector:
    xs, re, im = [], [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:3] != ["x", "value_re", "value_im"]:
            raise ValueError(f"unexpected vector CSV header: {header}")
        for row in rd:
            xs.append(int(row[0]))
            re.append(float(row[1]))
            im.append(float(row[2]))
    if xs != list(range(len(xs))):
        raise ValueError("vector CSV rows must cover x = 0..N in order")
    arr = np.array(re) if not any(im) else np.array(re) + 1j * np.array(im)
    return LatticeVector(arr)
