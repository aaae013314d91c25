r"""Dense Markov-chain numerics: Kronecker algebra, matrix exponentials,
phase-type distributions and Markovian arrival processes.

A phase-type variable :math:`PH(\alpha, T)` has reliability

.. math:: R(t) = \alpha e^{Tt} \mathbf{1},

and density :math:`f(t) = \alpha e^{Tt} t^0` with exit vector :math:`t^0 = -T\mathbf{1}`.

Matrix exponentials of generators and sub-generators (Metzler matrices) are
computed by uniformization, which keeps every entry nonnegative.  Other
matrices fall back to scaling-and-squaring Padé (:func:`scipy.linalg.expm`),
which also serves as the independent cross-check route.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ModelError

PROB_TOL = 1e-10
_UNIF_MAX_RATE_TIME = 16.0  # split horizon so that q*h stays below this


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ModelError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(m)):
        raise ModelError(f"{name} has non-finite entries")
    return m


def check_prob_vector(v, name: str = "probability vector", substochastic: bool = False) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise ModelError(f"{name} has non-finite entries")
    if np.any(v < -PROB_TOL):
        raise ModelError(f"{name} has negative entries")
    s = v.sum()
    if substochastic:
        if s > 1 + PROB_TOL:
            raise ModelError(f"{name} sums to {s} > 1")
    elif abs(s - 1.0) > PROB_TOL:
        raise ModelError(f"{name} sums to {s}, expected 1")
    return np.clip(v, 0.0, None)


def is_metzler(q: np.ndarray) -> bool:
    off = q - np.diag(np.diag(q))
    return bool(np.all(off >= 0))


def check_generator(q: np.ndarray, name: str = "generator", tol: float = PROB_TOL) -> None:
    """Raise unless `q` has nonnegative off-diagonals and zero row sums."""
    if q.shape[0] != q.shape[1]:
        raise ModelError(f"{name} is not square")
    if not is_metzler(q):
        raise ModelError(f"{name} has negative off-diagonal rates")
    worst = np.max(np.abs(q.sum(axis=1))) if q.size else 0.0
    if worst > tol * max(1.0, np.max(np.abs(q))):
        raise ModelError(f"{name} row sums deviate from 0 by {worst:g}")


# -- Kronecker algebra ---------------------------------------------------------

def kron_product(a, b) -> np.ndarray:
    """Kronecker product, block (i, j) equal to ``a[i, j] * b``."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    m1, m2 = a.shape
    n1, n2 = b.shape
    out = np.empty((m1 * n1, m2 * n2))
    for i in range(m1):
        for j in range(m2):
            out[i * n1:(i + 1) * n1, j * n2:(j + 1) * n2] = a[i, j] * b
    return out


def kron_sum(a, b) -> np.ndarray:
    """Kronecker sum ``A (x) I + I (x) B`` of two square matrices."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]:
        raise ModelError("Kronecker sum needs square operands")
    return kron_product(a, np.eye(b.shape[0])) + kron_product(np.eye(a.shape[0]), b)


def kron_sum_all(mats) -> np.ndarray:
    mats = list(mats)
    if not mats:
        return np.zeros((1, 1))
    out = as_matrix(mats[0])
    for m in mats[1:]:
        out = kron_sum(out, m)
    return out


def kron_all(mats) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, np.atleast_2d(m))
    return out


# -- matrix exponential --------------------------------------------------------

def _poisson_weights(lam: float, tol: float = 1e-17) -> np.ndarray:
    # Terms k = 0..K of e^{-lam} lam^k / k!, truncated once the tail is below tol.
    w = [np.exp(-lam)]
    total = w[0]
    k = 0
    while 1.0 - total > tol and k < 10_000:
        k += 1
        w.append(w[-1] * lam / k)
        total += w[-1]
        if k > lam and w[-1] < tol * 1e-3:
            break
    return np.asarray(w)


def _uniformize(q: np.ndarray):
    rate = float(np.max(-np.diag(q))) if q.size else 0.0
    if rate <= 0.0:
        return 0.0, np.eye(q.shape[0])
    return rate, np.eye(q.shape[0]) + q / rate


def expm_uniformization(q, t: float) -> np.ndarray:
    """e^{Qt} for a Metzler matrix via uniformization plus repeated squaring."""
    q = as_matrix(q, "Q")
    n = q.shape[0]
    rate, p = _uniformize(q)
    if t == 0.0 or not np.any(q):
        return np.eye(n)
    if rate == 0.0:
        return mat_exp_pade(q, t)
    squarings = max(0, int(np.ceil(np.log2(rate * t))))
    h = t / 2.0 ** squarings
    w = _poisson_weights(rate * h)
    out = w[0] * np.eye(n)
    term = np.eye(n)
    for wk in w[1:]:
        term = term @ p
        out += wk * term
    for _ in range(squarings):
        out = out @ out
    return out


def mat_exp_pade(q, t: float) -> np.ndarray:
    """Scaling-and-squaring Padé exponential (scipy); the cross-check route."""
    return linalg.expm(as_matrix(q, "Q") * float(t))


def mat_exp(q, t: float) -> np.ndarray:
    """Matrix exponential e^{Qt}, t >= 0.

    Uniformization is used whenever Q is a generator or sub-generator,
    otherwise Padé.
    """
    if t < 0:
        raise ModelError("mat_exp needs t >= 0")
    q = as_matrix(q, "Q")
    if q.shape[0] != q.shape[1]:
        raise ModelError("mat_exp needs a square matrix")
    if is_metzler(q) and np.all(q.sum(axis=1) <= 1e-9 * max(1.0, np.abs(q).max(initial=0.0))):
        return expm_uniformization(q, t)
    return mat_exp_pade(q, t)


def transient_law(alpha, q, t: float) -> np.ndarray:
    """Row vector ``alpha @ e^{Qt}`` without forming the full exponential."""
    if t < 0:
        raise ModelError("transient_law needs t >= 0")
    q = as_matrix(q, "Q")
    v = np.asarray(alpha, dtype=float).ravel()
    if v.shape[0] != q.shape[0]:
        raise ModelError(f"dimension mismatch: alpha has {v.shape[0]} entries, Q is {q.shape[0]}x{q.shape[1]}")
    if t == 0.0:
        return v.copy()
    if not is_metzler(q):
        return v @ mat_exp_pade(q, t)
    rate, p = _uniformize(q)
    if rate == 0.0:
        return v.copy()
    pieces = max(1, int(np.ceil(rate * t / _UNIF_MAX_RATE_TIME)))
    w = _poisson_weights(rate * t / pieces)
    for _ in range(pieces):
        acc = w[0] * v
        term = v
        for wk in w[1:]:
            term = term @ p
            acc = acc + wk * term
        v = acc
    return v


# -- phase-type and MAP --------------------------------------------------------

@dataclass(frozen=True)
class PhDistribution:
    """Phase-type lifetime PH(alpha, T) of order m."""

    alpha: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        T = as_matrix(self.T, "T")
        if T.shape[0] != T.shape[1]:
            raise ModelError("T must be square")
        alpha = check_prob_vector(self.alpha, "alpha", substochastic=True)
        if alpha.shape[0] != T.shape[0]:
            raise ModelError("alpha and T dimensions differ")
        if not is_metzler(T):
            raise ModelError("T has negative off-diagonal entries")
        if np.any(np.diag(T) >= 0):
            raise ModelError("T must have a strictly negative diagonal")
        scale = max(1.0, np.abs(T).max())
        if np.any(T.sum(axis=1) > PROB_TOL * scale):
            raise ModelError("T has positive row sums")
        if np.linalg.cond(T) > 1e13:
            raise ModelError("T is singular: absorption is not certain")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "T", T)

    @property
    def order(self) -> int:
        return self.T.shape[0]

    @property
    def exit_vector(self) -> np.ndarray:
        return np.clip(-self.T.sum(axis=1), 0.0, None)

    @classmethod
    def exponential(cls, rate: float) -> "PhDistribution":
        return cls(np.array([1.0]), np.array([[-float(rate)]]))

    @classmethod
    def erlang(cls, k: int, rate: float) -> "PhDistribution":
        if k < 1:
            raise ModelError("Erlang order must be >= 1")
        T = -rate * np.eye(k) + rate * np.eye(k, k=1)
        alpha = np.zeros(k)
        alpha[0] = 1.0
        return cls(alpha, T)


def ph_reliability(ph: PhDistribution, t: float) -> float:
    """R(t) = alpha e^{Tt} 1."""
    if t < 0:
        raise ModelError("reliability needs t >= 0")
    return float(transient_law(ph.alpha, ph.T, t).sum())


def ph_density(ph: PhDistribution, t: float) -> float:
    """f(t) = alpha e^{Tt} t0."""
    if t < 0:
        raise ModelError("density needs t >= 0")
    return float(max(transient_law(ph.alpha, ph.T, t) @ ph.exit_vector, 0.0))


def ph_mean(ph: PhDistribution) -> float:
    """First moment -alpha T^{-1} 1."""
    try:
        x = np.linalg.solve(-ph.T.T, ph.alpha)
    except np.linalg.LinAlgError as exc:
        raise ModelError("T is singular") from exc
    return float(x.sum())


def ph_integrated_reliability(ph: PhDistribution, t: float) -> float:
    """Closed form of int_0^t R(s) ds = alpha T^{-1} (e^{Tt} - I) 1."""
    decayed = transient_law(ph.alpha, ph.T, t)
    return float(np.linalg.solve(ph.T.T, decayed - ph.alpha).sum())


@dataclass(frozen=True)
class MapProcess:
    """Markovian arrival process (D0, D1) with an initial phase law.

    An arrival-free process (D1 == 0) is accepted with a singular D0; it is
    the degenerate "no shocks" case.
    """

    D0: np.ndarray
    D1: np.ndarray
    initial: np.ndarray = field(default=None)

    def __post_init__(self):
        D0 = as_matrix(self.D0, "D0")
        D1 = as_matrix(self.D1, "D1")
        b = D0.shape[0]
        if D0.shape != (b, b) or D1.shape != (b, b):
            raise ModelError("D0 and D1 must be square with equal order")
        if not is_metzler(D0) or np.any(np.diag(D0) >= 0):
            raise ModelError("D0 needs nonnegative off-diagonals and a negative diagonal")
        if np.any(D1 < 0):
            raise ModelError("D1 has negative entries")
        check_generator(D0 + D1, "D0 + D1")
        if np.any(D1) and np.linalg.cond(D0) > 1e13:
            raise ModelError("D0 is singular")
        initial = np.full(b, 1.0 / b) if self.initial is None else self.initial
        initial = check_prob_vector(initial, "MAP initial law")
        if initial.shape[0] != b:
            raise ModelError("MAP initial law has wrong length")
        object.__setattr__(self, "D0", D0)
        object.__setattr__(self, "D1", D1)
        object.__setattr__(self, "initial", initial)

    @property
    def order(self) -> int:
        return self.D0.shape[0]

    @property
    def generator(self) -> np.ndarray:
        return self.D0 + self.D1

    @classmethod
    def poisson(cls, rate: float) -> "MapProcess":
        return cls(np.array([[-float(rate)]]), np.array([[float(rate)]]), np.array([1.0]))
