"""Coefficient fields, their block-circulant spectra, covariances and losses.

For a symmetric coefficient matrix ``theta`` the p^2 x p^2 operator
``C(theta)`` is block circulant, so it is diagonalised by the 2-D discrete
Fourier transform and its eigenvalue at frequency ``(i, j)`` is the real DFT
of ``theta``.  Every quantity below is a diagonal functional of such spectra
and costs one FFT.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InfeasibleError

#: relative tolerance used to classify spectra as interior / boundary
BOUNDARY_EPS = 1e-9
_SYM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def reflect(a: np.ndarray) -> np.ndarray:
    """``a[(-i) % p, (-j) % p]`` for every ``(i, j)``."""
    return np.roll(a[::-1, ::-1], 1, axis=(0, 1))


@dataclass(frozen=True, eq=False)
class ThetaField:
    """Conditional regression coefficients of a stationary field.

    ``coeffs[0, 0]`` must vanish and ``coeffs`` must be centrally symmetric.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise ConfigurationError(f"theta must be a square p x p array with p >= 2, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ConfigurationError("theta has non-finite entries")
        if c[0, 0] != 0.0:
            raise ConfigurationError(f"theta[0,0] must be 0, got {c[0, 0]!r}")
        scale = max(1.0, float(np.max(np.abs(c))))
        if np.max(np.abs(c - reflect(c))) > _SYM_TOL * scale:
            raise ConfigurationError("theta is not centrally symmetric: theta[i,j] != theta[-i,-j]")
        object.__setattr__(self, "coeffs", _frozen(c))

    @property
    def p(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, p: int) -> "ThetaField":
        return cls(np.zeros((p, p)))

    @classmethod
    def from_basis(cls, coeff_vector, basis_stack: np.ndarray, p: int) -> "ThetaField":
        """Linear combination ``sum_k a_k * B_k`` of a stack of basis matrices."""
        a = np.asarray(coeff_vector, dtype=float)
        if a.size == 0:
            return cls.zeros(p)
        return cls(np.tensordot(a, basis_stack, axes=1))

    @cached_property
    def spectrum(self) -> "Spectrum":
        return eigen_spectrum(self)

    def l1_norm(self) -> float:
        return float(np.abs(self.coeffs).sum())

    def support(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in zip(*np.nonzero(self.coeffs))}

    def __add__(self, other):
        return ThetaField(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return ThetaField(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return ThetaField(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, ThetaField) and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues of ``C(theta)``; ``values[i, j]`` is the frequency ``(i, j)`` eigenvalue."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def min(self) -> float:
        return float(self.values.min())


def eigen_spectrum(theta: ThetaField) -> Spectrum:
    """``lambda[i,j] = sum_{k,l} theta[k,l] cos(2 pi (k i + l j) / p)`` via FFT."""
    return Spectrum(np.fft.fft2(theta.coeffs).real)


def dense_precision_oracle(theta: ThetaField) -> np.ndarray:
    """Brute-force p^2 x p^2 matrix ``C(theta)``, for tests on tiny lattices.

    Row-major node indexing: node ``(i, j)`` is row ``i * p + j``, and the
    entry for nodes ``u, v`` is ``theta[v - u]`` (mod p).
    """
    p = theta.p
    if p > 8:
        raise ConfigurationError(f"dense oracle limited to p <= 8 (got p={p})")
    idx = np.arange(p)
    di = (idx[None, :] - idx[:, None]) % p  # [i1, i2] -> i2 - i1
    # C[(i1,j1),(i2,j2)] = theta[i2-i1, j2-j1]
    C = theta.coeffs[di[:, None, :, None], di[None, :, None, :]]
    return C.reshape(p * p, p * p)


class FeasibilityStatus(str, Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class Feasibility:
    """Position of ``theta`` relative to the set ``1 - rho1 <= lambda < 1``.

    ``upper_margin = 1 - max(lambda)`` and
    ``lower_margin = rho1 - (1 - min(lambda))``; both are positive in the interior.
    """

    status: FeasibilityStatus
    upper_margin: float
    lower_margin: float

    @property
    def feasible(self) -> bool:
        return self.status is not FeasibilityStatus.INFEASIBLE


def feasibility(theta: ThetaField, rho1: float, eps: float = BOUNDARY_EPS) -> Feasibility:
    if rho1 < 2:
        raise ConfigurationError(f"rho1 must be >= 2, got {rho1}")
    lam = theta.spectrum
    upper = 1.0 - lam.max
    lower = rho1 - (1.0 - lam.min)
    tol = eps * max(1.0, abs(lam.max), abs(lam.min))
    if upper > tol and lower > tol:
        status = FeasibilityStatus.INTERIOR
    elif upper >= -tol and lower >= -tol:
        status = FeasibilityStatus.BOUNDARY
    else:
        status = FeasibilityStatus.INFEASIBLE
    return Feasibility(status, upper, lower)


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Stationary Gaussian field with ``Sigma = sigma2 * (I - C(theta))^-1``."""

    theta: ThetaField
    sigma2: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ConfigurationError(f"sigma2 must be positive, got {self.sigma2}")
        if self.theta.spectrum.max >= 1.0:
            raise InfeasibleError(
                f"I - C(theta) is not positive definite: max eigenvalue of C(theta) is "
                f"{self.theta.spectrum.max:.6g} >= 1"
            )

    @property
    def p(self) -> int:
        return self.theta.p

    @property
    def spectrum(self) -> Spectrum:
        return self.theta.spectrum

    @cached_property
    def covariance_spectrum(self) -> np.ndarray:
        """Eigenvalues ``sigma2 / (1 - lambda_s)`` of Sigma."""
        return self.sigma2 / (1.0 - self.spectrum.values)

    @property
    def phi_max(self) -> float:
        return float(self.covariance_spectrum.max())

    @property
    def phi_min(self) -> float:
        return float(self.covariance_spectrum.min())


def covariance_function(model: CovarianceModel) -> np.ndarray:
    """Grid of ``cov(X[0,0], X[i,j])``.

    >>> covariance_function(CovarianceModel(ThetaField.zeros(3), 2.0))[0, 0]
    2.0
    """
    return np.fft.ifft2(model.covariance_spectrum).real


def population_gamma(theta_prime: ThetaField, model: CovarianceModel) -> float:
    """Mean squared error of ``sum theta'[u] X[u]`` as a predictor of ``X[0,0]``."""
    one_minus = 1.0 - theta_prime.spectrum.values
    return float(np.mean(one_minus**2 * model.covariance_spectrum))


def loss_l(theta1: ThetaField, theta2: ThetaField, model: CovarianceModel) -> float:
    """Prediction loss ``(1/p^2) tr[(C1 - C2) Sigma (C1 - C2)]``."""
    diff = theta1.spectrum.values - theta2.spectrum.values
    return float(np.mean(diff**2 * model.covariance_spectrum))


def frobenius_loss(theta1: ThetaField, theta2: ThetaField) -> float:
    if theta1.p != theta2.p:
        raise ConfigurationError(f"dimension mismatch: p={theta1.p} vs p={theta2.p}")
    return float(np.sum((theta1.coeffs - theta2.coeffs) ** 2))


# -- serialization -----------------------------------------------------------

def theta_to_csv(theta: ThetaField) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in theta.coeffs:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def theta_from_csv(text: str) -> ThetaField:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    try:
        arr = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ConfigurationError(f"malformed theta CSV: {exc}") from None
    return ThetaField(arr)


def theta_to_json(theta: ThetaField) -> str:
    return json.dumps({"p": theta.p, "coeffs": theta.coeffs.tolist()})


def theta_from_json(text: str) -> ThetaField:
    obj = json.loads(text)
    arr = np.array(obj["coeffs"], dtype=float)
    if arr.shape != (obj["p"], obj["p"]):
        raise ConfigurationError(f"declared p={obj['p']} does not match coefficient shape {arr.shape}")
    return ThetaField(arr)


def read_theta(path) -> ThetaField:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return theta_from_json(text)
    return theta_from_csv(text)


def write_theta(theta: ThetaField, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(theta_to_json(theta))
    else:
        path.write_text(theta_to_csv(theta))
