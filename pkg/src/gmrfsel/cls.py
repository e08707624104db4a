"""Conditional least squares fits and population projections.

Both the empirical criterion and its population counterpart are quadratic
in the coefficient vector ``a`` of a model's basis,

    gamma(a) = c - 2 b.a + a.G.a ,

with ``G`` the (empirical or population) covariance of the neighbour sums
``S_k = sum_{u in supp(Psi_k)} X[u]`` and ``b_k = cov(X[0,0], S_k)``.  The
feasible set ``1 - rho1 <= lambda_s(theta) <= 1`` is a polyhedron in ``a``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConvergenceError, SingularDesignError
from .lattice import NeighborhoodModel
from .qp import solve_qp
from .sampler import SampleBatch
from .spectral import (
    CovarianceModel,
    ThetaField,
    covariance_function,
    feasibility,
)

_COND_MAX = 1e12


def empirical_gamma(theta_prime: ThetaField, batch: SampleBatch) -> float:
    """CLS criterion: mean squared residual of every node regressed on the rest."""
    if theta_prime.p != batch.p:
        raise ConfigurationError(f"theta has p={theta_prime.p} but batch has p={batch.p}")
    X = batch.data
    pred = np.fft.ifft2(np.fft.fft2(X) * theta_prime.spectrum.values).real
    return float(np.mean((X - pred) ** 2))


def design_matrix(model: NeighborhoodModel, batch: SampleBatch, iso: bool = False) -> np.ndarray:
    """Columns ``C(Psi_k) X_i`` for every basis element, shape ``(n p^2, d)``."""
    B = model.basis_stack(iso)
    if B.shape[0] == 0:
        return np.zeros((batch.n * batch.p**2, 0))
    Xf = np.fft.fft2(batch.data)  # (n, p, p)
    Bf = np.fft.fft2(B).real  # (d, p, p)
    cols = np.fft.ifft2(Xf[None, :, :, :] * Bf[:, None, :, :]).real
    return cols.reshape(B.shape[0], -1).T


def normal_equations(model: NeighborhoodModel, batch: SampleBatch, iso: bool = False):
    """``(G, b, c)`` of the empirical criterion, all divided by ``n p^2``."""
    if model.p != batch.p:
        raise ConfigurationError(f"model built for p={model.p} but batch has p={batch.p}")
    chi = design_matrix(model, batch, iso)
    y = batch.data.reshape(-1)
    N = y.size
    return chi.T @ chi / N, chi.T @ y / N, float(y @ y / N)


def _solve_normal(G, b, what="normal equations"):
    if G.shape[0] == 0:
        return np.zeros(0)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > _COND_MAX:
        raise SingularDesignError(f"{what} are singular (condition number {cond:.3g})")
    return np.linalg.solve(G, b)


def fit_unconstrained(model: NeighborhoodModel, batch: SampleBatch, iso: bool = False):
    """Exact least squares minimiser of the criterion over the whole linear model.

    Returns ``(coeff_vector, ThetaField)``.
    """
    G, b, _ = normal_equations(model, batch, iso)
    a = _solve_normal(G, b)
    return a, ThetaField.from_basis(a, model.basis_stack(iso), model.p)


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: ThetaField
    gamma_value: float
    constrained: bool
    iterations: int
    coeff_vector: np.ndarray
    model_index: int = 0
    d: int = 0
    iso: bool = False
    extra: dict = field(default_factory=dict)

    def to_record(self, theta_csv_path=None) -> dict:
        rec = {
            "model_index": self.model_index,
            "d_m": self.d,
            "iso": self.iso,
            "gamma": self.gamma_value,
            "constrained": self.constrained,
            "iterations": self.iterations,
            "coeffs": [float(x) for x in self.coeff_vector],
        }
        if theta_csv_path is not None:
            rec["theta_csv_path"] = str(theta_csv_path)
        return rec

    def to_json(self, theta_csv_path=None) -> str:
        return json.dumps(self.to_record(theta_csv_path), indent=2)


def spectral_constraints(model: NeighborhoodModel, iso: bool, rho1: float):
    """Rows ``lambda_s(Psi_k)`` over distinct frequencies, with bounds ``[1 - rho1, 1]``."""
    B = model.basis_stack(iso)
    M = np.fft.fft2(B).real.reshape(B.shape[0], -1).T
    M = np.unique(np.round(M, 12), axis=0)
    lo = np.full(M.shape[0], 1.0 - rho1)
    hi = np.ones(M.shape[0])
    return M, lo, hi


def _feasible_start(a, M, lo, hi):
    v = M @ a
    t = 1.0
    if np.any(v > hi):
        t = min(t, float(np.min(hi[v > hi] / v[v > hi])))
    if np.any(v < lo):
        t = min(t, float(np.min(lo[v < lo] / v[v < lo])))
    return a * t


def _constrained_fit(G, b, c, a_free, model, iso, rho1):
    M, lo, hi = spectral_constraints(model, iso, rho1)
    res = solve_qp(G, b, c, M, lo, hi, _feasible_start(a_free, M, lo, hi))
    return res


def fit_cls(
    model: NeighborhoodModel, batch: SampleBatch, rho1: float = 2.0, iso: bool = False
) -> FitResult:
    """Minimise the CLS criterion over the closure of the ``rho1``-bounded model set."""
    if rho1 < 2:
        raise ConfigurationError(f"rho1 must be >= 2, got {rho1}")
    d = model.dim(iso)
    basis = model.basis_stack(iso)
    G, b, c = normal_equations(model, batch, iso)
    a = _solve_normal(G, b)
    theta = ThetaField.from_basis(a, basis, model.p)
    constrained = False
    iterations = 0
    if d and not feasibility(theta, rho1).feasible:
        try:
            res = _constrained_fit(G, b, c, a, model, iso, rho1)
        except ConvergenceError as exc:
            exc.args = (f"model {model.index} (d={d}, iso={iso}): {exc.args[0]}",)
            raise
        a, iterations = res.x, res.iterations
        theta = ThetaField.from_basis(a, basis, model.p)
        constrained = True
    return FitResult(
        theta_hat=theta,
        gamma_value=empirical_gamma(theta, batch),
        constrained=constrained,
        iterations=iterations,
        coeff_vector=a,
        model_index=model.index,
        d=d,
        iso=iso,
    )


def population_normal_equations(model: NeighborhoodModel, cov: CovarianceModel, iso: bool = False):
    """``(V, b, c0)``: covariance of neighbour sums, their covariance with ``X[0,0]``, ``var X[0,0]``."""
    if model.p != cov.p:
        raise ConfigurationError(f"model built for p={model.p} but covariance has p={cov.p}")
    grid = covariance_function(cov)
    p = cov.p
    supports = model.supports(iso)
    d = len(supports)
    V = np.empty((d, d))
    b = np.empty(d)
    for k, sk in enumerate(supports):
        uk = np.array(sk)
        b[k] = grid[uk[:, 0], uk[:, 1]].sum()
        for l in range(k, d):
            ul = np.array(supports[l])
            di = (ul[None, :, 0] - uk[:, None, 0]) % p
            dj = (ul[None, :, 1] - uk[:, None, 1]) % p
            V[k, l] = V[l, k] = grid[di, dj].sum()
    return V, b, float(grid[0, 0])


def project_population(
    model: NeighborhoodModel, cov: CovarianceModel, rho1: float = 2.0, iso: bool = False
) -> ThetaField:
    """Best approximation of the true field within the model (population CLS minimiser)."""
    return project_population_fit(model, cov, rho1, iso).theta_hat


def project_population_fit(
    model: NeighborhoodModel, cov: CovarianceModel, rho1: float = 2.0, iso: bool = False
) -> FitResult:
    if rho1 < 2:
        raise ConfigurationError(f"rho1 must be >= 2, got {rho1}")
    d = model.dim(iso)
    basis = model.basis_stack(iso)
    if d == 0:
        z = ThetaField.zeros(model.p)
        return FitResult(z, float(covariance_function(cov)[0, 0]), False, 0, np.zeros(0), model.index, 0, iso)
    V, b, c0 = population_normal_equations(model, cov, iso)
    a = _solve_normal(V, b, "kriging equations")
    theta = ThetaField.from_basis(a, basis, model.p)
    constrained = False
    iterations = 0
    if not feasibility(theta, rho1).feasible:
        res = _constrained_fit(V, b, c0, a, model, iso, rho1)
        a, iterations = res.x, res.iterations
        theta = ThetaField.from_basis(a, basis, model.p)
        constrained = True
    value = float(c0 - 2.0 * b @ a + a @ V @ a)
    return FitResult(theta, value, constrained, iterations, a, model.index, d, iso)
