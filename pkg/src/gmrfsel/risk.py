"""Population risk quantities and the Monte Carlo risk harness.

For a model with basis ``Psi_1..Psi_d`` the limit of ``n p^2 E[l(theta_hat, theta_m)]``
is ``2 sigma^4 tr(W V^-1)`` where

* ``V[k,l] = cov(S_k, S_l)`` with ``S_k`` the sum of the field over the support of ``Psi_k``;
* ``W[k,l] = mean_s lambda_s(Psi_k) lambda_s(Psi_l) (1 - lambda_s(theta_m))^2 / (1 - lambda_s(theta))^2``;
* ``IL = diag(|Psi_k|_F^2)``, which replaces ``W`` when ``theta`` lies in the model.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .cls import fit_cls, population_normal_equations, project_population_fit
from .errors import AssumptionError, ConfigurationError, GMRFError, InfeasibleError, NumericalError
from .lattice import NeighborhoodModel
from .sampler import derived_seed, sample_field, scenario_theta
from .spectral import CovarianceModel, ThetaField, covariance_function, feasibility, loss_l, population_gamma

_COND_MAX = 1e12


def _check_h2(theta: ThetaField) -> None:
    if not theta.l1_norm() < 1.0:
        raise AssumptionError(
            f"diagonal dominance fails: |theta|_1 = {theta.l1_norm():.6g} must be < 1"
        )


def _check_h1(theta: ThetaField, rho1: float) -> None:
    phi = 1.0 - theta.spectrum.min
    if not phi < rho1:
        raise AssumptionError(f"phi_max(I - C(theta)) = {phi:.6g} is not below rho1 = {rho1}")


def _covariance(theta: ThetaField, sigma2: float) -> CovarianceModel:
    if not theta.spectrum.max < 1.0:
        raise InfeasibleError(
            f"theta is not positive: max eigenvalue of C(theta) is {theta.spectrum.max:.6g} >= 1"
        )
    return CovarianceModel(theta, sigma2)


@dataclass(frozen=True, eq=False)
class AsymptoticRisk:
    V: np.ndarray
    W: np.ndarray
    IL: np.ndarray
    value: float
    at_truth: bool = False
    projection_margin: float = math.nan


def variance_matrices(
    theta: ThetaField, model: NeighborhoodModel, sigma2: float = 1.0, rho1: float = 2.0, iso: bool = False
):
    """``(V, W, IL, projection_margin)`` for ``model`` under the field ``theta``."""
    if model.dim(iso) == 0:
        raise ConfigurationError("variance matrices need a non-empty model")
    cov = _covariance(theta, sigma2)
    V, _, _ = population_normal_equations(model, cov, iso)
    proj = project_population_fit(model, cov, rho1, iso)
    fz = feasibility(proj.theta_hat, rho1)
    margin = min(fz.upper_margin, fz.lower_margin)
    basis_spec = np.fft.fft2(model.basis_stack(iso)).real
    weight = ((1.0 - proj.theta_hat.spectrum.values) / (1.0 - theta.spectrum.values)) ** 2
    d = basis_spec.shape[0]
    flat = basis_spec.reshape(d, -1)
    W = (flat * weight.reshape(1, -1)) @ flat.T / (model.p**2)
    IL = np.diag([float(len(s)) for s in model.supports(iso)])
    return V, W, IL, margin


def _trace_solve(V: np.ndarray, A: np.ndarray) -> float:
    """``tr(A V^-1)`` through a Cholesky factorisation of ``V``."""
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > _COND_MAX:
        raise NumericalError(f"neighbour-sum covariance is ill conditioned (condition number {cond:.3g})")
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise NumericalError("neighbour-sum covariance is not positive definite") from None
    Y = np.linalg.solve(L, A)
    return float(np.trace(np.linalg.solve(L.T, Y)))


def asymptotic_risk(
    theta: ThetaField,
    model: NeighborhoodModel,
    sigma2: float = 1.0,
    rho1: float = 2.0,
    iso: bool = False,
    at_truth: bool = False,
) -> AsymptoticRisk:
    if model.dim(iso) == 0:
        raise ConfigurationError("asymptotic risk is undefined for the empty model")
    if at_truth:
        if not theta.support() <= model.node_set:
            raise AssumptionError("at_truth needs the support of theta inside the model")
        if iso and not _is_isotropic(theta, model):
            raise AssumptionError("at_truth with iso needs an isotropic theta")
        _check_h1(theta, rho1)
    else:
        _check_h2(theta)
    V, W, IL, margin = variance_matrices(theta, model, sigma2, rho1, iso)
    value = 2.0 * sigma2**2 * _trace_solve(V, IL if at_truth else W)
    return AsymptoticRisk(V, W, IL, value, at_truth, margin)


def asymptotic_variance(
    theta: ThetaField,
    model: NeighborhoodModel,
    sigma2: float = 1.0,
    rho1: float = 2.0,
    iso: bool = False,
    at_truth: bool = False,
) -> float:
    """Limit of ``n p^2 E[loss]``: ``2 sigma^4 tr(IL V^-1)`` at the truth, else ``2 sigma^4 tr(W V^-1)``."""
    return asymptotic_risk(theta, model, sigma2, rho1, iso, at_truth).value


def _is_isotropic(theta: ThetaField, model: NeighborhoodModel) -> bool:
    c = theta.coeffs
    g = model.geometry
    return all(
        np.allclose([c[a, b] for a, b in g.orbit(u)], c[u], rtol=0, atol=1e-12)
        for u in theta.support()
    )


def iso_m1_asymptotic(a: float, p: int, sigma2: float = 1.0) -> float:
    """Closed form ``2 sigma^4 a / cov(X[1,0], X[0,0])`` for the four-neighbour isotropic field."""
    if a == 0:
        raise ConfigurationError("a = 0 degenerates; the independent-field formula 2 sigma^2 d applies")
    if not abs(a) < 0.25:
        raise InfeasibleError(f"need 0 < |a| < 1/4, got a={a}")
    cov = CovarianceModel(scenario_theta("iso_m1", p, a=a), sigma2)
    return 2.0 * sigma2**2 * a / float(covariance_function(cov)[1, 0])


def conditional_variance(
    theta: ThetaField, model: NeighborhoodModel, sigma2: float = 1.0, rho1: float = 2.0, iso: bool = False
) -> float:
    """``Var(X[0,0] | X_m)``, the population criterion at the projection."""
    _check_h2(theta)
    cov = _covariance(theta, sigma2)
    proj = project_population_fit(model, cov, rho1, iso).theta_hat
    return population_gamma(proj, cov)


@dataclass(frozen=True)
class Membership:
    member: bool
    margin: float
    total: float
    drops: tuple[float, ...]


def ellipsoid_membership(
    theta: ThetaField,
    sigma2: float,
    a_seq: Sequence[float],
    collection: Sequence[NeighborhoodModel],
    rho1: float = 2.0,
) -> Membership:
    """Whether ``sum_i [Var(X0|X_{m_{i-1}}) - Var(X0|X_{m_i})] / a_i^2 <= 1``."""
    a = np.asarray(a_seq, dtype=float)
    if a.ndim != 1 or len(a) != len(collection) - 1:
        raise ConfigurationError(
            f"a_seq must have {len(collection) - 1} entries (one per model after the first), got {a.size}"
        )
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise ConfigurationError("a_seq entries must be positive and finite")
    if np.any(np.diff(a) > 0):
        raise ConfigurationError("a_seq must be non-increasing")
    _check_h2(theta)
    cv = [conditional_variance(theta, m, sigma2, rho1) for m in collection]
    drops = tuple(float(x) for x in np.maximum(np.asarray(cv[:-1]) - np.asarray(cv[1:]), 0.0))
    total = float(np.sum(np.asarray(drops) / a**2))
    return Membership(total <= 1.0, 1.0 - total, total, drops)


# -- Monte Carlo -----------------------------------------------------------------

RISK_HEADER = ("model_index", "d", "reps", "mean_rescaled_loss", "stderr", "asymptotic", "bias")


@dataclass
class RiskRow:
    model_index: int
    d: int
    reps: int
    mean_rescaled_loss: float
    stderr: float
    asymptotic: float
    bias: float
    mean_rescaled_loss_proj: float = math.nan
    stderr_proj: float = math.nan
    mean_decomposition_residual: float = math.nan
    stderr_decomposition: float = math.nan
    failures: int = 0
    stderr_reliable: bool = True


@dataclass
class RiskTable:
    rows: list[RiskRow]
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RISK_HEADER)
        for r in self.rows:
            w.writerow([r.model_index, r.d, r.reps] + [
                f"{getattr(r, k):.10g}" for k in RISK_HEADER[3:]
            ])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "rows": [asdict(r) for r in self.rows]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RiskTable":
        obj = json.loads(text)
        return cls([RiskRow(**r) for r in obj["rows"]], obj.get("config", {}))

    @classmethod
    def from_csv(cls, text: str) -> "RiskTable":
        rows = []
        for r in csv.DictReader(io.StringIO(text)):
            rows.append(RiskRow(int(r["model_index"]), int(r["d"]), int(r["reps"]),
                                *(float(r[k]) for k in RISK_HEADER[3:])))
        return cls(rows)


def _mean_se(x: np.ndarray):
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), math.nan
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


def _asymptotic_column(theta, model, sigma2, rho1, iso):
    if model.dim(iso) == 0:
        return 0.0
    for at_truth in (True, False):
        try:
            return asymptotic_variance(theta, model, sigma2, rho1, iso, at_truth)
        except AssumptionError:
            continue
    return math.nan


def monte_carlo_risk(
    theta: ThetaField,
    sigma2: float,
    collection: Sequence[NeighborhoodModel],
    n: int,
    reps: int,
    rho1: float = 2.0,
    iso: bool = False,
    seed: int = 0,
    threads: int = 1,
) -> RiskTable:
    """Simulated rescaled losses ``n p^2 l(theta_hat, theta)`` per model.

    Replication ``r`` of the ``i``-th model draws its batch from
    ``derived_seed(seed, i, r)``, so every cell is reproducible on its own.
    """
    if int(reps) != reps or reps < 1:
        raise ConfigurationError(f"reps must be a positive integer, got {reps}")
    if int(n) != n or n < 1:
        raise ConfigurationError(f"n must be a positive integer, got {n}")
    cov = _covariance(theta, sigma2)
    scale = n * theta.p**2
    if reps == 1:
        warnings.warn("reps=1: standard errors are undefined and reported as NaN", RuntimeWarning, stacklevel=2)
    rows = []
    for i, model in enumerate(collection):
        proj = project_population_fit(model, cov, rho1, iso).theta_hat
        bias = loss_l(proj, theta, cov)

        def one(r, model=model, proj=proj, i=i):
            batch = sample_field(cov, n, derived_seed(seed, i, r))
            try:
                th = fit_cls(model, batch, rho1, iso).theta_hat
            except GMRFError:
                return None
            return scale * loss_l(th, theta, cov), scale * loss_l(th, proj, cov)

        if threads and threads > 1 and reps > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                out = list(ex.map(one, range(reps)))
        else:
            out = [one(r) for r in range(reps)]
        ok = np.array([o for o in out if o is not None], dtype=float).reshape(-1, 2)
        m1, s1 = _mean_se(ok[:, 0])
        m2, s2 = _mean_se(ok[:, 1])
        m3, s3 = _mean_se(ok[:, 0] - ok[:, 1] - scale * bias)
        rows.append(RiskRow(
            model_index=model.index,
            d=model.dim(iso),
            reps=int(reps),
            mean_rescaled_loss=m1,
            stderr=s1,
            asymptotic=_asymptotic_column(theta, model, sigma2, rho1, iso),
            bias=bias,
            mean_rescaled_loss_proj=m2,
            stderr_proj=s2,
            mean_decomposition_residual=m3,
            stderr_decomposition=s3,
            failures=reps - ok.shape[0],
            stderr_reliable=ok.shape[0] > 1,
        ))
    config = {"p": theta.p, "n": n, "reps": reps, "sigma2": sigma2, "rho1": rho1, "iso": iso, "seed": seed}
    return RiskTable(rows, config)
