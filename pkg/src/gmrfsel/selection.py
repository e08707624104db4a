"""Penalised model selection over a nested collection.

The selected model minimises ``gamma_{n,p}(theta_hat_m) + pen(m)`` with

    pen(m) = K * rho1^2 * phi_max * d / (n p^2)

where ``phi_max`` is either supplied, estimated as ``rho2 * sigma0^2``
from the largest model, or (slope mode) the whole factor ``K rho1^2
phi_max`` is replaced by a data-driven scale fitted to the decay of the
criterion with dimension.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .cls import FitResult, empirical_gamma, fit_cls
from .errors import CalibrationError, ConfigurationError, ConvergenceError, GMRFError
from .lattice import NeighborhoodModel, build_model_collection, full_dimension
from .sampler import SampleBatch
from .spectral import ThetaField

PHI_MODES = ("known", "plugin", "slope")
MIN_SLOPE_MODELS = 5


@dataclass(frozen=True)
class SelectionConfig:
    """Penalty configuration.

    ``K`` defaults to 1.0.  The theory only requires ``K`` to exceed an
    unspecified universal constant, so no default can be claimed to satisfy
    it; slope mode (which does not use ``K``) is the recommended choice.
    ``K = 0`` is accepted and switches the penalty off.
    """

    K: float = 1.0
    rho1: float = 2.0
    phi_max_mode: str = "slope"
    phi_max: float | None = None
    rho2: float | None = None
    iso: bool = False
    max_dim: int = 20

    def __post_init__(self):
        if not (math.isfinite(self.K) and self.K >= 0):
            raise ConfigurationError(f"K must be a finite non-negative number, got {self.K}")
        if not (math.isfinite(self.rho1) and self.rho1 >= 2):
            raise ConfigurationError(f"rho1 must be >= 2, got {self.rho1}")
        if self.phi_max_mode not in PHI_MODES:
            raise ConfigurationError(f"phi_max_mode must be one of {PHI_MODES}, got {self.phi_max_mode!r}")
        if self.phi_max_mode == "known":
            if self.phi_max is None or not (math.isfinite(self.phi_max) and self.phi_max > 0):
                raise ConfigurationError("known mode needs a positive phi_max value")
            if self.rho2 is not None:
                raise ConfigurationError("known mode takes phi_max, not rho2")
        elif self.phi_max_mode == "plugin":
            if self.rho2 is None or not (math.isfinite(self.rho2) and self.rho2 >= 1):
                raise ConfigurationError("plugin mode needs rho2 >= 1")
            if self.phi_max is not None:
                raise ConfigurationError("plugin mode takes rho2, not phi_max")
        elif self.phi_max is not None or self.rho2 is not None:
            raise ConfigurationError("slope mode takes neither phi_max nor rho2")
        if int(self.max_dim) != self.max_dim or self.max_dim < 0:
            raise ConfigurationError(f"max_dim must be a non-negative integer, got {self.max_dim}")


def penalty(model: NeighborhoodModel, config: SelectionConfig, n: int, p: int, phi_max: float) -> float:
    if not phi_max > 0:
        raise ConfigurationError(f"phi_max must be positive, got {phi_max}")
    d = model.dim(config.iso)
    return config.K * config.rho1**2 * phi_max * d / (n * p * p)


def slope_heuristic_K(gamma_by_dim: Sequence[tuple[int, float]], n: int, p: int) -> float:
    """Penalty scale ``2|s|`` from the slope ``s`` of gamma against ``d / (n p^2)``.

    The slope is fitted by least squares on the largest-dimension half of
    the models, where the bias has flattened and only the variance term
    drives the decrease.
    """
    pts = sorted((int(d), float(g)) for d, g in gamma_by_dim)
    if len(pts) < MIN_SLOPE_MODELS:
        raise CalibrationError(
            f"slope calibration needs at least {MIN_SLOPE_MODELS} models, got {len(pts)}"
        )
    tail = pts[len(pts) // 2:]
    x = np.array([d for d, _ in tail], dtype=float) / (n * p * p)
    y = np.array([g for _, g in tail])
    if np.ptp(x) == 0:
        raise CalibrationError("slope calibration needs distinct dimensions in the fitted range")
    xc = x - x.mean()
    s = float(xc @ (y - y.mean()) / (xc @ xc))
    if -s * np.ptp(x) <= 1e-12 * max(1e-300, float(np.max(np.abs(y)))):
        raise CalibrationError(f"criterion does not decrease with dimension (slope {s:.3g})")
    return 2.0 * abs(s)


def estimate_sigma2(theta_tilde: ThetaField, batch: SampleBatch) -> float:
    return empirical_gamma(theta_tilde, batch)


@dataclass
class ModelRecord:
    model_index: int
    d: int
    gamma: float
    penalty: float
    criterion: float
    constrained: bool


@dataclass(eq=False)
class SelectionReport:
    records: list[ModelRecord]
    chosen_index: int
    theta_tilde: ThetaField
    sigma2_tilde: float
    config: SelectionConfig
    diagnostics: dict = field(default_factory=dict)
    fits: list[FitResult] = field(default_factory=list, repr=False)

    @property
    def chosen(self) -> ModelRecord:
        return next(r for r in self.records if r.model_index == self.chosen_index)

    def to_dict(self) -> dict:
        return {
            "chosen_index": self.chosen_index,
            "chosen_d": self.chosen.d,
            "sigma2_tilde": self.sigma2_tilde,
            "theta_tilde": self.theta_tilde.coeffs.tolist(),
            "config": asdict(self.config),
            "diagnostics": self.diagnostics,
            "models": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SelectionReport":
        obj = json.loads(text)
        return cls(
            records=[ModelRecord(**r) for r in obj["models"]],
            chosen_index=obj["chosen_index"],
            theta_tilde=ThetaField(np.array(obj["theta_tilde"], dtype=float)),
            sigma2_tilde=obj["sigma2_tilde"],
            config=SelectionConfig(**obj["config"]),
            diagnostics=obj["diagnostics"],
        )

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in self.records:
            w.writerow([r.model_index, r.d, f"{r.gamma:.10g}", f"{r.penalty:.10g}",
                        f"{r.criterion:.10g}", int(r.constrained)])
        return buf.getvalue()


TABLE_HEADER = ("model_index", "d", "gamma", "penalty", "criterion", "constrained")


def read_selection_table(text: str) -> list[ModelRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        ModelRecord(int(r["model_index"]), int(r["d"]), float(r["gamma"]), float(r["penalty"]),
                    float(r["criterion"]), bool(int(r["constrained"])))
        for r in rows
    ]


def _fit_all(batch, collection, rho1, iso, threads):
    def one(model):
        try:
            return fit_cls(model, batch, rho1, iso)
        except GMRFError as exc:
            exc.args = (f"fit of model {model.index} (d={model.dim(iso)}) failed: {exc.args[0]}",)
            raise

    if threads and threads > 1 and len(collection) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, collection))
    return [one(m) for m in collection]


def _check_nested(collection):
    for a, b in zip(collection, collection[1:]):
        if not a.node_set <= b.node_set or a.p != b.p:
            raise ConfigurationError(
                f"collection is not nested: model {a.index} is not contained in model {b.index}"
            )


def select_model(
    batch: SampleBatch,
    collection: Sequence[NeighborhoodModel],
    config: SelectionConfig,
    threads: int = 1,
) -> SelectionReport:
    if not collection:
        raise ConfigurationError("model collection is empty")
    collection = list(collection)
    _check_nested(collection)
    if collection[0].p != batch.p:
        raise ConfigurationError(f"models built for p={collection[0].p} but batch has p={batch.p}")
    n, p, iso = batch.n, batch.p, config.iso
    fits = _fit_all(batch, collection, config.rho1, iso, threads)
    diagnostics: dict = {"mode": config.phi_max_mode}

    dims = [m.dim(iso) for m in collection]
    if config.phi_max_mode == "slope":
        scale = slope_heuristic_K(list(zip(dims, (f.gamma_value for f in fits))), n, p)
        diagnostics["kappa_hat"] = scale
        pens = [scale * d / (n * p * p) for d in dims]
    else:
        if config.phi_max_mode == "known":
            phi = float(config.phi_max)
        else:
            largest = max(range(len(collection)), key=lambda i: dims[i])
            phi = config.rho2 * fits[largest].gamma_value
            diagnostics["sigma2_0"] = fits[largest].gamma_value
        diagnostics["phi_max"] = phi
        pens = [penalty(m, config, n, p, phi) for m in collection]

    records = [
        ModelRecord(m.index, d, f.gamma_value, pen, f.gamma_value + pen, f.constrained)
        for m, d, f, pen in zip(collection, dims, fits, pens)
    ]
    best = min(range(len(records)), key=lambda i: (records[i].criterion, records[i].d, i))
    diagnostics["constrained"] = [r.constrained for r in records]
    theta = fits[best].theta_hat
    return SelectionReport(
        records=records,
        chosen_index=records[best].model_index,
        theta_tilde=theta,
        sigma2_tilde=estimate_sigma2(theta, batch),
        config=config,
        diagnostics=diagnostics,
        fits=fits,
    )


# -- suprema of phi_max over the positive models --------------------------------

def _orbit_representative_frequencies(p: int) -> np.ndarray:
    h = p // 2
    return np.array([(i, j) for i in range(h + 1) for j in range(i + 1)])


def rho_sup(model: NeighborhoodModel, p: int | None = None, iso: bool = False) -> float:
    """``sup phi_max(I - C(theta))`` over positive fields supported by ``model``.

    Equals ``1 + max_{s*} max{-lambda_{s*}(theta) : lambda_s(theta) <= 1 for all s}``;
    each inner problem is a linear program in the basis coefficients.  The
    node set is invariant under the symmetries of the square, so ``s*`` only
    ranges over one frequency per symmetry orbit.
    """
    if p is not None and p != model.p:
        raise ConfigurationError(f"model built for p={model.p}, got p={p}")
    if model.dim(iso) == 0:
        raise ConfigurationError("rho_sup needs a non-empty model")
    p = model.p
    B = model.basis_stack(iso)
    spectra = np.fft.fft2(B).real  # (d, p, p)
    rows = np.unique(np.round(spectra.reshape(B.shape[0], -1).T, 12), axis=0)
    ones = np.ones(rows.shape[0])
    free = [(None, None)] * B.shape[0]
    best = 0.0
    for i, j in _orbit_representative_frequencies(p):
        res = linprog(spectra[:, i, j], A_ub=rows, b_ub=ones, bounds=free, method="highs")
        if res.status != 0:
            raise ConvergenceError(f"LP for frequency ({i}, {j}) failed: {res.message}")
        best = max(best, -float(res.fun))
    return 1.0 + best


@dataclass(frozen=True)
class RhoRow:
    d: int
    rho: float
    d_iso: int
    rho_iso: float


def rho_table(p: int, k: int) -> list[RhoRow]:
    """``(d_m, rho(m), d_m^iso, rho^iso(m))`` for the first ``k`` non-empty models."""
    if int(p) != p or p < 8:
        raise ConfigurationError(f"rho table needs p >= 8, got {p}")
    if int(k) != k or k < 1:
        raise ConfigurationError(f"k must be a positive integer, got {k}")
    models = build_model_collection(p, full_dimension(p), max_models=k)[1:]
    if len(models) < k:
        raise ConfigurationError(f"p={p} has only {len(models)} non-empty models")
    return [RhoRow(m.d_m, rho_sup(m), m.d_m_iso, rho_sup(m, iso=True)) for m in models]


RHO_HEADER = ("d_m", "rho", "d_m_iso", "rho_iso")


def rho_table_csv(rows: Sequence[RhoRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RHO_HEADER)
    for r in rows:
        w.writerow([r.d, f"{r.rho:.10g}", r.d_iso, f"{r.rho_iso:.10g}"])
    return buf.getvalue()


def read_rho_table(text: str) -> list[RhoRow]:
    return [
        RhoRow(int(r["d_m"]), float(r["rho"]), int(r["d_m_iso"]), float(r["rho_iso"]))
        for r in csv.DictReader(io.StringIO(text))
    ]
