"""Exact spectral simulation of stationary fields on the torus and scenario presets.

Replication ``r`` of a batch with seed ``s`` draws its white noise from a
Philox (counter-based) generator keyed by ``SeedSequence(s, spawn_key=(r,))``,
so any subset of replications can be regenerated independently and in any
order.
"""

from __future__ import annotations

import csv
import io
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InfeasibleError
from .spectral import CovarianceModel, ThetaField

MAGIC = b"GMRF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
_SEED_MAX = 2**64 - 1


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """``n`` i.i.d. realisations of a ``p x p`` field, stored as ``data[n, p, p]``."""

    data: np.ndarray
    seed: int = 0

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64, copy=True)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3 or d.shape[1] != d.shape[2] or d.shape[0] < 1:
            raise ConfigurationError(f"batch data must have shape (n, p, p), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ConfigurationError("batch contains non-finite values")
        if not 0 <= int(self.seed) <= _SEED_MAX:
            raise ConfigurationError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, SampleBatch)
            and self.seed == other.seed
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def replication_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(r),))))


def derived_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed for the cell ``keys`` of a parent seed."""
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(
        2, np.uint32
    )
    return int(state[0]) | (int(state[1]) << 32)


def _draw(sqrt_half: np.ndarray, p: int, seed: int, r: int) -> np.ndarray:
    z = replication_rng(seed, r).standard_normal((p, p))
    # rfft2 of real noise keeps the Hermitian pairing exact on the half plane
    return np.fft.irfft2(np.fft.rfft2(z) * sqrt_half, s=(p, p))


def sample_field(model: CovarianceModel, n: int, seed: int, threads: int = 1) -> SampleBatch:
    """Draw ``n`` exact samples from ``N(0, sigma2 (I - C(theta))^-1)``.

    Each replication is a circular convolution of white noise with the
    symmetric square root of Sigma, computed in the frequency domain.
    """
    if not isinstance(model, CovarianceModel):
        raise InfeasibleError("sample_field needs a validated CovarianceModel")
    if int(n) != n or n < 1:
        raise ConfigurationError(f"n must be a positive integer, got {n!r}")
    if not 0 <= int(seed) <= _SEED_MAX:
        raise ConfigurationError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    p = model.p
    sqrt_half = np.sqrt(model.covariance_spectrum[:, : p // 2 + 1])
    if threads and threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            reps = list(ex.map(lambda r: _draw(sqrt_half, p, seed, r), range(n)))
    else:
        reps = [_draw(sqrt_half, p, seed, r) for r in range(n)]
    return SampleBatch(np.stack(reps), seed=seed)


# -- scenario presets ----------------------------------------------------------

PRESETS = ("zero", "iso_m1", "hardcase")


def scenario_theta(name: str, p: int, **params) -> ThetaField:
    """Named coefficient fields.

    ``zero``: independent field.  ``iso_m1`` (``a``): four nearest neighbours
    with weight ``a``, ``|a| < 1/4``.  ``hardcase`` (``alpha``): weight
    ``alpha`` at the four nodes ``(+-p/4, +-p/4)``, ``0 < alpha < 1/4`` and
    ``p`` divisible by 4.
    """
    key = name.replace("-", "_").lower()
    if int(p) != p or p < 2:
        raise ConfigurationError(f"p must be an integer >= 2, got {p!r}")
    theta = np.zeros((p, p))
    if key == "zero":
        pass
    elif key == "iso_m1":
        a = float(params.get("a", 0.0))
        if not abs(a) < 0.25:
            raise InfeasibleError(f"iso_m1 needs |a| < 1/4 (4|a| < 1), got a={a}")
        for u in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            theta[u[0] % p, u[1] % p] = a
    elif key == "hardcase":
        alpha = float(params.get("alpha", 0.0))
        if p % 4:
            raise ConfigurationError(f"hardcase needs p divisible by 4, got p={p}")
        if not 0 < alpha < 0.25:
            raise InfeasibleError(f"hardcase needs 0 < alpha < 1/4, got alpha={alpha}")
        q = p // 4
        for si in (1, -1):
            for sj in (1, -1):
                theta[(si * q) % p, (sj * q) % p] = alpha
    else:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return ThetaField(theta)


# -- batch files ---------------------------------------------------------------

def batch_to_bytes(batch: SampleBatch) -> bytes:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, batch.p, batch.n, batch.seed)
    return header + batch.data.astype("<f8").tobytes(order="C")


def batch_from_bytes(blob: bytes) -> SampleBatch:
    if len(blob) < _HEADER.size:
        raise ConfigurationError("batch file truncated: header incomplete")
    magic, version, p, n, seed = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ConfigurationError(f"not a batch file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported batch format version {version}")
    expected = _HEADER.size + 8 * n * p * p
    if len(blob) != expected:
        raise ConfigurationError(f"batch file has {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(n, p, p)
    return SampleBatch(data.astype(np.float64), seed=seed)


def write_batch(batch: SampleBatch, path) -> None:
    Path(path).write_bytes(batch_to_bytes(batch))


def read_batch(path) -> SampleBatch:
    return batch_from_bytes(Path(path).read_bytes())


def batch_to_csv(batch: SampleBatch) -> str:
    """One row per replication, ``p^2`` row-major columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for x in batch.data:
        w.writerow([repr(float(v)) for v in x.ravel()])
    return buf.getvalue()


def batch_from_csv(text: str, seed: int = 0) -> SampleBatch:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    arr = np.array([[float(v) for v in r] for r in rows])
    p = int(round(np.sqrt(arr.shape[1])))
    if p * p != arr.shape[1]:
        raise ConfigurationError(f"CSV rows have {arr.shape[1]} columns, not a perfect square")
    return SampleBatch(arr.reshape(-1, p, p), seed=seed)
