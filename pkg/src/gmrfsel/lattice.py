"""Torus geometry and the nested collection of neighborhood models.

A model is the set of non-zero nodes within a given toroidal radius of the
origin. Each model carries two bases of its coefficient space: the
anisotropic one (one element per ``{u, -u}`` pair) and the isotropic one
(one element per orbit under the 8 isometries of the square).

Node coordinates are always stored reduced modulo ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import ConfigurationError

Node = tuple[int, int]


@dataclass(frozen=True)
class TorusGeometry:
    """Square ``p x p`` torus."""

    p: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2:
            raise ConfigurationError(f"torus side must be an integer >= 2, got {self.p!r}")

    def reduce(self, node: Iterable[int]) -> Node:
        i, j = node
        return (int(i) % self.p, int(j) % self.p)

    def negate(self, node: Node) -> Node:
        i, j = node
        return ((-i) % self.p, (-j) % self.p)

    def orbit(self, node: Node) -> tuple[Node, ...]:
        """Images of ``node`` under the isometry group of the square, sorted."""
        i, j = self.reduce(node)
        p = self.p
        pts = {
            ((si * a) % p, (sj * b) % p)
            for a, b in ((i, j), (j, i))
            for si in (1, -1)
            for sj in (1, -1)
        }
        return tuple(sorted(pts))

    def pair(self, node: Node) -> tuple[Node, ...]:
        """``{u, -u}`` as a sorted tuple (length 1 for self-paired nodes)."""
        u = self.reduce(node)
        return tuple(sorted({u, self.negate(u)}))


def toroidal_norm_sq(node: Iterable[int], p: int) -> int:
    """Squared toroidal norm ``[i ^ (p-i)]^2 + [j ^ (p-j)]^2``."""
    i, j = node
    i, j = int(i) % p, int(j) % p
    a = min(i, p - i)
    b = min(j, p - j)
    return a * a + b * b


def basis_matrix(rep: Node, geometry: TorusGeometry, iso: bool = False) -> np.ndarray:
    """Indicator matrix of the pair (or orbit) generated by ``rep``."""
    rep = geometry.reduce(rep)
    if rep == (0, 0):
        raise ConfigurationError("the origin has no basis matrix")
    support = geometry.orbit(rep) if iso else geometry.pair(rep)
    out = np.zeros((geometry.p, geometry.p))
    for a, b in support:
        out[a, b] = 1.0
    return out


@dataclass(frozen=True)
class NeighborhoodModel:
    """One element of the nested collection ``m_0 ⊂ m_1 ⊂ ...``.

    ``aniso_basis`` and ``iso_basis`` hold canonical representatives
    (lexicographically smallest member of each pair or orbit), ordered by
    squared norm then lexicographically, so the basis of a smaller model is
    a prefix of the basis of any larger one.
    """

    index: int
    radius_sq: int
    geometry: TorusGeometry
    nodes: tuple[Node, ...]
    aniso_basis: tuple[Node, ...]
    iso_basis: tuple[Node, ...]
    _support_cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def p(self) -> int:
        return self.geometry.p

    @property
    def d_m(self) -> int:
        return len(self.aniso_basis)

    @property
    def d_m_iso(self) -> int:
        return len(self.iso_basis)

    def dim(self, iso: bool = False) -> int:
        return self.d_m_iso if iso else self.d_m

    def basis(self, iso: bool = False) -> tuple[Node, ...]:
        return self.iso_basis if iso else self.aniso_basis

    def supports(self, iso: bool = False) -> tuple[tuple[Node, ...], ...]:
        """Support set of every basis matrix, in basis order."""
        key = bool(iso)
        if key not in self._support_cache:
            g = self.geometry
            self._support_cache[key] = tuple(
                g.orbit(r) if iso else g.pair(r) for r in self.basis(iso)
            )
        return self._support_cache[key]

    def basis_stack(self, iso: bool = False) -> np.ndarray:
        """All basis matrices stacked into a ``(d, p, p)`` array."""
        out = np.zeros((self.dim(iso), self.p, self.p))
        for k, supp in enumerate(self.supports(iso)):
            for a, b in supp:
                out[k, a, b] = 1.0
        return out

    @cached_property
    def node_set(self) -> frozenset:
        return frozenset(self.nodes)

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "radius_sq": self.radius_sq,
            "d_m": self.d_m,
            "d_m_iso": self.d_m_iso,
            "nodes": [list(u) for u in self.nodes],
        }


def _norm_key(geometry: TorusGeometry):
    return lambda u: (toroidal_norm_sq(u, geometry.p), u)


def full_dimension(p: int) -> int:
    """Dimension of the complete (all-nodes) anisotropic model."""
    g = TorusGeometry(p)
    reps = {g.pair((i, j))[0] for i in range(p) for j in range(p) if (i, j) != (0, 0)}
    return len(reps)


def full_dimension_iso(p: int) -> int:
    g = TorusGeometry(p)
    return len({g.orbit((i, j))[0] for i in range(p) for j in range(p) if (i, j) != (0, 0)})


def build_model_collection(
    p: int, max_dim: int, max_models: int | None = None, iso: bool = False
) -> list[NeighborhoodModel]:
    """Nested models, one per attained squared radius, while ``d_m <= max_dim``.

    With ``iso`` the bound applies to ``d_m^iso`` instead.  ``m_0`` (the
    empty model) is always included; callers that need the collection
    without it can drop the first element.  ``max_models`` caps the number
    of non-empty models.
    """
    if int(p) != p or p < 4:
        raise ConfigurationError(f"model collections need p >= 4, got {p!r}")
    if int(max_dim) != max_dim or max_dim < 0:
        raise ConfigurationError(f"max_dim must be a non-negative integer, got {max_dim!r}")
    full = full_dimension_iso(p) if iso else full_dimension(p)
    if max_dim > full:
        raise ConfigurationError(
            f"max_dim={max_dim} exceeds the dimension {full} of the complete model for p={p}"
        )

    geometry = TorusGeometry(p)
    key = _norm_key(geometry)
    by_radius: dict[int, list[Node]] = {}
    for i in range(p):
        for j in range(p):
            if (i, j) != (0, 0):
                by_radius.setdefault(toroidal_norm_sq((i, j), p), []).append((i, j))

    models = [NeighborhoodModel(0, 0, geometry, (), (), ())]
    nodes: list[Node] = []
    aniso: list[Node] = []
    iso_reps: list[Node] = []
    for r2 in sorted(by_radius):
        shell = sorted(by_radius[r2])
        new_aniso = sorted({geometry.pair(u)[0] for u in shell}, key=key)
        new_iso = sorted({geometry.orbit(u)[0] for u in shell}, key=key)
        grown = len(iso_reps) + len(new_iso) if iso else len(aniso) + len(new_aniso)
        if grown > max_dim:
            break
        if max_models is not None and len(models) > max_models:
            break
        nodes.extend(shell)
        aniso.extend(new_aniso)
        iso_reps.extend(new_iso)
        models.append(
            NeighborhoodModel(
                index=len(models),
                radius_sq=r2,
                geometry=geometry,
                nodes=tuple(sorted(nodes, key=key)),
                aniso_basis=tuple(aniso),
                iso_basis=tuple(iso_reps),
            )
        )
    return models
