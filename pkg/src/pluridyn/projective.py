"""Points of complex projective space P^k and the Fubini-Study geometry.

A point is stored through k+1 homogeneous coordinates.  The canonical
representative has unit Euclidean norm and its first coordinate of
non-negligible modulus is real and positive, so equal points get equal
arrays up to float noise and dedup/serialization are stable.

Batch variants operate on arrays of shape (..., k+1); the ProjPoint class
is a thin wrapper used at API boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AllZero",
    "AtInfinity",
    "ProjPoint",
    "normalize",
    "canonical_rep",
    "unit_rep",
    "fs_distance",
    "fs_distance_arrays",
    "pairwise_fs",
    "chart_map",
    "chart_unmap",
    "chart_map_arrays",
    "chart_unmap_arrays",
    "best_chart",
    "random_fs_point",
    "random_fs_array",
]

# all coordinates below this modulus: not a projective point
_ALLZERO_FLOOR = 1e-300
# canonical-phase pivot: first coordinate above this modulus (unit rep)
_PIVOT_FLOOR = 1e-14
# chart membership: |z_chart| must exceed this on the unit representative
_INFINITY_FLOOR = 1e-12


class AllZero(ValueError):
    """Raised when every homogeneous coordinate is numerically zero."""


class AtInfinity(ValueError):
    """Raised when a point lies on the hyperplane at infinity of a chart."""


def unit_rep(coords: np.ndarray) -> np.ndarray:
    """Scale rows of (..., k+1) to unit Euclidean norm. AllZero on a null row."""
    z = np.asarray(coords, dtype=np.complex128)
    if not np.all(np.isfinite(z)):
        raise AllZero("non-finite homogeneous coordinates")
    # divide by the max modulus first so norms never overflow
    m = np.max(np.abs(z), axis=-1, keepdims=True)
    if np.any(m < _ALLZERO_FLOOR):
        raise AllZero("all homogeneous coordinates below 1e-300")
    z = z / m
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def canonical_rep(coords: np.ndarray) -> np.ndarray:
    """Unit-norm representative with the first sizable coordinate real > 0."""
    z = unit_rep(coords)
    mods = np.abs(z)
    pivot = np.argmax(mods > _PIVOT_FLOOR, axis=-1)
    pv = np.take_along_axis(z, pivot[..., None], axis=-1)[..., 0]
    phase = pv / np.abs(pv)
    z = z * np.conj(phase)[..., None]
    # kill the O(eps) residual imaginary part of the pivot coordinate
    pv_clean = np.abs(np.take_along_axis(z, pivot[..., None], axis=-1)[..., 0])
    np.put_along_axis(z, pivot[..., None], pv_clean[..., None].astype(np.complex128), axis=-1)
    return z


@dataclass(frozen=True)
class ProjPoint:
    """A point of P^k under the canonical normalization."""

    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = canonical_rep(np.asarray(self.coords, dtype=np.complex128).reshape(-1))
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def k(self) -> int:
        return self.coords.shape[0] - 1

    def __repr__(self) -> str:  # short, chart-free
        inner = ":".join(f"{c:.6g}" for c in self.coords)
        return f"ProjPoint[{inner}]"

    @classmethod
    def from_affine(cls, w: np.ndarray, chart: int = 0) -> "ProjPoint":
        return cls(chart_unmap_arrays(np.asarray(w, dtype=np.complex128), chart))


def normalize(coords: np.ndarray) -> ProjPoint:
    """Canonical ProjPoint from raw homogeneous coordinates."""
    return ProjPoint(coords)


def fs_distance_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fubini-Study distance arccos |<a, b>| between unit-rep rows.

    Evaluated as arctan2(sin, cos) with the sine from an explicit orthogonal
    component, which keeps full precision for nearly equal points (a plain
    arccos floors at ~1.5e-8 there).
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    inner = np.sum(b * np.conj(a), axis=-1)
    orth = b - inner[..., None] * a
    sin = np.linalg.norm(orth, axis=-1)
    cos = np.abs(inner)
    return np.arctan2(np.clip(sin, 0.0, None), np.clip(cos, 0.0, None))


def fs_distance(p: ProjPoint, q: ProjPoint) -> float:
    """Distance on P^k; ranges over [0, pi/2]."""
    return float(fs_distance_arrays(p.coords, q.coords))


def pairwise_fs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, m) distance matrix between unit-rep stacks a (n, k+1), b (m, k+1).

    Uses arccos of the Gram matrix: fast, with ~1.5e-8 noise floor near zero
    distance (fine for dedup radii and separation scales >= 1e-7).
    """
    gram = np.abs(a @ np.conj(b).T)
    return np.arccos(np.clip(gram, 0.0, 1.0))


def chart_map_arrays(coords: np.ndarray, chart: int) -> np.ndarray:
    """Affine coordinates z_j / z_chart (j != chart) for rows of (..., k+1).

    AtInfinity if any row has |z_chart| <= 1e-12 on its unit representative.
    """
    z = unit_rep(coords)
    piv = z[..., chart]
    if np.any(np.abs(piv) <= _INFINITY_FLOOR):
        raise AtInfinity(f"point at infinity of chart {chart}")
    w = np.delete(z, chart, axis=-1)
    return w / piv[..., None]


def chart_unmap_arrays(w: np.ndarray, chart: int) -> np.ndarray:
    """Homogeneous coordinates from affine chart coordinates (inserts 1)."""
    w = np.asarray(w, dtype=np.complex128)
    ones = np.ones(w.shape[:-1] + (1,), dtype=np.complex128)
    return np.concatenate([w[..., :chart], ones, w[..., chart:]], axis=-1)


def chart_map(p: ProjPoint, chart: int) -> np.ndarray:
    return chart_map_arrays(p.coords, chart)


def chart_unmap(w: np.ndarray, chart: int) -> ProjPoint:
    return ProjPoint(chart_unmap_arrays(w, chart))


def best_chart(coords: np.ndarray) -> np.ndarray:
    """Index of the largest-modulus coordinate per row: the best-conditioned
    chart (affine coordinates stay in the unit polydisk)."""
    return np.argmax(np.abs(coords), axis=-1)


def random_fs_array(k: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Canonical reps drawn from the Fubini-Study volume (Haar on the sphere)."""
    n = 1 if size is None else size
    g = rng.standard_normal((n, k + 1)) + 1j * rng.standard_normal((n, k + 1))
    z = canonical_rep(g)
    return z[0] if size is None else z


def random_fs_point(k: int, rng: np.random.Generator) -> ProjPoint:
    return ProjPoint(random_fs_array(k, rng))
