"""Dynamical Green function, its Hölder data, and potential-theoretic grids.

The escape potential g of a degree-d endomorphism is the uniform limit of
d^{-n} log ||F^n(z)|| - log ||z||; it satisfies g(f(p)) = d g(p) - log||F(p~)||
for the unit representative p~.  All series here are truncated with an a
priori geometric tail bound, so reported values carry a certified error.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log, pi

import numpy as np

from .endo import HomEndo, differential_chart, fs_metric_sqrt, iterate_orbit, iterate_orbit_batch
from .gridio import ChartGrid, ChartWindow
from .projective import (
    best_chart,
    chart_map_arrays,
    chart_unmap_arrays,
    fs_distance_arrays,
    random_fs_array,
    unit_rep,
)
from .util import child_rng

__all__ = [
    "ResolutionTooCoarse",
    "GreenResult",
    "green_function",
    "green_value",
    "DInftyReport",
    "d_infty_and_holder",
    "holder_probe",
    "green_density_grid",
    "two_chart_mass",
    "DecayReport",
    "hypersurface_potential_decay",
]

_CHUNK = 1 << 18


class ResolutionTooCoarse(RuntimeError):
    """Grid too coarse for a trustworthy nonnegative density."""


_SUP_V_CACHE: dict[str, float] = {}


def _sup_v(f: HomEndo) -> float:
    """Sampled sup of |v|, v(z) = d^-1 log||F(z)|| on the unit sphere.

    v is the one-step increment of the escape series; its sup controls the
    geometric tail.  Cached per map."""
    key = f.content_hash()
    got = _SUP_V_CACHE.get(key)
    if got is not None:
        return got
    rng = child_rng(0x9EE4, "supv", key)
    z = random_fs_array(f.k, rng, size=4096)
    w = f.eval_lift(z)
    nrm = np.linalg.norm(w, axis=-1)
    v = np.log(nrm) / f.d
    sup = float(np.max(np.abs(v)))
    _SUP_V_CACHE[key] = sup
    return sup


def _green_batch(f: HomEndo, Z: np.ndarray, tol: float) -> tuple[np.ndarray, int, float]:
    """g on unit representatives, by partial escape series.

    Returns (values, n_used, tail_bound).  The tail after n terms is at most
    sup|v| d^-n / (1 - 1/d) <= C d^-n with C = 2 sup|v|; n is chosen so
    C d^-n < tol.
    """
    Z = unit_rep(np.asarray(Z, dtype=np.complex128))
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    C = 2.0 * _sup_v(f)
    d = f.d
    if C <= tol:
        n = 1
    else:
        n = max(1, ceil(log(C / tol) / log(d)))
    out = np.zeros(Z.shape[0])
    for lo in range(0, Z.shape[0], _CHUNK):
        z = Z[lo:lo + _CHUNK]
        acc = np.zeros(z.shape[0])
        fac = 1.0 / d
        for _ in range(n):
            w = f.eval_lift(z)
            nrm = np.linalg.norm(w, axis=-1)
            acc += fac * np.log(nrm)
            z = w / nrm[..., None]
            fac /= d
        out[lo:lo + _CHUNK] = acc
    tail = C * d ** (-n)
    if single:
        return out[0], n, tail
    return out, n, tail


@dataclass(frozen=True)
class GreenResult:
    values: np.ndarray
    n_used: int
    tail_bound: float


def green_function(f: HomEndo, points: np.ndarray, tol: float = 1e-10) -> GreenResult:
    """g at an array of points (any homogeneous representatives), batched."""
    values, n, tail = _green_batch(f, points, tol)
    return GreenResult(values=values, n_used=n, tail_bound=tail)


def green_value(f: HomEndo, point: np.ndarray, tol: float = 1e-10) -> float:
    v, _, _ = _green_batch(f, np.asarray(point).reshape(-1), tol)
    return float(v)


@dataclass(frozen=True)
class DInftyReport:
    d_seq: np.ndarray
    d_infty: float
    holder_gamma: float
    n_star: int


def d_infty_and_holder(f: HomEndo, n_max: int = 6, nsamples: int = 400,
                       seed: int = 0) -> DInftyReport:
    """Top uniform dilation d_infty and the implied Hölder exponent of g.

    d_infty = min over n of (sup ||D f^n||_FS)^(1/n), the sup sampled over a
    point cloud; gamma = min(1, log d / log d_infty).  Chart Jacobians are
    conjugated by metric square roots so the per-step factors telescope into
    the metric-true cocycle.
    """
    rng = child_rng(seed, "dinfty", f.content_hash())
    pts = random_fs_array(f.k, rng, size=nsamples)
    # points whose chart coordinates all have modulus one; for monomial maps
    # the dilation sup lives there, and generically they are just extra samples
    ntor = max(8, nsamples // 4)
    phases = rng.uniform(0.0, 2 * np.pi, size=(ntor, f.k + 1))
    torus = unit_rep(np.exp(1j * phases))
    cloud = np.vstack([pts, torus])
    sup = np.zeros(n_max)
    for z0 in cloud:
        try:
            orbit, tape = iterate_orbit(f, z0, n_max, with_tape=True)
        except ValueError:
            continue
        P = np.eye(f.k, dtype=np.complex128)
        for t, D in enumerate(tape):
            w_in = chart_map_arrays(orbit[t], D.chart_in)
            w_out = chart_map_arrays(orbit[t + 1], D.chart_out)
            S_out, _ = fs_metric_sqrt(w_out)
            _, Sinv_in = fs_metric_sqrt(w_in)
            P = (S_out @ D.matrix @ Sinv_in) @ P
            nrm = np.linalg.norm(P, 2)
            if nrm > sup[t]:
                sup[t] = nrm
    d_seq = sup ** (1.0 / np.arange(1, n_max + 1))
    n_star = int(np.argmin(d_seq))
    d_infty = float(d_seq[n_star])
    if d_infty <= 1.0:
        gamma = 1.0
    else:
        gamma = min(1.0, log(f.d) / log(d_infty))
    return DInftyReport(d_seq=d_seq, d_infty=d_infty, holder_gamma=gamma,
                        n_star=n_star + 1)


def holder_probe(f: HomEndo, gamma: float, npairs: int = 10_000,
                 seed: int = 0, tol: float = 1e-10) -> float:
    """Sampled Hölder constant: max |g(x)-g(y)| / dist(x,y)^gamma.

    Half the pairs are independent draws, half are perturbations at
    log-spaced scales down to 1e-6, so short distances are probed too.
    """
    rng = child_rng(seed, "holder", f.content_hash())
    nfar = npairs // 2
    a = random_fs_array(f.k, rng, size=npairs)
    b = np.empty_like(a)
    b[:nfar] = random_fs_array(f.k, rng, size=nfar)
    nnear = npairs - nfar
    scales = 10.0 ** rng.uniform(-6.0, -1.0, size=nnear)
    noise = rng.standard_normal((nnear, f.k + 1)) + 1j * rng.standard_normal((nnear, f.k + 1))
    b[nfar:] = unit_rep(a[nfar:] + scales[:, None] * noise)
    dist = fs_distance_arrays(a, b)
    keep = dist > 1e-12
    ga, _, _ = _green_batch(f, a[keep], tol)
    gb, _, _ = _green_batch(f, b[keep], tol)
    return float(np.max(np.abs(ga - gb) / dist[keep] ** gamma))


def green_density_grid(f: HomEndo, window: ChartWindow, res: int,
                       tol: float = 1e-9, neg_tol: float = 0.10,
                       richardson: bool = True) -> ChartGrid:
    """Density of the equilibrium measure on a chart window of P^1.

    density = (1/pi)(1+|w|^2)^-2 + (1/2pi) Lap g, the Laplacian by 5-point
    stencil on a padded cell-centered grid; with richardson=True the h and 2h
    stencils are extrapolated to cancel the h^2 error.  Negative cells are a
    resolution artifact: if they carry more than neg_tol of the positive mass
    the grid is rejected, otherwise they are clipped and recorded in meta.
    """
    if f.k != 1 or window.k != 1:
        raise ValueError("density grids are for maps of P^1")
    if res < 8:
        raise ValueError("res must be at least 8")
    pad = 2
    w = window.axis_points(0, res, pad=pad)
    h = 2 * window.half[0] / res
    Z = chart_unmap_arrays(w[..., None], window.chart)
    g, n_used, tail = _green_batch(f, Z.reshape(-1, 2), tol)
    g = g.reshape(w.shape)

    def stencil(step: int) -> np.ndarray:
        c = g[pad:-pad, pad:-pad]
        up = g[pad + step:g.shape[0] - pad + step, pad:-pad]
        dn = g[pad - step:g.shape[0] - pad - step, pad:-pad]
        ri = g[pad:-pad, pad + step:g.shape[1] - pad + step]
        le = g[pad:-pad, pad - step:g.shape[1] - pad - step]
        return (up + dn + ri + le - 4 * c) / (step * h) ** 2

    lap = stencil(1)
    if richardson:
        lap = (4.0 * lap - stencil(2)) / 3.0
    s = np.abs(w[pad:-pad, pad:-pad]) ** 2
    density = (1.0 / pi) / (1.0 + s) ** 2 + lap / (2.0 * pi)

    area = h * h
    neg_mass = float(-np.sum(np.minimum(density, 0.0)) * area)
    pos_mass = float(np.sum(np.maximum(density, 0.0)) * area)
    neg_fraction = neg_mass / pos_mass if pos_mass > 0 else float("inf")
    if neg_fraction > neg_tol:
        raise ResolutionTooCoarse(
            f"negative lobes carry {neg_fraction:.3g} of the positive mass "
            f"(limit {neg_tol}) at res {res}")
    density = np.maximum(density, 0.0)
    meta = {
        "mass": float(density.sum() * area),
        "neg_fraction": neg_fraction,
        "green_terms": n_used,
        "green_tail": tail,
        "richardson": richardson,
    }
    return ChartGrid(window=window, values=density, kind="density", meta=meta)


def two_chart_mass(f: HomEndo, res: int = 512, half: float = 1.0,
                   tol: float = 1e-9) -> dict:
    """Total equilibrium mass from the two standard chart windows of P^1.

    Boxes of half-width >= 1 in both charts cover P^1; a chart-1 cell is
    skipped when its center lies in the chart-0 window, so each point is
    counted once.  The total should be 1 up to discretization.
    """
    if half < 1.0:
        raise ValueError("boxes with half < 1 do not cover P^1")
    win0 = ChartWindow(chart=0, center=(0j,), half=(half,))
    win1 = ChartWindow(chart=1, center=(0j,), half=(half,))
    g0 = green_density_grid(f, win0, res, tol=tol)
    g1 = green_density_grid(f, win1, res, tol=tol)
    zeta = g1.points()
    with np.errstate(divide="ignore", invalid="ignore"):
        w_of = np.where(zeta != 0, 1.0 / np.where(zeta == 0, 1.0, zeta), np.inf)
    in_win0 = (np.abs(w_of.real) <= half) & (np.abs(w_of.imag) <= half)
    kept = ~in_win0
    mass0 = float(g0.masses().sum())
    mass1 = float((g1.masses() * kept).sum())
    return {
        "mass0": mass0,
        "mass1_kept": mass1,
        "total": mass0 + mass1,
        "grid0": g0,
        "grid1": g1,
        "kept_mask": kept,
    }


def _hyper_terms(h: dict, k: int) -> tuple[np.ndarray, np.ndarray, int]:
    if not h:
        raise ValueError("empty coefficient dict")
    exps = list(h.keys())
    degs = {sum(e) for e in exps}
    if len(degs) != 1:
        raise ValueError("coefficients must be homogeneous")
    s = degs.pop()
    if any(len(e) != k + 1 for e in exps):
        raise ValueError(f"exponents need {k + 1} entries")
    E = np.array(exps, dtype=np.int64)
    C = np.array([h[e] for e in exps], dtype=np.complex128)
    return E, C, s


def _log_abs_poly(E: np.ndarray, C: np.ndarray, Z: np.ndarray) -> np.ndarray:
    vals = (Z[..., None, :] ** E).prod(axis=-1) @ C
    return np.log(np.maximum(np.abs(vals), 1e-300))


@dataclass(frozen=True)
class DecayReport:
    ns: np.ndarray
    mean_abs: np.ndarray
    c_mean: float
    degree: int


def hypersurface_potential_decay(f: HomEndo, h: dict, n_max: int = 12,
                                 nsamples: int = 2000, seed: int = 0,
                                 tol: float = 1e-8) -> DecayReport:
    """Decay table of u_n = d^-n u(f^n p), u = s^-1 log|h| - g - c.

    c is fixed empirically so u has mean zero over the sample cloud.  When
    the zero set of h is dynamically generic the means go to 0 geometrically;
    an invariant (exceptional) hypersurface makes them stall at a positive
    level.
    """
    E, C, s = _hyper_terms(h, f.k)
    rng = child_rng(seed, "hdecay", f.content_hash())
    Z0 = random_fs_array(f.k, rng, size=nsamples)
    orbit = iterate_orbit_batch(f, Z0, n_max)
    u0 = _log_abs_poly(E, C, orbit[0]) / s - _green_batch(f, orbit[0], tol)[0]
    c_mean = float(u0.mean())
    ns = np.arange(n_max + 1)
    mean_abs = np.empty(n_max + 1)
    fac = 1.0
    for n in range(n_max + 1):
        if n == 0:
            un = u0 - c_mean
        else:
            un = (_log_abs_poly(E, C, orbit[n]) / s
                  - _green_batch(f, orbit[n], tol)[0] - c_mean)
        mean_abs[n] = float(np.mean(np.abs(un))) * fac
        fac /= f.d
    return DecayReport(ns=ns, mean_abs=mean_abs, c_mean=c_mean, degree=s)
