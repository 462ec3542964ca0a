"""Fibers f^{-1}(a), inverse branches, and backward trees.

k = 1 fibers reduce to eigenvalues of the companion matrix of the pencil
a_1 F_0 - a_0 F_1 (batched over targets), plus the point at infinity with
the degree drop as multiplicity.  k >= 2 fibers use damped multistart
Newton in every chart with the Bezout count d^k as the completion target.
Multiplicities at coincident points come from cluster sizes, refined by a
perturbed-target probe; the total always reconciles to d^k or the fiber is
rejected as incomplete.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .endo import HomEndo, differential_chart
from .projective import (
    best_chart,
    canonical_rep,
    chart_unmap_arrays,
    fs_distance_arrays,
    pairwise_fs,
    unit_rep,
)
from .util import child_rng

__all__ = [
    "IncompleteFiber",
    "BranchCollision",
    "Fiber",
    "fiber",
    "random_preimage",
    "random_preimage_batch",
    "InverseBranch",
    "inverse_branch",
    "BackwardTree",
    "backward_tree",
]

_DEDUP_RADIUS = 1e-7
_RESIDUAL_TOL = 1e-9


class IncompleteFiber(RuntimeError):
    """Solver could not account for all d^k preimages."""

    def __init__(self, count_found: int, need: int):
        super().__init__(f"found {count_found} of {need} preimages (with multiplicity)")
        self.count_found = count_found
        self.need = need


class BranchCollision(RuntimeError):
    """Inverse-branch continuation hit the critical set."""


@dataclass(frozen=True)
class Fiber:
    """Preimages of one target, multiplicities summing to d^k."""

    target: np.ndarray
    points: np.ndarray          # (m, k+1) canonical reps
    multiplicities: np.ndarray  # (m,) int, sum == d^k
    residuals: np.ndarray       # (m,) fs distance of f(point) to target
    from_cluster: bool          # multiplicities inferred from clustering/probe

    @property
    def total_multiplicity(self) -> int:
        return int(self.multiplicities.sum())


# -- k = 1: batched pencil roots ----------------------------------------------


def _dense_binary(f: HomEndo) -> np.ndarray:
    """Dense (2, d+1) coefficients over j = exponent of z_1."""
    out = np.zeros((2, f.d + 1), dtype=np.complex128)
    for i in range(2):
        for e, c in f.coeffs[i].items():
            out[i, e[1]] = c
    return out


def _quadratic_roots(monic: np.ndarray) -> np.ndarray:
    """Stable roots of w^2 + b w + c for rows (c, b, 1): returns (G, 2)."""
    c, b = monic[:, 0], monic[:, 1]
    sq = np.sqrt(b * b - 4.0 * c)
    pick = np.where(np.abs(b + sq) >= np.abs(b - sq), b + sq, b - sq)
    s = -0.5 * pick
    r2 = np.where(np.abs(s) > 0, np.divide(c, np.where(s == 0, 1.0, s)), 0.0)
    return np.stack([s, r2], axis=1)


def _group_roots(monic: np.ndarray, deg: int) -> np.ndarray:
    """Roots of monic rows (G, deg+1), coefficients low -> high: (G, deg)."""
    if deg == 1:
        return -monic[:, [0]]
    if deg == 2:
        return _quadratic_roots(monic)
    G = len(monic)
    M = np.zeros((G, deg, deg), dtype=np.complex128)
    M[:, np.arange(1, deg), np.arange(deg - 1)] = 1.0
    M[:, :, -1] = -monic[:, :deg]
    U = np.linalg.eigvals(M)
    # batched Newton polish against the exact polynomial
    dcoef = monic[:, 1:] * np.arange(1, deg + 1)
    for _ in range(3):
        p = np.full(U.shape, monic[:, deg][:, None], dtype=np.complex128)
        dp = np.full(U.shape, dcoef[:, deg - 1][:, None], dtype=np.complex128)
        for j in range(deg - 1, -1, -1):
            p = p * U + monic[:, j][:, None]
            if j > 0:
                dp = dp * U + dcoef[:, j - 1][:, None]
        ok = np.abs(dp) > 1e-250
        step = np.where(ok, p / np.where(ok, dp, 1.0), 0.0)
        step = np.where(np.abs(step) < 0.5 * (1 + np.abs(U)), step, 0.0)
        U = U - step
    return U


def _fiber_points_k1(f: HomEndo, targets: np.ndarray):
    """All preimage points for each row of targets: returns (B, d, 2) unit reps.

    Root slots repeat according to multiplicity, so a uniform draw over slots
    is a draw by multiplicity.  Degree drops of the target pencil become
    points at infinity [0:1].
    """
    a = unit_rep(targets)
    D = _dense_binary(f)
    P = a[:, 1][:, None] * D[0][None, :] - a[:, 0][:, None] * D[1][None, :]
    scale = np.max(np.abs(P), axis=1)
    if np.any(scale == 0):
        raise RuntimeError("target pencil vanished identically")
    mask = np.abs(P) > 1e-13 * scale[:, None]
    degs = f.d - np.argmax(mask[:, ::-1], axis=1)
    B = a.shape[0]
    pts = np.empty((B, f.d, 2), dtype=np.complex128)
    pts[:, :, 0] = 0.0
    pts[:, :, 1] = 1.0  # default: point at infinity
    for deg in np.unique(degs):
        idx = np.nonzero(degs == deg)[0]
        if deg == 0:
            continue
        monic = P[idx, :deg + 1] / P[idx, deg][:, None]
        U = _group_roots(monic, int(deg))
        pts[idx[:, None], np.arange(deg)[None, :], 0] = 1.0
        pts[idx[:, None], np.arange(deg)[None, :], 1] = U
    return unit_rep(pts)


# -- k >= 2: multistart Newton -------------------------------------------------


def _newton_batch(f: HomEndo, a: np.ndarray, W: np.ndarray, chart: int,
                  iters: int = 60) -> np.ndarray:
    """Damped Newton on the pencil system from seeds W (B, k) in one chart.

    Returns final affine solutions (B, k); non-converged rows simply end with
    a large residual and are filtered by the caller.
    """
    l = int(best_chart(a))
    rows = [i for i in range(f.k + 1) if i != l]
    cols = [j for j in range(f.k + 1) if j != chart]
    W = W.copy()

    def G_of(Wc):
        Z = chart_unmap_arrays(Wc, chart)
        F = f.eval_lift(Z)
        return F[:, rows] * a[l] - F[:, [l]] * a[rows], Z

    G, Z = G_of(W)
    gn = np.linalg.norm(G, axis=1)
    for _ in range(iters):
        DF = f.jacobian_lift(Z)
        J = DF[:, rows][:, :, cols] * a[l] - DF[:, [l]][:, :, cols] * a[rows][None, :, None]
        det = np.linalg.det(J)
        ok = np.abs(det) > 1e-280
        step = np.zeros_like(W)
        if np.any(ok):
            try:
                step[ok] = np.linalg.solve(J[ok], G[ok][..., None])[..., 0]
            except np.linalg.LinAlgError:
                for r in np.nonzero(ok)[0]:
                    try:
                        step[r] = np.linalg.solve(J[r], G[r])
                    except np.linalg.LinAlgError:
                        pass
        alpha = np.ones(len(W))
        improved = np.zeros(len(W), dtype=bool)
        Wbest = W.copy()
        gbest = gn.copy()
        for _ in range(6):
            Wtry = W - alpha[:, None] * step
            Gtry, _ = G_of(Wtry)
            gtry = np.linalg.norm(Gtry, axis=1)
            better = gtry < gbest
            Wbest[better] = Wtry[better]
            gbest[better] = gtry[better]
            improved |= better
            alpha = np.where(better, alpha, alpha / 2)
        W = Wbest
        G, Z = G_of(W)
        gn = np.linalg.norm(G, axis=1)
        if not np.any(improved):
            break
    return W


def _collect_k2(f: HomEndo, a: np.ndarray, rng: np.random.Generator,
                oversample: int) -> np.ndarray:
    """Converged, deduplicated fiber points from chart-wise multistart."""
    need = f.d ** f.k
    cands = []
    for chart in range(f.k + 1):
        nseeds = oversample * need
        W0 = rng.standard_normal((nseeds, f.k)) + 1j * rng.standard_normal((nseeds, f.k))
        W0 *= rng.uniform(0.3, 1.6, (nseeds, 1))
        W = _newton_batch(f, a, W0, chart)
        Z = canonical_rep(chart_unmap_arrays(W, chart))
        res = fs_distance_arrays(unit_rep(f.eval_lift(Z)), a[None, :])
        cands.append(Z[res < _RESIDUAL_TOL])
    if not sum(len(c) for c in cands):
        return np.zeros((0, f.k + 1), dtype=np.complex128)
    reps, _ = _dedup(np.concatenate([c for c in cands if len(c)], axis=0))
    return reps


def _dedup(points: np.ndarray, radius: float = _DEDUP_RADIUS):
    """Greedy cluster reps and sizes for canonical reps (m, k+1)."""
    if len(points) == 0:
        return points
    order = np.lexsort(tuple(points[:, j].imag for j in range(points.shape[1] - 1, -1, -1))
                       + tuple(points[:, j].real for j in range(points.shape[1] - 1, -1, -1)))
    pts = points[order]
    reps: list[np.ndarray] = []
    counts: list[int] = []
    for p in pts:
        if reps:
            dist = fs_distance_arrays(np.array(reps), p[None, :])
            j = int(np.argmin(dist))
            if dist[j] < radius:
                counts[j] += 1
                continue
        reps.append(p)
        counts.append(1)
    return np.array(reps), np.array(counts, dtype=np.int64)


def fiber(f: HomEndo, target: np.ndarray, seed: int = 0) -> Fiber:
    """Complete fiber with multiplicities summing exactly to d^k.

    Raises IncompleteFiber when three rounds of multistart plus the
    perturbed-target multiplicity probe cannot reconcile the Bezout count.
    """
    a = canonical_rep(np.asarray(target, dtype=np.complex128).reshape(-1))
    need = f.d ** f.k
    if f.k == 1:
        pts = _fiber_points_k1(f, a[None, :])[0]
        reps, counts = _dedup(canonical_rep(pts))
        res = fs_distance_arrays(unit_rep(f.eval_lift(reps)), a[None, :])
        return Fiber(target=a, points=reps, multiplicities=counts, residuals=res,
                     from_cluster=bool((counts > 1).any()))
    key = tuple(float(x) for x in np.round(np.ascontiguousarray(a).view(np.float64), 9))
    rng = child_rng(seed, "fiber", f.content_hash()[:16], key)
    found = np.zeros((0, f.k + 1), dtype=np.complex128)
    for round_ in range(3):
        got = _collect_k2(f, a, rng, oversample=8 * (round_ + 1))
        if len(got):
            merged = np.concatenate([found, got], axis=0) if len(found) else got
            found, _ = _dedup(merged)
        if len(found) == need:
            counts = np.ones(len(found), dtype=np.int64)
            res = fs_distance_arrays(unit_rep(f.eval_lift(found)), a[None, :])
            return Fiber(a, found, counts, res, from_cluster=False)
        if len(found):
            counts = _probe_multiplicities(f, a, found, rng)
            if counts is not None and counts.sum() == need:
                res = fs_distance_arrays(unit_rep(f.eval_lift(found)), a[None, :])
                return Fiber(a, found, counts, res, from_cluster=True)
    raise IncompleteFiber(len(found), need)


def _probe_multiplicities(f: HomEndo, a: np.ndarray, found: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray | None:
    """Local degrees via a perturbed target: each multiple point splits into
    simple ones that stay nearby."""
    delta = 1e-5
    g = rng.standard_normal(f.k + 1) + 1j * rng.standard_normal(f.k + 1)
    ap = unit_rep(a + delta * g)
    cands = []
    for p in found:
        chart = int(best_chart(p))
        w0 = np.delete(p / p[chart], chart)
        kicks = 1e-3 * (rng.standard_normal((12, f.k)) + 1j * rng.standard_normal((12, f.k)))
        W0 = np.concatenate([w0[None, :], w0[None, :] + kicks], axis=0)
        W = _newton_batch(f, ap, W0, chart)
        Z = canonical_rep(chart_unmap_arrays(W, chart))
        res = fs_distance_arrays(unit_rep(f.eval_lift(Z)), ap[None, :])
        cands.append(Z[res < _RESIDUAL_TOL])
    sols = np.concatenate([c for c in cands if len(c)], axis=0) if cands else None
    if sols is None or not len(sols):
        return None
    sols, _ = _dedup(sols)
    dist = pairwise_fs(sols, found)
    nearest = np.argmin(dist, axis=1)
    near_ok = dist[np.arange(len(sols)), nearest] < 5e-2
    counts = np.zeros(len(found), dtype=np.int64)
    for s in np.nonzero(near_ok)[0]:
        counts[nearest[s]] += 1
    if (counts == 0).any():
        return None
    return counts


# -- random preimages ----------------------------------------------------------


def random_preimage(f: HomEndo, target: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One preimage drawn with probability multiplicity / d^k."""
    a = canonical_rep(np.asarray(target, dtype=np.complex128).reshape(-1))
    if f.k == 1:
        pts = _fiber_points_k1(f, a[None, :])[0]
        return canonical_rep(pts[rng.integers(f.d)])
    if f.family == "power":
        return canonical_rep(_power_preimage(f, a[None, :], rng)[0])
    fib = fiber(f, a, seed=int(rng.integers(2**31)))
    probs = fib.multiplicities / fib.total_multiplicity
    return fib.points[rng.choice(len(fib.points), p=probs)]


def _power_preimage(f: HomEndo, A: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Closed-form preimages of the power map: coordinate-wise d-th roots."""
    d = f.d
    B, kp1 = A.shape
    j = rng.integers(0, d, size=(B, kp1))
    j[:, 0] = 0
    root = np.abs(A) ** (1.0 / d) * np.exp(1j * (np.angle(A) + 2 * np.pi * j) / d)
    return unit_rep(root)


def random_preimage_batch(f: HomEndo, targets: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    """Vectorized random preimages, one per row of targets."""
    A = unit_rep(np.asarray(targets, dtype=np.complex128))
    if f.k == 1:
        pts = _fiber_points_k1(f, A)
        pick = rng.integers(0, f.d, size=len(A))
        return unit_rep(pts[np.arange(len(A)), pick])
    if f.family == "power":
        return _power_preimage(f, A, rng)
    out = np.empty_like(A)
    for r in range(len(A)):
        out[r] = random_preimage(f, A[r], rng)
    return out


# -- inverse branches ----------------------------------------------------------


@dataclass
class InverseBranch:
    """A local inverse g of f with g(center) = preimage, defined on the
    Fubini-Study ball around center.  Evaluation continues the preimage
    along the radial path from center to the query point."""

    f: HomEndo
    center: np.ndarray
    preimage: np.ndarray
    radius: float
    _jac_floor: float = 1e-8

    def __call__(self, x: np.ndarray) -> np.ndarray:
        a = canonical_rep(np.asarray(x, dtype=np.complex128).reshape(-1))
        d0 = float(fs_distance_arrays(self.center, a))
        if d0 > self.radius + 1e-12:
            raise ValueError("query point outside the branch ball")
        inner = np.sum(a * np.conj(self.center))
        if abs(inner) > 1e-12:
            a = a * (np.conj(inner) / abs(inner))
        nsteps = max(2, int(np.ceil(d0 / 0.05)) + 1)
        sol = self.preimage
        for t in np.linspace(0.0, 1.0, nsteps + 1)[1:]:
            target = unit_rep((1 - t) * self.center + t * a)
            sol = self._newton_step(target, sol)
        img = unit_rep(self.f.eval_lift(sol))
        if float(fs_distance_arrays(img, unit_rep(a))) > _RESIDUAL_TOL:
            raise BranchCollision("continuation lost the branch (residual too large)")
        return sol

    def _newton_step(self, target: np.ndarray, guess: np.ndarray) -> np.ndarray:
        chart = int(best_chart(guess))
        W = np.delete(guess / guess[chart], chart)[None, :]
        W = _newton_batch(self.f, canonical_rep(target), W, chart, iters=40)
        sol = canonical_rep(chart_unmap_arrays(W[0], chart))
        res = float(fs_distance_arrays(unit_rep(self.f.eval_lift(sol)), unit_rep(target)))
        if res > _RESIDUAL_TOL:
            raise BranchCollision("Newton continuation failed to converge")
        cd = differential_chart(self.f, sol)
        det = abs(np.linalg.det(cd.matrix))
        if det < self._jac_floor:
            raise BranchCollision(f"chart Jacobian modulus {det:.2e} below 1e-8")
        return sol


def inverse_branch(f: HomEndo, center: np.ndarray, preimage: np.ndarray,
                   radius: float) -> InverseBranch:
    """Branch of f^{-1} on the ball B_fs(center, radius) through preimage.

    The preimage must actually map to center; the branch is validated lazily
    (each evaluation checks Jacobian modulus and residual, raising
    BranchCollision on critical-set crossings).
    """
    c = canonical_rep(np.asarray(center, dtype=np.complex128).reshape(-1))
    p = canonical_rep(np.asarray(preimage, dtype=np.complex128).reshape(-1))
    res = float(fs_distance_arrays(unit_rep(f.eval_lift(p)), c))
    if res > _RESIDUAL_TOL:
        raise ValueError(f"preimage does not map to center (fs residual {res:.2e})")
    cd = differential_chart(f, p)
    if abs(np.linalg.det(cd.matrix)) < 1e-8:
        raise BranchCollision("preimage lies on the critical set")
    return InverseBranch(f=f, center=c, preimage=p, radius=float(radius))


# -- backward trees ------------------------------------------------------------


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _path_uniform(path_hash: np.ndarray, level: int, seed: int) -> np.ndarray:
    """Deterministic uniforms in [0,1) keyed by (seed, node path, level)."""
    with np.errstate(over="ignore"):
        h = _splitmix64(path_hash ^ np.uint64((seed * 0x9E37 + level) & 0xFFFFFFFFFFFF))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


@dataclass(frozen=True)
class BackwardTree:
    """Leaves of n levels of preimages of root, with normalized weights.

    exact=True means every preimage branch is present (d^{kn} leaves,
    multiplicity folded into repeated slots); otherwise levels beyond the
    exact prefix are stratified single-child walks, unbiased for pairings
    <tree, phi> = Lambda^n(phi)(root).
    """

    root: np.ndarray
    depth: int
    exact: bool
    leaves: np.ndarray
    weights: np.ndarray
    levels: tuple[np.ndarray, ...]


def backward_tree(f: HomEndo, root: np.ndarray, depth: int, cap: int = 4096,
                  seed: int = 0) -> BackwardTree:
    a = canonical_rep(np.asarray(root, dtype=np.complex128).reshape(-1))
    dk = f.d ** f.k
    frontier = a[None, :]
    weights = np.ones(1)
    paths = np.zeros(1, dtype=np.uint64)
    levels = [frontier]
    exact = True
    rng = child_rng(seed, "tree", depth)
    for level in range(depth):
        if exact and len(frontier) * dk <= cap:
            if f.k == 1:
                pts = _fiber_points_k1(f, frontier)  # (B, d, 2)
                frontier = unit_rep(pts.reshape(-1, 2))
                weights = np.repeat(weights / dk, dk)
                paths = (np.repeat(paths, dk) * np.uint64(131)
                         + np.tile(np.arange(dk, dtype=np.uint64), len(pts)))
            else:
                new_pts, new_w, new_paths = [], [], []
                for r in range(len(frontier)):
                    fib = fiber(f, frontier[r], seed=seed)
                    for slot, (pt, m) in enumerate(zip(fib.points, fib.multiplicities)):
                        new_pts.append(pt)
                        new_w.append(weights[r] * m / dk)
                        new_paths.append(paths[r] * np.uint64(131) + np.uint64(slot))
                frontier = np.array(new_pts)
                weights = np.array(new_w)
                paths = np.array(new_paths, dtype=np.uint64)
        else:
            exact = False
            u = _path_uniform(paths, level, seed)
            if f.k == 1:
                pts = _fiber_points_k1(f, frontier)
                pick = np.minimum((u * f.d).astype(int), f.d - 1)
                frontier = unit_rep(pts[np.arange(len(pts)), pick])
                paths = paths * np.uint64(131) + pick.astype(np.uint64)
            elif f.family == "power":
                shaped = child_rng(seed, "treewalk", level)
                frontier = _power_preimage(f, frontier, shaped)
                paths = paths * np.uint64(131) + np.uint64(1)
            else:
                new_pts = np.empty_like(frontier)
                for r in range(len(frontier)):
                    fib = fiber(f, frontier[r], seed=seed)
                    cum = np.cumsum(fib.multiplicities) / dk
                    slot = int(np.searchsorted(cum, u[r], side="right"))
                    slot = min(slot, len(fib.points) - 1)
                    new_pts[r] = fib.points[slot]
                    paths[r] = paths[r] * np.uint64(131) + np.uint64(slot)
                frontier = new_pts
        levels.append(frontier)
    total = weights.sum()
    if abs(total - 1.0) > 1e-9:
        raise RuntimeError(f"leaf weights sum to {total}, not 1")
    return BackwardTree(root=a, depth=depth, exact=exact,
                        leaves=canonical_rep(frontier), weights=weights / total,
                        levels=tuple(levels))
