"""Holomorphic endomorphisms of P^k given by homogeneous coefficient tensors.

A map is k+1 sparse homogeneous polynomials of a common degree d >= 2 in the
k+1 homogeneous coordinates.  Construction certifies nondegeneracy (the lift
has no zero besides the origin) by sphere sampling plus local refinement;
maps that fail are rejected with Degenerate, since they are at best
meromorphic and none of the toolkit's guarantees apply.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .projective import best_chart, canonical_rep, unit_rep
from .util import child_rng

__all__ = [
    "Degenerate",
    "HomEndo",
    "ChartDifferential",
    "make_family",
    "compose",
    "differential_chart",
    "iterate_orbit",
    "iterate_orbit_batch",
    "critical_degree",
    "jac_lift_log",
    "fs_metric_sqrt",
    "map_to_text",
    "map_from_text",
]

_MARGIN_FLOOR = 1e-8
_NONDEG_SAMPLES = 10_000
_NONDEG_REFINE = 20


class Degenerate(ValueError):
    """Lift of the map vanishes somewhere on the sphere: not an endomorphism."""


Coeffs = dict[tuple[int, ...], complex]


def _monomials(k: int, d: int) -> list[tuple[int, ...]]:
    """All exponent multi-indices of total degree d in k+1 variables."""
    out = []
    for bars in itertools.combinations_with_replacement(range(k + 1), d):
        e = [0] * (k + 1)
        for b in bars:
            e[b] += 1
        out.append(tuple(e))
    out.sort()
    return out


def _eval_terms(E: np.ndarray, C: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Evaluate sum_t C_t * prod_j z_j^{E_tj} on rows of z (..., k+1)."""
    # (..., 1, k+1) ** (t, k+1) -> (..., t)
    powers = z[..., None, :] ** E
    return powers.prod(axis=-1) @ C


@dataclass(frozen=True)
class HomEndo:
    """Endomorphism of P^k of algebraic degree d."""

    k: int
    d: int
    coeffs: tuple[Coeffs, ...]
    family: str | None = None
    params: tuple = ()
    nondeg_margin: float = field(init=False, default=0.0)
    _E: tuple[np.ndarray, ...] = field(init=False, repr=False, default=())
    _C: tuple[np.ndarray, ...] = field(init=False, repr=False, default=())
    _JE: tuple = field(init=False, repr=False, default=())

    def __post_init__(self):
        if self.k < 1 or self.d < 2:
            raise ValueError("need k >= 1 and degree d >= 2")
        if len(self.coeffs) != self.k + 1:
            raise ValueError("need k+1 components")
        Es, Cs = [], []
        for i, comp in enumerate(self.coeffs):
            clean = {tuple(int(x) for x in e): complex(c) for e, c in comp.items() if c != 0}
            for e in clean:
                if len(e) != self.k + 1 or any(x < 0 for x in e) or sum(e) != self.d:
                    raise ValueError(f"component {i}: exponent {e} is not degree {self.d}")
            if not clean:
                raise Degenerate(f"component {i} is identically zero")
            keys = sorted(clean)
            Es.append(np.array(keys, dtype=np.int64))
            Cs.append(np.array([clean[e] for e in keys], dtype=np.complex128))
        object.__setattr__(self, "coeffs", tuple(
            {tuple(int(x) for x in e): complex(c) for e, c in zip(E, C)}
            for E, C in zip(Es, Cs)))
        object.__setattr__(self, "_E", tuple(Es))
        object.__setattr__(self, "_C", tuple(Cs))
        # derivative term tables: (i, j) -> (E', C') for dF_i/dz_j
        jtab = []
        for i in range(self.k + 1):
            row = []
            for j in range(self.k + 1):
                mask = Es[i][:, j] > 0
                Ed = Es[i][mask].copy()
                Cd = Cs[i][mask] * Ed[:, j]
                Ed[:, j] -= 1
                row.append((Ed, Cd))
            jtab.append(tuple(row))
        object.__setattr__(self, "_JE", tuple(jtab))
        object.__setattr__(self, "nondeg_margin", self._compute_margin())
        if self.nondeg_margin < _MARGIN_FLOOR:
            raise Degenerate(
                f"sphere min of ||F|| is {self.nondeg_margin:.3e} < {_MARGIN_FLOOR:.0e}; "
                "the map has (numerical) indeterminacy points")

    # -- evaluation ---------------------------------------------------------

    def eval_lift(self, z: np.ndarray) -> np.ndarray:
        """F(z) on rows of shape (..., k+1); homogeneous of degree d."""
        z = np.asarray(z, dtype=np.complex128)
        out = np.empty(z.shape, dtype=np.complex128)
        for i in range(self.k + 1):
            out[..., i] = _eval_terms(self._E[i], self._C[i], z)
        return out

    def eval(self, coords: np.ndarray) -> np.ndarray:
        """Image point(s) as unit representatives."""
        return unit_rep(self.eval_lift(unit_rep(coords)))

    def jacobian_lift(self, z: np.ndarray) -> np.ndarray:
        """DF(z): (..., k+1, k+1) with entry [i, j] = dF_i/dz_j."""
        z = np.asarray(z, dtype=np.complex128)
        out = np.zeros(z.shape[:-1] + (self.k + 1, self.k + 1), dtype=np.complex128)
        for i in range(self.k + 1):
            for j in range(self.k + 1):
                Ed, Cd = self._JE[i][j]
                if len(Cd):
                    out[..., i, j] = _eval_terms(Ed, Cd, z)
        return out

    # -- metadata -----------------------------------------------------------

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"k={self.k} d={self.d}".encode())
        for i, comp in enumerate(self.coeffs):
            for e in sorted(comp):
                c = comp[e]
                h.update(f"{i}:{e}:{c.real!r},{c.imag!r}".encode())
        return h.hexdigest()

    def _compute_margin(self) -> float:
        rng = child_rng(0xD15C0, "nondeg", self.k, self.d,
                        int(self._quick_hash() & 0x7FFFFFFF))
        g = rng.standard_normal((_NONDEG_SAMPLES, self.k + 1))
        g = g + 1j * rng.standard_normal((_NONDEG_SAMPLES, self.k + 1))
        z = g / np.linalg.norm(g, axis=1, keepdims=True)
        vals = np.linalg.norm(self.eval_lift(z), axis=1)
        order = np.argsort(vals)
        margin = float(vals[order[0]])
        for idx in order[:_NONDEG_REFINE]:
            margin = min(margin, self._refine_min(z[idx]))
            if margin < _MARGIN_FLOOR / 10:
                break
        return margin

    def _quick_hash(self) -> int:
        acc = 0
        for comp in self.coeffs:
            for e, c in sorted(comp.items()):
                acc = (acc * 1000003 + hash((e, round(c.real, 12), round(c.imag, 12)))) & (2**63 - 1)
        return acc

    def _refine_min(self, z0: np.ndarray) -> float:
        n = self.k + 1

        def resid(x):
            z = x[:n] + 1j * x[n:]
            F = self.eval_lift(z)
            return np.concatenate([F.real, F.imag, [z.real @ z.real + z.imag @ z.imag - 1.0]])

        x0 = np.concatenate([z0.real, z0.imag])
        try:
            sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=300)
        except Exception:
            return float("inf")
        z = sol.x[:n] + 1j * sol.x[n:]
        nz = np.linalg.norm(z)
        if nz < 0.5:  # collapsed toward the origin: not a sphere point
            return float("inf")
        return float(np.linalg.norm(self.eval_lift(z / nz)))


@dataclass(frozen=True)
class ChartDifferential:
    """Differential of the chart expression of f at a point.

    matrix[m, j] = d (chart_out coords of f) / d (chart_in coords), evaluated
    at base; base/image are canonical representatives not at infinity of
    their charts.
    """

    matrix: np.ndarray
    base: np.ndarray
    image: np.ndarray
    chart_in: int
    chart_out: int


def differential_chart(f: HomEndo, coords: np.ndarray,
                       chart_in: int | None = None,
                       chart_out: int | None = None) -> ChartDifferential:
    """Chart Jacobian of f at a point (k x k complex matrix).

    Charts default to the largest-modulus coordinate at base and image,
    which keeps the affine coordinates in the unit polydisk.
    """
    z = canonical_rep(np.asarray(coords, dtype=np.complex128).reshape(-1))
    a = int(best_chart(z)) if chart_in is None else int(chart_in)
    if abs(z[a]) <= 1e-12:
        raise ValueError(f"base point at infinity of chart {a}")
    zeta = z / z[a]
    F = f.eval_lift(zeta)
    b = int(best_chart(F)) if chart_out is None else int(chart_out)
    if abs(F[b]) <= 1e-12 * np.max(np.abs(F)):
        raise ValueError(f"image point at infinity of chart {b}")
    DF = f.jacobian_lift(zeta)
    rows = [m for m in range(f.k + 1) if m != b]
    cols = [j for j in range(f.k + 1) if j != a]
    M = (DF[np.ix_(rows, cols)] * F[b] - np.outer(F[rows], DF[b, cols])) / (F[b] ** 2)
    return ChartDifferential(matrix=M, base=z, image=canonical_rep(F),
                             chart_in=a, chart_out=b)


def iterate_orbit(f: HomEndo, coords: np.ndarray, n: int,
                  with_tape: bool = False):
    """Forward orbit p, f(p), ..., f^n(p) as canonical reps (n+1, k+1).

    With with_tape=True also returns the list of n ChartDifferentials, chained
    so each step's chart_out equals the next step's chart_in (charts are fixed
    per orbit point), ready for cocycle products.
    """
    z = canonical_rep(np.asarray(coords, dtype=np.complex128).reshape(-1))
    pts = [z]
    for _ in range(n):
        pts.append(canonical_rep(f.eval_lift(pts[-1])))
    pts = np.array(pts)
    if not with_tape:
        return pts
    charts = [int(best_chart(p)) for p in pts]
    tape = [differential_chart(f, pts[t], chart_in=charts[t], chart_out=charts[t + 1])
            for t in range(n)]
    return pts, tape


def iterate_orbit_batch(f: HomEndo, Z: np.ndarray, n: int) -> np.ndarray:
    """Unit-rep orbits for a batch: returns (n+1, B, k+1)."""
    z = unit_rep(np.asarray(Z, dtype=np.complex128))
    out = np.empty((n + 1,) + z.shape, dtype=np.complex128)
    out[0] = z
    for t in range(n):
        out[t + 1] = unit_rep(f.eval_lift(out[t]))
    return out


def critical_degree(f: HomEndo) -> int:
    """Degree of the critical hypersurface: (k+1)(d-1)."""
    return (f.k + 1) * (f.d - 1)


def jac_lift_log(f: HomEndo, coords: np.ndarray) -> float:
    """log |det DF| at the unit representative; -inf at critical points."""
    z = unit_rep(np.asarray(coords, dtype=np.complex128).reshape(-1))
    det = np.linalg.det(f.jacobian_lift(z))
    mod = abs(det)
    return float("-inf") if mod == 0.0 else float(np.log(mod))


def fs_metric_sqrt(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Square root S of the Fubini-Study metric in an affine chart, and S^-1.

    FS length of a tangent vector xi at w is |S xi|.  Conjugating chart
    Jacobians by these frames makes singular values metric-true; the
    conjugation telescopes along orbits.
    """
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    kk = w.shape[0]
    s = float(w.real @ w.real + w.imag @ w.imag)
    a = (1.0 + s) ** -0.5
    ap = (1.0 + s) ** 0.5
    if s < 1e-12:
        b = -0.5 * (1.0 - 0.75 * s)
        bp = 0.5 * (1.0 - 0.25 * s)
    else:
        b = ((1.0 + s) ** -1.0 - a) / s
        bp = (ap * ap - ap) / s
    W = np.outer(w, np.conj(w))
    S = a * np.eye(kk) + b * W
    Sinv = ap * np.eye(kk) + bp * W
    return S, Sinv


# -- families ----------------------------------------------------------------


def _power_coeffs(k: int, d: int) -> tuple[Coeffs, ...]:
    comps = []
    for i in range(k + 1):
        e = [0] * (k + 1)
        e[i] = d
        comps.append({tuple(e): 1.0 + 0.0j})
    return tuple(comps)


def make_family(name: str, params=()) -> HomEndo:
    """Built-in families.

    power(k, d): [z_0^d : ... : z_k^d].
    perturbed_power(k, d, eps): z_i^d + eps * z_{i+1 mod k+1}^d.
    quadratic_plus_c(re [, im]): homogenized z -> z^2 + c on P^1.
    ueda_product(k, inner...): symmetric product of a P^1 map on P^k.
    desboves: a classical degree-4 map on P^2 with indeterminacy points
      (construction raises Degenerate; used as a negative control).
    custom: pass coefficient dicts directly to HomEndo instead.
    """
    params = tuple(params)
    if name == "power":
        k, d = int(params[0]), int(params[1])
        return HomEndo(k=k, d=d, coeffs=_power_coeffs(k, d), family="power", params=(k, d))
    if name == "perturbed_power":
        k, d, eps = int(params[0]), int(params[1]), complex(params[2])
        comps = []
        for i in range(k + 1):
            e = [0] * (k + 1)
            e[i] = d
            e2 = [0] * (k + 1)
            e2[(i + 1) % (k + 1)] = d
            comps.append({tuple(e): 1.0 + 0.0j, tuple(e2): eps})
        return HomEndo(k=k, d=d, coeffs=tuple(comps), family="perturbed_power",
                       params=(k, d, eps))
    if name == "quadratic_plus_c":
        c = complex(params[0]) if len(params) == 1 else complex(float(params[0]), float(params[1]))
        comps = ({(2, 0): 1.0 + 0.0j},
                 {(0, 2): 1.0 + 0.0j, (2, 0): c} if c != 0 else {(0, 2): 1.0 + 0.0j})
        return HomEndo(k=1, d=2, coeffs=comps, family="quadratic_plus_c", params=(c,))
    if name == "ueda_product":
        k = int(params[0])
        inner = params[1]
        if not isinstance(inner, HomEndo):
            raise ValueError("ueda_product params: (k, inner HomEndo on P^1)")
        return ueda_product(inner, k)
    if name == "desboves":
        comps = (
            {(1, 3, 0): 1.0 + 0j, (1, 0, 3): -1.0 + 0j},
            {(0, 1, 3): 1.0 + 0j, (3, 1, 0): -1.0 + 0j},
            {(3, 0, 1): 1.0 + 0j, (0, 3, 1): -1.0 + 0j},
        )
        return HomEndo(k=2, d=4, coeffs=comps, family="desboves", params=())
    raise ValueError(f"unknown family {name!r}")


def _binary_form_from_roots(pairs) -> np.ndarray:
    """Coefficients c of prod_i (alpha_i z_1 - beta_i z_0) in the basis
    z_0^j z_1^{deg-j}, for projective roots [alpha_i : beta_i]."""
    c = np.array([1.0 + 0j])
    for al, be in pairs:
        cn = np.zeros(len(c) + 1, dtype=np.complex128)
        cn[:-1] += al * c
        cn[1:] += -be * c
        c = cn
    return c


def ueda_product(h: HomEndo, k: int) -> HomEndo:
    """Symmetric product of a degree-d map of P^1 acting on P^k.

    P^k is the quotient of (P^1)^k by coordinate permutations; a point is the
    coefficient vector [a_0 : ... : a_k] of a binary k-form with the orbit as
    root set.  The induced map has algebraic degree d and is semi-conjugate to
    h applied factor-wise.  Its coefficient tensor is recovered by nullspace
    interpolation from sampled root sets.
    """
    if h.k != 1:
        raise ValueError("inner map must act on P^1")
    d = h.d
    monos = _monomials(k, d)
    nmono = len(monos)
    ncomp = k + 1
    rng = child_rng(0x0EDA, "ueda", k, d, int(h._quick_hash() & 0x7FFFFFFF))
    nsamples = 4 * nmono + 8
    rows = []
    for _ in range(nsamples):
        u = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        # source form: roots [1 : u_i]; image form: roots h([1 : u_i])
        a = _binary_form_from_roots([(1.0 + 0j, ui) for ui in u])
        hu = h.eval_lift(np.stack([np.ones_like(u), u], axis=-1))
        b = _binary_form_from_roots([(p[0], p[1]) for p in hu])
        a = a / np.linalg.norm(a)
        b = b / np.linalg.norm(b)
        mono_vals = np.array([np.prod(a ** np.array(e)) for e in monos])
        for m in range(ncomp):
            for l in range(m + 1, ncomp):
                row = np.zeros(ncomp * nmono, dtype=np.complex128)
                row[m * nmono:(m + 1) * nmono] = mono_vals * b[l]
                row[l * nmono:(l + 1) * nmono] = -mono_vals * b[m]
                rows.append(row)
    A = np.array(rows)
    _, sv, Vh = np.linalg.svd(A)
    if sv[-1] > 1e-8 * sv[0] or sv[-2] < 1e-6 * sv[0]:
        raise RuntimeError("ueda interpolation did not isolate a 1-dim nullspace")
    vec = Vh[-1]
    pivot = np.argmax(np.abs(vec))
    vec = vec / vec[pivot]
    re = np.where(np.abs(vec.real - np.round(vec.real)) < 1e-8, np.round(vec.real), vec.real)
    im = np.where(np.abs(vec.imag - np.round(vec.imag)) < 1e-8, np.round(vec.imag), vec.imag)
    vec = re + 1j * im
    comps = []
    for m in range(ncomp):
        comp = {}
        for e, c in zip(monos, vec[m * nmono:(m + 1) * nmono]):
            if abs(c) > 1e-9:
                comp[e] = complex(c)
        comps.append(comp)
    return HomEndo(k=k, d=d, coeffs=tuple(comps), family="ueda_product",
                   params=(k, d))


def compose(f: HomEndo, g: HomEndo) -> HomEndo:
    """Coefficient tensor of f o g (degree d_f * d_g)."""
    if f.k != g.k:
        raise ValueError("dimension mismatch")

    def poly_mul(p: Coeffs, q: Coeffs) -> Coeffs:
        out: Coeffs = {}
        for e1, c1 in p.items():
            for e2, c2 in q.items():
                e = tuple(x + y for x, y in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return out

    one: Coeffs = {tuple([0] * (f.k + 1)): 1.0 + 0j}
    pow_cache: dict[tuple[int, int], Coeffs] = {}

    def g_power(j: int, e: int) -> Coeffs:
        if e == 0:
            return one
        key = (j, e)
        if key not in pow_cache:
            pow_cache[key] = poly_mul(g_power(j, e - 1), g.coeffs[j])
        return pow_cache[key]

    comps = []
    for i in range(f.k + 1):
        acc: Coeffs = {}
        for e, c in f.coeffs[i].items():
            term = one
            for j, ej in enumerate(e):
                if ej:
                    term = poly_mul(term, g_power(j, ej))
            for ee, cc in term.items():
                acc[ee] = acc.get(ee, 0.0) + c * cc
        comps.append({e: c for e, c in acc.items() if abs(c) > 0.0})
    return HomEndo(k=f.k, d=f.d * g.d, coeffs=tuple(comps), family=None,
                   params=())


# -- structured-text map descriptions -----------------------------------------


def map_to_text(f: HomEndo) -> str:
    """Serialize as key = value sections (family shorthand when available)."""
    cp = configparser.ConfigParser()
    cp["map"] = {}
    if f.family and f.family != "ueda_product":
        cp["map"]["kind"] = "family"
        cp["map"]["family"] = f.family
        parts = []
        for p in f.params:
            c = complex(p)
            parts.append(repr(c.real))
            parts.append(repr(c.imag))
        cp["map"]["params"] = " ".join(parts)
    else:
        cp["map"]["kind"] = "custom"
        cp["map"]["k"] = str(f.k)
        cp["map"]["d"] = str(f.d)
        cp["coefficients"] = {}
        for i, comp in enumerate(f.coeffs):
            for e in sorted(comp):
                key = f"{i}_" + ",".join(str(x) for x in e)
                c = comp[e]
                cp["coefficients"][key] = f"{c.real!r} {c.imag!r}"
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def map_from_text(text: str) -> HomEndo:
    """Parse a map description written by map_to_text (or by hand)."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "map" not in cp:
        raise ValueError("missing [map] section")
    kind = cp["map"].get("kind", "family").strip()
    if kind == "family":
        fam = cp["map"]["family"].strip()
        raw = cp["map"].get("params", "").split()
        vals = [float(x) for x in raw]
        pairs = [complex(vals[i], vals[i + 1]) for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2 == 1:
            pairs.append(complex(vals[-1], 0.0))
        if fam == "power" or fam == "perturbed_power":
            params = [int(p.real) for p in pairs[:2]] + [p for p in pairs[2:]]
        elif fam == "quadratic_plus_c":
            params = [pairs[0]] if pairs else [0.0 + 0j]
        elif fam == "desboves":
            params = []
        else:
            raise ValueError(f"family {fam!r} not expressible in text form")
        return make_family(fam, params)
    if kind == "custom":
        k = int(cp["map"]["k"])
        d = int(cp["map"]["d"])
        comps: list[Coeffs] = [dict() for _ in range(k + 1)]
        if "coefficients" not in cp:
            raise ValueError("custom map needs a [coefficients] section")
        for key, val in cp["coefficients"].items():
            comp_s, _, exp_s = key.partition("_")
            i = int(comp_s)
            e = tuple(int(x) for x in exp_s.split(","))
            re_s, im_s = val.split()
            if not (0 <= i <= k):
                raise ValueError(f"component index {i} out of range")
            comps[i][e] = complex(float(re_s), float(im_s))
        return HomEndo(k=k, d=d, coeffs=tuple(comps), family="custom", params=())
    raise ValueError(f"unknown map kind {kind!r}")
