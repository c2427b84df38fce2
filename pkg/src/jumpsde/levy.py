"""Jump measures: radial quadrature, small/large splitting, sampling, kernel decomposition.

Three concrete measure families cover everything the rest of the toolkit
needs:

``RadialLevyMeasure``
    nu(du) = g(|u|) du supported on an annulus {r_lo < |u| < r_hi}.  All
    moments reduce to 1-D radial integrals against the weight
    ``S_{d-1} * g(r) * r^{d-1}`` (surface measure factored out); integrands
    that genuinely depend on the direction are averaged over a fixed
    spherical rule first.

``AtomLevyMeasure``
    finitely many atoms; every integral is a finite sum, every error is 0.

``ProductSlabMeasure``
    Lebesgue measure on [0, K) x [0, 1], the mark space used by kernel
    decompositions of state-dependent jump kernels.

Radial integrals are computed decade-by-decade in log space with
Gauss-Legendre panels, which handles power-law singularities at 0 and heavy
tails at infinity and yields an honest error estimate; when the decade sums
refuse to converge a ``QuadratureDivergence`` is raised instead of guessing.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import special, stats

from .errors import InfiniteLargeMass, NotPSD, QuadratureDivergence, SliceMassOverflow, ToolkitError

__all__ = [
    "RadialLevyMeasure",
    "AtomLevyMeasure",
    "ProductSlabMeasure",
    "alpha_stable_radial",
    "uniform_ball",
    "split",
    "sample_large_jumps",
    "KernelDecomposition",
    "build_decomposition",
    "sphere_rule",
    "decade_quad",
    "surface_area",
]


def surface_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} (2 for d=1, 2*pi, 4*pi, ...)."""
    return float(2.0 * np.pi ** (d / 2.0) / special.gamma(d / 2.0))


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


_SPHERE_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def sphere_rule(d: int, n_polar: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Directions and weights (summing to 1) for averaging over S^{d-1}.

    d=1 and d=2 rules are exact for their trigonometric degree; d=3 uses a
    Gauss-Legendre x midpoint product rule.  Higher dimensions fall back to a
    fixed seeded quasi-random set and are only Monte Carlo accurate.
    """
    key = (d, n_polar)
    if key in _SPHERE_CACHE:
        return _SPHERE_CACHE[key]
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        w = np.array([0.5, 0.5])
    elif d == 2:
        m = max(8, 4 * n_polar)
        th = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        w = np.full(m, 1.0 / m)
    elif d == 3:
        mu, glw = _gauss_legendre(n_polar)
        m = 2 * n_polar
        phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        s = np.sqrt(1.0 - mu ** 2)
        dirs = np.empty((n_polar, m, 3))
        dirs[..., 0] = s[:, None] * np.cos(phi)[None, :]
        dirs[..., 1] = s[:, None] * np.sin(phi)[None, :]
        dirs[..., 2] = mu[:, None]
        dirs = dirs.reshape(-1, 3)
        w = np.repeat(glw / 2.0, m) / m
    else:
        rng = np.random.Generator(np.random.Philox(key=np.array([12345, d], dtype=np.uint64)))
        m = max(64, 4 * n_polar * n_polar)
        g = rng.standard_normal((m, d))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
        w = np.full(m, 1.0 / m)
    _SPHERE_CACHE[key] = (dirs, w)
    return dirs, w


def _gl_panel(fn: Callable, a: float, b: float, n: int):
    """Gauss-Legendre on (a, b) in log space; fn vectorized, scalar or vector valued."""
    y0, y1 = math.log(a), math.log(b)
    t, w = _gauss_legendre(n)
    y = 0.5 * (y1 - y0) * t + 0.5 * (y0 + y1)
    r = np.exp(y)
    vals = np.asarray(fn(r), dtype=float)
    jac = 0.5 * (y1 - y0) * r
    if vals.ndim == 1:
        return float(np.sum(w * jac * vals))
    return np.tensordot(w * jac, vals, axes=(0, 0))


def decade_quad(fn: Callable, lo: float, hi: float, *, n: int = 24,
                max_decades: int = 14, rel_tol: float = 1e-9):
    """Integrate ``fn`` (vectorized over radii) on (lo, hi) decade by decade.

    Returns ``(value, error_estimate)``.  ``lo`` may be 0 and ``hi`` may be
    inf; the open ends are walked in log-decades and the unreachable tail is
    bounded by a geometric estimate.  Raises QuadratureDivergence when the
    decade partial integrals do not decay toward an open end.
    """
    if not (0.0 <= lo < hi):
        raise ValueError(f"bad integration band ({lo}, {hi})")

    pieces: list[tuple[float, float, bool]] = []  # (a, b, is_tail_piece)
    lo_eff = lo
    hi_eff = hi
    if hi == np.inf:
        anchor = max(lo, 1.0)
        if lo < anchor:
            lo_pieces_end = anchor
        else:
            lo_pieces_end = lo
        up = [(lo_pieces_end * 10.0 ** j, lo_pieces_end * 10.0 ** (j + 1), True)
              for j in range(max_decades)]
        hi_eff = lo_pieces_end
        pieces_up = up
    else:
        pieces_up = []
    if lo == 0.0:
        anchor = hi_eff if hi_eff not in (np.inf, 0.0) else 1.0
        down = [(anchor * 10.0 ** (-j - 1), anchor * 10.0 ** (-j), True)
                for j in range(max_decades)]
        lo_eff = anchor
        pieces_down = down[::-1]  # ascending order
    else:
        pieces_down = []

    if lo_eff < hi_eff and hi_eff != np.inf:
        # middle band, split into whole decades for uniform accuracy
        k = max(1, int(np.ceil(np.log10(hi_eff / lo_eff))))
        edges = np.geomspace(lo_eff, hi_eff, k + 1)
        pieces.extend((edges[i], edges[i + 1], False) for i in range(k))

    def run(piece_list):
        vals, errs, mags = [], [], []
        for a, b, _ in piece_list:
            v1 = _gl_panel(fn, a, b, n)
            v2 = _gl_panel(fn, a, b, max(6, n // 2))
            vals.append(v1)
            errs.append(np.max(np.abs(np.asarray(v1) - np.asarray(v2))))
            mags.append(np.max(np.abs(np.asarray(v1))))
        return vals, errs, mags

    vals_d, errs_d, mags_d = run(pieces_down)
    vals_m, errs_m, mags_m = run(pieces)
    vals_u, errs_u, mags_u = run(pieces_up)

    total = None
    for v in vals_d + vals_m + vals_u:
        total = v if total is None else total + np.asarray(v)
    if total is None:
        total = 0.0
    err = float(sum(errs_d) + sum(errs_m) + sum(errs_u))
    scale = max(float(np.max(np.abs(np.asarray(total)))), 1e-300)

    def tail_check(mags, which):
        # mags ordered outward: innermost decade last for "down", largest last for "up"
        if len(mags) < 3:
            return 0.0
        outer = mags[-1]
        prev = mags[-2]
        if outer <= rel_tol * scale and prev <= rel_tol * scale:
            return 0.0
        ratio = outer / max(prev, 1e-300)
        geo = outer * ratio / max(1.0 - min(ratio, 0.9), 0.1)
        if ratio >= 0.95 and geo > max(rel_tol * scale, 1e-300):
            raise QuadratureDivergence(
                f"decade partial integrals do not decay toward the {which} end "
                f"(last ratio {ratio:.3g})", partials=np.asarray(mags))
        return geo

    if pieces_down:
        err += tail_check(mags_d[::-1], "inner")  # innermost last
    if pieces_up:
        err += tail_check(mags_u, "outer")
    return total, err


# ---------------------------------------------------------------------------
# measure families
# ---------------------------------------------------------------------------


class RadialLevyMeasure:
    """Rotationally invariant jump measure nu(du) = g(|u|) du on an annulus."""

    kind = "radial"

    def __init__(self, d: int, radial_density: Callable, r_lo: float = 0.0,
                 r_hi: float = 1.0, *, split_radius: float | None = None,
                 name: str = "radial"):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if not (0.0 <= r_lo < r_hi):
            raise ValueError("need 0 <= r_lo < r_hi")
        self.d = int(d)
        self.mark_dim = int(d)
        self.density = radial_density
        self.r_lo = float(r_lo)
        self.r_hi = float(r_hi)
        self.split_radius = split_radius
        self.name = name
        self._rule_cache: dict = {}
        self._cdf_cache: dict = {}

    def __repr__(self):
        return (f"RadialLevyMeasure(d={self.d}, support=({self.r_lo:g}, {self.r_hi:g}), "
                f"name={self.name!r})")

    def _band(self, lo, hi):
        lo = self.r_lo if lo is None else max(float(lo), self.r_lo)
        hi = self.r_hi if hi is None else min(float(hi), self.r_hi)
        return lo, hi

    def radial_weight(self, r):
        r = np.asarray(r, dtype=float)
        return surface_area(self.d) * np.asarray(self.density(r), dtype=float) * r ** (self.d - 1)

    def mass(self, lo: float | None = None, hi: float | None = None) -> float:
        """nu of the annulus {lo < |u| < hi} (intersected with the support)."""
        lo, hi = self._band(lo, hi)
        if lo >= hi:
            return 0.0
        val, _ = decade_quad(self.radial_weight, lo, hi)
        return float(val)

    def mark_integral(self, F: Callable, lo: float | None = None, hi: float | None = None,
                      *, sphere_order: int = 6, return_error: bool = False):
        """integral of F(u) nu(du) over the band; F vectorized on (M, d) -> (M,) or (M, k)."""
        lo, hi = self._band(lo, hi)
        if lo >= hi:
            return (0.0, 0.0) if return_error else 0.0
        dirs, w_dir = sphere_rule(self.d, sphere_order)
        S = dirs.shape[0]

        def radial_fn(r):
            pts = r[:, None, None] * dirs[None, :, :]
            vals = np.asarray(F(pts.reshape(-1, self.d)), dtype=float)
            if vals.ndim == 1:
                avg = vals.reshape(len(r), S) @ w_dir
                return avg * self.radial_weight(r)
            avg = np.einsum("s,rsk->rk", w_dir, vals.reshape(len(r), S, -1))
            return avg * self.radial_weight(r)[:, None]

        val, err = decade_quad(radial_fn, lo, hi)
        if return_error:
            return val, err
        return val

    def radial_moment(self, h: Callable, lo=None, hi=None, *, return_error=False):
        """integral of h(|u|) nu(du); h vectorized on radii."""
        lo, hi = self._band(lo, hi)
        if lo >= hi:
            return (0.0, 0.0) if return_error else 0.0
        val, err = decade_quad(lambda r: np.asarray(h(r), dtype=float) * self.radial_weight(r), lo, hi)
        return (val, err) if return_error else val

    def fixed_rule(self, lo: float | None = None, hi: float | None = None, *,
                   n_per_decade: int = 12, sphere_order: int = 4,
                   min_radius_factor: float = 1e-12):
        """Cached product quadrature nodes/weights on the band.

        A zero lower edge is clipped to ``hi * min_radius_factor``; the rule
        is meant for integrands vanishing at least quadratically at 0 (jump
        Taylor remainders, squared differences), for which the clipped mass
        is negligible.
        """
        lo, hi = self._band(lo, hi)
        key = (lo, hi, n_per_decade, sphere_order, min_radius_factor)
        if key in self._rule_cache:
            return self._rule_cache[key]
        if lo >= hi:
            out = (np.zeros((0, self.d)), np.zeros(0))
            self._rule_cache[key] = out
            return out
        lo_eff = max(lo, hi * min_radius_factor)
        k = max(1, int(np.ceil(np.log10(hi / lo_eff))))
        edges = np.geomspace(lo_eff, hi, k + 1)
        t, w = _gauss_legendre(n_per_decade)
        r_nodes, r_weights = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            y0, y1 = math.log(a), math.log(b)
            y = 0.5 * (y1 - y0) * t + 0.5 * (y0 + y1)
            r = np.exp(y)
            r_nodes.append(r)
            r_weights.append(0.5 * (y1 - y0) * w * r * self.radial_weight(r))
        r_nodes = np.concatenate(r_nodes)
        r_weights = np.concatenate(r_weights)
        dirs, w_dir = sphere_rule(self.d, sphere_order)
        nodes = (r_nodes[:, None, None] * dirs[None, :, :]).reshape(-1, self.d)
        weights = (r_weights[:, None] * w_dir[None, :]).reshape(-1)
        out = (nodes, weights)
        self._rule_cache[key] = out
        return out

    # -- sampling --------------------------------------------------------

    def _radius_cdf(self, lo: float, hi: float):
        key = (lo, hi)
        if key in self._cdf_cache:
            return self._cdf_cache[key]
        if not np.isfinite(hi):
            # cap an unbounded support where the remaining tail mass is
            # negligible (< 1e-12 of the band), so quantiles stay exact to
            # within that bias
            total, _ = decade_quad(self.radial_weight, lo, np.inf)
            cap = lo * 10.0
            for _ in range(60):
                tail, _ = decade_quad(self.radial_weight, cap, np.inf)
                if tail <= 1e-12 * total:
                    break
                cap *= 10.0
            out = self._radius_cdf(lo, cap)
            self._cdf_cache[key] = out
            return out
        if lo <= 0.0:
            out = self._radius_cdf(hi * 1e-12, hi)
            self._cdf_cache[key] = out
            return out
        grid = np.geomspace(lo, hi, 2049)
        t, w = _gauss_legendre(8)
        a, b = grid[:-1], grid[1:]
        mid = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * t[None, :]
        seg = np.sum(w[None, :] * self.radial_weight(mid.ravel()).reshape(mid.shape), axis=1)
        seg *= 0.5 * (b - a)
        cdf = np.concatenate([[0.0], np.cumsum(seg)])
        total = cdf[-1]
        if not np.isfinite(total) or total <= 0:
            raise ToolkitError(f"cannot build radius CDF on ({lo:g}, {hi:g})")
        out = (grid, cdf / total, total)
        self._cdf_cache[key] = out
        return out

    def radius_quantile(self, q, lo: float | None = None, hi: float | None = None):
        """Inverse radial CDF on the band (monotone 2048-segment interpolant)."""
        lo, hi = self._band(lo, hi)
        grid, cdf, _ = self._radius_cdf(lo, hi)
        return np.interp(np.asarray(q, dtype=float), cdf, grid)

    def radius_cdf(self, r, lo: float | None = None, hi: float | None = None):
        lo, hi = self._band(lo, hi)
        grid, cdf, _ = self._radius_cdf(lo, hi)
        return np.interp(np.asarray(r, dtype=float), grid, cdf)

    def sample(self, size: int, rng: np.random.Generator,
               lo: float | None = None, hi: float | None = None) -> np.ndarray:
        """iid marks from the normalized restriction of nu to the band."""
        lo, hi = self._band(lo, hi)
        if lo >= hi:
            raise ValueError("empty band")
        radii = self.radius_quantile(rng.uniform(size=size), lo, hi)
        if self.d == 1:
            signs = np.where(rng.uniform(size=size) < 0.5, 1.0, -1.0)
            return (radii * signs)[:, None]
        g = rng.standard_normal((size, self.d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return radii[:, None] * g

    def truncation_for_rate(self, target_rate: float, hi: float | None = None) -> float:
        """Inner radius eps with nu({eps < |u| < hi}) ~= target_rate (0 if already finite)."""
        lo, hi = self._band(None, hi)
        if lo > 0.0:
            return 0.0
        try:
            total = self.mass(lo, hi)
            if total <= target_rate:
                return 0.0
        except QuadratureDivergence:
            pass
        a, b = hi * 1e-14, hi * (1.0 - 1e-12)
        f = lambda e: self.mass(e, hi) - target_rate
        if f(a) <= 0.0:
            return 0.0
        for _ in range(80):
            m = math.sqrt(a * b)
            if f(m) > 0.0:
                a = m
            else:
                b = m
            if b / a < 1.0 + 1e-9:
                break
        return math.sqrt(a * b)

    def levy_square_integral(self) -> float:
        """integral of min(1, |u|^2) nu(du); finite for a genuine jump measure."""
        val, _ = decade_quad(lambda r: np.minimum(1.0, r ** 2) * self.radial_weight(r),
                             self.r_lo, self.r_hi)
        return float(val)


class AtomLevyMeasure:
    """Finitely many atoms; integrals are exact sums."""

    kind = "atoms"

    def __init__(self, points, masses, *, split_radius: float | None = None,
                 name: str = "atoms"):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.masses = np.asarray(masses, dtype=float)
        if self.points.shape[0] != self.masses.shape[0]:
            raise ValueError("points and masses length mismatch")
        if np.any(self.masses < 0):
            raise ValueError("negative atom mass")
        self.d = self.points.shape[1]
        self.mark_dim = self.d
        self.split_radius = split_radius
        self.name = name
        self._radii = np.linalg.norm(self.points, axis=1)
        self.r_lo = float(self._radii.min(initial=0.0))
        self.r_hi = float(self._radii.max(initial=0.0))

    def __repr__(self):
        return f"AtomLevyMeasure({len(self.masses)} atoms, d={self.d}, name={self.name!r})"

    def _mask(self, lo, hi):
        m = np.ones(len(self.masses), dtype=bool)
        if lo is not None:
            m &= self._radii > lo
        if hi is not None:
            m &= self._radii <= hi
        return m

    def mass(self, lo=None, hi=None) -> float:
        return float(np.sum(self.masses[self._mask(lo, hi)]))

    def mark_integral(self, F, lo=None, hi=None, *, sphere_order: int = 6,
                      return_error: bool = False):
        m = self._mask(lo, hi)
        if not np.any(m):
            return (0.0, 0.0) if return_error else 0.0
        vals = np.asarray(F(self.points[m]), dtype=float)
        out = np.tensordot(self.masses[m], vals, axes=(0, 0))
        out = float(out) if np.ndim(out) == 0 else out
        return (out, 0.0) if return_error else out

    def radial_moment(self, h, lo=None, hi=None, *, return_error=False):
        m = self._mask(lo, hi)
        out = float(np.sum(self.masses[m] * np.asarray(h(self._radii[m]), dtype=float)))
        return (out, 0.0) if return_error else out

    def fixed_rule(self, lo=None, hi=None, **_ignored):
        m = self._mask(lo, hi)
        return self.points[m], self.masses[m]

    def sample(self, size: int, rng: np.random.Generator, lo=None, hi=None) -> np.ndarray:
        m = self._mask(lo, hi)
        w = self.masses[m]
        tot = w.sum()
        if tot <= 0:
            raise ValueError("empty band")
        idx = rng.choice(np.flatnonzero(m), size=size, p=w / tot)
        return self.points[idx]

    def levy_square_integral(self) -> float:
        return float(np.sum(self.masses * np.minimum(1.0, self._radii ** 2)))


class ProductSlabMeasure:
    """Lebesgue measure on [0, K) x [0, 1]: the mark space of kernel decompositions.

    Integrals over the eta axis are computed with a midpoint rule, which is
    only first-order accurate across the acceptance threshold of a
    decomposition; use KernelDecomposition's own quadrature for precise
    pushforward values.
    """

    kind = "slab"

    def __init__(self, n_slabs: int, *, name: str = "slab"):
        if n_slabs < 1:
            raise ValueError("need at least one slab")
        self.n_slabs = int(n_slabs)
        self.mark_dim = 2
        self.split_radius = None
        self.name = name

    def __repr__(self):
        return f"ProductSlabMeasure({self.n_slabs} slabs)"

    def mass(self, lo=None, hi=None) -> float:
        if lo is not None or hi is not None:
            raise ValueError("slab measures have no radial bands")
        return float(self.n_slabs)

    def mark_integral(self, F, lo=None, hi=None, *, n_xi: int = 32, n_eta: int = 129,
                      return_error: bool = False):
        if lo is not None or hi is not None:
            raise ValueError("slab measures have no radial bands")
        v = (np.arange(n_xi) + 0.5) / n_xi
        e = (np.arange(n_eta) + 0.5) / n_eta
        xi = (np.arange(self.n_slabs)[:, None] + v[None, :]).ravel()
        pts = np.stack(np.broadcast_arrays(xi[:, None], e[None, :]), axis=-1).reshape(-1, 2)
        vals = np.asarray(F(pts), dtype=float)
        if vals.ndim == 1:
            out = float(vals.sum() / (n_xi * n_eta))
        else:
            out = vals.sum(axis=0) / (n_xi * n_eta)
        # crude error gauge: the eta midpoint rule is O(1/n_eta) across steps
        err = float(np.max(np.abs(np.asarray(out)))) / n_eta
        return (out, err) if return_error else out

    def fixed_rule(self, lo=None, hi=None, *, n_xi: int = 16, n_eta: int = 33, **_):
        v = (np.arange(n_xi) + 0.5) / n_xi
        e = (np.arange(n_eta) + 0.5) / n_eta
        xi = (np.arange(self.n_slabs)[:, None] + v[None, :]).ravel()
        g1, g2 = np.meshgrid(xi, e, indexing="ij")
        nodes = np.stack([g1.ravel(), g2.ravel()], axis=1)
        weights = np.full(nodes.shape[0], 1.0 / (n_xi * n_eta))
        return nodes, weights

    def sample(self, size: int, rng: np.random.Generator, lo=None, hi=None) -> np.ndarray:
        xi = rng.uniform(0.0, self.n_slabs, size=size)
        eta = rng.uniform(size=size)
        return np.stack([xi, eta], axis=1)

    def levy_square_integral(self) -> float:
        return float(self.n_slabs)  # finite total mass, trivially integrable


# -- constructors ---------------------------------------------------------


def alpha_stable_radial(d: int, alpha: float, r_lo: float = 0.0, r_hi: float = 1.0,
                        *, split_radius: float | None = None) -> RadialLevyMeasure:
    """Density |u|^{-d-alpha} on the annulus; the workhorse infinite-activity example."""
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must be in (0, 2)")
    m = RadialLevyMeasure(d, lambda r: np.asarray(r, dtype=float) ** (-(d + alpha)),
                          r_lo, r_hi, split_radius=split_radius,
                          name=f"stable(alpha={alpha:g})")
    m.alpha = alpha
    return m


def uniform_ball(d: int, radius: float = 0.5, total_mass: float = 1.0) -> RadialLevyMeasure:
    """Finite-activity measure, uniform density on a centered ball."""
    vol = surface_area(d) * radius ** d / d
    c0 = total_mass / vol
    m = RadialLevyMeasure(d, lambda r: np.full_like(np.asarray(r, dtype=float), c0),
                          0.0, radius, name=f"uniform-ball(R={radius:g})")
    return m


# -- splitting & large-jump sampling ---------------------------------------


def _sampler_self_test(measure, lo, hi):
    """Build-time chi-square check that the band sampler matches the measure."""
    rng = np.random.Generator(np.random.Philox(key=np.array([0xC0FFEE, 0], dtype=np.uint64)))
    n = 4096
    pts = measure.sample(n, rng, lo, hi)
    if measure.kind == "atoms":
        mask = measure._mask(lo, hi)
        w = measure.masses[mask] / measure.masses[mask].sum()
        keys = [tuple(p) for p in measure.points[mask]]
        counts = np.zeros(len(keys))
        lookup = {k: i for i, k in enumerate(keys)}
        for p in pts:
            counts[lookup[tuple(p)]] += 1
        expected = w * n
        keep = expected >= 5
        if keep.sum() < 2:
            return
        p = stats.chisquare(counts[keep], expected[keep] * counts[keep].sum() / expected[keep].sum()).pvalue
    else:
        radii = np.linalg.norm(pts, axis=1)
        q = measure.radius_cdf(radii, lo, hi)
        edges = np.linspace(0.0, 1.0, 11)
        counts, _ = np.histogram(q, bins=edges)
        p = stats.chisquare(counts).pvalue
    if p <= 1e-3:
        raise ToolkitError(f"jump sampler self-test failed (chi-square p={p:.2e})")


def split(measure, threshold: float):
    """Split at |u| = threshold into (small part, large part).

    The large part's total mass is computed once and cached on the returned
    object as ``total_mass``; infinite large mass raises InfiniteLargeMass.
    The large part is None when the region beyond the threshold is empty.
    An atom exactly on the threshold counts as small.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if measure.kind == "radial":
        small = None
        if measure.r_lo < threshold:
            small = RadialLevyMeasure(measure.d, measure.density, measure.r_lo,
                                      min(threshold, measure.r_hi),
                                      name=measure.name + "|small")
            if hasattr(measure, "alpha"):
                small.alpha = measure.alpha
        large = None
        if measure.r_hi > threshold:
            large = RadialLevyMeasure(measure.d, measure.density,
                                      max(threshold, measure.r_lo), measure.r_hi,
                                      name=measure.name + "|large")
            if hasattr(measure, "alpha"):
                large.alpha = measure.alpha
            try:
                lam = large.mass()
            except QuadratureDivergence as exc:
                raise InfiniteLargeMass(
                    f"measure beyond |u|={threshold:g} has divergent mass") from exc
            if not np.isfinite(lam):
                raise InfiniteLargeMass(f"measure beyond |u|={threshold:g} has infinite mass")
            large.total_mass = lam
            _sampler_self_test(large, None, None)
        return small, large
    if measure.kind == "atoms":
        radii = measure._radii
        small_mask = radii <= threshold
        small = None
        large = None
        if np.any(small_mask):
            small = AtomLevyMeasure(measure.points[small_mask], measure.masses[small_mask],
                                    name=measure.name + "|small")
        if np.any(~small_mask):
            large = AtomLevyMeasure(measure.points[~small_mask], measure.masses[~small_mask],
                                    name=measure.name + "|large")
            large.total_mass = float(large.masses.sum())
            _sampler_self_test(large, None, None)
        return small, large
    raise TypeError(f"cannot split a {measure.kind!r} measure by radius")


def sample_large_jumps(measure, horizon: float, rng: np.random.Generator):
    """Event times and marks of the finite-activity Poisson stream on [0, horizon].

    Returns ``(times, marks)`` with times sorted ascending.  The measure must
    have finite total mass (e.g. the large part produced by ``split``).
    """
    lam = getattr(measure, "total_mass", None)
    if lam is None:
        lam = measure.mass()
    if not np.isfinite(lam):
        raise InfiniteLargeMass("large-jump sampler needs a finite-mass measure")
    count = int(rng.poisson(lam * horizon))
    times = np.sort(rng.uniform(0.0, horizon, size=count))
    if count == 0:
        return times, np.zeros((0, measure.mark_dim))
    marks = measure.sample(count, rng)
    return times, marks


# ---------------------------------------------------------------------------
# kernel decomposition: state-dependent nu(x, dy) as a deterministic jump map
# ---------------------------------------------------------------------------


def _split_uniform(v: np.ndarray, parts: int) -> np.ndarray:
    """De-interleave the mantissa bits of v in [0,1) into ``parts`` independent uniforms."""
    v = np.asarray(v, dtype=float)
    u = (v * float(2 ** 52)).astype(np.uint64)
    acc = np.zeros((parts,) + v.shape, dtype=np.uint64)
    depth = np.zeros(parts, dtype=int)
    for b in range(52):
        j = b % parts
        bit = (u >> np.uint64(51 - b)) & np.uint64(1)
        acc[j] = (acc[j] << np.uint64(1)) | bit
        depth[j] += 1
    out = np.empty((parts,) + v.shape, dtype=float)
    for j in range(parts):
        out[j] = (acc[j].astype(float) + 0.5) / float(2 ** depth[j])
    return out


def _direction_from_uniforms(us: np.ndarray, d: int) -> np.ndarray:
    """Map independent uniforms (rows of us) to points on S^{d-1}."""
    if d == 1:
        return np.where(us[0] < 0.5, 1.0, -1.0)[:, None]
    if d == 2:
        th = 2.0 * np.pi * us[0]
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if d == 3:
        mu = 2.0 * us[0] - 1.0
        phi = 2.0 * np.pi * us[1]
        s = np.sqrt(np.maximum(0.0, 1.0 - mu ** 2))
        return np.stack([s * np.cos(phi), s * np.sin(phi), mu], axis=1)
    raise ValueError(f"direction synthesis only implemented for d <= 3, got d={d}")


def _uniforms_needed(d: int) -> int:
    # one for the radius plus however many the direction needs
    return {1: 2, 2: 2, 3: 3}.get(d, d)


class _Slab:
    """One cell of the partition: a radial sub-annulus or a single atom."""

    __slots__ = ("kind", "r_lo", "r_hi", "atom_index")

    def __init__(self, kind, r_lo=0.0, r_hi=0.0, atom_index=-1):
        self.kind = kind
        self.r_lo = r_lo
        self.r_hi = r_hi
        self.atom_index = atom_index


class KernelDecomposition:
    """A jump kernel nu(x, dy) rewritten as a deterministic mark map.

    The mark space is ([0, K) x [0, 1], Lebesgue).  On slab k the map is

        c(x, (xi, eta)) = gamma(x, xi) * 1{eta <= lambda(x, xi)},

    where ``lambda(x, xi)`` is the mass of the k-th partition cell under
    nu(x, .) (at most 1 by construction) and ``gamma(x, xi)`` inverts the
    cell's normalized law using the fractional part of xi.  Pushing Lebesgue
    measure through c then reproduces nu(x, .) exactly on sets avoiding 0.
    """

    def __init__(self, kernel, slabs: list[_Slab], *, state_independent: bool,
                 truncation: float = 0.0):
        self._kernel = kernel
        self.slabs = slabs
        self.n_slabs = len(slabs)
        self.state_independent = state_independent
        self.truncation = truncation
        self.mark_measure = ProductSlabMeasure(self.n_slabs)
        self._measure_cache: dict = {}

    # -- plumbing ---------------------------------------------------------

    def measure_at(self, x):
        if self.state_independent:
            key = None
        else:
            key = tuple(np.asarray(x, dtype=float).ravel().tolist())
        if key not in self._measure_cache:
            self._measure_cache[key] = self._kernel(x) if callable(self._kernel) else self._kernel
            if len(self._measure_cache) > 64:
                self._measure_cache.pop(next(iter(self._measure_cache)))
        return self._measure_cache[key]

    @property
    def d(self):
        probe = self.measure_at(None) if self.state_independent else None
        if probe is not None:
            return probe.d
        raise AttributeError("state-dependent kernel: dimension depends on x")

    def slab_mass(self, x, k: int) -> float:
        nu = self.measure_at(x)
        slab = self.slabs[k]
        if slab.kind == "atom":
            return float(nu.masses[slab.atom_index])
        return nu.mass(slab.r_lo, slab.r_hi)

    def lambda_(self, x, xi):
        """Slice mass lambda(x, xi) (0 outside [0, K))."""
        xi = np.asarray(xi, dtype=float)
        k = np.floor(xi).astype(int)
        out = np.zeros_like(xi)
        valid = (k >= 0) & (k < self.n_slabs)
        for kk in np.unique(k[valid]):
            out[k == kk] = self.slab_mass(x, int(kk))
        return out

    def gamma(self, x, xi):
        """Slice inverse-law map gamma(x, xi) -> jump vectors."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        nu = self.measure_at(x)
        d = nu.d
        out = np.zeros((xi.shape[0], d))
        k = np.floor(xi).astype(int)
        v = xi - k
        valid = (k >= 0) & (k < self.n_slabs)
        for kk in np.unique(k[valid]):
            sel = k == kk
            slab = self.slabs[int(kk)]
            if slab.kind == "atom":
                out[sel] = nu.points[slab.atom_index]
                continue
            us = _split_uniform(v[sel], _uniforms_needed(d))
            radii = nu.radius_quantile(us[0], slab.r_lo, slab.r_hi)
            dirs = _direction_from_uniforms(us[1:], d)
            out[sel] = radii[:, None] * dirs
        return out

    def as_jump(self):
        """The map c(x, u), u = (xi, eta), vectorized over marks; rows of x may vary."""

        def c(x, u):
            x = np.asarray(x, dtype=float)
            u = np.asarray(u, dtype=float)
            if u.ndim == 1:
                u = u[None, :]
                squeeze = True
            else:
                squeeze = False
            xi, eta = u[..., 0], u[..., 1]
            flat_xi = xi.reshape(-1)
            flat_eta = eta.reshape(-1)
            if self.state_independent or x.ndim == 1:
                xq = None if self.state_independent else x
                gam = self.gamma(xq, flat_xi)
                lam = self.lambda_(xq, flat_xi)
            else:
                xb = np.broadcast_to(x, u.shape[:-1] + (x.shape[-1],)).reshape(-1, x.shape[-1])
                gam = np.empty((flat_xi.size, x.shape[-1]))
                lam = np.empty(flat_xi.size)
                for i in range(flat_xi.size):  # slow path: genuinely state-dependent kernel
                    gam[i] = self.gamma(xb[i], flat_xi[i : i + 1])[0]
                    lam[i] = self.lambda_(xb[i], flat_xi[i : i + 1])[0]
            accept = (flat_eta <= lam).astype(float)
            res = gam * accept[:, None]
            res = res.reshape(u.shape[:-1] + (gam.shape[-1],))
            return res[0] if squeeze else res

        return c

    # -- exact/statistical accessors --------------------------------------

    def total_mass(self, x=None) -> float:
        return float(sum(self.slab_mass(x, k) for k in range(self.n_slabs)))

    def sample(self, x, size: int, rng: np.random.Generator) -> np.ndarray:
        """iid jump vectors from nu(x, .)/mass via the mark map (slab + inverse law)."""
        lams = np.array([self.slab_mass(x, k) for k in range(self.n_slabs)])
        tot = lams.sum()
        if tot <= 0:
            raise ValueError("kernel has zero mass at this state")
        ks = rng.choice(self.n_slabs, size=size, p=lams / tot)
        xi = ks + rng.uniform(size=size)
        return self.gamma(x, xi)

    def pushforward_mass(self, x, box_lo, box_hi, *, n_radial: int = 64,
                         sphere_order: int = 12) -> float:
        """Mass the mark map pushes into the box [box_lo, box_hi] (quadrature)."""
        nu = self.measure_at(x)
        box_lo = np.asarray(box_lo, dtype=float)
        box_hi = np.asarray(box_hi, dtype=float)

        def member(pts):
            return np.all((pts > box_lo) & (pts <= box_hi), axis=-1).astype(float)

        total = 0.0
        for slab in self.slabs:
            if slab.kind == "atom":
                p = nu.points[slab.atom_index]
                total += float(nu.masses[slab.atom_index]) * float(member(p[None, :])[0])
            else:
                val = nu.mark_integral(member, slab.r_lo, slab.r_hi, sphere_order=sphere_order)
                total += float(val)
        return total

    def mean_jump(self, x=None) -> np.ndarray:
        """integral of y nu(x, dy) over the decomposed region (compensator moment)."""
        nu = self.measure_at(x)
        out = np.zeros(nu.d)
        for slab in self.slabs:
            if slab.kind == "atom":
                out += nu.masses[slab.atom_index] * nu.points[slab.atom_index]
            else:
                out += np.asarray(nu.mark_integral(lambda p: p, slab.r_lo, slab.r_hi))
        return out


def build_decomposition(kernel, *, probe_states=None, truncation: float | None = None,
                        max_slabs: int = 4096) -> KernelDecomposition:
    """Partition a jump kernel into unit-mass slices and wrap it as a mark map.

    ``kernel`` is either a single measure (state-independent) or a callable
    ``x -> measure``.  Radial supports are cut into geometric annuli which are
    subdivided (in log radius) until every slice holds mass <= 1 at every
    probed state; atom kernels get one slab per atom.  A slice that cannot be
    subdivided (an atom heavier than 1) raises SliceMassOverflow, as does
    exceeding ``max_slabs``.

    Infinite-activity radial kernels must be truncated away from 0;
    ``truncation`` defaults to 1e-6 times the outer support radius in that
    case and is recorded on the result.
    """
    state_independent = not callable(kernel)
    if probe_states is None:
        probe_states = [None] if state_independent else []
    if not state_independent and not probe_states:
        raise ValueError("state-dependent kernels need probe_states")

    measures = [(x, kernel(x) if callable(kernel) else kernel) for x in probe_states]
    kinds = {m.kind for _, m in measures}
    if len(kinds) != 1:
        raise ValueError("kernel changes family across states")
    kind = kinds.pop()

    if kind == "atoms":
        counts = {m.points.shape[0] for _, m in measures}
        if len(counts) != 1:
            raise ValueError("atom count varies across states")
        n_atoms = counts.pop()
        for _, m in measures:
            if np.any(m.masses > 1.0 + 1e-12):
                raise SliceMassOverflow("an atom carries mass > 1 and cannot be subdivided")
        slabs = [_Slab("atom", atom_index=i) for i in range(n_atoms)]
        return KernelDecomposition(kernel, slabs, state_independent=state_independent)

    if kind != "radial":
        raise TypeError(f"cannot decompose a {kind!r} kernel")

    r_lo = min(m.r_lo for _, m in measures)
    r_hi = max(m.r_hi for _, m in measures)
    trunc = 0.0
    if r_lo == 0.0:
        finite = True
        for _, m in measures:
            try:
                if not np.isfinite(m.mass()):
                    finite = False
            except QuadratureDivergence:
                finite = False
        if not finite:
            trunc = truncation if truncation is not None else 1e-6 * r_hi
        elif truncation:
            trunc = truncation
    elif truncation:
        trunc = truncation
    inner = max(r_lo, trunc)
    if inner <= 0.0:
        # finite mass all the way to 0: keep a tiny positive floor for the
        # geometric annuli; the mass below it is zero in the limit and the
        # innermost annulus absorbs it via its own lower bound of 0
        inner = r_hi * 2.0 ** -40

    j_lo = int(np.floor(np.log2(inner)))
    j_hi = int(np.ceil(np.log2(r_hi)))
    slabs: list[_Slab] = []
    for j in range(j_lo, j_hi):
        a = max(2.0 ** j, inner)
        b = min(2.0 ** (j + 1), r_hi)
        if j == j_lo and trunc == 0.0 and r_lo == 0.0:
            a = 0.0  # innermost annulus keeps the full (finite-mass) core
        if b <= a:
            continue
        parts = 1
        while True:
            if a == 0.0:
                # log-subdivide the top of the cell; the bottom piece keeps 0
                tail = np.geomspace(b * 2.0 ** -(parts - 1), b, parts) if parts > 1 else [b]
                edges = np.concatenate([[0.0], tail])
            else:
                edges = np.geomspace(a, b, parts + 1)
            worst = 0.0
            for x, m in measures:
                for lo_e, hi_e in zip(edges[:-1], edges[1:]):
                    worst = max(worst, m.mass(lo_e if lo_e > 0 else None, hi_e))
            if worst <= 1.0:
                break
            parts *= 2
            if parts > max_slabs:
                raise SliceMassOverflow(
                    f"annulus ({a:g}, {b:g}) cannot be subdivided below unit mass")
        for lo_e, hi_e in zip(edges[:-1], edges[1:]):
            slabs.append(_Slab("radial", r_lo=float(lo_e), r_hi=float(hi_e)))
        if len(slabs) > max_slabs:
            raise SliceMassOverflow("slab budget exceeded")

    # drop empty slices (zero mass at every probe) to keep the mark space tight
    kept = []
    probe_ms = measures
    for s in slabs:
        if any(m.mass(s.r_lo if s.r_lo > 0 else None, s.r_hi) > 0.0 for _, m in probe_ms):
            kept.append(s)
    if not kept:
        raise ValueError("kernel has no mass on the decomposed region")
    return KernelDecomposition(kernel, kept, state_independent=state_independent,
                               truncation=trunc)


def sqrt_spd(mat: np.ndarray, *, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root via spectral decomposition.

    Eigenvalues in [-tol, 0) are clamped to 0; anything below -tol raises
    NotPSD.  Supports batched input (..., d, d).
    """
    mat = np.asarray(mat, dtype=float)
    sym = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    w, v = np.linalg.eigh(sym)
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1, keepdims=True))
    if np.any(w < -tol * scale):
        worst = float(np.min(w / scale))
        raise NotPSD(f"matrix has eigenvalue {worst:.3e} (relative) below -tol")
    w = np.maximum(w, 0.0)
    return np.einsum("...ik,...k,...jk->...ij", v, np.sqrt(w), v)
