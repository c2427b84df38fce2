"""SDE models and their infinitesimal generator.

A :class:`Model` holds the coefficients of

    dX = b(X) dt + sigma(X) dW
         + int_{small} c(X(t-), u) Ntilde(dt, du)      (compensated)
         + int_{large} c(X(t-), u) N(dt, du)           (uncompensated, interlaced)

where the small/large split of the mark space is declared on the jump
measure (``levy.split_radius``; None means everything is compensated).

Coefficient callables are vectorized over a leading batch axis:

* ``drift(x)``: (..., d) -> (..., d)
* ``diffusion(x)``: (..., d) -> (..., d, d)
* ``jump(x, u)``: (..., d) x (..., m) -> (..., d), broadcasting leading axes.

The generator acting on a C^2 test function f is

    Lf(x) = <Df(x), b(x)> + 1/2 tr(sigma sigma^T D^2 f)(x)
            + int_{small} [f(x+c) - f(x) - <Df(x), c>] nu(du)
            + int_{large} [f(x+c) - f(x)] nu(du),

with the jump integrals evaluated by the measure's quadrature.  For
f(x) = |x|^2 the compensated Taylor remainder is exactly |c|^2, so for a
fully-compensated model Lf = 2<x,b> + |sigma|^2 + int |c|^2 nu, an identity
the tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import NonFinite
from .levy import (KernelDecomposition, alpha_stable_radial, sqrt_spd,
                   uniform_ball)

__all__ = [
    "Model",
    "TestFunction",
    "GeneratorValue",
    "apply_generator",
    "spow",
    "builtin_models",
    "example1",
    "example2",
    "ou_with_jumps",
    "cubic_explosion",
    "gbm",
    "drift_line",
    "brownian",
    "levy_ito_model",
    "decomposition_model",
]


def spow(x, p):
    """Signed power sign(x) * |x|^p, the real odd extension of x^p."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** p


def zero_drift(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _const_diffusion(mat):
    mat = np.asarray(mat, dtype=float)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(mat, x.shape[:-1] + mat.shape).copy()

    return diffusion


def zero_diffusion(d):
    return _const_diffusion(np.zeros((d, d)))


@dataclass(eq=False)
class Model:
    """Coefficients, jump measure, and metadata of one jump SDE.

    ``jump_factor`` optionally declares structure of c for fast compensator
    moments: ("elementwise", A, h) means c(x,u) = A(x) * h(u) with scalar
    h(u); ("matvec", A, h) means c(x,u) = A(x) @ h(u) with vector h;
    ("additive", None, h) means c(x,u) = h(u); ("direct", fn, None) supplies
    fn(x, lo, hi) returning the band moment of c directly.
    """

    d: int
    drift: Callable
    diffusion: Callable
    jump: Callable | None = None
    levy: object | None = None
    name: str = "custom"
    jump_factor: tuple | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("state dimension must be >= 1")
        if (self.jump is None) != (self.levy is None):
            raise ValueError("jump map and jump measure must be supplied together")
        self._moment_cache: dict = {}

    @property
    def has_jumps(self) -> bool:
        return self.levy is not None

    def small_band(self):
        """Radial band (lo, hi) of the compensated part of the mark space."""
        sr = getattr(self.levy, "split_radius", None)
        if sr is None:
            return None, None
        return None, sr

    def large_band(self):
        sr = getattr(self.levy, "split_radius", None)
        if sr is None:
            return None
        hi = getattr(self.levy, "r_hi", np.inf)
        if sr >= hi:
            return None
        return sr, None

    def a(self, x):
        """Diffusion matrix a = sigma sigma^T."""
        s = np.asarray(self.diffusion(x), dtype=float)
        return s @ np.swapaxes(s, -1, -2)

    def jump_moment(self, x, lo=None, hi=None):
        """Band moment int c(x, u) nu(du), vectorized over states (..., d)."""
        if not self.has_jumps:
            return np.zeros_like(np.asarray(x, dtype=float))
        x = np.asarray(x, dtype=float)
        kind = self.jump_factor[0] if self.jump_factor else None
        if kind == "direct":
            return np.asarray(self.jump_factor[1](x, lo, hi), dtype=float)
        if kind == "elementwise":
            _, A, h = self.jump_factor
            key = ("elementwise", lo, hi)
            if key not in self._moment_cache:
                self._moment_cache[key] = float(
                    self.levy.radial_moment(lambda r: h(r), lo, hi) if _h_is_radial(h)
                    else self.levy.mark_integral(lambda u: np.asarray(h(u), dtype=float), lo, hi))
            return np.asarray(A(x), dtype=float) * self._moment_cache[key]
        if kind in ("matvec", "additive"):
            _, A, h = self.jump_factor
            key = (kind, lo, hi)
            if key not in self._moment_cache:
                self._moment_cache[key] = np.asarray(
                    self.levy.mark_integral(lambda u: np.asarray(h(u), dtype=float), lo, hi))
            mv = self._moment_cache[key]
            if kind == "matvec":
                return np.einsum("...ij,j->...i", np.asarray(A(x), dtype=float), mv)
            return np.broadcast_to(mv, x.shape).copy()
        # generic fallback: quadrature nodes, chunked over states
        nodes, weights = self.levy.fixed_rule(lo, hi)
        if nodes.shape[0] == 0:
            return np.zeros_like(x)
        flat = x.reshape(-1, self.d)
        out = np.empty_like(flat)
        chunk = max(1, int(2e6 // max(nodes.shape[0], 1)))
        for i in range(0, flat.shape[0], chunk):
            xs = flat[i:i + chunk]
            cv = np.asarray(self.jump(xs[:, None, :], nodes[None, :, :]), dtype=float)
            out[i:i + chunk] = np.einsum("m,nmd->nd", weights, cv)
        return out.reshape(x.shape)

    def validate(self, points, *, check_continuity: bool = True) -> dict:
        """Probe finiteness of the coefficients (and jump moments) on sample states.

        Raises NonFinite on NaN/inf; returns probe diagnostics, including the
        largest relative jump of x -> int |c(x,u)|^2 nu(du) between neighbor
        probes (continuity is probed, never certified).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        b = np.asarray(self.drift(points), dtype=float)
        s = np.asarray(self.diffusion(points), dtype=float)
        if not np.all(np.isfinite(b)):
            raise NonFinite("drift is not finite on a probe state")
        if not np.all(np.isfinite(s)):
            raise NonFinite("diffusion is not finite on a probe state")
        out = {"n_probes": len(points)}
        if self.has_jumps:
            sq = np.array([float(self.levy.mark_integral(
                lambda u, xx=xx: np.sum(np.asarray(self.jump(xx[None, :], u), dtype=float) ** 2, axis=-1)))
                for xx in points])
            if not np.all(np.isfinite(sq)):
                raise NonFinite("int |c|^2 nu is not finite on a probe state")
            out["jump_square_moment"] = sq
            if check_continuity and len(points) > 1:
                order = np.argsort(np.linalg.norm(points, axis=1))
                v = sq[order]
                rel = np.abs(np.diff(v)) / np.maximum(1e-12, np.abs(v[:-1]))
                out["jump_moment_max_rel_step"] = float(np.max(rel))
            lam = self.levy.mass(*self.large_band()) if self.large_band() else 0.0
            if not np.isfinite(lam):
                raise NonFinite("large-jump mass is not finite")
            out["large_mass"] = lam
        return out


def _h_is_radial(h):
    """Heuristic: mark factors declared as h(r) on radii (1-arg scalar fn)."""
    return getattr(h, "radial", False)


def _radial_h(fn):
    fn.radial = True
    return fn


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

_EPS13 = float(np.finfo(float).eps) ** (1.0 / 3.0)


class TestFunction:
    """A C^2 observable with value/gradient/Hessian.

    Built-ins carry analytic derivatives; anything else falls back to central
    finite differences with per-component step h_i = eps^(1/3) * max(1, |x_i|).
    """

    def __init__(self, fn: Callable, grad: Callable | None = None,
                 hess: Callable | None = None, name: str = "user"):
        self._fn = fn
        self._grad = grad
        self._hess = hess
        self.name = name

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self._fn(x), dtype=float)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self._grad is not None:
            return np.asarray(self._grad(x), dtype=float)
        h = _EPS13 * np.maximum(1.0, np.abs(x))
        d = x.shape[-1]
        out = np.empty_like(x)
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            out[..., i] = (self(x + h[..., i:i + 1] * e) - self(x - h[..., i:i + 1] * e)) / (2.0 * h[..., i])
        return out

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        if self._hess is not None:
            return np.asarray(self._hess(x), dtype=float)
        if x.ndim != 1:
            return np.stack([self.hess(row) for row in x.reshape(-1, x.shape[-1])]).reshape(x.shape + (x.shape[-1],))
        d = x.shape[0]
        h = _EPS13 * np.maximum(1.0, np.abs(x))
        out = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                ei = np.zeros(d); ei[i] = h[i]
                ej = np.zeros(d); ej[j] = h[j]
                val = (float(self(x + ei + ej)) - float(self(x + ei - ej))
                       - float(self(x - ei + ej)) + float(self(x - ei - ej))) / (4.0 * h[i] * h[j])
                out[i, j] = out[j, i] = val
        return out

    # -- built-ins ---------------------------------------------------------

    @staticmethod
    def abs2() -> "TestFunction":
        """f(x) = |x|^2."""
        return TestFunction(
            lambda x: np.sum(x ** 2, axis=-1),
            grad=lambda x: 2.0 * x,
            hess=lambda x: np.broadcast_to(2.0 * np.eye(x.shape[-1]), x.shape + (x.shape[-1],)).copy(),
            name="abs2",
        )

    @staticmethod
    def linear(a) -> "TestFunction":
        a = np.asarray(a, dtype=float)
        return TestFunction(
            lambda x: np.tensordot(x, a, axes=(-1, 0)),
            grad=lambda x: np.broadcast_to(a, x.shape).copy(),
            hess=lambda x: np.zeros(x.shape + (x.shape[-1],)),
            name="linear",
        )

    @staticmethod
    def exp_neg_abs2(scale: float = 1.0) -> "TestFunction":
        """f(x) = exp(-|x|^2 / scale); bounded and smooth."""

        def fn(x):
            return np.exp(-np.sum(x ** 2, axis=-1) / scale)

        def grad(x):
            return fn(x)[..., None] * (-2.0 / scale) * x

        def hess(x):
            d = x.shape[-1]
            f = fn(x)[..., None, None]
            outer = np.einsum("...i,...j->...ij", x, x)
            return f * ((4.0 / scale ** 2) * outer - (2.0 / scale) * np.eye(d))

        return TestFunction(fn, grad, hess, name=f"exp-neg-abs2({scale:g})")

    @staticmethod
    def indicator_halfspace(axis: int = 0, level: float = 0.0) -> "TestFunction":
        """Indicator of {x_axis > level}; bounded, NOT C^2 (probe use only)."""
        f = TestFunction(lambda x: (x[..., axis] > level).astype(float),
                         name=f"indicator(x{axis + 1}>{level:g})")
        f.sup_norm = 1.0
        return f


class GeneratorValue(NamedTuple):
    value: float
    jump_error: float


def apply_generator(model: Model, f: TestFunction, x, *, sphere_order: int = 6,
                    return_error: bool = False):
    """Evaluate the generator Lf at a single state x.

    Returns a float, or ``GeneratorValue(value, jump_error)`` when
    ``return_error`` is set; the error field is the quadrature's own estimate
    for the jump integral (0 for models without jumps).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.d:
        raise ValueError(f"x must be a state vector of length {model.d}")
    if not np.all(np.isfinite(x)):
        raise NonFinite("generator evaluated at a non-finite state")
    g = f.grad(x)
    H = f.hess(x)
    b = np.asarray(model.drift(x), dtype=float)
    s = np.asarray(model.diffusion(x), dtype=float)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))
            and np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise NonFinite("coefficient or derivative not finite at x")
    val = float(g @ b) + 0.5 * float(np.einsum("ij,ik,jk->", H, s, s))
    jerr = 0.0
    if model.has_jumps:
        fx = float(f(x))
        # below this jump size the finite difference f(x+c)-f(x)-<c,Df> is
        # pure cancellation noise; the second-order Taylor value takes over
        switch = 1e-5 * (1.0 + float(np.linalg.norm(x)))

        def compensated(u):
            c = np.asarray(model.jump(x[None, :], u), dtype=float)
            out = f(x[None, :] + c) - fx - c @ g
            cn = np.linalg.norm(c, axis=-1)
            small = cn <= switch
            if np.any(small):
                cs = c[small]
                out[small] = 0.5 * np.einsum("mi,ij,mj->m", cs, H, cs)
            return out

        def plain(u):
            c = np.asarray(model.jump(x[None, :], u), dtype=float)
            return f(x[None, :] + c) - fx

        lo, hi = model.small_band()
        sv, se = model.levy.mark_integral(compensated, lo, hi,
                                          sphere_order=sphere_order, return_error=True)
        val += float(sv)
        jerr += se
        big = model.large_band()
        if big is not None:
            lv, le = model.levy.mark_integral(plain, big[0], big[1],
                                              sphere_order=sphere_order, return_error=True)
            val += float(lv)
            jerr += le
    if return_error:
        return GeneratorValue(val, jerr)
    return val


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------


def example1(alpha: float = 0.5) -> Model:
    """3-d jump diffusion with signed-power drift and super-linear diffusion.

    b_j(x) = -x_j^(1/3) - x_j^3 (signed powers), sigma has diagonal
    |x_j|^(2/3)/sqrt(2) + 1 and off-diagonal x_j^2/3, and the jump amplitude
    is c_j(x, u) = gamma |x_j|^(2/3) |u| against the stable-type measure
    |u|^(-3-alpha) du on the unit ball, gamma = sqrt((2-alpha)/(8 pi)).
    Dissipative enough to be non-explosive despite the cubic growth.
    """
    d = 3
    gamma = float(np.sqrt((2.0 - alpha) / (8.0 * np.pi)))
    nu = alpha_stable_radial(d, alpha, 0.0, 1.0, split_radius=1.0)

    def drift(x):
        x = np.asarray(x, dtype=float)
        return -spow(x, 1.0 / 3.0) - x ** 3

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        out = np.empty(shape + (d, d))
        out[...] = (x[..., None, :] ** 2) / 3.0          # row i, col j: x_j^2 / 3
        diag = np.abs(x) ** (2.0 / 3.0) / np.sqrt(2.0) + 1.0
        idx = np.arange(d)
        out[..., idx, idx] = diag
        return out

    def jump(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return gamma * np.abs(x) ** (2.0 / 3.0) * np.linalg.norm(u, axis=-1, keepdims=True)

    A = lambda x: gamma * np.abs(np.asarray(x, dtype=float)) ** (2.0 / 3.0)
    h = _radial_h(lambda r: r)
    return Model(d, drift, diffusion, jump, nu, name="example1",
                 jump_factor=("elementwise", A, h),
                 params={"alpha": alpha, "gamma": gamma})


def example2(alpha: float = 0.5) -> Model:
    """Example 1's drift and jumps with a constant, non-degenerate diffusion.

    sigma = [[1,2,3],[3,1,2],[2,3,1]], so a = sigma sigma^T = 3I + 11*ones
    with spectrum {36, 3, 3}: uniformly elliptic, |sigma|^2 = 42.
    """
    base = example1(alpha)
    sigma = np.array([[1.0, 2.0, 3.0], [3.0, 1.0, 2.0], [2.0, 3.0, 1.0]])
    return Model(3, base.drift, _const_diffusion(sigma), base.jump, base.levy,
                 name="example2", jump_factor=base.jump_factor,
                 params=dict(base.params, sigma="constant"))


def ou_with_jumps(d: int = 2, jump_rate: float = 1.0, jump_radius: float = 0.5) -> Model:
    """Linear drift -x, identity diffusion, additive bounded jumps.

    The jumps are compensated finite-activity: marks uniform on a ball of
    radius ``jump_radius`` arriving at rate ``jump_rate``.  Since the mark law
    is symmetric the compensator vanishes and the jump part is a pure
    martingale.
    """
    nu = uniform_ball(d, jump_radius, jump_rate)

    def drift(x):
        return -np.asarray(x, dtype=float)

    def jump(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(u, np.broadcast_shapes(x.shape, u.shape)).copy()

    h = lambda u: np.asarray(u, dtype=float)
    return Model(d, drift, _const_diffusion(np.eye(d)), jump, nu,
                 name="ou-jumps", jump_factor=("additive", None, h),
                 params={"jump_rate": jump_rate, "jump_radius": jump_radius})


def cubic_explosion(d: int = 2) -> Model:
    """b(x) = x^3 componentwise, no noise: blows up in finite time from x != 0."""

    def drift(x):
        x = np.asarray(x, dtype=float)
        return x ** 3

    return Model(d, drift, zero_diffusion(d), name="cubic-explosion")


def gbm(a: float = 0.05, b: float = 0.4) -> Model:
    """1-d linear SDE dX = a X dt + b X dW; closed-form strong solution."""

    def drift(x):
        return a * np.asarray(x, dtype=float)

    def diffusion(x):
        return b * np.asarray(x, dtype=float)[..., None]

    return Model(1, drift, diffusion, name="gbm", params={"a": a, "b": b})


def drift_line(a: float = 1.0) -> Model:
    """1-d deterministic dX = a X dt."""

    def drift(x):
        return a * np.asarray(x, dtype=float)

    return Model(1, drift, zero_diffusion(1), name="drift-line", params={"a": a})


def brownian(d: int = 2) -> Model:
    """Standard Brownian motion (zero drift, identity diffusion)."""
    return Model(d, zero_drift, _const_diffusion(np.eye(d)), name="brownian")


def builtin_models() -> list[Model]:
    """The four reference models exercised throughout the test-suite and CLI."""
    return [example1(), example2(), ou_with_jumps(), cubic_explosion()]


_BUILTIN_FACTORIES = {
    "example1": example1,
    "example2": example2,
    "ou-jumps": ou_with_jumps,
    "cubic-explosion": cubic_explosion,
    "gbm": gbm,
    "drift-line": drift_line,
    "brownian": brownian,
}


def builtin(name: str, **kwargs) -> Model:
    try:
        return _BUILTIN_FACTORIES[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown builtin model {name!r}; "
                       f"choose from {sorted(_BUILTIN_FACTORIES)}") from None


# ---------------------------------------------------------------------------
# structured constructors
# ---------------------------------------------------------------------------


def levy_ito_model(psi: Callable, b0, Q, nu, *, name: str = "levy-ito",
                   psi_matrix: bool = False) -> Model:
    """Model driven by a fixed Levy triplet modulated by a state gauge psi.

    drift psi-free: b(x) = psi(x) * b0 (or psi(x) @ b0 for matrix psi),
    diffusion sigma(x) = psi(x) * sqrt_spd(Q), jumps c(x, u) = psi(x) * u.
    ``psi`` is scalar-valued (vectorized) unless ``psi_matrix``, in which case
    it returns (..., d, d).
    """
    b0 = np.asarray(b0, dtype=float)
    d = b0.shape[0]
    sq = sqrt_spd(np.asarray(Q, dtype=float))

    if psi_matrix:
        def drift(x):
            return np.einsum("...ij,j->...i", np.asarray(psi(x), dtype=float), b0)

        def diffusion(x):
            return np.asarray(psi(x), dtype=float) @ sq

        def jump(x, u):
            P = np.asarray(psi(x), dtype=float)
            return np.einsum("...ij,...j->...i", P, np.asarray(u, dtype=float))
    else:
        def drift(x):
            p = np.asarray(psi(x), dtype=float)
            return p[..., None] * b0

        def diffusion(x):
            p = np.asarray(psi(x), dtype=float)
            return p[..., None, None] * sq

        def jump(x, u):
            p = np.asarray(psi(x), dtype=float)
            u = np.asarray(u, dtype=float)
            return p[..., None] * u

    model = Model(d, drift, diffusion, jump, nu, name=name, jump_factor=None)
    cache: dict = {}

    # band moment of c is psi(x) applied to int u nu(du); declare it directly
    def direct(x, lo, hi):
        if (lo, hi) not in cache:
            cache[(lo, hi)] = np.asarray(
                nu.mark_integral(lambda u: np.asarray(u, dtype=float), lo, hi))
        mv = cache[(lo, hi)]
        p = np.asarray(psi(x), dtype=float)
        if psi_matrix:
            return np.einsum("...ij,j->...i", p, mv)
        return p[..., None] * mv

    model.jump_factor = ("direct", direct, None)
    return model


def decomposition_model(decomp: KernelDecomposition, drift: Callable,
                        diffusion: Callable, d: int, *, name: str = "kernel-sde") -> Model:
    """SDE whose jumps come from a kernel decomposition's mark map.

    The mark space is the decomposition's slab measure (finite mass, fully
    compensated); the compensator moment is the decomposition's exact
    ``mean_jump``.
    """
    c = decomp.as_jump()
    cache: dict = {}

    def direct(x, lo, hi):
        x = np.asarray(x, dtype=float)
        if decomp.state_independent:
            if "mv" not in cache:
                cache["mv"] = decomp.mean_jump()
            return np.broadcast_to(cache["mv"], x.shape).copy()
        flat = x.reshape(-1, d)
        out = np.stack([decomp.mean_jump(row) for row in flat])
        return out.reshape(x.shape)

    return Model(d, drift, diffusion, c, decomp.mark_measure, name=name,
                 jump_factor=("direct", direct, None),
                 params={"n_slabs": decomp.n_slabs})
