"""Couplings of two copies of a jump SDE, pathwise and in generator form.

Two couplings are provided.

* synchronous: both copies ride the same Brownian increments and the same
  jump marks at the same times.
* reflection: the second copy's Brownian increment is reflected across the
  hyperplane orthogonal to e = (x - z)/|x - z|, i.e. dW_Z = (I - 2 e e^T)
  dW_X, while jumps stay shared.  Reflection of a Brownian motion is a
  Brownian motion, so this is a genuine coupling, and it forces the pair
  together even when the drift alone would not.

Pathwise, a pair is simulated as one system on R^{2d} sharing a single
d-dimensional Brownian stream and a single mark stream, so the engine's
replay guarantees carry over.  Once the separation falls below
``glue_radius`` the copies are glued and move together from then on.

On the generator side, for a radial function F(r) of the separation
r = |x - z|, both couplings act as

    L F = 1/2 F''(r) Abar + F'(r)/(2r) (tr A - Abar + 2 B) + jump term,

with B = <x - z, b(x) - b(z)> and A the diffusion matrix of the coupled
difference: A = (sigma(x) - sigma(z)) (...)^T for the synchronous case, and
A = (sl(x) - sl(z))(...)^T + 4 lambda0 e e^T for reflection, where
sl(y) = sqrt_spd(a(y) - lambda0 I) splits off an elliptic floor lambda0.
Abar = e^T A e; for reflection Abar >= 4 lambda0, which is what makes the
contraction work near r = 0.  Shared jumps contribute

    int [ F(|x - z + Dc|) - F(r) - 1_small(u) F'(r) <e, Dc> ] nu(du),

Dc = c(x,u) - c(z,u), with the gradient term subtracted only on the
compensated band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite, NotPSD
from .levy import sqrt_spd
from .model import Model, _const_diffusion
from .simulate import ALIVE, SimConfig, _prepare_jumps, _simulate_block

__all__ = [
    "CouplingScheme",
    "CoupledEnsemble",
    "couple",
    "RadialFunction",
    "basic_coupling_generator",
    "reflection_generator",
    "estimate_lambda0",
]

_EPS13 = float(np.finfo(float).eps) ** (1.0 / 3.0)


@dataclass
class CouplingScheme:
    kind: str = "synchronous"
    lambda0: float | None = None     # elliptic floor, reflection only
    glue_radius: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("synchronous", "reflection"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.glue_radius <= 0:
            raise ValueError("glue_radius must be positive")


class RadialFunction:
    """Scalar function of the separation radius with two derivatives."""

    def __init__(self, fn, d1=None, d2=None, name="user"):
        self._fn, self._d1, self._d2 = fn, d1, d2
        self.name = name

    def __call__(self, r):
        return self._fn(np.asarray(r, dtype=float))

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        if self._d1 is not None:
            return self._d1(r)
        h = _EPS13 * np.maximum(1.0, np.abs(r))
        return (self._fn(r + h) - self._fn(r - h)) / (2.0 * h)

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        if self._d2 is not None:
            return self._d2(r)
        h = (float(np.finfo(float).eps) ** 0.25) * np.maximum(1.0, np.abs(r))
        return (self._fn(r + h) - 2.0 * self._fn(r) + self._fn(r - h)) / (h * h)

    @staticmethod
    def power(p: float) -> "RadialFunction":
        return RadialFunction(lambda r: r ** p,
                              lambda r: p * r ** (p - 1.0),
                              lambda r: p * (p - 1.0) * r ** (p - 2.0),
                              name=f"power({p:g})")

    @staticmethod
    def bounded_ratio() -> "RadialFunction":
        """F(r) = r / (1 + r), the concave bounded gauge used for contraction."""
        return RadialFunction(lambda r: r / (1.0 + r),
                              lambda r: (1.0 + r) ** -2.0,
                              lambda r: -2.0 * (1.0 + r) ** -3.0,
                              name="bounded-ratio")


# ---------------------------------------------------------------------------
# pathwise coupling
# ---------------------------------------------------------------------------


def _pair_model(model: Model, scheme: CouplingScheme) -> Model:
    """The coupled pair (X, Z) as a single SDE on R^{2d} with shared noise."""
    d = model.d
    glue2 = scheme.glue_radius ** 2
    reflect = scheme.kind == "reflection"

    def drift(P):
        P = np.asarray(P, dtype=float)
        return np.concatenate([np.asarray(model.drift(P[..., :d]), dtype=float),
                               np.asarray(model.drift(P[..., d:]), dtype=float)], axis=-1)

    def diffusion(P):
        P = np.asarray(P, dtype=float)
        x, z = P[..., :d], P[..., d:]
        sx = np.asarray(model.diffusion(x), dtype=float)
        sz = np.asarray(model.diffusion(z), dtype=float)
        if reflect:
            w = x - z
            r2 = np.sum(w * w, axis=-1)
            # reflect only while genuinely apart; at the glue scale the pair
            # moves synchronously so glued components stay identical
            apart = r2 > glue2
            safe = np.where(apart, r2, 1.0)
            e = w / np.sqrt(safe)[..., None]
            ee = np.einsum("...i,...j->...ij", e, e)
            J = np.eye(d) - 2.0 * np.where(apart[..., None, None], ee, 0.0)
            sz = sz @ J
        return np.concatenate([sx, sz], axis=-2)

    jump = None
    factor = None
    if model.has_jumps:
        def jump(P, u):
            P = np.asarray(P, dtype=float)
            cx = np.asarray(model.jump(P[..., :d], u), dtype=float)
            cz = np.asarray(model.jump(P[..., d:], u), dtype=float)
            return np.concatenate([cx, cz], axis=-1)

        def direct(P, lo, hi):
            P = np.asarray(P, dtype=float)
            return np.concatenate([model.jump_moment(P[..., :d], lo, hi),
                                   model.jump_moment(P[..., d:], lo, hi)], axis=-1)

        factor = ("direct", direct, None)

    pm = Model(2 * d, drift, diffusion, jump, model.levy,
               name=f"paired-{model.name}", jump_factor=factor,
               params=dict(model.params))
    pm.brownian_dim = d
    return pm


@dataclass
class CoupledEnsemble:
    """Separation histories of coupled pairs plus glue diagnostics."""

    times: np.ndarray
    separations: np.ndarray          # (n_pairs, n_times)
    coupling_time: np.ndarray        # first grid time with sep <= glue_radius (nan if none)
    glued: np.ndarray                # bool per pair
    status: np.ndarray
    x_final: np.ndarray
    z_final: np.ndarray
    scheme: CouplingScheme
    model_name: str
    states: np.ndarray | None = field(default=None, repr=False)  # (n_pairs, n_times, 2d)

    @property
    def n_pairs(self) -> int:
        return len(self.status)

    def success_fraction(self) -> float:
        """Share of pairs glued by the horizon (dead pairs count as failures)."""
        return float(np.mean(self.glued & (self.status == ALIVE)))

    def max_separation(self) -> np.ndarray:
        return self.separations.max(axis=1)


def couple(model: Model, x0, z0, cfg: SimConfig,
           scheme: CouplingScheme | None = None) -> CoupledEnsemble:
    """Run coupled pairs (X from x0, Z from z0) under shared randomness.

    ``cfg.n_paths`` counts pairs.  Stores the full pair trajectories when
    ``cfg.store`` is "full", separations always.
    """
    scheme = scheme or CouplingScheme()
    d = model.d
    if scheme.kind == "reflection":
        lam = scheme.lambda0
        if lam is None:
            probe = np.vstack([np.atleast_2d(np.asarray(x0, dtype=float)),
                               np.atleast_2d(np.asarray(z0, dtype=float))])
            lam = estimate_lambda0(model, probe)
        if lam <= 0:
            raise NotPSD("reflection coupling needs an elliptic floor lambda0 > 0; "
                         "the diffusion matrix is degenerate on the probes")
        scheme = CouplingScheme("reflection", lambda0=lam,
                                glue_radius=scheme.glue_radius)

    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (cfg.n_paths, d))
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (cfg.n_paths, d))
    p0 = np.concatenate([x0, z0], axis=1)

    pm = _pair_model(model, scheme)
    n_steps = max(1, int(round(cfg.horizon / cfg.dt)))
    dt = cfg.horizon / n_steps
    times = cfg.t0 + dt * np.arange(n_steps + 1)
    jp = _prepare_jumps(pm, cfg, dt)

    def glue(P, status):
        x, z = P[:, :d], P[:, d:]
        w = x - z
        m = (np.einsum("pi,pi->p", w, w) <= scheme.glue_radius ** 2) & (status == ALIVE)
        if np.any(m):
            P[m, d:] = P[m, :d]

    sep = np.empty((cfg.n_paths, n_steps + 1))
    status = np.zeros(cfg.n_paths, dtype=np.uint8)
    xf = np.empty((cfg.n_paths, d))
    zf = np.empty((cfg.n_paths, d))
    keep = cfg.store == "full"
    states = np.empty((cfg.n_paths, n_steps + 1, 2 * d)) if keep else None

    for start in range(0, cfg.n_paths, cfg.block_size):
        idx = np.arange(start, min(start + cfg.block_size, cfg.n_paths))
        traj, st, _ = _simulate_block(pm, cfg, p0[idx], idx, times, dt, jp,
                                      post_step=glue)
        sep[idx] = np.linalg.norm(traj[:, :, :d] - traj[:, :, d:], axis=2)
        status[idx] = st
        xf[idx] = traj[:, -1, :d]
        zf[idx] = traj[:, -1, d:]
        if keep:
            states[idx] = traj

    hit = sep <= scheme.glue_radius
    first = np.argmax(hit, axis=1)
    glued = hit[np.arange(cfg.n_paths), first]
    ctime = np.where(glued, times[first], np.nan)
    return CoupledEnsemble(times=times, separations=sep, coupling_time=ctime,
                           glued=glued, status=status, x_final=xf, z_final=zf,
                           scheme=scheme, model_name=model.name, states=states)


# ---------------------------------------------------------------------------
# coupled generators on radial functions of the separation
# ---------------------------------------------------------------------------


def _separation_inputs(model, x, z):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    w = x - z
    r = float(np.linalg.norm(w))
    if r == 0.0:
        raise ValueError("coupled generators need distinct states (|x - z| > 0)")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise NonFinite("coupled generator evaluated at a non-finite state")
    e = w / r
    bx = np.asarray(model.drift(x), dtype=float)
    bz = np.asarray(model.drift(z), dtype=float)
    B = float(w @ (bx - bz))
    return x, z, w, r, e, B


def _jump_term(model, F, x, z, w, r, e, *, sphere_order=6):
    """Shared-mark jump contribution to the coupled generator at (x, z)."""
    if not model.has_jumps:
        return 0.0, 0.0
    Fr = float(F(r))
    F1 = float(F.d1(r))
    F2 = float(F.d2(r))
    switch = 1e-5 * (1.0 + r)

    def taylor(dc):
        # second-order expansion of F(|w + dc|) - F(r) - F'(r) <e, dc>
        par = dc @ e
        perp2 = np.maximum(np.sum(dc * dc, axis=-1) - par ** 2, 0.0)
        return 0.5 * (F2 * par ** 2 + (F1 / r) * perp2)

    def compensated(u):
        dc = (np.asarray(model.jump(x[None, :], u), dtype=float)
              - np.asarray(model.jump(z[None, :], u), dtype=float))
        out = np.asarray(F(np.linalg.norm(w[None, :] + dc, axis=-1)), dtype=float) \
            - Fr - F1 * (dc @ e)
        n = np.linalg.norm(dc, axis=-1)
        small = n <= switch
        if np.any(small):
            out[small] = taylor(dc[small])
        return out

    def plain(u):
        dc = (np.asarray(model.jump(x[None, :], u), dtype=float)
              - np.asarray(model.jump(z[None, :], u), dtype=float))
        return np.asarray(F(np.linalg.norm(w[None, :] + dc, axis=-1)), dtype=float) - Fr

    lo, hi = model.small_band()
    val, err = model.levy.mark_integral(compensated, lo, hi,
                                        sphere_order=sphere_order, return_error=True)
    big = model.large_band()
    if big is not None:
        v2, e2 = model.levy.mark_integral(plain, big[0], big[1],
                                          sphere_order=sphere_order, return_error=True)
        val, err = val + v2, err + e2
    return float(val), float(err)


def basic_coupling_generator(model, F: RadialFunction, x, z, *,
                             sphere_order: int = 6, return_error: bool = False):
    """Synchronous-coupling generator acting on F(|x - z|)."""
    x, z, w, r, e, B = _separation_inputs(model, x, z)
    ds = np.asarray(model.diffusion(x), dtype=float) - np.asarray(model.diffusion(z), dtype=float)
    abar = float(np.sum((e @ ds) ** 2))
    tra = float(np.sum(ds * ds))
    val = 0.5 * float(F.d2(r)) * abar + float(F.d1(r)) / (2.0 * r) * (tra - abar + 2.0 * B)
    jv, je = _jump_term(model, F, x, z, w, r, e, sphere_order=sphere_order)
    val += jv
    return (val, je) if return_error else val


def reflection_generator(model, F: RadialFunction, x, z, lambda0: float, *,
                         sphere_order: int = 6, return_error: bool = False):
    """Reflection-coupling generator acting on F(|x - z|).

    ``lambda0`` is the elliptic floor split off the diffusion matrix:
    a(y) - lambda0 I must stay positive semi-definite at x and z.
    """
    if lambda0 <= 0:
        raise ValueError("lambda0 must be positive")
    x, z, w, r, e, B = _separation_inputs(model, x, z)
    slx = sqrt_spd(model.a(x) - lambda0 * np.eye(model.d))
    slz = sqrt_spd(model.a(z) - lambda0 * np.eye(model.d))
    dsl = slx - slz
    abar = float(np.sum((e @ dsl) ** 2)) + 4.0 * lambda0
    tra = float(np.sum(dsl * dsl)) + 4.0 * lambda0
    val = 0.5 * float(F.d2(r)) * abar + float(F.d1(r)) / (2.0 * r) * (tra - abar + 2.0 * B)
    jv, je = _jump_term(model, F, x, z, w, r, e, sphere_order=sphere_order)
    val += jv
    return (val, je) if return_error else val


def estimate_lambda0(model, probes, *, shrink: float = 0.99) -> float:
    """A safe elliptic floor: the smallest eigenvalue of a over the probes, shrunk."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    a = model.a(probes)
    ev = np.linalg.eigvalsh(a)
    lam = float(ev.min())
    return max(lam, 0.0) * shrink
