"""Modulus-of-continuity and growth-gauge functions.

Two kinds of scalar gauge appear throughout the conditions this toolkit
checks:

* growth gauges ``zeta`` multiplying ``|x|^2`` in the non-explosion bound
  (nondecreasing, >= 1, and slowly varying enough that
  ``int_0^inf dz / (z*zeta(z) + 1)`` diverges), and
* moduli of continuity ``rho``/``varrho``/``vartheta``/``psi`` bounding how
  fast coefficient differences may grow with the separation of two states.

The named families shipped here carry a hand-checked admissibility verdict;
user-supplied expressions are only probed numerically and always stay
``inconclusive``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

ROLES = ("zeta", "rho", "varrho", "vartheta", "psi")

# Admissibility of the named families per role.  "proven" means the defining
# integral/limit condition holds analytically for the family, "refuted" means
# it provably fails; anything else is the caller's problem.
_ADMISSIBLE = {
    "constant": {"zeta": "proven", "rho": "refuted", "varrho": "refuted",
                 "vartheta": "refuted", "psi": "refuted"},
    "linear": {"zeta": "refuted", "rho": "proven", "varrho": "proven",
               "vartheta": "proven", "psi": "proven"},
    "r-log-inv": {"zeta": "refuted", "rho": "proven", "varrho": "proven",
                  "vartheta": "proven", "psi": "proven"},
    "r-loglog-inv": {"zeta": "refuted", "rho": "proven", "varrho": "proven",
                     "vartheta": "proven", "psi": "proven"},
    "r-log-loglog-inv": {"zeta": "refuted", "rho": "proven", "varrho": "proven",
                         "vartheta": "proven", "psi": "proven"},
    "zeta-log": {"zeta": "proven", "rho": "refuted", "varrho": "refuted",
                 "vartheta": "refuted", "psi": "refuted"},
    "zeta-loglog": {"zeta": "proven", "rho": "refuted", "varrho": "refuted",
                    "vartheta": "refuted", "psi": "refuted"},
}


def _linear_extension(core: Callable, r0: float) -> Callable:
    """Extend ``core`` beyond r0 by its tangent line, keeping it concave and nondecreasing."""
    h = 1e-7 * r0
    slope = (core(r0) - core(r0 - h)) / h
    v0 = core(r0)

    def fn(r):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= r0, core(np.minimum(r, r0)), v0 + slope * (r - r0))
        return np.where(r <= 0.0, 0.0, out)

    return fn


@dataclass(frozen=True, eq=False)
class ModulusFunction:
    """A named scalar gauge with a role and an admissibility verdict.

    ``admissible`` is tri-state: "proven" / "refuted" for the shipped
    families (hand-checked), "inconclusive" for user functions.
    """

    family: str
    role: str
    fn: Callable
    params: dict = field(default_factory=dict)
    admissible: str = "inconclusive"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}, expected one of {ROLES}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self.fn(r), dtype=float)
        return out if out.shape else float(out)

    # -- numeric probes -------------------------------------------------

    def probe_monotone(self, grid=None) -> bool:
        """True when the function is nondecreasing on the probe grid."""
        if grid is None:
            grid = np.geomspace(1e-10, 10.0, 400)
        vals = self(grid)
        return bool(np.all(np.diff(vals) >= -1e-12 * np.maximum(1.0, np.abs(vals[:-1]))))

    def probe_positive(self, grid=None) -> bool:
        """True when the function is > 0 on the probe grid (strictly positive away from 0)."""
        if grid is None:
            grid = np.geomspace(1e-10, 10.0, 400)
        return bool(np.all(self(grid) > 0.0))

    def probe_scaling_inequality(self, grid=None) -> float:
        """Worst slack of ``varrho(r) <= (1+r)^2 varrho(r/(1+r))`` on the grid.

        Nonpositive return means the inequality held everywhere probed.
        """
        if grid is None:
            grid = np.geomspace(1e-8, 100.0, 500)
        lhs = self(grid)
        rhs = (1.0 + grid) ** 2 * self(grid / (1.0 + grid))
        return float(np.max(lhs - rhs))

    def probe_vanishes_at_zero(self, grid=None) -> bool:
        if grid is None:
            grid = np.geomspace(1e-12, 1e-2, 60)
        vals = np.atleast_1d(self(grid))
        return bool(vals[0] < 1e-6 and np.all(np.isfinite(vals)))

    def divergence_probe(self, kind: str = "auto", decades: int = 12) -> dict:
        """Numeric probe of the admissibility integral; never a verdict.

        For role ``zeta`` the integral is ``int^inf dz/(z*zeta(z)+1)`` (probed
        over growing decades); for the moduli roles it is ``int_0 dr/rho(r)``
        (probed over shrinking decades).  Returns the partial integrals and a
        ``looks_divergent`` flag.  User families stay "inconclusive" no matter
        what this says.
        """
        if kind == "auto":
            kind = "upper" if self.role == "zeta" else "lower"
        partials = []
        if kind == "upper":
            integrand = lambda z: 1.0 / (z * float(self(z)) + 1.0)
            edges = np.power(10.0, np.arange(decades + 1))
        else:
            integrand = lambda r: 1.0 / max(float(self(r)), 1e-300)
            edges = np.power(10.0, -np.arange(decades + 1, dtype=float))[::-1] * 1e-1
            # decades below 0.1: [1e-13, ..., 1e-1]
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(integrand, a, b, limit=100)
            partials.append(val)
        partials = np.asarray(partials)
        tail = partials[-4:]
        # a divergent integral keeps contributing per decade instead of decaying
        looks_divergent = bool(np.all(tail > 0.25 * np.max(tail)) and np.sum(tail) > 1e-3)
        return {"partials": partials, "looks_divergent": looks_divergent}


# -- shipped families ----------------------------------------------------

def constant(value: float = 1.0, role: str = "zeta") -> ModulusFunction:
    if role == "zeta" and value < 1.0:
        raise ValueError("a constant growth gauge must be >= 1")
    return ModulusFunction("constant", role, lambda r: np.full_like(np.asarray(r, dtype=float), value),
                           {"value": value}, _ADMISSIBLE["constant"][role])


def linear(slope: float = 1.0, role: str = "rho") -> ModulusFunction:
    if slope <= 0:
        raise ValueError("slope must be positive")
    return ModulusFunction("linear", role, lambda r: slope * np.asarray(r, dtype=float),
                           {"slope": slope}, _ADMISSIBLE["linear"][role])


def r_log_inv(role: str = "rho") -> ModulusFunction:
    """r * log(1/r) near zero, extended linearly beyond r0 = e^-2."""
    r0 = np.exp(-2.0)

    def core(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(r > 0, r * np.log(1.0 / np.maximum(r, 1e-300)), 0.0)
        return v

    return ModulusFunction("r-log-inv", role, _linear_extension(core, r0),
                           {}, _ADMISSIBLE["r-log-inv"][role])


def r_loglog_inv(role: str = "rho") -> ModulusFunction:
    """r * log(log(1/r)) near zero, linear beyond r0 = e^-e."""
    r0 = np.exp(-np.e)

    def core(r):
        r = np.asarray(r, dtype=float)
        rs = np.minimum(np.maximum(r, 1e-300), r0)
        v = rs * np.log(np.log(1.0 / rs))
        return np.where(r > 0, v, 0.0)

    return ModulusFunction("r-loglog-inv", role, _linear_extension(core, r0),
                           {}, _ADMISSIBLE["r-loglog-inv"][role])


def r_log_loglog_inv(role: str = "rho") -> ModulusFunction:
    """r * log(1/r) * log(log(1/r)) near zero, linear beyond r0 = e^-e."""
    r0 = np.exp(-np.e)

    def core(r):
        r = np.asarray(r, dtype=float)
        rs = np.minimum(np.maximum(r, 1e-300), r0)
        li = np.log(1.0 / rs)
        v = rs * li * np.log(li)
        return np.where(r > 0, v, 0.0)

    return ModulusFunction("r-log-loglog-inv", role, _linear_extension(core, r0),
                           {}, _ADMISSIBLE["r-log-loglog-inv"][role])


def zeta_log() -> ModulusFunction:
    """Growth gauge log(e + r): >= 1, nondecreasing, ~ log r at infinity."""
    return ModulusFunction("zeta-log", "zeta", lambda r: np.log(np.e + np.asarray(r, dtype=float)),
                           {}, _ADMISSIBLE["zeta-log"]["zeta"])


def zeta_loglog() -> ModulusFunction:
    """Growth gauge log(e + r) * log(e + log(e + r)) ~ log r * loglog r."""

    def fn(r):
        l1 = np.log(np.e + np.asarray(r, dtype=float))
        return l1 * np.log(np.e - 1.0 + l1)

    return ModulusFunction("zeta-loglog", "zeta", fn, {}, _ADMISSIBLE["zeta-loglog"]["zeta"])


def user_modulus(fn: Callable, role: str, name: str = "user") -> ModulusFunction:
    """Wrap an arbitrary vectorized scalar function; admissibility stays inconclusive."""
    return ModulusFunction(name, role, fn, {}, "inconclusive")


FAMILIES = {
    "constant": constant,
    "linear": linear,
    "r-log-inv": r_log_inv,
    "r-loglog-inv": r_loglog_inv,
    "r-log-loglog-inv": r_log_loglog_inv,
    "zeta-log": lambda role="zeta": zeta_log(),
    "zeta-loglog": lambda role="zeta": zeta_loglog(),
}


def phi_lyapunov(zeta: ModulusFunction | Callable, r) -> float | np.ndarray:
    """Lyapunov gauge ``phi(r) = exp( int_0^r dz / (z*zeta(z) + 1) )``.

    Concave-growing, nondecreasing, phi(0)=1.  For zeta == 1 it collapses to
    ``1 + r`` exactly, which the tests pin.
    """
    z = zeta if callable(zeta) else zeta.fn

    def integrand(s):
        return 1.0 / (s * float(np.asarray(z(s)).reshape(())) + 1.0)

    def one(rv: float) -> float:
        if rv < 0:
            raise ValueError("phi is defined for r >= 0")
        if rv == 0.0:
            return 1.0
        val, _ = integrate.quad(integrand, 0.0, rv, limit=200)
        return float(np.exp(val))

    arr = np.asarray(r, dtype=float)
    if arr.shape == ():
        return one(float(arr))
    return np.array([one(float(v)) for v in arr.ravel()]).reshape(arr.shape)
