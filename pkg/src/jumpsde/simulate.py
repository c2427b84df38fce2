"""Path simulation for jump SDEs.

Scheme
------
Tamed Euler with interlaced jumps.  Per step of size dt, from state X:

* drift increment dt * b(X) / (1 + dt |b(X)|)  (plain Euler divides by 1);
* diffusion increment sigma(X) sqrt(dt) Z with Z ~ N(0, I);
* compensator correction  -dt * int_{eps < |u| <= r0} c(X, u) nu(du), where
  r0 is the measure's compensation threshold (``split_radius``) and eps is
  the numerical small-jump cutoff;
* retained compensated jumps (marks in (eps, r0]) arrive as a Poisson
  stream; the marks landing in a step are applied as sum_i c(X, u_i) with X
  the step-start state;
* uncompensated large jumps (marks beyond r0) are placed at their exact
  event times: the step is split at those times, each sub-interval gets an
  independent N(0, delta I) Brownian increment (the first sub-interval
  reuses the step's base normal, later ones draw from a dedicated stream),
  and c is evaluated at the pre-jump state.

Marks with |u| <= eps are dropped together with their compensator (the
neglected part is a mean-zero martingale with variance int_{|u|<eps} |c|^2).
``small_jump_cutoff="auto"`` picks eps so the retained compensated stream
runs at about ``target_small_rate`` events per path per step.

Randomness
----------
All draws come from counter-based streams keyed by (master_seed, path index,
substream); see ``rng``.  A path consumes its own streams only, in time
order, so ``PathEnsemble.replay(i)`` regenerates path i bit-exactly without
touching the other paths, as long as the same config is used (the chunk
length is part of the draw layout).

Paths that leave the explosion radius are frozen at the crossing value with
status "exploded"; paths that produce NaN/inf are frozen at the last finite
state with status "nonfinite".  Both count as explosions in
``explosion_probability``.

File formats
------------
``save_csv`` writes ``path,t,x_1,...,x_d,status`` rows (or
``t,mean_*,std_*,n_alive`` for stats ensembles).  ``save`` writes a little-
endian binary block: magic ``JSDE``, u32 version, u32 store kind, u32 d,
u64 n_paths, u64 n_times, f64 t0/dt/horizon/eps, u64 seed, the model name,
then the time grid, initial states, statuses, death times, and the payload.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy import stats as _st

from . import levy as levy_mod
from .errors import NoClosedForm, NonFinite, ToolkitError
from .rng import (BROWNIAN, JUMP_MARKS, JUMP_TIMES, SMALL_MARKS, SMALL_TIMES,
                  SUBDIV, stream)

__all__ = [
    "ALIVE", "EXPLODED", "NONFINITE", "STATUS_NAMES",
    "SimConfig", "PathEnsemble", "simulate",
    "explosion_probability", "strong_error", "wilson_interval",
]

ALIVE, EXPLODED, NONFINITE = 0, 1, 2
STATUS_NAMES = {ALIVE: "alive", EXPLODED: "exploded", NONFINITE: "nonfinite"}

_STORES = ("full", "endpoints", "snapshots", "stats")


@dataclass
class SimConfig:
    dt: float
    horizon: float
    n_paths: int = 100
    scheme: str = "tamed"
    small_jump_cutoff: object = "auto"   # "auto" | float | None
    target_small_rate: float = 0.25      # events per path per step for "auto"
    store: str = "full"
    snapshot_times: tuple | None = None
    t0: float = 0.0
    master_seed: int = 0
    explosion_radius: float = 1e8
    block_size: int = 256
    time_chunk: int = 512

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if self.scheme not in ("tamed", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.store not in _STORES:
            raise ValueError(f"store must be one of {_STORES}")
        if self.store == "snapshots" and not self.snapshot_times:
            raise ValueError("snapshots store needs snapshot_times")
        if self.n_paths < 1 or self.block_size < 1 or self.time_chunk < 1:
            raise ValueError("n_paths, block_size, time_chunk must be >= 1")


def _resolve_eps(model, cfg: SimConfig, dt: float) -> float:
    if not model.has_jumps:
        return 0.0
    e = cfg.small_jump_cutoff
    if e is None:
        return 0.0
    if isinstance(e, str):
        if e != "auto":
            raise ValueError(f"small_jump_cutoff must be 'auto', a float, or None, got {e!r}")
        if model.levy.kind != "radial":
            return 0.0
        sr = getattr(model.levy, "split_radius", None)
        return float(model.levy.truncation_for_rate(cfg.target_small_rate / dt, hi=sr))
    e = float(e)
    if e < 0:
        raise ValueError("small_jump_cutoff must be >= 0")
    return e


def _prepare_jumps(model, cfg: SimConfig, dt: float) -> SimpleNamespace:
    """Resolve the cutoff, the compensated band, and the large-jump stream."""
    jp = SimpleNamespace(eps=0.0, small_active=False, lam_small=0.0,
                         small_lo=None, small_hi=None, mark_dim=0,
                         comp_fn=None, sample_small=None, large=None)
    if not model.has_jumps:
        return jp
    measure = model.levy
    jp.mark_dim = measure.mark_dim
    sr = getattr(measure, "split_radius", None)
    jp.eps = _resolve_eps(model, cfg, dt)
    jp.small_lo = jp.eps if jp.eps > 0.0 else None
    jp.small_hi = sr
    if sr is not None:
        _, jp.large = levy_mod.split(measure, sr)
    try:
        lam = measure.mass(jp.small_lo, jp.small_hi)
    except Exception as exc:
        raise ToolkitError(
            "compensated jump band has divergent mass; set small_jump_cutoff "
            "(or 'auto') to truncate the small jumps") from exc
    if not np.isfinite(lam):
        raise ToolkitError(
            "compensated jump band has infinite mass; set small_jump_cutoff "
            "(or 'auto') to truncate the small jumps")
    jp.lam_small = float(lam)
    if jp.lam_small > 0.0:
        jp.small_active = True
        jp.sample_small = lambda n, rng: measure.sample(n, rng, jp.small_lo, jp.small_hi)
        jp.comp_fn = lambda X: model.jump_moment(X, jp.small_lo, jp.small_hi)
    return jp


def _tame(b, delta, tamed):
    if not tamed:
        return b
    return b / (1.0 + delta * np.linalg.norm(b, axis=-1, keepdims=True))


def _substep_path(model, x, t_start, dt, taus, marks, z_base, g_sub, small_marks,
                  comp_fn, tamed, radius2, bd):
    """One step of a single path, split at its large-jump times.

    Returns (state, status, death_time); the state is the last finite one.
    """
    edges = np.concatenate([[t_start], taus, [t_start + dt]])
    if small_marks is not None and len(small_marks):
        dx_small = np.sum(np.asarray(model.jump(x[None, :], small_marks), dtype=float), axis=0)
    else:
        dx_small = None

    def classify(y):
        if not np.all(np.isfinite(y)):
            return NONFINITE
        if float(y @ y) > radius2:
            return EXPLODED
        return ALIVE

    for j in range(len(edges) - 1):
        delta = max(float(edges[j + 1] - edges[j]), 0.0)
        z = z_base if j == 0 else g_sub.standard_normal(bd)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            b = _tame(np.asarray(model.drift(x[None, :]), dtype=float)[0], delta, tamed)
            s = np.asarray(model.diffusion(x[None, :]), dtype=float)[0]
            y = x + delta * b + s @ (math.sqrt(delta) * z)
            if comp_fn is not None:
                y = y - delta * comp_fn(x[None, :])[0]
            if j == 0 and dx_small is not None:
                y = y + dx_small
        st = classify(y)
        if st == NONFINITE:
            return x, st, edges[j + 1]
        if st == EXPLODED:
            return y, st, edges[j + 1]
        if j < len(taus):
            with np.errstate(over="ignore", invalid="ignore"):
                c = np.asarray(model.jump(y[None, :], marks[j][None, :]), dtype=float)[0]
                y2 = y + c
            st = classify(y2)
            if st == NONFINITE:
                return y, st, edges[j + 1]
            if st == EXPLODED:
                return y2, st, edges[j + 1]
            y = y2
        x = y
    return x, ALIVE, math.nan


def _simulate_block(model, cfg: SimConfig, x0_block, indices, times, dt, jp,
                    post_step=None):
    """Simulate one block of paths; returns (traj, status, death_time).

    ``post_step(X, status)`` (optional, in-place) runs after each step commit
    and before the step is recorded; the coupling driver uses it to glue
    paired components.  Models may carry a ``brownian_dim`` attribute when
    their diffusion matrix is rectangular (d x brownian_dim).
    """
    P, d = x0_block.shape
    bd = getattr(model, "brownian_dim", None) or d
    n_steps = len(times) - 1
    sqdt = math.sqrt(dt)
    tamed = cfg.scheme == "tamed"
    radius2 = float(cfg.explosion_radius) ** 2

    X = np.array(x0_block, dtype=float)
    status = np.zeros(P, dtype=np.uint8)
    death = np.full(P, np.nan)
    traj = np.empty((P, n_steps + 1, d))
    traj[:, 0] = X

    g_w = [stream(cfg.master_seed, i, BROWNIAN) for i in indices]
    g_st = g_sm = g_sub = None
    if jp.small_active:
        g_st = [stream(cfg.master_seed, i, SMALL_TIMES) for i in indices]
        g_sm = [stream(cfg.master_seed, i, SMALL_MARKS) for i in indices]

    big = None
    if jp.large is not None:
        g_sub = [stream(cfg.master_seed, i, SUBDIV) for i in indices]
        horizon = times[-1] - times[0]
        bp, bt, bm = [], [], []
        for p, i in enumerate(indices):
            gt = stream(cfg.master_seed, i, JUMP_TIMES)
            gm = stream(cfg.master_seed, i, JUMP_MARKS)
            n_ev = int(gt.poisson(jp.large.total_mass * horizon))
            if n_ev == 0:
                continue
            bt.append(np.sort(gt.uniform(0.0, horizon, size=n_ev)) + times[0])
            bm.append(jp.large.sample(n_ev, gm))
            bp.append(np.full(n_ev, p, dtype=np.int64))
        if bp:
            bp = np.concatenate(bp)
            bt = np.concatenate(bt)
            bm = np.vstack(bm)
            bs = np.minimum(((bt - times[0]) / dt).astype(np.int64), n_steps - 1)
            order = np.lexsort((bt, bp, bs))
            bp, bt, bm, bs = bp[order], bt[order], bm[order], bs[order]
            big = SimpleNamespace(path=bp, time=bt, marks=bm,
                                  ptr=np.searchsorted(bs, np.arange(n_steps + 1)))

    k0 = 0
    while k0 < n_steps:
        L = min(cfg.time_chunk, n_steps - k0)
        Z = np.empty((P, L, bd))
        for p in range(P):
            Z[p] = g_w[p].standard_normal((L, bd))
        ev_path = ev_marks = ev_ptr = None
        if jp.small_active:
            counts = np.empty((P, L), dtype=np.int64)
            for p in range(P):
                counts[p] = g_st[p].poisson(jp.lam_small * dt, size=L)
            marks_per_path = []
            for p in range(P):
                tot = int(counts[p].sum())
                marks_per_path.append(jp.sample_small(tot, g_sm[p]) if tot
                                      else np.zeros((0, jp.mark_dim)))
            ev = np.repeat(np.arange(P * L), counts.ravel())
            ev_path = ev // L
            ev_step = ev % L
            ev_marks = (np.concatenate(marks_per_path, axis=0) if ev.size
                        else np.zeros((0, jp.mark_dim)))
            order = np.argsort(ev_step, kind="stable")
            ev_path, ev_marks = ev_path[order], ev_marks[order]
            ev_ptr = np.searchsorted(ev_step[order], np.arange(L + 1))

        for kk in range(L):
            k = k0 + kk
            alive = np.flatnonzero(status == ALIVE)
            if alive.size == 0:
                traj[:, k + 1:] = X[:, None, :]
                return traj, status, death
            t_next = times[k + 1]

            # paths hit by a large jump this step get individual treatment
            redo = np.zeros(0, dtype=np.int64)
            if big is not None and big.ptr[k] < big.ptr[k + 1]:
                sel = slice(big.ptr[k], big.ptr[k + 1])
                redo = np.unique(big.path[sel])
                redo = redo[status[redo] == ALIVE]

            pos = np.full(P, -1, dtype=np.int64)
            pos[alive] = np.arange(alive.size)

            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                Xa = X[alive]
                b = _tame(np.asarray(model.drift(Xa), dtype=float), dt, tamed)
                s = np.asarray(model.diffusion(Xa), dtype=float)
                new = Xa + dt * b + np.einsum("pij,pj->pi", s, sqdt * Z[alive, kk])
                if jp.comp_fn is not None:
                    new = new - dt * jp.comp_fn(Xa)
                if ev_ptr is not None and ev_ptr[kk] < ev_ptr[kk + 1]:
                    sel = slice(ev_ptr[kk], ev_ptr[kk + 1])
                    p_ev = ev_path[sel]
                    keep = (pos[p_ev] >= 0) & ~np.isin(p_ev, redo)
                    if np.any(keep):
                        pk = p_ev[keep]
                        cv = np.asarray(model.jump(X[pk], ev_marks[sel][keep]), dtype=float)
                        np.add.at(new, pos[pk], cv)
                entry_fin = np.all(np.isfinite(new), axis=1)
                nr2 = np.sum(new * new, axis=1)

            expl = entry_fin & ~(nr2 <= radius2)
            nfin = ~entry_fin
            ok = entry_fin & ~expl
            if redo.size:
                rl = pos[redo]
                ok[rl] = expl[rl] = nfin[rl] = False

            X[alive[ok]] = new[ok]
            X[alive[expl]] = new[expl]
            status[alive[expl]] = EXPLODED
            death[alive[expl]] = t_next
            status[alive[nfin]] = NONFINITE          # frozen at last finite state
            death[alive[nfin]] = t_next

            for p in redo:
                sel = slice(big.ptr[k], big.ptr[k + 1])
                mine = big.path[sel] == p
                taus = big.time[sel][mine]
                marks = big.marks[sel][mine]
                sm = None
                if ev_ptr is not None and ev_ptr[kk] < ev_ptr[kk + 1]:
                    esel = slice(ev_ptr[kk], ev_ptr[kk + 1])
                    sm = ev_marks[esel][ev_path[esel] == p]
                xs, st, when = _substep_path(model, X[p], times[k], dt, taus, marks,
                                             Z[p, kk], g_sub[p], sm, jp.comp_fn,
                                             tamed, radius2, bd)
                X[p] = xs
                if st != ALIVE:
                    status[p] = st
                    death[p] = when

            if post_step is not None:
                post_step(X, status)
            traj[:, k + 1] = X
        k0 += L
    return traj, status, death


@dataclass
class PathEnsemble:
    """Simulation output; which arrays are filled depends on the store mode."""

    kind: str
    times: np.ndarray
    status: np.ndarray
    death_time: np.ndarray
    x0: np.ndarray
    model_name: str
    eps: float
    t0: float
    dt: float
    horizon: float
    master_seed: int
    states: np.ndarray | None = None       # (n_paths, n_times, d) for path stores
    mean: np.ndarray | None = None         # (n_times, d) for stats store
    std: np.ndarray | None = None
    n_alive: np.ndarray | None = None
    config: SimConfig | None = None
    model: object | None = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.status)

    @property
    def d(self) -> int:
        if self.states is not None:
            return self.states.shape[-1]
        return self.mean.shape[-1]

    def final_states(self) -> np.ndarray:
        if self.states is None:
            raise ValueError("stats ensembles keep no per-path states")
        return self.states[:, -1, :]

    def states_at(self, t: float) -> np.ndarray:
        """Per-path states at the recorded time closest to t."""
        if self.states is None:
            raise ValueError("stats ensembles keep no per-path states")
        j = int(np.argmin(np.abs(self.times - t)))
        return self.states[:, j, :]

    def n_dead(self) -> int:
        return int(np.sum(self.status != ALIVE))

    def replay(self, i: int):
        """Re-run path i alone, bit-exactly; returns (times, path, status, death)."""
        if self.model is None or self.config is None:
            raise ValueError("replay needs the in-memory ensemble (model + config)")
        if not 0 <= i < self.n_paths:
            raise IndexError(f"path index {i} out of range")
        n = int(round(self.horizon / self.dt))
        times = self.t0 + self.dt * np.arange(n + 1)
        jp = _prepare_jumps(self.model, self.config, self.dt)
        traj, st, de = _simulate_block(self.model, self.config,
                                       self.x0[i:i + 1], [i], times, self.dt, jp)
        return times, traj[0], int(st[0]), float(de[0])

    # -- serialization -----------------------------------------------------

    def save_csv(self, path: str) -> None:
        with open(path, "w") as f:
            if self.kind == "stats":
                d = self.d
                cols = ["t"] + [f"mean_{j+1}" for j in range(d)] + \
                       [f"std_{j+1}" for j in range(d)] + ["n_alive"]
                f.write(",".join(cols) + "\n")
                for j, t in enumerate(self.times):
                    row = [f"{t:.12g}"]
                    row += [f"{v:.12g}" for v in self.mean[j]]
                    row += [f"{v:.12g}" for v in self.std[j]]
                    row.append(str(int(self.n_alive[j])))
                    f.write(",".join(row) + "\n")
                return
            d = self.d
            cols = ["path", "t"] + [f"x_{j+1}" for j in range(d)] + ["status"]
            f.write(",".join(cols) + "\n")
            for p in range(self.n_paths):
                name = STATUS_NAMES[int(self.status[p])]
                for j, t in enumerate(self.times):
                    row = [str(p), f"{t:.12g}"]
                    row += [f"{v:.17g}" for v in self.states[p, j]]
                    row.append(name)
                    f.write(",".join(row) + "\n")

    def save(self, path: str) -> None:
        kind_code = _STORES.index(self.kind)
        name_b = self.model_name.encode("utf-8")
        with open(path, "wb") as f:
            f.write(b"JSDE")
            f.write(struct.pack("<III", 1, kind_code, self.d))
            f.write(struct.pack("<QQ", self.n_paths, len(self.times)))
            f.write(struct.pack("<dddd", self.t0, self.dt, self.horizon, self.eps))
            f.write(struct.pack("<Q", self.master_seed & (2 ** 64 - 1)))
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(np.ascontiguousarray(self.times, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self.x0, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self.status, dtype="u1").tobytes())
            f.write(np.ascontiguousarray(self.death_time, dtype="<f8").tobytes())
            if self.kind == "stats":
                f.write(np.ascontiguousarray(self.mean, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(self.std, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(self.n_alive, dtype="<u8").tobytes())
            else:
                f.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())

    @staticmethod
    def load(path: str) -> "PathEnsemble":
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:4] != b"JSDE":
            raise ToolkitError(f"{path} is not an ensemble file (bad magic)")
        off = 4
        version, kind_code, d = struct.unpack_from("<III", raw, off); off += 12
        if version != 1:
            raise ToolkitError(f"unsupported ensemble file version {version}")
        n_paths, n_times = struct.unpack_from("<QQ", raw, off); off += 16
        t0, dt, horizon, eps = struct.unpack_from("<dddd", raw, off); off += 32
        (seed,) = struct.unpack_from("<Q", raw, off); off += 8
        (nlen,) = struct.unpack_from("<I", raw, off); off += 4
        name = raw[off:off + nlen].decode("utf-8"); off += nlen

        def arr(count, dtype):
            nonlocal off
            a = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
            off += count * np.dtype(dtype).itemsize
            return a

        times = arr(n_times, "<f8")
        x0 = arr(n_paths * d, "<f8").reshape(n_paths, d)
        status = arr(n_paths, "u1")
        death = arr(n_paths, "<f8")
        kind = _STORES[kind_code]
        out = PathEnsemble(kind=kind, times=times, status=status, death_time=death,
                           x0=x0, model_name=name, eps=eps, t0=t0, dt=dt,
                           horizon=horizon, master_seed=seed)
        if kind == "stats":
            out.mean = arr(n_times * d, "<f8").reshape(n_times, d)
            out.std = arr(n_times * d, "<f8").reshape(n_times, d)
            out.n_alive = arr(n_times, "<u8")
        else:
            out.states = arr(n_paths * n_times * d, "<f8").reshape(n_paths, n_times, d)
        return out


def simulate(model, x0, cfg: SimConfig) -> PathEnsemble:
    """Simulate an ensemble of paths of ``model`` started from ``x0``.

    ``x0`` is a single state (d,) shared by all paths or an array
    (n_paths, d) of per-path starts.
    """
    d = model.d
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (cfg.n_paths, d)).copy()
    if x0.shape != (cfg.n_paths, d):
        raise ValueError(f"x0 must have shape ({cfg.n_paths}, {d})")
    if not np.all(np.isfinite(x0)):
        raise NonFinite("initial states must be finite")

    n_steps = max(1, int(round(cfg.horizon / cfg.dt)))
    dt = cfg.horizon / n_steps
    times = cfg.t0 + dt * np.arange(n_steps + 1)
    jp = _prepare_jumps(model, cfg, dt)

    if cfg.store == "snapshots":
        snap = np.unique(np.clip(np.rint(
            (np.asarray(cfg.snapshot_times, dtype=float) - cfg.t0) / dt
        ).astype(int), 0, n_steps))
        rec_times = times[snap]
    elif cfg.store == "endpoints":
        snap = np.array([n_steps])
        rec_times = times[snap]
    else:
        snap = None
        rec_times = times

    status = np.zeros(cfg.n_paths, dtype=np.uint8)
    death = np.full(cfg.n_paths, np.nan)
    states = None
    sums = sumsq = counts = None
    if cfg.store == "stats":
        sums = np.zeros((n_steps + 1, d))
        sumsq = np.zeros((n_steps + 1, d))
        counts = np.zeros(n_steps + 1, dtype=np.int64)
    else:
        states = np.empty((cfg.n_paths, len(rec_times), d))

    for start in range(0, cfg.n_paths, cfg.block_size):
        idx = np.arange(start, min(start + cfg.block_size, cfg.n_paths))
        traj, st, de = _simulate_block(model, cfg, x0[idx], idx, times, dt, jp)
        status[idx] = st
        death[idx] = de
        if cfg.store == "stats":
            alive_mask = np.isnan(de)[:, None] | (times[None, :] < de[:, None])
            w = alive_mask.astype(float)
            sums += np.einsum("pt,ptd->td", w, traj)
            sumsq += np.einsum("pt,ptd->td", w, traj ** 2)
            counts += alive_mask.sum(axis=0)
        elif snap is None:
            states[idx] = traj
        else:
            states[idx] = traj[:, snap, :]

    out = PathEnsemble(kind=cfg.store, times=rec_times, status=status,
                       death_time=death, x0=x0, model_name=model.name,
                       eps=jp.eps, t0=cfg.t0, dt=dt, horizon=cfg.horizon,
                       master_seed=cfg.master_seed, config=cfg, model=model)
    if cfg.store == "stats":
        denom = np.maximum(counts, 1)[:, None].astype(float)
        mean = sums / denom
        var = np.maximum(sumsq / denom - mean ** 2, 0.0)
        mean[counts == 0] = np.nan
        out.mean = mean
        out.std = np.sqrt(var)
        out.n_alive = counts.astype(np.uint64)
    else:
        out.states = states
    return out


# ---------------------------------------------------------------------------
# derived estimators
# ---------------------------------------------------------------------------


def wilson_interval(k: int, n: int, conf: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion; sane at k = 0 and k = n."""
    if not 0 <= k <= n or n == 0:
        raise ValueError("need 0 <= k <= n, n > 0")
    z = float(_st.norm.ppf(0.5 * (1.0 + conf)))
    p = k / n
    z2 = z * z
    center = (p + z2 / (2 * n)) / (1 + z2 / n)
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n)
    return max(0.0, center - half), min(1.0, center + half)


def explosion_probability(model, x0, horizon: float, dt: float, *, n_paths: int = 1000,
                          explosion_radius: float = 1e5, scheme: str = "euler",
                          master_seed: int = 0, conf: float = 0.95,
                          small_jump_cutoff="auto") -> dict:
    """Fraction of paths leaving the radius (or going non-finite) by the horizon.

    Both "exploded" and "nonfinite" terminations count as explosion events;
    a scheme overflowing to inf is the discrete shadow of the same blow-up.
    Returns the point estimate with a Wilson confidence interval.
    """
    cfg = SimConfig(dt=dt, horizon=horizon, n_paths=n_paths, scheme=scheme,
                    store="endpoints", master_seed=master_seed,
                    explosion_radius=explosion_radius,
                    small_jump_cutoff=small_jump_cutoff)
    ens = simulate(model, x0, cfg)
    k = ens.n_dead()
    lo, hi = wilson_interval(k, n_paths, conf)
    return {"estimate": k / n_paths, "ci_low": lo, "ci_high": hi,
            "n_events": k, "n_paths": n_paths, "conf": conf,
            "horizon": horizon, "dt": dt, "explosion_radius": explosion_radius}


def _exact_gbm(model, x0, T, WT):
    a, b = model.params["a"], model.params["b"]
    return x0 * np.exp((a - 0.5 * b * b) * T + b * WT)


def _exact_drift_line(model, x0, T, WT):
    return x0 * math.exp(model.params["a"] * T)


def _exact_brownian(model, x0, T, WT):
    return x0 + WT

_EXACT_ENDPOINTS = {
    "gbm": _exact_gbm,
    "drift-line": _exact_drift_line,
    "brownian": _exact_brownian,
}


def strong_error(model, x0, horizon: float, dt_list, *, n_paths: int = 256,
                 scheme: str = "euler", master_seed: int = 0) -> dict:
    """Pathwise RMS endpoint error against a closed-form solution.

    Only models with a known strong solution are accepted (gbm, drift-line,
    brownian).  All step sizes ride the same Brownian path: increments on a
    coarse grid are sums of the finest grid's increments, so the measured
    errors are comparable across rows and the fitted slope is the strong
    convergence rate.
    """
    exact = _EXACT_ENDPOINTS.get(model.name)
    if exact is None:
        raise NoClosedForm(
            f"no closed-form strong solution registered for model {model.name!r}")
    dts = sorted({float(t) for t in dt_list}, reverse=True)
    finest = dts[-1]
    n_fine = int(round(horizon / finest))
    if abs(n_fine * finest - horizon) > 1e-9 * horizon:
        raise ValueError("the smallest dt must divide the horizon")
    for t in dts:
        r = t / finest
        if abs(r - round(r)) > 1e-9 or (n_fine % int(round(r))) != 0:
            raise ValueError("each dt must be an integer multiple of the smallest, "
                             "and divide the horizon")
    d = model.d
    x0b = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, d)).copy()
    Z = np.empty((n_paths, n_fine, d))
    for p in range(n_paths):
        Z[p] = stream(master_seed, p, BROWNIAN).standard_normal((n_fine, d))
    WT = math.sqrt(finest) * Z.sum(axis=1)
    ref = exact(model, x0b, horizon, WT)
    tamed = scheme == "tamed"
    errs = []
    for t in dts:
        r = int(round(t / finest))
        nc = n_fine // r
        Zc = Z.reshape(n_paths, nc, r, d).sum(axis=2) / math.sqrt(r)
        X = x0b.copy()
        sq = math.sqrt(t)
        for k in range(nc):
            b = _tame(np.asarray(model.drift(X), dtype=float), t, tamed)
            s = np.asarray(model.diffusion(X), dtype=float)
            X = X + t * b + np.einsum("pij,pj->pi", s, sq * Zc[:, k])
        errs.append(float(np.sqrt(np.mean(np.sum((X - ref) ** 2, axis=1)))))
    errs = np.asarray(errs)
    dts = np.asarray(dts)
    # errors at roundoff level (scheme solves the model exactly) carry no rate
    floor = 1e-12 * max(1.0, float(np.sqrt(np.mean(np.sum(ref ** 2, axis=1)))))
    pos = errs > floor
    if pos.sum() >= 2:
        rate = float(np.polyfit(np.log(dts[pos]), np.log(errs[pos]), 1)[0])
    else:
        rate = math.nan
    return {"dt": dts, "rms_error": errs, "rate": rate, "n_paths": n_paths,
            "scheme": scheme}
