"""Reproducible sampling and Monte Carlo estimators.

Random numbers come from numpy's counter-based Philox generator.  A stream is
keyed by ``(seed, stream_id)``; sample rows are produced in fixed blocks of
``BLOCK`` rows, block ``b`` using counter offset ``b``.  Any row is therefore
addressable without generating the rows before it, and results do not depend
on how blocks are spread over worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .model import FieldConfig, InitialData, as_multitime, as_point, schrodinger_value

__all__ = [
    "BLOCK",
    "RngStream",
    "Estimate",
    "draw_normals",
    "sample_brownian_times",
    "sample_btbs_point",
    "sample_sheet_grid",
    "mc_btbs_moment",
    "mc_ks_moment",
    "mc_bs_moment",
    "martingale_probe",
]

BLOCK = 1 << 16
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A counter-based random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v <= _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")
            object.__setattr__(self, name, int(v))

    def generator(self, block: int = 0) -> np.random.Generator:
        """Generator positioned at the start of ``block``."""
        key = self.seed | (self.stream_id << 64)
        return np.random.Generator(np.random.Philox(key=key, counter=int(block) << 128))

    def substream(self, offset: int) -> "RngStream":
        return RngStream(self.seed, (self.stream_id + offset) & _MASK64)


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error ``std(ddof=1) / sqrt(n_samples)``."""

    value: complex | float
    stderr: float
    n_samples: int
    seed: int
    stream_id: int


def _block(rng, b, rows, width):
    return rng.generator(b).standard_normal((rows, width))


def draw_normals(rng: RngStream, rows: int, width: int, workers: int = 1) -> np.ndarray:
    """``(rows, width)`` standard normals, assembled block by block in index order."""
    if rows < 0 or width < 1:
        raise ValueError("rows must be >= 0 and width >= 1")
    sizes = [min(BLOCK, rows - b * BLOCK) for b in range(math.ceil(rows / BLOCK))]
    if not sizes:
        return np.empty((0, width))
    if workers is None or workers <= 1 or len(sizes) == 1:
        parts = [_block(rng, b, m, width) for b, m in enumerate(sizes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda bm: _block(rng, bm[0], bm[1], width), enumerate(sizes)))
    return np.concatenate(parts, axis=0)


def _rows(size):
    return 1 if size is None else int(size)


def _squeeze(a, size):
    return a[0] if size is None else a


def sample_brownian_times(t, rng: RngStream, size: int | None = None, workers: int = 1) -> np.ndarray:
    """``(|B_1(t_1)|, ..., |B_n(t_n)|)``: independent half-normals with scales ``sqrt(t_i)``.

    Returns shape ``(n,)`` or ``(size, n)``.  Components with ``t_i = 0`` are
    exactly zero.
    """
    t = as_multitime(t)
    Z = draw_normals(rng, _rows(size), t.n, workers)
    return _squeeze(np.sqrt(t.as_array()) * np.abs(Z), size)


def _btbs_draw(cfg, t, x, Z):
    s = np.sqrt(t.as_array()) * np.abs(Z[:, : cfg.n])
    V = np.prod(s, axis=1)
    w = x + np.sqrt(V)[:, None] * Z[:, cfg.n :]
    return s, w


def sample_btbs_point(cfg: FieldConfig, t, x, rng: RngStream, size: int | None = None, workers: int = 1):
    """Draw ``(s, w)``: Brownian times ``s`` and the sheet value ``w`` at ``s``.

    Given ``s`` the sheet started at ``x`` is ``Normal(x, prod(s) I_d)``, so
    no path needs to be simulated.
    """
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    Z = draw_normals(rng, _rows(size), cfg.n + cfg.d, workers)
    s, w = _btbs_draw(cfg, t, x, Z)
    return _squeeze(s, size), _squeeze(w, size)


def sample_sheet_grid(
    cfg: FieldConfig, knots: Sequence, rng: RngStream, size: int | None = None, workers: int = 1
) -> np.ndarray:
    """Joint Brownian-sheet sample on the tensor grid ``knots[0] x ... x knots[n-1]``.

    Each axis must start at 0 and increase strictly.  Rectangle increments are
    independent with variance equal to the rectangle volume; cumulative sums
    along every axis give the sheet.  Output shape is
    ``(m_1, ..., m_n, d)`` or ``(size, m_1, ..., m_n, d)``.
    """
    if len(knots) != cfg.n:
        raise DomainError(f"need {cfg.n} knot vectors, got {len(knots)}")
    widths = []
    for k in knots:
        k = np.asarray(k, dtype=float)
        if k.ndim != 1 or k.size < 2 or k[0] != 0.0 or np.any(np.diff(k) <= 0):
            raise DomainError("knots must start at 0 and increase strictly")
        widths.append(np.diff(k))
    cells = tuple(w.size for w in widths)
    rows = _rows(size)
    Z = draw_normals(rng, rows, int(np.prod(cells)) * cfg.d, workers)
    Z = Z.reshape((rows,) + cells + (cfg.d,))
    vol = np.ones(cells)
    for i, w in enumerate(widths):
        shape = [1] * cfg.n
        shape[i] = -1
        vol = vol * w.reshape(shape)
    inc = Z * np.sqrt(vol)[None, ..., None]
    for axis in range(1, cfg.n + 1):
        inc = np.cumsum(inc, axis=axis)
    out = np.pad(inc, [(0, 0)] + [(1, 0)] * cfg.n + [(0, 0)])
    return _squeeze(out, size)


def _estimate(samples, rng, N):
    if np.all(samples == samples[0]):
        # deterministic target: avoid rounding noise from the mean
        v = samples[0]
        v = complex(v) if np.iscomplexobj(samples) else float(v)
        return Estimate(v, 0.0, N, rng.seed, rng.stream_id)
    value = np.mean(samples)
    if np.iscomplexobj(samples):
        var = np.sum(np.abs(samples - value) ** 2) / (N - 1)
        value = complex(value)
    else:
        var = np.var(samples, ddof=1)
        value = float(value)
    return Estimate(value, float(math.sqrt(var / N)), N, rng.seed, rng.stream_id)


def _check_N(N):
    if int(N) != N or N < 2:
        raise ValueError(f"need at least 2 samples, got {N}")
    return int(N)


def _weight(s, p, j, n):
    if p == 0:
        return 1.0
    keep = [i for i in range(n) if i != j - 1]
    return np.prod(s[:, keep], axis=1) ** p


def mc_btbs_moment(
    cfg: FieldConfig,
    f: InitialData,
    p: int,
    j: int | None,
    t,
    x,
    N: int,
    rng: RngStream,
    workers: int = 1,
    which="f",
) -> Estimate:
    """Monte Carlo ``E[(prod_{i != j} |B_i(t_i)|)^p f(W^x(|B(t)|))]`` for ``p`` in {0, 2}."""
    if p not in (0, 2):
        raise ValueError(f"p must be 0 or 2, got {p}")
    if p == 2 and (j is None or not 1 <= j <= cfg.n):
        raise ValueError(f"p=2 needs an axis j in 1..{cfg.n}")
    N = _check_N(N)
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    Z = draw_normals(rng, N, cfg.n + cfg.d, workers)
    s, w = _btbs_draw(cfg, t, x, Z)
    vals = _weight(s, p, j, cfg.n) * np.broadcast_to(f.evaluate(w, which), (N,))
    return _estimate(vals, rng, N)


def mc_ks_moment(
    cfg: FieldConfig,
    f: InitialData,
    p: int,
    j: int | None,
    t,
    x,
    N: int,
    rng: RngStream,
    workers: int = 1,
    which="f",
) -> Estimate:
    """Monte Carlo over the Gaussian times ``s_i ~ N(0, t_i)`` of ``(prod_{i != j} s_i)^p v(s, x)``.

    ``v`` is the closed-form Schrodinger smoothing, so only the time integral
    is sampled.  The value is complex.
    """
    if p not in (0, 1, 2):
        raise ValueError(f"p must be 0, 1 or 2, got {p}")
    if p and (j is None or not 1 <= j <= cfg.n):
        raise ValueError(f"p={p} needs an axis j in 1..{cfg.n}")
    N = _check_N(N)
    t = as_multitime(t, cfg.n)
    if not t.is_interior:
        raise DomainError("KS moments are sampled at interior times")
    x = as_point(x, cfg.d)
    s = np.sqrt(t.as_array()) * draw_normals(rng, N, cfg.n, workers)
    # a zero product has probability zero, but nudge it off the singular set
    s = np.where(s == 0.0, np.finfo(float).tiny, s)
    vals = _weight(s, p, j, cfg.n) * schrodinger_value(f, s, x, which)
    return _estimate(np.asarray(vals, dtype=complex), rng, N)


def mc_bs_moment(cfg: FieldConfig, f: InitialData, t, x, N: int, rng: RngStream, workers: int = 1, which="f") -> Estimate:
    """Monte Carlo ``E[f(W^x(t))]`` for the Brownian sheet at a fixed time ``t``."""
    N = _check_N(N)
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    Z = draw_normals(rng, N, cfg.d, workers)
    w = x + math.sqrt(t.product) * Z
    return _estimate(np.broadcast_to(f.evaluate(w, which), (N,)).astype(float), rng, N)


def martingale_probe(
    cfg: FieldConfig,
    u_eval: Callable,
    t,
    x,
    probes: Sequence[float],
    N: int,
    rng: RngStream,
    j: int = 1,
    workers: int = 1,
) -> list[Estimate]:
    """``E[u(t_j - s_j, W(s_j))]`` at each probe ``s_j`` along axis ``j``.

    ``W`` runs in ``s_j`` as a Brownian motion started at ``x`` with variance
    rate ``prod_{i != j} t_i``, which is how the sheet moves when only the
    ``j``-th parameter changes.  For a field solving the ``j``-th heat-type
    equation the profile is flat and equal to ``u(t, x)``.

    ``u_eval(t, X)`` receives a time tuple and points of shape ``(N, d)`` and
    returns ``N`` values.  All probes share the same normals.
    """
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    N = _check_N(N)
    tj = t[j - 1]
    for s in probes:
        if not 0.0 <= s < tj:
            raise DomainError(f"probe s_j={s} outside [0, {tj})")
    rate = t.product_except(j)
    Z = draw_normals(rng, N, cfg.d, workers)
    out = []
    for s in probes:
        W = x + math.sqrt(rate * s) * Z
        vals = np.broadcast_to(np.asarray(u_eval(t.with_component(j, tj - s).t, W)), (N,))
        out.append(_estimate(vals, rng, N))
    return out
