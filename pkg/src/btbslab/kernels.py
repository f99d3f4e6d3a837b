"""Transition kernels and the identities that define them.

``bm_kernel``, ``bs_kernel`` and ``propagator`` are closed forms.
``kss_kernel`` is the phase-weighted propagator integrated against Brownian
time densities; it has no closed form and is computed by a contour-rotated
tensor rule (``d = 1`` only).
"""

from __future__ import annotations

import cmath
import itertools
import math

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import AccuracyError, DimensionError, DomainError, SingularPropagatorError
from .model import FieldConfig, ResidualReport, StencilSpec, as_multitime, as_point
from .quadrature import QuadratureSpec, QuadResult

__all__ = [
    "bm_kernel",
    "bm_heat_identity",
    "bs_kernel",
    "bs_kernel_laplacian",
    "bs_kernel_time_derivative_identity",
    "propagator",
    "kss_kernel",
]


def bm_kernel(t: float, a, b):
    """Gaussian transition density of Brownian motion from ``a`` to ``b`` in time ``t``."""
    if not t > 0:
        raise DomainError(f"bm_kernel needs t > 0, got {t}")
    diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    out = np.exp(-0.5 * diff * diff / t) / math.sqrt(2.0 * math.pi * t)
    return out[()] if isinstance(out, np.ndarray) else out


def bm_heat_identity(t: float, a: float, b: float, h: float = 1e-4) -> ResidualReport:
    """Centered difference of ``bm_kernel`` in ``t`` against half its analytic second ``b``-derivative."""
    if not t > h:
        raise DomainError(f"need t > h for a centered stencil, got t={t}, h={h}")
    lhs = (bm_kernel(t + h, a, b) - bm_kernel(t - h, a, b)) / (2 * h)
    r = b - a
    rhs = 0.5 * bm_kernel(t, a, b) * (r * r / (t * t) - 1.0 / t)
    return ResidualReport.from_sides(lhs, rhs, (t,), (b,), 1, StencilSpec(h_time=h))


def _check_pair(cfg, t, x, y):
    t = as_multitime(t, cfg.n)
    if not t.is_interior:
        raise DomainError("the sheet kernel is defined for interior times")
    return t, as_point(x, cfg.d), as_point(y, cfg.d)


def bs_kernel(cfg: FieldConfig, t, x, y):
    """Brownian-sheet transition density: a Gaussian in ``R^d`` with variance ``prod t``."""
    t, x, y = _check_pair(cfg, t, x, y)
    V = t.product
    r2 = np.sum((x - y) ** 2, axis=-1)
    out = np.exp(-0.5 * r2 / V) / (2.0 * math.pi * V) ** (cfg.d / 2)
    return out[()] if isinstance(out, np.ndarray) else out


def bs_kernel_laplacian(cfg: FieldConfig, t, x, y):
    """Analytic ``Delta_x`` of ``bs_kernel``: ``K (r^2 / V^2 - d / V)``."""
    t, x, y = _check_pair(cfg, t, x, y)
    V = t.product
    r2 = np.sum((x - y) ** 2, axis=-1)
    return bs_kernel(cfg, t, x, y) * (r2 / V**2 - cfg.d / V)


def bs_kernel_time_derivative_identity(cfg: FieldConfig, t, x, y, j: int, h: float = 1e-4) -> ResidualReport:
    """Centered difference of ``bs_kernel`` in ``t_j`` against ``(1/2) prod_{i != j} t_i Delta_x K``."""
    t, x, y = _check_pair(cfg, t, x, y)
    if t[j - 1] <= h:
        raise DomainError(f"t_{j} must exceed h for a centered stencil")
    lhs = (
        bs_kernel(cfg, t.with_component(j, t[j - 1] + h), x, y)
        - bs_kernel(cfg, t.with_component(j, t[j - 1] - h), x, y)
    ) / (2 * h)
    rhs = 0.5 * t.product_except(j) * bs_kernel_laplacian(cfg, t, x, y)
    return ResidualReport.from_sides(lhs, rhs, t, x, j, StencilSpec(h_time=h))


def propagator(cfg: FieldConfig, s, x, y) -> complex:
    """Complex Gaussian kernel with effective time ``i prod s``, principal branch."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (cfg.n,):
        raise DimensionError(f"expected {cfg.n} time parameters, got shape {s.shape}")
    S = float(np.prod(s))
    if S == 0.0:
        raise SingularPropagatorError("the propagator is singular when prod s = 0")
    x = as_point(x, cfg.d)
    y = as_point(y, cfg.d)
    r2 = float(np.sum((x - y) ** 2))
    z = 1j * S
    return cmath.exp(-r2 / (2 * z)) / (2 * math.pi * z) ** (cfg.d / 2)


# --- the KS sheet kernel ----------------------------------------------------
#
# Fold R^n into orthants with signs sigma and substitute s_i = sigma_i z_i^2.
# The Jacobian 2 z_i cancels the |prod s|^{-1/2} of the propagator, leaving a
# smooth integrand in z.  What remains oscillates like exp(i r^2 / (2 S)) near
# the axes; rotating the first axis by exp(-i alpha prod(sigma)) turns that
# into decay.  The rotation stays in the half plane where the branch of
# (i S)^{-1/2} is analytic.  Panels graded towards z = 0 resolve the layer.

_ALPHA = math.pi / 8
_TAIL = 45.0  # log of the neglected Gaussian tail


def _graded_rule(L, nodes, panels):
    x, w = leggauss(nodes)
    edges = [0.0] + [L * 2.0 ** (-k) for k in range(panels - 1, -1, -1)]
    zs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        zs.append(a + 0.5 * (x + 1.0) * (b - a))
        ws.append(0.5 * w * (b - a))
    return np.concatenate(zs), np.concatenate(ws)


def _panel_count(n, L, r):
    # the layer sits near z ~ sqrt(r) / L^(n-1) on the smallest axis
    if r == 0.0:
        return 6
    return int(min(30, max(6, math.ceil(math.log2(L**n / math.sqrt(min(r, 1.0)))) + 6)))


def _kss_sum(t, r, nodes):
    n = len(t)
    total = 0j
    for sig in itertools.product((1, -1), repeat=n):
        P = math.prod(sig)
        phi = -_ALPHA * P
        rot = cmath.exp(1j * phi)
        axes, wts = [], []
        for i in range(n):
            c = math.cos(2 * phi) if i == 0 else 1.0
            b = math.sin(_ALPHA) if i == 0 else 0.0
            # solve z^4 c / (2 t) - z^2 b = _TAIL for the cutoff
            A = c / (2 * t[i])
            L = math.sqrt((b + math.sqrt(b * b + 4 * A * _TAIL)) / (2 * A))
            z, w = _graded_rule(L, nodes, _panel_count(n, L, r))
            axes.append(z)
            wts.append(w)
        Z = np.meshgrid(*axes, indexing="ij")
        W = np.prod(np.meshgrid(*wts, indexing="ij"), axis=0)
        s = [sig[i] * Z[i] ** 2 * (rot if i == 0 else 1.0) for i in range(n)]
        S = np.prod(s, axis=0)
        g = np.exp(1j * sum(s)) * (2**n * rot / cmath.sqrt(2j * math.pi * P * rot))
        if r != 0.0:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                layer = np.exp(1j * r * r / (2 * S))
            # nodes never sit at z = 0, but guard against underflowed products
            g = g * np.where(np.isfinite(layer), layer, 0.0)
        for i in range(n):
            g = g * np.exp(-s[i] ** 2 / (2 * t[i])) / math.sqrt(2 * math.pi * t[i])
        total += complex(np.sum(W * g))
    return total


def kss_kernel(cfg: FieldConfig, t, x, y, q: QuadratureSpec | None = None) -> QuadResult:
    """KS sheet kernel ``int exp(i sum s) p_{is}(x, y) prod K^BM(t_i, s_i) ds`` for ``d = 1``.

    ``q.order`` is the number of Gauss-Legendre nodes per panel (default 32);
    the error estimate compares it with half as many.
    """
    if cfg.d != 1:
        raise DimensionError("kss_kernel is evaluated directly only for d = 1")
    t = as_multitime(t, cfg.n)
    if not t.is_interior:
        raise DomainError("kss_kernel needs interior times")
    x = as_point(x, 1)
    y = as_point(y, 1)
    q = q or QuadratureSpec()
    nodes = q.order or 32
    if cfg.n > 2:
        raise DomainError("kss_kernel tensor rule supports n <= 2")
    r = float(abs(x[0] - y[0]))
    fine = _kss_sum(t.t, r, nodes)
    coarse = _kss_sum(t.t, r, max(2, nodes // 2))
    err = abs(fine - coarse)
    if err > q.refinement_tol * max(1.0, abs(fine)):
        raise AccuracyError(f"kss_kernel refinement changed the value by {err:.3g}", coarse, fine)
    return QuadResult(fine, err, nodes)
