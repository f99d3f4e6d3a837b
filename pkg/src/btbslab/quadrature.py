"""Deterministic quadrature for the BTBS and KS moment integrals.

Every moment is an n-fold integral of a Gaussian smoothing of ``f`` against
Gaussian weights in the auxiliary times ``s``.  Substituting
``s_i = sqrt(t_i) z_i`` turns each axis into a standard Gaussian weight, so the
only thing that changes with ``t`` is where the integrand is sampled.

* BTBS: the integrand depends on ``|B_i(t_i)|``, which has a kink at zero on
  the full line.  We integrate over the half line with Gauss-Legendre nodes on
  ``[0, truncation]`` and the half-normal density folded into the weights.
* KS: the integrand ``exp(i sum s) * smoothed(i prod s)`` is entire in ``s``,
  so a normalised Gauss-Hermite tensor rule is used directly.

Errors are estimated by comparing the rule at ``order`` with the rule at
``ceil(order / 2)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import roots_hermitenorm

from .errors import AccuracyError, DomainError
from .model import (
    Family,
    FieldConfig,
    InitialData,
    QuadratureFallbackWarning,
    ResidualReport,
    StencilSpec,
    _check_axis,
    as_multitime,
    as_point,
    gaussian_smoothing_quadrature,
    laplacian_power,
)
from .pde_verify import FieldSet, fd_apply

__all__ = [
    "QuadratureSpec",
    "QuadResult",
    "MAX_ORDER",
    "auto_order",
    "quad_btbs_moment",
    "quad_ks_moment",
    "btbs_boundary_values",
    "ks_boundary_values",
    "commutation_check",
    "MomentField",
    "btbs_fields",
    "ks_fields",
]

# per-axis node caps; the tensor grid has order**n points
MAX_ORDER = {1: 400, 2: 240, 3: 80, 4: 40}
MIN_ORDER = 40
_SCHEMES = ("gauss_hermite_tensor", "adaptive")


@dataclass(frozen=True)
class QuadratureSpec:
    """Rule selection for the moment integrals.

    Parameters
    ----------
    scheme : {"gauss_hermite_tensor", "adaptive"}
        Tensor Gaussian rules (default) or scipy's adaptive ``nquad``.
    order : int, optional
        Nodes per axis.  ``None`` picks one from ``t`` and the frequency of ``f``.
    truncation : float
        Half-line cutoff in standardised units for the BTBS rule.
    refinement_tol : float
        Tolerance on the order/half-order difference, relative to
        ``max(1, |value|)``.
    """

    scheme: str = "gauss_hermite_tensor"
    order: int | None = None
    truncation: float = 9.5
    refinement_tol: float = 1e-6

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")
        if self.order is not None and self.order < 2:
            raise ValueError("order must be at least 2")
        if not self.truncation > 0 or not self.refinement_tol > 0:
            raise ValueError("truncation and refinement_tol must be positive")


class QuadResult(NamedTuple):
    value: complex
    error: float
    order: int


def auto_order(n: int, t, frequency: float) -> int:
    """Nodes per axis needed to resolve oscillation of the smoothed data.

    The smoothed data oscillates in ``s`` on a scale ~ 1 / (frequency * prod s);
    after the ``sqrt(t)`` rescaling that is what drives the node count.
    """
    if n not in MAX_ORDER:
        raise DomainError(f"tensor quadrature supports n <= {max(MAX_ORDER)}, got {n}")
    t = np.asarray(t, dtype=float)
    rt = np.sqrt(t)
    want = 16.0 * math.sqrt(float(t.max())) * (1.0 + frequency * float(np.prod(rt)))
    cap = MAX_ORDER[n]
    return int(min(cap, max(MIN_ORDER, math.ceil(want))))


@lru_cache(maxsize=64)
def _half_line_rule(order: int, L: float):
    x, w = leggauss(order)
    z = 0.5 * L * (x + 1.0)
    w = 0.5 * L * w * 2.0 * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    z.flags.writeable = False
    w.flags.writeable = False
    return z, w


@lru_cache(maxsize=64)
def _hermite_rule(order: int):
    # scipy's nodes stay finite at high order where numpy's overflow
    z, w = roots_hermitenorm(order)
    w = w / math.sqrt(2.0 * math.pi)
    z.flags.writeable = False
    w.flags.writeable = False
    return z, w


def _smooth_array(f: InitialData, V, x, which):
    try:
        return f.smoothed(V, x, which)
    except NotImplementedError:
        if np.iscomplexobj(V):
            raise NotImplementedError(
                f"{type(f).__name__} has no closed form for complex variance"
            ) from None
        warnings.warn(
            f"{type(f).__name__} has no closed-form Gaussian expectation; using quadrature",
            QuadratureFallbackWarning,
            stacklevel=3,
        )
        flat = [gaussian_smoothing_quadrature(f, float(v), x, which) for v in np.ravel(V)]
        return np.reshape(np.array(flat), np.shape(V))


def _axis_grids(t, z):
    """Broadcastable per-axis arrays ``s_i = sqrt(t_i) z``."""
    n = len(t)
    out = []
    for i, ti in enumerate(t):
        shape = [1] * n
        shape[i] = -1
        out.append((math.sqrt(ti) * z).reshape(shape))
    return out


def _tensor_weight(w, n):
    W = np.ones((1,) * n)
    for i in range(n):
        shape = [1] * n
        shape[i] = -1
        W = W * w.reshape(shape)
    return W


def _moment_weight(s, p, j):
    if p == 0 or j is None:
        return 1.0
    wt = 1.0
    for i, si in enumerate(s, start=1):
        if i != j:
            wt = wt * si
    return wt**p


def _btbs_sum(f, p, j, t, x, order, L, which):
    z, w = _half_line_rule(order, L)
    s = _axis_grids(t, z)
    V = s[0]
    for si in s[1:]:
        V = V * si
    core = _smooth_array(f, V, x, which)
    W = _tensor_weight(w, len(t))
    # normalising by the retained mass makes constants exact
    return float(np.sum(W * core * _moment_weight(s, p, j)) / np.sum(W))


def _ks_sum(f, p, j, t, x, order, which):
    z, w = _hermite_rule(order)
    s = _axis_grids(t, z)
    V = s[0]
    phase = s[0]
    for si in s[1:]:
        V = V * si
        phase = phase + si
    core = np.exp(1j * phase) * _smooth_array(f, 1j * V, x, which)
    W = _tensor_weight(w, len(t))
    return complex(np.sum(W * core * _moment_weight(s, p, j)) / np.sum(W))


def _check_moment(cfg, p, j):
    if p not in (0, 1, 2):
        raise ValueError(f"moment power p must be 0, 1 or 2, got {p}")
    if p and j is None:
        raise ValueError("a weighted moment needs the axis j")
    if j is not None:
        _check_axis(j, cfg.n)


def _adaptive(integrand, t, family, q):
    # scipy nquad over the standardised variables; slow, used for cross-checks
    n = len(t)
    if family is Family.BTBS:
        lim = [(0.0, q.truncation)] * n
        dens = lambda z: 2.0 * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)  # noqa: E731
    else:
        lim = [(-q.truncation, q.truncation)] * n
        dens = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)  # noqa: E731
    opts = {"epsabs": q.refinement_tol * 1e-2, "epsrel": 1e-10, "limit": 200}

    def part(fn):
        def g(*zs):
            return fn(zs) * math.prod(dens(z) for z in zs)

        return integrate.nquad(g, lim, opts=opts)

    re, e_re = part(lambda zs: np.real(integrand(zs)))
    if family is Family.BTBS:
        return re, e_re
    im, e_im = part(lambda zs: np.imag(integrand(zs)))
    return complex(re, im), math.hypot(e_re, e_im)


def _run(cfg, f, p, j, t, x, q, which, family):
    n = cfg.n
    q = q or QuadratureSpec()
    if q.scheme == "adaptive":
        k = laplacian_power(which)
        rt = np.sqrt(t)

        def integrand(zs):
            s = [r * z for r, z in zip(rt, zs)]
            V = math.prod(s)
            wt = _moment_weight(s, p, j)
            if family is Family.BTBS:
                return wt * float(_smooth_array(f, V, x, k))
            return wt * complex(np.exp(1j * sum(s)) * _smooth_array(f, 1j * V, x, k))

        value, err = _adaptive(integrand, t, family, q)
        return QuadResult(value, float(err), 0)
    order = q.order or auto_order(n, t, f.frequency)
    half = max(2, math.ceil(order / 2))
    if family is Family.BTBS:
        fine = _btbs_sum(f, p, j, t, x, order, q.truncation, which)
        coarse = _btbs_sum(f, p, j, t, x, half, q.truncation, which)
    else:
        fine = _ks_sum(f, p, j, t, x, order, which)
        coarse = _ks_sum(f, p, j, t, x, half, which)
    err = abs(fine - coarse)
    if err > q.refinement_tol * max(1.0, abs(fine)):
        raise AccuracyError(
            f"quadrature did not settle: order {half} -> {order} changed the value by {err:.3g}",
            coarse,
            fine,
        )
    return QuadResult(fine, err, order)


def _prepare(cfg, f, p, j, t, x):
    _check_moment(cfg, p, j)
    t = as_multitime(t, cfg.n)
    if not t.is_interior:
        raise DomainError("moments are integrated at interior times; use the boundary values")
    x = as_point(x, cfg.d)
    if f.dim is not None and f.dim != cfg.d:
        raise DomainError(f"initial data lives in R^{f.dim}, config says d={cfg.d}")
    return t, x


def quad_btbs_moment(
    cfg: FieldConfig,
    f: InitialData,
    p: int = 0,
    j: int | None = None,
    t=None,
    x=None,
    q: QuadratureSpec | None = None,
    which="f",
) -> QuadResult:
    """``E[(prod_{i != j} |B_i(t_i)|)^p Delta^k f(BTBS)]`` by tensor quadrature.

    ``p = 0`` gives ``u``, ``p = 2`` gives ``U^(j)``.  ``which`` selects
    ``Delta^k f`` in place of ``f`` (the Laplacian commutes with the integral).
    """
    t, x = _prepare(cfg, f, p, j, t, x)
    return _run(cfg, f, p, j, t.t, x, q, laplacian_power(which), Family.BTBS)


def quad_ks_moment(
    cfg: FieldConfig,
    f: InitialData,
    p: int = 0,
    j: int | None = None,
    t=None,
    x=None,
    q: QuadratureSpec | None = None,
    which="f",
) -> QuadResult:
    """KS moment ``int_{R^n} (prod_{i != j} s_i)^p v(s, x) prod K^BM(t_i, s_i) ds``.

    ``v(s, x) = exp(i sum s) E_Schr f`` is the Schrodinger-smoothed data with
    complex variance ``i prod s``.  ``p = 1`` gives ``U1^(j)``, ``p = 2``
    gives ``U2^(j)``.
    """
    t, x = _prepare(cfg, f, p, j, t, x)
    return _run(cfg, f, p, j, t.t, x, q, laplacian_power(which), Family.KS)


def btbs_boundary_values(cfg: FieldConfig, f: InitialData, p: int, j: int | None, t, x, which="f"):
    """Boundary data of ``u`` (``p = 0``) and ``U^(j)`` (``p = 2``).

    ``u = f`` on the whole boundary.  ``U^(j)`` vanishes when some ``t_i`` with
    ``i != j`` is zero, and equals ``prod_{i != j} t_i f`` when only ``t_j`` is.
    """
    if p not in (0, 2):
        raise ValueError("BTBS boundary data exists for p = 0 and p = 2")
    _check_moment(cfg, p, j)
    t = as_multitime(t, cfg.n)
    if not t.is_boundary:
        raise DomainError(f"{t.t} is not on the boundary of the orthant")
    x = as_point(x, cfg.d)
    fx = f.evaluate(x, which)
    if p == 0:
        return fx
    others = t.zero_axes - {j}
    if others:
        return 0.0 * fx
    return t.product_except(j) * fx


def ks_boundary_values(
    cfg: FieldConfig, f: InitialData, component: str, j: int | None, I, t, x, which="f"
):
    """Values of ``u``, ``U1^(j)`` or ``U2^(j)`` on the face where the axes in ``I`` vanish.

    ``t`` supplies the remaining components; its entries on ``I`` are ignored.
    ``U1``/``U2`` data are known for ``I = {j}`` and for ``I`` inside
    ``N \\ {j}`` (where they vanish).  Other faces raise :class:`DomainError`.
    """
    n = cfg.n
    I = frozenset(int(i) for i in I)
    if not I or not I <= set(range(1, n + 1)):
        raise DomainError(f"I must be a non-empty subset of 1..{n}, got {sorted(I)}")
    t = as_multitime(t, n)
    x = as_point(x, cfg.d)
    fx = f.evaluate(x, which)
    if component == "u":
        rest = sum(t[k - 1] for k in range(1, n + 1) if k not in I)
        return fx * math.exp(-0.5 * rest)
    if component not in ("U1", "U2"):
        raise ValueError(f"component must be 'u', 'U1' or 'U2', got {component!r}")
    _check_axis(j, n)
    if I == {j}:
        others = [t[k - 1] for k in range(1, n + 1) if k != j]
        if component == "U1":
            factor = math.prod(1j * tk for tk in others)
        else:
            factor = math.prod(tk - tk * tk for tk in others)
        return fx * factor * math.exp(-0.5 * sum(others))
    if j not in I:
        return 0.0 * fx
    raise DomainError(f"no boundary data for {component}^({j}) on the face I={sorted(I)}")


class MomentField:
    """A moment viewed as a field ``(t, x) -> value`` at a fixed rule.

    The order is frozen at construction so that finite differences of the
    field see a smooth function of ``(t, x)``.  Boundary times are allowed:
    the rescaled nodes collapse and the rule returns the limit value.
    """

    def __init__(self, cfg: FieldConfig, f: InitialData, family, p=0, j=None, order=64, truncation=9.5):
        _check_moment(cfg, p, j)
        self.cfg = cfg
        self.f = f
        self.family = Family(family)
        self.p = p
        self.j = j
        self.order = int(order)
        self.truncation = truncation

    def __call__(self, t, x, which="f"):
        t = as_multitime(t, self.cfg.n).t
        x = as_point(x, self.cfg.d)
        k = laplacian_power(which)
        if self.family is Family.BTBS:
            return _btbs_sum(self.f, self.p, self.j, t, x, self.order, self.truncation, k)
        return _ks_sum(self.f, self.p, self.j, t, x, self.order, k)

    def __repr__(self):
        return (
            f"MomentField(family={self.family.value}, p={self.p}, j={self.j}, "
            f"order={self.order}, n={self.cfg.n}, d={self.cfg.d})"
        )


def _field_order(cfg, f, t_ref, q):
    q = q or QuadratureSpec()
    if q.order is not None:
        return q.order, q
    t_ref = as_multitime(t_ref, cfg.n)
    # stencils reach slightly past t_ref
    return auto_order(cfg.n, np.asarray(t_ref.t) * 1.01, f.frequency), q


def btbs_fields(cfg: FieldConfig, f: InitialData, t_ref=None, q: QuadratureSpec | None = None) -> FieldSet:
    """``u`` and every ``U^(j)`` of the BTBS family as quadrature fields."""
    order, q = _field_order(cfg, f, t_ref, q)
    mk = lambda p, j: MomentField(cfg, f, Family.BTBS, p, j, order, q.truncation)  # noqa: E731
    return FieldSet(u=mk(0, None), U2={j: mk(2, j) for j in range(1, cfg.n + 1)})


def ks_fields(cfg: FieldConfig, f: InitialData, t_ref=None, q: QuadratureSpec | None = None) -> FieldSet:
    """``u``, ``U1^(j)`` and ``U2^(j)`` of the KS family as quadrature fields."""
    order, q = _field_order(cfg, f, t_ref, q)
    mk = lambda p, j: MomentField(cfg, f, Family.KS, p, j, order, q.truncation)  # noqa: E731
    return FieldSet(
        u=mk(0, None),
        U1={j: mk(1, j) for j in range(1, cfg.n + 1)},
        U2={j: mk(2, j) for j in range(1, cfg.n + 1)},
    )


def commutation_check(
    cfg: FieldConfig,
    f: InitialData,
    p: int,
    j: int | None,
    t,
    x,
    q: QuadratureSpec | None = None,
    h: float = 1e-2,
) -> ResidualReport:
    """Finite-difference bilaplacian of a moment against the moment of ``Delta^2 f``.

    Both sides use the same rule, so the residual isolates the interchange of
    the spatial derivative with the time integral.
    """
    family = Family(cfg.family)
    if family is Family.BS:
        raise ValueError("commutation is checked for the BTBS and KS moment integrals")
    t, x = _prepare(cfg, f, p, j, t, x)
    order, q = _field_order(cfg, f, t, q)
    fld = MomentField(cfg, f, family, p, j, order, q.truncation)
    stencil = StencilSpec(h_time=StencilSpec.for_time(t).h_time, h_space=h)
    lhs = fd_apply(fld, "bilaplacian", t, x, stencil)
    rhs = fld(t.t, x, which="bilap")
    return ResidualReport.from_sides(lhs, rhs, t, x, j, stencil, (f"order={order}",))
