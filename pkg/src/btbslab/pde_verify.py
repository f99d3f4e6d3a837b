"""Finite-difference operators and residuals for the PDE systems.

Field evaluators are plain callables ``field(t, x, which="f")`` where ``t`` is
a tuple of time parameters and ``x`` a point of R^d.  The optional ``which``
argument (``"f"``, ``"lap"``, ``"bilap"``) asks for an analytic spatial
derivative; it is only used by the ``spatial="analytic"`` routes.

Axis indices ``j`` are 1-based throughout, as in the equations.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import DomainError, FootprintError
from .model import (
    FieldConfig,
    InitialData,
    ResidualReport,
    StencilSpec,
    as_multitime,
    as_point,
    heat_expectation,
)

__all__ = [
    "FieldSet",
    "fd_apply",
    "enumerate_Sn",
    "btbs_coefficient",
    "cross_term_T",
    "btbs_nonlinear_rhs",
    "residual_btbs_system",
    "residual_btbs_nonlinear",
    "residual_bs_system",
    "residual_bs_nonlinear",
    "mixed_derivative_operator",
    "Ln_operator",
    "residual_bs_2n",
    "residual_ks_system",
]

Field = Callable[..., complex]

_SPATIAL = ("analytic", "fd")


@dataclass
class FieldSet:
    """The solution family: ``u`` plus the weighted companions per axis.

    ``U2[j]`` carries the squared weight prod_{i != j} s_i^2, ``U1[j]`` the
    first power (only used by the KS family).
    """

    u: Field
    U1: dict = field(default_factory=dict)
    U2: dict = field(default_factory=dict)


# --- stencils ---------------------------------------------------------------


@lru_cache(maxsize=None)
def _laplacian_offsets(d):
    w = defaultdict(float)
    w[(0,) * d] = -2.0 * d
    for k in range(d):
        for sgn in (1, -1):
            o = [0] * d
            o[k] = sgn
            w[tuple(o)] += 1.0
    return tuple(w.items())


@lru_cache(maxsize=None)
def _bilaplacian_offsets(d):
    lap = _laplacian_offsets(d)
    w = defaultdict(float)
    for o1, c1 in lap:
        for o2, c2 in lap:
            w[tuple(a + b for a, b in zip(o1, o2))] += c1 * c2
    return tuple((o, c) for o, c in w.items() if c != 0.0)


def _spatial_stencil(field, t, x, offsets, h, power):
    acc = 0.0
    for o, c in offsets:
        acc = acc + c * field(t, x + h * np.asarray(o, dtype=float))
    return acc / h**power


def _one_sided(t, j, h):
    return t[j - 1] < h


def _time_derivative(field, t, x, j, h):
    t = list(t)
    tj = t[j - 1]

    def at(v):
        tt = list(t)
        tt[j - 1] = v
        return field(tuple(tt), x)

    if tj >= h:
        return (at(tj + h) - at(tj - h)) / (2 * h)
    # second-order forward difference, only allowed next to the boundary
    return (-3 * at(tj) + 4 * at(tj + h) - at(tj + 2 * h)) / (2 * h)


def fd_apply(field: Field, kind: str, t, x, stencil: StencilSpec, j: int | None = None):
    """Apply a centered finite-difference operator to ``field`` at ``(t, x)``.

    ``kind`` is one of ``"dt_j"`` (needs ``j``), ``"laplacian"``,
    ``"bilaplacian"`` or ``"mixed_dt_all"`` (the mixed derivative
    d^n / dt_1 ... dt_n).  Within ``h_time`` of the temporal boundary ``dt_j``
    switches to a second-order forward difference; ``mixed_dt_all`` has no such
    fallback and raises :class:`FootprintError` instead.
    """
    t = as_multitime(t)
    tt = t.t
    x = as_point(x)
    if kind == "dt_j":
        if j is None or not 1 <= j <= t.n:
            raise ValueError(f"dt_j needs an axis in 1..{t.n}, got {j}")
        return _time_derivative(field, tt, x, j, stencil.h_time)
    if kind == "laplacian":
        return _spatial_stencil(field, tt, x, _laplacian_offsets(x.shape[-1]), stencil.h_space, 2)
    if kind == "bilaplacian":
        return _spatial_stencil(field, tt, x, _bilaplacian_offsets(x.shape[-1]), stencil.h_space, 4)
    if kind == "mixed_dt_all":
        h = stencil.h_time
        if min(tt) < h:
            raise FootprintError(f"mixed stencil with h={h} leaves the orthant at t={tt}")
        acc = 0.0
        for signs in itertools.product((1, -1), repeat=t.n):
            acc = acc + math.prod(signs) * field(tuple(v + s * h for v, s in zip(tt, signs)), x)
        return acc / (2 * h) ** t.n
    raise ValueError(f"unknown stencil kind {kind!r}")


def _notes(t, j, stencil, extra=()):
    notes = list(extra)
    if j is not None and _one_sided(t, j, stencil.h_time):
        notes.append(f"forward difference in t_{j} (within h of the boundary)")
    return tuple(notes)


# --- the BTBS system ---------------------------------------------------------


def enumerate_Sn(n: int) -> list[tuple[int, ...]]:
    """Tuples over {1, 2} of length n with component sum in [n+1, 2n-1].

    Defined for n >= 2; the set is empty for n = 1 and callers must use the
    empty set themselves.
    """
    if n < 2:
        raise ValueError("S_n is defined for n >= 2")
    return [k for k in itertools.product((1, 2), repeat=n) if n + 1 <= sum(k) <= 2 * n - 1]


def btbs_coefficient(t, j: int) -> float:
    """``sqrt(prod_{i != j} t_i / (2^(4-n) pi^n t_j))``, the memory-term coefficient."""
    t = as_multitime(t)
    if t[j - 1] == 0.0:
        raise DomainError(f"the coefficient is singular at t_{j} = 0")
    n = t.n
    return math.sqrt(t.product_except(j) / (2.0 ** (4 - n) * math.pi**n * t[j - 1]))


def _check_spatial(spatial):
    if spatial not in _SPATIAL:
        raise ValueError(f"spatial route must be one of {_SPATIAL}, got {spatial!r}")


def _bilap(field, t, x, stencil, spatial):
    if spatial == "analytic":
        return field(t.t, x, which="bilap")
    return fd_apply(field, "bilaplacian", t, x, stencil)


def _lap(field, t, x, stencil, spatial):
    if spatial == "analytic":
        return field(t.t, x, which="lap")
    return fd_apply(field, "laplacian", t, x, stencil)


def cross_term_T(
    cfg: FieldConfig,
    f: InitialData,
    k: int,
    j: int,
    t,
    x,
    scriptU_field: Field | None = None,
    stencil: StencilSpec | None = None,
    spatial: str = "fd",
):
    """``T_{1,j}`` (memory term with the analytic ``Delta f``) or ``T_{2,j} = Delta^2 U^(j) / 8``."""
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    if k == 1:
        return btbs_coefficient(t, j) * float(f.evaluate(x, "lap"))
    if k == 2:
        if scriptU_field is None:
            raise ValueError("T_{2,j} needs the weighted field U^(j)")
        _check_spatial(spatial)
        stencil = stencil or StencilSpec.for_time(t)
        return _bilap(scriptU_field, t, x, stencil, spatial) / 8.0
    raise ValueError(f"k must be 1 or 2, got {k}")


def btbs_nonlinear_rhs(t, lap_f: float, bilap_U) -> float:
    """Right side of the nonlinear fourth-order equation from its ingredients.

    ``bilap_U[j-1]`` is ``Delta^2 U^(j)`` at the probe point.
    """
    t = as_multitime(t)
    n = t.n
    bilap_U = list(bilap_U)
    if len(bilap_U) != n:
        raise ValueError(f"need {n} values of Delta^2 U^(j), got {len(bilap_U)}")
    lead = math.sqrt(t.product ** (n - 2) / (2.0 ** (4 * n - n * n) * math.pi ** (n * n))) * lap_f**n
    quartic = math.prod(bilap_U) / 8.0**n
    if n == 1:
        return lead + quartic
    T = {
        1: [btbs_coefficient(t, j) * lap_f for j in range(1, n + 1)],
        2: [b / 8.0 for b in bilap_U],
    }
    cross = sum(math.prod(T[kj][j] for j, kj in enumerate(ks)) for ks in enumerate_Sn(n))
    return lead + quartic + cross


def residual_btbs_system(
    cfg: FieldConfig,
    f: InitialData,
    j: int,
    t,
    x,
    fields: FieldSet,
    stencil: StencilSpec | None = None,
    spatial: str = "analytic",
) -> ResidualReport:
    """``du/dt_j`` against ``T_{1,j} + Delta^2 U^(j) / 8``."""
    _check_spatial(spatial)
    t = as_multitime(t, cfg.n)
    if not t.is_interior:
        raise DomainError("the linear system is checked at interior times only")
    x = as_point(x, cfg.d)
    stencil = stencil or StencilSpec.for_time(t)
    lhs = fd_apply(fields.u, "dt_j", t, x, stencil, j=j)
    rhs = cross_term_T(cfg, f, 1, j, t, x) + cross_term_T(
        cfg, f, 2, j, t, x, fields.U2[j], stencil, spatial
    )
    return ResidualReport.from_sides(
        lhs, rhs, t, x, j, stencil, _notes(t.t, j, stencil, [f"spatial={spatial}"])
    )


def residual_btbs_nonlinear(
    cfg: FieldConfig,
    f: InitialData,
    t,
    x,
    fields: FieldSet,
    stencil: StencilSpec | None = None,
    spatial: str = "analytic",
) -> ResidualReport:
    """Product of the n time partials of ``u`` against the assembled nonlinear right side."""
    _check_spatial(spatial)
    t = as_multitime(t, cfg.n)
    if not t.is_interior:
        raise DomainError("the nonlinear equation is checked at interior times only")
    x = as_point(x, cfg.d)
    stencil = stencil or StencilSpec.for_time(t)
    n = cfg.n
    lhs = math.prod(fd_apply(fields.u, "dt_j", t, x, stencil, j=j) for j in range(1, n + 1))
    bilap_U = [_bilap(fields.U2[j], t, x, stencil, spatial) for j in range(1, n + 1)]
    rhs = btbs_nonlinear_rhs(t, float(f.evaluate(x, "lap")), bilap_U)
    return ResidualReport.from_sides(lhs, rhs, t, x, None, stencil, (f"spatial={spatial}",))


# --- Brownian sheet systems ----------------------------------------------------


def _heat_field(f):
    def u(t, x, which="f"):
        return heat_expectation(f, t, x, which)

    return u


def _complex_step_dt(f, t, x, j, h=1e-30):
    # exact to rounding for real-analytic closed forms
    tc = np.array(t.t, dtype=complex)
    tc[j - 1] += 1j * h
    return float(np.imag(f.smoothed(np.prod(tc), x)) / h)


def _check_route(route):
    if route not in _SPATIAL:
        raise ValueError(f"route must be one of {_SPATIAL}, got {route!r}")


def _bs_partial_and_lap(f, j, t, x, stencil, route, u_field):
    if route == "analytic":
        if u_field is not None:
            raise ValueError("the analytic route differentiates the closed form; drop u_field")
        return _complex_step_dt(f, t, x, j), float(heat_expectation(f, t, x, "lap"))
    u = u_field or _heat_field(f)
    return fd_apply(u, "dt_j", t, x, stencil, j=j), fd_apply(u, "laplacian", t, x, stencil)


def residual_bs_system(
    cfg: FieldConfig,
    f: InitialData,
    j: int,
    t,
    x,
    stencil: StencilSpec | None = None,
    route: str = "analytic",
    u_field: Field | None = None,
) -> ResidualReport:
    """``du/dt_j = (1/2) prod_{i != j} t_i Delta u`` for the Brownian-sheet expectation.

    ``route="analytic"`` takes the time derivative by complex step and the
    Laplacian from the closed form; ``route="fd"`` uses finite differences of
    ``u_field`` (default: the closed-form expectation).
    """
    _check_route(route)
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    stencil = stencil or StencilSpec.for_time(t)
    dt, lap = _bs_partial_and_lap(f, j, t, x, stencil, route, u_field)
    rhs = 0.5 * t.product_except(j) * lap
    return ResidualReport.from_sides(dt, rhs, t, x, j, stencil, (f"route={route}",))


def residual_bs_nonlinear(
    cfg: FieldConfig,
    f: InitialData,
    t,
    x,
    stencil: StencilSpec | None = None,
    route: str = "analytic",
    u_field: Field | None = None,
) -> ResidualReport:
    """``prod_j du/dt_j = ((t_1...t_n)^(n-1) / 2^n) (Delta u)^n``."""
    _check_route(route)
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    stencil = stencil or StencilSpec.for_time(t)
    n = cfg.n
    partials = []
    lap = None
    for j in range(1, n + 1):
        dt, lap = _bs_partial_and_lap(f, j, t, x, stencil, route, u_field)
        partials.append(dt)
    lhs = math.prod(partials)
    rhs = t.product ** (n - 1) / 2.0**n * lap**n
    return ResidualReport.from_sides(lhs, rhs, t, x, None, stencil, (f"route={route}",))


def _time_symbols(n):
    import sympy  # deferred: only the operator family needs it

    return sympy.symbols(f"t1:{n + 1}", positive=True)


def _reference_rows(n):
    import sympy

    t = _time_symbols(max(n, 3))
    R = sympy.Rational
    t1, t2, t3 = t[:3]
    rows = {
        1: {1: R(1, 2)},
        2: {1: R(1, 2), 2: t1 * t2 / 4},
        3: {1: R(1, 2), 2: R(3, 4) * t1 * t2 * t3, 3: (t1 * t2 * t3) ** 2 / 8},
        # tabulated with t_1 t_2 t_3 only, kept verbatim
        4: {
            1: R(1, 2),
            2: R(8, 4) * t1 * t2 * t3,
            3: R(5, 8) * (t1 * t2 * t3) ** 2,
            4: (t1 * t2 * t3) ** 3 / 16,
        },
    }
    return rows[n]


def mixed_derivative_operator(n: int, source: str = "recursion") -> dict:
    """Coefficients ``{k: c_k(t)}`` with ``d^n u / dt_1...dt_n = sum_k c_k(t) Delta^k u``.

    ``source="recursion"`` differentiates term by term, using
    ``d(Delta^k u)/dt_m = (1/2) prod_{i != m} t_i Delta^(k+1) u``.
    ``source="reference"`` returns the tabulated reference rows for ``n <= 4`` verbatim,
    including the ``n = 4`` row whose monomials lack ``t_4``.
    Coefficients are sympy expressions in the symbols ``t1..tn``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if source == "reference":
        if n > 4:
            raise ValueError("the reference table stops at n = 4")
        return _reference_rows(n)
    if source != "recursion":
        raise ValueError(f"unknown source {source!r}")
    import sympy

    t = _time_symbols(n)
    P = sympy.Mul(*t)
    coeffs = {0: sympy.Integer(1)}
    for m in range(n):
        rate = sympy.Rational(1, 2) * P / t[m]
        nxt = defaultdict(lambda: sympy.Integer(0))
        for k, c in coeffs.items():
            nxt[k] += sympy.diff(c, t[m])
            nxt[k + 1] += c * rate
        coeffs = {k: sympy.expand(c) for k, c in nxt.items() if sympy.expand(c) != 0}
    return dict(sorted(coeffs.items()))


Ln_operator = mixed_derivative_operator


def _evaluate_coefficients(coeffs, t):
    import sympy

    syms = _time_symbols(max(t.n, 3))
    subs = dict(zip(syms, t.t))
    return {k: float(sympy.sympify(c).subs(subs)) for k, c in coeffs.items()}


def residual_bs_2n(
    cfg: FieldConfig,
    f: InitialData,
    t,
    x,
    stencil: StencilSpec | None = None,
    source: str = "recursion",
    u_field: Field | None = None,
) -> ResidualReport:
    """Mixed time derivative (finite differences) against ``sum_k c_k(t) Delta^k u`` (closed form)."""
    t = as_multitime(t, cfg.n)
    x = as_point(x, cfg.d)
    stencil = stencil or StencilSpec.for_time(t)
    u = u_field or _heat_field(f)
    lhs = fd_apply(u, "mixed_dt_all", t, x, stencil)
    coeffs = _evaluate_coefficients(mixed_derivative_operator(cfg.n, source), t)
    rhs = sum(c * float(heat_expectation(f, t, x, k)) for k, c in coeffs.items())
    return ResidualReport.from_sides(lhs, rhs, t, x, None, stencil, (f"coefficients={source}",))


# --- the Kuramoto-Sivashinsky-variant system ---------------------------------------


def residual_ks_system(
    cfg: FieldConfig,
    f: InitialData,
    j: int,
    t,
    x,
    fields: FieldSet,
    stencil: StencilSpec | None = None,
    spatial: str = "analytic",
) -> ResidualReport:
    """``du/dt_j`` against ``-Delta^2 U2^(j)/8 - Delta U1^(j)/2 - u/2`` (complex valued)."""
    _check_spatial(spatial)
    t = as_multitime(t, cfg.n)
    if not t.is_interior:
        raise DomainError("the KS system is checked at interior times only")
    x = as_point(x, cfg.d)
    stencil = stencil or StencilSpec.for_time(t)
    lhs = fd_apply(fields.u, "dt_j", t, x, stencil, j=j)
    rhs = (
        -_bilap(fields.U2[j], t, x, stencil, spatial) / 8.0
        - _lap(fields.U1[j], t, x, stencil, spatial) / 2.0
        - fields.u(t.t, x) / 2.0
    )
    return ResidualReport.from_sides(
        lhs, rhs, t, x, j, stencil, _notes(t.t, j, stencil, [f"spatial={spatial}"])
    )
