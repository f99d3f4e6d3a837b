"""Domain types, built-in initial data, and closed-form Gaussian expectations.

Every built-in initial function ``f`` knows how to evaluate

    x -> E[Delta^k f(x + sqrt(V) Z)],    Z ~ N(0, I_d),

in closed form, for any power ``k`` of the Laplacian and any variance ``V``.
``V`` may be complex: with ``V = i * S`` the same formula is the Schrodinger
propagator applied to ``f``, continued along the principal branch.  This one
routine therefore serves as the Brownian-sheet expectation, the complex
propagator integral, and their spatial derivatives.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import binom

from .errors import DimensionError, DomainError, SingularPropagatorError

__all__ = [
    "Family",
    "FieldConfig",
    "MultiTime",
    "as_multitime",
    "as_point",
    "InitialData",
    "CosineProduct",
    "GaussianBump",
    "Constant",
    "QuadratureFallbackWarning",
    "eval_initial",
    "heat_expectation",
    "schrodinger_value",
    "gaussian_smoothing_quadrature",
    "StencilSpec",
    "ResidualReport",
]

_WHICH = {"f": 0, "lap": 1, "bilap": 2}


def laplacian_power(which) -> int:
    """Map ``'f' | 'lap' | 'bilap'`` (or a nonnegative int) to a power of Delta."""
    if isinstance(which, (int, np.integer)) and not isinstance(which, bool):
        if which < 0:
            raise ValueError(f"Laplacian power must be >= 0, got {which}")
        return int(which)
    try:
        return _WHICH[which]
    except KeyError:
        raise ValueError(f"unknown derivative selector {which!r}") from None


class Family(str, enum.Enum):
    BTBS = "btbs"
    KS = "ks"
    BS = "bs"


@dataclass(frozen=True)
class FieldConfig:
    """Number of time parameters ``n``, space dimension ``d`` and solution family."""

    n: int
    d: int = 1
    family: Family = Family.BTBS

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "family", Family(self.family))


@dataclass(frozen=True)
class MultiTime:
    """A point of the closed nonnegative orthant in R^n."""

    t: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in np.atleast_1d(np.asarray(self.t, dtype=float)))
        if not t:
            raise DimensionError("a MultiTime needs at least one component")
        for v in t:
            if not math.isfinite(v) or v < 0.0:
                raise DomainError(f"time components must be finite and >= 0, got {t}")
        object.__setattr__(self, "t", t)

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        return iter(self.t)

    def __getitem__(self, i):
        return self.t[i]

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def product(self) -> float:
        return math.prod(self.t)

    def product_except(self, j: int) -> float:
        """Product of all components but the ``j``-th (1-based)."""
        _check_axis(j, self.n)
        return math.prod(v for i, v in enumerate(self.t, start=1) if i != j)

    @property
    def is_interior(self) -> bool:
        return all(v > 0.0 for v in self.t)

    @property
    def is_boundary(self) -> bool:
        return any(v == 0.0 for v in self.t)

    @property
    def zero_axes(self) -> frozenset:
        return frozenset(i for i, v in enumerate(self.t, start=1) if v == 0.0)

    def with_component(self, j: int, value: float) -> "MultiTime":
        _check_axis(j, self.n)
        t = list(self.t)
        t[j - 1] = value
        return MultiTime(tuple(t))

    def as_array(self) -> np.ndarray:
        return np.array(self.t)


def _check_axis(j, n):
    if j is None or int(j) != j or not 1 <= j <= n:
        raise ValueError(f"axis index must be in 1..{n}, got {j}")


def as_multitime(t, n: int | None = None) -> MultiTime:
    mt = t if isinstance(t, MultiTime) else MultiTime(t)
    if n is not None and mt.n != n:
        raise DimensionError(f"expected {n} time parameters, got {mt.n}")
    return mt


def as_point(x, d: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a float array whose last axis has length ``d``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if d is not None and x.shape[-1] != d:
        raise DimensionError(f"expected points of dimension {d}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise DomainError("space points must be finite")
    return x


class QuadratureFallbackWarning(UserWarning):
    """A Gaussian expectation was computed by quadrature instead of a closed form."""


class InitialData:
    """Base class for initial functions ``f : R^d -> R``.

    Subclasses with closed forms override :meth:`smoothed`.  A subclass that
    only implements :meth:`evaluate` still works everywhere; Gaussian
    expectations then fall back to tensor Gauss-Hermite quadrature.
    """

    dim: int | None = None
    #: a scale for how fast the Gaussian smoothing of f decays, used to pick
    #: quadrature orders (|theta|^2 for cosines, 1/width^2 for bumps)
    frequency: float = 1.0

    def evaluate(self, x, which="f"):
        return self.smoothed(0.0, x, which)

    def smoothed(self, V, x, which="f"):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError


@dataclass(frozen=True)
class CosineProduct(InitialData):
    """``f(x) = prod_k cos(theta_k x_k)``; an eigenfunction of Delta with eigenvalue -|theta|^2."""

    theta: tuple

    def __post_init__(self):
        theta = tuple(float(v) for v in np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if not theta or not all(math.isfinite(v) for v in theta):
            raise ValueError(f"theta must be a nonempty finite vector, got {self.theta}")
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self):
        return len(self.theta)

    @property
    def frequency(self):
        return float(np.dot(self.theta, self.theta))

    def pattern(self, x):
        x = as_point(x, self.dim)
        return np.prod(np.cos(np.asarray(self.theta) * x), axis=-1)

    def smoothed(self, V, x, which="f"):
        k = laplacian_power(which)
        lam = self.frequency
        return self.pattern(x) * np.exp(-0.5 * lam * np.asarray(V)) * (-lam) ** k

    def gradient(self, x):
        x = as_point(x, self.dim)
        th = np.asarray(self.theta)
        c = np.cos(th * x)
        out = np.empty(c.shape)
        for k in range(self.dim):
            others = np.prod(np.delete(c, k, axis=-1), axis=-1)
            out[..., k] = -th[k] * np.sin(th[k] * x[..., k]) * others
        return out


def _genlaguerre(k, alpha, y):
    # explicit sum; valid for complex y, which scipy's evaluator does not accept
    out = np.zeros_like(y)
    for m in range(k + 1):
        out = out + (-1) ** m * binom(k + alpha, k - m) * y**m / math.factorial(m)
    return out


@dataclass(frozen=True)
class GaussianBump(InitialData):
    """``f(x) = exp(-|x - center|^2 / (2 width^2))``."""

    center: tuple
    width: float = 1.0

    def __post_init__(self):
        center = tuple(float(v) for v in np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not center:
            raise ValueError("center must be nonempty")
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "width", float(self.width))

    @property
    def dim(self):
        return len(self.center)

    @property
    def frequency(self):
        return 1.0 / self.width**2

    def smoothed(self, V, x, which="f"):
        # Delta^k exp(-a r^2/2) = (-2a)^k k! L_k^(d/2-1)(a r^2/2) exp(-a r^2/2)
        k = laplacian_power(which)
        x = as_point(x, self.dim)
        d = self.dim
        var = self.width**2
        V = np.asarray(V)
        var_eff = var + V
        a = 1.0 / var_eff
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        amp = np.sqrt(var / var_eff) ** d
        g = amp * np.exp(-0.5 * a * r2)
        if k == 0:
            return g
        y = 0.5 * a * r2
        return (-2.0 * a) ** k * math.factorial(k) * _genlaguerre(k, d / 2 - 1, y) * g

    def gradient(self, x):
        x = as_point(x, self.dim)
        diff = x - np.asarray(self.center)
        g = self.smoothed(0.0, x)
        return -diff / self.width**2 * g[..., None]


@dataclass(frozen=True)
class Constant(InitialData):
    """``f(x) = c`` in any dimension."""

    c: float = 1.0
    frequency = 0.0

    def __post_init__(self):
        object.__setattr__(self, "c", float(self.c))

    def smoothed(self, V, x, which="f"):
        k = laplacian_power(which)
        x = as_point(x)
        shape = np.broadcast_shapes(x.shape[:-1], np.shape(V))
        value = self.c if k == 0 else 0.0
        dtype = np.result_type(np.asarray(V).dtype, float)
        return np.full(shape, value, dtype=dtype)[()]

    def gradient(self, x):
        return np.zeros_like(as_point(x))


def eval_initial(f: InitialData, which, x):
    """Analytic ``f``, ``Delta f`` or ``Delta^2 f`` at ``x``."""
    x = as_point(x, f.dim)
    return f.evaluate(x, which)


def gaussian_smoothing_quadrature(f: InitialData, V: float, x, which="f", order: int = 40):
    """``E[Delta^k f(x + sqrt(V) Z)]`` by tensor Gauss-Hermite quadrature in d dimensions.

    Only real ``V >= 0`` is supported.  The d-dimensional tensor grid has
    ``order**d`` nodes, so keep ``d`` small.
    """
    V = float(V)
    if V < 0:
        raise DomainError("variance must be nonnegative")
    x = as_point(x, f.dim)
    d = x.shape[-1]
    z, w = hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([z] * d), indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=-1)
    W = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w] * d), indexing="ij")]), axis=0)
    pts = x[..., None, :] + math.sqrt(V) * Z
    return np.sum(W * f.evaluate(pts, which), axis=-1)


def _smoothed(f: InitialData, V, x, which):
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
        return gaussian_smoothing_quadrature(f, V, x, which)


def heat_expectation(f: InitialData, s, x, which="f"):
    """``E[Delta^k f(W^x(s))]`` for a Brownian sheet started at ``x``.

    The sheet value at ``s`` is Gaussian with per-coordinate variance
    ``prod(s)``, so this is a Gaussian smoothing of ``f``.
    """
    s = as_multitime(s)
    x = as_point(x, f.dim)
    return _smoothed(f, s.product, x, which)


def schrodinger_value(f: InitialData, s, x, which="f"):
    """``exp(i sum s) * integral f(y) p_{is}(x, y) dy`` with the principal-branch propagator.

    ``s`` may have any signs, but its product must be nonzero.  ``s`` may also
    be an array of shape ``(..., n)``.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        s = s.reshape(1)
    S = np.prod(s, axis=-1)
    if np.any(S == 0):
        raise SingularPropagatorError("the propagator is singular when prod(s) = 0")
    x = as_point(x, f.dim)
    return np.exp(1j * np.sum(s, axis=-1)) * _smoothed(f, 1j * S, x, which)


@dataclass(frozen=True)
class StencilSpec:
    """Centered second-order finite-difference steps."""

    h_time: float = 1e-3
    h_space: float = 1e-2
    order: int = 2

    def __post_init__(self):
        if not (self.h_time > 0 and self.h_space > 0):
            raise ValueError("stencil steps must be positive")
        if self.order != 2:
            raise ValueError("only second-order centered stencils are supported")

    @classmethod
    def for_time(cls, t, h_space: float = 1e-2) -> "StencilSpec":
        """The default stencil: ``h_time = 1e-3 * min_j t_j``."""
        t = as_multitime(t)
        if not t.is_interior:
            raise DomainError("default stencil needs an interior time")
        return cls(h_time=1e-3 * min(t.t), h_space=h_space)


Scalar = Union[float, complex]


@dataclass(frozen=True)
class ResidualReport:
    """One PDE checked at one ``(t, x, j)``: both sides and their mismatch."""

    lhs: Scalar
    rhs: Scalar
    abs_residual: float
    rel_residual: float
    t: tuple
    x: tuple
    j: int | None = None
    stencil: StencilSpec | None = None
    notes: tuple = field(default_factory=tuple)

    @classmethod
    def from_sides(cls, lhs, rhs, t, x, j=None, stencil=None, notes=()):
        lhs = complex(lhs) if np.iscomplexobj(lhs) else float(lhs)
        rhs = complex(rhs) if np.iscomplexobj(rhs) else float(rhs)
        err = abs(lhs - rhs)
        rel = err / max(1.0, abs(lhs), abs(rhs))
        t = tuple(float(v) for v in t)
        x = tuple(float(v) for v in np.atleast_1d(x))
        return cls(lhs, rhs, float(err), float(rel), t, x, j, stencil, tuple(notes))

    def ok(self, tol: float) -> bool:
        return self.rel_residual <= tol
