"""Closed-form solutions, sharp constants and explicit coupling families.

All constructions place the concentration point at the pole theta = 0 of
the sphere model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .fields import Field, PMap, critical_exponent
from .geometry import ManifoldModel, ModelKind, build_model, model_apply, sphere_volume

POSITIVITY_FLOOR = 1e-300
EDGE_THRESHOLD = 1e-12


def yamabe_constant(n: int) -> float:
    """n(n-2)/4, the potential of the Yamabe equation on the unit sphere."""
    return n * (n - 2) / 4.0


@dataclass(frozen=True, eq=False)
class Coupling:
    """Symmetric p x p coupling, either constant (p, p) or per node (p, p, N)."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim not in (2, 3) or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ShapeError(f"coupling entries must have shape (p, p) or (p, p, N), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("coupling entries must be finite")
        if not np.array_equal(a, np.swapaxes(a, 0, 1)):
            raise DomainError("coupling must be symmetric")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def constant(cls, matrix) -> "Coupling":
        return cls(np.asarray(matrix, dtype=float))

    @classmethod
    def scalar_identity(cls, s: float, p: int) -> "Coupling":
        return cls(float(s) * np.eye(p))

    @classmethod
    def from_functions(cls, entries) -> "Coupling":
        """Build from a nested list of arrays or scalars, symmetrizing nothing."""
        arrs = [[np.asarray(e, dtype=float) for e in row] for row in entries]
        N = max((e.size for row in arrs for e in row if e.ndim > 0), default=None)
        if N is None:
            return cls(np.array([[float(e) for e in row] for row in arrs]))
        return cls(np.array([[np.broadcast_to(e, (N,)) for e in row] for row in arrs]))

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def is_constant(self) -> bool:
        return self.entries.ndim == 2

    def at_nodes(self, N: int) -> np.ndarray:
        """Entries broadcast to shape (p, p, N)."""
        if self.is_constant:
            return np.broadcast_to(self.entries[:, :, None], (self.p, self.p, N))
        if self.entries.shape[2] != N:
            raise ShapeError(f"coupling has {self.entries.shape[2]} nodes, expected {N}")
        return self.entries

    def apply(self, values: np.ndarray) -> np.ndarray:
        """(A U)_i = sum_j A_ij u_j for values of shape (p, N)."""
        values = np.atleast_2d(values)
        if values.shape[0] != self.p:
            raise ShapeError(f"coupling is {self.p}x{self.p} but the map has {values.shape[0]} components")
        if self.is_constant:
            return self.entries @ values
        return np.einsum("ijx,jx->ix", self.at_nodes(values.shape[1]), values)

    def sup_abs(self) -> np.ndarray:
        """sup over nodes of |A_ij|, shape (p, p)."""
        a = np.abs(self.entries)
        return a if self.is_constant else a.max(axis=2)

    def permuted(self, perm) -> "Coupling":
        perm = list(perm)
        return Coupling(self.entries[perm][:, perm])

    def __neg__(self):
        return Coupling(-self.entries)


@dataclass(frozen=True)
class BubbleParams:
    center: float
    mu: float
    n: int

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"bubble weight must be positive, got {self.mu!r}")
        if self.n < 3:
            raise DomainError("bubbles need n >= 3")


# -- constants and bubbles ---------------------------------------------------

def sharp_constant(n: int) -> float:
    """Best constant K_n of the Euclidean Sobolev inequality."""
    if int(n) != n or n < 3:
        raise DomainError(f"sharp_constant needs an integer n >= 3, got {n!r}")
    return math.sqrt(4.0 / (n * (n - 2) * sphere_volume(n) ** (2.0 / n)))


def euclid_bubble(x, lam: float = 1.0, x_c=None, n: int | None = None):
    """(lam / (lam^2 + |x - x_c|^2 / (n(n-2))))^{(n-2)/2}.

    ``x`` is an array whose last axis holds the n coordinates; ``x_c`` defaults
    to the origin. ``n`` defaults to the length of that axis.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    x = np.asarray(x, dtype=float)
    if n is None:
        n = x.shape[-1]
    if x.shape[-1] != n:
        raise ShapeError(f"points must have {n} coordinates")
    d = x if x_c is None else x - np.asarray(x_c, dtype=float)
    return euclid_bubble_radial(np.linalg.norm(d, axis=-1), lam, n)


def euclid_bubble_radial(r, lam: float, n: int):
    """Euclidean bubble as a function of the distance r to its center."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    r = np.asarray(r, dtype=float)
    return (lam / (lam**2 + r**2 / (n * (n - 2)))) ** ((n - 2) / 2.0)


def sphere_bubble(theta, lam: float, n: int):
    """Positive solution of the Yamabe equation on the unit n-sphere peaked at theta = 0."""
    if not lam > 1:
        raise DomainError(f"sphere bubble needs lambda > 1, got {lam!r}")
    theta = np.asarray(theta, dtype=float)
    amp = (yamabe_constant(n) * (lam**2 - 1.0)) ** ((n - 2) / 4.0)
    return amp * (lam - np.cos(theta)) ** (1.0 - n / 2.0)


def sphere_bubble_min(lam: float, n: int) -> float:
    """Minimum of the sphere bubble, attained at theta = pi."""
    return float(sphere_bubble(math.pi, lam, n))


def sphere_bubble_weight(lam: float, n: int) -> float:
    """mu = (max u_lam)^{-2/(n-2)} = (lam - 1) / sqrt(n(n-2)(lam^2-1)/4)."""
    if not lam > 1:
        raise DomainError("lambda must exceed 1")
    return float(sphere_bubble(0.0, lam, n)) ** (-2.0 / (n - 2))


def constant_yamabe_solution(n: int) -> float:
    """The constant positive solution (n(n-2)/4)^{(n-2)/4} on the unit sphere."""
    return yamabe_constant(n) ** ((n - 2) / 4.0)


def manifold_bubble(params: BubbleParams, model: ManifoldModel) -> Field:
    """(mu / (mu^2 + d(x_c, x)^2 / (n(n-2))))^{(n-2)/2} on the model grid."""
    n = params.n
    if n != model.n:
        raise ShapeError("bubble dimension differs from the model dimension")
    d = model.distance(params.center)
    return Field(euclid_bubble_radial(d, params.mu, n), model)


# -- residuals ---------------------------------------------------------------

def system_residual(U: PMap, A: Coupling, Lam: float = 1.0) -> np.ndarray:
    """Pointwise Delta u_i + sum_j A_ij u_j - Lam |u_i|^{2*-2} u_i, shape (p, N)."""
    n = U.model.n
    q = critical_exponent(n)
    v = U.values
    return model_apply(U.model, v) + A.apply(v) - Lam * np.abs(v) ** (q - 2.0) * v


# -- explicit families -------------------------------------------------------

def _default_sphere(n: int, N: int = 1024) -> ManifoldModel:
    return build_model(ModelKind.SPHERE, n, N=N)[0]


def remark11_system(lam: float, n: int | None = None, model: ManifoldModel | None = None):
    """Nonnegative 2-map with a zero in its first factor, and its coupling.

    Returns (U, A) with U = (u_lam - m_lam, u_lam) on the sphere model.
    """
    if not lam > 1:
        raise DomainError(f"lambda must exceed 1, got {lam!r}")
    if model is None:
        model = _default_sphere(4 if n is None else n)
    if model.kind is not ModelKind.SPHERE:
        raise ConfigurationError("this construction lives on the sphere model")
    n = model.n
    q = critical_exponent(n)
    c0 = yamabe_constant(n)
    u = sphere_bubble(model.nodes, lam, n)
    m = sphere_bubble_min(lam, n)
    u1 = np.maximum(u - m, 0.0)
    eps_t = u1 / u
    eps_h = c0 - u ** (q - 2.0) + u1 ** (q - 1.0) / u
    a12 = eps_h - eps_t * c0
    a22 = c0 - eps_t * a12
    A = Coupling.from_functions([[np.full(model.N, c0), a12], [a12, a22]])
    return PMap(np.stack([u1, u]), model), A


def remark11_eps(lam: float, model: ManifoldModel):
    """Sup norms of the off-diagonal and corner perturbations of the coupling above."""
    _, A = remark11_system(lam, model=model)
    c0 = yamabe_constant(model.n)
    return float(np.max(np.abs(A.entries[0, 1]))), float(np.max(np.abs(A.entries[1, 1] - c0)))


def remark13_family(lam: float, model: ManifoldModel | None = None):
    """Three distinct constant positive solutions (n = 6, Lam = -1) and the shared coupling."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam!r}")
    if model is None:
        model = _default_sphere(6, N=16)
    if model.n != 6:
        raise ConfigurationError("this constant family needs n = 6")
    d = 2.0 * lam + 1.0
    w = (lam**2 + (lam + 1.0) ** 2) / d
    a11 = -(3.0 * lam**2 + 3.0 * lam + 1.0) / d
    a12 = (lam**2 + lam) / d
    A = Coupling.constant([[a11, a12], [a12, a11]])
    ones = np.ones(model.N)
    maps = tuple(
        PMap(np.stack([a * ones, b * ones]), model)
        for a, b in ((lam, lam + 1.0), (lam + 1.0, lam), (w, w))
    )
    return maps, A


def linf_bound_check(U: PMap, A: Coupling, Lam: float):
    """For Lam < 0: sup|u_i|^{2*-1} <= sup|A| * max_j sup|u_j| / |Lam| componentwise.

    Returns (lhs per component, rhs, holds).
    """
    if not Lam < 0:
        raise DomainError("the bound concerns negative Lam")
    q = critical_exponent(U.model.n)
    sup = np.max(np.abs(U.values), axis=1)
    lhs = sup ** (q - 1.0)
    rhs = float(np.max(A.sup_abs().sum(axis=1)) * sup.max() / abs(Lam))
    return lhs, rhs, bool(np.all(lhs <= rhs * (1 + 1e-12)))


def _as_array(x, N: int, name: str) -> np.ndarray:
    if isinstance(x, Field):
        return x.values
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return np.full(N, float(a))
    if a.shape != (N,):
        raise ShapeError(f"{name} has the wrong length")
    return a


def _positive(x: np.ndarray, name: str) -> None:
    if np.any(x <= POSITIVITY_FLOOR):
        raise DomainError(f"{name} must be strictly positive (values <= {POSITIVITY_FLOOR:g} found)")


def coupling_from_scalars(u: Field, v: Field, h, k, beta) -> Coupling:
    """2 x 2 coupling for which (u, v) solves the system when u, v solve scalar equations.

    The scalar equations have potentials h and k; off-diagonal entry beta.
    """
    if u.model != v.model:
        raise ShapeError("u and v live on different models")
    N = u.model.N
    uu, vv = u.values, v.values
    _positive(uu, "u")
    _positive(vv, "v")
    h = _as_array(h, N, "h")
    k = _as_array(k, N, "k")
    b = _as_array(beta, N, "beta")
    alpha = h - b * vv / uu
    gamma = k - b * uu / vv
    return Coupling.from_functions([[alpha, b], [b, gamma]])


def blowup_pair_coupling(u: Field, ut: Field, beta, s: int, h, ht) -> Coupling:
    """Coupling with entries h - s eps, s beta, h~ - s eps~ where eps = beta u~/u, eps~ = beta u/u~."""
    if s not in (1, -1):
        raise DomainError("s must be +1 or -1")
    if u.model != ut.model:
        raise ShapeError("the two factors live on different models")
    N = u.model.N
    uu, vv = u.values, ut.values
    _positive(uu, "u")
    _positive(vv, "u~")
    b = _as_array(beta, N, "beta")
    h = _as_array(h, N, "h")
    ht = _as_array(ht, N, "h~")
    eps = b * vv / uu
    eps_t = b * uu / vv
    return Coupling.from_functions([[h - s * eps, s * b], [s * b, ht - s * eps_t]])


# -- named constant matrices -------------------------------------------------

def _require(cond: bool, identity: str) -> None:
    if not cond:
        raise ConfigurationError(f"constraint violated: {identity}")


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


NAMED_MATRICES = (
    "yamabe_diag", "scalar_diag", "remark12", "remark13", "remark21",
    "remark91", "remark92", "corollary91",
)


def named_matrices(name: str, params: dict | None = None, n: int = 4) -> Coupling:
    """Constant couplings addressable by name.

    yamabe_diag(p): c0 Id_p with c0 = n(n-2)/4.
    scalar_diag(p, s): s Id_p.
    remark12(h, alpha, beta): 3 x 3 block with (u, u, 0) as solution.
    remark13(lambda): the constant n = 6 family coupling.
    remark21(alpha): c0 on the diagonal, alpha off the diagonal.
    remark91(a, b, c): 2 x 2 with a + b = b + c = c0.
    remark92(a, b, c, d, e): 3 x 3 with a + b = c0, b + c = d + c0, e = d + c0.
    corollary91(t, A): c0 Id_p + t A.
    """
    params = dict(params or {})
    key = name.replace("-", "_").lower()
    c0 = yamabe_constant(n)

    def take(*names, **defaults):
        missing = [k for k in names if k not in params and k not in defaults]
        if missing:
            raise ConfigurationError(f"{name} needs parameters {missing}")
        extra = set(params) - set(names) - set(defaults)
        if extra:
            raise ConfigurationError(f"{name} does not take parameters {sorted(extra)}")
        return [params.get(k, defaults.get(k)) for k in list(names) + list(defaults)]

    if key == "yamabe_diag":
        (p,) = take(p=1)
        return Coupling.scalar_identity(c0, int(p))
    if key == "scalar_diag":
        s, p = take("s", p=1)
        return Coupling.scalar_identity(float(s), int(p))
    if key == "remark12":
        h, a, b = (float(x) for x in take("h", "alpha", "beta"))
        return Coupling.constant([[h / 2, h / 2, a], [h / 2, h / 2, -a], [a, -a, b]])
    if key == "remark13":
        (lam,) = take("lambda")
        return remark13_family(float(lam))[1]
    if key == "remark21":
        (a,) = take("alpha")
        return Coupling.constant([[c0, float(a)], [float(a), c0]])
    if key == "remark91":
        a, b, c = (float(x) for x in take("a", "b", "c"))
        _require(a > 0 and c > 0, "a > 0 and c > 0")
        _require(_close(a + b, c0), "a + b = n(n-2)/4")
        _require(_close(b + c, c0), "b + c = n(n-2)/4")
        return Coupling.constant([[a, b], [b, c]])
    if key == "remark92":
        a, b, c, d, e = (float(x) for x in take("a", "b", "c", "d", "e"))
        _require(min(a, b, c, d, e) > 0, "a, b, c, d, e > 0")
        _require(_close(a + b, c0), "a + b = n(n-2)/4")
        _require(_close(b + c, d + c0), "b + c = d + n(n-2)/4")
        _require(_close(e, d + c0), "e = d + n(n-2)/4")
        return Coupling.constant([[a, b, 0.0], [b, c, -d], [0.0, -d, e]])
    if key == "corollary91":
        t, A = take("t", "A")
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigurationError("corollary91 needs a square matrix A")
        _require(np.array_equal(A, A.T), "A symmetric")
        return Coupling.constant(c0 * np.eye(A.shape[0]) + float(t) * A)
    raise ConfigurationError(f"unknown coupling {name!r}; known: {', '.join(NAMED_MATRICES)}")


def structure_tests(A: Coupling) -> dict:
    """Cooperativity of A and -A and full coupling of the index graph."""
    p = A.p
    off = ~np.eye(p, dtype=bool)
    e = A.entries if not A.is_constant else A.entries[:, :, None]
    offv = e[off]
    coop = bool(np.all(offv >= 0))
    neg = bool(np.all(offv <= 0))
    adj = A.sup_abs() > EDGE_THRESHOLD
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(p):
            if j not in seen and adj[i, j]:
                seen.add(j)
                stack.append(j)
    return {"cooperative": coop, "neg_cooperative": neg, "fully_coupled": len(seen) == p}
