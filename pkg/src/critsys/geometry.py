"""Symmetry-reduced model manifolds, their grids and reduced Laplacians.

Three models are supported, each reduced to one coordinate on a uniform
cell-centered grid (nodes at (j + 1/2) h):

* ``SphereRadial``: zonal functions on the round unit n-sphere, coordinate
  theta in (0, pi) measured from the north pole.
* ``ProductCircle``: functions of t on S^1(T) x S^{n-1}, t periodic with
  period 2 pi T.
* ``EuclideanBallRadial``: radial functions on the Euclidean ball of
  radius R, coordinate r in (0, R].

The Laplacian is the nonnegative one, Delta = -div grad.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError, ShapeError

DEFAULT_N = 1024
MIN_N = 16


class ModelKind(str, enum.Enum):
    SPHERE = "SphereRadial"
    CIRCLE = "ProductCircle"
    BALL = "EuclideanBallRadial"

    @classmethod
    def parse(cls, kind) -> "ModelKind":
        if isinstance(kind, ModelKind):
            return kind
        aliases = {
            "sphereradial": cls.SPHERE, "sphere": cls.SPHERE,
            "productcircle": cls.CIRCLE, "circle": cls.CIRCLE, "product": cls.CIRCLE,
            "euclideanballradial": cls.BALL, "ball": cls.BALL, "euclid": cls.BALL,
        }
        key = str(kind).replace("_", "").replace("-", "").lower()
        if key not in aliases:
            raise ConfigurationError(f"unknown model kind {kind!r}")
        return aliases[key]


def sphere_volume(n: int) -> float:
    """Volume of the unit n-sphere, 2 pi^{(n+1)/2} / Gamma((n+1)/2)."""
    if int(n) != n or n < 1:
        raise DomainError(f"sphere_volume needs an integer n >= 1, got {n!r}")
    n = int(n)
    return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid1D:
    nodes: np.ndarray
    weights: np.ndarray
    spacing: float

    def __len__(self) -> int:
        return self.nodes.size


@dataclass(frozen=True)
class ManifoldModel:
    """A reduced model manifold together with its grid.

    Instances are immutable and hashable (equality by parameters).
    """

    kind: ModelKind
    n: int
    N: int = DEFAULT_N
    T: float | None = None
    R: float | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if int(self.n) != self.n or self.n < 3:
            raise ConfigurationError(f"dimension n must be an integer >= 3, got {self.n!r}")
        if int(self.N) != self.N or self.N < MIN_N:
            raise ConfigurationError(f"grid size N must be an integer >= {MIN_N}, got {self.N!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "N", int(self.N))
        if self.kind is ModelKind.CIRCLE:
            if self.T is None or not np.isfinite(self.T) or self.T <= 0:
                raise ConfigurationError("ProductCircle needs a circle radius T > 0")
            if self.R is not None:
                raise ConfigurationError("R is only meaningful for EuclideanBallRadial")
            object.__setattr__(self, "T", float(self.T))
        elif self.kind is ModelKind.BALL:
            if self.R is None or not np.isfinite(self.R) or self.R <= 0:
                raise ConfigurationError("EuclideanBallRadial needs a radius R > 0")
            if self.T is not None:
                raise ConfigurationError("T is only meaningful for ProductCircle")
            object.__setattr__(self, "R", float(self.R))
        elif self.T is not None or self.R is not None:
            raise ConfigurationError("SphereRadial takes no T or R")

    # -- grid -------------------------------------------------------------

    @property
    def length(self) -> float:
        """Length of the coordinate interval."""
        if self.kind is ModelKind.SPHERE:
            return math.pi
        if self.kind is ModelKind.CIRCLE:
            return 2.0 * math.pi * self.T
        return self.R

    @property
    def h(self) -> float:
        return self.length / self.N

    @cached_property
    def grid(self) -> Grid1D:
        h = self.h
        x = (np.arange(self.N) + 0.5) * h
        return Grid1D(_frozen(x), _frozen(self.metric_factor(x) * h), h)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    def metric_factor(self, x) -> np.ndarray:
        """Area of the orbit through coordinate x (the reduced volume density)."""
        x = np.asarray(x, dtype=float)
        w = sphere_volume(self.n - 1)
        if self.kind is ModelKind.SPHERE:
            return w * np.sin(x) ** (self.n - 1)
        if self.kind is ModelKind.CIRCLE:
            return np.full_like(x, w)
        return w * x ** (self.n - 1)

    @property
    def volume(self) -> float:
        """Exact volume of the model manifold."""
        if self.kind is ModelKind.SPHERE:
            return sphere_volume(self.n)
        if self.kind is ModelKind.CIRCLE:
            return 2.0 * math.pi * self.T * sphere_volume(self.n - 1)
        return sphere_volume(self.n - 1) * self.R ** self.n / self.n

    @property
    def diameter(self) -> float:
        """Largest orbit distance between two points of the model."""
        if self.kind is ModelKind.SPHERE:
            return math.pi
        if self.kind is ModelKind.CIRCLE:
            return math.pi * self.T
        return 2.0 * self.R

    @property
    def scalar_curvature(self) -> float:
        n = self.n
        if self.kind is ModelKind.SPHERE:
            return float(n * (n - 1))
        if self.kind is ModelKind.CIRCLE:
            return float((n - 1) * (n - 2))
        return 0.0

    @property
    def yamabe_potential(self) -> float:
        """Constant (n-2)/(4(n-1)) * scalar curvature of the model."""
        return (self.n - 2) / (4.0 * (self.n - 1)) * self.scalar_curvature

    def with_N(self, N: int) -> "ManifoldModel":
        return ManifoldModel(self.kind, self.n, N, self.T, self.R)

    def check_values(self, values: np.ndarray) -> None:
        if values.shape[-1] != self.N:
            raise ShapeError(f"field has {values.shape[-1]} nodes but the grid has {self.N}")

    # -- distances --------------------------------------------------------

    def snap_center(self, c: float) -> float:
        """Identify a center in the first or last cell of a radial grid with the pole."""
        c = float(c)
        h = self.h
        if self.kind is ModelKind.SPHERE:
            if c < h:
                return 0.0
            if c > math.pi - h:
                return math.pi
        elif self.kind is ModelKind.BALL and c < h:
            return 0.0
        elif self.kind is ModelKind.CIRCLE:
            c = c % self.length
        return c

    def distance(self, center: float, x=None) -> np.ndarray:
        """Orbit distance from ``center`` to the points ``x`` (default: nodes)."""
        x = self.nodes if x is None else np.asarray(x, dtype=float)
        c = self.snap_center(center)
        d = np.abs(x - c)
        if self.kind is ModelKind.CIRCLE:
            d = np.minimum(d % self.length, self.length - d % self.length)
        return d

    # -- operators --------------------------------------------------------

    def _drift(self) -> np.ndarray:
        x = self.nodes
        if self.kind is ModelKind.SPHERE:
            return (self.n - 1) / np.tan(x)
        if self.kind is ModelKind.BALL:
            return (self.n - 1) / x
        return np.zeros_like(x)

    @property
    def laplacian_matrix(self) -> sp.csr_matrix:
        """Sparse matrix of the second-order central reduced Laplacian."""
        if "lap" not in self._cache:
            self._cache["lap"] = _build_laplacian(self)
        return self._cache["lap"]

    @property
    def faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(left, right, coefficient) with energy sum c (f[right] - f[left])^2."""
        if "faces" not in self._cache:
            self._cache["faces"] = _build_faces(self)
        return self._cache["faces"]

    @property
    def stiffness_matrix(self) -> sp.csr_matrix:
        """Symmetric matrix G with f.G.f the face-based Dirichlet energy."""
        if "stiff" not in self._cache:
            left, right, c = self.faces
            rows = np.concatenate([left, right, left, right])
            cols = np.concatenate([left, right, right, left])
            vals = np.concatenate([c, c, -c, -c])
            self._cache["stiff"] = sp.csr_matrix((vals, (rows, cols)), shape=(self.N, self.N))
        return self._cache["stiff"]


def _build_laplacian(model: ManifoldModel) -> sp.csr_matrix:
    N, h = model.N, model.h
    b = model._drift() / (2.0 * h)
    lower = -1.0 / h**2 + b  # coefficient of f_{j-1}
    upper = -1.0 / h**2 - b  # coefficient of f_{j+1}
    diag = np.full(N, 2.0 / h**2)
    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    idx = np.arange(N)
    rows.extend(idx)
    cols.extend(idx)
    vals.extend(diag)
    kind = model.kind
    for j in range(N):
        # f_{j-1}
        if j > 0:
            add(j, j - 1, lower[j])
        elif kind is ModelKind.CIRCLE:
            add(j, N - 1, lower[j])
        else:
            add(j, 0, lower[j])  # even reflection at the pole / origin
        # f_{j+1}
        if j < N - 1:
            add(j, j + 1, upper[j])
        elif kind is ModelKind.CIRCLE:
            add(j, 0, upper[j])
        elif kind is ModelKind.SPHERE:
            add(j, N - 1, upper[j])  # even reflection at the south pole
        else:
            # ghost f_N from the cubic through the last four nodes
            for k, c in zip(range(4), (4.0, -6.0, 4.0, -1.0)):
                add(j, N - 1 - k, c * upper[j])
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _build_faces(model: ManifoldModel):
    N, h = model.N, model.h
    faces = (np.arange(N - 1) + 1.0) * h
    c = model.metric_factor(faces) / h
    left = np.arange(N - 1)
    right = left + 1
    if model.kind is ModelKind.CIRCLE:
        c = np.append(c, model.metric_factor(np.array([0.0]))[0] / h)
        left = np.append(left, N - 1)
        right = np.append(right, 0)
    elif model.kind is ModelKind.BALL:
        # outer half cell, slope taken from the last interior face
        c = c.copy()
        c[-1] += model.metric_factor(np.array([model.R]))[0] * 0.5 / h
    for a in (left, right, c):
        a.setflags(write=False)
    return left, right, c


def build_model(kind, n: int, params: dict | None = None, N: int = DEFAULT_N) -> tuple[ManifoldModel, Grid1D]:
    """Build a model and return it together with its grid."""
    params = dict(params or {})
    unknown = set(params) - {"T", "R"}
    if unknown:
        raise ConfigurationError(f"unknown model parameters: {sorted(unknown)}")
    model = ManifoldModel(ModelKind.parse(kind), n, N, params.get("T"), params.get("R"))
    return model, model.grid


def laplacian(f, model: ManifoldModel | None = None):
    """Reduced Laplace-Beltrami operator applied to a Field or an array.

    Returns the same type it was given.
    """
    from .fields import Field

    if isinstance(f, Field):
        if model is not None and model != f.model:
            raise ShapeError("field lives on a different model")
        return Field(model_apply(f.model, f.values), f.model)
    if model is None:
        raise ShapeError("an array argument needs a model")
    return model_apply(model, np.asarray(f, dtype=float))


def model_apply(model: ManifoldModel, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    model.check_values(values)
    L = model.laplacian_matrix
    if values.ndim == 1:
        return L @ values
    return (L @ values.reshape(-1, model.N).T).T.reshape(values.shape)
