"""Scalar fields and p-maps on a model grid, with norms and energies."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError
from .geometry import ManifoldModel


def _readonly(values) -> np.ndarray:
    a = np.array(values, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Field:
    """One scalar component sampled on the nodes of a model."""

    values: np.ndarray
    model: ManifoldModel

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 1:
            raise ShapeError("a Field holds a one-dimensional array")
        self.model.check_values(v)
        if not np.all(np.isfinite(v)):
            raise NumericError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, func, model: ManifoldModel) -> "Field":
        return cls(func(model.nodes), model)

    @classmethod
    def constant(cls, c: float, model: ManifoldModel) -> "Field":
        return cls(np.full(model.N, float(c)), model)

    def __len__(self) -> int:
        return self.values.size

    def __neg__(self):
        return Field(-self.values, self.model)

    def __mul__(self, c):
        return Field(self.values * float(c), self.model)

    __rmul__ = __mul__

    def __add__(self, other: "Field"):
        _same_model(self.model, other.model)
        return Field(self.values + other.values, self.model)

    def __sub__(self, other: "Field"):
        _same_model(self.model, other.model)
        return Field(self.values - other.values, self.model)

    def integral(self) -> float:
        return float(self.model.weights @ self.values)


def _same_model(a: ManifoldModel, b: ManifoldModel) -> None:
    if a != b:
        raise ShapeError("fields live on different models")


@dataclass(frozen=True, eq=False)
class PMap:
    """An ordered p-tuple of fields sharing one model, stored as a (p, N) array."""

    values: np.ndarray
    model: ManifoldModel

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim == 1:
            v = _readonly(v[None, :])
        if v.ndim != 2 or v.shape[0] < 1:
            raise ShapeError("a PMap holds a (p, N) array with p >= 1")
        self.model.check_values(v)
        if not np.all(np.isfinite(v)):
            raise NumericError("p-map values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_fields(cls, fields: Sequence[Field]) -> "PMap":
        fields = list(fields)
        if not fields:
            raise ShapeError("a PMap needs at least one component")
        model = fields[0].model
        for f in fields[1:]:
            _same_model(model, f.model)
        return cls(np.stack([f.values for f in fields]), model)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def components(self) -> list[Field]:
        return [Field(v, self.model) for v in self.values]

    def __getitem__(self, i: int) -> Field:
        return Field(self.values[i], self.model)

    def __iter__(self):
        return iter(self.components)

    def __len__(self) -> int:
        return self.p

    def __neg__(self):
        return PMap(-self.values, self.model)

    def __mul__(self, c):
        return PMap(self.values * float(c), self.model)

    __rmul__ = __mul__

    def abs(self) -> "PMap":
        return PMap(np.abs(self.values), self.model)


def lq_norm(f, q: float) -> float:
    """(sum_j w_j |f_j|^q)^(1/q) for a Field, or the sum of component norms for a PMap."""
    if not q > 0:
        raise DomainError(f"q must be positive, got {q!r}")
    if isinstance(f, PMap):
        return float(sum(lq_norm(c, q) for c in f.components))
    s = float(f.model.weights @ np.abs(f.values) ** q)
    return s ** (1.0 / q)


def lq_integral(f, q: float) -> float:
    """Integral of |f|^q (summed over components for a PMap)."""
    if not q > 0:
        raise DomainError(f"q must be positive, got {q!r}")
    vals = np.atleast_2d(f.values)
    return float(np.sum(np.abs(vals) ** q @ f.model.weights))


def dirichlet_form(values: np.ndarray, model: ManifoldModel) -> float:
    """Face-based discrete Dirichlet energy of one or several rows of values."""
    left, right, c = model.faces
    v = np.atleast_2d(values)
    return float(np.sum((v[:, right] - v[:, left]) ** 2 @ c))


def grad_energy(f) -> float:
    """Discrete integral of |grad f|^2 (summed over components for a PMap)."""
    return dirichlet_form(f.values, f.model)


def pmap_abs_q(U: PMap, q: float) -> Field:
    """Pointwise sum_i |u_i|^q."""
    if not q > 0:
        raise DomainError(f"q must be positive, got {q!r}")
    return Field(np.sum(np.abs(U.values) ** q, axis=0), U.model)


def inner(f: Field, g: Field) -> float:
    """Weighted inner product sum_j w_j f_j g_j."""
    _same_model(f.model, g.model)
    return float(f.model.weights @ (f.values * g.values))


def critical_exponent(n: int) -> float:
    return 2.0 * n / (n - 2.0)


def write_field_csv(f: Field, path, coordinate_name: str = "coordinate") -> Path:
    """Write ``coordinate,value`` rows with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([coordinate_name, "value"])
        for x, v in zip(f.model.nodes, f.values):
            w.writerow([f"{x:.17g}", f"{v:.17g}"])
    return path


def read_field_csv(path, model: ManifoldModel) -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != model.N or not np.allclose(data[:, 0], model.nodes, rtol=0, atol=1e-12 * model.length):
        raise ShapeError("CSV coordinates do not match the model grid")
    return Field(data[:, 1], model)


def stack(fields: Iterable[Field]) -> PMap:
    return PMap.from_fields(list(fields))
