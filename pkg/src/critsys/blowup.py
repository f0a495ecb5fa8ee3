"""Blow-up families and their diagnostics.

Balls are orbit sets: on the sphere model a ball around the pole is a polar
cap and a ball around another point is a band of latitudes; on the product
model it is a slab in t. Rescaling needs a center at a point fixed by the
symmetry (a pole or the origin) so that the rescaled map is radial.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analytic import (
    Coupling,
    blowup_pair_coupling,
    constant_yamabe_solution,
    named_matrices,
    remark11_system,
    sharp_constant,
    sphere_bubble,
    yamabe_constant,
)
from .errors import ConfigurationError, DomainError, ShapeError
from .fields import Field, PMap, critical_exponent
from .geometry import ManifoldModel, ModelKind, model_apply
from .variational import free_energy

MIN_WEIGHT = 1e-12


@dataclass
class BlowupSequence:
    maps: list
    couplings: list
    model: ManifoldModel
    params: list
    limit: Optional[PMap] = None
    limit_coupling: Optional[Coupling] = None
    bubble_counts: Optional[list] = None
    name: str = ""

    def __post_init__(self):
        if len(self.maps) != len(self.couplings) or len(self.maps) != len(self.params):
            raise ShapeError("maps, couplings and parameters must have equal lengths")
        for U in self.maps:
            if U.model != self.model:
                raise ShapeError("all maps must share the sequence model")
        d = np.diff(np.asarray(self.params, dtype=float))
        if d.size and not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigurationError("family parameter must be strictly monotone")

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def k(self) -> int:
        if self.bubble_counts is None:
            raise ConfigurationError("sequence declares no bubble counts")
        return int(sum(self.bubble_counts))


# -- extraction and balls ------------------------------------------------------

def extract_center_weight(U: PMap, model: ManifoldModel | None = None):
    """(center, mu, component) from the largest nodal value over all components.

    mu = max^{-2/(n-2)}; ties go to the smallest coordinate, then the
    smallest component index.
    """
    model = U.model if model is None else model
    v = U.values
    top = v.max(axis=0)
    j = int(np.argmax(top))
    m = float(top[j])
    if not m > 0:
        raise DomainError("cannot extract a weight from a map without positive values")
    i = int(np.argmax(v[:, j] == m))
    return float(model.nodes[j]), m ** (-2.0 / (model.n - 2)), i


def ball_mask(model: ManifoldModel, centers, radius: float) -> np.ndarray:
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        raise DomainError("empty center list")
    d = np.min([model.distance(c) for c in centers], axis=0)
    return d < radius


def _min_distance(model: ManifoldModel, centers) -> np.ndarray:
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        raise DomainError("empty center list")
    return np.min([model.distance(c) for c in centers], axis=0)


# -- energies and concentration -----------------------------------------------

def energy_splitting_residual(seq: BlowupSequence, A_limit: Coupling | None = None) -> list[float]:
    """|E(U_a, A_a) - E(U0, A_limit) - (k/n) K_n^{-n}| for each member, E the free energy."""
    if seq.limit is None:
        raise ConfigurationError("sequence declares no limit map")
    A_limit = A_limit if A_limit is not None else seq.limit_coupling
    if A_limit is None:
        raise ConfigurationError("no coupling supplied for the limit map")
    n = seq.model.n
    base = free_energy(seq.limit, A_limit) + seq.k / n * sharp_constant(n) ** (-n)
    return [abs(free_energy(U, A) - base) for U, A in zip(seq.maps, seq.couplings)]


def l2_concentration_ratio(U: PMap, centers, delta: float = 0.5) -> float:
    """Fraction of the L^2 mass of U outside the delta-balls around the centers."""
    model = U.model
    if not 0 < delta < model.diameter:
        raise DomainError(f"delta must lie in (0, {model.diameter}), got {delta!r}")
    outside = ~ball_mask(model, centers, delta)
    dens = np.sum(U.values**2, axis=0) * model.weights
    total = float(dens.sum())
    if not total > 0:
        raise DomainError("map has no L^2 mass")
    return float(dens[outside].sum() / total)


def pointwise_envelope(U: PMap, U0: PMap | None, centers, n: int | None = None,
                       exclude_radius: float = 0.0) -> float:
    """sup of d(x)^{(n-2)/2} |U - U0|(x), d the distance to the nearest center.

    Points closer than ``exclude_radius`` to every center are left out.
    """
    model = U.model
    n = model.n if n is None else n
    dev = U.values if U0 is None else U.values - U0.values
    d = _min_distance(model, centers)
    keep = d >= exclude_radius
    if not np.any(keep):
        return 0.0
    env = d ** ((n - 2) / 2.0) * np.sqrt(np.sum(dev**2, axis=0))
    return float(env[keep].max())


def _local_dirichlet(values: np.ndarray, model: ManifoldModel, mask: np.ndarray) -> float:
    left, right, c = model.faces
    sel = mask[left] & mask[right]
    return float(np.sum((values[:, right[sel]] - values[:, left[sel]]) ** 2 @ c[sel]))


def _check_ball_inside(model: ManifoldModel, x: float, radius: float) -> None:
    c = model.snap_center(x)
    if model.kind is ModelKind.SPHERE:
        ok = (c in (0.0, math.pi) and radius < math.pi) or (c - radius >= 0 and c + radius <= math.pi)
    elif model.kind is ModelKind.CIRCLE:
        ok = radius < math.pi * model.T
    else:
        ok = (c == 0.0 and radius <= model.R) or (c - radius >= 0 and c + radius <= model.R)
    if not ok:
        raise DomainError(f"ball of radius {radius} around {x} leaves the model")


def local_balance_checks(U: PMap, A: Coupling | None, x: float, delta: float, s: float = 2.0,
                         assume_coercive: bool = False) -> dict:
    """Three local inequalities as (lhs, rhs, ratio) triples.

    ``sup_bound``: max over B(x, delta) of sum_i |u_i| against
    sum_i ||u_i||_{L^s(B(x, 2 delta))}.
    ``l1_balance``: global int |U| against int |U|^{2*-1}; only evaluated
    when the caller asserts coercivity.
    ``gradient_balance``: int_{B(x,delta)} |grad U|^2 against
    int_{B(x,2 delta)} sum_i (1 + |u_i|^{2*-2}) u_i^2.
    """
    model = U.model
    if not delta > 0 or not s > 0:
        raise DomainError("delta and s must be positive")
    _check_ball_inside(model, x, 2.0 * delta)
    q = critical_exponent(model.n)
    v = np.abs(U.values)
    w = model.weights
    inner = ball_mask(model, [x], delta)
    outer = ball_mask(model, [x], 2.0 * delta)
    if not np.any(inner):
        raise DomainError("ball contains no grid nodes")
    out = {}
    lhs = float(v.sum(axis=0)[inner].max())
    rhs = float(sum((w[outer] @ vi[outer] ** s) ** (1.0 / s) for vi in v))
    out["sup_bound"] = (lhs, rhs, lhs / rhs if rhs > 0 else math.inf)
    if assume_coercive:
        lhs = float(np.sum(v @ w))
        rhs = float(np.sum(v ** (q - 1.0) @ w))
        out["l1_balance"] = (lhs, rhs, lhs / rhs if rhs > 0 else math.inf)
    lhs = _local_dirichlet(U.values, model, inner)
    rhs = float(np.sum(((1.0 + v ** (q - 2.0)) * v**2)[:, outer] @ w[outer]))
    out["gradient_balance"] = (lhs, rhs, lhs / rhs if rhs > 0 else math.inf)
    return out


# -- rescaling and asymptotics -------------------------------------------------

def standard_rescale(U: PMap, center: float, mu: float, power: str = "one",
                     model: ManifoldModel | None = None, radius: float | None = None,
                     N_local: int = 2048) -> PMap:
    """Sample U along geodesics from a pole at radius scale mu (``one``) or sqrt(mu) (``half``).

    ``one`` multiplies by mu^{(n-2)/2}; ``half`` leaves amplitudes alone.
    The result lives on a Euclidean ball of the given ``radius`` (in rescaled
    units, default: the largest window inside the chart, capped at 1/scale of
    a half-turn) with ``N_local`` nodes.
    """
    model = U.model if model is None else model
    if not mu > 0:
        raise DomainError("mu must be positive")
    n = model.n
    if power == "one":
        scale, amp = mu, mu ** ((n - 2) / 2.0)
    elif power == "half":
        scale, amp = math.sqrt(mu), 1.0
    else:
        raise DomainError(f"power must be 'one' or 'half', got {power!r}")
    c = model.snap_center(center)
    if model.kind is ModelKind.SPHERE:
        if c not in (0.0, math.pi):
            raise DomainError("rescaling on the sphere model needs a center at a pole")
        chart = math.pi
    elif model.kind is ModelKind.BALL:
        if c != 0.0:
            raise DomainError("rescaling on the ball model needs the center at the origin")
        chart = model.R
    else:
        raise DomainError("the product model has no symmetric center for radial rescaling")
    if radius is None:
        radius = chart / scale
    if not radius > 0 or scale * radius > chart * (1 + 1e-12):
        raise DomainError(f"rescaled window {scale * radius} exceeds the chart {chart}")
    local = ManifoldModel(ModelKind.BALL, n, N_local, R=radius)
    geo = scale * local.nodes
    x = geo if c == 0.0 else math.pi - geo
    nodes = model.nodes
    if c == 0.0:
        vals = [np.interp(x, nodes, u) for u in U.values]
    else:
        vals = [np.interp(-x, -nodes[::-1], u[::-1]) for u in U.values]
    return PMap(amp * np.array(vals), local)


def sharp_asymptotics_fit(rescaled: Field, n: int | None = None, annulus=(0.2, 0.8)):
    """Least-squares fit f(r) ~ A / r^{n-2} + c on an annulus; returns (A, c, relative residual)."""
    model = rescaled.model
    n = model.n if n is None else n
    r1, r2 = (float(a) for a in annulus)
    if not 0 < r1 < r2:
        raise DomainError(f"degenerate annulus {annulus!r}")
    r = model.nodes
    sel = (r >= r1) & (r <= r2)
    if sel.sum() < 3:
        raise DomainError("annulus holds fewer than three grid nodes")
    rr, f = r[sel], rescaled.values[sel]
    X = np.column_stack([rr ** (2.0 - n), np.ones_like(rr)])
    coef, *_ = np.linalg.lstsq(X, f, rcond=None)
    resid = f - X @ coef
    nf = float(np.linalg.norm(f))
    rel = float(np.linalg.norm(resid) / nf) if nf > 0 else 0.0
    return float(coef[0]), float(coef[1]), rel


def pohozaev_residual(u: Field, r: float, ell: int = 0, angular_norm: float | None = None):
    """Both sides of the Pohozaev identity on B_r for u(x) = f(|x|) Y(x/|x|).

    ``u`` holds f on a EuclideanBallRadial grid; Y is a spherical harmonic of
    degree ``ell`` with int_{S^{n-1}} Y^2 = ``angular_norm`` (default: the
    sphere area for ell = 0, area/n for ell = 1). The radius is moved to the
    nearest cell face so that interior sums are midpoint rules.
    Returns (lhs, rhs).
    """
    model = u.model
    if model.kind is not ModelKind.BALL:
        raise DomainError("the identity is evaluated on the Euclidean ball model")
    n, h, N = model.n, model.h, model.N
    k = int(round(r / h))
    if not 1 <= k <= N - 1:
        raise DomainError(f"radius {r} is not inside the ball grid")
    area = model.metric_factor(np.array([1.0]))[0]
    if angular_norm is None:
        if ell == 0:
            angular_norm = area
        elif ell == 1:
            angular_norm = area / n
        else:
            raise DomainError("supply angular_norm for degree >= 2")
    cy = float(angular_norm)
    f = u.values
    ext = np.empty(N + 2)
    ext[1:-1] = f
    ext[0] = (-1) ** ell * f[0]
    ext[-1] = 4 * f[-1] - 6 * f[-2] + 4 * f[-3] - f[-4]
    x = model.nodes
    d1 = (ext[2:] - ext[:-2]) / (2 * h)
    d2 = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / h**2
    ev = ell * (ell + n - 2)
    lap = -d2 - (n - 1) * d1 / x + ev * f / x**2
    w = model.weights[:k] * (cy / area)
    lhs = float(w @ ((x[:k] * d1[:k] + (n - 2) / 2.0 * f[:k]) * lap[:k]))
    rb = k * h
    fb = 0.5 * (f[k - 1] + f[k])
    db = (f[k] - f[k - 1]) / h
    sb = cy * rb ** (n - 1)
    rhs = sb * (-rb * db**2 + 0.5 * rb * (db**2 + ev * fb**2 / rb**2) - (n - 2) / 2.0 * fb * db)
    return lhs, float(rhs)


def corollary81_ratio(seq: BlowupSequence, delta: float = 4.0) -> list[float]:
    """sum_i int_{B(center, delta sqrt(mu))} u_i^2 / mu^2 for every member."""
    out = []
    for U in seq.maps:
        c, mu, _ = extract_center_weight(U)
        out.append(_cor81_single(U, c, mu, delta))
    return out


def _cor81_single(U: PMap, c: float, mu: float, delta: float) -> float:
    if mu < MIN_WEIGHT:
        raise DomainError(f"weight {mu:g} is below {MIN_WEIGHT:g}")
    model = U.model
    rad = delta * math.sqrt(mu)
    _check_ball_inside(model, c, rad)
    mask = ball_mask(model, [c], rad)
    return float(np.sum(U.values[:, mask] ** 2 @ model.weights[mask]) / mu**2)


# -- families ------------------------------------------------------------------

FAMILIES = ("sphere_yamabe", "remark11", "prop91_pair", "remark91_triple")


def build_family(name: str, model: ManifoldModel, params: Sequence[float], s: int = 1,
                 beta=None, abc=None) -> BlowupSequence:
    """Instantiate a named family on the sphere model along the parameter grid.

    ``beta`` maps the weight mu to the coupling strength of the prop91 pair
    (default mu^{n-2}); ``abc`` gives (a, b, c) for the remark91 triple.
    """
    if name not in FAMILIES:
        raise ConfigurationError(f"unknown family {name!r}; known: {', '.join(FAMILIES)}")
    if model.kind is not ModelKind.SPHERE:
        raise ConfigurationError("blow-up families live on the sphere model")
    params = [float(p) for p in params]
    if not params:
        raise ConfigurationError("empty parameter grid")
    n, N = model.n, model.N
    c0 = yamabe_constant(n)
    th = model.nodes
    maps, coups = [], []
    if name == "sphere_yamabe":
        A = Coupling.scalar_identity(c0, 1)
        for lam in params:
            maps.append(PMap(sphere_bubble(th, lam, n), model))
            coups.append(A)
        return BlowupSequence(maps, coups, model, params, PMap(np.zeros(N), model), A, [1], name)
    if name == "remark11":
        for lam in params:
            U, A = remark11_system(lam, model=model)
            maps.append(U)
            coups.append(A)
        return BlowupSequence(maps, coups, model, params, None, None, None, name)
    if name == "prop91_pair":
        beta = beta if beta is not None else (lambda mu: mu ** (n - 2))
        cst = constant_yamabe_solution(n)
        ut = Field(np.full(N, cst), model)
        for lam in params:
            u = Field(sphere_bubble(th, lam, n), model)
            mu = float(sphere_bubble(0.0, lam, n)) ** (-2.0 / (n - 2))
            b = float(beta(mu))
            if not b > 0:
                raise ConfigurationError("beta schedule must be positive")
            coups.append(blowup_pair_coupling(u, ut, b, s, c0, c0))
            maps.append(PMap.from_fields([u, ut]))
        limit = PMap(np.stack([np.zeros(N), np.full(N, cst)]), model)
        return BlowupSequence(maps, coups, model, params, limit, Coupling.scalar_identity(c0, 2), [1, 0], name)
    a, b, c = abc if abc is not None else (c0 / 2, c0 / 2, c0 / 2)
    A = named_matrices("remark91", {"a": a, "b": b, "c": c}, n=n)
    for lam in params:
        u = sphere_bubble(th, lam, n)
        maps.append(PMap(np.stack([u, u]), model))
        coups.append(A)
    return BlowupSequence(maps, coups, model, params, PMap(np.zeros((2, N)), model), A, [1, 1], name)


# -- the full report -----------------------------------------------------------

@dataclass
class DiagnosticOptions:
    delta: float = 0.5
    annulus: Optional[tuple] = None
    N_local: int = 2048
    pohozaev_radius: float = 1.0
    pohozaev_window: float = 2.0
    cor81_delta: float = 4.0


@dataclass
class MemberDiagnostics:
    index: int
    param: float
    center: float
    mu: float
    component: int
    R_delta: float
    envelope: float
    splitting_residual: Optional[float]
    A_fit: float
    c_fit: float
    fit_residual: float
    pohozaev_lhs: float
    pohozaev_rhs: float
    cor81_ratio: float
    residual_sup: float

    @property
    def pohozaev_gap(self) -> float:
        return abs(self.pohozaev_lhs - self.pohozaev_rhs)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["pohozaev_gap"] = self.pohozaev_gap
        return d


@dataclass
class BlowupReport:
    family: str
    n: int
    N: int
    members: list = field(default_factory=list)

    CSV_COLUMNS = ("index", "lambda", "mu", "R_delta", "envelope", "splitting_residual",
                   "A_fit", "c_fit", "pohozaev_gap")

    def to_dict(self) -> dict:
        return {"family": self.family, "n": self.n, "N": self.N,
                "members": [m.to_dict() for m in self.members]}

    def csv_rows(self) -> list:
        rows = []
        for m in self.members:
            sr = "" if m.splitting_residual is None else f"{m.splitting_residual:.17g}"
            rows.append([str(m.index), f"{m.param:.17g}", f"{m.mu:.17g}", f"{m.R_delta:.17g}",
                         f"{m.envelope:.17g}", sr, f"{m.A_fit:.17g}", f"{m.c_fit:.17g}",
                         f"{m.pohozaev_gap:.17g}"])
        return rows


def diagnose(seq: BlowupSequence, opts: DiagnosticOptions | None = None) -> BlowupReport:
    """Run every diagnostic on each member of a family, in index order."""
    from .analytic import system_residual

    opts = opts or DiagnosticOptions()
    model = seq.model
    n = model.n
    split = None
    if seq.limit is not None and seq.bubble_counts is not None:
        split = energy_splitting_residual(seq)
    report = BlowupReport(seq.name, n, model.N)
    for idx, (U, A) in enumerate(zip(seq.maps, seq.couplings)):
        c, mu, i0 = extract_center_weight(U)
        R = l2_concentration_ratio(U, [c], opts.delta)
        env = pointwise_envelope(U, seq.limit, [c])
        half = math.sqrt(mu)
        window = opts.delta / half
        ann = opts.annulus or (0.2 * opts.delta / half, 0.8 * opts.delta / half)
        loc = standard_rescale(U, c, mu, "half", radius=window, N_local=opts.N_local)
        A_fit, c_fit, fres = sharp_asymptotics_fit(loc[i0], n, ann)
        win = min(opts.pohozaev_window, math.pi / mu)
        one = standard_rescale(U, c, mu, "one", radius=win, N_local=opts.N_local)
        lhs, rhs = pohozaev_residual(one[i0], min(opts.pohozaev_radius, 0.5 * win))
        rad = opts.cor81_delta * half
        cor = _cor81_single(U, c, mu, opts.cor81_delta) if rad < math.pi else math.nan
        res = float(np.max(np.abs(system_residual(U, A))))
        report.members.append(MemberDiagnostics(
            idx, float(seq.params[idx]), c, mu, i0, R, env,
            None if split is None else split[idx], A_fit, c_fit, fres, lhs, rhs, cor, res))
    return report
