"""Functionals, constrained minimization, Newton solving and the quotient-lift harness.

Energies use the face-based Dirichlet form of the model together with the
midpoint weights, so the assembled gradient is the exact derivative of the
discrete functional. Newton solving uses the pointwise finite-difference
Laplacian instead.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analytic import Coupling, sharp_constant, system_residual
from .errors import DomainError, NumericError, ShapeError, SolverError
from .fields import Field, PMap, critical_exponent, dirichlet_form, grad_energy, lq_integral, lq_norm
from .geometry import ManifoldModel, ModelKind

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    solution: PMap
    value: float
    residual_sup: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "residual_sup": float(self.residual_sup),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "history": [[int(i), float(v), float(g)] for i, v, g in self.history],
        }


def _check(U: PMap, A: Coupling) -> None:
    if U.p != A.p:
        raise ShapeError(f"map has {U.p} components but the coupling is {A.p}x{A.p}")
    if not A.is_constant:
        A.at_nodes(U.model.N)


# -- functionals ---------------------------------------------------------------

def functional_IA(U: PMap, A: Coupling) -> float:
    """sum_i int |grad u_i|^2 + sum_ij int A_ij u_i u_j."""
    _check(U, A)
    v = U.values
    return dirichlet_form(v, U.model) + float(np.sum((v * A.apply(v)) @ U.model.weights))


def gradient_IA(U: PMap, A: Coupling) -> np.ndarray:
    """Derivative of functional_IA with respect to the nodal values, shape (p, N)."""
    _check(U, A)
    v = U.values
    G = U.model.stiffness_matrix
    return 2.0 * ((G @ v.T).T + U.model.weights * A.apply(v))


def constraint_phi(U: PMap) -> float:
    """sum_i int |u_i|^{2*}."""
    return lq_integral(U, critical_exponent(U.model.n))


def free_energy(U: PMap, A: Coupling) -> float:
    """(1/2) I_A(U) - (1/2*) Phi(U)."""
    return 0.5 * functional_IA(U, A) - constraint_phi(U) / critical_exponent(U.model.n)


def gradient_residual(U: PMap, A: Coupling, Lam: float = 1.0) -> PMap:
    """Delta u_i + sum_j A_ij u_j - Lam |u_i|^{2*-2} u_i with the finite-difference Laplacian."""
    _check(U, A)
    return PMap(system_residual(U, A, Lam), U.model)


def variational_residual(U: PMap, A: Coupling, Lam: float) -> np.ndarray:
    """Euler-Lagrange residual of the discrete functional, per unit volume."""
    q = critical_exponent(U.model.n)
    v = U.values
    g = 0.5 * gradient_IA(U, A) / U.model.weights
    return g - Lam * np.abs(v) ** (q - 2.0) * v


def normalize(values: np.ndarray, model: ManifoldModel) -> np.ndarray:
    q = critical_exponent(model.n)
    phi = float(np.sum(np.abs(values) ** q @ model.weights))
    if not phi > 0 or not np.isfinite(phi):
        raise NumericError("cannot normalize a vanishing or non-finite map")
    return values / phi ** (1.0 / q)


# -- minimization --------------------------------------------------------------

@dataclass
class MinimizeOptions:
    init: Optional[PMap] = None
    tol: float = 1e-8
    max_iter: int = 5000
    step: float = 0.5
    armijo: float = 1e-4
    abs_projection: bool = False
    stall_iter: int = 200
    max_step: float = 0.75
    polish: bool = True


def default_init(model: ManifoldModel, p: int) -> np.ndarray:
    """Constant positive map with slightly unequal components.

    Exactly equal components sit on a symmetric critical set for p >= 2, so
    the k-th component is scaled by 1 - 0.1 k to let the flow leave it.
    """
    scales = 1.0 - 0.1 * (np.arange(p) % 10)
    return scales[:, None] * np.ones((p, model.N))


def bubble_seed(model: ManifoldModel, p: int, center: float | None = None, width: float = 1.0) -> PMap:
    """A localized positive seed, one sech^{(n-2)/2} bump per component."""
    if center is None:
        center = 0.0 if model.kind is not ModelKind.CIRCLE else model.length / 2
    d = model.distance(center)
    prof = np.cosh(d / width) ** (-(model.n - 2) / 2.0)
    scales = 1.0 - 0.1 * (np.arange(p) % 10)
    return PMap(scales[:, None] * prof[None, :], model)


def _sobolev_preconditioner(model: ManifoldModel, A: Coupling):
    sigma = 1.0 + float(np.max(A.sup_abs().sum(axis=1)))
    P = (model.stiffness_matrix + sp.diags(sigma * model.weights)).tocsc()
    return spla.splu(P)


def minimize_mu(A: Coupling, model: ManifoldModel, opts: MinimizeOptions | None = None) -> SolveReport:
    """Minimize I_A over maps with Phi(U) = 1 by a projected, preconditioned gradient flow.

    Each step moves along the H^1-preconditioned gradient of I_A / Phi^{2/2*},
    renormalizes to Phi = 1, and backtracks until the Armijo condition holds.
    """
    opts = opts or MinimizeOptions()
    p = A.p
    if opts.abs_projection and not _neg_cooperative(A):
        raise DomainError("the |U| projection requires -A cooperative")
    if opts.init is not None:
        if opts.init.model != model:
            raise ShapeError("initial map lives on a different model")
        _check(opts.init, A)
        v = np.array(opts.init.values)
    else:
        v = default_init(model, p)
    if opts.abs_projection:
        v = np.abs(v)
    v = normalize(v, model)
    lu = _sobolev_preconditioner(model, A)
    w = model.weights
    q = critical_exponent(model.n)

    def value(vals):
        return functional_IA(PMap(vals, model), A)

    def descent(vals, I):
        g = gradient_IA(PMap(vals, model), A) - 2.0 * I * w * np.abs(vals) ** (q - 2.0) * vals
        d = lu.solve(np.ascontiguousarray(g.T)).T
        return g, d

    I = value(v)
    tau = opts.step
    history = [(0, I, float("nan"))]
    converged = False
    best, stall = I, 0
    it = 0
    res = float(np.max(np.abs(variational_residual(PMap(v, model), A, I))))
    for it in range(1, opts.max_iter + 1):
        if res <= opts.tol:
            converged = True
            it -= 1
            break
        g, d = descent(v, I)
        slope = float(np.sum(g * d))
        if not np.isfinite(slope):
            raise NumericError("non-finite gradient in the flow")
        accepted = False
        for _ in range(60):
            trial = v - tau * d
            if opts.abs_projection:
                trial = np.abs(trial)
            trial = normalize(trial, model)
            It = value(trial)
            if not np.isfinite(It):
                raise NumericError("non-finite functional value in the line search")
            if It <= I - opts.armijo * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            history.append((it, I, math.sqrt(max(slope, 0.0))))
            break
        v, I = trial, It
        tau = min(2.0 * tau, opts.max_step)
        res = float(np.max(np.abs(variational_residual(PMap(v, model), A, I))))
        history.append((it, I, math.sqrt(max(slope, 0.0))))
        if I < best - 1e-15 * abs(best):
            best, stall = I, 0
        else:
            stall += 1
            if stall >= opts.stall_iter:
                break
    else:
        converged = res <= opts.tol
    if not converged and opts.polish:
        v, I, res = _polish(v, I, res, A, model, opts)
        converged = res <= opts.tol
        history.append((it, I, float("nan")))
    log.debug("minimize_mu: %d iterations, value %.15g, residual %.3g", it, I, res)
    return SolveReport(PMap(v, model), I, res, it, converged, history)


def _polish(v, I, res, A: Coupling, model: ManifoldModel, opts: MinimizeOptions, steps: int = 20):
    """Newton iteration on the discrete Euler-Lagrange system bordered by Phi = 1.

    The flow crawls along nearly flat directions (the discrete remnant of
    conformal invariance on the sphere); this finishes the job. A Newton
    iterate is kept only if it lowers the residual and leaves the value
    unchanged up to 1e-9 relative (so it cannot jump to another critical point).
    """
    p, N = v.shape
    w = model.weights
    q = critical_exponent(model.n)
    G = model.stiffness_matrix
    An = A.at_nodes(N)
    for _ in range(steps):
        if res <= opts.tol:
            break
        pw = np.abs(v) ** (q - 2.0)
        R = (G @ v.T).T + w * A.apply(v) - I * w * pw * v
        blocks = [[None] * p for _ in range(p)]
        for i in range(p):
            for j in range(p):
                d = w * An[i, j]
                if i == j:
                    blocks[i][j] = G + sp.diags(d - I * (q - 1.0) * w * pw[i])
                else:
                    blocks[i][j] = sp.diags(d)
        col = sp.csc_matrix((-(w * pw * v)).ravel()[:, None])
        row = sp.csr_matrix((q * w * pw * v).ravel()[None, :])
        phi = float(np.sum(np.abs(v) ** q @ w))
        J = sp.bmat([[sp.bmat(blocks), col], [row, None]], format="csc")
        rhs = -np.concatenate([R.ravel(), [phi - 1.0]])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                delta = spla.splu(J).solve(rhs)
        except (RuntimeError, spla.MatrixRankWarning):
            break
        if not np.all(np.isfinite(delta)):
            break
        trial = normalize(v + delta[:-1].reshape(p, N), model)
        It = functional_IA(PMap(trial, model), A)
        rt = float(np.max(np.abs(variational_residual(PMap(trial, model), A, It))))
        if not (rt < res and It <= I + 1e-9 * abs(I) + 1e-300):
            break
        v, I, res = trial, It, rt
    return v, I, res


def _neg_cooperative(A: Coupling) -> bool:
    p = A.p
    e = A.entries if not A.is_constant else A.entries[:, :, None]
    off = ~np.eye(p, dtype=bool)
    return bool(np.all(e[off] <= 0))


def rescale_to_solution(U: PMap, mu: float, n: int | None = None) -> PMap:
    """Multiply by mu^{(n-2)/4}: turns a solution with Lam = mu into one with Lam = 1."""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu!r}")
    n = U.model.n if n is None else n
    return U * mu ** ((n - 2) / 4.0)


# -- Newton --------------------------------------------------------------------

@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    max_halvings: int = 30
    Lam: float = 1.0


def _jacobian(U: PMap, A: Coupling, Lam: float) -> sp.csc_matrix:
    model = U.model
    p, N = U.p, model.N
    q = critical_exponent(model.n)
    L = model.laplacian_matrix
    An = A.at_nodes(N)
    blocks = [[None] * p for _ in range(p)]
    for i in range(p):
        for j in range(p):
            d = np.array(An[i, j], dtype=float)
            if i == j:
                d = d - Lam * (q - 1.0) * np.abs(U.values[i]) ** (q - 2.0)
                blocks[i][j] = L + sp.diags(d)
            else:
                blocks[i][j] = sp.diags(d)
    return sp.bmat(blocks, format="csc")


def newton_solve(A: Coupling, model: ManifoldModel, U0: PMap, opts: NewtonOptions | None = None) -> SolveReport:
    """Damped Newton iteration on the finite-difference residual of the system."""
    opts = opts or NewtonOptions()
    if U0.model != model:
        raise ShapeError("seed lives on a different model")
    _check(U0, A)
    U = U0
    F = system_residual(U, A, opts.Lam)
    res = float(np.max(np.abs(F)))
    nrm = float(np.linalg.norm(F))
    history = [(0, nrm, res)]
    it = 0
    converged = res <= opts.tol
    while not converged and it < opts.max_iter:
        it += 1
        J = _jacobian(U, A, opts.Lam)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                delta = spla.splu(J).solve(-F.ravel())
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SolverError(f"singular Jacobian at Newton iteration {it}: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise SolverError(f"singular Jacobian at Newton iteration {it}")
        delta = delta.reshape(U.values.shape)
        step = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = PMap(U.values + step * delta, model)
            Ft = system_residual(trial, A, opts.Lam)
            nt = float(np.linalg.norm(Ft))
            if nt < nrm:
                break
            step *= 0.5
        else:
            history.append((it, nrm, res))
            break
        U, F, nrm = trial, Ft, nt
        res = float(np.max(np.abs(F)))
        history.append((it, nrm, res))
        converged = res <= opts.tol
    return SolveReport(U, nrm, res, it, converged, history)


# -- coercivity ----------------------------------------------------------------

def coercivity_lambda(A: Coupling, model: ManifoldModel) -> float:
    """Smallest eigenvalue of Delta^p + A with respect to sum_i int u_i^2.

    Solved as the generalized problem (G + W A) x = lam W x by shift-invert
    Lanczos with a shift below the spectrum.
    """
    p, N = A.p, model.N
    w = model.weights
    G = model.stiffness_matrix
    An = A.at_nodes(N)
    blocks = [[(G if i == j else None) for j in range(p)] for i in range(p)]
    K = sp.bmat(blocks, format="csr") if p > 1 else G.tocsr()
    K = K + sp.bmat([[sp.diags(w * An[i, j]) for j in range(p)] for i in range(p)], format="csr")
    M = sp.diags(np.tile(w, p))
    lower = float(np.min(np.linalg.eigvalsh(np.moveaxis(An, 2, 0))))
    sigma = lower - 1.0
    try:
        vals = spla.eigsh(K.tocsc(), k=1, M=M.tocsc(), sigma=sigma, which="LM", return_eigenvectors=False)
    except spla.ArpackError as exc:
        raise NumericError(f"eigen-iteration failed: {exc}") from exc
    return float(vals[0])


# -- multiplicity via quotient lifts ------------------------------------------

@dataclass
class MultiplicityEntry:
    alpha: int
    mu: float
    energy: float
    identity_gap: float
    lift_residual: float
    lift_energy_gap: float
    converged: bool
    h: float

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


def _lcm_upto(k: int) -> int:
    out = 1
    for a in range(2, k + 1):
        out = out * a // math.gcd(out, a)
    return out


def multiplicity_energies(A_base: Coupling, n: int, T: float, k: int, opts: MinimizeOptions | None = None,
                          N: int = 4096, seed_width: float = 1.0) -> list[MultiplicityEntry]:
    """Minimize on S^1(T/alpha) x S^{n-1}, lift alpha-fold to S^1(T) and rescale.

    The big-circle grid has N nodes (rounded up to a multiple of lcm(1..k)),
    and the alpha-th small circle uses N/alpha nodes so the lift is exact.
    E_alpha is the integral of sum_i |u_i|^{2*} of the lifted solution.
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    if not A_base.is_constant:
        raise DomainError("the lift needs a coupling invariant along the circle")
    opts = opts or MinimizeOptions()
    step = _lcm_upto(k)
    N = int(math.ceil(N / step) * step)
    big = ManifoldModel(ModelKind.CIRCLE, n, N, T=T)
    out = []
    for alpha in range(1, k + 1):
        small = ManifoldModel(ModelKind.CIRCLE, n, N // alpha, T=T / alpha)
        o = MinimizeOptions(**{**opts.__dict__, "init": bubble_seed(small, A_base.p, width=seed_width)})
        rep = minimize_mu(A_base, small, o)
        mu = rep.value
        if not mu > 0:
            raise NumericError(f"non-positive minimum {mu} on the quotient with alpha={alpha}")
        lifted = PMap(np.tile(rep.solution.values, (1, alpha)), big)
        W = rescale_to_solution(lifted, mu, n)
        small_sol = rescale_to_solution(rep.solution, mu, n)
        E = constraint_phi(W)
        identity_gap = abs(E ** (2.0 / n) - alpha ** (2.0 / n) * mu) / (alpha ** (2.0 / n) * mu)
        lift_res = float(np.max(np.abs(system_residual(W, A_base, 1.0))))
        fe_big, fe_small = free_energy(W, A_base), free_energy(small_sol, A_base)
        lift_gap = abs(fe_big - alpha * fe_small) / abs(alpha * fe_small)
        out.append(MultiplicityEntry(alpha, mu, E, identity_gap, lift_res, lift_gap, rep.converged, big.h))
    return out


# -- the product-circle Sobolev inequality -------------------------------------

def hv_inequality_check(u: Field, model: ManifoldModel | None = None):
    """K_n^{-2} ||u||_{2*}^2 <= ||grad u||^2 + ((n-2)^2/4 + 1/(4 t^2)) ||u||^2 on S^1(t) x S^{n-1}.

    Returns (lhs, rhs, holds) with a closure allowance of 10 h^2 times rhs.
    """
    model = u.model if model is None else model
    if model.kind is not ModelKind.CIRCLE:
        raise DomainError("this inequality is stated on S^1(t) x S^{n-1}")
    if model != u.model:
        raise ShapeError("field lives on a different model")
    n = model.n
    q = critical_exponent(n)
    t = model.T
    lhs = sharp_constant(n) ** -2 * lq_norm(u, q) ** 2
    rhs = grad_energy(u) + ((n - 2) ** 2 / 4.0 + 1.0 / (4.0 * t**2)) * lq_norm(u, 2.0) ** 2
    return lhs, rhs, bool(lhs <= rhs + 10.0 * model.h**2 * rhs)
