"""Command-line front end.

    critsys constants --n 3..8
    critsys verify --family remark13 --lambda 1
    critsys minimize --model sphere:n=4 --coupling yamabe-diag:p=2
    critsys solve --model sphere:n=4 --coupling yamabe-diag --seed constant --seed-scale 1.05
    critsys blowup --family sphere_yamabe --n 4 --N 8192 --lambda-grid 1.5,1.1,1.01,1.001
    critsys multiplicity --n 4 --k 3 --T 40

Exit status: 0 when every check passes, 1 on a numerical failure, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analytic as an
from . import blowup as bu
from . import variational as va
from .errors import ConfigurationError, CritsysError
from .fields import PMap
from .geometry import ManifoldModel, ModelKind, sphere_volume
from .report import dumps, write_csv, write_json, write_pmap_csv

log = logging.getLogger("critsys")

COMMANDS = ("constants", "verify", "minimize", "solve", "blowup", "multiplicity")
VERIFY_FAMILIES = ("remark11", "remark13", "scalar_pair", "prop91_pair", "remark91",
                   "remark92", "corollary91", "remark12")

DEFAULTS = {
    "command": None,
    "model": {"kind": "sphere", "n": 4, "N": 1024, "T": None, "R": None},
    "coupling": {"name": "yamabe_diag", "params": {}},
    "family": {"name": "sphere_yamabe", "lambda": 1.5, "lambda_grid": [1.5, 1.1, 1.01, 1.001], "params": {}},
    "solver": {"tol": None, "max_iter": 5000, "step": 0.5, "abs_projection": False,
               "seed": "constant", "seed_scale": 1.0, "Lam": 1.0},
    "diagnostics": {"delta": 0.5, "annulus": None, "N_local": 2048, "cor81_delta": 4.0,
                    "pohozaev_radius": 1.0, "fd_factor": 20.0},
    "multiplicity": {"T": 40.0, "k": 3, "N": 3840},
    "constants": {"n": "3..8"},
    "output": {"dir": None, "csv": False},
}

# sections whose values are free-form dictionaries
_OPEN = {("coupling", "params"), ("family", "params")}


# -- configuration -------------------------------------------------------------

def _merge(base: dict, update: dict, path=()) -> dict:
    for key, val in update.items():
        if key not in base:
            where = ".".join(path + (key,))
            raise ConfigurationError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and (path + (key,)) not in _OPEN:
            if not isinstance(val, dict):
                raise ConfigurationError(f"{'.'.join(path + (key,))} must be a mapping")
            _merge(base[key], val, path + (key,))
        else:
            base[key] = val
    return base


def _scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_spec(text: str) -> tuple[str, dict]:
    """'name:key=val,key=val' -> (name, {key: val})."""
    name, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq or not key:
                raise ConfigurationError(f"malformed parameter {item!r} in {text!r}")
            params[key.strip()] = _scalar(val.strip())
    return name.strip(), params


def parse_n_range(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return [int(x) for x in text]
    s = str(text)
    try:
        if ".." in s:
            a, b = s.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(x) for x in s.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse dimension list {text!r}") from exc


def _grid(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse grid {text!r}") from exc


def build_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config must be a mapping")
        _merge(cfg, loaded)
    if args.command:
        cfg["command"] = args.command
    if cfg["command"] not in COMMANDS:
        raise ConfigurationError(f"command must be one of {', '.join(COMMANDS)}")
    if args.model:
        kind, params = parse_spec(args.model)
        cfg["model"]["kind"] = kind
        _merge(cfg["model"], params, ("model",))
    if args.coupling:
        name, params = parse_spec(args.coupling)
        cfg["coupling"] = {"name": name, "params": params}
    if args.family:
        name, params = parse_spec(args.family)
        cfg["family"]["name"] = name
        if params:
            cfg["family"]["params"] = params
    if args.n is not None:
        if cfg["command"] == "constants":
            cfg["constants"]["n"] = args.n
        else:
            cfg["model"]["n"] = int(args.n)
    for flag, section, key, conv in (
        ("N", "model", "N", int), ("lam", "family", "lambda", float), ("delta", "diagnostics", "delta", float),
        ("tol", "solver", "tol", float), ("seed", "solver", "seed", str), ("seed_scale", "solver", "seed_scale", float),
        ("k", "multiplicity", "k", int), ("T", "multiplicity", "T", float), ("out", "output", "dir", str),
    ):
        val = getattr(args, flag)
        if val is not None:
            try:
                cfg[section][key] = conv(val)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {flag}: {val!r}") from exc
    if args.lambda_grid is not None:
        cfg["family"]["lambda_grid"] = _grid(args.lambda_grid)
    if args.csv:
        cfg["output"]["csv"] = True
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    s = cfg["solver"]
    for sec, key in (("solver", "max_iter"), ("solver", "step"), ("diagnostics", "delta"),
                     ("diagnostics", "N_local"), ("diagnostics", "cor81_delta"), ("diagnostics", "fd_factor"),
                     ("multiplicity", "T"), ("multiplicity", "k"), ("multiplicity", "N")):
        v = cfg[sec][key]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigurationError(f"{sec}.{key} must be a positive number, got {v!r}")
    if s["tol"] is not None and not (isinstance(s["tol"], (int, float)) and s["tol"] > 0):
        raise ConfigurationError("solver.tol must be positive")
    if s["seed"] not in ("constant", "zero", "bubble", "minimizer"):
        raise ConfigurationError("solver.seed must be constant, zero, bubble or minimizer")
    grid = cfg["family"]["lambda_grid"]
    if not isinstance(grid, list) or not grid:
        raise ConfigurationError("family.lambda_grid must be a non-empty list")


def make_model(cfg: dict, **override) -> ManifoldModel:
    m = {**cfg["model"], **override}
    return ManifoldModel(ModelKind.parse(m["kind"]), m["n"], m["N"], m.get("T"), m.get("R"))


def make_coupling(cfg: dict, model: ManifoldModel) -> an.Coupling:
    name = cfg["coupling"]["name"].replace("-", "_").lower()
    params = dict(cfg["coupling"]["params"])
    if name == "yamabe_diag":
        p = int(params.pop("p", 1))
        if params:
            raise ConfigurationError(f"yamabe_diag does not take {sorted(params)}")
        return an.Coupling.scalar_identity(model.yamabe_potential, p)
    return an.named_matrices(name, params, n=model.n)


# -- commands ------------------------------------------------------------------

def _check(name, value, threshold, ok) -> dict:
    return {"name": name, "value": value, "threshold": threshold, "pass": bool(ok)}


def scaled_residual(U: PMap, A: an.Coupling, Lam: float = 1.0) -> float:
    """sup residual in units of h^2 at the bubble scale of U (see README)."""
    n, h = U.model.n, U.model.h
    res = float(np.max(np.abs(an.system_residual(U, A, Lam))))
    M = float(np.max(np.abs(U.values)))
    if M == 0:
        return res / h**2
    return res / (h**2 * M ** ((n + 6) / (n - 2)))


def cmd_constants(cfg: dict) -> dict:
    rows = []
    for n in parse_n_range(cfg["constants"]["n"]):
        if n < 3:
            raise ConfigurationError("dimensions must be >= 3")
        rows.append({"n": n, "K_n": float(f"{an.sharp_constant(n):.12g}"),
                     "omega_n": float(f"{sphere_volume(n):.12g}")})
    return {"table": rows, "checks": []}


def _verify_maps(cfg: dict):
    """(list of (label, U, A, Lam, exact)) for the requested closed-form family."""
    fam = cfg["family"]
    name = fam["name"].replace("-", "_").lower()
    lam = float(fam["lambda"])
    params = dict(fam["params"])
    if name not in VERIFY_FAMILIES:
        raise ConfigurationError(f"unknown family {fam['name']!r}; known: {', '.join(VERIFY_FAMILIES)}")
    if name == "remark13":
        maps, A = an.remark13_family(lam)
        return [(f"map{i + 1}", U, A, -1.0, True) for i, U in enumerate(maps)]
    model = make_model(cfg, kind="sphere", T=None, R=None)
    n, th = model.n, model.nodes
    c0 = an.yamabe_constant(n)
    u = an.sphere_bubble(th, lam, n) if lam > 1 else None

    def need_bubble():
        if u is None:
            raise ConfigurationError(f"family {name} needs lambda > 1")
        return u

    if name == "remark11":
        U, A = an.remark11_system(lam, model=model)
        return [("system", U, A, 1.0, False)]
    if name == "scalar_pair":
        lam2 = float(params.get("lambda2", 2.0 * lam))
        beta = float(params.get("beta", 0.1))
        f1 = PMap(need_bubble(), model)[0]
        f2 = PMap(an.sphere_bubble(th, lam2, n), model)[0]
        A = an.coupling_from_scalars(f1, f2, c0, c0, beta)
        return [("pair", PMap.from_fields([f1, f2]), A, 1.0, False)]
    if name == "prop91_pair":
        beta = float(params.get("beta", 1e-3))
        s = int(params.get("s", 1))
        f1 = PMap(need_bubble(), model)[0]
        f2 = PMap(np.full(model.N, an.constant_yamabe_solution(n)), model)[0]
        A = an.blowup_pair_coupling(f1, f2, beta, s, c0, c0)
        return [("pair", PMap.from_fields([f1, f2]), A, 1.0, False)]
    if name == "remark91":
        A = an.named_matrices("remark91", params or {"a": c0 / 2, "b": c0 / 2, "c": c0 / 2}, n=n)
        return [("pair", PMap(np.stack([need_bubble()] * 2), model), A, 1.0, False)]
    if name == "remark92":
        d = float(params.get("d", 1.0))
        default = {"a": c0 / 2, "b": c0 / 2, "c": c0 / 2 + d, "d": d, "e": d + c0}
        A = an.named_matrices("remark92", params or default, n=n)
        return [("triple", PMap(np.stack([need_bubble()] * 3), model), A, 1.0, False)]
    if name == "remark12":
        alpha = float(params.get("alpha", 0.5))
        beta = float(params.get("beta", 1.0))
        A = an.named_matrices("remark12", {"h": c0, "alpha": alpha, "beta": beta}, n=n)
        b = need_bubble()
        return [("triple", PMap(np.stack([b, b, np.zeros_like(b)]), model), A, 1.0, False)]
    # corollary91: the t = 0 member carries the blowing-up copies of the Yamabe equation
    t = float(params.get("t", 0.0))
    Amat = params.get("A", [[1.0, 0.0], [0.0, 1.0]])
    ev = np.linalg.eigvalsh(np.asarray(Amat, dtype=float))
    if not np.all(ev > 0):
        raise ConfigurationError("corollary91 needs A positive definite")
    A = an.named_matrices("corollary91", {"t": t, "A": Amat}, n=n)
    if t != 0.0:
        return [("coercivity", None, A, 1.0, False)]
    p = A.p
    return [("copies", PMap(np.stack([need_bubble()] * p), model), A, 1.0, False)]


def cmd_verify(cfg: dict) -> dict:
    items = _verify_maps(cfg)
    tol = cfg["solver"]["tol"] or 1e-12
    factor = cfg["diagnostics"]["fd_factor"]
    out, checks = [], []
    for label, U, A, Lam, exact in items:
        flags = an.structure_tests(A)
        if U is None:
            lam_A = va.coercivity_lambda(A, make_model(cfg, kind="sphere", T=None, R=None))
            out.append({"label": label, "coercivity_lambda": lam_A, "structure": flags})
            checks.append(_check(f"{label}:coercive", lam_A, 0.0, lam_A > 0))
            continue
        res = float(np.max(np.abs(an.system_residual(U, A, Lam))))
        entry = {"label": label, "residual_sup": res, "structure": flags, "Lam": Lam}
        if exact:
            checks.append(_check(f"{label}:residual", res, tol, res <= tol))
        else:
            sr = scaled_residual(U, A, Lam)
            entry["scaled_residual"] = sr
            entry["h"] = U.model.h
            checks.append(_check(f"{label}:scaled_residual", sr, factor, sr <= factor))
        out.append(entry)
    return {"family": cfg["family"]["name"], "lambda": cfg["family"]["lambda"], "results": out, "checks": checks}


def _solution_csv(cfg: dict, U: PMap, stem: str) -> list:
    if cfg["output"]["csv"] and cfg["output"]["dir"]:
        return [str(write_pmap_csv(U, Path(cfg["output"]["dir"]) / f"{stem}.csv").name)]
    return []


def cmd_minimize(cfg: dict) -> dict:
    model = make_model(cfg)
    A = make_coupling(cfg, model)
    s = cfg["solver"]
    opts = va.MinimizeOptions(tol=s["tol"] or 1e-8, max_iter=int(s["max_iter"]), step=float(s["step"]),
                              abs_projection=bool(s["abs_projection"]))
    if s["seed"] == "bubble":
        opts.init = va.bubble_seed(model, A.p)
    rep = va.minimize_mu(A, model, opts)
    K2 = an.sharp_constant(model.n) ** -2
    out = rep.to_dict()
    out.update({"sharp_bound": K2, "relative_to_sharp": rep.value / K2,
                "files": _solution_csv(cfg, rep.solution, "minimizer")})
    out["checks"] = [
        _check("converged", rep.residual_sup, opts.tol, rep.converged),
        _check("below_sharp_bound", rep.value, K2, rep.value <= K2 * (1 + 1e-9)),
    ]
    return out


def cmd_solve(cfg: dict) -> dict:
    model = make_model(cfg)
    A = make_coupling(cfg, model)
    s = cfg["solver"]
    n, p = model.n, A.p
    seed, scale = s["seed"], float(s["seed_scale"])
    if seed == "zero":
        U0 = PMap(np.zeros((p, model.N)), model)
    elif seed == "constant":
        pot = float(np.mean(np.linalg.eigvalsh(np.asarray(A.at_nodes(1))[:, :, 0])))
        if not pot > 0 or not float(s["Lam"]) > 0:
            raise ConfigurationError("constant seed needs a positive mean potential and Lam > 0")
        c = (pot / s["Lam"]) ** ((n - 2) / 4.0)
        U0 = PMap(scale * c * np.ones((p, model.N)), model)
    elif seed == "bubble":
        if model.kind is not ModelKind.SPHERE:
            raise ConfigurationError("bubble seed is defined on the sphere model")
        lam = float(cfg["family"]["lambda"])
        U0 = PMap(scale * np.tile(an.sphere_bubble(model.nodes, lam, n), (p, 1)), model)
    else:
        m = va.minimize_mu(A, model, va.MinimizeOptions())
        U0 = va.rescale_to_solution(m.solution, m.value) * (1.0 / float(s["Lam"])) ** ((n - 2) / 4.0)
    opts = va.NewtonOptions(tol=s["tol"] or 1e-10, max_iter=min(int(s["max_iter"]), 200), Lam=float(s["Lam"]))
    rep = va.newton_solve(A, model, U0, opts)
    out = rep.to_dict()
    out["files"] = _solution_csv(cfg, rep.solution, "solution")
    out["checks"] = [_check("converged", rep.residual_sup, opts.tol, rep.converged)]
    return out


def cmd_blowup(cfg: dict) -> dict:
    model = make_model(cfg, kind="sphere", T=None, R=None)
    fam = cfg["family"]
    name = fam["name"].replace("-", "_").lower()
    params = dict(fam["params"])
    kw = {}
    if "s" in params:
        kw["s"] = int(params.pop("s"))
    if "abc" in params:
        kw["abc"] = tuple(params.pop("abc"))
    if params:
        raise ConfigurationError(f"unused family parameters {sorted(params)}")
    seq = bu.build_family(name, model, fam["lambda_grid"], **kw)
    d = cfg["diagnostics"]
    opts = bu.DiagnosticOptions(delta=float(d["delta"]), annulus=tuple(d["annulus"]) if d["annulus"] else None,
                                N_local=int(d["N_local"]), cor81_delta=float(d["cor81_delta"]),
                                pohozaev_radius=float(d["pohozaev_radius"]))
    rep = bu.diagnose(seq, opts)
    out = rep.to_dict()
    files = []
    if cfg["output"]["dir"]:
        files.append(write_csv(rep.CSV_COLUMNS, rep.csv_rows(), Path(cfg["output"]["dir"]) / "blowup.csv").name)
    out["files"] = files
    factor = d["fd_factor"]
    checks = [
        _check("weights_positive", min(m.mu for m in rep.members), 0.0, all(m.mu > 0 for m in rep.members)),
        _check("R_delta_in_unit_interval", max(m.R_delta for m in rep.members), 1.0,
               all(0.0 <= m.R_delta <= 1.0 for m in rep.members)),
    ]
    for i, (U, A) in enumerate(zip(seq.maps, seq.couplings)):
        sr = scaled_residual(U, A)
        checks.append(_check(f"member{i}:scaled_residual", sr, factor, sr <= factor))
    out["checks"] = checks
    return out


def cmd_multiplicity(cfg: dict) -> dict:
    mc = cfg["multiplicity"]
    n = int(cfg["model"]["n"])
    base = make_model(cfg, kind="circle", T=float(mc["T"]), R=None, N=max(16, int(mc["N"])))
    A = make_coupling(cfg, base)
    s = cfg["solver"]
    opts = va.MinimizeOptions(tol=s["tol"] or 1e-8, max_iter=int(s["max_iter"]), step=float(s["step"]))
    rows = va.multiplicity_energies(A, n, float(mc["T"]), int(mc["k"]), opts, N=int(mc["N"]))
    E = [r.energy for r in rows]
    h = rows[0].h
    factor = cfg["diagnostics"]["fd_factor"]
    checks = [
        _check("energies_strictly_increasing", E, None, all(a < b for a, b in zip(E, E[1:]))),
        _check("identity_gap", max(r.identity_gap for r in rows), 1e-10, all(r.identity_gap <= 1e-10 for r in rows)),
        _check("lift_residual", max(r.lift_residual for r in rows), factor * h**2,
               all(r.lift_residual <= factor * h**2 for r in rows)),
        _check("converged", None, None, all(r.converged for r in rows)),
    ]
    return {"table": [r.to_dict() for r in rows], "checks": checks}


DISPATCH = {
    "constants": cmd_constants, "verify": cmd_verify, "minimize": cmd_minimize,
    "solve": cmd_solve, "blowup": cmd_blowup, "multiplicity": cmd_multiplicity,
}


def run(cfg: dict) -> tuple[int, dict]:
    """Execute a resolved configuration; returns (exit status, report)."""
    report = {"command": cfg["command"], "config": cfg}
    try:
        body = DISPATCH[cfg["command"]](cfg)
    except ConfigurationError as exc:
        report["error"] = str(exc)
        return 2, report
    except CritsysError as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        return 1, report
    report.update(body)
    ok = all(c["pass"] for c in body.get("checks", []))
    report["passed"] = ok
    return (0 if ok else 1), report


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="critsys", description="Critical elliptic systems on model manifolds.")
    p.add_argument("command", nargs="?", choices=COMMANDS)
    p.add_argument("--config", help="YAML or JSON configuration file")
    p.add_argument("--out", help="output directory for report.json and CSV files")
    p.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    p.add_argument("--n", help="dimension (constants: a list such as 3..8)")
    p.add_argument("--N", help="grid node count")
    p.add_argument("--lambda-grid", dest="lambda_grid", help="comma-separated family parameters")
    p.add_argument("--lambda", dest="lam", help="single family parameter")
    p.add_argument("--delta", help="concentration radius")
    p.add_argument("--tol", help="solver or verification tolerance")
    p.add_argument("--model", help="model spec, e.g. sphere:n=4,N=2048 or circle:n=4,T=5")
    p.add_argument("--coupling", help="coupling spec, e.g. yamabe-diag:p=2 or remark21:alpha=0.5")
    p.add_argument("--family", help="family name, optionally with parameters")
    p.add_argument("--seed", help="Newton seed: constant, zero, bubble or minimizer")
    p.add_argument("--seed-scale", dest="seed_scale", help="multiplier applied to the seed")
    p.add_argument("--k", help="multiplicity: number of quotients")
    p.add_argument("--T", help="multiplicity: circle radius")
    p.add_argument("--csv", action="store_true", help="also dump solution fields as CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.print_defaults:
        sys.stdout.write(yaml.safe_dump(DEFAULTS, sort_keys=True))
        return 0
    try:
        cfg = build_config(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    status, report = run(cfg)
    if "error" in report:
        print(report["error"], file=sys.stderr)
    text = dumps(report)
    if cfg["output"]["dir"]:
        try:
            write_json(report, Path(cfg["output"]["dir"]) / "report.json")
        except OSError as exc:
            print(str(exc), file=sys.stderr)
            return 1
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
