import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from critsys.analytic import (
    BubbleParams,
    Coupling,
    euclid_bubble_radial,
    manifold_bubble,
    sharp_constant,
    sphere_bubble,
    sphere_bubble_weight,
    structure_tests,
    system_residual,
)
from critsys.blowup import (
    BlowupReport,
    BlowupSequence,
    DiagnosticOptions,
    build_family,
    corollary81_ratio,
    diagnose,
    energy_splitting_residual,
    extract_center_weight,
    l2_concentration_ratio,
    local_balance_checks,
    pointwise_envelope,
    pohozaev_residual,
    sharp_asymptotics_fit,
    standard_rescale,
)
from critsys.cli import scaled_residual
from critsys.errors import ConfigurationError, DomainError, ShapeError
from critsys.fields import Field, PMap
from critsys.geometry import build_model, sphere_volume

LAMS = [1.5, 1.1, 1.01, 1.001]


@pytest.fixture(scope="module")
def s4():
    return build_model("sphere", 4, N=8192)[0]


@pytest.fixture(scope="module")
def family4(s4):
    return build_family("sphere_yamabe", s4, LAMS)


def _unit(n):
    return sharp_constant(n) ** -n / n


# -- extraction ----------------------------------------------------------------------

def test_extract_from_manifold_bubble():
    model = build_model("sphere", 4, N=1024)[0]
    mu = 0.05
    B = manifold_bubble(BubbleParams(0.0, mu, 4), model)
    B = Field(np.where(model.nodes == model.nodes[0], mu ** -1.0, B.values), model)
    c, m, i = extract_center_weight(PMap(B.values, model))
    assert c == model.nodes[0] and model.snap_center(c) == 0.0
    assert m == pytest.approx(mu, rel=1e-14)
    assert i == 0


def test_extract_interior_center():
    model = build_model("sphere", 5, N=1024)[0]
    xc = model.nodes[300]
    B = manifold_bubble(BubbleParams(xc, 0.1, 5), model)
    c, mu, _ = extract_center_weight(PMap(np.stack([0.5 * B.values, B.values]), model))
    assert c == xc
    assert mu == pytest.approx(0.1, rel=1e-12)


def test_extract_weight_decreases_along_family(family4):
    mus = [extract_center_weight(U)[1] for U in family4.maps]
    assert all(b < a for a, b in zip(mus, mus[1:]))


def test_extract_constant_map_tie_break():
    model = build_model("sphere", 4, N=64)[0]
    c, mu, i = extract_center_weight(PMap(np.full((2, model.N), 3.0), model))
    assert c == model.nodes[0] and i == 0
    assert mu == pytest.approx(3.0 ** -1.0)


def test_extract_rejects_zero_map():
    model = build_model("sphere", 4, N=64)[0]
    with pytest.raises(DomainError):
        extract_center_weight(PMap(np.zeros(model.N), model))


# -- energy splitting --------------------------------------------------------------------

def test_splitting_single_bubble(family4):
    res = energy_splitting_residual(family4)
    assert res[2] <= 1e-2 * _unit(4)


def test_splitting_copies_of_exact_solution():
    model = build_model("sphere", 6, N=64)[0]
    c = (6 * 4 / 4) ** 1.0
    U = PMap(np.full(model.N, c), model)
    A = Coupling.scalar_identity(6.0, 1)
    seq = BlowupSequence([U, U], [A, A], model, [1.0, 2.0], U, A, [0])
    res_sup = float(np.max(np.abs(system_residual(U, A))))
    assert max(energy_splitting_residual(seq)) <= 10 * res_sup + 1e-12


def test_splitting_pair_with_constant_partner(s4):
    seq = build_family("prop91_pair", s4, LAMS)
    # the cross terms cancel exactly, so only discretization error is left
    res = energy_splitting_residual(seq)
    assert max(res) <= 1e-3 * _unit(4)


def test_splitting_additivity(s4, family4):
    # two independent bubbles at opposite poles, one per component
    maps = [PMap(np.stack([U.values[0], U.values[0][::-1]]), s4) for U in family4.maps]
    A = Coupling.scalar_identity(2.0, 2)
    seq = BlowupSequence(maps, [A] * 4, s4, LAMS, PMap(np.zeros((2, s4.N)), s4), A, [1, 1])
    assert seq.k == 2
    res = energy_splitting_residual(seq)
    assert res[2] <= 1e-2 * 2 * _unit(4)


def test_splitting_needs_declarations(s4, family4):
    seq = BlowupSequence(family4.maps, family4.couplings, s4, LAMS)
    with pytest.raises(ConfigurationError):
        energy_splitting_residual(seq)


def test_sequence_validation(s4, family4):
    with pytest.raises(ConfigurationError):
        BlowupSequence(family4.maps[:3], family4.couplings[:3], s4, [1.5, 1.01, 1.1])
    other = build_model("sphere", 4, N=64)[0]
    with pytest.raises(ShapeError):
        BlowupSequence([PMap(np.ones(64), other)], [family4.couplings[0]], s4, [1.0])


# -- concentration --------------------------------------------------------------------------

def _oracle_ratio(n, lam, delta):
    f = lambda t: sphere_bubble(t, lam, n) ** 2 * math.sin(t) ** (n - 1)
    pts = [1e-4, 1e-3, 1e-2, 0.1]
    tot = integrate.quad(f, 0, math.pi, points=pts, limit=200)[0]
    out = integrate.quad(f, delta, math.pi, limit=200)[0]
    return out / tot


@pytest.mark.parametrize("n", [3, 4])
def test_l2_ratio_matches_quadrature_oracle(n):
    model = build_model("sphere", n, N=8192)[0]
    for lam in LAMS:
        U = PMap(sphere_bubble(model.nodes, lam, n), model)
        got = l2_concentration_ratio(U, [0.0], 0.5)
        assert got == pytest.approx(_oracle_ratio(n, lam, 0.5), abs=2e-3)


@pytest.mark.parametrize("delta", [0.2, 0.5, 1.0])
def test_l2_ratio_strictly_decreasing(family4, delta):
    r = [l2_concentration_ratio(U, [0.0], delta) for U in family4.maps]
    assert all(b < a for a, b in zip(r, r[1:]))
    assert all(0.0 <= x <= 1.0 for x in r)


def test_l2_ratio_truncated_bubble(s4):
    u = sphere_bubble(s4.nodes, 1.01, 4) * (s4.nodes < 0.4)
    assert l2_concentration_ratio(PMap(u, s4), [0.0], 0.5) <= 1e-3


def test_l2_ratio_rejects_large_delta(family4):
    with pytest.raises(DomainError):
        l2_concentration_ratio(family4.maps[0], [0.0], math.pi)


def test_envelope_examples(s4, family4):
    U = family4.maps[0]
    assert pointwise_envelope(U, U, [0.0]) == 0.0
    env = [pointwise_envelope(V, family4.limit, [0.0]) for V in family4.maps]
    assert max(env) / min(env) < 2.0
    with pytest.raises(DomainError):
        pointwise_envelope(U, None, [])


def test_envelope_exterior_decay(family4):
    U = family4.maps[-1]
    c, mu, _ = extract_center_weight(U)
    for scale in (mu, math.sqrt(mu)):
        vals = [pointwise_envelope(U, None, [c], exclude_radius=R * scale) for R in (1, 4, 16)]
        assert vals[0] > vals[1] > vals[2]


# -- local balance ---------------------------------------------------------------------------

def test_balance_stable_away_from_concentration(family4):
    rs = [local_balance_checks(U, A, math.pi / 2, 0.3, assume_coercive=True)
          for U, A in zip(family4.maps, family4.couplings)]
    for key in ("sup_bound", "l1_balance"):
        ratios = [r[key][2] for r in rs]
        assert max(ratios) / min(ratios) <= 2.0


def test_balance_constant_map_closed_form():
    n = 4
    model = build_model("sphere", n, N=4096)[0]
    U = PMap(np.full(model.N, 2.0), model)
    r = local_balance_checks(U, None, 0.0, 0.5, s=2, assume_coercive=True)
    cap = lambda rad: float(model.weights[model.nodes < rad].sum())
    assert r["sup_bound"][0] == 2.0
    assert r["sup_bound"][1] == pytest.approx(2.0 * math.sqrt(cap(1.0)), rel=1e-12)
    V = model.weights.sum()
    assert r["l1_balance"][2] == pytest.approx(2.0 * V / (2.0**3 * V), rel=1e-12)
    assert r["gradient_balance"][0] == 0.0
    assert r["gradient_balance"][1] == pytest.approx((4.0 + 4.0 * 4.0) * cap(1.0), rel=1e-12)
    assert "l1_balance" not in local_balance_checks(U, None, 0.0, 0.5)


def test_balance_rejects_ball_outside():
    model = build_model("sphere", 4, N=256)[0]
    U = PMap(np.ones(model.N), model)
    with pytest.raises(DomainError):
        local_balance_checks(U, None, 1.0, 0.6)


# -- rescaling ---------------------------------------------------------------------------------

def test_rescale_manifold_bubble_to_standard(s4):
    mu = 1e-3
    B = manifold_bubble(BubbleParams(0.0, mu, 4), s4)
    loc = standard_rescale(PMap(B.values, s4), 0.0, mu, "one", radius=5.0)
    assert np.max(np.abs(loc.values[0] - euclid_bubble_radial(loc.model.nodes, 1.0, 4))) <= 0.02


def test_rescale_flat_identity():
    model = build_model("ball", 3, {"R": 2.0}, N=512)[0]
    f = np.cos(model.nodes)
    loc = standard_rescale(PMap(f, model), 0.0, 1.0, "one", radius=1.5, N_local=300)
    assert_allclose(loc.values[0], np.cos(loc.model.nodes), atol=model.h**2)


def test_extract_rescale_extract(family4):
    U = family4.maps[-1]
    c, mu, _ = extract_center_weight(U)
    loc = standard_rescale(U, c, mu, "one", radius=5.0)
    assert loc.values.max() == pytest.approx(1.0, rel=1e-12)
    c2, mu2, _ = extract_center_weight(loc)
    assert loc.model.snap_center(c2) == 0.0
    assert mu2 == pytest.approx(1.0, rel=1e-3)


def test_rescale_rejects(family4):
    U = family4.maps[0]
    with pytest.raises(DomainError):
        standard_rescale(U, 1.0, 0.1)
    with pytest.raises(DomainError):
        standard_rescale(U, 0.0, 0.1, radius=100.0)
    with pytest.raises(DomainError):
        standard_rescale(U, 0.0, 0.1, power="two")


# -- sharp asymptotics -----------------------------------------------------------------------------

def test_fit_synthetic():
    model = build_model("ball", 4, {"R": 2.0}, N=1024)[0]
    f = Field(3.0 / model.nodes**2 + 5.0, model)
    A, c, rel = sharp_asymptotics_fit(f, 4, (0.2, 1.5))
    assert A == pytest.approx(3.0, abs=1e-8)
    assert c == pytest.approx(5.0, abs=1e-8)
    assert rel <= 1e-10


def test_fit_rejects_degenerate_annulus():
    model = build_model("ball", 4, {"R": 2.0}, N=64)[0]
    f = Field(np.ones(model.N), model)
    with pytest.raises(DomainError):
        sharp_asymptotics_fit(f, 4, (1.0, 0.5))
    with pytest.raises(DomainError):
        sharp_asymptotics_fit(f, 4, (1.0, 1.01))


def _family_fit(U, delta=0.5, annulus=None):
    c, mu, i = extract_center_weight(U)
    half = math.sqrt(mu)
    loc = standard_rescale(U, c, mu, "half", radius=delta / half)
    ann = annulus or (0.2 * delta / half, 0.8 * delta / half)
    return sharp_asymptotics_fit(loc[i], U.model.n, ann), loc, ann


def test_fit_sphere_family(family4):
    (A, c, rel), _, _ = _family_fit(family4.maps[-1])
    assert A > 0 and rel <= 0.05


def test_fit_stable_under_annulus_perturbation(s4):
    # a non-degenerate fit: the profile is already close to A / r^2 + c
    U = PMap(sphere_bubble(s4.nodes, 1.0001, 4), s4)
    (A, c, rel), loc, (r1, r2) = _family_fit(U)
    assert rel <= 0.01
    for f1, f2 in ((1.1, 1.0), (0.9, 1.0), (1.0, 0.9), (1.0, 1.1), (1.1, 0.9), (0.9, 1.1)):
        A2, c2, _ = sharp_asymptotics_fit(loc[0], 4, (f1 * r1, f2 * r2))
        assert abs(A2 - A) <= 0.01 * abs(A)


def test_fit_trivially_coupled_pair(s4):
    seq = build_family("prop91_pair", s4, [1.001])
    U = seq.maps[0]
    c, mu, i = extract_center_weight(U)
    half = math.sqrt(mu)
    loc = standard_rescale(U, c, mu, "half", radius=0.5 / half)
    ann = (0.1 / half, 0.4 / half)
    A_blow = sharp_asymptotics_fit(loc[0], 4, ann)[0]
    A_fixed = sharp_asymptotics_fit(loc[1], 4, ann)[0]
    assert abs(A_fixed) <= 1e-3 * A_blow


# -- Pohozaev ---------------------------------------------------------------------------------------

def test_pohozaev_constant():
    model = build_model("ball", 4, {"R": 2.0}, N=1024)[0]
    lhs, rhs = pohozaev_residual(Field.constant(3.0, model), 1.0)
    assert abs(lhs) <= 1e-12 and abs(rhs) <= 1e-12


@pytest.mark.parametrize("n", [3, 4, 5])
def test_pohozaev_affine(n):
    model = build_model("ball", n, {"R": 2.0}, N=1024)[0]
    lhs, rhs = pohozaev_residual(Field(model.nodes, model), 1.0, ell=1)
    assert abs(lhs) <= 1e-12
    assert abs(rhs) <= 1e-12
    # boundary terms separately: -(n/2) w/n + w/2 with w the sphere area
    w = sphere_volume(n - 1)
    assert -(n / 2) * (w / n) + w / 2 == pytest.approx(0.0, abs=1e-14)


def test_pohozaev_bubble_and_order():
    gaps = []
    for N in (2048, 4096, 8192):
        model = build_model("ball", 4, {"R": 2.0}, N=N)[0]
        u = Field(euclid_bubble_radial(model.nodes, 1.0, 4), model)
        lhs, rhs = pohozaev_residual(u, 1.0)
        gaps.append(abs(lhs - rhs))
    assert gaps[-1] <= 50 * model.h**2 * abs(lhs)
    for a, b in zip(gaps, gaps[1:]):
        assert 3.0 <= a / b <= 5.0


def test_pohozaev_rejects():
    model = build_model("sphere", 4, N=64)[0]
    with pytest.raises(DomainError):
        pohozaev_residual(Field.constant(1.0, model), 1.0)
    ball = build_model("ball", 4, {"R": 1.0}, N=64)[0]
    with pytest.raises(DomainError):
        pohozaev_residual(Field.constant(1.0, ball), 2.0)


# -- weighted L^2 lower bound -------------------------------------------------------------------------

def test_lower_bound_ratio_spread():
    model = build_model("sphere", 5, N=8192)[0]
    seq = build_family("sphere_yamabe", model, LAMS)
    r = corollary81_ratio(seq, 4.0)
    assert min(r) > 0
    assert max(r) / min(r) <= 4.0


def test_lower_bound_ratio_manifold_bubble():
    model = build_model("sphere", 5, N=8192)[0]
    B = manifold_bubble(BubbleParams(0.0, 1e-3, 5), model)
    seq = BlowupSequence([PMap(B.values, model)], [Coupling.scalar_identity(3.75, 1)], model, [1.0])
    r = corollary81_ratio(seq)[0]
    assert 0 < r < math.inf


def test_lower_bound_ratio_rejects_tiny_weight():
    model = build_model("sphere", 4, N=64)[0]
    U = PMap(np.full(model.N, 1e13), model)
    seq = BlowupSequence([U], [Coupling.scalar_identity(2.0, 1)], model, [1.0])
    with pytest.raises(DomainError):
        corollary81_ratio(seq)


# -- families and the report ------------------------------------------------------------------------------

def test_family_sphere_yamabe(family4):
    assert len(family4) == 4 and family4.k == 1
    for U, A in zip(family4.maps, family4.couplings):
        assert scaled_residual(U, A) <= 20


@pytest.mark.parametrize("s", [1, -1])
def test_family_pair(s4, s):
    seq = build_family("prop91_pair", s4, LAMS, s=s)
    for U, A in zip(seq.maps, seq.couplings):
        assert scaled_residual(U, A) <= 20
        flags = structure_tests(A)
        assert flags["fully_coupled"]
        assert flags["cooperative"] == (s == 1)


def test_family_pair_beta_schedule(s4):
    seq = build_family("prop91_pair", s4, [1.1], beta=lambda mu: 0.5 * mu)
    mu = sphere_bubble_weight(1.1, 4)
    assert seq.couplings[0].entries[0, 1].max() == pytest.approx(0.5 * mu)
    with pytest.raises(ConfigurationError):
        build_family("prop91_pair", s4, [1.1], beta=lambda mu: 0.0)


def test_family_triple(s4):
    seq = build_family("remark91_triple", s4, LAMS, abc=(1.0, 1.0, 1.0))
    for U, A in zip(seq.maps, seq.couplings):
        assert scaled_residual(U, A) <= 20
    assert seq.k == 2


def test_family_rejects(s4):
    with pytest.raises(ConfigurationError):
        build_family("nonsense", s4, LAMS)
    with pytest.raises(ConfigurationError):
        build_family("sphere_yamabe", build_model("ball", 4, {"R": 1.0}, N=64)[0], LAMS)


def test_diagnose_report(family4):
    rep = diagnose(family4, DiagnosticOptions())
    assert isinstance(rep, BlowupReport)
    assert len(rep.members) == 4 and len(rep.csv_rows()) == 4
    assert all(m.mu > 0 and 0 <= m.R_delta <= 1 for m in rep.members)
    assert all(len(row) == len(BlowupReport.CSV_COLUMNS) for row in rep.csv_rows())
    assert rep.members[-1].A_fit > 0
