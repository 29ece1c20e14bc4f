import numpy as np
import pytest

from ksafc.assembly import Operators
from ksafc.limiter import QStrategy
from ksafc.mesh import build_uniform_unit_square
from ksafc.problems import initial_state
from ksafc.stepper import Scheme, State, StepFailure, StepParams, mass, min_nodal, run, step


@pytest.fixture(scope="module")
def small():
    mesh = build_uniform_unit_square(12)
    return mesh, Operators.build(mesh)


def blowup_k(M):
    return 1e-5 * (np.sqrt(2) / M) ** 1.01


@pytest.mark.parametrize("scheme", list(Scheme))
def test_constant_state_is_steady(small, scheme):
    mesh, ops = small
    a = np.full(mesh.n_nodes, 2.5)
    new, rep = step(State(a, a), StepParams(k=0.01, scheme=scheme), ops)
    assert np.allclose(new.alpha, 2.5, rtol=1e-13, atol=0)
    assert np.allclose(new.beta, 2.5, rtol=1e-13, atol=0)


def test_afc_forced_zero_equals_low_order(small):
    mesh, ops = small
    s0 = initial_state(mesh, "gauss5")
    low, _ = step(s0, StepParams(k=1e-3, scheme="low"), ops)
    afc, _ = step(s0, StepParams(k=1e-3, scheme="afc", force_factors=0.0), ops)
    assert np.array_equal(low.alpha, afc.alpha)
    assert np.array_equal(low.beta, afc.beta)


@pytest.mark.parametrize("scheme", ["low", "afc"])
def test_positivity_regime_step(small, scheme):
    mesh, ops = small
    s0 = initial_state(mesh, "blowup")
    new, rep = step(s0, StepParams(k=blowup_k(12), scheme=scheme), ops)
    assert rep.min_alpha >= -1e-12 and rep.min_beta >= -1e-12


def test_zero_steps_returns_initial(small):
    mesh, ops = small
    s0 = initial_state(mesh, "sincos")
    res = run(s0, StepParams(k=0.01), ops, 0)
    assert res.final is s0
    assert len(res.masses) == 1 and res.mass_drift == 0.0


@pytest.fixture(scope="module")
def m60():
    mesh = build_uniform_unit_square(60)
    return mesh, Operators.build(mesh)


@pytest.mark.parametrize("scheme", ["low", "afc"])
def test_blowup_positive_and_conservative(m60, scheme):
    # coarser meshes under-resolve the blow-up data and the AFC fixed point stalls
    mesh, ops = m60
    s0 = initial_state(mesh, "blowup")
    res = run(s0, StepParams(k=blowup_k(60), scheme=scheme), ops, 63)
    assert res.min_alpha.min() >= -1e-12 * s0.alpha.max()
    assert res.mass_drift <= 1e-10
    assert mass(res.final, ops.lumped) > 0


@pytest.mark.parametrize("q", ["gamma-sum-d", "gamma-m-nu:0.5", "m-over-k"])
def test_afc_q_strategies_conserve_mass(small, q):
    mesh, ops = small
    s0 = initial_state(mesh, "gauss5")
    res = run(s0, StepParams(k=1e-3, scheme="afc", q_strategy=QStrategy.parse(q)), ops, 5)
    assert res.mass_drift <= 1e-12


def test_mass_of_unit_state(small):
    mesh, ops = small
    one = np.ones(mesh.n_nodes)
    assert mass(State(one, one), ops.lumped) == pytest.approx(1.0, rel=1e-14)


def test_mass_equals_lumped_l1(small):
    mesh, ops = small
    s = initial_state(mesh, "blowup")
    assert mass(s, ops.lumped) == pytest.approx(float(np.dot(ops.lumped, np.abs(s.alpha))), rel=1e-15)


def test_min_nodal():
    s = State(np.array([3.0, 1.0, 2.0]), np.array([0.0, -1.0, 5.0]))
    assert min_nodal(s) == (1.0, -1.0, 1, 1)
    assert min_nodal(State(np.arange(3.0), np.arange(3.0)))[0] >= 0


def test_fixed_point_failure_reported(small):
    mesh, ops = small
    s0 = initial_state(mesh, "blowup")
    with pytest.raises(StepFailure, match="fixed point") as info:
        step(s0, StepParams(k=1e-3, fp_max_iters=2, scheme="low"), ops)
    assert info.value.report.iterations == 2


def test_increments_contract(small):
    mesh, ops = small
    s0 = initial_state(mesh, "gauss5")
    _, rep = step(s0, StepParams(k=1e-3), ops)
    inc = np.array(rep.increments)
    assert inc[-1] < 1e-8
    assert np.all(inc[1:] < inc[:-1])


@pytest.mark.parametrize("solver", ["direct", "auto"])
def test_solvers_agree(small, solver):
    mesh, ops = small
    s0 = initial_state(mesh, "gauss5")
    ref, _ = step(s0, StepParams(k=1e-3, solver="direct"), ops)
    new, _ = step(s0, StepParams(k=1e-3, solver=solver), ops)
    assert np.abs(new.alpha - ref.alpha).max() <= 1e-8 * np.abs(ref.alpha).max()


def test_state_validation():
    with pytest.raises(ValueError):
        State(np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        State(np.array([1.0, np.nan]), np.ones(2))


@pytest.mark.parametrize("kw", [dict(k=0.0), dict(k=1.0, fp_tol=0.0), dict(k=1.0, fp_max_iters=0),
                                dict(k=1.0, coupling="x"), dict(k=1.0, solver="x"), dict(k=1.0, scheme="x")])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        StepParams(**kw)


def test_state_size_mismatch(small):
    _, ops = small
    with pytest.raises(ValueError):
        step(State(np.ones(4), np.ones(4)), StepParams(k=0.1), ops)
