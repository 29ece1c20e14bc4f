import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ksafc.assembly import assemble_artificial_diffusion, assemble_convection, lumped_masses
from ksafc.limiter import (
    QStrategy,
    affine_interpolant,
    antidiffusive_fluxes,
    compute_q,
    correction_factors,
    led_check,
    limited_antidiffusion,
    linearity_preservation_check,
    write_limiter_csv,
)
from ksafc.mesh import build_uniform_unit_square
from oracles import dense_adjacency, naive_limiter, to_dense


def three_node():
    # node 0 linked to nodes 1 and 2 with d = 1
    D = sp.csr_matrix(np.array([[-2.0, 1.0, 1.0], [1.0, -1.0, 0.0], [1.0, 0.0, -1.0]]))
    return D, np.array([2.0, 0.0, 1.0])


def test_constant_alpha_zero_fluxes():
    mesh = build_uniform_unit_square(3)
    D = assemble_artificial_diffusion(assemble_convection(mesh, np.random.default_rng(0).normal(size=16)))
    fl = antidiffusive_fluxes(D, np.full(16, 2.5))
    assert np.all(fl.values == 0.0)


def test_zero_diffusion_zero_fluxes():
    fl = antidiffusive_fluxes(sp.csr_matrix((4, 4)), np.arange(4.0))
    assert np.all(fl.values == 0.0)


def test_flux_hand_value():
    D = sp.csr_matrix(np.array([[-2.0, 2.0], [2.0, -2.0]]))
    fl = antidiffusive_fluxes(D, np.array([3.0, 1.0]))
    F = to_dense(fl.indptr, fl.indices, fl.values, 2)
    assert F[0, 1] == 4.0 and F[1, 0] == -4.0


def test_flux_dimension_mismatch():
    with pytest.raises(ValueError):
        antidiffusive_fluxes(sp.identity(3, format="csr"), np.ones(2))


def test_q_mass_over_k():
    q = compute_q(None, None, np.array([1e-2]), QStrategy.mass_over_k(1e-4))
    assert q[0] == pytest.approx(100.0, rel=1e-15)
    q = compute_q(None, None, np.array([1e-2]), QStrategy.mass_over_k(), k=1e-4)
    assert q[0] == pytest.approx(100.0, rel=1e-15)


def test_q_gamma_mass_over_nu():
    h = 0.05
    q = compute_q(None, None, np.array([h**2]), QStrategy.gamma_mass_over_nu(h**1.5), gamma=np.array([1.0]))
    assert q[0] == pytest.approx(h**0.5, rel=1e-14)


def test_q_gamma_sum_d_zero_when_no_diffusion():
    mesh = build_uniform_unit_square(3)
    D = assemble_artificial_diffusion(assemble_convection(mesh, np.ones(16)))
    q = compute_q(mesh, D, lumped_masses(mesh), QStrategy.gamma_sum_d())
    assert np.all(q == 0.0)
    # no flux exists at such nodes, so R = 1 there
    work = correction_factors(antidiffusive_fluxes(D, np.arange(16.0)), np.arange(16.0), q)
    assert np.all(work.R_plus == 1.0) and np.all(work.R_minus == 1.0)


def test_qstrategy_parse():
    assert QStrategy.parse("gamma-sum-d") == QStrategy.gamma_sum_d()
    assert QStrategy.parse("gamma-m-nu:0.5") == QStrategy.gamma_mass_over_nu(0.5)
    assert QStrategy.parse("m-over-k") == QStrategy.mass_over_k()
    assert QStrategy.parse(str(QStrategy.gamma_mass_over_nu(0.25))) == QStrategy.gamma_mass_over_nu(0.25)
    for bad in ("nope", "gamma-m-nu", "gamma-m-nu:2", "m-over-k:-1"):
        with pytest.raises(ValueError):
            QStrategy.parse(bad)


def test_zero_fluxes_give_unit_factors():
    D, _ = three_node()
    fl = antidiffusive_fluxes(D, np.ones(3))
    work = correction_factors(fl, np.ones(3), np.ones(3))
    assert np.all(work.a == 1.0)


def test_three_node_hand_execution():
    D, alpha = three_node()
    fl = antidiffusive_fluxes(D, alpha)
    work = correction_factors(fl, alpha, np.array([7.0, 7.0, 7.0]))
    F = to_dense(fl.indptr, fl.indices, fl.values, 3)
    assert F[0, 1] == 2.0 and F[0, 2] == 1.0
    assert work.P_plus[0] == 3.0
    assert work.Q_plus[0] == 0.0
    assert work.R_plus[0] == 0.0
    Ab = to_dense(fl.indptr, fl.indices, work.abar, 3)
    assert Ab[0, 1] == 0.0 and Ab[0, 2] == 0.0
    assert np.all(limited_antidiffusion(np.zeros_like(work.a), fl) == 0.0)


def test_strict_local_max_blocks_outflow():
    mesh = build_uniform_unit_square(4)
    D = assemble_artificial_diffusion(assemble_convection(mesh, mesh.nodes[:, 0] ** 2))
    alpha = np.zeros(mesh.n_nodes)
    i = 6  # interior node
    alpha[i] = 1.0
    fl = antidiffusive_fluxes(D, alpha)
    work = correction_factors(fl, alpha, np.full(mesh.n_nodes, 10.0))
    out = (fl.rows == i) & (fl.values > 0)
    assert out.any()
    assert work.R_plus[i] == 0.0
    assert np.all(work.a[out] == 0.0)


def test_full_antidiffusion_identity():
    mesh = build_uniform_unit_square(4)
    rng = np.random.default_rng(1)
    D = assemble_artificial_diffusion(assemble_convection(mesh, rng.normal(size=mesh.n_nodes)))
    alpha = rng.normal(size=mesh.n_nodes)
    fl = antidiffusive_fluxes(D, alpha)
    fbar = limited_antidiffusion(np.ones_like(fl.values), fl)
    assert np.allclose(fbar, -(D @ alpha), rtol=0, atol=1e-13)


def test_led_check_detects_violation():
    D, alpha = three_node()
    fl = antidiffusive_fluxes(D, alpha)
    work = correction_factors(fl, alpha, np.ones(3))
    assert led_check(work.a, fl, work.Q_plus, work.Q_minus)
    assert not led_check(np.ones_like(work.a), fl, work.Q_plus, work.Q_minus)
    zero = antidiffusive_fluxes(D, np.ones(3))
    w0 = correction_factors(zero, np.ones(3), np.ones(3))
    assert led_check(w0.a, zero, w0.Q_plus, w0.Q_minus)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.sampled_from(["gamma-sum-d", "gamma-m-nu:0.3", "m-over-k:0.001"]))
def test_matches_naive_and_led(seed, M, strategy):
    mesh = build_uniform_unit_square(M)
    rng = np.random.default_rng(seed)
    n = mesh.n_nodes
    D = assemble_artificial_diffusion(assemble_convection(mesh, rng.normal(scale=5, size=n)))
    alpha = rng.normal(size=n)
    q = compute_q(mesh, D, lumped_masses(mesh), QStrategy.parse(strategy))
    fl = antidiffusive_fluxes(D, alpha)
    work = correction_factors(fl, alpha, q)
    f_ref, a_ref, fbar_ref = naive_limiter(dense_adjacency(mesh), D.toarray(), alpha, q)
    adj = dense_adjacency(mesh)
    A = to_dense(fl.indptr, fl.indices, work.a, n)
    assert np.abs(A[adj] - a_ref[adj]).max() <= 1e-14
    assert np.abs(limited_antidiffusion(work.a, fl) - fbar_ref).max() <= 1e-14 * max(1.0, np.abs(f_ref).max())
    assert np.all((work.a >= 0) & (work.a <= 1))
    assert np.array_equal(work.a, work.a[fl.transpose])
    assert led_check(work.a, fl, work.Q_plus, work.Q_minus)


def test_linearity_preservation_examples():
    mesh = build_uniform_unit_square(8)
    rng = np.random.default_rng(5)
    w = np.sin(3 * mesh.nodes[:, 0]) * np.cos(2 * mesh.nodes[:, 1]) + rng.normal(scale=0.1, size=mesh.n_nodes)
    assert linearity_preservation_check(mesh, w, QStrategy.gamma_sum_d(), v=affine_interpolant(mesh, 0, 1, 2))
    assert linearity_preservation_check(mesh, w, QStrategy.gamma_sum_d(), v=np.full(mesh.n_nodes, 3.0))
    assert linearity_preservation_check(mesh, w, QStrategy.gamma_sum_d(), rng=7)


def test_linearity_preservation_rejects_m_over_k():
    mesh = build_uniform_unit_square(3)
    with pytest.raises(ValueError):
        linearity_preservation_check(mesh, np.zeros(16), QStrategy.mass_over_k(0.1))


def test_force_factors():
    D, alpha = three_node()
    fl = antidiffusive_fluxes(D, alpha)
    work = correction_factors(fl, alpha, np.ones(3), force=0.0)
    assert np.all(work.a == 0.0)


def test_write_limiter_csv(tmp_path):
    D, alpha = three_node()
    fl = antidiffusive_fluxes(D, alpha)
    work = correction_factors(fl, alpha, np.ones(3))
    write_limiter_csv(work, tmp_path / "n.csv", tmp_path / "e.csv")
    nodes = np.loadtxt(tmp_path / "n.csv", delimiter=",", skiprows=1)
    edges = np.loadtxt(tmp_path / "e.csv", delimiter=",", skiprows=1)
    assert nodes.shape == (3, 7)
    assert edges.shape == (4, 5)
    assert np.array_equal(nodes[:, 5], work.R_plus)
