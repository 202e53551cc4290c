import math

import numpy as np
import pytest
import scipy.sparse as sp

from edicke import CONST, ExternalConditions, ReducedParams
from edicke import ed
from edicke.params import ParameterError


def norm(mat):
    mat = mat.toarray() if sp.issparse(mat) else mat
    return np.linalg.norm(mat, 2) if mat.size else 0.0


def problem(n, n_max=6, b=0.0, params=None, gz=15.3154296875):
    params = params or ReducedParams(g_lande_z=gz)
    return ed.EdProblem(n, n_max, params, ExternalConditions(1.0, b))


# -- operators ---------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_collective_commutators(n):
    ops = ed.build_operators(problem(n, n_max=1))
    c1 = ops["sz+"] @ ops["sz-"] - ops["sz-"] @ ops["sz+"]
    c2 = ops["sz+"] @ ops["sx-"] - ops["sx-"] @ ops["sz+"]
    assert norm(c1) < 1e-12
    assert norm(c2 - 1j * ops["sy-"]) < 1e-12
    assert norm(ops["sy-"]) > 0.1


def test_boson_commutator_off_cutoff():
    pr = problem(4, n_max=7)
    ops = ed.build_operators(pr)
    a = ops["a"].toarray()
    comm = a @ a.conj().T - a.conj().T @ a
    block = pr.spin_dim ** 2 * pr.n_max  # rows with n < n_max
    # sqrt(k)^2 rounds to k only within an ulp
    np.testing.assert_allclose(comm[:block, :block], np.eye(block), rtol=0, atol=1e-13)
    assert abs(comm[block, block] - (-pr.n_max)) < 1e-12


@pytest.mark.parametrize("n", [4, 8, 12])
def test_casimir(n):
    pr = problem(n, n_max=2)
    ops = ed.build_operators(pr)
    j = n / 4
    for s in ("A", "B"):
        cas = ops[f"sx{s}"] @ ops[f"sx{s}"] + ops[f"sy{s}"] @ ops[f"sy{s}"] \
            + ops[f"sz{s}"] @ ops[f"sz{s}"]
        assert norm(cas - j * (j + 1) * sp.identity(pr.dim)) < 1e-12


def test_exchange_identity():
    ops = ed.build_operators(problem(8, n_max=1))
    lhs = ops["sx+"] @ ops["sx+"] - ops["sx-"] @ ops["sx-"]
    assert norm(lhs - 4 * ops["sxA"] @ ops["sxB"]) < 1e-12


def test_dimension_budget():
    with pytest.raises(ParameterError):
        ed.EdProblem(16, 20, max_dim=100)
    with pytest.raises(ParameterError):
        ed.EdProblem(5)


# -- Hamiltonian -------------------------------------------------------------

@pytest.mark.parametrize("n,b", [(4, 0.0), (8, 0.6), (12, 0.3)])
def test_hermitian_and_parity_symmetric(n, b):
    pr = problem(n, n_max=5, b=b)
    h = ed.build_hamiltonian(pr)
    p = ed.parity_operator(pr)
    assert norm(h - h.conj().T) < 1e-12
    assert norm(h @ p - p @ h) < 1e-10


def test_decoupled_paramagnet_energy():
    for n in (2, 4, 8):
        params = ReducedParams(g=0.0, J=0.0)
        res = ed.ground_state(problem(n, 3, params=params))
        assert res.ground_energy == pytest.approx(-params.omega_er * n / 2, abs=1e-12)


def dense_two_spin_hamiltonian(params, b):
    # printed operator form, original gauge, 3 x 2 x 2 tensor basis
    a = np.diag(np.sqrt([1.0, 2.0]), 1)
    sx = np.array([[0, 1], [1, 0]]) / 2
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    sz = np.array([[1, 0], [0, -1]]) / 2
    i2, i3 = np.eye(2), np.eye(3)

    def op(bos, sa, sb):
        return np.kron(np.kron(bos, sa), sb)

    n0 = 1
    sxp = op(i3, sx, i2) + op(i3, i2, sx)
    sxm = op(i3, sx, i2) - op(i3, i2, sx)
    szp = op(i3, sz, i2) + op(i3, i2, sz)
    szm = op(i3, sz, i2) - op(i3, i2, sz)
    ad = a.conj().T
    wz = params.g_lande_z * CONST.mu_B * b
    return (params.omega_pi * op(ad @ a, i2, i2) + params.omega_er * sxp + wz * szp
            + params.g * math.sqrt(2 / n0) * (1j * op(ad - a, i2, i2)) @ szm
            + params.J * (6 / n0) * (sxp @ sxp + szp @ szp - sxm @ sxm - szm @ szm))


@pytest.mark.parametrize("b", [0.0, 0.4])
def test_two_spin_dense_oracle(b):
    pr = problem(2, n_max=2, b=b)
    oracle = np.linalg.eigvalsh(dense_two_spin_hamiltonian(pr.params, b))
    res = ed.ground_state(pr, check_truncation=False)
    assert res.ground_energy == pytest.approx(oracle[0], abs=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(ed.build_hamiltonian(pr).toarray()),
                               oracle, atol=1e-12)


# -- ground state ------------------------------------------------------------

def test_ground_energy_nonincreasing_in_cutoff():
    energies = [ed.ground_state(problem(4, k), check_truncation=False).ground_energy
                for k in range(1, 12)]
    assert all(b <= a + 1e-13 for a, b in zip(energies, energies[1:]))


def test_truncation_check_raises_for_tiny_cutoff():
    with pytest.raises(ed.TruncationError, match="n_max"):
        ed.ground_state(problem(8, n_max=1))


def test_eigenstates_have_no_y_polarization():
    pr = problem(4, n_max=6, b=0.3)
    ops = ed.build_operators(pr)
    _, vecs = np.linalg.eigh(ed.build_hamiltonian(pr).toarray())
    for name in ("sy+", "sy-"):
        mat = ops[name].toarray()
        vals = np.einsum("ik,ij,jk->k", vecs.conj(), mat, vecs)
        assert np.max(np.abs(vals)) < 1e-10


@pytest.mark.parametrize("n", [4, 8])
def test_ground_state_parity_and_odd_observables(n):
    pr = problem(n, n_max=20)
    res = ed.ground_state(pr)
    assert abs(abs(res.parity_expectation) - 1) < 1e-10
    ops = ed.build_operators(pr)
    h = ed.build_hamiltonian(pr, ops)
    from scipy.sparse.linalg import eigsh
    _, vec = eigsh(h, k=1, which="SA", tol=1e-13)
    assert abs(vec[:, 0] @ (ops["sz-"] @ vec[:, 0])) < 1e-8
    assert res.photon_number >= 0
    assert res.correlator <= 0
    assert 0 <= res.staggered_sq <= 1 + 2 / n and 0 <= res.x_staggered_sq <= 1 + 2 / n


@pytest.fixture(scope="module")
def uncoupled_ground():
    pr = problem(8, n_max=4, params=ReducedParams(g=0.0))
    ops = ed.build_operators(pr)
    e, v = np.linalg.eigh(ed.build_hamiltonian(pr, ops).toarray())
    psi = v[:, 0]
    chan = {k: float(psi @ (ops[k] @ (ops[k] @ psi))) for k in ("sx+", "sz+", "sx-", "sz-")}
    return ed.ground_state(pr), chan


def test_uncoupled_boson_stays_empty(uncoupled_ground):
    res, chan = uncoupled_ground
    assert res.photon_number == 0.0
    assert min(chan["sx-"], chan["sz-"]) > max(chan["sx+"], chan["sz+"])


@pytest.mark.xfail(strict=True, reason="the omega_Er x field favours the perpendicular z "
                   "staggered channel (see decisions ledger)")
def test_uncoupled_x_staggered_channel_largest(uncoupled_ground):
    _, chan = uncoupled_ground
    assert chan["sx-"] == max(chan.values())


# -- thermal -----------------------------------------------------------------

def test_thermal_low_temperature_matches_ground_state():
    pr = problem(4, n_max=8)
    th = ed.thermal_observables(pr, 1e-4)
    gs = ed.ground_state(pr, check_truncation=False)
    for key in ("ground_energy", "photon_number", "staggered_sq", "x_staggered_sq",
                "correlator", "parity_expectation"):
        assert getattr(th, key) == pytest.approx(getattr(gs, key), abs=1e-8)


def test_thermal_infinite_temperature_is_maximally_mixed():
    pr = problem(8, n_max=4)
    th = ed.thermal_observables(pr, 1e6)
    assert th.staggered_sq == pytest.approx(ed.maximally_mixed_staggered_sq(8), rel=1e-4)


def test_maximally_mixed_value_from_trace():
    pr = problem(8, n_max=1)
    ops = ed.build_operators(pr)
    sq = (ops["sz-"] @ ops["sz-"]).diagonal().sum().real / pr.dim / (8 / 2) ** 2
    assert ed.maximally_mixed_staggered_sq(8) == pytest.approx(sq, rel=1e-14)


def test_partition_function_increases_with_temperature():
    pr = problem(4, n_max=6)
    z = [ed.partition_function(pr, t) for t in np.geomspace(0.1, 1e5, 25)]
    assert all(b > a for a, b in zip(z, z[1:]))
    assert 1.0 <= z[0] < 1.01 and z[-1] == pytest.approx(pr.dim, rel=1e-2)


def test_thermal_dense_limit_and_temperature():
    with pytest.raises(ParameterError):
        ed.thermal_observables(problem(16, n_max=60), 1.0)
    with pytest.raises(ParameterError):
        ed.thermal_observables(problem(4, n_max=2), 0.0)
