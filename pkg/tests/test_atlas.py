import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from edicke import CONST, ExternalConditions, ReducedParams
from edicke import atlas
from edicke.atlas import OrderParameters, classify
from edicke.params import ParameterError, SolverSettings

T_AXIS = np.linspace(0.5, 6, 12)
H_AXIS = np.linspace(0, 1.5, 12)
KLN2 = CONST.k_B * math.log(2)


def op(ez=0.0, ex=0.0, cond=0.0, mz=0.0):
    return OrderParameters(ez, ex, cond, mz)


@pytest.fixture(scope="module")
def coarse(paper_params, settings):
    return atlas.sweep(paper_params, T_AXIS, H_AXIS, settings=settings)


# -- classify ----------------------------------------------------------------

def test_classify_examples():
    assert classify(op()) == "N"
    assert classify(op(ez=0.8, cond=0.3)) == "S"
    assert classify(op(ex=0.9, cond=1e-5, ez=1e-5)) == "A"


def test_classify_rejects_bad_eps():
    for eps in (0.0, 0.5, -1e-3):
        with pytest.raises(ParameterError):
            classify(op(), eps)


@hsettings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(1, 100))
def test_classify_scale_never_moves_ordered_to_n(ez, ex, cond, factor):
    before = classify(op(ez, ex, cond))
    after = classify(op(ez * factor, ex * factor, cond * factor))
    if before in ("S", "A"):
        assert after != "N"


# -- sweeps ------------------------------------------------------------------

def test_sweep_complete_with_metadata(coarse, paper_params):
    assert coarse.shape == (12, 12)
    assert coarse.converged.all()
    assert set(np.unique(coarse.labels)) == {"N", "S", "A"}
    assert coarse.metadata["g_lande_z"] == paper_params.g_lande_z
    assert "settings" in coarse.metadata
    for name in ("ez", "ex", "condensate"):
        arr = getattr(coarse, name)
        assert np.all((arr >= 0) & (arr <= 1))


@pytest.fixture(scope="module")
def uncoupled(paper_params, settings):
    return atlas.sweep(paper_params.with_(g=0.0), T_AXIS, H_AXIS, settings=settings)


def test_no_condensate_without_coupling(uncoupled):
    assert np.max(uncoupled.condensate) == 0


@pytest.mark.xfail(strict=True, reason="J alone orders the staggered moment along z near "
                   "H = 0, which the classifier labels S (see decisions ledger)")
def test_no_superradiant_region_without_coupling(uncoupled):
    assert "S" not in uncoupled.labels


def test_no_atomic_region_without_exchange(paper_params, settings):
    pm = atlas.sweep(paper_params.with_(J=0.0), T_AXIS, H_AXIS, settings=settings)
    assert "A" not in pm.labels


def test_single_phase_map_has_no_boundaries(paper_params, settings):
    pm = atlas.sweep(paper_params, np.linspace(10, 20, 6), H_AXIS, settings=settings)
    bs = atlas.extract_boundaries(pm)
    assert bs.boundaries == [] and bs.triple_point is None


def test_boundaries_invariant_under_transpose(coarse):
    a = atlas.extract_boundaries(coarse)
    b = atlas.extract_boundaries(coarse.transposed())
    assert a.point_set() == b.point_set()
    assert a.triple_point == pytest.approx(b.triple_point)


def test_triple_point_inside_grid(coarse):
    t, h = atlas.extract_boundaries(coarse).triple_point
    assert T_AXIS[0] <= t <= T_AXIS[-1] and H_AXIS[0] <= h <= H_AXIS[-1]


def test_refinement_changes_labels_only_near_boundaries(coarse, paper_params, settings):
    fine = atlas.sweep(paper_params, np.linspace(0.5, 6, 23), np.linspace(0, 1.5, 23),
                       settings=settings)
    lab = coarse.labels
    n0, n1 = lab.shape
    for i in range(n0):
        for j in range(n1):
            neigh = lab[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
            if np.all(neigh == lab[i, j]):
                assert fine.labels[2 * i, 2 * j] == lab[i, j]


def test_worker_count_does_not_change_results(paper_params):
    t, h = np.linspace(0.5, 6, 5), np.linspace(0, 1.5, 4)
    one = atlas.sweep(paper_params, t, h, settings=SolverSettings(workers=1))
    two = atlas.sweep(paper_params, t, h, settings=SolverSettings(workers=2))
    np.testing.assert_array_equal(one.labels, two.labels)
    np.testing.assert_array_equal(one.free_energy, two.free_energy)
    np.testing.assert_array_equal(one.states, two.states)


def test_too_many_failures_raise_sweep_error(paper_params):
    bad = SolverSettings(workers=1, max_iter=1, tol=1e-300)
    with pytest.raises(atlas.SweepError) as exc:
        atlas.sweep(paper_params, T_AXIS[:3], H_AXIS[:3], settings=bad)
    pm = exc.value.phase_map
    assert pm is not None and np.all(pm.labels[~pm.converged] == "?")


@pytest.mark.parametrize("grid", [[1.0, 1.0, 2.0], [2.0, 1.0], [1.0]])
def test_grid_must_increase(paper_params, grid):
    with pytest.raises(ParameterError):
        atlas.sweep(paper_params, grid, H_AXIS)


def test_nonpositive_temperature_rejected(paper_params):
    with pytest.raises(ParameterError):
        atlas.sweep(paper_params, [-1.0, 1.0], H_AXIS)


# -- calibration -------------------------------------------------------------

@pytest.fixture(scope="module")
def calibration(settings):
    return atlas.calibrate_gz(ReducedParams(), settings=settings)


def test_calibration_hits_target(calibration, gz):
    assert calibration.g_lande_z == gz
    assert abs(calibration.critical_field - 1.0) < 0.01


def test_calibration_reproducible(calibration, settings):
    hc = atlas.critical_field_an(ReducedParams(g_lande_z=calibration.g_lande_z),
                                 settings=settings)
    assert abs(hc - 1.0) < 0.01


def test_critical_field_decreases_with_gz(calibration):
    hist = sorted(calibration.history)
    fields = [h for _, h in hist]
    assert all(a >= b for a, b in zip(fields, fields[1:]))


def test_calibration_without_bracket_fails(settings):
    with pytest.raises(ValueError, match="no bracket"):
        atlas.calibrate_gz(ReducedParams(), bracket=(0.5, 1.0), settings=settings)


# -- thermodynamics ----------------------------------------------------------

def test_high_temperature_entropy_is_ln2(paper_params, settings):
    s = atlas.entropy(paper_params, ExternalConditions(1e5), settings=settings)
    assert s == pytest.approx(KLN2, rel=1e-4)


def test_low_temperature_entropy_small(paper_params, settings):
    s = atlas.entropy(paper_params, ExternalConditions(0.05), settings=settings)
    assert s < 0.01 * KLN2


def test_entropy_identity_at_2K(paper_params, settings):
    cond = ExternalConditions(2.0, 0.3)
    s_fd = atlas.entropy(paper_params, cond, settings=settings)
    assert s_fd == pytest.approx(atlas.entropy_identity(paper_params, cond, settings),
                                 rel=1e-3)


def test_entropy_needs_positive_lower_endpoint(paper_params):
    with pytest.raises(ParameterError):
        atlas.entropy(paper_params, ExternalConditions(0.005), dT=0.01)


def test_mce_in_normal_phase_has_no_extrema(paper_params, settings):
    tr = atlas.mce_trace(paper_params, 10.0, settings=settings)
    assert atlas.local_maxima(tr.fields, tr.slope) == []
    assert atlas.local_maxima(tr.fields, -tr.slope) == []
    assert np.all(np.isfinite(tr.slope))


def test_mce_trace_conserves_entropy(paper_params, settings):
    tr = atlas.mce_trace(paper_params, 3.2, h_stop=0.5, dH=0.05, settings=settings)
    s = [atlas.state_entropy(paper_params, t, b, settings)
         for t, b in zip(tr.temperatures, tr.fields)]
    np.testing.assert_allclose(s, tr.entropy, rtol=1e-8)


def test_mce_rejects_bad_inputs(paper_params):
    with pytest.raises(ParameterError):
        atlas.mce_trace(paper_params, -1.0)
    with pytest.raises(ParameterError):
        atlas.mce_trace(paper_params, 1.0, dH=0.0)
