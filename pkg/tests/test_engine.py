import numpy as np
import pytest

from biphoton.apertures import circular, double_slit, identity
from biphoton.engine import (ExecutionPlan, MaskSet, NearFieldCache, SliceRequest, config_hash, consistency_scan,
                             resampled_difference, run_pipeline)
from biphoton.errors import ConfigurationError, ContractError, ResourceError
from biphoton.grid import MOMENTUM, POSITION, make_grid
from biphoton.oracles import paired_region, plane_wave_far, relative_error, thin_crystal_near
from biphoton.phasematch import make_model
from biphoton.pump import PumpSpec

pytestmark = pytest.mark.filterwarnings("ignore:phase-matching ring:RuntimeWarning")

GRID = make_grid(24, 180e-6)
PUMP = PumpSpec("tem01", 60e-6)
PM = make_model()
SLIT = double_slit(75e-6, 30e-6)
DISC = circular(15e-6, center=(0.0, -30e-6))


def spill_plan(tmp_path, **kw):
    return ExecutionPlan("spill_to_disk", cache_directory=str(tmp_path), **kw)


def test_stages_are_recorded_in_order():
    res = run_pipeline(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC))
    assert list(res.stages) == ["p1", "p1_masked", "p2", "p2_masked", "p3"]
    assert res.map("p2", "signal").domain == POSITION
    assert res.map("p3", "idler").domain == MOMENTUM
    # identity T masks copy the p1 maps
    np.testing.assert_array_equal(res.map("p1_masked", "signal").values, res.map("p1", "signal").values)
    prov = res.provenance
    assert prov["mode"] == "in_core" and prov["hash"] == config_hash(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC),
                                                                     "in_core")


def test_far_field_power_is_conserved_without_masks():
    res = run_pipeline(PUMP, PM, GRID)
    p1 = res.map("p1", "signal").total()
    assert res.map("p2", "signal").total() == pytest.approx(p1, rel=1e-10)
    assert res.map("p3", "idler").total() == pytest.approx(p1, rel=1e-10)


def test_runs_are_bit_identical():
    a = run_pipeline(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC))
    b = run_pipeline(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC))
    for st in a.stages:
        np.testing.assert_array_equal(a.map(st, "signal").values, b.map(st, "signal").values)


@pytest.mark.parametrize("n", [16, 24])
def test_spill_matches_in_core(tmp_path, n):
    g = make_grid(n, 180e-6)
    masks = MaskSet(N_s=SLIT, N_i=DISC) if n == 24 else MaskSet()
    core = run_pipeline(PUMP, PM, g, masks, check=False)
    spill = run_pipeline(PUMP, PM, g, masks, spill_plan(tmp_path, slab=4), check=False)
    for st in core.stages:
        for ph in ("signal", "idler"):
            c, s = core.map(st, ph).values, spill.map(st, ph).values
            assert np.abs(c - s).max() <= 1e-12 * c.max()
    assert list(tmp_path.iterdir()) == []


def test_snapshots_and_slices():
    q = GRID.q
    req = SliceRequest("p1", "idler", (q[5], q[16]))
    res = run_pipeline(PUMP, PM, GRID, slices=[req], snapshots=["p1"], stop_after="p2")
    snap = res.snapshots["p1"]
    assert snap.shape == (24,) * 4
    np.testing.assert_array_equal(res.slices[req.key].values, np.abs(snap[:, :, 5, 16]) ** 2)


def test_snapshots_need_in_core(tmp_path):
    with pytest.raises(ConfigurationError):
        run_pipeline(PUMP, PM, GRID, plan=spill_plan(tmp_path), snapshots=["p1"])


def test_budget_refusal_before_allocation():
    with pytest.raises(ResourceError, match="budget"):
        run_pipeline(PUMP, PM, GRID, plan=ExecutionPlan("in_core", memory_budget=1000))


def test_ring_cut_warning():
    with pytest.warns(RuntimeWarning, match="ring is cut"):
        run_pipeline(PUMP, PM, GRID, stop_after="p1")


def test_near_field_cache_matches_full_pipeline():
    full = run_pipeline(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC))
    with NearFieldCache(PUMP, PM, GRID, chunk=7) as cache:
        q = GRID.q[3:20]
        cond = cache.conditioned_maps(SLIT, DISC, cut_q=q)
    near, far = full.map("p2_masked", "signal").values, full.map("p3", "signal").values
    assert np.abs(cond.near.values - near).max() <= 1e-10 * near.max()
    assert np.abs(cond.far.values - far).max() <= 1e-10 * far.max()
    c = GRID.n // 2
    assert np.abs(cond.cut - far[c, 3:20]).max() <= 1e-10 * far.max()


def test_near_field_cache_spill_matches_in_core(tmp_path):
    with NearFieldCache(PUMP, PM, GRID) as a:
        ca = a.conditioned_maps(SLIT, DISC)
    with NearFieldCache(PUMP, PM, GRID, plan=spill_plan(tmp_path, slab=6)) as b:
        cb = b.conditioned_maps(SLIT, DISC)
    np.testing.assert_allclose(cb.near.values, ca.near.values, rtol=1e-12, atol=1e-12 * ca.near.values.max())
    np.testing.assert_allclose(cb.far.values, ca.far.values, rtol=1e-12, atol=1e-12 * ca.far.values.max())


# ---------------------------------------------------------------- oracles

def test_plane_wave_far_field_is_exact_on_paired_lattice():
    g = make_grid(32, 180e-6)
    pw = PumpSpec("plane_wave")
    req = SliceRequest("p1", "idler", (0.0, 0.0))
    res = run_pipeline(pw, PM, g, slices=[req])
    oracle = plane_wave_far(PM, g)
    err = relative_error(res.map("p3", "signal"), oracle.c1, region=paired_region(g))
    assert err.max < 1e-12
    s = res.slices[req.key].values
    c = g.n // 2
    off = np.ones_like(s, bool)
    off[c, c] = False
    assert np.all(s[off] == 0.0) and s[c, c] > 0
    assert oracle.c2((c, c), (c, c)) == pytest.approx(oracle.c1.values[c, c])
    assert oracle.c2((c, c), (c + 1, c)) == 0.0


def test_thin_crystal_near_field_follows_the_pump():
    g = make_grid(48, 360e-6)
    pump = PumpSpec("tem01", 140e-6)
    res = run_pipeline(pump, PM.with_length(0.0), g, stop_after="p2")
    err = relative_error(res.map("p2", "signal"), thin_crystal_near(pump, g).c1)
    assert err.max < 0.025


def test_relative_error_needs_matching_lattices():
    a = thin_crystal_near(PUMP, GRID).c1
    b = thin_crystal_near(PUMP, make_grid(26, 180e-6)).c1
    with pytest.raises(ContractError):
        relative_error(a, b)
    assert relative_error(a, a).max == pytest.approx(0.0, abs=1e-15)
    scaled = type(a)(3.0 * a.values, a.grid, a.domain, a.photon)
    r = relative_error(scaled, a)
    assert r.scale == pytest.approx(1 / 3) and r.max < 1e-15


def test_resampled_difference_of_identical_maps_is_zero():
    a = thin_crystal_near(PUMP, GRID).c1
    assert resampled_difference(a, a) == 0.0


def test_consistency_scan_decreases_for_a_resolved_beam():
    r = consistency_scan(PumpSpec("tem01", 140e-6), PM.with_length(0.0), 360e-6, [32, 48, 64])
    assert r.monotone and r.values[1] < r.values[0]


def test_consistency_scan_flags_an_under_resolved_beam():
    # a 20 um TEM01 beam on a 1 mm window is not resolved until n >> 48
    r = consistency_scan(PumpSpec("tem01", 20e-6), PM.with_length(0.0), 1e-3, [16, 24, 32, 48], check=False)
    assert not r.monotone


def test_amplitude_matches_pointwise_formula():
    g = make_grid(8, 80e-6)
    pump = PumpSpec("gaussian", 40e-6)
    from biphoton.engine import build_biphoton_amplitude
    from biphoton.pump import pump_field_on_sum_lattice

    f = build_biphoton_amplitude(pump, PM, g, check=False)
    lut = pump_field_on_sum_lattice(pump, g, check=False)
    q = g.q
    for idx in [(0, 0, 0, 0), (1, 5, 7, 2), (4, 4, 4, 4), (7, 0, 3, 6)]:
        qs, qi = (q[idx[0]], q[idx[1]]), (q[idx[2]], q[idx[3]])
        expect = complex(lut(qs, qi)) * float(PM.phase_matching(qs, qi))
        assert f.array[idx] == pytest.approx(expect, rel=1e-13, abs=1e-300)


def test_power_accounting_across_stages():
    res = run_pipeline(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC, T_s=circular(3e5, photon="signal",
                                                                                 plane=MOMENTUM)))
    tot = {st: res.map(st, "signal").total() for st in res.stages}
    assert tot["p1_masked"] <= tot["p1"]
    assert tot["p2"] == pytest.approx(tot["p1_masked"], rel=1e-10)
    assert tot["p2_masked"] <= tot["p2"]
    assert tot["p3"] == pytest.approx(tot["p2_masked"], rel=1e-10)
    for st in res.stages:
        assert res.map(st, "idler").total() == pytest.approx(tot[st], rel=1e-10)


def test_thread_count_does_not_change_results():
    a = run_pipeline(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC), ExecutionPlan(threads=1))
    b = run_pipeline(PUMP, PM, GRID, MaskSet(N_s=SLIT, N_i=DISC), ExecutionPlan(threads=2))
    for st in a.stages:
        x, y = a.map(st, "signal").values, b.map(st, "signal").values
        assert np.abs(x - y).max() <= 1e-12 * x.max()


def test_workspace_overhead_is_bounded():
    from biphoton.store import default_slab, field_bytes, incore_workspace

    for n in (32, 48, 64, 96, 128, 240, 500):
        assert incore_workspace(n, default_slab(n)) <= 0.2 * field_bytes(n)


def test_budget_below_field_size_spills(tmp_path):
    g = make_grid(64, 360e-6)
    pump = PumpSpec("tem01", 140e-6)
    budget = 16 * 64**4 - 1
    with pytest.raises(ResourceError):
        run_pipeline(pump, PM, g, plan=ExecutionPlan("in_core", memory_budget=budget), stop_after="p1")
    res = run_pipeline(pump, PM, g, plan=spill_plan(tmp_path, memory_budget=budget), stop_after="p2")
    assert res.provenance["accounted_peak_bytes"] <= budget
    assert res.provenance["mode"] == "spill_to_disk"


def test_mirror_positions_give_equal_d_and_v():
    from biphoton.analysis import dv_sweep

    g = make_grid(48, 360e-6)
    slit = double_slit(105e-6, 30e-6)
    with NearFieldCache(PumpSpec("tem01", 140e-6), PM, g) as cache:
        # mirror of y is -y, which on the even lattice is the sample one step further from the edge
        r = dv_sweep(cache, slit, 15e-6, [-30e-6, 30e-6])
    assert r[0].error is None and r[1].error is None
    assert r[0].D == pytest.approx(r[1].D, abs=1e-9)
    assert r[0].V == pytest.approx(r[1].V, abs=1e-6)
