import numpy as np
import pytest

from biphoton.engine import ExecutionPlan, estimate_resources, open_store
from biphoton.errors import NumericalError, ResourceError
from biphoton.field import BiphotonField, ReducedMap, fft2_per_photon, reduce, reduce_both, signal_cut, slice_coincidence
from biphoton.grid import MOMENTUM, POSITION, make_grid
from biphoton.store import InCoreStore, SpillStore, default_slab, field_bytes, incore_workspace

from .conftest import random_field


def test_reduction_matches_double_loop(rng):
    g = make_grid(8, 80e-6)
    a = random_field(rng, 8)
    f = BiphotonField.from_array(g, a.copy(), POSITION, MOMENTUM)
    sig, idl = reduce_both(f)
    exp_s = np.zeros((8, 8))
    exp_i = np.zeros((8, 8))
    for sx in range(8):
        for sy in range(8):
            for ix in range(8):
                for iy in range(8):
                    p = abs(a[sx, sy, ix, iy]) ** 2
                    exp_s[sx, sy] += p * g.cell_measure(MOMENTUM)
                    exp_i[ix, iy] += p * g.cell_measure(POSITION)
    np.testing.assert_allclose(sig.values, exp_s, rtol=1e-10)
    np.testing.assert_allclose(idl.values, exp_i, rtol=1e-10)
    assert sig.domain == POSITION and idl.domain == MOMENTUM
    np.testing.assert_array_equal(reduce(f, "idler").values, idl.values)


def test_slice_matches_direct_indexing(rng):
    g = make_grid(8, 80e-6)
    a = random_field(rng, 8)
    f = BiphotonField.from_array(g, a.copy())
    np.testing.assert_array_equal(slice_coincidence(f, "idler", (2, 5)).values, np.abs(a[:, :, 2, 5]) ** 2)
    np.testing.assert_array_equal(slice_coincidence(f, "signal", (1, 0)).values, np.abs(a[1, 0]) ** 2)


def test_reduction_is_deterministic(rng):
    g = make_grid(8, 80e-6)
    a = random_field(rng, 8)
    f = BiphotonField.from_array(g, a)
    first = reduce_both(f)[0].values
    for _ in range(3):
        np.testing.assert_array_equal(reduce_both(f)[0].values, first)


def test_non_finite_field_is_rejected(rng):
    g = make_grid(8, 80e-6)
    a = random_field(rng, 8)
    a[1, 2, 3, 4] = np.nan
    with pytest.raises(NumericalError):
        reduce_both(BiphotonField.from_array(g, a))


def test_negative_map_is_rejected():
    with pytest.raises(NumericalError):
        ReducedMap(-np.ones((8, 8)), make_grid(8, 1e-5), POSITION, "signal")


@pytest.mark.parametrize("domain", [POSITION, MOMENTUM])
def test_signal_cut_on_lattice_equals_reduction(rng, domain):
    g = make_grid(8, 80e-6)
    a = random_field(rng, 8)
    f = BiphotonField.from_array(g, a.copy(), POSITION, POSITION)
    if domain == MOMENTUM:
        fft2_per_photon(f, "signal", "forward")
        ref = f
    else:
        ref = BiphotonField.from_array(g, a.copy(), POSITION, POSITION)
        fft2_per_photon(ref, "signal", "forward")
    far = reduce_both(ref)[0].values
    cut = signal_cut(f, g.q[3], g.q)
    assert np.abs(cut - far[3]).max() / far.max() < 1e-12


def test_spill_store_matches_in_core(tmp_path, rng):
    n = 8
    g = make_grid(n, 80e-6)
    a = random_field(rng, n)
    spill = SpillStore(n, 2, str(tmp_path))
    for sl, chunk in spill.slabs("signal", load=False):
        chunk[...] = a[..., sl]
    fs = BiphotonField(g, spill, POSITION, POSITION)
    fc = BiphotonField.from_array(g, a.copy(), POSITION, POSITION)
    for f in (fs, fc):
        fft2_per_photon(f, "both", "forward")
    for m_s, m_c in zip(reduce_both(fs), reduce_both(fc)):
        np.testing.assert_allclose(m_s.values, m_c.values, rtol=1e-12)
    np.testing.assert_allclose(slice_coincidence(fs, "idler", (3, 4)).values,
                               slice_coincidence(fc, "idler", (3, 4)).values, rtol=1e-12)
    run_dir = spill.directory
    spill.close()
    assert not (tmp_path / run_dir).exists()


def test_spill_transpose_is_an_involution(tmp_path, rng):
    n = 8
    a = random_field(rng, n)
    spill = SpillStore(n, 4, str(tmp_path))
    for sl, chunk in spill.slabs("signal", load=False):
        chunk[...] = a[..., sl]
    spill.transpose()
    assert spill.layout == "idler"
    got = np.empty_like(a)
    for sl, chunk in spill.slabs("idler", write=False):
        got[sl] = chunk
    np.testing.assert_array_equal(got, a)
    spill.close()


def test_cache_one_hyperslab_short_is_refused(tmp_path):
    n, b = 16, 4
    short = field_bytes(n) - field_bytes(n) // (n // b)
    with pytest.raises(ResourceError, match="hyperslab"):
        SpillStore(n, b, str(tmp_path), cache_limit=short)
    assert list(tmp_path.iterdir()) == []


def test_in_core_budget_is_checked_before_allocation():
    n = 16
    need = field_bytes(n) + incore_workspace(n, default_slab(n))
    with pytest.raises(ResourceError, match="budget"):
        open_store(n, ExecutionPlan("in_core", memory_budget=need - 1))
    store = open_store(n, ExecutionPlan("in_core", memory_budget=need))
    assert isinstance(store, InCoreStore)


def test_estimator_reference_sizes():
    # raw complex128 field: 16 n^4 bytes
    e240 = estimate_resources(240)
    assert e240.field_bytes == 53_084_160_000
    assert e240.field_bytes <= 64e9
    e500 = estimate_resources(500)
    assert e500.field_bytes == pytest.approx(1.0e12, rel=0.02)
    assert estimate_resources(8).field_bytes == 65536
    assert e240.transform_count == 4 * 240**2
    s = estimate_resources(240, "spill_to_disk")
    assert s.bytes_cache == e240.field_bytes and s.bytes_core < e240.bytes_core
