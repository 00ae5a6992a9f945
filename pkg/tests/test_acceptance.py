"""One test per acceptance criterion, run at the stated tolerance.

Each test prints a single ``PASS``/``FAIL`` line (also collected into the
terminal summary). Criteria 1-5 and 7 are marked slow; criterion 4 and 5
share one n=128 spilled near-field build.
"""

import math
import time
import warnings

import numpy as np
import pytest

from biphoton.analysis import (arc_profile, count_fringes, detector_convolve, disc_kernel, distinguishability,
                               dv_sweep, fine_axis, fit_visibility, fringe_model, sweep_maximum)
from biphoton.apertures import apply_masks, circular, double_slit, identity
from biphoton.engine import (ExecutionPlan, MaskSet, NearFieldCache, SliceRequest, consistency_scan,
                             estimate_resources, run_pipeline)
from biphoton.field import BiphotonField, ReducedMap, fft2_per_photon, reduce_both
from biphoton.grid import MOMENTUM, POSITION, make_grid
from biphoton.oracles import paired_region, plane_wave_far, relative_error, thin_crystal_near
from biphoton.phasematch import make_model
from biphoton.pump import PumpSpec

from .conftest import ACCEPTANCE_LINES

PUMP = PumpSpec("tem01", 140e-6)
PM = make_model()
EXTENT = 360e-6
SLIT = double_slit(105e-6, 30e-6)
IDLER_RADIUS = 14e-6
SWEEP = [-60e-6, -55e-6, -50e-6, -48e-6, -45e-6, -40e-6, -35e-6, -30e-6, -25e-6, -20e-6, -15e-6, -10e-6,
         -5e-6, 0.0]


def verdict(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------- 1

@pytest.mark.slow
def test_criterion_1_thin_crystal_near_field():
    t0 = time.perf_counter()
    thin = PM.with_length(0.0)
    errs = {}
    for n in (48, 64, 96):
        g = make_grid(n, EXTENT)
        res = run_pipeline(PUMP, thin, g, stop_after="p2")
        errs[n] = relative_error(res.map("p2", "signal"), thin_crystal_near(PUMP, g).c1).max
    dec = errs[48] > errs[64] > errs[96]
    ok = errs[96] <= 1e-2 and dec
    detail = ", ".join(f"n={n}: {e:.3e}" for n, e in errs.items())
    verdict("1", ok, f"max delta {detail}; <=1e-2 at n=96 and strictly decreasing "
                     f"({time.perf_counter() - t0:.0f} s)")


# ---------------------------------------------------------------- 2

@pytest.mark.slow
def test_criterion_2_plane_wave_far_field():
    t0 = time.perf_counter()
    g = make_grid(96, EXTENT)
    c = g.n // 2
    reqs = [SliceRequest("p1", "idler", (0.0, 0.0)), SliceRequest("p1", "idler", (g.q[c + 7], g.q[c - 3])),
            SliceRequest("p3", "idler", (0.0, 0.0))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_pipeline(PumpSpec("plane_wave"), PM, g, slices=reqs)
    err = relative_error(res.map("p3", "signal"), plane_wave_far(PM, g).c1, region=paired_region(g)).max
    off_exact = True
    for req, (jx, jy) in zip(reqs[:2], [(c, c), (c - 7, c + 3)]):
        s = res.slices[req.key].values
        mask = np.ones_like(s, bool)
        mask[jx, jy] = False  # the antidiagonal partner
        off_exact &= bool(np.all(s[mask] == 0.0)) and s[jx, jy] > 0
    s3 = res.slices[reqs[2].key].values
    m3 = np.ones_like(s3, bool)
    m3[c, c] = False
    residue = float(s3[m3].max() / s3.max())
    ok = err <= 2e-3 and off_exact and residue <= 1e-15
    verdict("2", ok, f"max delta {err:.3e} (<=2e-3); off-antidiagonal C2 exactly zero at p1: {off_exact}; "
                     f"p3 residue {residue:.1e} ({time.perf_counter() - t0:.0f} s)")


# ---------------------------------------------------------------- 3

@pytest.mark.slow
def test_criterion_3_consistency_scan():
    t0 = time.perf_counter()
    r = consistency_scan(PUMP, PM.with_length(0.0), EXTENT, [32, 48, 64, 96])
    verdict("3", r.monotone, "differences " + ", ".join(f"{v:.3e}" for v in r.values)
            + f" over n=32,48,64,96; strictly decreasing ({time.perf_counter() - t0:.0f} s)")


# ---------------------------------------------------------------- 4 and 5

@pytest.fixture(scope="module")
def cache128():
    t0 = time.perf_counter()
    cache = NearFieldCache(PUMP, PM, make_grid(128, EXTENT), plan=ExecutionPlan("spill_to_disk"))
    cache.build_seconds = time.perf_counter() - t0
    yield cache
    cache.close()


@pytest.fixture(scope="module")
def sweep128(cache128):
    t0 = time.perf_counter()
    records = dv_sweep(cache128, SLIT, IDLER_RADIUS, SWEEP)
    seconds = cache128.build_seconds + time.perf_counter() - t0
    return {r.position: r for r in records}, seconds


def _row(r):
    return f"rho_iy={r.position * 1e6:+.0f}um D={r.D:.3f} V={r.V:.3f}"


@pytest.mark.slow
def test_criterion_4a_distinguishability_on_axis(sweep128):
    recs, secs = sweep128
    r = recs[0.0]
    verdict("4a", r.D <= 0.05, f"D(0)={r.D:.4f} (<=0.05)")


@pytest.mark.slow
def test_criterion_4b_visibility_on_axis(sweep128):
    r = sweep128[0][0.0]
    verdict("4b", r.V >= 0.95, f"V(0)={r.V:.4f} (>=0.95)")


@pytest.mark.slow
def test_criterion_4c_distinguishability_off_axis(sweep128):
    r = sweep128[0][-48e-6]
    verdict("4c", abs(r.D - 0.96) <= 0.05, f"D(-48um)={r.D:.4f} (0.96+-0.05)")


@pytest.mark.slow
def test_criterion_4d_visibility_off_axis(sweep128):
    r = sweep128[0][-48e-6]
    verdict("4d", abs(r.V - 0.58) <= 0.08, f"V(-48um)={r.V:.4f} (0.58+-0.08)")


@pytest.mark.slow
def test_criterion_4e_duality_maximum(sweep128):
    recs, secs = sweep128
    best = sweep_maximum(list(recs.values()))
    ok = abs(best.D2V2 - 1.47) <= 0.12 and abs(best.position + 35e-6) <= 8e-6 and secs <= 1800
    table = "; ".join(_row(r) for r in recs.values())
    verdict("4e", ok, f"max D2+V2={best.D2V2:.3f} at {best.position * 1e6:+.0f}um (1.47+-0.12 within 8um of "
                      f"-35um); sweep {secs:.0f} s (<=1800 s) | {table}")


@pytest.mark.slow
def test_criterion_5_fringe_parity(cache128):
    g = cache128.grid
    idler_all = identity(POSITION, "idler")
    far = cache128.conditioned_maps(SLIT, idler_all).far
    counts = {}
    for arc in ("upper", "lower"):
        prof = arc_profile(far, SLIT.width, arc)
        q = fine_axis(prof, g.dq, 8)
        cut = cache128.conditioned_maps(SLIT, idler_all, far=False, cut_q=q).cut
        counts[arc] = count_fringes(cut)
    ok = counts["upper"] % 2 == 1 and counts["lower"] % 2 == 0
    verdict("5", ok, f"fringe maxima upper={counts['upper']} lower={counts['lower']} (odd upper, even lower)")


# ---------------------------------------------------------------- 6

def test_criterion_6_resource_estimator():
    b240 = estimate_resources(240).field_bytes
    b500 = estimate_resources(500).field_bytes
    ok = b240 <= 64e9 and abs(b240 - 53e9) / 53e9 < 0.01 and abs(b500 - 1.0e12) / 1.0e12 <= 0.02
    verdict("6", ok, f"n=240: {b240 / 1e9:.1f} GB (<=64 GB); n=500: {b500:.3e} B (1.0e12 +-2%)")


# ---------------------------------------------------------------- 7

@pytest.mark.slow
def test_criterion_7_mode_equivalence(tmp_path):
    worst = {}
    for n in (32, 64):
        g = make_grid(n, EXTENT)
        masks = MaskSet(N_s=SLIT, N_i=circular(IDLER_RADIUS, (0.0, -48e-6))) if n == 64 else MaskSet()
        core = run_pipeline(PUMP, PM, g, masks, ExecutionPlan("in_core"))
        spill = run_pipeline(PUMP, PM, g, masks, ExecutionPlan("spill_to_disk", cache_directory=str(tmp_path)))
        w = 0.0
        for st in core.stages:
            for ph in ("signal", "idler"):
                a, b = core.map(st, ph).values, spill.map(st, ph).values
                w = max(w, float(np.abs(a - b).max() / a.max()))
        worst[n] = w
    ok = all(v <= 1e-12 for v in worst.values())
    verdict("7", ok, ", ".join(f"n={n}: max rel {v:.1e}" for n, v in worst.items()) + " (<=1e-12)")


# ---------------------------------------------------------------- 8

def test_criterion_8_property_suites():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    checks = {}
    n = 8
    g = make_grid(n, 80e-6)
    a = rng.normal(size=(n,) * 4) + 1j * rng.normal(size=(n,) * 4)

    # round trip and Parseval
    f = BiphotonField.from_array(g, a.copy(), POSITION, POSITION)
    fft2_per_photon(f, "both", "forward")
    p_mom = (np.abs(f.array) ** 2).sum() * g.cell_measure(MOMENTUM) ** 2
    p_pos = (np.abs(a) ** 2).sum() * g.cell_measure(POSITION) ** 2
    checks["parseval"] = abs(p_mom - p_pos) / p_pos <= 1e-10
    fwd = f.array.copy()
    fft2_per_photon(f, "both", "inverse")
    checks["round trip"] = np.abs(f.array - a).max() / np.abs(a).max() <= 1e-10

    # brute-force DFT over both photons
    e = np.exp(-1j * np.outer(g.q, g.x)) * g.step
    brute = np.einsum("ax,by,cu,dv,xyuv->abcd", e, e, e, e, a)
    checks["brute DFT"] = np.abs(fwd - brute).max() / np.abs(brute).max() <= 1e-10

    # reduction by explicit sum
    sig, _ = reduce_both(BiphotonField.from_array(g, a.copy(), POSITION, POSITION))
    explicit = np.array([[sum(abs(a[i, j, k, m]) ** 2 for k in range(n) for m in range(n)) for j in range(n)]
                         for i in range(n)]) * g.cell_measure(POSITION)
    checks["reduction"] = np.abs(sig.values - explicit).max() / explicit.max() <= 1e-10

    # convolution against a double loop
    g16 = make_grid(16, 160e-6)
    v = rng.random((16, 16))
    conv = detector_convolve(ReducedMap(v, g16, POSITION, "signal"), 25e-6).values
    k = disc_kernel(25e-6, 10e-6)
    m = k.shape[0] // 2
    loop = np.zeros_like(v)
    for i in range(16):
        for j in range(16):
            for p in range(-m, m + 1):
                for q in range(-m, m + 1):
                    loop[i, j] += k[p + m, q + m] * v[(i - p) % 16, (j - q) % 16]
    checks["convolution"] = np.abs(conv - loop).max() / loop.max() <= 1e-10

    # masks never add power
    g100 = make_grid(8, 100e-6)
    f = BiphotonField.from_array(g100, a.copy(), POSITION, POSITION)
    before = f.total_power()
    apply_masks(f, circular(30e-6, photon="signal"), circular(25e-6))
    checks["mask monotone"] = f.total_power() <= before

    # D scale invariance
    g128 = make_grid(128, EXTENT)
    lo, up = SLIT.slit_masks(g128)
    near = ReducedMap(0.3 * lo + 0.7 * up + 0.0, g128, POSITION, "signal")
    near2 = ReducedMap(1e7 * near.values, g128, POSITION, "signal")
    checks["D scale"] = abs(distinguishability(near, SLIT) - distinguishability(near2, SLIT)) <= 1e-12

    # fit self-recovery with 1% noise
    qq = np.linspace(-2 * math.pi / 30e-6, 2 * math.pi / 30e-6, 400)
    clean = fringe_model(qq, 0.02, 1.0, 0.58, 0.3, 15e-6, 105e-6, 30e-6)
    noisy = clean + rng.normal(scale=0.01 * clean.max(), size=qq.shape)
    checks["fit recovery"] = abs(fit_visibility(qq, noisy, 105e-6, 30e-6, center=0.0).V - 0.58) <= 0.01

    secs = time.perf_counter() - t0
    failed = [k for k, ok in checks.items() if not ok]
    verdict("8", not failed and secs < 60,
            f"{len(checks) - len(failed)}/{len(checks)} property checks pass"
            + (f" (failed: {', '.join(failed)})" if failed else "") + f" in {secs:.1f} s")
