"""Building the two-photon amplitude and propagating it through the two aperture planes.

Stage names, in pipeline order:

``p1``         far field of the crystal (amplitude as built)
``p1_masked``  after the far-field masks T_s, T_i
``p2``         near field (both photons inverse-transformed)
``p2_masked``  after the near-field masks N_s, N_i
``p3``         far field behind the near-field masks (both forward-transformed)

Each stage records the signal and idler reductions. A mask stage whose
masks are identities is executed as a no-op and records the same maps as the
stage before it.
"""

from __future__ import annotations

import hashlib
import math
import os
import resource
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .apertures import ApertureMask, apply_masks, evaluate_mask, identity
from .errors import ConfigurationError, ResourceError
from .field import BiphotonField, ReducedMap, fft2_per_photon, reduce_both, slice_coincidence
from .grid import MOMENTUM, POSITION, TransverseGrid, make_grid, transform_planes
from .phasematch import PhaseMatchModel
from .pump import PumpSpec, pump_field_on_sum_lattice
from .store import (
    InCoreStore,
    SpillStore,
    default_slab,
    field_bytes,
    incore_workspace,
    spill_slab_for_budget,
    spill_workspace,
)

STAGES = ("p1", "p1_masked", "p2", "p2_masked", "p3")
MODES = ("in_core", "spill_to_disk")
RING_EDGE_LIMIT = 0.05


def physical_memory() -> int:
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 8 * 2**30


@dataclass
class ExecutionPlan:
    """How the field is stored. ``memory_budget`` defaults to 80% of physical RAM."""

    mode: str = "in_core"
    memory_budget: int | None = None
    cache_directory: str | None = None
    threads: int = 1
    cache_limit: int | None = None
    slab: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"execution mode must be one of {MODES}, got {self.mode!r}")
        if self.memory_budget is None:
            self.memory_budget = int(0.8 * physical_memory())
        if self.memory_budget <= 0:
            raise ConfigurationError("memory budget must be positive")
        if self.threads < 1:
            raise ConfigurationError("thread count must be >= 1")

    @property
    def cache_dir(self) -> str:
        return self.cache_directory or tempfile.gettempdir()


@dataclass(frozen=True)
class ResourceEstimate:
    n: int
    mode: str
    slab: int
    field_bytes: int
    workspace_bytes: int
    bytes_core: int
    bytes_cache: int
    transform_count: int

    def radix_tradeoff(self, k: int) -> dict:
        """Memory/time factors of a radix-k decimated transform (not implemented here)."""
        return {"k": k, "memory_factor": k**-4.0, "time_factor": float(k**8)}

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mode": self.mode,
            "slab": self.slab,
            "field_bytes": self.field_bytes,
            "workspace_bytes": self.workspace_bytes,
            "bytes_core": self.bytes_core,
            "bytes_cache": self.bytes_cache,
            "transform_count": self.transform_count,
            "radix2": self.radix_tradeoff(2),
        }


def estimate_resources(n: int, mode: str = "in_core", slab: int | None = None) -> ResourceEstimate:
    """Storage needed for an ``n^4`` field, computed before any allocation.

    ``bytes_core`` is the resident requirement: the raw field in core mode,
    the slab working set in spill mode. ``workspace_bytes`` is the
    transform/reduction scratch on top of it. ``transform_count`` counts 2D
    plane transforms for a full p1 -> p3 run.
    """
    if not isinstance(n, (int, np.integer)) or n < 8:
        raise ConfigurationError(f"n must be an integer >= 8, got {n!r}")
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    b = slab or default_slab(n)
    raw = field_bytes(n)
    if mode == "in_core":
        ws = incore_workspace(n, b)
        return ResourceEstimate(n, mode, b, raw, ws, raw, 0, 4 * n * n)
    ws = spill_workspace(n, b)
    return ResourceEstimate(n, mode, b, raw, ws, ws, raw, 4 * n * n)


def open_store(n: int, plan: ExecutionPlan):
    """Allocate backing storage after checking the plan's budget."""
    if plan.mode == "in_core":
        b = plan.slab or default_slab(n)
        need = field_bytes(n) + incore_workspace(n, b)
        if need > plan.memory_budget:
            raise ResourceError(
                f"in-core run at n={n} needs {need} B (field {field_bytes(n)} B + "
                f"workspace {incore_workspace(n, b)} B) but the budget is {plan.memory_budget} B; "
                "use spill_to_disk mode or a smaller n"
            )
        try:
            return InCoreStore(n, slab=b)
        except MemoryError as exc:
            raise ResourceError(f"allocation of {field_bytes(n)} B failed: {exc}") from exc
    b = plan.slab or spill_slab_for_budget(n, plan.memory_budget)
    if spill_workspace(n, b) > plan.memory_budget:
        raise ResourceError(f"slab {b} working set exceeds the budget of {plan.memory_budget} B")
    return SpillStore(n, b, plan.cache_dir, plan.cache_limit)


def ring_edge_ratio(pm: PhaseMatchModel, grid: TransverseGrid) -> float:
    """max sinc^2 on the window border over its overall max, for anticorrelated pairs."""
    QX, QY = grid.mesh(MOMENTUM)
    s2 = pm.phase_matching((QX, QY), (-QX, -QY)) ** 2
    border = max(s2[0].max(), s2[-1].max(), s2[:, 0].max(), s2[:, -1].max())
    return float(border / s2.max())


def build_biphoton_amplitude(pump: PumpSpec, pm: PhaseMatchModel, grid: TransverseGrid,
                             store=None, workers: int = 1, check: bool = True) -> BiphotonField:
    """Fill ``u~(q_s + q_i) * sinc(dkz L / 2)`` slab by slab (both photons in momentum).

    ``check=False`` skips the pump-resolution precondition; only meant for
    deliberately broken configurations in convergence studies.
    """
    if store is None:
        store = open_store(grid.n, ExecutionPlan())
    if grid.n != store.n:
        raise ConfigurationError("store and grid sizes differ")
    if pm.length > 0:
        ratio = ring_edge_ratio(pm, grid)
        if ratio > RING_EDGE_LIMIT:
            warnings.warn(
                f"phase-matching ring is cut by the momentum window: sinc^2 at the border is "
                f"{ratio:.3f} of its maximum (limit {RING_EDGE_LIMIT}); reduce the step",
                RuntimeWarning,
                stacklevel=2,
            )
    lookup = pump_field_on_sum_lattice(pump, grid, check=check)
    q = grid.q
    qsx = q[:, None, None, None]
    qsy = q[None, :, None, None]
    qix = q[None, None, :, None]
    for sl, chunk in store.slabs("signal", load=False):
        qiy = q[None, None, None, sl]
        chunk[...] = lookup.block(sl)
        if pm.length > 0:
            chunk *= pm.phase_matching((qsx, qsy), (qix, qiy))
    return BiphotonField(grid, store, MOMENTUM, MOMENTUM, workers)


@dataclass(frozen=True)
class MaskSet:
    """Far-field masks ``T`` (momentum plane) and near-field masks ``N`` (position plane)."""

    T_s: ApertureMask = identity(MOMENTUM, "signal")
    T_i: ApertureMask = identity(MOMENTUM, "idler")
    N_s: ApertureMask = identity(POSITION, "signal")
    N_i: ApertureMask = identity(POSITION, "idler")

    def __post_init__(self):
        for name, plane, photon in (("T_s", MOMENTUM, "signal"), ("T_i", MOMENTUM, "idler"),
                                    ("N_s", POSITION, "signal"), ("N_i", POSITION, "idler")):
            m = getattr(self, name)
            if m.plane != plane or m.photon != photon:
                raise ConfigurationError(f"{name} must be a {photon} mask in the {plane} plane")


@dataclass(frozen=True)
class SliceRequest:
    """C2 slice at ``stage`` with ``fixed_photon`` held at ``position`` (native units of that stage)."""

    stage: str
    fixed_photon: str
    position: tuple[float, float]

    @property
    def key(self) -> str:
        return f"{self.stage}:{self.fixed_photon}@{self.position[0]:.6g},{self.position[1]:.6g}"


@dataclass
class PipelineResult:
    stages: dict[str, dict[str, ReducedMap]] = field(default_factory=dict)
    slices: dict[str, ReducedMap] = field(default_factory=dict)
    snapshots: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    field: BiphotonField | None = None

    def map(self, stage: str, photon: str) -> ReducedMap:
        return self.stages[stage][photon]

    def close(self) -> None:
        if self.field is not None:
            self.field.store.close()
            self.field = None


def config_hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _domain_at(stage: str) -> str:
    return MOMENTUM if stage in ("p1", "p1_masked", "p3") else POSITION


class _Recorder:
    def __init__(self, result, field, slices, snapshots, budget_check):
        self.result = result
        self.field = field
        self.slices = slices
        self.snapshots = set(snapshots)
        self.budget_check = budget_check
        self.last = None

    def record(self, stage: str, changed: bool = True) -> None:
        f = self.field
        if changed or self.last is None:
            s, i = reduce_both(f, label=stage)
        else:
            s, i = (ReducedMap(m.values, m.grid, m.domain, m.photon, label=stage) for m in self.last)
        self.result.stages[stage] = {"signal": s, "idler": i}
        self.last = (s, i)
        for req in self.slices:
            if req.stage == stage:
                g = f.grid
                dom = f.domain(req.fixed_photon)
                idx = (g.index_of(req.position[0], dom), g.index_of(req.position[1], dom))
                self.result.slices[req.key] = slice_coincidence(f, req.fixed_photon, idx, label=req.key)
        if stage in self.snapshots:
            self.budget_check(field_bytes(f.grid.n))
            self.result.snapshots[stage] = np.array(f.array)
        f.store.mark(stage)


def run_pipeline(
    pump: PumpSpec,
    pm: PhaseMatchModel,
    grid: TransverseGrid,
    masks: MaskSet | None = None,
    plan: ExecutionPlan | None = None,
    slices: Sequence[SliceRequest] = (),
    snapshots: Sequence[str] = (),
    stop_after: str = "p3",
    keep_field: bool = False,
    check: bool = True,
) -> PipelineResult:
    """Build the amplitude and carry it through T, near field, N and back to the far field.

    With ``keep_field`` the final field stays open in ``result.field`` and
    the caller must :meth:`PipelineResult.close` it.
    """
    masks = masks or MaskSet()
    plan = plan or ExecutionPlan()
    if stop_after not in STAGES:
        raise ConfigurationError(f"stop_after must be one of {STAGES}")
    for req in slices:
        if req.stage not in STAGES or req.fixed_photon not in ("signal", "idler"):
            raise ConfigurationError(f"bad slice request {req}")
    # masks are sampled (and validated) before the big allocation
    for m in (masks.T_s, masks.T_i, masks.N_s, masks.N_i):
        if not m.is_identity:
            evaluate_mask(m, grid)
    if snapshots and plan.mode != "in_core":
        raise ConfigurationError("4D snapshots are only available in in_core mode")

    t0 = time.perf_counter()
    extra = {"bytes": 0}

    def budget_check(nbytes):
        extra["bytes"] += nbytes
        if accounted() > plan.memory_budget:
            raise ResourceError(f"snapshot would exceed the memory budget of {plan.memory_budget} B")

    result = PipelineResult()
    store = open_store(grid.n, plan)

    def accounted():
        return store.core_bytes + store.workspace_bytes + extra["bytes"]

    kept = False
    try:
        f = build_biphoton_amplitude(pump, pm, grid, store, plan.threads, check=check)
        rec = _Recorder(result, f, slices, snapshots, budget_check)
        steps = (
            ("p1", None),
            ("p1_masked", lambda: apply_masks(f, masks.T_s, masks.T_i)),
            ("p2", lambda: fft2_per_photon(f, "both", "inverse")),
            ("p2_masked", lambda: apply_masks(f, masks.N_s, masks.N_i)),
            ("p3", lambda: fft2_per_photon(f, "both", "forward")),
        )
        for stage, action in steps:
            changed = True
            if stage == "p1_masked":
                changed = not (masks.T_s.is_identity and masks.T_i.is_identity)
            if stage == "p2_masked":
                changed = not (masks.N_s.is_identity and masks.N_i.is_identity)
            if action is not None and changed:
                action()
            rec.record(stage, changed)
            if stage == stop_after:
                break
        result.provenance = {
            "hash": config_hash(pump, pm, grid, masks, plan.mode),
            "grid": grid.describe(),
            "mode": plan.mode,
            "slab": store.slab,
            "threads": plan.threads,
            "memory_budget_bytes": plan.memory_budget,
            "accounted_peak_bytes": accounted(),
            "peak_rss_bytes": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024,
            "runtime_s": time.perf_counter() - t0,
            "stages": list(result.stages),
        }
        if keep_field:
            result.field = f
            kept = True
        return result
    except OSError as exc:
        raise ResourceError(f"cache I/O failed: {exc}") from exc
    finally:
        if not kept:
            store.close()


def run_pipeline_spill(pump, pm, grid, masks=None, plan: ExecutionPlan | None = None, **kw) -> PipelineResult:
    """:func:`run_pipeline` with the field cached on disk."""
    plan = plan or ExecutionPlan(mode="spill_to_disk")
    if plan.mode != "spill_to_disk":
        plan = ExecutionPlan("spill_to_disk", plan.memory_budget, plan.cache_directory,
                             plan.threads, plan.cache_limit, plan.slab)
    return run_pipeline(pump, pm, grid, masks, plan, **kw)


@dataclass
class Conditioned:
    near: ReducedMap
    far: ReducedMap | None = None
    cut_q: np.ndarray | None = None
    cut: np.ndarray | None = None


class NearFieldCache:
    """The near-field amplitude before the N masks, kept for repeated conditioning.

    Changing only ``N_i`` (the idler detector) does not require rebuilding
    the amplitude or re-running the T stage. For a near-field idler mask
    ``m`` the conditioned signal maps are

    * near: ``sum_rho_i m^2 |N_s Phi(rho_s, rho_i)|^2 dx^2``
    * far:  ``sum_rho_i m^2 |F_s[N_s Phi](q_s, rho_i)|^2 dx^2``

    where the far form uses Parseval over the (unmeasured) idler transform;
    it equals the p3 signal reduction of a full run.
    """

    def __init__(self, pump, pm, grid, masks: MaskSet | None = None, plan: ExecutionPlan | None = None,
                 chunk: int = 64, check: bool = True):
        masks = masks or MaskSet()
        self.grid = grid
        self.masks = masks
        self.chunk = chunk
        self.result = run_pipeline(pump, pm, grid, MaskSet(masks.T_s, masks.T_i), plan,
                                   stop_after="p2", keep_field=True, check=check)
        self.field = self.result.field
        # idler pixels are rows of the signal layout
        if hasattr(self.field.store, "transpose") and self.field.store.layout != "signal":
            self.field.store.transpose()

    def conditioned_maps(self, signal_mask: ApertureMask, idler_mask: ApertureMask, far: bool = True,
                         cut_q: np.ndarray | None = None, cut_qx: float = 0.0) -> "Conditioned":
        """Signal maps conditioned on a near-field idler mask.

        ``cut_q`` optionally requests the far-field rate along the line
        ``q_x = cut_qx`` at arbitrary ``q_y`` values. It is the exact
        transform of the sampled near field (no lattice restriction), so a
        fringe cut can be sampled more finely than the momentum lattice.
        """
        g = self.grid
        ns = None if signal_mask.is_identity else evaluate_mask(signal_mask, g)
        mi = evaluate_mask(idler_mask, g)
        ix, iy = np.nonzero(mi)
        weights = mi[ix, iy] ** 2
        dx2 = g.cell_measure(POSITION)
        near = np.zeros((g.n, g.n))
        far_map = np.zeros((g.n, g.n)) if far else None
        if cut_q is not None:
            cut_q = np.asarray(cut_q, dtype=float)
            kern_x = np.exp(-1j * cut_qx * g.x) * g.step
            kern_y = np.exp(-1j * np.multiply.outer(g.x, cut_q)) * g.step
            cut = np.zeros(cut_q.shape)
        for k0 in range(0, len(ix), self.chunk):
            sel = slice(k0, k0 + self.chunk)
            planes = self.field.store.idler_planes(list(zip(ix[sel], iy[sel])))
            planes *= np.sqrt(weights[sel])[:, None, None]
            if ns is not None:
                planes *= ns[None]
            near += (np.abs(planes) ** 2).sum(axis=0)
            if cut_q is not None:
                line = np.tensordot(planes, kern_x, axes=([1], [0]))  # (k, y)
                cut += (np.abs(line @ kern_y) ** 2).sum(axis=0)
            if far:
                transform_planes(planes, (1, 2), g, "forward", self.field.workers)
                far_map += (np.abs(planes) ** 2).sum(axis=0)
        out = Conditioned(ReducedMap(near * dx2, g, POSITION, "signal", label="p2_masked"))
        if far:
            out.far = ReducedMap(far_map * dx2, g, MOMENTUM, "signal", label="p3")
        if cut_q is not None:
            out.cut_q = cut_q
            out.cut = cut * dx2
        return out

    def close(self) -> None:
        self.result.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ConsistencyScan:
    resolutions: list[int]
    values: list[float]
    monotone: bool


def resampled_difference(coarse: ReducedMap, fine: ReducedMap) -> float:
    """Relative L2 difference after bilinear resampling of ``coarse`` onto ``fine``.

    Both maps are peak-normalized first; only fine-lattice points inside the
    coarse lattice's span are compared.
    """
    a = coarse.unit_peak().values
    b = fine.unit_peak().values
    ca, cb = coarse.coords, fine.coords
    if len(ca) == len(cb) and np.array_equal(ca, cb):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))
    inside = (cb >= ca[0]) & (cb <= ca[-1])
    interp = RegularGridInterpolator((ca, ca), a, method="linear")
    X, Y = np.meshgrid(cb[inside], cb[inside], indexing="ij")
    ra = interp(np.stack([X, Y], axis=-1))
    bb = b[np.ix_(inside, inside)]
    return float(np.linalg.norm(ra - bb) / np.linalg.norm(bb))


def consistency_scan(pump: PumpSpec, pm: PhaseMatchModel, extent: float, resolutions: Sequence[int],
                     stage: str = "p2", photon: str = "signal", masks: MaskSet | None = None,
                     plan: ExecutionPlan | None = None, check: bool = True) -> ConsistencyScan:
    """Refinement sequence ``||C1_N - C1_N'||`` over consecutive resolutions at a fixed window."""
    maps = []
    for n in resolutions:
        res = run_pipeline(pump, pm, make_grid(n, extent), masks, plan, stop_after=stage, check=check)
        maps.append(res.map(stage, photon))
    values = [resampled_difference(a, b) for a, b in zip(maps, maps[1:])]
    monotone = all(v2 < v1 for v1, v2 in zip(values, values[1:]))
    return ConsistencyScan(list(resolutions), values, monotone)
