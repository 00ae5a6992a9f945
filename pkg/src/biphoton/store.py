"""Backing storage for the 4D two-photon amplitude.

The logical index order is always ``(sx, sy, ix, iy)``. Both stores hand out
*slabs*: 4D chunks restricted along one axis, so that every 2D plane needed
by a transform lies entirely inside one chunk.

* side ``"signal"``: chunk ``(n, n, n, b)`` restricted along idler-y; the
  signal planes (axes 0, 1) are complete.
* side ``"idler"``: chunk ``(b, n, n, n)`` restricted along signal-x; the
  idler planes (axes 2, 3) are complete.

:class:`SpillStore` keeps the field on disk as ``n/b`` hyperslab files that
together form an ``n**2 x n**2`` matrix. Rows are idler pixels for the
signal side and signal pixels for the idler side; switching sides is an
out-of-core square-tile transpose done in place in the same files.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from typing import Iterator

import numpy as np

from .errors import ResourceError

ITEMSIZE = np.dtype(np.complex128).itemsize
SIDES = ("signal", "idler")


def field_bytes(n: int) -> int:
    return ITEMSIZE * n**4


def default_slab(n: int) -> int:
    """Slab thickness for in-core work: the largest divisor of n not above n/16."""
    return _divisor_at_most(n, max(1, n // 16))


def _divisor_at_most(n: int, limit: int) -> int:
    for b in range(max(1, limit), 0, -1):
        if n % b == 0:
            return b
    return 1


def spill_slab_for_budget(n: int, budget: int) -> int:
    """Thickest slab whose working set (see :func:`spill_workspace`) fits ``budget``."""
    best = None
    for b in range(1, n + 1):
        if n % b == 0 and spill_workspace(n, b) <= budget:
            best = b
    if best is None:
        raise ResourceError(
            f"memory budget {budget} B cannot hold one spill hyperslab at n={n} "
            f"(needs {spill_workspace(n, 1)} B)"
        )
    return best


def incore_workspace(n: int, b: int) -> int:
    """Transform output buffer + |.|^2 scratch for one slab, plus build scratch."""
    plane_set = ITEMSIZE * n**3
    return plane_set * (2 * b + 2)


def spill_workspace(n: int, b: int) -> int:
    """In-core slab copy on top of :func:`incore_workspace`, plus two transpose tiles."""
    plane_set = ITEMSIZE * n**3
    tile = ITEMSIZE * (b * n) ** 2
    return incore_workspace(n, b) + plane_set * b + 2 * tile


class InCoreStore:
    mode = "in_core"

    def __init__(self, n: int, slab: int | None = None, array: np.ndarray | None = None):
        self.n = n
        self.slab = slab or default_slab(n)
        if n % self.slab:
            raise ValueError(f"slab {self.slab} must divide n={n}")
        if array is None:
            array = np.empty((n, n, n, n), dtype=np.complex128)
        elif array.shape != (n,) * 4 or array.dtype != np.complex128:
            raise ValueError("in-core array must be complex128 with shape (n, n, n, n)")
        self.array = array

    @property
    def core_bytes(self) -> int:
        return self.array.nbytes

    @property
    def workspace_bytes(self) -> int:
        return incore_workspace(self.n, self.slab)

    def slabs(self, side: str, write: bool = True, load: bool = True) -> Iterator[tuple[slice, np.ndarray]]:
        n, b = self.n, self.slab
        for j0 in range(0, n, b):
            sl = slice(j0, j0 + b)
            if side == "signal":
                yield sl, self.array[:, :, :, sl]
            elif side == "idler":
                yield sl, self.array[sl]
            else:
                raise ValueError(f"side must be one of {SIDES}")

    def idler_planes(self, pixels: list[tuple[int, int]]) -> np.ndarray:
        """Signal planes ``field[:, :, ix, iy]`` stacked as ``(k, n, n)``."""
        return np.stack([self.array[:, :, ix, iy] for ix, iy in pixels]) if pixels else np.empty((0, self.n, self.n), np.complex128)

    def signal_plane(self, sx: int, sy: int) -> np.ndarray:
        return np.array(self.array[sx, sy])

    def mark(self, stage: str) -> None:
        pass

    def close(self) -> None:
        pass


class SpillStore:
    """Field cached on disk in ``n/b`` preallocated hyperslab files.

    Files live in a private run directory (``mkdtemp``) with a JSON manifest.
    The directory is removed by :meth:`close`, on success and on failure.
    """

    mode = "spill_to_disk"

    def __init__(self, n: int, slab: int, cache_directory: str, cache_limit: int | None = None):
        if n % slab:
            raise ValueError(f"slab {slab} must divide n={n}")
        self.n = n
        self.slab = slab
        self.rows = slab * n
        self.n_files = n // slab
        self.layout = "signal"
        self.stage = "allocated"
        self._mm: list[np.memmap] = []
        self.directory = None

        required = field_bytes(n)
        slab_bytes = required // self.n_files
        try:
            os.makedirs(cache_directory, exist_ok=True)
            free = shutil.disk_usage(cache_directory).free
        except OSError as exc:
            raise ResourceError(f"cache directory {cache_directory!r} unusable: {exc}") from exc
        capacity = free if cache_limit is None else min(free, cache_limit)
        if required > capacity:
            raise ResourceError(
                f"spill cache needs {required} B ({self.n_files} hyperslabs of {slab_bytes} B) "
                f"but only {capacity} B are available in {cache_directory!r}"
            )

        self.directory = tempfile.mkdtemp(prefix="biphoton-run-", dir=cache_directory)
        try:
            for k in range(self.n_files):
                path = self._path(k)
                with open(path, "wb") as fh:
                    try:
                        os.posix_fallocate(fh.fileno(), 0, slab_bytes)
                    except (AttributeError, OSError) as exc:
                        if getattr(exc, "errno", None) == 28:  # ENOSPC
                            raise
                        fh.truncate(slab_bytes)
                self._mm.append(np.memmap(path, dtype=np.complex128, mode="r+", shape=(self.rows, n * n)))
            self._write_manifest()
        except OSError as exc:
            self.close()
            raise ResourceError(f"could not allocate spill cache: {exc}") from exc

    @property
    def core_bytes(self) -> int:
        return 0

    @property
    def workspace_bytes(self) -> int:
        return spill_workspace(self.n, self.slab)

    def _path(self, k: int) -> str:
        return os.path.join(self.directory, f"slab_{k:04d}.c128")

    def _write_manifest(self) -> None:
        manifest = {
            "n": self.n,
            "slab": self.slab,
            "dtype": "complex128-le",
            "matrix": [self.n * self.n, self.n * self.n],
            "rows": "idler pixel (iy, ix)" if self.layout == "signal" else "signal pixel (sx, sy)",
            "layout": self.layout,
            "stage": self.stage,
            "files": [os.path.basename(self._path(k)) for k in range(self.n_files)],
        }
        with open(os.path.join(self.directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)

    def mark(self, stage: str) -> None:
        self.stage = stage
        for mm in self._mm:
            mm.flush()
        self._write_manifest()

    def _ensure(self, side: str) -> None:
        if side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        if self.layout != side:
            self.transpose()

    def transpose(self) -> None:
        """Swap rows and columns of the cached matrix, tile pair by tile pair."""
        t = self.rows
        for k in range(self.n_files):
            ck = slice(k * t, (k + 1) * t)
            diag = np.array(self._mm[k][:, ck])
            self._mm[k][:, ck] = diag.T
            for m in range(k + 1, self.n_files):
                cm = slice(m * t, (m + 1) * t)
                a = np.array(self._mm[k][:, cm])
                b = np.array(self._mm[m][:, ck])
                self._mm[k][:, cm] = b.T
                self._mm[m][:, ck] = a.T
        self.layout = "idler" if self.layout == "signal" else "signal"
        self._write_manifest()

    def _logical(self, buf: np.ndarray) -> np.ndarray:
        b, n = self.slab, self.n
        phys = buf.reshape(b, n, n, n)
        if self.layout == "signal":
            return phys.transpose(2, 3, 1, 0)  # (iy, ix, sx, sy) -> (sx, sy, ix, iy)
        return phys.transpose(0, 1, 3, 2)  # (sx, sy, iy, ix) -> (sx, sy, ix, iy)

    def slabs(self, side: str, write: bool = True, load: bool = True) -> Iterator[tuple[slice, np.ndarray]]:
        self._ensure(side)
        for k in range(self.n_files):
            mm = self._mm[k]
            buf = np.array(mm) if load else np.empty(mm.shape, dtype=np.complex128)
            yield slice(k * self.slab, (k + 1) * self.slab), self._logical(buf)
            if write:
                mm[...] = buf

    def idler_planes(self, pixels: list[tuple[int, int]]) -> np.ndarray:
        n, b = self.n, self.slab
        out = np.empty((len(pixels), n, n), dtype=np.complex128)
        for p, (ix, iy) in enumerate(pixels):
            if self.layout == "signal":
                row = (iy % b) * n + ix
                out[p] = np.asarray(self._mm[iy // b][row]).reshape(n, n)
            else:
                col = iy * n + ix
                out[p] = np.concatenate([np.asarray(mm[:, col]) for mm in self._mm]).reshape(n, n)
        return out

    def signal_plane(self, sx: int, sy: int) -> np.ndarray:
        n, b = self.n, self.slab
        if self.layout == "idler":
            row = (sx % b) * n + sy
            return np.asarray(self._mm[sx // b][row]).reshape(n, n).T.copy()
        col = sx * n + sy
        return np.concatenate([np.asarray(mm[:, col]) for mm in self._mm]).reshape(n, n).T.copy()

    def close(self) -> None:
        for mm in self._mm:
            mm.flush()
        self._mm = []  # views are never handed out, so dropping references unmaps
        if self.directory and os.path.isdir(self.directory):
            shutil.rmtree(self.directory, ignore_errors=True)
        self.directory = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
