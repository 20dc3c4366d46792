"""Third-order tensor container and the algebraic primitives used everywhere else.

Conventions, frozen so that every downstream test is exact:

* A tensor sample has shape (rows, cols, phases). All in-memory math is
  float64; the on-disk container stores float32 (see pawpkit.data).
* Modes are numbered 1..3. Mode-n unfolding yields an ``I_n x (prod of the
  other dims)`` matrix whose columns enumerate the remaining modes in
  ascending mode order, last mode varying fastest (C order). For a 2x2x2
  tensor with ``t[i,j,k] = 4i + 2j + k`` the mode-1 unfolding rows are
  ``[0,1,2,3]`` and ``[4,5,6,7]``.
* Vectorization elsewhere in the package reuses this ordering.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import DataError

POOL_FACTORS = (2, 4, 8, 16)


class Modality(str, Enum):
    """Source view of an image stack. FUSED marks an early-fusion product."""

    SHORT_AXIS = "short_axis"
    FOUR_CHAMBER = "four_chamber"
    FUSED = "fused"


@dataclass
class TensorSample:
    """One subject's image stack for one modality.

    data: float64 array of shape (rows, cols, phases), all dims >= 1.
    """

    data: np.ndarray
    modality: Modality = Modality.SHORT_AXIS
    subject_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DataError(
                f"sample {self.subject_id!r}: expected a 3rd-order tensor, "
                f"got shape {self.data.shape}"
            )
        if min(self.data.shape) < 1:
            raise DataError(f"sample {self.subject_id!r}: empty dimension in {self.data.shape}")
        self.modality = Modality(self.modality)

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "TensorSample":
        return replace(self, data=data)


def zscore_normalize(sample: TensorSample) -> TensorSample:
    """Standardize a sample to mean 0, population std 1 over all voxels.

    A zero-variance (constant) sample maps to all zeros instead of raising,
    so blank padding slices cannot kill a run. Non-finite voxels are
    rejected with a diagnostic naming the sample.
    """
    data = sample.data
    if data.size < 2:
        raise DataError(f"sample {sample.subject_id!r}: need >= 2 voxels to normalize")
    if not np.all(np.isfinite(data)):
        bad = int(np.count_nonzero(~np.isfinite(data)))
        raise DataError(
            f"sample {sample.subject_id!r} ({sample.modality.value}): "
            f"{bad} non-finite voxel(s)"
        )
    if data.max() == data.min():  # constant sample, zero-variance rule
        return sample.with_data(np.zeros_like(data))
    mean = data.mean()
    std = data.std()  # population (divide by N)
    return sample.with_data((data - mean) / std)


def maxpool_downsample(sample: TensorSample, factor: int) -> TensorSample:
    """In-plane max pooling by ``factor``; temporal phases are untouched.

    Rows and cols must be divisible by the factor; there is no implicit
    padding.
    """
    if factor not in POOL_FACTORS:
        raise DataError(f"pooling factor must be one of {POOL_FACTORS}, got {factor}")
    rows, cols, phases = sample.data.shape
    if rows % factor or cols % factor:
        raise DataError(
            f"sample {sample.subject_id!r}: in-plane shape {rows}x{cols} "
            f"not divisible by pooling factor {factor}"
        )
    blocks = sample.data.reshape(rows // factor, factor, cols // factor, factor, phases)
    return sample.with_data(blocks.max(axis=(1, 3)))


def _check_mode(t: np.ndarray, mode: int) -> None:
    if t.ndim != 3:
        raise DataError(f"expected a 3rd-order tensor, got shape {t.shape}")
    if mode not in (1, 2, 3):
        raise DataError(f"mode must be 1, 2 or 3, got {mode}")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n unfolding into an ``I_mode x rest`` matrix (convention above)."""
    t = np.asarray(t, dtype=np.float64)
    _check_mode(t, mode)
    return np.moveaxis(t, mode - 1, 0).reshape(t.shape[mode - 1], -1)


def fold(m: np.ndarray, mode: int, dims) -> np.ndarray:
    """Exact inverse of :func:`unfold` for a tensor of shape ``dims``."""
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise DataError(f"dims must have length 3, got {dims}")
    if mode not in (1, 2, 3):
        raise DataError(f"mode must be 1, 2 or 3, got {mode}")
    rest = [dims[i] for i in range(3) if i != mode - 1]
    if m.shape != (dims[mode - 1], rest[0] * rest[1]):
        raise DataError(
            f"matrix shape {m.shape} inconsistent with dims {dims} on mode {mode}"
        )
    return np.moveaxis(m.reshape(dims[mode - 1], *rest), 0, mode - 1)


def mode_product(t: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``t`` along ``mode`` by ``u`` transposed.

    ``u`` has shape ``(I_mode, P)``; the output replaces the mode's size
    with ``P``. Applications along distinct modes commute.
    """
    t = np.asarray(t, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_mode(t, mode)
    if u.ndim != 2 or u.shape[0] != t.shape[mode - 1]:
        raise DataError(
            f"projection shape {u.shape} does not match tensor dim "
            f"{t.shape[mode - 1]} on mode {mode}"
        )
    new_dims = list(t.shape)
    new_dims[mode - 1] = u.shape[1]
    return fold(u.T @ unfold(t, mode), mode, new_dims)
