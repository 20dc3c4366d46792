"""Multimodal fusion: input-level tensor concatenation (early), latent-space
vector concatenation (late), and the tri-modal hybrid of the two.

Early fusion stacks the two image views along mode 1 (short-axis block on
top) so the result stays a third-order tensor. Late fusion standardizes each
feature block with statistics learned on training rows only, then
concatenates in declared order. Tabular features can only enter late.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError
from .tensor import Modality, TensorSample

TABULAR = "tabular"
IMAGE_MODALITIES = (Modality.SHORT_AXIS.value, Modality.FOUR_CHAMBER.value)
ALL_MODALITIES = IMAGE_MODALITIES + (TABULAR,)


class FusionStrategy(str, Enum):
    UNIMODAL = "unimodal"
    EARLY = "early"
    LATE = "late"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class FusionSpec:
    """One model family: a fusion strategy over an ordered modality subset."""

    name: str
    strategy: FusionStrategy
    modalities: tuple[str, ...]

    def __post_init__(self):
        for mod in self.modalities:
            if mod not in ALL_MODALITIES:
                raise ConfigError(f"unknown modality {mod!r} in model {self.name!r}")
        if len(set(self.modalities)) != len(self.modalities):
            raise ConfigError(f"duplicate modalities in model {self.name!r}")
        strat = FusionStrategy(self.strategy)
        if strat == FusionStrategy.UNIMODAL and len(self.modalities) != 1:
            raise ConfigError(f"unimodal model {self.name!r} must have exactly one modality")
        if strat == FusionStrategy.EARLY and tuple(sorted(self.modalities)) != tuple(
            sorted(IMAGE_MODALITIES)
        ):
            raise ConfigError(
                f"early fusion needs exactly the two image modalities, got {self.modalities}"
            )
        if strat == FusionStrategy.HYBRID and tuple(sorted(self.modalities)) != tuple(
            sorted(ALL_MODALITIES)
        ):
            raise ConfigError(f"hybrid fusion is tri-modal, got {self.modalities}")

    @property
    def uses_images(self) -> bool:
        return any(m in IMAGE_MODALITIES for m in self.modalities)


def early_fuse(sa: TensorSample, fc: TensorSample) -> TensorSample:
    """Stack short-axis on top of four-chamber along mode 1."""
    if sa.data.shape != fc.data.shape:
        raise DataError(
            f"early fusion needs matching shapes, got {sa.data.shape} and {fc.data.shape}"
        )
    fused = np.concatenate([sa.data, fc.data], axis=0)
    return TensorSample(fused, modality=Modality.FUSED, subject_id=sa.subject_id)


@dataclass
class BlockStandardizer:
    """Per-feature z-scoring with statistics frozen at fit time.

    Constant features map to zeros (the shared zero-variance rule).
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "BlockStandardizer":
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        std = rows.std(axis=0)
        # exact-constant columns get std 0 even when accumulation leaves dust
        std[rows.max(axis=0) == rows.min(axis=0)] = 0.0
        return cls(mean=rows.mean(axis=0), std=std)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != self.mean.shape[0]:
            raise DataError(
                f"block width {rows.shape[-1]} does not match standardizer "
                f"({self.mean.shape[0]} features)"
            )
        scale = np.where(self.std > 0.0, self.std, 1.0)
        out = (rows - self.mean) / scale
        return np.where(self.std > 0.0, out, 0.0)


def late_fuse(blocks, standardizers) -> np.ndarray:
    """Standardize each block with its training statistics and concatenate.

    Blocks may be single feature vectors or (M, D) matrices; declared order
    is preserved in the output.
    """
    if len(blocks) != len(standardizers):
        raise DataError(f"{len(blocks)} blocks but {len(standardizers)} standardizers")
    if not blocks:
        raise DataError("late fusion needs at least one block")
    out = [std.transform(np.asarray(block, dtype=np.float64))
           for block, std in zip(blocks, standardizers)]
    return np.concatenate(out, axis=-1)


def build_model_roster(modalities=ALL_MODALITIES, include_trimodal_late: bool = False):
    """The model families evaluated by the pipeline, restricted to the
    configured modalities. The default yields the 8 standard families."""
    for mod in modalities:
        if mod not in ALL_MODALITIES:
            raise ConfigError(f"unknown modality {mod!r}")
    allowed = set(modalities)
    sa, fc = IMAGE_MODALITIES
    roster = [
        FusionSpec("ehr", FusionStrategy.UNIMODAL, (TABULAR,)),
        FusionSpec("sa", FusionStrategy.UNIMODAL, (sa,)),
        FusionSpec("fc", FusionStrategy.UNIMODAL, (fc,)),
        FusionSpec("sa_fc_early", FusionStrategy.EARLY, (sa, fc)),
        FusionSpec("sa_fc_late", FusionStrategy.LATE, (sa, fc)),
        FusionSpec("sa_ehr_late", FusionStrategy.LATE, (sa, TABULAR)),
        FusionSpec("fc_ehr_late", FusionStrategy.LATE, (fc, TABULAR)),
        FusionSpec("trimodal_hybrid", FusionStrategy.HYBRID, (sa, fc, TABULAR)),
    ]
    if include_trimodal_late:
        roster.append(FusionSpec("trimodal_late", FusionStrategy.LATE, (sa, fc, TABULAR)))
    return [spec for spec in roster if set(spec.modalities) <= allowed]
