"""Synthetic cohort generator for desk-scale verification.

Each subject is produced by warping a per-modality template stack with a
known random affine, so registration quality can be measured against
ground truth. Class signal is planted in template space before warping:

* a low-rank spatio-temporal pattern in each image modality, scaled by a
  per-subject latent factor,
* class-shifted tabular features,
* an outcome value built from the sum of the latents, thresholded into the
  binary label.

The three latents are independent, one per modality, so the modalities
carry complementary information: each predicts the label on its own, and
combinations predict it better.

Landmark predictions are the true (warped) template landmarks plus noise,
with uncertainty values correlated to the actual perturbation size.
Optionally, a fraction of training-era subjects is corrupted: their
landmarks get large perturbations (placing them in the most uncertain
quantile bins) and their outcome value is mirrored across the decision
threshold, which flips the label. Removing those samples during quality
binning should then recover validation performance.

Everything is deterministic per seed, including the bytes on disk.
"""

import json
from dataclasses import asdict, dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import yaml

from .config import ALLOWED_RESOLUTIONS
from .data import (
    PAWP_THRESHOLD_MMHG,
    write_landmarks,
    write_template_landmarks,
    write_tensor,
)
from .errors import ConfigError
from .registration import AffineTransform2D, LandmarkRecord, warp_sample
from .tensor import Modality, TensorSample

START_DATE = date(2015, 1, 1)


@dataclass
class SynthSpec:
    n_subjects: int = 200
    image_size: int = 64
    n_phases: int = 20
    sa_signal: float = 1.0
    fc_signal: float = 1.0
    tabular_signal: float = 1.0
    noise_level: float = 0.25
    outcome_noise: float = 0.1
    landmark_noise_px: float = 0.5
    corrupt_fraction: float = 0.0
    corrupt_noise_px: float = 6.0
    corrupt_label_flip: bool = True
    train_fraction: float = 0.8
    max_rotation: float = 0.1
    max_translation_px: float = 3.0
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.n_subjects < 4:
            raise ConfigError("need at least 4 subjects")
        if self.image_size < 16:
            raise ConfigError("image size must be >= 16")
        if self.image_size % 16 != 0 and self.image_size not in ALLOWED_RESOLUTIONS:
            raise ConfigError(
                f"image size {self.image_size} cannot feed the pooling factors; "
                f"use a multiple of 16"
            )
        if self.n_phases < 2:
            raise ConfigError("need at least 2 temporal phases")
        if not 0.0 <= self.corrupt_fraction < 1.0:
            raise ConfigError("corrupt_fraction must be in [0, 1)")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must be in (0, 1]")
        return self


def load_synth_spec(path) -> SynthSpec:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: synth spec must be a mapping")
    unknown = set(raw) - set(SynthSpec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{path}: unknown synth keys: {', '.join(sorted(unknown))}")
    return SynthSpec(**raw).validate()


def _gaussian_blob(size: int, row_frac: float, col_frac: float, width_frac: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    dr = (rr - row_frac * size) / (width_frac * size)
    dc = (cc - col_frac * size) / (width_frac * size)
    return np.exp(-0.5 * (dr * dr + dc * dc))


def _template_stack(size: int, phases: int, modality: Modality) -> np.ndarray:
    """Smooth cine-like base stack in [0, ~1.3], different per modality."""
    if modality == Modality.SHORT_AXIS:
        plane = (
            0.9 * _gaussian_blob(size, 0.45, 0.50, 0.16)
            + 0.5 * _gaussian_blob(size, 0.38, 0.34, 0.08)
            + 0.3 * _gaussian_blob(size, 0.62, 0.60, 0.10)
        )
    else:
        plane = (
            0.9 * _gaussian_blob(size, 0.50, 0.42, 0.14)
            + 0.6 * _gaussian_blob(size, 0.34, 0.58, 0.09)
            + 0.3 * _gaussian_blob(size, 0.66, 0.50, 0.11)
        )
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    radius = np.hypot(rr - size / 2, cc - size / 2) / size
    k = np.arange(phases)
    # contraction-like temporal modulation, phase offset varying with radius
    motion = 1.0 + 0.35 * np.sin(2 * np.pi * k[None, None, :] / phases + 4.0 * radius[:, :, None])
    return plane[:, :, None] * motion


def _signal_pattern(size: int, phases: int, modality: Modality) -> np.ndarray:
    """Low-rank spatio-temporal pattern carrying the class signal.

    Wide blobs so the pattern survives max pooling down to 16x16 and the
    residual jitter of landmark-noise registration.
    """
    if modality == Modality.SHORT_AXIS:
        plane = _gaussian_blob(size, 0.42, 0.56, 0.17)
    else:
        plane = _gaussian_blob(size, 0.56, 0.40, 0.17)
    profile = np.cos(2 * np.pi * np.arange(phases) / phases)
    pattern = plane[:, :, None] * (1.0 + 0.5 * profile)[None, None, :]
    return pattern / np.abs(pattern).max()


def template_landmarks_for(size: int) -> dict:
    """Template landmark triangles, (row, col), one per image modality."""
    return {
        Modality.SHORT_AXIS: np.asarray(
            [[0.35 * size, 0.35 * size], [0.35 * size, 0.66 * size], [0.70 * size, 0.50 * size]]
        ),
        Modality.FOUR_CHAMBER: np.asarray(
            [[0.32 * size, 0.40 * size], [0.40 * size, 0.68 * size], [0.68 * size, 0.45 * size]]
        ),
    }


def _random_affine(rng: np.random.Generator, size: int, spec: SynthSpec) -> AffineTransform2D:
    theta = rng.uniform(-spec.max_rotation, spec.max_rotation)
    scale_r = rng.uniform(0.94, 1.06)
    scale_c = rng.uniform(0.94, 1.06)
    shear = rng.uniform(-0.04, 0.04)
    shift = rng.uniform(-spec.max_translation_px, spec.max_translation_px, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    linear = rot @ np.array([[scale_r, shear], [0.0, scale_c]])
    center = np.array([size / 2.0, size / 2.0])
    translation = center + shift - linear @ center
    return AffineTransform2D(linear, translation)


def generate(spec: SynthSpec, outdir) -> dict:
    """Write the cohort to ``outdir``; returns the ground-truth record."""
    spec.validate()
    outdir = Path(outdir)
    tensor_dir = outdir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    size, phases = spec.image_size, spec.n_phases
    modalities = (Modality.SHORT_AXIS, Modality.FOUR_CHAMBER)
    bases = {m: _template_stack(size, phases, m) for m in modalities}
    patterns = {m: _signal_pattern(size, phases, m) for m in modalities}
    amplitudes = {Modality.SHORT_AXIS: spec.sa_signal, Modality.FOUR_CHAMBER: spec.fc_signal}
    templates = template_landmarks_for(size)

    write_tensor(outdir / "template_sa.tsr", bases[Modality.SHORT_AXIS])
    write_tensor(outdir / "template_fc.tsr", bases[Modality.FOUR_CHAMBER])
    write_template_landmarks(outdir / "template_landmarks.csv", templates)

    n = spec.n_subjects
    latents = rng.standard_normal((n, 3))
    outcome_core = latents.sum(axis=1) / np.sqrt(3.0)
    pawp = 13.5 + 5.0 * outcome_core + spec.outcome_noise * rng.standard_normal(n)

    n_train_era = int(np.floor(spec.train_fraction * n))
    n_corrupt = int(round(spec.corrupt_fraction * n_train_era))
    corrupt = np.zeros(n, dtype=bool)
    if n_corrupt:
        chosen = rng.choice(n_train_era, size=n_corrupt, replace=False)
        corrupt[chosen] = True
        if spec.corrupt_label_flip:
            pawp[chosen] = 2.0 * PAWP_THRESHOLD_MMHG - pawp[chosen]

    blend = spec.tabular_signal * latents[:, 2] + 0.45 * rng.standard_normal(n)
    lv_mass = 95.0 + 20.0 * blend + 2.0 * rng.standard_normal(n)
    la_volume = 90.0 + 45.0 * blend + 6.0 * rng.standard_normal(n)

    manifest_lines = [
        "subject_id,diagnosis_date,pawp_mmhg,label,sa_path,fc_path,lv_mass,la_volume"
    ]
    landmark_records = []
    subject_truth = []
    for i in range(n):
        sid = f"S{i:04d}"
        diagnosis = START_DATE + timedelta(days=2 * i)
        transform = _random_affine(rng, size, spec)

        tensor_paths = {}
        for modality in modalities:
            stack = bases[modality] + amplitudes[modality] * latents[
                i, 0 if modality == Modality.SHORT_AXIS else 1
            ] * patterns[modality]
            stack = stack + spec.noise_level * rng.standard_normal(stack.shape)
            warped = warp_sample(TensorSample(stack, modality, subject_id=sid), transform)
            rel = f"tensors/{sid}_{'sa' if modality == Modality.SHORT_AXIS else 'fc'}.tsr"
            write_tensor(outdir / rel, warped.data)
            tensor_paths[modality] = rel

        landmark_errors = {}
        for modality in modalities:
            true_points = transform.apply(templates[modality])
            if corrupt[i]:
                norms = rng.uniform(spec.corrupt_noise_px, 1.5 * spec.corrupt_noise_px, size=3)
                angles = rng.uniform(0.0, 2.0 * np.pi, size=3)
                deltas = np.stack([norms * np.cos(angles), norms * np.sin(angles)], axis=1)
            else:
                deltas = spec.landmark_noise_px * rng.standard_normal((3, 2))
            observed = np.clip(true_points + deltas, 1.0, size - 2.0)
            error_norms = np.linalg.norm(deltas, axis=1)
            uncertainties = error_norms * rng.uniform(0.8, 1.2, size=3) + 0.01 * rng.uniform(size=3)
            landmark_records.append(
                LandmarkRecord(sid, modality, observed, uncertainties)
            )
            landmark_errors[modality.value] = [float(v) for v in error_norms]

        label = int(pawp[i] > PAWP_THRESHOLD_MMHG)
        manifest_lines.append(
            f"{sid},{diagnosis.isoformat()},{float(pawp[i])!r},{label},"
            f"{tensor_paths[Modality.SHORT_AXIS]},{tensor_paths[Modality.FOUR_CHAMBER]},"
            f"{float(lv_mass[i])!r},{float(la_volume[i])!r}"
        )
        subject_truth.append(
            {
                "subject_id": sid,
                "diagnosis_date": diagnosis.isoformat(),
                "latents": [float(v) for v in latents[i]],
                "pawp": float(pawp[i]),
                "label": label,
                "corrupted": bool(corrupt[i]),
                "affine_linear": [float(v) for v in transform.linear.ravel()],
                "affine_translation": [float(v) for v in transform.translation],
                "landmark_error_px": landmark_errors,
            }
        )

    (outdir / "manifest.csv").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    write_landmarks(outdir / "landmarks.csv", landmark_records)
    (outdir / "synth_spec.yaml").write_text(
        yaml.safe_dump(asdict(spec), sort_keys=True), encoding="utf-8"
    )

    truth = {
        "spec": asdict(spec),
        "signals": {
            "short_axis": {"latent": 0, "amplitude": spec.sa_signal, "kind": "low-rank image pattern"},
            "four_chamber": {"latent": 1, "amplitude": spec.fc_signal, "kind": "low-rank image pattern"},
            "tabular": {"latent": 2, "amplitude": spec.tabular_signal,
                         "features": ["lv_mass", "la_volume"]},
        },
        "outcome": {
            "threshold_mmhg": PAWP_THRESHOLD_MMHG,
            "rule": "pawp = 13.5 + 5 * (z1 + z2 + z3) / sqrt(3) + noise",
        },
        "n_corrupted": int(corrupt.sum()),
        "subjects": subject_truth,
    }
    (outdir / "ground_truth.json").write_text(
        json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return truth
