"""Landmark-based 2D affine registration of image stacks to a template space.

Each subject carries exactly three landmarks per modality. Three point
correspondences determine the six affine degrees of freedom exactly, so the
transform is obtained by solving one 3x3 linear system per axis. Resampling
is bilinear with zero fill outside the source bounds, and the same in-plane
transform is applied to every temporal phase.

Points are (row, col) pixel coordinates throughout this module. The landmark
CSV on disk stores (x, y) = (col, row); parsing in pawpkit.data swaps them.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CollinearLandmarks, DataError
from .tensor import Modality, TensorSample

COLLINEARITY_AREA_TOL = 1e-6  # px^2


@dataclass
class LandmarkRecord:
    """Three predicted landmarks plus their uncertainty scalars."""

    subject_id: str
    modality: Modality
    points: np.ndarray  # (3, 2) float, (row, col)
    uncertainties: np.ndarray  # (3,) float, >= 0

    def __post_init__(self):
        self.modality = Modality(self.modality)
        self.points = np.asarray(self.points, dtype=np.float64)
        self.uncertainties = np.asarray(self.uncertainties, dtype=np.float64)
        if self.points.shape != (3, 2):
            raise DataError(
                f"landmarks for {self.subject_id!r}: expected 3 (row, col) points, "
                f"got shape {self.points.shape}"
            )
        if self.uncertainties.shape != (3,):
            raise DataError(f"landmarks for {self.subject_id!r}: expected 3 uncertainties")
        if not np.all(np.isfinite(self.points)):
            raise DataError(f"landmarks for {self.subject_id!r}: non-finite coordinates")
        if not np.all(np.isfinite(self.uncertainties)) or np.any(self.uncertainties < 0):
            raise DataError(f"landmarks for {self.subject_id!r}: bad uncertainty values")


@dataclass
class AffineTransform2D:
    """Invertible in-plane map ``p -> A @ p + t`` on (row, col) points."""

    linear: np.ndarray  # (2, 2)
    translation: np.ndarray  # (2,)

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.linear.shape != (2, 2) or self.translation.shape != (2,):
            raise DataError("affine transform needs a 2x2 linear part and a 2-vector")
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.translation))):
            raise DataError("affine transform has non-finite entries")
        if np.linalg.det(self.linear) == 0.0:
            raise DataError("affine transform is singular")

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.eye(2), np.zeros(2))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.linear.T + self.translation

    def inverse(self) -> "AffineTransform2D":
        inv = np.linalg.inv(self.linear)
        return AffineTransform2D(inv, -inv @ self.translation)

    def compose(self, other: "AffineTransform2D") -> "AffineTransform2D":
        """Transform equal to applying ``other`` first, then ``self``."""
        return AffineTransform2D(
            self.linear @ other.linear, self.linear @ other.translation + self.translation
        )


def triangle_area(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=np.float64)
    u, v = p[1] - p[0], p[2] - p[0]
    return 0.5 * abs(float(u[0] * v[1] - u[1] * v[0]))


def estimate_affine(src, dst, subject_id: str = "") -> AffineTransform2D:
    """Exact affine transform mapping three src points onto three dst points.

    Raises CollinearLandmarks when the source triangle is degenerate
    (area below COLLINEARITY_AREA_TOL), since the system is then singular.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (3, 2) or dst.shape != (3, 2):
        raise DataError("estimate_affine expects 3 source and 3 destination points")
    if triangle_area(src) < COLLINEARITY_AREA_TOL:
        raise CollinearLandmarks(
            f"collinear or duplicate landmarks for subject {subject_id!r}"
            f" (triangle area {triangle_area(src):.3g} px^2)",
            subject_id=subject_id,
        )
    # dst = M @ [src; 1] with M 2x3; solve the 3x3 system once for both axes.
    design = np.hstack([src, np.ones((3, 1))])
    coeffs = np.linalg.solve(design, dst)  # (3, 2): rows are A columns + t
    return AffineTransform2D(coeffs[:2].T, coeffs[2])


def warp_plane(plane: np.ndarray, xf: AffineTransform2D, out_shape=None) -> np.ndarray:
    """Bilinear warp of a single 2D plane; out-of-bounds source reads are 0."""
    plane = np.asarray(plane, dtype=np.float64)
    rows, cols = out_shape if out_shape is not None else plane.shape
    inv = xf.inverse()
    rr, cc = np.meshgrid(np.arange(rows, dtype=np.float64),
                         np.arange(cols, dtype=np.float64), indexing="ij")
    src = np.stack([rr.ravel(), cc.ravel()], axis=1) @ inv.linear.T + inv.translation
    return _bilinear_gather(plane[..., None], src, rows, cols)[..., 0]


def warp_sample(sample: TensorSample, xf: AffineTransform2D, out_shape=None) -> TensorSample:
    """Warp every temporal phase of a sample by the same in-plane transform."""
    data = sample.data
    rows, cols = out_shape if out_shape is not None else data.shape[:2]
    inv = xf.inverse()
    rr, cc = np.meshgrid(np.arange(rows, dtype=np.float64),
                         np.arange(cols, dtype=np.float64), indexing="ij")
    src = np.stack([rr.ravel(), cc.ravel()], axis=1) @ inv.linear.T + inv.translation
    warped = _bilinear_gather(data, src, rows, cols)
    return sample.with_data(warped)


def _bilinear_gather(data: np.ndarray, src: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Sample ``data`` (R, C, P) at fractional (row, col) positions ``src``."""
    in_rows, in_cols = data.shape[:2]
    r0 = np.floor(src[:, 0]).astype(np.int64)
    c0 = np.floor(src[:, 1]).astype(np.int64)
    fr = (src[:, 0] - r0)[:, None]
    fc = (src[:, 1] - c0)[:, None]

    def read(ri, ci):
        ok = (ri >= 0) & (ri < in_rows) & (ci >= 0) & (ci < in_cols)
        vals = data[np.clip(ri, 0, in_rows - 1), np.clip(ci, 0, in_cols - 1)]
        vals = vals * ok[:, None]
        return vals

    out = (
        read(r0, c0) * (1 - fr) * (1 - fc)
        + read(r0, c0 + 1) * (1 - fr) * fc
        + read(r0 + 1, c0) * fr * (1 - fc)
        + read(r0 + 1, c0 + 1) * fr * fc
    )
    return out.reshape(rows, cols, data.shape[2])


def register_sample(
    sample: TensorSample,
    landmarks: LandmarkRecord,
    template_points: np.ndarray,
    out_shape=None,
) -> TensorSample:
    xf = estimate_affine(landmarks.points, template_points, subject_id=sample.subject_id)
    return warp_sample(sample, xf, out_shape=out_shape)


def register_dataset(samples, landmarks, template_landmarks):
    """Register every sample onto its modality's template landmarks.

    ``landmarks`` maps (subject_id, modality) to a LandmarkRecord;
    ``template_landmarks`` maps modality to a (3, 2) point array.

    Returns (registered_samples, exclusions) where exclusions is a list of
    (subject_id, modality, reason) for samples that could not be registered
    (missing landmark record or collinear landmarks). Input order is
    preserved for the surviving samples.
    """
    registered = []
    exclusions = []
    for sample in samples:
        key = (sample.subject_id, Modality(sample.modality))
        record = landmarks.get(key)
        if record is None:
            exclusions.append((sample.subject_id, sample.modality.value, "missing landmark record"))
            continue
        template = template_landmarks.get(Modality(sample.modality))
        if template is None:
            raise DataError(f"no template landmarks for modality {sample.modality.value!r}")
        try:
            registered.append(register_sample(sample, record, template))
        except CollinearLandmarks as exc:
            exclusions.append((sample.subject_id, sample.modality.value, str(exc)))
    return registered, exclusions
