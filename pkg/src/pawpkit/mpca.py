"""Multilinear PCA: per-mode projections maximizing total scatter, plus
Fisher-score feature ranking.

The solver alternates over modes. For mode n it builds the partial scatter
matrix of the mean-centered samples projected through the other two modes'
current bases, then replaces the mode-n basis with that matrix's leading
eigenvectors. Each sweep can only grow the captured scatter, which is
asserted on every fit.

Output dimensions come from the explained-variance ratio: per mode, the
smallest eigenvalue count of the full (unprojected) mode scatter matrix
whose mass reaches the ratio. Initialization truncates those same
eigenvectors, as in full-projection initialization.

Eigenvector signs are fixed (largest-magnitude entry positive) so fitted
models are bit-reproducible.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError, SingleClassError

log = logging.getLogger(__name__)

DEFAULT_VARIANCE_RATIO = 0.97
DEFAULT_MAX_ITER = 15
DEFAULT_TOL = 1e-6
DEFAULT_TOP_K = 210

# Relative slack for the monotone-ascent assertion; eigh noise is ~1e-14.
_ASCENT_RTOL = 1e-10


@dataclass
class MpcaModel:
    """Fitted multilinear projection.

    projections[n] has orthonormal columns mapping mode n+1 from
    input_dims[n] down to output_dims[n]. captured_scatter is the total
    scatter of the projected, centered training samples; total_scatter is
    the input-space value. degenerate marks an all-identical training set.
    """

    mean_tensor: np.ndarray
    projections: list[np.ndarray]
    output_dims: tuple[int, int, int]
    variance_ratio: float
    captured_scatter: float
    total_scatter: float
    iterations_run: int
    scatter_history: list[float]
    degenerate: bool = False

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return tuple(self.mean_tensor.shape)


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    idx = int(np.argmax(np.abs(vec)))
    return -vec if vec[idx] < 0 else vec


def _leading_eigvecs(scatter: np.ndarray, count: int) -> np.ndarray:
    vals, vecs = np.linalg.eigh(scatter)
    order = np.argsort(vals)[::-1][:count]
    basis = vecs[:, order]
    for j in range(basis.shape[1]):
        basis[:, j] = _fix_sign(basis[:, j])
    return basis


def _dims_from_variance(eigvals: np.ndarray, ratio: float) -> int:
    vals = np.sort(np.clip(eigvals, 0.0, None))[::-1]
    total = vals.sum()
    if total <= 0.0:
        return 1
    target = ratio * total - 1e-12 * total
    return int(np.searchsorted(np.cumsum(vals), target) + 1)


def _mode_scatter(centered: np.ndarray, mode: int, projections, skip_projection: bool):
    """Partial scatter matrix for one mode, all samples at once.

    ``centered`` stacks the centered samples along axis 0. The other two
    modes are projected through their current bases unless
    ``skip_projection`` (used for initialization and dimension selection).
    """
    work = centered
    for other in range(3):
        if other == mode or skip_projection:
            continue
        u = projections[other]
        work = np.moveaxis(np.tensordot(work, u, axes=([other + 1], [0])), 3, other + 1)
    flat = np.moveaxis(work, mode + 1, 1).reshape(work.shape[0], work.shape[mode + 1], -1)
    return np.einsum("mar,mbr->ab", flat, flat)


def _project_stack(centered: np.ndarray, projections) -> np.ndarray:
    work = centered
    for mode in range(3):
        work = np.moveaxis(np.tensordot(work, projections[mode], axes=([mode + 1], [0])), 3, mode + 1)
    return work


def fit(
    samples,
    variance_ratio: float = DEFAULT_VARIANCE_RATIO,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> MpcaModel:
    """Fit the projection to a list of equally shaped 3rd-order arrays."""
    if not 0.0 < variance_ratio <= 1.0:
        raise DataError(f"variance ratio must be in (0, 1], got {variance_ratio}")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    if stack.ndim != 4 or stack.shape[0] < 2:
        raise DataError("need at least 2 samples of identical 3rd-order shape")
    dims = stack.shape[1:]

    mean = stack.mean(axis=0)
    centered = stack - mean
    total_scatter = float(np.sum(centered * centered))

    if total_scatter == 0.0:
        projections = [np.eye(d, 1) for d in dims]
        log.warning("all training samples identical; returning degenerate model")
        return MpcaModel(
            mean_tensor=mean,
            projections=projections,
            output_dims=(1, 1, 1),
            variance_ratio=variance_ratio,
            captured_scatter=0.0,
            total_scatter=0.0,
            iterations_run=0,
            scatter_history=[0.0],
            degenerate=True,
        )

    # Dimension selection and initialization from the full mode scatters.
    projections = [None, None, None]
    out_dims = [0, 0, 0]
    for mode in range(3):
        scatter = _mode_scatter(centered, mode, projections, skip_projection=True)
        eigvals = np.linalg.eigvalsh(scatter)
        out_dims[mode] = _dims_from_variance(eigvals, variance_ratio)
        projections[mode] = _leading_eigvecs(scatter, out_dims[mode])

    def captured() -> float:
        proj = _project_stack(centered, projections)
        return float(np.sum(proj * proj))

    history = [captured()]
    iterations = 0
    for _ in range(max_iter):
        for mode in range(3):
            scatter = _mode_scatter(centered, mode, projections, skip_projection=False)
            projections[mode] = _leading_eigvecs(scatter, out_dims[mode])
        iterations += 1
        now = captured()
        prev = history[-1]
        if now < prev * (1.0 - _ASCENT_RTOL):
            raise AssertionError(
                f"captured scatter decreased: {prev:.17g} -> {now:.17g} "
                f"at iteration {iterations}"
            )
        history.append(now)
        if now - prev < tol * max(prev, np.finfo(float).tiny):
            break

    return MpcaModel(
        mean_tensor=mean,
        projections=projections,
        output_dims=tuple(out_dims),
        variance_ratio=variance_ratio,
        captured_scatter=history[-1],
        total_scatter=total_scatter,
        iterations_run=iterations,
        scatter_history=history,
    )


def transform(model: MpcaModel, sample) -> np.ndarray:
    """Project one sample (centered by the training mean) to the reduced space."""
    data = np.asarray(sample, dtype=np.float64)
    if data.shape != model.input_dims:
        raise DataError(f"sample shape {data.shape} != model input {model.input_dims}")
    work = data - model.mean_tensor
    for mode in range(3):
        work = np.moveaxis(np.tensordot(work, model.projections[mode], axes=([mode], [0])), 2, mode)
    return work


def transform_many(model: MpcaModel, samples) -> np.ndarray:
    """Vectorized transform; returns (M, P1*P2*P3) feature rows."""
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    if stack.shape[1:] != model.input_dims:
        raise DataError(f"sample shape {stack.shape[1:]} != model input {model.input_dims}")
    reduced = _project_stack(stack - model.mean_tensor, model.projections)
    return reduced.reshape(reduced.shape[0], -1)


def vectorize(reduced: np.ndarray) -> np.ndarray:
    """Flatten a reduced tensor in the frozen unfolding order (C order)."""
    return np.asarray(reduced, dtype=np.float64).reshape(-1)


def devectorize(vec: np.ndarray, dims) -> np.ndarray:
    return np.asarray(vec, dtype=np.float64).reshape(tuple(dims))


def fisher_scores(features: np.ndarray, labels: np.ndarray):
    """Per-feature Fisher score for a binary problem.

    Returns (scores, between_class) where ``between_class`` is the
    between-class numerator, used to break ties among infinite scores
    (zero within-class variance with nonzero separation).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise DataError("features must be (M, D) aligned with labels")
    pos = labels > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("Fisher scores need both classes present")
    mu = features.mean(axis=0)
    mu_pos = features[pos].mean(axis=0)
    mu_neg = features[~pos].mean(axis=0)
    var_pos = features[pos].var(axis=0)  # population variance
    var_neg = features[~pos].var(axis=0)
    between = n_pos * (mu_pos - mu) ** 2 + n_neg * (mu_neg - mu) ** 2
    within = n_pos * var_pos + n_neg * var_neg
    scores = np.zeros_like(between)
    informative = within > 0.0
    scores[informative] = between[informative] / within[informative]
    scores[~informative & (between > 0.0)] = np.inf
    return scores, between


@dataclass
class FeatureSelection:
    """Top-k feature indices by descending Fisher score."""

    fisher_values: np.ndarray
    selected_indices: np.ndarray
    top_k: int


def select_top_k(scores: np.ndarray, k: int, tiebreak=None) -> FeatureSelection:
    """Indices of the k largest scores.

    Ties resolve by descending ``tiebreak`` (when given), then ascending
    index. If fewer than k features exist, all are returned with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    n = scores.shape[0]
    if k > n:
        log.warning("requested top %d features but only %d exist; keeping all", k, n)
    secondary = np.zeros(n) if tiebreak is None else -np.asarray(tiebreak, dtype=np.float64)
    order = np.lexsort((np.arange(n), secondary, np.negative(scores)))
    chosen = order[: min(k, n)]
    return FeatureSelection(fisher_values=scores, selected_indices=chosen, top_k=k)


def save_model(path, model: MpcaModel, selection: FeatureSelection | None = None) -> None:
    """Serialize a fitted model (and optional feature selection) to one file."""
    payload = {
        "format_version": np.int64(1),
        "mean_tensor": model.mean_tensor,
        "proj_mode1": model.projections[0],
        "proj_mode2": model.projections[1],
        "proj_mode3": model.projections[2],
        "output_dims": np.asarray(model.output_dims, dtype=np.int64),
        "variance_ratio": np.float64(model.variance_ratio),
        "captured_scatter": np.float64(model.captured_scatter),
        "total_scatter": np.float64(model.total_scatter),
        "iterations_run": np.int64(model.iterations_run),
        "scatter_history": np.asarray(model.scatter_history, dtype=np.float64),
        "degenerate": np.bool_(model.degenerate),
    }
    if selection is not None:
        payload["fisher_values"] = selection.fisher_values
        payload["selected_indices"] = np.asarray(selection.selected_indices, dtype=np.int64)
        payload["top_k"] = np.int64(selection.top_k)
    np.savez(path, **payload)


def load_model(path):
    """Inverse of :func:`save_model`; returns (model, selection or None)."""
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != 1:
            raise DataError(f"unsupported model format version {version}")
        model = MpcaModel(
            mean_tensor=data["mean_tensor"],
            projections=[data["proj_mode1"], data["proj_mode2"], data["proj_mode3"]],
            output_dims=tuple(int(d) for d in data["output_dims"]),
            variance_ratio=float(data["variance_ratio"]),
            captured_scatter=float(data["captured_scatter"]),
            total_scatter=float(data["total_scatter"]),
            iterations_run=int(data["iterations_run"]),
            scatter_history=[float(v) for v in data["scatter_history"]],
            degenerate=bool(data["degenerate"]),
        )
        selection = None
        if "selected_indices" in data:
            selection = FeatureSelection(
                fisher_values=data["fisher_values"],
                selected_indices=data["selected_indices"],
                top_k=int(data["top_k"]),
            )
    return model, selection
