"""End-to-end orchestration: preprocess, split, quality binning, per-family
training, evaluation, and artifact emission.

Stage order: z-score normalize, register to the template space, max-pool to
each configured resolution, split by diagnosis time, run uncertainty
binning with a cross-validated AUC stop rule, then per model family fit
the tensor projections, select features, fuse, grid-search the classifier,
calibrate, and evaluate on the held-out recent-era test set.

Everything fitted consumes training rows only; a leakage audit records the
subject ids behind every fitted artifact and verifies them against the
split. All randomness is derived from the config seed.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import binning as binning_mod
from . import mpca, svm
from .audit import LeakageAudit
from .config import RunConfig, save_config
from .data import read_landmarks, read_manifest, read_template_landmarks, read_tensor, write_tensor
from .errors import ConfigError, DataError, PawpkitError
from .evaluation import (
    EvalReport,
    confusion,
    accuracy as accuracy_of,
    dca_curve,
    mcc as mcc_of,
    partitioned_std,
    roc_auc,
    temporal_split,
)
from .fusion import (
    TABULAR,
    BlockStandardizer,
    FusionSpec,
    FusionStrategy,
    build_model_roster,
    late_fuse,
)
from .registration import estimate_affine, warp_sample
from .tensor import Modality, TensorSample, maxpool_downsample, zscore_normalize

log = logging.getLogger(__name__)

BINNING_VALIDATION_C = 1.0
MODEL_FORMAT_VERSION = 1
EARLY_BLOCK = "early"

IMAGE_KEYS = {
    Modality.SHORT_AXIS.value: Modality.SHORT_AXIS,
    Modality.FOUR_CHAMBER.value: Modality.FOUR_CHAMBER,
}


def _fmt(value: float) -> str:
    return repr(float(value))


@dataclass
class Preprocessed:
    """Registered, normalized, per-resolution pooled cohort."""

    subject_ids: list[str]
    dates: list[date]
    labels: np.ndarray
    pawp: list
    tabular: np.ndarray
    tabular_names: list[str]
    tensors: dict  # resolution -> modality value -> (n, r, c, p) stack
    landmarks: dict  # (sid, Modality) -> LandmarkRecord
    exclusions: list = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)

    def index_of(self, subject_ids) -> np.ndarray:
        lookup = {sid: i for i, sid in enumerate(self.subject_ids)}
        return np.asarray([lookup[sid] for sid in subject_ids], dtype=np.int64)

    @property
    def train_rows(self) -> np.ndarray:
        return self.index_of(self.train_ids)

    @property
    def test_rows(self) -> np.ndarray:
        return self.index_of(self.test_ids)


def pool_factor(base: int, resolution: int) -> int:
    if base == resolution:
        return 1
    if base % resolution != 0:
        raise ConfigError(f"resolution {resolution} does not divide image size {base}")
    factor = base // resolution
    if factor not in (2, 4, 8, 16):
        raise ConfigError(
            f"image size {base} to resolution {resolution} needs pooling factor "
            f"{factor}, supported factors are 2, 4, 8, 16"
        )
    return factor


def preprocess(config: RunConfig) -> Preprocessed:
    """Normalize, register, downsample, and split the cohort.

    Tensor files are streamed one subject at a time so only the pooled
    stacks stay in memory. Subjects whose landmarks are missing or
    collinear are excluded (both modalities) and reported.
    """
    manifest = read_manifest(config.manifest)
    landmarks = read_landmarks(config.landmarks)
    templates = read_template_landmarks(config.template_landmarks)
    modalities = (Modality.SHORT_AXIS, Modality.FOUR_CHAMBER)
    for modality in modalities:
        if modality not in templates:
            raise DataError(f"template landmarks missing modality {modality.value!r}")

    kept_rows = []
    exclusions = []
    pooled = {res: {m.value: [] for m in modalities} for res in config.resolutions}
    phase_count = None
    for row in manifest.rows:
        per_res = {res: {} for res in config.resolutions}
        problem = None
        for modality, path in ((Modality.SHORT_AXIS, row.sa_path),
                               (Modality.FOUR_CHAMBER, row.fc_path)):
            record = landmarks.get((row.subject_id, modality))
            if record is None:
                problem = (row.subject_id, modality.value, "missing landmark record")
                break
            try:
                raw = read_tensor(path)
                if raw.shape[0] != raw.shape[1]:
                    raise DataError(f"{path}: pipeline expects square in-plane images")
                if phase_count is None:
                    phase_count = raw.shape[2]
                elif raw.shape[2] != phase_count:
                    raise DataError(f"{path}: {raw.shape[2]} phases, expected {phase_count}")
                factors = {res: pool_factor(raw.shape[0], res) for res in config.resolutions}
                sample = zscore_normalize(TensorSample(raw, modality, row.subject_id))
                xf = estimate_affine(record.points, templates[modality],
                                     subject_id=row.subject_id)
                sample = warp_sample(sample, xf)
                for res in config.resolutions:
                    f = factors[res]
                    out = sample if f == 1 else maxpool_downsample(sample, f)
                    per_res[res][modality.value] = out.data
            except DataError as exc:
                problem = (row.subject_id, modality.value, str(exc))
                break
        if problem is not None:
            exclusions.append(problem)
            log.warning("excluding subject %s (%s): %s", *problem)
            continue
        kept_rows.append(row)
        for res in config.resolutions:
            for modality in modalities:
                pooled[res][modality.value].append(per_res[res][modality.value])

    tensors = {
        res: {mv: np.stack(stacks) if stacks else np.empty((0,)) for mv, stacks in by_mod.items()}
        for res, by_mod in pooled.items()
    }
    pre = Preprocessed(
        subject_ids=[r.subject_id for r in kept_rows],
        dates=[r.diagnosis_date for r in kept_rows],
        labels=np.asarray([r.label for r in kept_rows], dtype=np.int64),
        pawp=[r.pawp for r in kept_rows],
        tabular=np.stack([r.tabular for r in kept_rows]) if kept_rows else np.empty((0, 2)),
        tabular_names=manifest.tabular_names,
        tensors=tensors,
        landmarks=landmarks,
        exclusions=exclusions,
    )
    if not kept_rows:
        return pre
    train_idx, test_idx = temporal_split(pre.dates, pre.subject_ids, config.train_fraction)
    pre.train_ids = [pre.subject_ids[i] for i in train_idx]
    pre.test_ids = [pre.subject_ids[i] for i in test_idx]
    return pre


# ---------------------------------------------------------------------------
# feature blocks


def _image_stack(pre: Preprocessed, key: str, resolution: int, rows: np.ndarray) -> np.ndarray:
    if key == EARLY_BLOCK:
        sa = pre.tensors[resolution][Modality.SHORT_AXIS.value][rows]
        fc = pre.tensors[resolution][Modality.FOUR_CHAMBER.value][rows]
        return np.concatenate([sa, fc], axis=1)  # short-axis block on top (mode 1)
    return pre.tensors[resolution][key][rows]


def family_block_keys(spec: FusionSpec) -> list[str]:
    strategy = FusionStrategy(spec.strategy)
    if strategy == FusionStrategy.EARLY:
        return [EARLY_BLOCK]
    if strategy == FusionStrategy.HYBRID:
        return [EARLY_BLOCK, TABULAR]
    return list(spec.modalities)


@dataclass
class ImageBlockModel:
    """MPCA + Fisher selection for one image block at one resolution."""

    key: str
    resolution: int
    model: mpca.MpcaModel
    selection: mpca.FeatureSelection

    def features(self, pre: Preprocessed, rows: np.ndarray) -> np.ndarray:
        stack = _image_stack(pre, self.key, self.resolution, rows)
        return mpca.transform_many(self.model, stack)[:, self.selection.selected_indices]


def fit_image_block(
    pre: Preprocessed,
    key: str,
    resolution: int,
    train_rows: np.ndarray,
    config: RunConfig,
    audit: LeakageAudit | None = None,
    train_ids=None,
) -> ImageBlockModel:
    stack = _image_stack(pre, key, resolution, train_rows)
    model = mpca.fit(stack, variance_ratio=config.variance_ratio)
    features = mpca.transform_many(model, stack)
    scores, between = mpca.fisher_scores(features, pre.labels[train_rows])
    selection = mpca.select_top_k(scores, config.top_k, tiebreak=between)
    if audit is not None:
        audit.record(f"mpca_fisher[{key}@{resolution}]", train_ids)
    return ImageBlockModel(key=key, resolution=resolution, model=model, selection=selection)


@dataclass
class TrainedFamily:
    spec: FusionSpec
    resolution: int
    block_keys: list[str]
    image_blocks: dict  # key -> ImageBlockModel
    standardizers: list[BlockStandardizer]
    classifier: svm.LinearClassifier
    best_c: float
    cv_table: list
    cv_mean_auc: float

    @property
    def name(self) -> str:
        return f"{self.spec.name}@{self.resolution}"

    def features(self, pre: Preprocessed, rows: np.ndarray) -> np.ndarray:
        blocks = []
        for key in self.block_keys:
            if key == TABULAR:
                blocks.append(pre.tabular[rows])
            else:
                blocks.append(self.image_blocks[key].features(pre, rows))
        return late_fuse(blocks, self.standardizers)


def fit_family(
    spec: FusionSpec,
    resolution: int,
    pre: Preprocessed,
    train_ids,
    config: RunConfig,
    audit: LeakageAudit | None = None,
    block_cache: dict | None = None,
) -> TrainedFamily:
    """Train one model family at one resolution on the given training ids."""
    train_rows = pre.index_of(train_ids)
    y_train = pre.labels[train_rows]
    block_keys = family_block_keys(spec)

    image_blocks = {}
    raw_blocks = []
    for key in block_keys:
        if key == TABULAR:
            raw_blocks.append(pre.tabular[train_rows])
            continue
        cache_key = (key, resolution)
        if block_cache is not None and cache_key in block_cache:
            block = block_cache[cache_key]
        else:
            block = fit_image_block(pre, key, resolution, train_rows, config,
                                    audit=audit, train_ids=train_ids)
            if block_cache is not None:
                block_cache[cache_key] = block
        image_blocks[key] = block
        raw_blocks.append(block.features(pre, train_rows))

    standardizers = [BlockStandardizer.fit(block) for block in raw_blocks]
    if audit is not None:
        audit.record(f"standardizers[{spec.name}@{resolution}]", train_ids)
    features_train = late_fuse(raw_blocks, standardizers)

    best_c, cv_table = svm.grid_search_cv(
        features_train, y_train, grid=config.c_grid, folds=config.cv_folds,
        seed=config.seed, balanced=config.balanced_class_weights,
    )
    cv_mean_auc = float(np.mean([auc for c, _, auc in cv_table if c == best_c]))
    if audit is not None:
        audit.record(f"grid_search[{spec.name}@{resolution}]", train_ids)

    classifier = svm.train(features_train, y_train, c=best_c, seed=config.seed,
                           balanced=config.balanced_class_weights)
    oof_scores = svm.cross_val_scores(
        features_train, y_train, c=best_c, folds=config.cv_folds,
        seed=config.seed, balanced=config.balanced_class_weights,
    )
    classifier = svm.calibrate(classifier, oof_scores, y_train)
    if audit is not None:
        audit.record(f"svm_platt[{spec.name}@{resolution}]", train_ids)

    return TrainedFamily(
        spec=spec,
        resolution=resolution,
        block_keys=block_keys,
        image_blocks=image_blocks,
        standardizers=standardizers,
        classifier=classifier,
        best_c=best_c,
        cv_table=cv_table,
        cv_mean_auc=cv_mean_auc,
    )


def evaluate_family(trained: TrainedFamily, pre: Preprocessed, config: RunConfig):
    """Test-set metrics with time-partitioned standard deviations."""
    test_rows = pre.test_rows
    features = trained.features(pre, test_rows)
    scores = svm.decision_scores(trained.classifier, features)
    probs = svm.predict_proba(trained.classifier, features)
    y = pre.labels[test_rows]

    auc = roc_auc(scores, y)
    tp, fp, tn, fn = confusion(probs >= 0.5, y)
    acc = accuracy_of(tp, fp, tn, fn)
    mcc_val = mcc_of(tp, fp, tn, fn)

    dates = [pre.dates[i] for i in test_rows]
    ids = [pre.subject_ids[i] for i in test_rows]

    def auc_chunk(chunk):
        return roc_auc(scores[chunk], y[chunk])

    def acc_chunk(chunk):
        return accuracy_of(*confusion(probs[chunk] >= 0.5, y[chunk]))

    def mcc_chunk(chunk):
        return mcc_of(*confusion(probs[chunk] >= 0.5, y[chunk]))

    parts = config.test_parts
    _, auc_std, auc_parts = partitioned_std(dates, ids, auc_chunk, parts)
    _, acc_std, acc_parts = partitioned_std(dates, ids, acc_chunk, parts)
    _, mcc_std, mcc_parts = partitioned_std(dates, ids, mcc_chunk, parts)

    report = EvalReport(
        model=trained.spec.name,
        resolution=trained.resolution,
        auc=auc,
        accuracy=acc,
        mcc=mcc_val,
        auc_std=auc_std,
        accuracy_std=acc_std,
        mcc_std=mcc_std,
        per_part={"auc": auc_parts, "accuracy": acc_parts, "mcc": mcc_parts},
        best_c=trained.best_c,
    )
    return report, scores, probs


# ---------------------------------------------------------------------------
# binning


def make_binning_validator(pre: Preprocessed, config: RunConfig, audit: LeakageAudit | None):
    """Mean CV AUC of an early-fusion model at the lowest resolution.

    Used as the fixed validation metric inside the bin-removal loop; the
    classifier C is held at BINNING_VALIDATION_C so the stop rule's signal
    does not depend on a nested grid search.
    """
    resolution = min(config.resolutions)
    calls = {"n": 0}

    def validate(surviving_ids):
        rows = pre.index_of(surviving_ids)
        y = pre.labels[rows]
        stack = _image_stack(pre, EARLY_BLOCK, resolution, rows)
        model = mpca.fit(stack, variance_ratio=config.variance_ratio)
        features = mpca.transform_many(model, stack)
        scores, between = mpca.fisher_scores(features, y)
        selection = mpca.select_top_k(scores, config.top_k, tiebreak=between)
        features = features[:, selection.selected_indices]
        std = BlockStandardizer.fit(features)
        features = std.transform(features)
        aucs = []
        for k, val_idx in enumerate(svm.stratified_folds(y, config.cv_folds, config.seed)):
            train_mask = np.ones(y.shape[0], dtype=bool)
            train_mask[val_idx] = False
            clf = svm.train(features[train_mask], y[train_mask],
                            c=BINNING_VALIDATION_C, seed=config.seed + k,
                            balanced=config.balanced_class_weights)
            aucs.append(roc_auc(svm.decision_scores(clf, features[val_idx]), y[val_idx]))
        if audit is not None:
            audit.record(f"binning_validation[iter{calls['n']}]", surviving_ids)
        calls["n"] += 1
        return float(np.mean(aucs))

    return validate


def run_binning(pre: Preprocessed, config: RunConfig, audit: LeakageAudit | None = None):
    """Quantile binning + iterative removal on the training split."""
    train_records = [
        rec for (sid, _), rec in sorted(pre.landmarks.items())
        if sid in set(pre.train_ids)
    ]
    if not train_records:
        raise DataError("no landmark records for any training subject")
    uncertainties = np.concatenate([rec.uncertainties for rec in train_records])
    binning = binning_mod.quantile_edges(uncertainties, config.bin_count)
    if audit is not None:
        audit.record("binning_edges", pre.train_ids)
    validate = make_binning_validator(pre, config, audit)
    chosen, history = binning_mod.iterative_bin_removal(
        pre.train_ids, train_records, binning, validate,
        min_survivors=4 * config.cv_folds,
    )
    survivors = binning_mod.filter_samples(pre.train_ids, train_records, binning, chosen)
    return binning, chosen, history, survivors


# ---------------------------------------------------------------------------
# artifact emission


def write_binning_history(path, history) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bins_removed", "samples_remaining", "val_auc"])
        for removed, survivors, auc in history:
            writer.writerow([removed, len(survivors), _fmt(auc)])


def write_grid_search(path, cv_table) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["C", "fold", "auc"])
        for c, fold, auc in cv_table:
            writer.writerow([_fmt(c), fold, _fmt(auc)])


def write_report(path, reports) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "resolution", "auc", "auc_std",
                         "accuracy", "accuracy_std", "mcc", "mcc_std"])
        for rep in reports:
            writer.writerow([
                rep.model, rep.resolution, _fmt(rep.auc), _fmt(rep.auc_std),
                _fmt(rep.accuracy), _fmt(rep.accuracy_std), _fmt(rep.mcc), _fmt(rep.mcc_std),
            ])


def write_dca(path, curve) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "nb_model", "nb_all", "nb_none"])
        for t, m, a, z in zip(curve.thresholds, curve.nb_model, curve.nb_all, curve.nb_none):
            writer.writerow([_fmt(t), _fmt(m), _fmt(a), _fmt(z)])


def write_split(path, pre: Preprocessed) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "role"])
        train = set(pre.train_ids)
        for sid in pre.subject_ids:
            writer.writerow([sid, "train" if sid in train else "test"])


def save_family(path, trained: TrainedFamily) -> None:
    payload = {
        "format_version": np.int64(MODEL_FORMAT_VERSION),
        "family": np.str_(trained.spec.name),
        "strategy": np.str_(FusionStrategy(trained.spec.strategy).value),
        "modalities": np.asarray(list(trained.spec.modalities)),
        "resolution": np.int64(trained.resolution),
        "block_keys": np.asarray(trained.block_keys),
        "svm_weights": trained.classifier.weights,
        "svm_bias": np.float64(trained.classifier.bias),
        "svm_c": np.float64(trained.classifier.c),
        "platt_a": np.float64(trained.classifier.platt_a),
        "platt_b": np.float64(trained.classifier.platt_b),
        "best_c": np.float64(trained.best_c),
        "cv_mean_auc": np.float64(trained.cv_mean_auc),
        "cv_table": np.asarray(trained.cv_table, dtype=np.float64),
    }
    for i, std in enumerate(trained.standardizers):
        payload[f"std{i}_mean"] = std.mean
        payload[f"std{i}_std"] = std.std
    for key, block in trained.image_blocks.items():
        prefix = f"block_{key}"
        payload[f"{prefix}_mean"] = block.model.mean_tensor
        for mode in range(3):
            payload[f"{prefix}_proj{mode + 1}"] = block.model.projections[mode]
        payload[f"{prefix}_outdims"] = np.asarray(block.model.output_dims, dtype=np.int64)
        payload[f"{prefix}_variance_ratio"] = np.float64(block.model.variance_ratio)
        payload[f"{prefix}_captured"] = np.float64(block.model.captured_scatter)
        payload[f"{prefix}_total"] = np.float64(block.model.total_scatter)
        payload[f"{prefix}_fisher"] = block.selection.fisher_values
        payload[f"{prefix}_selected"] = np.asarray(block.selection.selected_indices,
                                                   dtype=np.int64)
        payload[f"{prefix}_topk"] = np.int64(block.selection.top_k)
    np.savez(path, **payload)


def load_family(path) -> TrainedFamily:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported model format version {version}")
        spec = FusionSpec(
            name=str(data["family"]),
            strategy=FusionStrategy(str(data["strategy"])),
            modalities=tuple(str(m) for m in data["modalities"]),
        )
        resolution = int(data["resolution"])
        block_keys = [str(k) for k in data["block_keys"]]
        standardizers = []
        i = 0
        while f"std{i}_mean" in data:
            standardizers.append(BlockStandardizer(mean=data[f"std{i}_mean"],
                                                   std=data[f"std{i}_std"]))
            i += 1
        image_blocks = {}
        for key in block_keys:
            if key == TABULAR:
                continue
            prefix = f"block_{key}"
            model = mpca.MpcaModel(
                mean_tensor=data[f"{prefix}_mean"],
                projections=[data[f"{prefix}_proj{m}"] for m in (1, 2, 3)],
                output_dims=tuple(int(d) for d in data[f"{prefix}_outdims"]),
                variance_ratio=float(data[f"{prefix}_variance_ratio"]),
                captured_scatter=float(data[f"{prefix}_captured"]),
                total_scatter=float(data[f"{prefix}_total"]),
                iterations_run=0,
                scatter_history=[],
            )
            selection = mpca.FeatureSelection(
                fisher_values=data[f"{prefix}_fisher"],
                selected_indices=data[f"{prefix}_selected"],
                top_k=int(data[f"{prefix}_topk"]),
            )
            image_blocks[key] = ImageBlockModel(key=key, resolution=resolution,
                                                model=model, selection=selection)
        classifier = svm.LinearClassifier(
            weights=data["svm_weights"],
            bias=float(data["svm_bias"]),
            c=float(data["svm_c"]),
            platt_a=float(data["platt_a"]),
            platt_b=float(data["platt_b"]),
        )
        cv_table = [(float(c), int(f), float(a)) for c, f, a in data["cv_table"]]
        return TrainedFamily(
            spec=spec,
            resolution=resolution,
            block_keys=block_keys,
            image_blocks=image_blocks,
            standardizers=standardizers,
            classifier=classifier,
            best_c=float(data["best_c"]),
            cv_table=cv_table,
            cv_mean_auc=float(data["cv_mean_auc"]),
        )


# ---------------------------------------------------------------------------
# full run


@dataclass
class PipelineResult:
    config: RunConfig
    pre: Preprocessed
    chosen_bins_removed: int
    binning_history: list
    surviving_train_ids: list[str]
    trained: dict  # (family, resolution) -> TrainedFamily
    reports: list
    test_probs: dict  # (family, resolution) -> probabilities
    selected: tuple  # (family, resolution) with best mean CV AUC
    dca: object
    audit: LeakageAudit


def _stage(name):
    """Attach the failing stage's name to whatever a stage raises."""
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PawpkitError:
                log.error("stage %r failed", name)
                raise
            except Exception as exc:
                raise PawpkitError(f"stage {name!r} failed: {exc}") from exc
        return inner
    return wrap


def run_pipeline(config: RunConfig, outdir=None) -> PipelineResult:
    """Execute the full pipeline and emit all report artifacts."""
    config.validate().require_inputs()
    outdir = Path(outdir if outdir is not None else config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_config(config, outdir / "config.yaml")

    pre = _stage("preprocess")(preprocess)(config)
    if not pre.subject_ids:
        raise DataError("stage 'preprocess': no usable subjects in the manifest")
    write_split(outdir / "split.csv", pre)
    if pre.exclusions:
        with (outdir / "exclusions.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "modality", "reason"])
            writer.writerows(pre.exclusions)

    audit = LeakageAudit(pre.train_ids, pre.test_ids)

    binning, chosen, history, survivors = _stage("binning")(run_binning)(pre, config, audit)
    write_binning_history(outdir / "binning_history.csv", history)
    (outdir / "survivors.txt").write_text("\n".join(survivors) + "\n", encoding="utf-8")

    roster = build_model_roster(include_trimodal_late=config.include_trimodal_late)
    models_dir = outdir / "models"
    grid_dir = outdir / "grid_search"
    models_dir.mkdir(exist_ok=True)
    grid_dir.mkdir(exist_ok=True)

    trained: dict = {}
    reports = []
    test_probs: dict = {}
    block_cache: dict = {}
    index = {"selected": None, "models": {}}
    fit_stage = _stage("train")(fit_family)
    eval_stage = _stage("evaluate")(evaluate_family)
    for resolution in sorted(config.resolutions):
        for spec in roster:
            fam = fit_stage(spec, resolution, pre, survivors, config,
                            audit=audit, block_cache=block_cache)
            report, scores, probs = eval_stage(fam, pre, config)
            key = (spec.name, resolution)
            trained[key] = fam
            reports.append(report)
            test_probs[key] = probs
            model_file = models_dir / f"{spec.name}_{resolution}.npz"
            save_family(model_file, fam)
            write_grid_search(grid_dir / f"{spec.name}_{resolution}.csv", fam.cv_table)
            index["models"][fam.name] = {
                "file": str(model_file.name),
                "cv_mean_auc": fam.cv_mean_auc,
                "best_c": fam.best_c,
                "test_auc": report.auc,
            }

    selected = select_best_model(
        [(name, res, fam.cv_mean_auc) for (name, res), fam in trained.items()], roster
    )
    index["selected"] = f"{selected[0]}@{selected[1]}"
    write_report(outdir / "report.csv", reports)
    write_grid_search(outdir / "grid_search.csv", trained[selected].cv_table)

    y_test = pre.labels[pre.test_rows]
    curve = _stage("dca")(dca_curve)(test_probs[selected], y_test)
    write_dca(outdir / "dca_curve.csv", curve)

    _stage("audit")(audit.verify)()
    audit.write(outdir / "audit.json")
    (outdir / "models" / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    return PipelineResult(
        config=config,
        pre=pre,
        chosen_bins_removed=chosen,
        binning_history=history,
        surviving_train_ids=survivors,
        trained=trained,
        reports=reports,
        test_probs=test_probs,
        selected=selected,
        dca=curve,
        audit=audit,
    )


def select_best_model(entries, roster):
    """Pick (family, resolution) by highest mean CV AUC.

    ``entries`` holds (family, resolution, cv_mean_auc) triples. Ties break
    toward the lower resolution, then the earlier roster position.
    """
    order = {spec.name: i for i, spec in enumerate(roster)}
    best = min(entries, key=lambda e: (-e[2], e[1], order.get(e[0], len(order))))
    return best[0], best[1]


def ingest_check(config: RunConfig) -> dict:
    """Validate manifest, landmark, and tensor inputs without keeping them.

    Streams one subject at a time; raises DataError listing every problem
    found. An empty (header-only) manifest is valid and reported as zero
    subjects.
    """
    manifest = read_manifest(config.manifest)
    landmarks = read_landmarks(config.landmarks) if config.landmarks else {}
    templates = (read_template_landmarks(config.template_landmarks)
                 if config.template_landmarks else {})
    errors = []
    phase_count = None
    for row in manifest.rows:
        for modality, path in ((Modality.SHORT_AXIS, row.sa_path),
                               (Modality.FOUR_CHAMBER, row.fc_path)):
            try:
                data = read_tensor(path)
            except (DataError, OSError) as exc:
                errors.append(f"subject {row.subject_id}: {exc}")
                continue
            if phase_count is None:
                phase_count = data.shape[2]
            elif data.shape[2] != phase_count:
                errors.append(
                    f"subject {row.subject_id}: {path} has {data.shape[2]} phases, "
                    f"expected {phase_count}"
                )
            if landmarks:
                record = landmarks.get((row.subject_id, modality))
                if record is None:
                    errors.append(
                        f"subject {row.subject_id}: no {modality.value} landmark record"
                    )
                else:
                    pts = record.points
                    if (np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > data.shape[0] - 1)
                            or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > data.shape[1] - 1)):
                        errors.append(
                            f"subject {row.subject_id}: {modality.value} landmarks "
                            f"outside image bounds"
                        )
    if templates:
        for modality in (Modality.SHORT_AXIS, Modality.FOUR_CHAMBER):
            if modality not in templates:
                errors.append(f"template landmarks missing modality {modality.value!r}")
    if errors:
        raise DataError(f"{len(errors)} problem(s) found:\n  " + "\n  ".join(errors))
    return {
        "subjects": len(manifest.rows),
        "landmark_records": len(landmarks),
        "tabular_features": len(manifest.tabular_names),
        "phases": phase_count,
    }


# ---------------------------------------------------------------------------
# staged CLI support: persist / reload the preprocessed cohort


def write_preprocessed(pre: Preprocessed, outdir) -> None:
    outdir = Path(outdir)
    processed = outdir / "processed"
    for res, by_mod in pre.tensors.items():
        res_dir = processed / str(res)
        res_dir.mkdir(parents=True, exist_ok=True)
        for mod_value, stack in by_mod.items():
            short = "sa" if mod_value == Modality.SHORT_AXIS.value else "fc"
            for i, sid in enumerate(pre.subject_ids):
                write_tensor(res_dir / f"{sid}_{short}.tsr", stack[i])
    with (processed / "meta.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "diagnosis_date", "pawp", "label", "role"]
                        + pre.tabular_names)
        train = set(pre.train_ids)
        for i, sid in enumerate(pre.subject_ids):
            writer.writerow(
                [sid, pre.dates[i].isoformat(),
                 "" if pre.pawp[i] is None else _fmt(pre.pawp[i]),
                 int(pre.labels[i]), "train" if sid in train else "test"]
                + [_fmt(v) for v in pre.tabular[i]]
            )


def load_preprocessed(outdir, config: RunConfig) -> Preprocessed:
    outdir = Path(outdir)
    processed = outdir / "processed"
    meta = processed / "meta.csv"
    if not meta.exists():
        raise DataError(f"{meta}: no preprocessed data found; run the preprocess stage first")
    subject_ids, dates, pawp, labels, roles, tab_rows = [], [], [], [], [], []
    with meta.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        tabular_names = header[5:]
        for rec in reader:
            if not rec:
                continue
            subject_ids.append(rec[0])
            dates.append(date.fromisoformat(rec[1]))
            pawp.append(float(rec[2]) if rec[2] else None)
            labels.append(int(rec[3]))
            roles.append(rec[4])
            tab_rows.append([float(v) for v in rec[5:]])
    tensors = {}
    for res in config.resolutions:
        res_dir = processed / str(res)
        if not res_dir.is_dir():
            raise DataError(f"{res_dir}: preprocessed resolution {res} missing")
        tensors[res] = {}
        for mod_value, short in ((Modality.SHORT_AXIS.value, "sa"),
                                 (Modality.FOUR_CHAMBER.value, "fc")):
            tensors[res][mod_value] = np.stack(
                [read_tensor(res_dir / f"{sid}_{short}.tsr") for sid in subject_ids]
            )
    pre = Preprocessed(
        subject_ids=subject_ids,
        dates=dates,
        labels=np.asarray(labels, dtype=np.int64),
        pawp=pawp,
        tabular=np.asarray(tab_rows, dtype=np.float64),
        tabular_names=tabular_names,
        tensors=tensors,
        landmarks=read_landmarks(config.landmarks),
        train_ids=[sid for sid, role in zip(subject_ids, roles) if role == "train"],
        test_ids=[sid for sid, role in zip(subject_ids, roles) if role == "test"],
    )
    return pre
