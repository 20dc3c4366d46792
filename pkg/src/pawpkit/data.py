"""On-disk formats and dataset assembly.

Tensor container (binary, little-endian):

    bytes 0-3   magic b"TSRC"
    bytes 4-7   format version, uint32 (currently 1)
    bytes 8-19  dims I1, I2, I3 as uint32
    payload     float32 values, phase (mode 3) slowest, then rows, then cols

Manifest CSV (header mandatory):

    subject_id,diagnosis_date,pawp_mmhg,label,sa_path,fc_path,lv_mass,la_volume[,extra...]

``label`` may be left empty whenever ``pawp_mmhg`` is present; the label is
then 1 iff PAWP exceeds 15 mmHg. Extra trailing columns are treated as
additional numeric tabular features. Tensor paths are resolved relative to
the manifest's directory.

Landmark CSV: ``subject_id,modality,x1,y1,u1,x2,y2,u2,x3,y3,u3`` with
x = column and y = row. Template landmark CSV drops the subject and
uncertainty fields: ``modality,x1,y1,x2,y2,x3,y3``.
"""

import csv
import struct
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import DataError
from .registration import LandmarkRecord
from .tensor import Modality, TensorSample

MAGIC = b"TSRC"
CONTAINER_VERSION = 1
PAWP_THRESHOLD_MMHG = 15.0

MANIFEST_FIXED_COLUMNS = [
    "subject_id", "diagnosis_date", "pawp_mmhg", "label",
    "sa_path", "fc_path", "lv_mass", "la_volume",
]
LANDMARK_COLUMNS = [
    "subject_id", "modality",
    "x1", "y1", "u1", "x2", "y2", "u2", "x3", "y3", "u3",
]


def write_tensor(path, data: np.ndarray) -> None:
    """Write a 3rd-order array to the binary container (float32 on disk)."""
    arr = np.asarray(data)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DataError(f"container expects a non-empty 3rd-order tensor, got {arr.shape}")
    header = MAGIC + struct.pack("<I", CONTAINER_VERSION) + struct.pack("<III", *arr.shape)
    payload = np.ascontiguousarray(np.transpose(arr, (2, 0, 1)), dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    """Read a container back as float64, raising with the file name on any
    structural problem (bad magic, bad version, truncated payload)."""
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a tensor container (bad magic or truncated header)")
    version, = struct.unpack_from("<I", raw, 4)
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    dims = struct.unpack_from("<III", raw, 8)
    if min(dims) < 1:
        raise DataError(f"{path}: invalid dims {dims}")
    expected = 4 * dims[0] * dims[1] * dims[2]
    payload = raw[20:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for dims {dims}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    return np.transpose(flat.reshape(dims[2], dims[0], dims[1]), (1, 2, 0)).astype(np.float64)


@dataclass
class ManifestRow:
    subject_id: str
    diagnosis_date: date
    pawp: float | None
    label: int
    sa_path: Path
    fc_path: Path
    tabular: np.ndarray  # aligned with Manifest.tabular_names


@dataclass
class Manifest:
    rows: list[ManifestRow]
    tabular_names: list[str]

    def __len__(self):
        return len(self.rows)


def _parse_float(text: str, column: str):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"column {column!r}: cannot parse {text!r} as a number") from None
    if not np.isfinite(value):
        raise DataError(f"column {column!r}: non-finite value {text!r}")
    return value


def read_manifest(path) -> Manifest:
    """Parse and validate the manifest; all row errors are reported together."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing manifest header") from None
        header = [h.strip() for h in header]
        if header[: len(MANIFEST_FIXED_COLUMNS)] != MANIFEST_FIXED_COLUMNS:
            raise DataError(
                f"{path}: manifest header must start with "
                f"{','.join(MANIFEST_FIXED_COLUMNS)}"
            )
        tabular_names = ["lv_mass", "la_volume"] + header[len(MANIFEST_FIXED_COLUMNS):]

        rows: list[ManifestRow] = []
        errors: list[str] = []
        seen: set[str] = set()
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            try:
                rows.append(_parse_manifest_row(record, header, path.parent))
            except DataError as exc:
                errors.append(f"line {line_no}: {exc}")
                continue
            sid = rows[-1].subject_id
            if sid in seen:
                raise DataError(f"{path}: duplicate subject_id {sid!r} (line {line_no})")
            seen.add(sid)
        if errors:
            raise DataError(f"{path}: {len(errors)} bad row(s):\n  " + "\n  ".join(errors))
    return Manifest(rows=rows, tabular_names=tabular_names)


def _parse_manifest_row(record, header, base_dir: Path) -> ManifestRow:
    if len(record) != len(header):
        raise DataError(f"expected {len(header)} cells, got {len(record)}")
    cells = dict(zip(header, (c.strip() for c in record)))
    sid = cells["subject_id"]
    if not sid:
        raise DataError("empty subject_id")
    try:
        diagnosis = date.fromisoformat(cells["diagnosis_date"])
    except ValueError:
        raise DataError(
            f"bad diagnosis_date {cells['diagnosis_date']!r} (expected ISO-8601)"
        ) from None

    pawp_text, label_text = cells["pawp_mmhg"], cells["label"]
    pawp = _parse_float(pawp_text, "pawp_mmhg") if pawp_text else None
    if pawp is not None:
        label = int(pawp > PAWP_THRESHOLD_MMHG)
        if label_text and int(label_text) != label:
            raise DataError(
                f"label {label_text} contradicts pawp_mmhg {pawp} "
                f"(threshold {PAWP_THRESHOLD_MMHG})"
            )
    elif label_text:
        if label_text not in ("0", "1"):
            raise DataError(f"label must be 0 or 1, got {label_text!r}")
        label = int(label_text)
    else:
        raise DataError("row provides neither pawp_mmhg nor label")

    tabular = [_parse_float(cells["lv_mass"], "lv_mass"),
               _parse_float(cells["la_volume"], "la_volume")]
    for name in header[len(MANIFEST_FIXED_COLUMNS):]:
        tabular.append(_parse_float(cells[name], name))

    return ManifestRow(
        subject_id=sid,
        diagnosis_date=diagnosis,
        pawp=pawp,
        label=label,
        sa_path=base_dir / cells["sa_path"],
        fc_path=base_dir / cells["fc_path"],
        tabular=np.asarray(tabular, dtype=np.float64),
    )


def read_landmarks(path) -> dict:
    """Landmark records keyed by (subject_id, modality)."""
    path = Path(path)
    records: dict = {}
    errors: list[str] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: missing landmark header") from None
        if header != LANDMARK_COLUMNS:
            raise DataError(f"{path}: landmark header must be {','.join(LANDMARK_COLUMNS)}")
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            try:
                rec = _parse_landmark_row(record)
                key = (rec.subject_id, rec.modality)
                if key in records:
                    raise DataError(f"duplicate landmark record for {key}")
                records[key] = rec
            except DataError as exc:
                errors.append(f"line {line_no}: {exc}")
    if errors:
        raise DataError(f"{path}: {len(errors)} bad landmark row(s):\n  " + "\n  ".join(errors))
    return records


def _parse_landmark_row(record) -> LandmarkRecord:
    if len(record) != len(LANDMARK_COLUMNS):
        raise DataError(f"expected {len(LANDMARK_COLUMNS)} cells, got {len(record)}")
    cells = [c.strip() for c in record]
    sid, modality_text = cells[0], cells[1]
    try:
        modality = Modality(modality_text)
    except ValueError:
        raise DataError(f"unknown modality {modality_text!r}") from None
    values = [_parse_float(cell, name) for cell, name in zip(cells[2:], LANDMARK_COLUMNS[2:])]
    # CSV is (x, y, u) per landmark with x = col, y = row; store (row, col).
    points = np.asarray([[values[1], values[0]], [values[4], values[3]], [values[7], values[6]]])
    uncertainties = np.asarray([values[2], values[5], values[8]])
    return LandmarkRecord(subject_id=sid, modality=modality, points=points,
                          uncertainties=uncertainties)


def write_landmarks(path, records) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LANDMARK_COLUMNS)
        for rec in records:
            row = [rec.subject_id, rec.modality.value]
            for (r, c), u in zip(rec.points, rec.uncertainties):
                row.extend([repr(float(c)), repr(float(r)), repr(float(u))])
            writer.writerow(row)


def read_template_landmarks(path) -> dict:
    """Template points per modality, as (3, 2) (row, col) arrays."""
    path = Path(path)
    expected = ["modality", "x1", "y1", "x2", "y2", "x3", "y3"]
    templates: dict = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: missing template landmark header") from None
        if header != expected:
            raise DataError(f"{path}: template header must be {','.join(expected)}")
        for record in reader:
            if not record or all(not cell.strip() for cell in record):
                continue
            cells = [c.strip() for c in record]
            try:
                modality = Modality(cells[0])
            except ValueError:
                raise DataError(f"{path}: unknown modality {cells[0]!r}") from None
            vals = [_parse_float(c, n) for c, n in zip(cells[1:], expected[1:])]
            templates[modality] = np.asarray(
                [[vals[1], vals[0]], [vals[3], vals[2]], [vals[5], vals[4]]]
            )
    if not templates:
        raise DataError(f"{path}: no template landmarks found")
    return templates


def write_template_landmarks(path, templates) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["modality", "x1", "y1", "x2", "y2", "x3", "y3"])
        for modality, points in templates.items():
            row = [Modality(modality).value]
            for r, c in np.asarray(points):
                row.extend([repr(float(c)), repr(float(r))])
            writer.writerow(row)


@dataclass
class Subject:
    subject_id: str
    diagnosis_date: date
    pawp: float | None
    label: int
    tensors: dict  # Modality -> TensorSample
    tabular: np.ndarray


@dataclass
class Dataset:
    subjects: list[Subject]
    tabular_names: list[str]
    landmarks: dict = field(default_factory=dict)  # (sid, Modality) -> LandmarkRecord

    def __len__(self):
        return len(self.subjects)

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]

    @property
    def labels(self):
        return np.asarray([s.label for s in self.subjects], dtype=np.int64)

    @property
    def dates(self):
        return [s.diagnosis_date for s in self.subjects]

    def tabular_matrix(self) -> np.ndarray:
        return np.stack([s.tabular for s in self.subjects])


def ingest(manifest_path, landmarks_path=None) -> Dataset:
    """Load the manifest into a fully materialized dataset.

    Tensor files are read and validated; the temporal phase count must be
    constant across the dataset. Landmark coordinates, when provided, are
    checked against the image bounds of their subject.
    """
    manifest = read_manifest(manifest_path)
    landmarks = read_landmarks(landmarks_path) if landmarks_path else {}

    subjects = []
    errors = []
    phase_count = None
    for row in manifest.rows:
        tensors = {}
        try:
            for modality, tensor_path in (
                (Modality.SHORT_AXIS, row.sa_path),
                (Modality.FOUR_CHAMBER, row.fc_path),
            ):
                data = read_tensor(tensor_path)
                if phase_count is None:
                    phase_count = data.shape[2]
                elif data.shape[2] != phase_count:
                    raise DataError(
                        f"{tensor_path}: {data.shape[2]} phases, expected {phase_count}"
                    )
                tensors[modality] = TensorSample(data, modality, subject_id=row.subject_id)
                key = (row.subject_id, modality)
                if key in landmarks:
                    pts = landmarks[key].points
                    rows_, cols_ = data.shape[:2]
                    if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > rows_ - 1) or \
                       np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > cols_ - 1):
                        raise DataError(
                            f"subject {row.subject_id}: landmarks outside "
                            f"{rows_}x{cols_} bounds for {modality.value}"
                        )
        except (DataError, OSError) as exc:
            errors.append(f"subject {row.subject_id}: {exc}")
            continue
        subjects.append(
            Subject(
                subject_id=row.subject_id,
                diagnosis_date=row.diagnosis_date,
                pawp=row.pawp,
                label=row.label,
                tensors=tensors,
                tabular=row.tabular,
            )
        )
    if errors:
        raise DataError(f"{len(errors)} subject(s) failed to load:\n  " + "\n  ".join(errors))
    return Dataset(subjects=subjects, tabular_names=manifest.tabular_names, landmarks=landmarks)
