"""Train/test leakage audit.

Every fitted artifact in the pipeline (binning, projections, feature
selections, standardizers, classifiers, calibrations, grid searches)
registers the exact subject ids it consumed. Verification then checks each
record against the declared split: consuming any test subject, or a
subject outside the training set entirely, fails the run. Records carry a
SHA-256 digest over the sorted ids so the audit trail can be persisted and
compared across runs.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import LeakageError


def ids_digest(subject_ids) -> str:
    joined = "\n".join(sorted(str(s) for s in subject_ids))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


@dataclass
class FitRecord:
    artifact: str
    n_rows: int
    digest: str
    subject_ids: frozenset


class LeakageAudit:
    """Collects fit records against a declared train/test split."""

    def __init__(self, train_ids, test_ids):
        self.train_ids = frozenset(train_ids)
        self.test_ids = frozenset(test_ids)
        overlap = self.train_ids & self.test_ids
        if overlap:
            raise LeakageError(f"split overlaps on {len(overlap)} subject(s)")
        self.records: list[FitRecord] = []

    def record(self, artifact: str, subject_ids) -> FitRecord:
        ids = frozenset(str(s) for s in subject_ids)
        rec = FitRecord(artifact=artifact, n_rows=len(ids), digest=ids_digest(ids),
                        subject_ids=ids)
        self.records.append(rec)
        return rec

    def verify(self) -> None:
        """Raise LeakageError if any fitted artifact saw non-training rows."""
        for rec in self.records:
            leaked = rec.subject_ids & self.test_ids
            if leaked:
                sample = ", ".join(sorted(leaked)[:5])
                raise LeakageError(
                    f"artifact {rec.artifact!r} consumed {len(leaked)} test subject(s): {sample}"
                )
            foreign = rec.subject_ids - self.train_ids
            if foreign:
                sample = ", ".join(sorted(foreign)[:5])
                raise LeakageError(
                    f"artifact {rec.artifact!r} consumed {len(foreign)} unknown subject(s): {sample}"
                )

    def summary(self) -> dict:
        return {
            "train_digest": ids_digest(self.train_ids),
            "test_digest": ids_digest(self.test_ids),
            "n_train": len(self.train_ids),
            "n_test": len(self.test_ids),
            "artifacts": [
                {"artifact": r.artifact, "n_rows": r.n_rows, "digest": r.digest}
                for r in self.records
            ],
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")
