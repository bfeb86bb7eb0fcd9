"""MIL bags and their JSON Lines interchange format.

One line per 20 s window::

    {"participant_id", "window_id", "condition", "label", "feature_mode",
     "matrix": [row-major floats], "n_rows": 19, "n_cols": 24 | 8 | 24}

Label convention: CWS -> 1, CWNS -> 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .features import FEATURE_MODES, MODALITIES, N_SEGMENTS, columns_per_modality


@dataclass(eq=False)
class Bag:
    participant_id: str
    window_id: str
    label: int
    feature_mode: str
    matrix: np.ndarray
    condition: str = "task"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.feature_mode not in FEATURE_MODES:
            raise DataError(f"{self.window_id}: unknown feature_mode {self.feature_mode!r}")
        expected = (N_SEGMENTS, len(MODALITIES) * columns_per_modality(self.feature_mode))
        if self.matrix.shape != expected:
            raise ShapeError(f"bag {self.window_id}", self.matrix.shape, expected)
        if self.label not in (0, 1):
            raise DataError(f"{self.window_id}: label must be 0 or 1")

    def modality(self, name: str) -> np.ndarray:
        """The 19 x d instance matrix of one modality."""
        d = columns_per_modality(self.feature_mode)
        m = MODALITIES.index(name)
        return self.matrix[:, m * d:(m + 1) * d]

    def to_record(self) -> dict:
        n_rows, n_cols = self.matrix.shape
        return {
            "participant_id": self.participant_id,
            "window_id": self.window_id,
            "condition": self.condition,
            "label": int(self.label),
            "feature_mode": self.feature_mode,
            "matrix": [float(v) for v in self.matrix.ravel()],
            "n_rows": n_rows,
            "n_cols": n_cols,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Bag":
        try:
            n_rows, n_cols = int(rec["n_rows"]), int(rec["n_cols"])
            matrix = np.asarray(rec["matrix"], dtype=np.float64)
            if matrix.size != n_rows * n_cols:
                raise DataError(f"{rec.get('window_id')}: matrix holds {matrix.size} values, "
                                f"expected {n_rows}x{n_cols}")
            return cls(
                participant_id=str(rec["participant_id"]),
                window_id=str(rec["window_id"]),
                label=int(rec["label"]),
                feature_mode=rec["feature_mode"],
                matrix=matrix.reshape(n_rows, n_cols),
                condition=rec.get("condition", "task"),
            )
        except KeyError as exc:
            raise DataError(f"bag record missing key {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise DataError(f"malformed bag record: {exc}") from exc


def stack(bags) -> tuple[np.ndarray, np.ndarray]:
    """(B, 19, D) feature tensor and (B,) label vector."""
    bags = list(bags)
    if not bags:
        raise DataError("no bags")
    return np.stack([b.matrix for b in bags]), np.array([b.label for b in bags], dtype=np.float64)


def write_bags(path, bags) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for bag in bags:
            fh.write(json.dumps(bag.to_record()) + "\n")
    return path


def read_bags(path) -> list[Bag]:
    path = Path(path)
    bags = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    bags.append(Bag.from_record(json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
                except DataError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read bag file {path}: {exc}") from exc
    modes = {b.feature_mode for b in bags}
    if len(modes) > 1:
        raise DataError(f"{path}: mixed feature modes {sorted(modes)}")
    return bags
