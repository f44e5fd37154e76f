"""Semantic templates and label correction.

Each class keeps a template: the confidence-weighted mean of the semantic
features of that class's members in the most recent batch's high-confidence
group.  A low-confidence sample is compared against all valid templates by
cosine distance and moved to the closest other class only when that class is
strictly closer than its current one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import cosine_similarity
from .data import Dataset
from .errors import IntegrityError


@dataclass
class SemanticTemplates:
    """Per-class template vectors with validity tracking."""
    vectors: np.ndarray            # (n_classes, n_units)
    valid: np.ndarray              # (n_classes,) bool
    last_update_epoch: np.ndarray  # (n_classes,) int, -1 = never

    @classmethod
    def empty(cls, n_classes: int, n_units: int) -> "SemanticTemplates":
        return cls(np.zeros((n_classes, n_units)),
                   np.zeros(n_classes, dtype=bool),
                   np.full(n_classes, -1, dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return len(self.vectors)

    def update(self, semantics: np.ndarray, confidence: np.ndarray,
               labels: np.ndarray, epoch: int) -> None:
        """Replace each class's template with the confidence-weighted mean of
        its members among the given (high-confidence) samples.

        Classes with no members keep their previous template and validity.
        """
        semantics = np.asarray(semantics, dtype=np.float64)
        confidence = np.asarray(confidence, dtype=np.float64).ravel()
        labels = np.asarray(labels)
        for c in np.unique(labels):
            members = labels == c
            weighted = confidence[members, None] * semantics[members]
            self.vectors[c] = weighted.sum(axis=0) / members.sum()
            self.valid[c] = True
            self.last_update_epoch[c] = epoch

    def copy(self) -> "SemanticTemplates":
        return SemanticTemplates(self.vectors.copy(), self.valid.copy(),
                                 self.last_update_epoch.copy())


@dataclass
class RelabelRecord:
    """One correction decision; distances are NaN for invalid classes."""
    sample_id: int
    original: int
    corrected: int
    distances: np.ndarray
    epoch: int


def semantic_distances(semantic: np.ndarray, templates: SemanticTemplates
                       ) -> np.ndarray:
    """Cosine distance (1 - cosine similarity, in [0, 2]) to every template.

    Invalid or zero-norm templates get NaN.  Raises DegenerateVectorError
    when the sample's own semantic vector has zero norm; callers skip the
    sample in that case.
    """
    s = np.asarray(semantic, dtype=np.float64).ravel()
    out = np.full(templates.n_classes, np.nan)
    for c in range(templates.n_classes):
        if not templates.valid[c]:
            continue
        t = templates.vectors[c]
        if np.linalg.norm(t) == 0.0:
            continue
        out[c] = 1.0 - cosine_similarity(t, s)
    return out


def decide_relabel(distances: np.ndarray, original: int) -> int:
    """Correction rule over per-class template distances.

    Returns the closest other class when it is strictly closer than the
    original class; the original label otherwise.  Needs the original class
    distance and at least one other valid distance; ties among other-class
    minima break toward the smallest class index.
    """
    d = np.asarray(distances, dtype=np.float64)
    if np.isnan(d[original]) or np.sum(~np.isnan(d)) < 2:
        return original
    others = d.copy()
    others[original] = np.nan
    best = int(np.nanargmin(others))
    if d[original] - others[best] > 0.0:
        return best
    return original


def apply_corrections(ds: Dataset, records: list[RelabelRecord]) -> int:
    """Overwrite the observed label of every referenced sample; returns how
    many labels actually changed."""
    changed = 0
    for rec in records:
        if not 0 <= rec.sample_id < ds.n:
            raise IntegrityError(f"relabel record references unknown sample id "
                                 f"{rec.sample_id}")
        if ds.observed_labels[rec.sample_id] != rec.corrected:
            changed += 1
        ds.observed_labels[rec.sample_id] = rec.corrected
    return changed


def audit_rows(records: list[RelabelRecord]) -> list[str]:
    """CSV rows (epoch, id, original, corrected, dist_original, dist_new)."""
    rows = []
    for r in records:
        rows.append(",".join([
            str(r.epoch), str(r.sample_id), str(r.original), str(r.corrected),
            repr(float(r.distances[r.original])),
            repr(float(r.distances[r.corrected])),
        ]))
    return rows
