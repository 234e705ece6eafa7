"""Optimal proposal assignment: transport marginals and soft labels.

One-to-one: every track and every detection carries unit mass, with a slack
bin absorbing the difference when the counts differ. One-to-many: a track
carries as much mass as it owns positive proposals, positives carry one unit
and negatives none.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox
from .transport import Marginals, TransportPlan, with_slack


@dataclass
class SampledProposals:
    """Proposals drawn around ground truth; column order is positives then negatives."""

    positives: list[tuple[BoundingBox, int]] = field(default_factory=list)
    negatives: list[BoundingBox] = field(default_factory=list)

    @property
    def boxes(self) -> list[BoundingBox]:
        return [b for b, _ in self.positives] + list(self.negatives)

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)

    def validate(self, n_rows: int) -> None:
        for k, (_, owner) in enumerate(self.positives):
            if not 0 <= owner < n_rows:
                raise ValueError(f"positive {k} has owner {owner}, outside the {n_rows} rows")
        pos = {b for b, _ in self.positives}
        if pos.intersection(self.negatives):
            raise ValueError("a box is sampled both as positive and as negative")

    def targets(self, n_rows: int) -> np.ndarray:
        """0/1 matrix: 1 where column j is a positive owned by row i."""
        t = np.zeros((n_rows, len(self)))
        for j, (_, owner) in enumerate(self.positives):
            t[owner, j] = 1.0
        return t


@dataclass
class SoftLabels:
    positive_cols: list[int]
    negative_cols: list[int]


def marginals_one_to_one(n_rows: int, n_cols: int) -> Marginals:
    if n_rows < 1 or n_cols < 1:
        raise ValueError(f"need at least one row and one column, got {n_rows}x{n_cols}")
    return with_slack(np.ones(n_rows), np.ones(n_cols))


def marginals_one_to_many(n_rows: int, sampled: SampledProposals) -> Marginals:
    sampled.validate(n_rows)
    p = np.zeros(n_rows)
    for _, owner in sampled.positives:
        p[owner] += 1.0
    q = np.concatenate([np.ones(len(sampled.positives)), np.zeros(len(sampled.negatives))])
    return Marginals(p, q)


def select_soft_labels(plan: TransportPlan) -> SoftLabels:
    """Per real row, the argmax column is the positive and the argmin the negative.

    Slack columns are ignored; ties go to the lowest index.
    """
    real = plan.real
    if real.shape[1] < 2:
        raise ValueError("a negative soft label needs at least two real columns")
    pos = [int(j) for j in np.argmax(real, axis=1)]
    masked = real.copy()
    # only differs from a plain argmin on constant rows, where argmax == argmin
    masked[np.arange(len(pos)), pos] = np.inf
    neg = [int(j) for j in np.argmin(masked, axis=1)]
    return SoftLabels(pos, neg)


def auxiliary_loss(plan, sampled: SampledProposals) -> float:
    """Mean squared residual between the plan and the 0/1 ownership targets."""
    real = plan.real if isinstance(plan, TransportPlan) else np.atleast_2d(np.asarray(plan, dtype=float))
    n_rows = real.shape[0]
    if real.shape[1] != len(sampled):
        raise ValueError(f"plan has {real.shape[1]} columns but {len(sampled)} proposals were sampled")
    sampled.validate(n_rows)
    return float(np.mean((real - sampled.targets(n_rows)) ** 2))
