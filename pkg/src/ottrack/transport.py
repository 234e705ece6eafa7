"""Entropic optimal transport between tracks and detections.

The solver scales the Gibbs kernel ``W = exp(-C / reg)`` with two positive
vectors until the plan ``diag(v) W diag(u)`` has the requested row and column
sums. Below ``LOG_DOMAIN_BELOW`` the same iteration runs on log-potentials.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

LOG_DOMAIN_BELOW = 0.05
MAX_ORACLE_SIZE = 8


class SinkhornUnderflowError(FloatingPointError):
    """The plain-domain kernel underflowed to an all-zero row or column."""


@dataclass
class CostMatrix:
    values: np.ndarray
    row_labels: Optional[list] = None
    col_labels: Optional[list] = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"cost matrix must be a non-empty 2-D array, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cost matrix entries must be finite")
        n, m = self.values.shape
        if self.row_labels is None:
            self.row_labels = list(range(n))
        if self.col_labels is None:
            self.col_labels = list(range(m))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class Marginals:
    """Row/column mass vectors.

    ``slack_rows``/``slack_cols`` count trailing entries of ``p``/``q`` that
    belong to slack (dustbin) bins rather than real tracks or detections.
    """

    p: np.ndarray
    q: np.ndarray
    slack_rows: int = 0
    slack_cols: int = 0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).ravel()
        self.q = np.asarray(self.q, dtype=float).ravel()
        if np.any(self.p < 0) or np.any(self.q < 0):
            raise ValueError("marginal weights must be non-negative")
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q))):
            raise ValueError("marginal weights must be finite")

    @property
    def n_rows(self) -> int:
        return len(self.p) - self.slack_rows

    @property
    def n_cols(self) -> int:
        return len(self.q) - self.slack_cols

    @property
    def imbalance(self) -> float:
        return float(self.p.sum() - self.q.sum())

    def is_feasible(self, tol: float = 1e-9) -> bool:
        return abs(self.imbalance) <= tol

    @classmethod
    def uniform(cls, n: int, m: int) -> "Marginals":
        return cls(np.ones(n), np.ones(m))


def with_slack(p, q, tol: float = 1e-9) -> Marginals:
    """Balance ``p`` and ``q`` by appending a slack bin on the lighter side.

    The slack bin carries exactly the mass deficit, so the result is feasible.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    deficit = float(p.sum() - q.sum())
    if abs(deficit) <= tol:
        return Marginals(p, q)
    if deficit > 0:
        return Marginals(p, np.append(q, deficit), slack_cols=1)
    return Marginals(np.append(p, -deficit), q, slack_rows=1)


@dataclass
class SinkhornConfig:
    reg_strength: float = 0.5
    max_iterations: int = 100
    convergence_tol: float = 1e-3
    slack_cost: float = 1.0
    log_domain: Optional[bool] = None  # None: automatic below LOG_DOMAIN_BELOW

    def __post_init__(self):
        if not self.reg_strength > 0:
            raise ValueError(f"reg_strength must be positive, got {self.reg_strength}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_tol > 0:
            raise ValueError(f"convergence_tol must be positive, got {self.convergence_tol}")
        if not math.isfinite(self.slack_cost):
            raise ValueError("slack_cost must be finite")

    @property
    def use_log_domain(self) -> bool:
        if self.log_domain is None:
            return self.reg_strength < LOG_DOMAIN_BELOW
        return self.log_domain


@dataclass
class TransportPlan:
    """A solved coupling, including any slack bins as trailing rows/columns."""

    plan: np.ndarray
    converged: bool = True
    iterations_used: int = 0
    slack_rows: int = 0
    slack_cols: int = 0
    marginal_violation: float = 0.0

    def __post_init__(self):
        self.plan = np.atleast_2d(np.asarray(self.plan, dtype=float))

    @property
    def n_rows(self) -> int:
        return self.plan.shape[0] - self.slack_rows

    @property
    def n_cols(self) -> int:
        return self.plan.shape[1] - self.slack_cols

    @property
    def real(self) -> np.ndarray:
        """The plan restricted to real rows and columns."""
        return self.plan[: self.n_rows, : self.n_cols]

    def transported_cost(self, cost) -> float:
        c = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
        return float(np.sum(c * self.real))


@dataclass
class HardAssignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)


def cosine_cost(tracks_emb: Sequence, dets_emb: Sequence) -> CostMatrix:
    """Cosine distance ``1 - cos(t_i, d_j)`` between every track and detection embedding."""
    t = np.atleast_2d(np.asarray(tracks_emb, dtype=float))
    d = np.atleast_2d(np.asarray(dets_emb, dtype=float))
    if t.shape[1] != d.shape[1]:
        raise ValueError(f"embedding dimensions differ: {t.shape[1]} vs {d.shape[1]}")
    tn = np.linalg.norm(t, axis=1)
    dn = np.linalg.norm(d, axis=1)
    if np.any(tn == 0) or np.any(dn == 0):
        raise ValueError("cosine cost is undefined for zero-norm embeddings")
    cos = (t / tn[:, None]) @ (d / dn[:, None]).T
    return CostMatrix(np.clip(1.0 - cos, 0.0, 2.0))


def _pad_cost(c: np.ndarray, m: Marginals, slack_cost: float) -> np.ndarray:
    n, k = c.shape
    if (n, k) != (m.n_rows, m.n_cols):
        raise ValueError(
            f"cost shape {c.shape} does not match marginals ({m.n_rows} real rows, {m.n_cols} real cols)"
        )
    full = np.full((len(m.p), len(m.q)), float(slack_cost))
    full[:n, :k] = c
    return full


def _violation(plan: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    return float(max(np.abs(plan.sum(axis=1) - p).max(), np.abs(plan.sum(axis=0) - q).max()))


def _solve_plain(c, p, q, cfg):
    w = np.exp(-c / cfg.reg_strength)
    if np.any(w.sum(axis=1) == 0) or np.any(w.sum(axis=0) == 0):
        raise SinkhornUnderflowError(
            f"exp(-C/{cfg.reg_strength:g}) underflows to an all-zero row or column; "
            "use the log-domain solver or a larger reg_strength"
        )
    v = np.ones(len(p))
    u = np.ones(len(q))
    plan = None
    for it in range(1, cfg.max_iterations + 1):
        wv = w.T @ v
        wu_ok = np.all(wv[q > 0] > 0)
        u = np.divide(q, wv, out=np.zeros_like(q), where=wv > 0)
        wu = w @ u
        if not wu_ok or np.any(wu[p > 0] == 0):
            raise SinkhornUnderflowError(
                "scaling vector underflowed during Sinkhorn iteration; "
                "use the log-domain solver or a larger reg_strength"
            )
        v = np.divide(p, wu, out=np.zeros_like(p), where=wu > 0)
        plan = v[:, None] * w * u[None, :]
        err = _violation(plan, p, q)
        if err < cfg.convergence_tol:
            return plan, True, it, err
    return plan, False, cfg.max_iterations, err


def _solve_log(c, p, q, cfg):
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
        log_q = np.log(q)
    z = -c / cfg.reg_strength
    f = np.zeros(len(p))  # log v
    g = np.zeros(len(q))  # log u
    plan = None
    for it in range(1, cfg.max_iterations + 1):
        col = logsumexp(z + f[:, None], axis=0)
        g = np.where(np.isneginf(log_q), -np.inf, log_q - col)
        row = logsumexp(z + g[None, :], axis=1)
        f = np.where(np.isneginf(log_p), -np.inf, log_p - row)
        plan = np.exp(z + f[:, None] + g[None, :])
        err = _violation(plan, p, q)
        if err < cfg.convergence_tol:
            return plan, True, it, err
    return plan, False, cfg.max_iterations, err


def sinkhorn_solve(cost, marginals: Optional[Marginals] = None, cfg: Optional[SinkhornConfig] = None) -> TransportPlan:
    """Approximately solve the entropy-regularized transport problem.

    Args:
        cost: N x M cost over real rows/columns (``CostMatrix`` or array).
        marginals: row/column masses; slack bins in ``marginals`` receive
            ``cfg.slack_cost``. Defaults to all-ones with slack balancing.
        cfg: solver settings.

    Returns:
        The plan over real + slack bins, with convergence diagnostics.
    """
    cfg = cfg or SinkhornConfig()
    c = cost.values if isinstance(cost, CostMatrix) else CostMatrix(cost).values
    if marginals is None:
        marginals = with_slack(np.ones(c.shape[0]), np.ones(c.shape[1]))
    if not marginals.is_feasible(1e-9 * max(1.0, float(marginals.p.sum()))):
        raise ValueError(
            f"infeasible marginals: sum(p)={marginals.p.sum():.12g} != sum(q)={marginals.q.sum():.12g}"
        )
    full = _pad_cost(c, marginals, cfg.slack_cost)
    solver = _solve_log if cfg.use_log_domain else _solve_plain
    plan, converged, iters, err = solver(full, marginals.p, marginals.q, cfg)
    return TransportPlan(
        plan=plan,
        converged=converged,
        iterations_used=iters,
        slack_rows=marginals.slack_rows,
        slack_cols=marginals.slack_cols,
        marginal_violation=err,
    )


def exact_assignment_oracle(cost) -> tuple[tuple[int, ...], float]:
    """Minimum-cost permutation by exhaustive enumeration (N <= 8).

    ``itertools.permutations`` yields lexicographic order and only a strictly
    smaller cost replaces the incumbent, so ties resolve to the
    lexicographically smallest permutation.
    """
    c = cost.values if isinstance(cost, CostMatrix) else np.atleast_2d(np.asarray(cost, dtype=float))
    n, m = c.shape
    if n != m:
        raise ValueError(f"oracle needs a square cost matrix, got {c.shape}")
    if n > MAX_ORACLE_SIZE:
        raise ValueError(f"refusing brute-force enumeration for N={n} > {MAX_ORACLE_SIZE}")
    rows = np.arange(n)
    best_perm, best_cost = None, math.inf
    for perm in itertools.permutations(range(n)):
        total = float(c[rows, perm].sum())
        if total < best_cost:
            best_perm, best_cost = perm, total
    return best_perm, best_cost


def extract_hard_assignment(plan: TransportPlan) -> HardAssignment:
    """Turn a soft plan into one-to-one pairs.

    Each real row claims its argmax column. Rows whose argmax is a slack column
    stay unmatched; when two rows claim the same real column the one holding
    more plan mass wins (lower row index on exact ties).
    """
    n, m = plan.n_rows, plan.n_cols
    out = HardAssignment()
    if m == 0 or n == 0:
        out.unmatched_rows = list(range(n))
        out.unmatched_cols = list(range(m))
        return out
    claims: dict[int, tuple[float, int]] = {}
    losers = []
    for i in range(n):
        row = plan.plan[i]
        j = int(np.argmax(row))
        if j >= m:
            losers.append(i)
            continue
        mass = float(row[j])
        if j in claims:
            prev_mass, prev_i = claims[j]
            if mass > prev_mass:
                claims[j] = (mass, i)
                losers.append(prev_i)
            else:
                losers.append(i)
        else:
            claims[j] = (mass, i)
    out.pairs = sorted((i, j) for j, (_, i) in claims.items())
    out.unmatched_rows = sorted(losers)
    matched_cols = set(claims)
    out.unmatched_cols = [j for j in range(m) if j not in matched_cols]
    return out
