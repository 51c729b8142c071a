"""Transport-based recovery of the shared-slot permutation.

The relaxed permutation lives in the intersection of four convex families:
the nonnegative orthant, unit row sums, unit column sums, and one half-space
per ordered modality pair bounding the mass of the cross-modality block.  A
descent step on the linear transport objective is followed by Dykstra's cyclic
projection onto that intersection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linear_sum_assignment, milp

from . import diffkit as dk
from .diffkit import DimensionError, Tensor
from .scmgen import SharingPattern

STD_FLOOR = 1e-8


@dataclass
class EpsilonSchedule:
    eps0: float
    gamma: float = 0.95
    floor: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.floor < 0:
            raise ValueError("floor must be non-negative")

    @classmethod
    def from_costs(cls, D: np.ndarray, quantile: float = 0.9, gamma: float = 0.95,
                   floor: float = 0.0) -> "EpsilonSchedule":
        """Start at the given quantile of the off-diagonal distances."""
        off = D[~np.eye(D.shape[0], dtype=bool)]
        return cls(float(np.quantile(off, quantile)) if off.size else 0.0, gamma, floor)


def epsilon_at(schedule: EpsilonSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return max(schedule.floor, schedule.eps0 * schedule.gamma ** epoch)


@dataclass
class CostMatrix:
    D: np.ndarray
    eps: float

    @property
    def total(self) -> np.ndarray:
        """``D + eps * I``: the cost actually paid, diagonal selection included."""
        return self.D + self.eps * np.eye(self.D.shape[0])


def standardize(z: np.ndarray) -> np.ndarray:
    sd = z.std(axis=0)
    return (z - z.mean(axis=0)) / np.maximum(sd, STD_FLOOR)


def cost_matrix(z_cat, eps: float, standardized: bool = True) -> CostMatrix:
    """Pairwise Euclidean distances between feature columns over the batch."""
    z = np.asarray(z_cat.data if isinstance(z_cat, Tensor) else z_cat, dtype=float)
    if z.ndim != 2:
        raise DimensionError("z_cat must be a batch x L matrix")
    if standardized:
        if z.shape[0] < 2:
            raise ValueError("standardised distances need at least two samples")
        z = standardize(z)
    gram = z.T @ z
    sq = np.diag(gram)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0))
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return CostMatrix(D, float(eps))


def mask_within_modality(cost: CostMatrix, pattern: SharingPattern) -> CostMatrix:
    """Price off-diagonal pairs inside one modality above any feasible alternative.

    Shared latents only ever pair slots of different modalities, so this keeps
    the transport from trading a self-assignment for an in-modality swap.
    """
    D = cost.D.copy()
    mods = pattern.slot_modalities
    same = (mods[:, None] == mods[None, :]) & ~np.eye(len(mods), dtype=bool)
    D[same] = 2.0 * (D.max() + abs(cost.eps)) + 1.0
    return CostMatrix(D, cost.eps)


def transport_objective(cost: CostMatrix, P: np.ndarray) -> float:
    """tr((D + eps I) P^T)."""
    C = cost.total
    P = np.asarray(P, dtype=float)
    if P.shape != C.shape:
        raise DimensionError(f"P shape {P.shape} != cost shape {C.shape}")
    return float(np.sum(C * P))


@dataclass
class FeasibilityReport:
    negativity: float
    row: float
    col: float
    block: float
    cycles: int = 0
    converged: bool = True

    @property
    def max_violation(self) -> float:
        return max(self.negativity, self.row, self.col, self.block)


@dataclass
class RelaxedPermutation:
    P: np.ndarray
    report: FeasibilityReport
    corrections: dict[str, np.ndarray] = field(default_factory=dict)


def _budget_matrix(pattern: SharingPattern, k) -> np.ndarray:
    M = pattern.M
    if k is None:
        K = np.array([[pattern.budget(i, j) for j in range(M)] for i in range(M)], dtype=float)
    else:
        K = np.full((M, M), float(k))
    np.fill_diagonal(K, np.inf)
    return K


def _membership(pattern: SharingPattern) -> np.ndarray:
    """L x M matrix whose columns are the modality indicators."""
    return np.stack([pattern.indicator(m) for m in range(pattern.M)], axis=1)


def feasibility(P: np.ndarray, pattern: SharingPattern, k=None) -> FeasibilityReport:
    B = _membership(pattern)
    K = _budget_matrix(pattern, k)
    S = B.T @ P @ B
    return FeasibilityReport(
        negativity=float(max(0.0, -P.min())),
        row=float(np.abs(P.sum(axis=1) - 1.0).max()),
        col=float(np.abs(P.sum(axis=0) - 1.0).max()),
        block=float(max(0.0, (S - K).max())),
    )


def psi_rows(P: np.ndarray) -> np.ndarray:
    L = P.shape[0]
    return P - (P.sum(axis=1, keepdims=True) - 1.0) / L


def psi_cols(P: np.ndarray) -> np.ndarray:
    L = P.shape[0]
    return P - (P.sum(axis=0, keepdims=True) - 1.0) / L


def psi_blocks(P: np.ndarray, B: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Project onto every block half-space ``mass(i, j) <= K[i, j]`` at once.

    Blocks of distinct ordered pairs have disjoint supports, so applying all
    half-space projections simultaneously equals applying them in sequence.
    """
    sizes = B.sum(axis=0)
    S = B.T @ P @ B
    excess = np.maximum(S - K, 0.0) / np.outer(sizes, sizes)
    return P - B @ excess @ B.T


def dykstra_project(P_raw, pattern: SharingPattern, k=None, cycles: int = 100,
                    tol: float = 1e-6) -> RelaxedPermutation:
    """Dykstra's cyclic projection onto the budget-constrained Birkhoff set.

    Correction memory is kept for the orthant and the block half-spaces; the two
    affine sum constraints need none.  Iteration stops once every violation is
    below ``tol`` and a full cycle moves the iterate by less than ``tol``; if
    ``cycles`` run out first, the least-violating iterate is returned with
    ``report.converged`` False.
    """
    x = np.array(P_raw, dtype=float)
    L = pattern.L
    if x.shape != (L, L):
        raise DimensionError(f"P must be {L} x {L}, got {x.shape}")
    B = _membership(pattern)
    K = _budget_matrix(pattern, k)
    rep = feasibility(x, pattern, k)
    if rep.max_violation < tol:
        rep.cycles = 0
        return RelaxedPermutation(x, rep)
    sizes = np.outer(B.sum(axis=0), B.sum(axis=0))
    q_orth = np.zeros_like(x)
    q_block = np.zeros_like(x)
    best, best_viol = x, rep.max_violation
    for c in range(1, cycles + 1):
        prev = x
        y = x + q_orth
        x = np.maximum(y, 0.0)
        q_orth = y - x
        x = x - (x.sum(axis=1, keepdims=True) - 1.0) / L
        x = x - (x.sum(axis=0, keepdims=True) - 1.0) / L
        y = x + q_block
        excess = np.maximum(B.T @ y @ B - K, 0.0)
        x = y - B @ (excess / sizes) @ B.T if excess.any() else y
        q_block = y - x
        # the block step leaves every budget satisfied, so only these can fail
        viol = max(-x.min(), np.abs(x.sum(axis=1) - 1.0).max(), np.abs(x.sum(axis=0) - 1.0).max())
        if viol < best_viol:
            best, best_viol = x, viol
        if viol < tol and np.abs(x - prev).max() < tol:
            rep = feasibility(x, pattern, k)
            rep.cycles = c
            return RelaxedPermutation(x, rep, {"orthant": q_orth, "blocks": q_block})
    rep = feasibility(best, pattern, k)
    rep.cycles = cycles
    rep.converged = False
    return RelaxedPermutation(best, rep, {"orthant": q_orth, "blocks": q_block})


def permutation_step(P: np.ndarray, cost: CostMatrix, lr: float, pattern: SharingPattern,
                     k=None, cycles: int = 100, tol: float = 1e-6) -> RelaxedPermutation:
    """One projected-gradient step on the transport objective."""
    P = np.asarray(P, dtype=float)
    C = cost.total
    if P.shape != C.shape:
        raise DimensionError(f"P shape {P.shape} != cost shape {C.shape}")
    return dykstra_project(P - lr * C, pattern, k, cycles, tol)


def round_to_permutation(P: np.ndarray, pattern: SharingPattern | None = None, k=None,
                         cost: CostMatrix | None = None, mass_tol: float = 1e-3) -> np.ndarray:
    """Hard permutation maximising the retained mass of ``P``.

    With a ``pattern`` the result also respects the cross-modality budgets,
    which plain assignment can overspend when ``P`` sits on a fractional face.
    With a ``cost``, permutations whose retained mass is within ``mass_tol`` of
    the best are ranked by transport cost instead, so ties on a fractional
    optimum resolve to its cheapest vertex.
    """
    P = np.asarray(P, dtype=float)
    rows, cols = linear_sum_assignment(P, maximize=True)
    out = np.zeros_like(P)
    out[rows, cols] = 1.0
    if cost is None and (pattern is None or feasibility(out, pattern, k).block <= 1e-9):
        return out
    A, lo, hi = _assignment_rows(P.shape[0], pattern, k)
    best = _solve_assignment(-P.ravel(), A, lo, hi)
    if cost is None:
        return best
    floor = float(np.sum(best * P)) - mass_tol
    A = np.vstack([A, P.ravel()])
    return _solve_assignment(cost.total.ravel(), A, np.append(lo, floor), np.append(hi, np.inf))


def _assignment_rows(L: int, pattern: SharingPattern | None, k):
    eye = np.eye(L)
    rows = [np.kron(eye, np.ones(L)), np.kron(np.ones(L), eye)]
    lo, hi = [np.ones(2 * L)], [np.ones(2 * L)]
    if pattern is not None:
        B = _membership(pattern)
        K = _budget_matrix(pattern, k)
        for i in range(pattern.M):
            for j in range(pattern.M):
                if i != j and np.isfinite(K[i, j]):
                    rows.append(np.outer(B[:, i], B[:, j]).ravel()[None])
                    lo.append([-np.inf])
                    hi.append([np.floor(K[i, j] + 1e-9)])
    return np.vstack(rows), np.concatenate(lo), np.concatenate(hi)


def _solve_assignment(objective: np.ndarray, A, lo, hi) -> np.ndarray:
    n = objective.size
    L = int(round(np.sqrt(n)))
    res = milp(objective, integrality=np.ones(n), bounds=Bounds(0, 1),
               constraints=LinearConstraint(A, lo, hi))
    if res.x is None:
        raise ValueError("no permutation satisfies the block budgets")
    return np.round(res.x).reshape(L, L)


def alignment_loss(z_cat, P) -> Tensor:
    """Batch mean of ‖z - z P‖ per sample; ``P`` enters as a constant."""
    z = dk.as_tensor(z_cat)
    P = np.asarray(P.data if isinstance(P, Tensor) else P, dtype=float)
    if z.ndim != 2 or P.shape != (z.shape[1], z.shape[1]):
        raise DimensionError(f"z_cat {z.shape} incompatible with P {P.shape}")
    return dk.norm(z - dk.matmul(z, dk.as_tensor(P)), axis=1).mean()


def uniform_start(pattern: SharingPattern, k=None, cycles: int = 1000, tol: float = 1e-9) -> RelaxedPermutation:
    L = pattern.L
    return dykstra_project(np.full((L, L), 1.0 / L), pattern, k, cycles, tol)


def write_triplets(path, P: np.ndarray) -> None:
    """Sparse ``row col value`` listing of the non-zero entries."""
    rows, cols = np.nonzero(P)
    lines = [f"# shape {P.shape[0]} {P.shape[1]}"]
    lines += [f"{r} {c} {P[r, c]:.17g}" for r, c in zip(rows, cols)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_triplets(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        P = np.zeros((int(header[2]), int(header[3])))
        for line in fh:
            if line.strip():
                r, c, v = line.split()
                P[int(r), int(c)] = float(v)
    return P
