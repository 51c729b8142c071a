"""MCC, R² and EnSHD against a ground-truth latent layout."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .causalflow import binarize_adjacency
from .diffkit import DimensionError
from .scmgen import ZERO_THRESHOLD, SharingPattern

RIDGE = 1e-8


def abs_correlations(z_true: np.ndarray, z_est: np.ndarray, method: str = "pearson") -> tuple[np.ndarray, list[int]]:
    """|corr(true_i, est_a)| as an L x L matrix; zero-variance columns give 0.

    Returns the matrix and the estimated-slot indices flagged as constant.
    """
    z_true, z_est = np.asarray(z_true, float), np.asarray(z_est, float)
    if z_true.shape != z_est.shape or z_true.ndim != 2:
        raise DimensionError(f"shape mismatch: {z_true.shape} vs {z_est.shape}")
    if method == "spearman":
        z_true = np.apply_along_axis(rankdata, 0, z_true)
        z_est = np.apply_along_axis(rankdata, 0, z_est)
    elif method != "pearson":
        raise ValueError(f"unknown correlation {method!r}")
    a = z_true - z_true.mean(axis=0)
    b = z_est - z_est.mean(axis=0)
    sa, sb = np.sqrt((a * a).sum(axis=0)), np.sqrt((b * b).sum(axis=0))
    ok_a, ok_b = sa > 0, sb > 0
    C = (a.T @ b) / np.outer(np.where(ok_a, sa, 1.0), np.where(ok_b, sb, 1.0))
    C[~ok_a, :] = 0.0
    C[:, ~ok_b] = 0.0
    return np.clip(np.abs(C), 0.0, 1.0), np.flatnonzero(~ok_b).tolist()


def mcc(z_true, z_est, method: str = "pearson") -> tuple[float, np.ndarray]:
    """Mean matched absolute correlation and the matching.

    ``sigma[i]`` is the estimated slot assigned to true slot ``i``.
    """
    z_true = np.asarray(z_true, float)
    if z_true.shape[0] < 3:
        raise ValueError("MCC needs at least 3 samples")
    C, _ = abs_correlations(z_true, z_est, method)
    rows, cols = linear_sum_assignment(C, maximize=True)
    sigma = np.empty(C.shape[0], dtype=int)
    sigma[rows] = cols
    return float(C[rows, cols].mean()), sigma


def r2_per_slot(z_true, z_est) -> tuple[np.ndarray, bool]:
    """OLS (with intercept) of each true slot on all estimated slots.

    The flag reports whether the ridge fallback was needed.
    """
    z_true, z_est = np.asarray(z_true, float), np.asarray(z_est, float)
    n = z_true.shape[0]
    if z_est.shape[0] != n:
        raise DimensionError("sample counts differ")
    if n <= z_est.shape[1]:
        raise ValueError("R² needs more samples than estimated slots")
    X = np.column_stack([np.ones(n), z_est])
    XtX = X.T @ X
    ridge = np.linalg.matrix_rank(X) < X.shape[1]
    if ridge:
        XtX = XtX + RIDGE * np.trace(XtX) / X.shape[1] * np.eye(X.shape[1])
        beta = np.linalg.solve(XtX, X.T @ z_true)
    else:
        beta, *_ = np.linalg.lstsq(X, z_true, rcond=None)
    resid = z_true - X @ beta
    sse = (resid ** 2).sum(axis=0)
    sst = ((z_true - z_true.mean(axis=0)) ** 2).sum(axis=0)
    scores = np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), np.where(sse > 0, 0.0, 1.0))
    return scores, bool(ridge)


def r2(z_true, z_est) -> float:
    return float(r2_per_slot(z_true, z_est)[0].mean())


def permutation_cycles(P: np.ndarray) -> list[list[int]]:
    succ = np.argmax(np.asarray(P), axis=1)
    seen, cycles = set(), []
    for start in range(len(succ)):
        if start in seen:
            continue
        cyc, a = [], start
        while a not in seen:
            seen.add(a)
            cyc.append(a)
            a = int(succ[a])
        cycles.append(cyc)
    return cycles


@dataclass
class CollapseResult:
    matrix: np.ndarray
    groups: list[list[int]]
    consistent: bool
    message: str = ""


def collapse_slots(matrix: np.ndarray, P: np.ndarray, pattern: SharingPattern) -> CollapseResult:
    """Average an L x L slot matrix over duplicate groups into a J x J latent matrix.

    Groups come from the cycles of ``P``.  When the cycles disagree with the
    slot map, the slot map grouping is used and the inconsistency is reported.
    """
    matrix, P = np.asarray(matrix, float), np.asarray(P, float)
    L = pattern.L
    if matrix.shape != (L, L) or P.shape != (L, L):
        raise DimensionError(f"expected {L} x {L} inputs")
    if not (np.all((P == 0) | (P == 1)) and np.all(P.sum(0) == 1) and np.all(P.sum(1) == 1)):
        raise ValueError("P must be a permutation matrix")
    lat = pattern.slot_latents
    truth = [np.flatnonzero(lat == j).tolist() for j in range(pattern.J)]
    cycles = sorted(sorted(c) for c in permutation_cycles(P))
    consistent = cycles == sorted(truth)
    message = "" if consistent else f"permutation cycles {cycles} disagree with slot map {truth}"
    out = np.zeros((pattern.J, pattern.J))
    for j, gj in enumerate(truth):
        for l, gl in enumerate(truth):
            out[j, l] = matrix[np.ix_(gj, gl)].mean()
    return CollapseResult(out, truth, consistent, message)


@dataclass
class EnSHDResult:
    value: int
    estimated: np.ndarray
    collapse_consistent: bool
    message: str = ""


def enshd(true_adj, est_weights, sigma, P, pattern: SharingPattern, tau: float,
          vote: float = 0.5) -> EnSHDResult:
    """Directed-edge mismatches after MCC alignment and duplicate collapse.

    A collapsed latent edge is present when at least ``vote`` of its duplicate
    slot pairs carry an edge.
    """
    sigma = np.asarray(sigma, dtype=int)
    L = pattern.L
    if sorted(sigma.tolist()) != list(range(L)):
        raise ValueError("sigma must be a bijection over the slots")
    est = binarize_adjacency(np.asarray(est_weights, float), tau)
    aligned = est[np.ix_(sigma, sigma)]
    P_aligned = np.asarray(P, float)[np.ix_(sigma, sigma)]
    col = collapse_slots(aligned, P_aligned, pattern)
    graph = (col.matrix >= vote).astype(int)
    np.fill_diagonal(graph, 0)
    truth = (np.abs(np.asarray(true_adj, float)) > ZERO_THRESHOLD).astype(int)
    np.fill_diagonal(truth, 0)
    return EnSHDResult(int((graph != truth).sum()), graph, col.consistent, col.message)


@dataclass
class EvalReport:
    mcc: float
    r2: float
    enshd: int
    sigma: list[int]
    slot_correlations: list[float]
    tau: float
    correlation: str = "pearson"
    mcc_layout: str = "L-slot duplicated concatenation"
    total_edges: int = 0
    permutation_accuracy: float = float("nan")
    collapse_consistent: bool = True
    ridge_fallback: bool = False
    constant_slots: list[int] = field(default_factory=list)
    benchmark: str = "custom"
    seed: int = 0
    stand_in_dims: bool = False

    def to_text(self) -> str:
        lines = []
        for key, val in asdict(self).items():
            if isinstance(val, list):
                val = " ".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in val)
            elif isinstance(val, float):
                val = f"{val:.10g}"
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        raw = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                raw[k.strip()] = v.strip()
        kw = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in raw:
                continue
            v = raw[name]
            t = str(f.type)
            if t.startswith("list[int]"):
                kw[name] = [int(x) for x in v.split()]
            elif t.startswith("list[float]"):
                kw[name] = [float(x) for x in v.split()]
            elif t == "bool":
                kw[name] = v == "True"
            elif t == "int":
                kw[name] = int(v)
            elif t == "float":
                kw[name] = float(v)
            else:
                kw[name] = v
        return cls(**kw)

    CSV_FIELDS = ("benchmark", "seed", "mcc", "r2", "enshd", "total_edges", "permutation_accuracy", "tau")

    def to_csv_row(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_FIELDS)
        w.writerow([getattr(self, f) for f in self.CSV_FIELDS])
        return buf.getvalue()
