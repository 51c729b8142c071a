"""Ground-truth latent SCMs with a partially shared multimodal structure."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffkit import DEFAULT_SLOPE, ContractError, DimensionError, MLPParams, Tensor, mlp_forward

ZERO_THRESHOLD = 1e-8
NOISE_LAWS = ("gaussian", "uniform", "laplace")
MECHANISMS = ("additive_mlp", "linear")


class ConfigurationError(ValueError):
    """Generator settings cannot be satisfied."""


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class SharingPattern:
    """Which latents feed which modality.

    ``modalities[m]`` is the ordered index list 𝒜_m.  Slots of the duplicated
    concatenation follow modality order, then the order inside each list.
    ``k`` is the cross-modality budget; ``k_pairs`` overrides it per ordered pair.
    """

    J: int
    modalities: tuple[tuple[int, ...], ...]
    k: float = 1.0
    dims: tuple[int, ...] | None = None
    k_pairs: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(tuple(int(j) for j in a) for a in self.modalities))
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        self.validate()

    def validate(self) -> None:
        if self.J < 1 or not self.modalities:
            raise ConfigurationError("pattern needs at least one latent and one modality")
        seen = set()
        for m, a in enumerate(self.modalities):
            if not a:
                raise ConfigurationError(f"modality {m} has no latents")
            if len(set(a)) != len(a):
                raise ConfigurationError(f"modality {m} lists a latent twice")
            if min(a) < 0 or max(a) >= self.J:
                raise ConfigurationError(f"modality {m} references a latent outside 0..{self.J - 1}")
            seen.update(a)
        missing = set(range(self.J)) - seen
        if missing:
            raise ConfigurationError(f"latents {sorted(missing)} feed no modality")
        if self.dims is not None:
            if len(self.dims) != self.M:
                raise ConfigurationError("one observation dimension per modality is required")
            for m, (a, d) in enumerate(zip(self.modalities, self.dims)):
                if len(a) > d:
                    raise ConfigurationError(f"modality {m}: |A_m|={len(a)} exceeds d_m={d}")
        if self.k < 0:
            raise ConfigurationError("shared budget k must be non-negative")

    @property
    def M(self) -> int:
        return len(self.modalities)

    @property
    def L(self) -> int:
        return sum(len(a) for a in self.modalities)

    @property
    def slot_map(self) -> list[tuple[int, int]]:
        return [(m, j) for m, a in enumerate(self.modalities) for j in a]

    @property
    def slot_latents(self) -> np.ndarray:
        return np.array([j for _, j in self.slot_map], dtype=int)

    @property
    def slot_modalities(self) -> np.ndarray:
        return np.array([m for m, _ in self.slot_map], dtype=int)

    def modality_slots(self, m: int) -> np.ndarray:
        start = sum(len(a) for a in self.modalities[:m])
        return np.arange(start, start + len(self.modalities[m]))

    def indicator(self, m: int) -> np.ndarray:
        """B_{𝒜_m}: 1 on the slots of modality ``m``."""
        b = np.zeros(self.L)
        b[self.modality_slots(m)] = 1.0
        return b

    def owners(self, j: int) -> list[int]:
        return [m for m, a in enumerate(self.modalities) if j in a]

    def is_shared(self, j: int) -> bool:
        return len(self.owners(j)) > 1

    def roles(self) -> list[str]:
        """``"c:m1,m2"`` for shared latents, ``"s:m"`` for modality-specific ones."""
        out = []
        for j in range(self.J):
            own = self.owners(j)
            out.append(("c:" if len(own) > 1 else "s:") + ",".join(map(str, own)))
        return out

    def sharing_partners(self, m: int) -> set[int]:
        """Sh(m): the other modalities that share at least one latent with ``m``."""
        mine = set(self.modalities[m])
        return {l for l, a in enumerate(self.modalities) if l != m and mine & set(a)}

    def non_sharing_pairs(self) -> list[tuple[int, int]]:
        """Ordered pairs (m, k), m != k, with Sh(m) ∩ Sh(k) = ∅."""
        sh = [self.sharing_partners(m) for m in range(self.M)]
        return [(m, k) for m in range(self.M) for k in range(self.M)
                if m != k and not (sh[m] & sh[k])]

    def satisfies_b1(self) -> bool:
        paired = {m for m, _ in self.non_sharing_pairs()}
        return paired == set(range(self.M))

    def budget(self, i: int, j: int) -> float:
        for a, b, v in self.k_pairs:
            if (a, b) == (i, j):
                return float(v)
        return float(self.k)

    def to_dict(self) -> dict:
        return {"J": self.J, "modalities": [list(a) for a in self.modalities], "k": self.k,
                "dims": list(self.dims) if self.dims is not None else None,
                "k_pairs": [list(p) for p in self.k_pairs]}

    @classmethod
    def from_dict(cls, d: dict) -> "SharingPattern":
        return cls(J=d["J"], modalities=tuple(tuple(a) for a in d["modalities"]), k=d.get("k", 1.0),
                   dims=tuple(d["dims"]) if d.get("dims") is not None else None,
                   k_pairs=tuple(tuple(p) for p in d.get("k_pairs", ())))


@dataclass
class LatentSCM:
    """Additive-noise SCM ``z_j = loc_j(parents) + noise_j``.

    ``adjacency[i, j] != 0`` means latent i is a parent of latent j; the weight
    scales the parent value before it reaches the location network (or is the
    coefficient itself for linear mechanisms).
    """

    adjacency: np.ndarray
    mechanism: str = "additive_mlp"
    mechanisms: list[MLPParams | None] = field(default_factory=list)
    mechanism_seeds: list[int] = field(default_factory=list)
    noise: str = "gaussian"
    noise_scale: float = 1.0
    roles: list[str] = field(default_factory=list)

    @property
    def J(self) -> int:
        return self.adjacency.shape[0]

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(np.abs(self.adjacency[:, j]) > ZERO_THRESHOLD)


def admissible_mask(pattern: SharingPattern) -> np.ndarray:
    """Edges allowed by the structural surrogate of the independence assumptions.

    Specific latents never cause shared ones, and specific latents of two
    different modalities are never connected.
    """
    J = pattern.J
    shared = np.array([pattern.is_shared(j) for j in range(J)])
    home = [pattern.owners(j)[0] for j in range(J)]
    mask = np.ones((J, J), dtype=bool)
    np.fill_diagonal(mask, False)
    for i in range(J):
        for j in range(J):
            if shared[i]:
                continue
            if shared[j] or home[i] != home[j]:
                mask[i, j] = False
    return mask


def topological_order(adjacency: np.ndarray, threshold: float = ZERO_THRESHOLD) -> list[int] | None:
    """Kahn's algorithm; ``None`` when the graph has a directed cycle."""
    a = np.abs(np.asarray(adjacency)) > threshold
    indeg = a.sum(axis=0).astype(int)
    ready = [j for j in range(a.shape[0]) if indeg[j] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(a[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    return order if len(order) == a.shape[0] else None


def is_acyclic(adjacency: np.ndarray, threshold: float = ZERO_THRESHOLD) -> bool:
    return topological_order(adjacency, threshold) is not None


def sample_dag(pattern: SharingPattern, edge_density: float, seed: int,
               enforce_b1: bool = True, weight_range: tuple[float, float] = (0.5, 1.5),
               max_tries: int = 100) -> np.ndarray:
    """Random weighted DAG over the J latents that respects :func:`admissible_mask`.

    A random topological order is drawn; each admissible edge consistent with it
    is kept with probability ``edge_density`` and given a signed uniform weight.
    """
    if not 0.0 <= edge_density <= 1.0:
        raise ConfigurationError("edge_density must lie in [0, 1]")
    if enforce_b1 and not pattern.satisfies_b1():
        raise ConfigurationError("pattern has a modality without a non-sharing partner (B1)")
    rng = np.random.default_rng(seed)
    mask = admissible_mask(pattern)
    J = pattern.J
    for _ in range(max_tries):
        order = rng.permutation(J)
        pos = np.empty(J, dtype=int)
        pos[order] = np.arange(J)
        forward = pos[:, None] < pos[None, :]
        keep = mask & forward & (rng.random((J, J)) < edge_density)
        lo, hi = weight_range
        weights = rng.uniform(lo, hi, size=(J, J)) * rng.choice([-1.0, 1.0], size=(J, J))
        adj = np.where(keep, weights, 0.0)
        if is_acyclic(adj):
            return adj
    raise NumericalError("could not draw an acyclic graph")  # unreachable for forward-ordered masks


def init_mechanisms(adjacency: np.ndarray, seed: int, hidden: int = 8,
                    slope: float = DEFAULT_SLOPE) -> tuple[list[MLPParams | None], list[int]]:
    """One location network per non-root latent, each from its own child seed."""
    J = adjacency.shape[0]
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(J)]
    nets: list[MLPParams | None] = []
    for j in range(J):
        k = int((np.abs(adjacency[:, j]) > ZERO_THRESHOLD).sum())
        if k == 0:
            nets.append(None)
            continue
        rng = np.random.default_rng(seeds[j])
        w0 = rng.normal(0.0, 1.0 / np.sqrt(k), size=(k, hidden))
        b0 = rng.normal(0.0, 0.5, size=hidden)
        w1 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, 1))
        nets.append(MLPParams([Tensor(w0), Tensor(w1)], [Tensor(b0), None], slope=slope))
    return nets, seeds


def make_scm(pattern: SharingPattern, edge_density: float, seed: int, mechanism: str = "additive_mlp",
             noise: str = "gaussian", noise_scale: float = 1.0, enforce_b1: bool = True,
             hidden: int = 8, slope: float = DEFAULT_SLOPE) -> LatentSCM:
    if mechanism not in MECHANISMS:
        raise ConfigurationError(f"unknown mechanism {mechanism!r}")
    if noise not in NOISE_LAWS:
        raise ConfigurationError(f"unknown noise law {noise!r}")
    dag_seed, mech_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    adj = sample_dag(pattern, edge_density, dag_seed, enforce_b1=enforce_b1)
    nets, seeds = (init_mechanisms(adj, mech_seed, hidden, slope) if mechanism == "additive_mlp"
                   else ([None] * pattern.J, []))
    return LatentSCM(adj, mechanism, nets, seeds, noise, noise_scale, pattern.roles())


def sample_noise(law: str, n: int, J: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Unit-variance noise of the requested law (times ``scale``)."""
    if law == "gaussian":
        e = rng.standard_normal((n, J))
    elif law == "uniform":
        e = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(n, J))
    elif law == "laplace":
        e = rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(n, J))
    else:
        raise ConfigurationError(f"unknown noise law {law!r}")
    return scale * e


def ancestral_sample(scm: LatentSCM, n: int, seed: int) -> np.ndarray:
    order = topological_order(scm.adjacency)
    if order is None:
        raise ContractError("SCM adjacency has a directed cycle")
    rng = np.random.default_rng(seed)
    eps = sample_noise(scm.noise, n, scm.J, rng, scm.noise_scale)
    z = np.zeros((n, scm.J))
    for j in order:
        pa = scm.parents(j)
        if len(pa) == 0:
            z[:, j] = eps[:, j]
            continue
        inputs = z[:, pa] * scm.adjacency[pa, j]
        if scm.mechanism == "linear":
            loc = inputs.sum(axis=1)
        else:
            loc = mlp_forward(scm.mechanisms[j], inputs).data[:, 0]
        z[:, j] = loc + eps[:, j]
    return z


def build_ground_truth_permutation(pattern: SharingPattern) -> np.ndarray:
    """P*: specific slots map to themselves, duplicates of a shared latent form a cycle.

    With pairwise sharing every cycle is a transposition, so P* is symmetric.
    """
    L = pattern.L
    P = np.zeros((L, L))
    lat = pattern.slot_latents
    for j in range(pattern.J):
        slots = np.flatnonzero(lat == j)
        for a, b in zip(slots, np.roll(slots, -1)):
            P[a, b] = 1.0
    return P


def block_index(pattern: SharingPattern, size: int, m: int) -> np.ndarray:
    if size == pattern.J:
        return np.array(pattern.modalities[m])
    if size == pattern.L:
        return pattern.modality_slots(m)
    raise DimensionError(f"adjacency size {size} matches neither J={pattern.J} nor L={pattern.L}")


def count_cross_block_nonzeros(adjacency: np.ndarray, pattern: SharingPattern,
                               threshold: float = ZERO_THRESHOLD) -> int:
    """Non-zero entries summed over the blocks of all non-sharing modality pairs."""
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise DimensionError("adjacency must be square")
    total = 0
    for m, k in pattern.non_sharing_pairs():
        rows = block_index(pattern, adj.shape[0], m)
        cols = block_index(pattern, adj.shape[0], k)
        total += int((np.abs(adj[np.ix_(rows, cols)]) > threshold).sum())
    return total


def _is_generalized_permutation(T: np.ndarray, tol: float = 1e-12) -> bool:
    nz = np.abs(T) > tol
    return bool(np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1))


@dataclass
class MixingDensityReport:
    trials: int
    strict: int
    baseline_nonzeros: int
    fraction: float
    resampled: int


def _sample_block(rng, n: int, generalized_permutation: bool) -> np.ndarray:
    if generalized_permutation:
        T = np.zeros((n, n))
        T[np.arange(n), rng.permutation(n)] = rng.uniform(0.5, 2.0, n) * rng.choice([-1.0, 1.0], n)
        return T
    return rng.standard_normal((n, n))


def probe_mixing_density(scm_or_adjacency, pattern: SharingPattern, trials: int, seed: int,
                         generalized_permutation: bool = False, threshold: float = ZERO_THRESHOLD,
                         max_retries: int = 20) -> MixingDensityReport:
    """Randomised check of the mixing-density condition.

    Draws per-modality invertible blocks T_m (at least one not a generalized
    permutation unless ``generalized_permutation``) and counts how often the
    transformed non-sharing blocks ``T_m A_mk T_k^-1`` have strictly more
    non-zeros than the originals.  A heuristic, not a proof.
    """
    adj = scm_or_adjacency.adjacency if isinstance(scm_or_adjacency, LatentSCM) else np.asarray(scm_or_adjacency)
    if adj.shape != (pattern.J, pattern.J):
        raise DimensionError("probe works on the J x J ground-truth adjacency")
    pairs = pattern.non_sharing_pairs()
    blocks = {(m, k): adj[np.ix_(pattern.modalities[m], pattern.modalities[k])] for m, k in pairs}
    base = sum(int((np.abs(b) > threshold).sum()) for b in blocks.values())
    sizes = [len(a) for a in pattern.modalities]
    if not generalized_permutation and max(sizes) < 2:
        raise ConfigurationError("every block is 1x1: no non-generalized-permutation T exists")
    rng = np.random.default_rng(seed)
    strict = resampled = 0
    for _ in range(trials):
        for _attempt in range(max_retries):
            Ts = [_sample_block(rng, n, generalized_permutation) for n in sizes]
            conds = [np.linalg.cond(T) for T in Ts]
            mixing = generalized_permutation or any(not _is_generalized_permutation(T) for T in Ts)
            if max(conds) < 1e8 and mixing:
                break
            resampled += 1
        else:
            raise NumericalError("could not sample well-conditioned transforms")
        inv = [np.linalg.inv(T) for T in Ts]
        total = 0
        for (m, k), b in blocks.items():
            total += int((np.abs(Ts[m] @ b @ inv[k]) > threshold).sum())
        strict += int(total > base)
    return MixingDensityReport(trials, strict, base, strict / trials if trials else 0.0, resampled)
