"""Injective, undercomplete modality mixing functions and their audits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .diffkit import DEFAULT_SLOPE, DimensionError, MLPParams, Tensor, mlp_forward
from .scmgen import ConfigurationError

RANK_TOL = 1e-6
KINK_EPS = 1e-9


@dataclass
class ModalityMixer:
    modality: int
    in_dim: int
    out_dim: int
    params: MLPParams
    seed: int
    bias: bool = False

    @property
    def widths(self) -> list[int]:
        return self.params.widths

    @property
    def depth(self) -> int:
        return len(self.params.weights)

    def spec(self) -> dict:
        """Everything needed to rebuild this mixer with :func:`init_mixer`."""
        return {"modality": self.modality, "in_dim": self.in_dim, "out_dim": self.out_dim,
                "depth": self.depth, "seed": self.seed, "widths": self.widths,
                "slope": self.params.slope, "bias": self.bias,
                "kind": "identity" if self.seed < 0 else "mlp"}


def mixer_widths(in_dim: int, out_dim: int, depth: int) -> list[int]:
    return [in_dim + (out_dim - in_dim) * l // depth for l in range(depth + 1)]


def init_mixer(in_dim: int, out_dim: int, depth: int, seed: int, modality: int = 0,
               slope: float = DEFAULT_SLOPE, bias: bool = False, orthogonal: bool = False,
               min_sv_ratio: float = 1e-2, max_tries: int = 100) -> ModalityMixer:
    """Random leaky-rectifier MLP with non-decreasing widths and full-rank layers.

    Layers whose singular-value ratio falls below ``min_sv_ratio`` are redrawn.
    """
    if out_dim < in_dim:
        raise ConfigurationError(f"mixer would be overcomplete: out_dim {out_dim} < in_dim {in_dim}")
    if depth < 1:
        raise ConfigurationError("depth must be at least 1")
    rng = np.random.default_rng(seed)
    widths = mixer_widths(in_dim, out_dim, depth)
    weights, biases = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        for _ in range(max_tries):
            if orthogonal:
                q, _ = np.linalg.qr(rng.standard_normal((b, b)))
                w = q[:a, :]
            else:
                w = rng.standard_normal((a, b)) / np.sqrt(a)
            s = np.linalg.svd(w, compute_uv=False)
            if s[-1] / s[0] > min_sv_ratio:
                break
        else:
            raise ConfigurationError("could not draw a full-rank layer")
        weights.append(Tensor(w))
        biases.append(Tensor(rng.normal(0.0, 0.1, size=b)) if bias else None)
    return ModalityMixer(modality, in_dim, out_dim, MLPParams(weights, biases, slope=slope), seed, bias)


def mixer_from_spec(spec: dict) -> ModalityMixer:
    if spec.get("kind") == "identity":
        return identity_mixer(spec["in_dim"], modality=spec.get("modality", 0))
    return init_mixer(spec["in_dim"], spec["out_dim"], spec["depth"], spec["seed"],
                      modality=spec.get("modality", 0), slope=spec.get("slope", DEFAULT_SLOPE),
                      bias=spec.get("bias", False))


def identity_mixer(dim: int, modality: int = 0) -> ModalityMixer:
    return ModalityMixer(modality, dim, dim, MLPParams([Tensor(np.eye(dim))], [None]), seed=-1)


def mix(mixer: ModalityMixer, z_block) -> np.ndarray:
    z = np.asarray(z_block.data if isinstance(z_block, Tensor) else z_block, dtype=float)
    if z.ndim != 2 or z.shape[1] != mixer.in_dim:
        raise DimensionError(f"mixer expects width {mixer.in_dim}, got shape {z.shape}")
    return mlp_forward(mixer.params, z).data


def _params(mixer) -> MLPParams:
    return mixer.params if isinstance(mixer, ModalityMixer) else mixer


def mlp_jacobian(params: MLPParams, x: np.ndarray, kink_tol: float = 1e-12) -> tuple[np.ndarray, bool]:
    """Exact Jacobian (``out x in``) of a leaky-rectifier MLP at one point.

    The flag is True when some pre-activation sits within ``kink_tol`` of a kink.
    """
    h = np.asarray(x, dtype=float)[None, :]
    M = np.eye(h.shape[1])
    kink = False
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.data + (b.data if b is not None else 0.0)
        M = M @ w.data
        if i < last or params.final_activation:
            kink |= bool(np.any(np.abs(h) < kink_tol))
            scale = np.where(h[0] >= 0, 1.0, params.slope)
            h = h * scale
            M = M * scale
    return M.T, kink


@dataclass
class RankReport:
    passed: bool
    min_ratio: float
    ratios: np.ndarray
    min_rank: int
    kink_retries: int


def jacobian_rank_probe(mixer, samples, tol: float = RANK_TOL, kink_eps: float = KINK_EPS,
                        max_retries: int = 5) -> RankReport:
    """Smallest-to-largest singular value ratio of the Jacobian at each sample."""
    params = _params(mixer)
    xs = np.atleast_2d(np.asarray(samples, dtype=float))
    if xs.shape[0] < 1:
        raise ValueError("need at least one sample")
    ratios, ranks = np.empty(len(xs)), np.empty(len(xs), dtype=int)
    retries = 0
    for n, x in enumerate(xs):
        jac, kink = mlp_jacobian(params, x)
        tries = 0
        while kink and tries < max_retries:
            x = x + kink_eps
            jac, kink = mlp_jacobian(params, x)
            tries += 1
        retries += tries
        s = np.linalg.svd(jac, compute_uv=False)
        ratios[n] = s[-1] / s[0] if s[0] > 0 else 0.0
        ranks[n] = int((s > tol * max(s[0], 1e-300)).sum())
    return RankReport(bool(np.all(ratios > tol)), float(ratios.min()), ratios, int(ranks.min()), retries)


@dataclass
class PropernessReport:
    passed: bool
    norms: np.ndarray
    failing_directions: int


def properness_probe(mixer, radii: Sequence[float], directions: int, seed: int) -> PropernessReport:
    """Heuristic divergence check: ‖f(r·u)‖ must grow strictly along random rays.

    ``mixer`` may be a :class:`ModalityMixer` or a plain callable on ``n x in`` arrays
    (then ``in_dim`` is read from a ``in_dim`` attribute).
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    if isinstance(mixer, ModalityMixer):
        f: Callable = lambda z: mix(mixer, z)
        dim = mixer.in_dim
    else:
        f, dim = mixer, mixer.in_dim
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((directions, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    norms = np.stack([np.linalg.norm(f(r * u), axis=1) for r in radii], axis=1)
    growing = np.all(np.diff(norms[:, 1:], axis=1) > 0, axis=1) if len(radii) > 2 else np.ones(directions, bool)
    return PropernessReport(bool(growing.all()), norms, int((~growing).sum()))
