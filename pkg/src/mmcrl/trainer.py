"""Joint optimisation of encoders, decoders, relaxed permutation, flow and adjacency.

Each batch runs one network update with the relaxed permutation held fixed,
then one projected-gradient step on the permutation using the transport cost
of that batch's encodings.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffkit as dk
from .bundle import GroundTruth
from .causalflow import (FlowParams, LearnableAdjacency, acyclicity_loss, flow_forward, init_adjacency,
                         init_flow, nll_loss, sparsity_loss, write_adjacency)
from .diffkit import OptimizerState, Tape, Tensor
from .metrics import EvalReport, abs_correlations, enshd, mcc, r2_per_slot
from .mmodel import MultimodalAutoencoder, decode_all, encode_all, init_autoencoder, reconstruction_loss
from .otalign import (CostMatrix, EpsilonSchedule, STD_FLOOR, alignment_loss, cost_matrix, epsilon_at,
                      mask_within_modality,
                      permutation_step, round_to_permutation, uniform_start, write_triplets)
from .scmgen import SharingPattern

log = logging.getLogger(__name__)

LOSS_TERMS = ("alg", "rec", "spr", "acy", "nll")


class TrainingAborted(RuntimeError):
    """A non-finite loss stopped training; the last good checkpoint is kept."""


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 256
    lr: float = 1e-3
    lr_P: float = 0.01
    alpha_alg: float = 1.0
    alpha_rec: float = 1.0
    alpha_spr: float = 0.01
    alpha_acy: float = 1.0
    alpha_nll: float = 1.0
    eps_quantile: float = 0.9
    gamma: float = 0.95
    eps_floor: float = 0.0
    proj_cycles: int = 100
    proj_tol: float = 1e-6
    tau: float = 0.3
    cst: float | None = None
    k: float | None = None
    seed: int = 0
    encoder_depth: int = 3
    width_factor: int = 4
    flow_hidden: tuple[int, ...] = (16,)
    slope: float = dk.DEFAULT_SLOPE
    correlation: str = "pearson"
    warmup_epochs: int = 0
    nll_to_encoder: bool = False
    cross_modal_only: bool = True

    def __post_init__(self):
        self.flow_hidden = tuple(int(h) for h in self.flow_hidden)
        self.validate()

    def validate(self) -> None:
        for name in ("alpha_alg", "alpha_rec", "alpha_spr", "alpha_acy", "alpha_nll", "lr", "lr_P"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def weights(self) -> dict[str, float]:
        return {t: getattr(self, f"alpha_{t}") for t in LOSS_TERMS}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flow_hidden"] = list(self.flow_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def total_loss(components: dict, config: TrainConfig) -> Tensor:
    """Weighted sum of the loss terms; a zero weight drops the term entirely."""
    total = None
    for name, weight in config.weights().items():
        if weight == 0 or name not in components:
            continue
        term = dk.as_tensor(components[name])
        if not np.all(np.isfinite(term.data)):
            raise FloatingPointError(f"loss term {name!r} is not finite ({term.data})")
        total = weight * term if total is None else total + weight * term
    return total if total is not None else dk.as_tensor(0.0)


@dataclass
class TrainState:
    pattern: SharingPattern
    config: TrainConfig
    model: MultimodalAutoencoder
    flow: FlowParams
    adjacency: LearnableAdjacency
    P: np.ndarray
    optimizer: OptimizerState
    x_mean: list[np.ndarray]
    x_std: list[np.ndarray]
    schedule: EpsilonSchedule | None = None
    last_cost: CostMatrix | None = None
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.model.named_parameters())
        out.update(self.flow.named_parameters("flow."))
        out["adjacency"] = self.adjacency.weights
        return out

    def normalise(self, xs) -> list[np.ndarray]:
        return [(np.asarray(x, float) - mu) / sd for x, mu, sd in zip(xs, self.x_mean, self.x_std)]


def _seeds(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init, shuffle = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init), np.random.default_rng(shuffle)


def init_state(pattern: SharingPattern, xs, config: TrainConfig) -> TrainState:
    init_rng, _ = _seeds(config.seed)
    dims = [np.asarray(x).shape[1] for x in xs]
    model = init_autoencoder(pattern, dims, init_rng, depth=config.encoder_depth,
                             width_factor=config.width_factor, slope=config.slope)
    L = pattern.L
    flow = init_flow(L, init_rng, hidden=config.flow_hidden, slope=config.slope)
    adjacency = init_adjacency(L, init_rng)
    x_mean = [np.asarray(x, float).mean(axis=0) if len(x) else np.zeros(d) for x, d in zip(xs, dims)]
    x_std = [np.maximum(np.asarray(x, float).std(axis=0), STD_FLOOR) if len(x) else np.ones(d)
             for x, d in zip(xs, dims)]
    P = uniform_start(pattern, config.k).P
    return TrainState(pattern, config, model, flow, adjacency, P, OptimizerState(lr=config.lr),
                      x_mean, x_std)


def standardize_tensor(z: Tensor) -> Tensor:
    """Per-feature batch standardisation that gradients flow through."""
    centred = z - dk.mean(z, axis=0, keepdims=True)
    sd = dk.sqrt(dk.mean(dk.square(centred), axis=0, keepdims=True) + STD_FLOOR ** 2)
    return centred / sd


def batch_losses(state: TrainState, xb, align: bool = True) -> tuple[dict[str, Tensor], Tensor]:
    """Loss components for one batch plus the (standardised) encodings.

    Unless ``nll_to_encoder`` is set, the flow sees detached encodings: the
    likelihood of standardised codes rewards collinear codes, which would
    fight reconstruction.
    """
    cfg = state.config
    z = encode_all(state.model, xb)
    zs = standardize_tensor(z)
    comps = {"rec": reconstruction_loss(xb, decode_all(state.model, z))}
    if cfg.alpha_alg and align:
        comps["alg"] = alignment_loss(zs, state.P)
    if cfg.alpha_nll:
        flow_in = zs if cfg.nll_to_encoder else Tensor(zs.data)
        comps["nll"] = nll_loss(*flow_forward(state.flow, state.adjacency, flow_in))
    if cfg.alpha_spr:
        comps["spr"] = sparsity_loss(state.adjacency)
    if cfg.alpha_acy:
        comps["acy"] = acyclicity_loss(state.adjacency, cfg.cst)
    return comps, zs


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    if n <= size:
        yield order
        return
    for start in range(0, n - size + 1, size):
        yield order[start:start + size]


def train_epoch(state: TrainState, xs, epoch: int, rng: np.random.Generator) -> dict:
    """One pass over the data; returns the per-epoch mean of every loss term."""
    cfg = state.config
    pattern = state.pattern
    params = state.parameters()
    sums = {t: 0.0 for t in (*LOSS_TERMS, "total")}
    count, worst_violation = 0, 0.0
    n = xs[0].shape[0]
    aligning = epoch >= cfg.warmup_epochs
    for idx in _batches(n, cfg.batch_size, rng):
        xb = [x[idx] for x in xs]
        if state.schedule is None and aligning:
            D0 = cost_matrix(encode_all(state.model, xb).data, 0.0).D
            state.schedule = EpsilonSchedule.from_costs(D0, cfg.eps_quantile, cfg.gamma, cfg.eps_floor)
        with Tape() as tape:
            comps, zs = batch_losses(state, xb, aligning)
            loss = total_loss(comps, cfg)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite total loss at epoch {epoch}")
        grads = backward_named(tape, loss, params)
        dk.optimizer_step(state.optimizer, params, grads)
        state.adjacency.zero_diagonal()
        if aligning:
            eps = epsilon_at(state.schedule, epoch - cfg.warmup_epochs)
            cost = cost_matrix(zs.data, eps, standardized=False)
            if cfg.cross_modal_only:
                cost = mask_within_modality(cost, pattern)
            step = permutation_step(state.P, cost, cfg.lr_P, pattern, cfg.k, cfg.proj_cycles, cfg.proj_tol)
            state.P = step.P
            state.last_cost = cost
            worst_violation = max(worst_violation, step.report.max_violation)
        for t, v in comps.items():
            sums[t] += float(v.data)
        sums["total"] += float(loss.data)
        count += 1
    record = {"epoch": epoch, **{t: v / max(count, 1) for t, v in sums.items()},
              "eps": epsilon_at(state.schedule, epoch - cfg.warmup_epochs) if aligning else float("nan"),
              "proj_violation": worst_violation}
    state.history.append(record)
    state.epoch = epoch + 1
    return record


def backward_named(tape: Tape, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    if not loss.tracked:
        return {name: np.zeros_like(p.data) for name, p in params.items()}
    grads = dk.backward(tape, loss)
    return {name: grads.get(p.id, np.zeros_like(p.data)) for name, p in params.items()}


def encode_dataset(state: TrainState, xs, chunk: int = 4096) -> np.ndarray:
    xs = state.normalise(xs)
    n = xs[0].shape[0]
    parts = [encode_all(state.model, [x[s:s + chunk] for x in xs]).data for s in range(0, n, chunk)]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, state.pattern.L))


def rounded_permutation(state: TrainState) -> np.ndarray:
    return round_to_permutation(state.P, state.pattern, state.config.k, cost=state.last_cost)


def evaluate(state: TrainState, gt: GroundTruth, benchmark: str | None = None) -> EvalReport:
    cfg = state.config
    pattern = state.pattern
    z_true = gt.z_cat
    z_est = encode_dataset(state, gt.xs)
    value, sigma = mcc(z_true, z_est, cfg.correlation)
    C, constant = abs_correlations(z_true, z_est, cfg.correlation)
    scores, ridge = r2_per_slot(z_true, z_est)
    P_hard = rounded_permutation(state)
    graph = enshd(gt.scm.adjacency, state.adjacency.weights.data, sigma, P_hard, pattern, cfg.tau)
    aligned = P_hard[np.ix_(sigma, sigma)]
    J = pattern.J
    return EvalReport(
        mcc=value, r2=float(scores.mean()), enshd=graph.value, sigma=[int(s) for s in sigma],
        slot_correlations=[float(C[i, s]) for i, s in enumerate(sigma)], tau=cfg.tau,
        correlation=cfg.correlation, total_edges=J * (J - 1),
        permutation_accuracy=float((aligned == gt.P_star).mean()),
        collapse_consistent=graph.collapse_consistent, ridge_fallback=ridge,
        constant_slots=[int(c) for c in constant],
        benchmark=benchmark or gt.recipe.get("benchmark", "custom"), seed=cfg.seed,
        stand_in_dims=gt.recipe.get("benchmark", "custom") != "custom")


def save_checkpoint(state: TrainState, path) -> None:
    tensors = {name: p.data for name, p in state.parameters().items()}
    tensors["P"] = state.P
    for m, (mu, sd) in enumerate(zip(state.x_mean, state.x_std)):
        tensors[f"x_mean{m}"] = mu
        tensors[f"x_std{m}"] = sd
    if state.last_cost is not None:
        tensors["last_D"] = state.last_cost.D
    meta = {"config": state.config.to_dict(), "pattern": state.pattern.to_dict(), "epoch": state.epoch,
            "order": state.adjacency.order.tolist(),
            "schedule": asdict(state.schedule) if state.schedule else None,
            "last_eps": state.last_cost.eps if state.last_cost is not None else None,
            "optimizer_step": state.optimizer.step}
    dk.save_tensors(path, tensors, meta)


def load_checkpoint(path, dims) -> TrainState:
    tensors, meta = dk.load_tensors(path)
    cfg = TrainConfig.from_dict(meta["config"])
    pattern = SharingPattern.from_dict(meta["pattern"])
    xs_stub = [np.zeros((0, d)) for d in dims]
    state = init_state(pattern, xs_stub, cfg)
    for name, p in state.parameters().items():
        p.data = tensors[name].reshape(p.shape)
    state.adjacency.order = np.asarray(meta["order"], dtype=int)
    state.P = tensors["P"].reshape(pattern.L, pattern.L)
    state.x_mean = [tensors[f"x_mean{m}"] for m in range(pattern.M)]
    state.x_std = [tensors[f"x_std{m}"] for m in range(pattern.M)]
    if meta["schedule"]:
        state.schedule = EpsilonSchedule(**meta["schedule"])
    if "last_D" in tensors:
        state.last_cost = CostMatrix(tensors["last_D"].reshape(pattern.L, pattern.L), meta["last_eps"])
    state.epoch = meta["epoch"]
    state.optimizer.step = meta["optimizer_step"]
    return state


LOSS_COLUMNS = ("epoch", "total", *LOSS_TERMS, "eps", "proj_violation")


def _write_losses(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for rec in history:
            w.writerow([rec["epoch"], *(f"{rec.get(c, 0.0):.10g}" for c in LOSS_COLUMNS[1:])])


def write_run_outputs(state: TrainState, report: EvalReport, run_dir: Path) -> None:
    (run_dir / "report.txt").write_text(report.to_text())
    (run_dir / "report.csv").write_text(report.to_csv_row())
    write_triplets(run_dir / "permutation.txt", rounded_permutation(state))
    write_triplets(run_dir / "permutation_relaxed.txt", state.P)
    write_adjacency(run_dir / "adjacency.txt", run_dir / "edges.txt",
                    state.adjacency.weights.data, state.config.tau)


def fit(config: TrainConfig, gt: GroundTruth, run_dir=None, benchmark: str | None = None) -> tuple[TrainState, EvalReport]:
    """Train for ``config.epochs`` epochs, then evaluate against the ground truth.

    With ``run_dir`` the config snapshot, loss curve, checkpoint, report and
    exports are written there.  A non-finite loss raises :class:`TrainingAborted`
    after restoring the last good checkpoint on disk.
    """
    if gt.n == 0:
        raise ValueError("cannot train on an empty bundle")
    run_dir = Path(run_dir) if run_dir is not None else None
    handler = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        handler = logging.FileHandler(run_dir / "train.log", mode="w")
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    try:
        state = init_state(gt.pattern, gt.xs, config)
        xs = state.normalise(gt.xs)
        _, shuffle_rng = _seeds(config.seed)
        ckpt = run_dir / "checkpoint.bin" if run_dir is not None else None
        if ckpt is not None:
            save_checkpoint(state, ckpt)
        for epoch in range(config.epochs):
            try:
                rec = train_epoch(state, xs, epoch, shuffle_rng)
            except FloatingPointError as exc:
                log.error("aborting at epoch %d: %s", epoch, exc)
                raise TrainingAborted(f"epoch {epoch}: {exc}") from exc
            log.info("epoch %d " + " ".join(f"{c}=%.6g" for c in LOSS_COLUMNS[1:]), epoch,
                     *(rec[c] for c in LOSS_COLUMNS[1:]))
            if ckpt is not None:
                save_checkpoint(state, ckpt)
                _write_losses(run_dir / "losses.csv", state.history)
        report = evaluate(state, gt, benchmark)
        log.info("final mcc=%.4f r2=%.4f enshd=%d permutation_accuracy=%.3f",
                 report.mcc, report.r2, report.enshd, report.permutation_accuracy)
        if run_dir is not None:
            _write_losses(run_dir / "losses.csv", state.history)
            write_run_outputs(state, report, run_dir)
        return state, report
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()
