"""Modality-specific encoders/decoders and the reconstruction objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffkit as dk
from .diffkit import DimensionError, MLPParams, Tensor
from .scmgen import SharingPattern


@dataclass
class MultimodalAutoencoder:
    pattern: SharingPattern
    encoders: list[MLPParams]
    decoders: list[MLPParams]

    def __post_init__(self):
        for m, (enc, dec, a) in enumerate(zip(self.encoders, self.decoders, self.pattern.modalities)):
            if enc.out_dim != len(a):
                raise DimensionError(f"encoder {m} emits {enc.out_dim} latents, modality has {len(a)}")
            if dec.in_dim != len(a) or dec.out_dim != enc.in_dim:
                raise DimensionError(f"decoder {m} shape {dec.in_dim}->{dec.out_dim} does not invert encoder")

    @property
    def dims(self) -> list[int]:
        return [e.in_dim for e in self.encoders]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for m, (e, d) in enumerate(zip(self.encoders, self.decoders)):
            out.update(e.named_parameters(f"enc{m}."))
            out.update(d.named_parameters(f"dec{m}."))
        return out


def init_autoencoder(pattern: SharingPattern, dims: Sequence[int], rng: np.random.Generator,
                     depth: int = 3, width_factor: int = 4, slope: float = dk.DEFAULT_SLOPE) -> MultimodalAutoencoder:
    """``depth`` layers per network, hidden width ``width_factor * |A_m|``."""
    encoders, decoders = [], []
    for a, d in zip(pattern.modalities, dims):
        hidden = [width_factor * len(a)] * (depth - 1)
        encoders.append(dk.init_mlp([d, *hidden, len(a)], rng, slope=slope))
        decoders.append(dk.init_mlp([len(a), *hidden, d], rng, slope=slope))
    return MultimodalAutoencoder(pattern, encoders, decoders)


def encode_all(model: MultimodalAutoencoder, xs: Sequence) -> Tensor:
    """Concatenate per-modality latent estimates in slot order (n x L)."""
    if len(xs) != len(model.encoders):
        raise DimensionError(f"expected {len(model.encoders)} modalities, got {len(xs)}")
    return dk.concat([dk.mlp_forward(enc, x) for enc, x in zip(model.encoders, xs)], axis=1)


def decode_all(model: MultimodalAutoencoder, z_cat) -> list[Tensor]:
    z_cat = dk.as_tensor(z_cat)
    L = model.pattern.L
    if z_cat.ndim != 2 or z_cat.shape[1] != L:
        raise DimensionError(f"z_cat must be n x {L}, got {z_cat.shape}")
    out = []
    for m, dec in enumerate(model.decoders):
        slots = model.pattern.modality_slots(m)
        out.append(dk.mlp_forward(dec, z_cat[:, slots[0]:slots[-1] + 1]))
    return out


def reconstruction_loss(xs: Sequence, x_hats: Sequence) -> Tensor:
    """Sum over modalities of the batch-mean per-sample Euclidean residual norm."""
    if len(xs) != len(x_hats):
        raise DimensionError("modality count mismatch")
    total = None
    for x, xh in zip(xs, x_hats):
        x, xh = dk.as_tensor(x), dk.as_tensor(xh)
        if x.shape != xh.shape:
            raise DimensionError(f"reconstruction shape {xh.shape} != {x.shape}")
        term = dk.norm(dk.sub(x, xh), axis=1).mean()
        total = term if total is None else total + term
    return total
