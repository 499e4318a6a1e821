"""Layer functions built on the autodiff primitives.

Weights follow the ``(out_features, in_features)`` layout; layers take
batched inputs with the batch on axis 0.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int, name: str = "") -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight in-features {w.shape[1]}")
    y = T.matmul(x, T.transpose(w))
    return y if b is None else y + b


# -- recurrent ---------------------------------------------------------------------------

def lstm_layer_params(rng, in_dim: int, hidden: int, prefix: str) -> dict:
    return {
        f"{prefix}.w_x": uniform_init(rng, (4 * hidden, in_dim), hidden, f"{prefix}.w_x"),
        f"{prefix}.w_h": uniform_init(rng, (4 * hidden, hidden), hidden, f"{prefix}.w_h"),
        f"{prefix}.b": uniform_init(rng, (4 * hidden,), hidden, f"{prefix}.b"),
    }


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor):
    """One LSTM step with gate blocks ordered input, forget, candidate, output."""
    hid = w_h.shape[1]
    z = linear(x, w_x) + linear(h, w_h) + b
    i = T.sigmoid(z[:, 0:hid])
    f = T.sigmoid(z[:, hid:2 * hid])
    g = T.tanh(z[:, 2 * hid:3 * hid])
    o = T.sigmoid(z[:, 3 * hid:4 * hid])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


def lstm_forward(seq: Sequence[Tensor], layers: Sequence[tuple[Tensor, Tensor, Tensor]]) -> list[Tensor]:
    """Stacked LSTM from a zero initial state; returns top-layer outputs per step.

    ``layers`` holds ``(w_x, w_h, b)`` per layer.
    """
    if not seq:
        return []
    width = seq[0].shape[-1]
    if any(s.shape[-1] != width for s in seq):
        raise ValueError("lstm_forward needs a uniform feature length across the sequence")
    out = list(seq)
    batch = seq[0].shape[0]
    for w_x, w_h, b in layers:
        if out[0].shape[-1] != w_x.shape[1]:
            raise ValueError(f"lstm layer expects width {w_x.shape[1]}, got {out[0].shape[-1]}")
        hid = w_h.shape[1]
        h = Tensor(np.zeros((batch, hid)))
        c = Tensor(np.zeros((batch, hid)))
        nxt = []
        for x in out:
            h, c = lstm_cell(x, h, c, w_x, w_h, b)
            nxt.append(h)
        out = nxt
    return out


# -- attention -----------------------------------------------------------------------------

def attention_mask(cond: Tensor, w_rho: Tensor, w_phi: Tensor) -> Tensor:
    """Per-element mask ``sigmoid((W_rho z)_i * (W_phi z)_i)`` from conditioning features ``z``."""
    if w_rho.shape != w_phi.shape:
        raise ValueError(f"embedding weights differ in shape: {w_rho.shape} vs {w_phi.shape}")
    return T.sigmoid(linear(cond, w_rho) * linear(cond, w_phi))


def self_attention(z: Tensor, w_rho: Tensor, w_phi: Tensor) -> tuple[Tensor, Tensor]:
    n = z.shape[-1]
    if w_rho.shape != (n, n):
        raise ValueError(f"self-attention weights must be {n}x{n}, got {w_rho.shape}")
    a = attention_mask(z, w_rho, w_phi)
    return a * z, a


def cross_attention_pair(zm: Tensor, zi: Tensor, w: dict) -> Tensor:
    """Second-stage attention for two modalities.

    ``w`` holds ``i2m_rho``/``i2m_phi`` (shape ``N_M x N_I``: conditioned on
    the inertial features, gating the radar features) and ``m2i_rho``/``m2i_phi``
    (``N_I x N_M``). Returns ``[a_m2i * zi ; a_i2m * zm]``.
    """
    nm, ni = zm.shape[-1], zi.shape[-1]
    if w["i2m_rho"].shape != (nm, ni) or w["m2i_rho"].shape != (ni, nm):
        raise ValueError("cross-attention weight shapes do not match feature lengths")
    a_i2m = attention_mask(zi, w["i2m_rho"], w["i2m_phi"])
    a_m2i = attention_mask(zm, w["m2i_rho"], w["m2i_phi"])
    return T.concat([a_m2i * zi, a_i2m * zm], axis=-1)


def cross_attention_loo(features: Sequence[tuple[str, Tensor]], w: dict) -> Tensor:
    """Leave-one-out cross attention for three or more modalities.

    For each modality ``m`` the mask is conditioned on the concatenation of
    every other modality (in declared order) through ``w[m] = (rho, phi)``
    of shape ``N_m x sum(N_others)``. Output is the gated features
    concatenated in declared order.
    """
    if len(features) < 3:
        raise ValueError("leave-one-out attention needs >= 3 modalities; use cross_attention_pair")
    gated = []
    for k, (name, z) in enumerate(features):
        others = T.concat([f for j, (_, f) in enumerate(features) if j != k], axis=-1)
        rho, phi = w[name]
        if rho.shape != (z.shape[-1], others.shape[-1]):
            raise ValueError(f"weights for {name!r} must be {(z.shape[-1], others.shape[-1])}, got {rho.shape}")
        gated.append(attention_mask(others, rho, phi) * z)
    return T.concat(gated, axis=-1)


def attention_param_count(mode: str, n_m: int, n_i: int, n_v: int) -> int:
    """Weight entries of the attention block for three feature lengths."""
    if min(n_m, n_i, n_v) <= 0:
        raise ValueError("feature lengths must be positive")
    if mode in ("single", "single-stage"):
        return 2 * (n_m + n_i + n_v) ** 2
    if mode == "mixed":
        return 2 * (n_m ** 2 + n_i ** 2 + n_v ** 2) + 4 * (n_m * n_i + n_v * n_i + n_m * n_v)
    raise ValueError(f"unknown attention mode {mode!r}")


# -- loss ---------------------------------------------------------------------------------

def pose_loss(pred: Tensor, truth, gamma: float = 0.001) -> Tensor:
    """Mean over K of ``|dt|^2 + gamma |wrap(dr)|^2`` for ``[K, 6]`` predictions."""
    truth = np.asarray(truth.data if isinstance(truth, Tensor) else truth, float).reshape(-1, 6)
    if truth.shape[0] == 0:
        raise ValueError("pose_loss needs at least one sample")
    if pred.shape != truth.shape:
        pred = T.reshape(pred, truth.shape)
    diff = pred - Tensor(truth)
    dt = diff[:, 0:3]
    dr = T.wrap_angle(diff[:, 3:6])
    per = T.tsum(T.square(dt), axis=1) + T.tsum(T.square(dr), axis=1) * gamma
    return T.mean(per)
