"""Network assembly: per-sensor subnets, attention fusion, recurrent core, pose head."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .._rng import stream
from ..sensing import PanoramaSpec
from . import tensor as T
from .layers import (cross_attention_loo, cross_attention_pair, linear,
                     lstm_forward, lstm_layer_params, self_attention, uniform_init)
from .tensor import Tensor

FUSION_MODES = ("mixed", "single", "none", "self", "cross")


@dataclass(frozen=True)
class NetworkConfig:
    rows: int = 32
    cols: int = 128
    conv_channels: tuple = (16, 32, 32, 64, 64, 128, 128, 128, 128)
    conv_kernels: tuple = (7, 7, 5, 5, 3, 3, 3, 3, 3)
    conv_strides: tuple = (2, 1, 2, 1, 2, 1, 2, 1, 2)
    n_m: int = 256
    n_i: int = 64
    n_v: int = 256
    imu_hidden: int = 64
    imu_len: int = 5
    lstm_hidden: int = 512
    lstm_layers: int = 2
    fc_sizes: tuple = (128, 64, 6)
    dropout_rate: float = 0.25
    activation: str = "sigmoid"
    gamma: float = 0.001
    leaky_slope: float = 0.1
    fusion: str = "mixed"
    use_dense: bool = False
    h_fov_deg: float = 120.0
    v_fov_deg: float = 60.0
    max_range: float = 10.0
    profile: str = "paper"

    def __post_init__(self):
        sizes = (self.rows, self.cols, self.n_m, self.n_i, self.n_v, self.imu_hidden,
                 self.imu_len, self.lstm_hidden, self.lstm_layers, *self.conv_channels, *self.fc_sizes)
        if min(sizes) <= 0:
            raise ValueError("network sizes must be positive")
        if not len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_strides):
            raise ValueError("conv channel, kernel and stride plans differ in length")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.fc_sizes[-1] != 6:
            raise ValueError("the last FC layer must emit the 6-DoF pose")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.activation != "sigmoid":
            raise ValueError("only the sigmoid attention activation is implemented")

    @classmethod
    def paper(cls, **kw) -> "NetworkConfig":
        return cls(**kw)

    @classmethod
    def toy(cls, **kw) -> "NetworkConfig":
        base = dict(rows=16, cols=64, conv_channels=(4, 8, 8, 8, 8, 16, 16, 16, 16),
                    n_m=64, n_i=32, n_v=64, imu_hidden=16, lstm_hidden=64, profile="toy")
        base.update(kw)
        return cls(**base)

    @classmethod
    def profile_named(cls, name: str, **kw) -> "NetworkConfig":
        if name == "toy":
            return cls.toy(**kw)
        if name == "paper":
            return cls.paper(**kw)
        raise ValueError(f"unknown network profile {name!r}; expected toy or paper")

    def panorama(self) -> PanoramaSpec:
        return PanoramaSpec.from_fov(math.radians(self.h_fov_deg), math.radians(self.v_fov_deg),
                                     self.rows, self.cols, self.max_range)

    def conv_output_shape(self) -> tuple[int, int, int]:
        h, w = self.rows, self.cols
        for k, s in zip(self.conv_kernels, self.conv_strides):
            h, w = T.conv_out_size(h, k, s, k // 2), T.conv_out_size(w, k, s, k // 2)
        return self.conv_channels[-1], h, w

    def modalities(self) -> list[tuple[str, int]]:
        mods = [("mm", self.n_m), ("imu", self.n_i)]
        if self.use_dense:
            mods.append(("dense", self.n_v))
        return mods

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        fields = cls.__dataclass_fields__
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k in fields}
        return cls(**kw)


def expected_param_count(cfg: NetworkConfig) -> int:
    """Parameter total computed from the configuration alone."""
    def conv_stack():
        n, cin = 0, 2
        for c, k in zip(cfg.conv_channels, cfg.conv_kernels):
            n += c * cin * k * k + c
            cin = c
        return n

    def lstm(d, h):
        return 4 * h * (d + h) + 4 * h

    c, h, w = cfg.conv_output_shape()
    total = conv_stack() + c * h * w * cfg.n_m + cfg.n_m
    total += lstm(6, cfg.imu_hidden) + cfg.imu_hidden * cfg.n_i + cfg.n_i
    if cfg.use_dense:
        total += conv_stack() + c * h * w * cfg.n_v + cfg.n_v
    sizes = [n for _, n in cfg.modalities()]
    fused = sum(sizes)
    if cfg.fusion in ("mixed", "self"):
        total += sum(2 * n * n for n in sizes)
    if cfg.fusion in ("mixed", "cross"):
        total += sum(2 * n * (fused - n) for n in sizes)
    if cfg.fusion == "single":
        total += 2 * fused * fused
    d = fused
    for _ in range(cfg.lstm_layers):
        total += lstm(d, cfg.lstm_hidden)
        d = cfg.lstm_hidden
    for out in cfg.fc_sizes:
        total += out * d + out
        d = out
    return total


class EgoNet:
    """Multi-sensor egomotion regressor.

    Inputs per batch: ``mm`` ``[B, T, 2, H, W]`` stacked radar panoramas,
    ``imu`` ``[B, T, L, 6]`` inter-frame IMU windows and, when configured,
    ``dense`` panoramas shaped like ``mm``. Output: ``[B, T, 6]``.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.training = False
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.buffers = {"mm_mean": 0.0, "imu_mean": 0.0, "dense_mean": 0.0, "fitted": 0.0}
        self._dropout_rng = stream(seed, "dropout")
        self._build(stream(seed, "init"))
        self.last_masks: dict = {}

    # -- construction -------------------------------------------------------------
    def _add(self, name, tensor):
        tensor.name = name
        self.params[name] = tensor

    def _conv_subnet(self, rng, prefix, n_out):
        cfg = self.config
        cin = 2
        for k, (c, ks) in enumerate(zip(cfg.conv_channels, cfg.conv_kernels)):
            fan = cin * ks * ks
            self._add(f"{prefix}.conv{k}.w", uniform_init(rng, (c, cin, ks, ks), fan))
            self._add(f"{prefix}.conv{k}.b", uniform_init(rng, (c,), fan))
            cin = c
        flat = int(np.prod(cfg.conv_output_shape()))
        self._add(f"{prefix}.fc.w", uniform_init(rng, (n_out, flat), flat))
        self._add(f"{prefix}.fc.b", uniform_init(rng, (n_out,), flat))

    def _build(self, rng):
        cfg = self.config
        self._conv_subnet(rng, "mm", cfg.n_m)
        for k, v in lstm_layer_params(rng, 6, cfg.imu_hidden, "imu.lstm").items():
            self._add(k, v)
        self._add("imu.fc.w", uniform_init(rng, (cfg.n_i, cfg.imu_hidden), cfg.imu_hidden))
        self._add("imu.fc.b", uniform_init(rng, (cfg.n_i,), cfg.imu_hidden))
        if cfg.use_dense:
            self._conv_subnet(rng, "dense", cfg.n_v)

        mods = cfg.modalities()
        fused = sum(n for _, n in mods)
        if cfg.fusion in ("mixed", "self"):
            for name, n in mods:
                for role in ("rho", "phi"):
                    self._add(f"att.self.{name}.{role}", uniform_init(rng, (n, n), n))
        if cfg.fusion in ("mixed", "cross"):
            for name, n in mods:
                others = fused - n
                for role in ("rho", "phi"):
                    self._add(f"att.cross.{name}.{role}", uniform_init(rng, (n, others), others))
        if cfg.fusion == "single":
            for role in ("rho", "phi"):
                self._add(f"att.single.{role}", uniform_init(rng, (fused, fused), fused))

        d = fused
        for layer in range(cfg.lstm_layers):
            for k, v in lstm_layer_params(rng, d, cfg.lstm_hidden, f"rnn.l{layer}").items():
                self._add(k, v)
            d = cfg.lstm_hidden
        for k, out in enumerate(cfg.fc_sizes):
            self._add(f"head.fc{k}.w", uniform_init(rng, (out, d), d))
            self._add(f"head.fc{k}.b", uniform_init(rng, (out,), d))
            d = out

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def attention_param_count(self) -> int:
        return int(sum(p.size for k, p in self.params.items() if k.startswith("att.")))

    def train(self, mode: bool = True) -> "EgoNet":
        self.training = mode
        return self

    def eval(self) -> "EgoNet":
        return self.train(False)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # -- forward --------------------------------------------------------------------
    def _conv_features(self, x: Tensor, prefix: str) -> Tensor:
        cfg = self.config
        p = self.params
        for k, (ks, s) in enumerate(zip(cfg.conv_kernels, cfg.conv_strides)):
            x = T.conv2d(x, p[f"{prefix}.conv{k}.w"], p[f"{prefix}.conv{k}.b"], stride=s, padding=ks // 2)
            x = T.leaky_relu(x, cfg.leaky_slope)
        x = T.reshape(x, (x.shape[0], -1))
        return linear(x, p[f"{prefix}.fc.w"], p[f"{prefix}.fc.b"])

    def _imu_features(self, imu: Tensor) -> Tensor:
        p = self.params
        steps = [imu[:, k, :] for k in range(imu.shape[1])]
        h = lstm_forward(steps, [(p["imu.lstm.w_x"], p["imu.lstm.w_h"], p["imu.lstm.b"])])[-1]
        return linear(h, p["imu.fc.w"], p["imu.fc.b"])

    def fuse(self, feats: list[tuple[str, Tensor]]) -> Tensor:
        cfg = self.config
        p = self.params
        masks = {}
        if cfg.fusion == "none":
            return T.concat([z for _, z in feats], axis=-1)
        if cfg.fusion == "single":
            z = T.concat([z for _, z in feats], axis=-1)
            out, a = self_attention(z, p["att.single.rho"], p["att.single.phi"])
            self.last_masks = {"single": a.data}
            return out
        if cfg.fusion in ("mixed", "self"):
            attended = []
            for name, z in feats:
                zt, a = self_attention(z, p[f"att.self.{name}.rho"], p[f"att.self.{name}.phi"])
                masks[f"self.{name}"] = a.data
                attended.append((name, zt))
            feats = attended
        if cfg.fusion == "self":
            self.last_masks = masks
            return T.concat([z for _, z in feats], axis=-1)
        if len(feats) == 2:
            (nm, zm), (ni, zi) = feats
            w = {"i2m_rho": p[f"att.cross.{nm}.rho"], "i2m_phi": p[f"att.cross.{nm}.phi"],
                 "m2i_rho": p[f"att.cross.{ni}.rho"], "m2i_phi": p[f"att.cross.{ni}.phi"]}
            out = cross_attention_pair(zm, zi, w)
        else:
            w = {name: (p[f"att.cross.{name}.rho"], p[f"att.cross.{name}.phi"]) for name, _ in feats}
            out = cross_attention_loo(feats, w)
        self.last_masks = masks
        return out

    def forward(self, mm, imu, dense=None) -> Tensor:
        cfg = self.config
        mm = np.asarray(mm.data if isinstance(mm, Tensor) else mm, float)
        imu = np.asarray(imu.data if isinstance(imu, Tensor) else imu, float)
        if mm.ndim != 5 or mm.shape[2:] != (2, cfg.rows, cfg.cols):
            raise ValueError(f"mm input must be [B, T, 2, {cfg.rows}, {cfg.cols}], got {mm.shape}")
        b, t = mm.shape[:2]
        if imu.shape != (b, t, cfg.imu_len, 6):
            raise ValueError(f"imu input must be [{b}, {t}, {cfg.imu_len}, 6], got {imu.shape}")
        if cfg.use_dense and dense is None:
            raise ValueError("network configured with the dense modality but none was given")

        n = b * t
        feats = [("mm", self._conv_features(
            Tensor(mm.reshape(n, 2, cfg.rows, cfg.cols) - self.buffers["mm_mean"]), "mm"))]
        feats.append(("imu", self._imu_features(Tensor(imu.reshape(n, cfg.imu_len, 6) - self.buffers["imu_mean"]))))
        if cfg.use_dense:
            dense = np.asarray(dense, float)
            feats.append(("dense", self._conv_features(
                Tensor(dense.reshape(n, 2, cfg.rows, cfg.cols) - self.buffers["dense_mean"]), "dense")))

        fused = T.reshape(self.fuse(feats), (b, t, -1))
        p = self.params
        layers = [(p[f"rnn.l{k}.w_x"], p[f"rnn.l{k}.w_h"], p[f"rnn.l{k}.b"]) for k in range(cfg.lstm_layers)]
        hs = lstm_forward([fused[:, k, :] for k in range(t)], layers)
        x = T.reshape(T.stack(hs, axis=1), (n, -1))
        last = len(cfg.fc_sizes) - 1
        for k in range(len(cfg.fc_sizes)):
            x = linear(x, p[f"head.fc{k}.w"], p[f"head.fc{k}.b"])
            if k < last:
                x = T.leaky_relu(x, cfg.leaky_slope)
                x = T.dropout(x, cfg.dropout_rate, self._dropout_rng, self.training)
        return T.reshape(x, (b, t, 6))

    __call__ = forward


def build_network(config: NetworkConfig, seed: int = 0) -> EgoNet:
    return EgoNet(config, seed)
