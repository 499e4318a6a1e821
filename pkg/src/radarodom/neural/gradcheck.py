"""Central finite-difference checks of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .layers import (cross_attention_loo, cross_attention_pair, linear, lstm_forward, pose_loss,
                     self_attention)
from .model import NetworkConfig, build_network
from .tensor import Tensor

LINEAR_TOL = 1e-6
NONLINEAR_TOL = 1e-4


@dataclass
class GradReport:
    name: str
    max_rel_error: float
    per_input: dict = field(default_factory=dict)
    tolerance: float = NONLINEAR_TOL
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / (|a| + |n|)`` over the checked entries as vectors."""
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if den < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / den)


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], name: str = "op", step: float = 1e-5,
               tolerance: float = NONLINEAR_TOL, max_entries: int | None = None, seed: int = 0,
               corrupt: float = 0.0, kink_guard: bool = True) -> GradReport:
    """Compare ``backward`` against central differences for every tensor in ``inputs``.

    ``fn`` must rebuild the scalar output from the current input data.
    ``max_entries`` limits the number of (seeded, random) entries probed
    per tensor. ``corrupt`` scales the analytic gradients, as a negative
    control. With ``kink_guard`` a probe whose +-step evaluations flip any
    LeakyReLU input sign is skipped, since central differences are invalid
    across a kink.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    base_signs = _signs(fn) if kink_guard else None
    out = fn()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    per = {}
    skipped = 0
    for k, t in enumerate(inputs):
        analytic_full = np.zeros_like(t.data) if t.grad is None else t.grad * (1.0 + corrupt)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        valid = np.ones(len(idx), bool)
        for m, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp, sp = _eval(fn, kink_guard)
            flat[i] = orig - step
            fm, sm = _eval(fn, kink_guard)
            flat[i] = orig
            numeric[m] = (fp - fm) / (2 * step)
            if kink_guard and not (_same(sp, base_signs) and _same(sm, base_signs)):
                valid[m] = False
                skipped += 1
        per[t.name or f"input{k}"] = rel_error(analytic_full.reshape(-1)[idx][valid], numeric[valid])
    return GradReport(name, max(per.values(), default=0.0), per, tolerance, skipped)


def _eval(fn, record: bool):
    if not record:
        return fn().item(), None
    T.KINK_LOG = []
    try:
        val = fn().item()
        return val, T.KINK_LOG
    finally:
        T.KINK_LOG = None


def _signs(fn):
    return _eval(fn, True)[1]


def _same(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _param(rng, *shape, name=""):
    return Tensor(rng.normal(0.0, 0.5, shape), requires_grad=True, name=name)


def _proj(out: Tensor, r: np.ndarray) -> Tensor:
    return T.tsum(out * Tensor(r))


def suite(seed: int = 0, corrupt: float = 0.0) -> list[GradReport]:
    """Seeded gradient checks over every layer type and a tiny assembled network."""
    rng = np.random.default_rng(seed)
    reports = []

    def check(fn, inputs, name, tol, **kw):
        reports.append(grad_check(fn, inputs, name, tolerance=tol, corrupt=corrupt, seed=seed, **kw))

    x = _param(rng, 3, 5, name="x")
    w = _param(rng, 4, 5, name="w")
    b = _param(rng, 4, name="b")
    r = rng.normal(size=(3, 4))
    check(lambda: _proj(linear(x, w, b), r), [x, w, b], "linear", LINEAR_TOL)

    xi = _param(rng, 2, 3, 7, 6, name="x")
    wk = _param(rng, 4, 3, 3, 3, name="w")
    bk = _param(rng, 4, name="b")
    rc = rng.normal(size=(2, 4, 4, 3))
    check(lambda: _proj(T.conv2d(xi, wk, bk, stride=2, padding=1), rc), [xi, wk, bk], "conv2d", LINEAR_TOL)

    xl = Tensor(rng.normal(size=(4, 6)), requires_grad=True, name="x")
    xl.data[np.abs(xl.data) < 0.05] += 0.1  # keep probes off the kink
    rl = rng.normal(size=(4, 6))
    check(lambda: _proj(T.leaky_relu(xl, 0.1), rl), [xl], "leaky_relu", NONLINEAR_TOL)

    xd = _param(rng, 4, 6, name="x")
    check(lambda: _proj(T.dropout(xd, 0.25, None, training=False), rl), [xd], "dropout_off", LINEAR_TOL)

    seq = [_param(rng, 2, 3, name=f"x{k}") for k in range(3)]
    layers = []
    lstm_params = []
    for k, d in enumerate((3, 4)):
        trio = (_param(rng, 16, d, name=f"l{k}.w_x"), _param(rng, 16, 4, name=f"l{k}.w_h"),
                _param(rng, 16, name=f"l{k}.b"))
        layers.append(trio)
        lstm_params.extend(trio)
    rs = rng.normal(size=(3, 2, 4))
    check(lambda: sum((_proj(h, rs[k]) for k, h in enumerate(lstm_forward(seq, layers))), Tensor(0.0)),
          [*seq, *lstm_params], "lstm", NONLINEAR_TOL)

    z = _param(rng, 2, 5, name="z")
    wr, wp = _param(rng, 5, 5, name="w_rho"), _param(rng, 5, 5, name="w_phi")
    ra = rng.normal(size=(2, 5))
    check(lambda: _proj(self_attention(z, wr, wp)[0], ra), [z, wr, wp], "self_attention", NONLINEAR_TOL)

    zm, zi = _param(rng, 2, 4, name="z_m"), _param(rng, 2, 3, name="z_i")
    wc = {"i2m_rho": _param(rng, 4, 3, name="i2m_rho"), "i2m_phi": _param(rng, 4, 3, name="i2m_phi"),
          "m2i_rho": _param(rng, 3, 4, name="m2i_rho"), "m2i_phi": _param(rng, 3, 4, name="m2i_phi")}
    rp = rng.normal(size=(2, 7))
    check(lambda: _proj(cross_attention_pair(zm, zi, wc), rp), [zm, zi, *wc.values()],
          "cross_attention_pair", NONLINEAR_TOL)

    feats = [("mm", _param(rng, 2, 3, name="z_mm")), ("imu", _param(rng, 2, 2, name="z_imu")),
             ("dense", _param(rng, 2, 3, name="z_dense"))]
    wl = {}
    total = 8
    for name, f in feats:
        n = f.shape[-1]
        wl[name] = (_param(rng, n, total - n, name=f"{name}.rho"), _param(rng, n, total - n, name=f"{name}.phi"))
    rlo = rng.normal(size=(2, 8))
    check(lambda: _proj(cross_attention_loo(feats, wl), rlo),
          [f for _, f in feats] + [t for pair in wl.values() for t in pair], "cross_attention_loo", NONLINEAR_TOL)

    pred = _param(rng, 5, 6, name="pred")
    truth = rng.normal(size=(5, 6))
    check(lambda: pose_loss(pred, truth, 0.001), [pred], "pose_loss", NONLINEAR_TOL)

    reports.append(network_check(seed, corrupt))
    return reports


def tiny_config(**kw) -> NetworkConfig:
    base = dict(rows=4, cols=4, conv_channels=(2,) * 9, n_m=4, n_i=3, n_v=4, imu_hidden=3, imu_len=3,
                lstm_hidden=4, fc_sizes=(5, 4, 6), profile="tiny", use_dense=True)
    base.update(kw)
    return NetworkConfig(**base)


def network_check(seed: int = 0, corrupt: float = 0.0, cfg: NetworkConfig | None = None,
                  max_entries: int = 6) -> GradReport:
    """Whole-network check on a 4x4-image configuration with all three modalities."""
    cfg = cfg or tiny_config()
    rng = np.random.default_rng(seed + 1)
    net = build_network(cfg, seed).eval()
    # Re-draw the weights so the signal survives nine narrow conv layers. Once the
    # image is 1x1 only the centre tap is live, so the fan is the input channel
    # count; at the default init early-layer gradients sink to the rounding floor
    # of central differences.
    # Positive biases keep most units on the unit-slope side of the LeakyReLU.
    prng = np.random.default_rng(seed + 2)
    for p in net.params.values():
        fan = p.shape[1] if p.ndim > 1 else p.shape[0]
        p.data[...] = prng.normal(0.0, 1.5 / np.sqrt(fan), p.shape) + (0.5 if p.ndim == 1 else 0.0)
    bsz, steps = 2, 3
    mm = rng.uniform(0, 1, (bsz, steps, 2, cfg.rows, cfg.cols))
    dense = rng.uniform(0, 1, (bsz, steps, 2, cfg.rows, cfg.cols))
    imu = rng.normal(size=(bsz, steps, cfg.imu_len, 6))
    target = rng.normal(0, 0.3, (bsz * steps, 6))
    params = list(net.params.values())
    return grad_check(lambda: pose_loss(net.forward(mm, imu, dense), target, cfg.gamma), params,
                      "network", tolerance=NONLINEAR_TOL, max_entries=max_entries, seed=seed, corrupt=corrupt)
