"""RMSProp, dataset preparation, the training loop and sequence inference."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .._rng import stream
from ..geometry import RelativePose, relative_between
from ..sensing import encode_panoramic, imu_array
from .layers import pose_loss
from .model import EgoNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    decay: float = 0.75
    decay_every: int = 25
    epochs: int = 200
    subsequence_length: int = 16
    rho: float = 0.9
    eps: float = 1e-8
    subsample: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.subsequence_length < 2:
            raise ValueError("subsequence_length must be >= 2")
        if self.epochs < 0 or self.decay_every <= 0 or self.subsample < 1:
            raise ValueError("epochs, decay_every and subsample must be non-negative / positive")

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    @classmethod
    def toy(cls, **kw) -> "TrainConfig":
        base = dict(lr=1e-3, epochs=100)
        base.update(kw)
        return cls(**base)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        return asdict(self)


# -- optimiser ---------------------------------------------------------------------------

def rmsprop_step(params: dict, grads: dict, state: dict, lr: float, decay_rate: float = 0.9,
                 eps: float = 1e-8) -> None:
    """In-place RMSProp: ``acc = rho*acc + (1-rho)*g^2``; ``p -= lr*g/sqrt(acc + eps)``.

    ``params`` maps names to arrays (or Tensors); ``state`` holds the
    accumulators and is filled lazily.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        data = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        g = np.asarray(g, float)
        if g.shape != data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {data.shape} for {name}")
        acc = state.get(name)
        if acc is None:
            acc = state[name] = np.zeros_like(data)
        acc *= decay_rate
        acc += (1.0 - decay_rate) * g * g
        data -= lr * g / np.sqrt(acc + eps)


# -- data ---------------------------------------------------------------------------------

@dataclass
class PreparedSequence:
    mm: np.ndarray            # [P, 2, H, W], raw 0..255 values
    imu: np.ndarray           # [P, L, 6]
    targets: np.ndarray       # [P, 6]
    timestamps: np.ndarray    # [P + 1]
    dense: np.ndarray | None = None
    start_pose: object = None

    @property
    def pairs(self) -> int:
        return len(self.targets)


def fixed_window(window: np.ndarray, length: int) -> np.ndarray:
    """Keep the last ``length`` IMU rows, zero-padding at the front."""
    out = np.zeros((length, 6))
    w = window[-length:]
    if len(w):
        out[length - len(w):] = w
    return out


def prepare_sequence(seq, cfg, subsample: int = 1) -> PreparedSequence:
    """Panoramas, IMU windows and relative-pose targets for consecutive kept frames.

    Sub-sampling keeps every ``subsample``-th frame; IMU windows of the
    skipped frames are merged into the following kept pair.
    """
    frames = seq.frames
    keep = list(range(0, len(frames), subsample))
    if len(keep) < 2:
        raise ValueError("a sequence needs at least two (kept) frames")
    spec = cfg.panorama()
    pano = [encode_panoramic(frames[k].cloud, spec).values for k in keep]
    mm = np.stack([np.stack([a, b]) for a, b in zip(pano, pano[1:])])
    dense = None
    if cfg.use_dense:
        dp = [encode_panoramic(frames[k].dense, spec).values for k in keep]
        dense = np.stack([np.stack([a, b]) for a, b in zip(dp, dp[1:])])
    imu = []
    for a, b in zip(keep, keep[1:]):
        rows = [imu_array(frames[j].imu_window) for j in range(a + 1, b + 1)]
        imu.append(fixed_window(np.concatenate(rows) if rows else np.zeros((0, 6)), cfg.imu_len))
    gts = [frames[k].ground_truth for k in keep]
    if any(g is None for g in gts):
        targets = np.zeros((len(keep) - 1, 6))
    else:
        targets = np.stack([relative_between(a, b).as_vector() for a, b in zip(gts, gts[1:])])
    ts = np.array([frames[k].cloud.timestamp for k in keep])
    return PreparedSequence(mm, np.stack(imu), targets, ts, dense, gts[0])


def dataset_means(data: Sequence[PreparedSequence]) -> dict:
    """One global scalar mean per modality over every input in the dataset."""
    out = {"mm_mean": float(np.mean(np.concatenate([d.mm.ravel() for d in data]))),
           "imu_mean": float(np.mean(np.concatenate([d.imu.ravel() for d in data])))}
    if data[0].dense is not None:
        out["dense_mean"] = float(np.mean(np.concatenate([d.dense.ravel() for d in data])))
    return out


def _chunks(n_pairs: int, length: int, rng: np.random.Generator) -> list[int]:
    offset = int(rng.integers(0, min(length, n_pairs - length + 1)))
    return list(range(offset, n_pairs - length + 1, length))


def _batch(d: PreparedSequence, start: int, length: int):
    sl = slice(start, start + length)
    dense = None if d.dense is None else d.dense[None, sl]
    return d.mm[None, sl], d.imu[None, sl], dense, d.targets[sl]


def train(model: EgoNet, dataset, tc: TrainConfig, opt_state: dict | None = None,
          start_epoch: int = 0, callback=None) -> list[tuple[int, float, float]]:
    """Fit ``model`` on sequences; returns ``[(epoch, mean_loss, lr)]`` per epoch.

    ``dataset`` is a list of simulated sequences or :class:`PreparedSequence`.
    Each epoch cuts every sequence into consecutive subsequences (random
    offset), shuffles them and takes one RMSProp step per subsequence.
    Pass ``opt_state``/``start_epoch`` from a checkpoint to resume.
    """
    cfg = model.config
    data = [d if isinstance(d, PreparedSequence) else prepare_sequence(d, cfg, tc.subsample) for d in dataset]
    if not data:
        raise ValueError("training needs at least one sequence")
    n = tc.subsequence_length
    short = [d.pairs for d in data if d.pairs < n]
    if short:
        raise ValueError(f"dataset shorter than subsequence length {n}: {short} pairs")
    if not model.buffers.get("fitted"):
        model.buffers.update(dataset_means(data))
        model.buffers["fitted"] = 1.0
    state = {} if opt_state is None else opt_state
    history = []
    for epoch in range(start_epoch, start_epoch + tc.epochs):
        rng = stream(tc.seed, "shuffle", epoch)
        items = [(i, s) for i, d in enumerate(data) for s in _chunks(d.pairs, n, rng)]
        order = rng.permutation(len(items))
        lr = tc.lr_at(epoch)
        # per-epoch dropout stream so a resumed run replays the same masks
        model._dropout_rng = stream(tc.seed, "dropout", epoch)
        model.train()
        losses = []
        for j in order:
            i, s = items[j]
            mm, imu, dense, y = _batch(data[i], s, n)
            model.zero_grad()
            pred = model.forward(mm, imu, dense)
            loss = pose_loss(pred, y, cfg.gamma)
            loss.backward()
            grads = {k: p.grad for k, p in model.params.items()}
            rmsprop_step(model.params, grads, state, lr, tc.rho, tc.eps)
            losses.append(loss.item())
        model.eval()
        history.append((epoch, float(np.mean(losses)), lr))
        if callback is not None:
            callback(epoch, history[-1], state)
    return history


def evaluate_loss(model: EgoNet, dataset, tc: TrainConfig) -> float:
    """Mean eval-mode loss over the same subsequence grid as training (zero offset)."""
    cfg = model.config
    data = [d if isinstance(d, PreparedSequence) else prepare_sequence(d, cfg, tc.subsample) for d in dataset]
    model.eval()
    losses = []
    n = tc.subsequence_length
    for d in data:
        for s in range(0, d.pairs - n + 1, n):
            mm, imu, dense, y = _batch(d, s, n)
            losses.append(pose_loss(model.forward(mm, imu, dense), y, cfg.gamma).item())
    return float(np.mean(losses))


def infer_sequence(model: EgoNet, seq, subsample: int = 1, chunk: int = 16) -> list[RelativePose]:
    """One relative pose per consecutive kept frame pair, dropout off.

    The recurrent state restarts every ``chunk`` pairs, matching the
    subsequence length seen in training.
    """
    d = seq if isinstance(seq, PreparedSequence) else prepare_sequence(seq, model.config, subsample)
    was = model.training
    model.eval()
    out = []
    try:
        for s in range(0, d.pairs, chunk):
            mm, imu, dense, _ = _batch(d, s, chunk)
            pred = model.forward(mm, imu, dense).data.reshape(-1, 6)
            out.extend(RelativePose.from_vector(y) for y in pred)
    finally:
        model.train(was)
    return out
