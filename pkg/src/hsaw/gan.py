"""Cross-modal conditional GAN pair (frame -> flow and flow -> frame).

Each direction has a U-Net-lite generator and a PatchGAN-lite discriminator.
The discriminator's sigmoid score map is the representation compared between
an observation and its cross-modal prediction.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from hsaw.autodiff import (
    AdamState,
    adam_step,
    bce_with_logits,
    concat_channels,
    instance_norm,
    l1_loss,
    leaky_relu,
    no_grad,
    relu,
    sigmoid,
    tanh,
)
from hsaw.autodiff.nn import Conv2d, Deconv2d, Module
from hsaw.autodiff.tensor import Tensor, add, mul
from hsaw.errors import ShapeError, TrainingError
from hsaw.rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

FRAME_CHANNELS = 1
FLOW_CHANNELS = 2
DIRECTIONS = ("fo", "of")


@dataclass
class GanConfig:
    lam: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 4
    epochs: int = 30
    seed: int = 0
    max_speed: float = 4.0
    min_samples: int = 16
    score_batch: int = 32


class GeneratorNet(Module):
    """U-Net-lite: three stride-2 encoder stages, three decoder stages with skips."""

    def __init__(self, cin: int, cout: int, seed: int, width: int = 16):
        super().__init__()
        c1, c2, c3 = width, 2 * width, 4 * width
        self.cin, self.cout = cin, cout
        self.enc1 = self.add("enc1", Conv2d("enc1", cin, c1, 4, 2, 1, seed))
        self.enc2 = self.add("enc2", Conv2d("enc2", c1, c2, 4, 2, 1, seed))
        self.enc3 = self.add("enc3", Conv2d("enc3", c2, c3, 4, 2, 1, seed))
        self.dec1 = self.add("dec1", Deconv2d("dec1", c3, c2, 4, 2, 1, seed))
        self.dec2 = self.add("dec2", Deconv2d("dec2", 2 * c2, c1, 4, 2, 1, seed))
        self.dec3 = self.add("dec3", Deconv2d("dec3", 2 * c1, cout, 4, 2, 1, seed))
        self.assign_names()

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeError(f"generator expects N x {self.cin} x H x W input, got {x.shape}")
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ShapeError(f"generator input H, W must be multiples of 8, got {x.shape[2:]}")
        e1 = leaky_relu(self.enc1(x))
        e2 = leaky_relu(instance_norm(self.enc2(e1)))
        e3 = leaky_relu(instance_norm(self.enc3(e2)))
        d1 = relu(instance_norm(self.dec1(e3)))
        d2 = relu(instance_norm(self.dec2(concat_channels(d1, e2))))
        return tanh(self.dec3(concat_channels(d2, e1)))


class DiscriminatorNet(Module):
    """PatchGAN-lite over the channel-concatenated (condition, target) pair."""

    def __init__(self, cond_ch: int, target_ch: int, seed: int, width: int = 16):
        super().__init__()
        self.cond_ch, self.target_ch = cond_ch, target_ch
        c1, c2, c3 = width, 2 * width, 4 * width
        self.c1 = self.add("c1", Conv2d("c1", cond_ch + target_ch, c1, 4, 2, 1, seed))
        self.c2 = self.add("c2", Conv2d("c2", c1, c2, 4, 2, 1, seed))
        self.c3 = self.add("c3", Conv2d("c3", c2, c3, 4, 2, 1, seed))
        self.head = self.add("head", Conv2d("head", c3, 1, 1, 1, 0, seed))
        self.assign_names()

    def logits(self, cond: Tensor, target: Tensor) -> Tensor:
        if cond.ndim != 4 or cond.shape[1] != self.cond_ch:
            raise ShapeError(f"discriminator condition must be N x {self.cond_ch} x H x W, got {cond.shape}")
        if target.ndim != 4 or target.shape[1] != self.target_ch:
            raise ShapeError(f"discriminator target must be N x {self.target_ch} x H x W, got {target.shape}")
        h = leaky_relu(self.c1(concat_channels(cond, target)))
        # no normalisation here: per-sample statistics carry the ego-motion signal
        h = leaky_relu(self.c2(h))
        h = leaky_relu(self.c3(h))
        return self.head(h)

    __call__ = logits


@dataclass
class Direction:
    name: str  # "fo" (frame -> flow) or "of" (flow -> frame)
    gen: GeneratorNet
    disc: DiscriminatorNet


def build_direction(name: str, seed: int) -> Direction:
    if name == "fo":
        cin, cout = FRAME_CHANNELS, FLOW_CHANNELS
    elif name == "of":
        cin, cout = FLOW_CHANNELS, FRAME_CHANNELS
    else:
        raise ValueError(f"unknown direction {name!r}")
    return Direction(
        name,
        GeneratorNet(cin, cout, derive_seed(seed, name, "G")),
        DiscriminatorNet(cin, cout, derive_seed(seed, name, "D")),
    )


@dataclass
class EpochLog:
    direction: str
    epoch: int
    d_loss: float
    g_loss: float
    l1: float


@dataclass
class CrossModalPair:
    fo: Direction
    of: Direction
    config: GanConfig
    history: list = field(default_factory=list)
    subset_fingerprint: str = ""
    epochs_trained: int = 0

    def direction(self, name: str) -> Direction:
        return self.fo if name == "fo" else self.of

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for d in (self.fo, self.of):
            for k, v in d.gen.state_dict().items():
                out[f"{d.name}.G.{k}"] = v
            for k, v in d.disc.state_dict().items():
                out[f"{d.name}.D.{k}"] = v
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for d in (self.fo, self.of):
            d.gen.load_state_dict({k[len(d.name) + 3:]: v for k, v in state.items() if k.startswith(f"{d.name}.G.")})
            d.disc.load_state_dict({k[len(d.name) + 3:]: v for k, v in state.items() if k.startswith(f"{d.name}.D.")})


def new_pair(config: GanConfig) -> CrossModalPair:
    """An untrained pair with seeded weights."""
    return CrossModalPair(build_direction("fo", config.seed), build_direction("of", config.seed), config)


def fingerprint(indices) -> str:
    arr = np.asarray(indices, dtype="<i8")
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


# data plumbing ------------------------------------------------------------------

def normalize_flow(flows: np.ndarray, max_speed: float) -> np.ndarray:
    return np.clip(flows / max_speed, -1.0, 1.0).astype(np.float32)


def network_inputs(frames: np.ndarray, flows: np.ndarray, max_speed: float) -> tuple[np.ndarray, np.ndarray]:
    """NCHW frames in [-1, 1] and flows scaled to [-1, 1]."""
    frames = np.asarray(frames, dtype=np.float32)
    flows = np.asarray(flows, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[1] != FRAME_CHANNELS:
        raise ShapeError(f"frames must be N x 1 x H x W, got {frames.shape}")
    if flows.ndim != 4 or flows.shape[1] != FLOW_CHANNELS:
        raise ShapeError(f"flows must be N x 2 x H x W, got {flows.shape}")
    if frames.shape[0] != flows.shape[0] or frames.shape[2:] != flows.shape[2:]:
        raise ShapeError(f"frames {frames.shape} and flows {flows.shape} disagree on N, H or W")
    return frames, normalize_flow(flows, max_speed)


def _cond_target(name: str, F: np.ndarray, O: np.ndarray):
    return (F, O) if name == "fo" else (O, F)


# training ------------------------------------------------------------------------

def _train_direction(d: Direction, cond: np.ndarray, target: np.ndarray, config: GanConfig,
                     history: list) -> None:
    opt_g = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_d = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    g_params, d_params = d.gen.parameters(), d.disc.parameters()
    rng = SplitMix64(derive_seed(config.seed, d.name, "batches"))
    n = cond.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            c, t = Tensor(cond[idx]), Tensor(target[idx])

            # discriminator: real pair -> 1, generated pair -> 0
            with no_grad():
                fake = d.gen(c)
            d_loss = mul(add(bce_with_logits(d.disc(c, t), 1.0),
                             bce_with_logits(d.disc(c, fake), 0.0)), 0.5)
            d_loss.backward()
            adam_step(d_params, opt_d)

            # generator: fool D plus lambda * L1
            fake = d.gen(c)
            adv = bce_with_logits(d.disc(c, fake), 1.0)
            rec = l1_loss(fake, t)
            g_loss = add(adv, mul(rec, config.lam))
            g_loss.backward()
            adam_step(g_params, opt_g)
            d.disc.zero_grad()

            l1v = rec.item()
            if not math.isfinite(l1v) or not math.isfinite(g_loss.item()):
                raise TrainingError(
                    f"{d.name}: generator loss became non-finite at epoch {epoch} (l1={l1v})"
                )
            sums += (d_loss.item(), g_loss.item(), l1v)
            batches += 1
        mean = sums / max(batches, 1)
        history.append(EpochLog(d.name, epoch, *map(float, mean)))
        log.debug("%s epoch %d d=%.4f g=%.4f l1=%.4f", d.name, epoch, *mean)


def train_pair(frames: np.ndarray, flows: np.ndarray, config: GanConfig,
               subset_fingerprint: str = "") -> CrossModalPair:
    """Train both directions on the given couples (dataset units, NCHW)."""
    F, O = network_inputs(frames, flows, config.max_speed)
    if F.shape[0] < config.min_samples:
        raise TrainingError(
            f"train_pair needs at least {config.min_samples} couples, got {F.shape[0]}"
        )
    pair = new_pair(config)
    pair.subset_fingerprint = subset_fingerprint
    for name in DIRECTIONS:
        cond, target = _cond_target(name, F, O)
        _train_direction(pair.direction(name), cond, target, config, pair.history)
    pair.epochs_trained = config.epochs
    return pair


def history_csv(pair: CrossModalPair) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "epoch", "d_loss", "g_loss", "l1"])
    for e in pair.history:
        w.writerow([e.direction, e.epoch, f"{e.d_loss:.6f}", f"{e.g_loss:.6f}", f"{e.l1:.6f}"])
    return buf.getvalue()


# inference -----------------------------------------------------------------------

@dataclass
class ScoreMap:
    values: np.ndarray  # h x w

    @property
    def mean_score(self) -> float:
        return float(self.values.mean(dtype=np.float64))


@dataclass
class DistanceMap:
    values: np.ndarray  # h x w, in [0, 1]

    @property
    def mean_score(self) -> float:
        return float(self.values.mean(dtype=np.float64))


def generate(d: Direction, cond: np.ndarray, batch: int = 32) -> np.ndarray:
    out = []
    with no_grad():
        for s in range(0, cond.shape[0], batch):
            out.append(d.gen(Tensor(cond[s:s + batch])).data)
    return np.concatenate(out, axis=0)


def score_maps(disc: DiscriminatorNet, cond: np.ndarray, target: np.ndarray, batch: int = 32) -> np.ndarray:
    """Sigmoid score maps, (N, h, w)."""
    out = []
    with no_grad():
        for s in range(0, cond.shape[0], batch):
            out.append(sigmoid(disc(Tensor(cond[s:s + batch]), Tensor(target[s:s + batch]))).data[:, 0])
    return np.concatenate(out, axis=0)


def score_map(disc: DiscriminatorNet, cond: np.ndarray, target: np.ndarray) -> ScoreMap:
    """Score map for one (condition, target) pair given as C x H x W arrays."""
    cond = np.asarray(cond, dtype=np.float32)
    target = np.asarray(target, dtype=np.float32)
    if cond.ndim != 3 or target.ndim != 3:
        raise ShapeError(f"score_map expects C x H x W arrays, got {cond.shape} and {target.shape}")
    return ScoreMap(score_maps(disc, cond[None], target[None])[0])


def fuse_distance(s_obs: dict, s_pred: dict) -> np.ndarray:
    """Average over directions of the elementwise |S_obs - S_pred|."""
    per_dir = [np.abs(s_obs[k] - s_pred[k]) for k in DIRECTIONS]
    return (0.5 * (per_dir[0] + per_dir[1])).astype(np.float32)


def distance_maps(pair: CrossModalPair, frames: np.ndarray, flows: np.ndarray) -> np.ndarray:
    """Fused distance maps (N, h, w) for couples in dataset units (NCHW)."""
    F, O = network_inputs(frames, flows, pair.config.max_speed)
    bs = pair.config.score_batch
    s_obs, s_pred = {}, {}
    for name in DIRECTIONS:
        d = pair.direction(name)
        cond, target = _cond_target(name, F, O)
        pred = generate(d, cond, bs)
        s_obs[name] = score_maps(d.disc, cond, target, bs)
        s_pred[name] = score_maps(d.disc, cond, pred, bs)
    return fuse_distance(s_obs, s_pred)


def _couple_arrays(couple) -> tuple[np.ndarray, np.ndarray]:
    frame = np.asarray(couple.frame, dtype=np.float32)
    flow = np.asarray(couple.flow, dtype=np.float32)
    if frame.ndim != 3 or frame.shape[2] != FRAME_CHANNELS:
        raise ShapeError(f"couple frame must be H x W x 1, got {frame.shape}")
    if flow.ndim != 3 or flow.shape[2] != FLOW_CHANNELS:
        raise ShapeError(f"couple flow must be H x W x 2, got {flow.shape}")
    return frame.transpose(2, 0, 1)[None], flow.transpose(2, 0, 1)[None]


def distance_map(pair: CrossModalPair, couple) -> DistanceMap:
    frame, flow = _couple_arrays(couple)
    return DistanceMap(distance_maps(pair, frame, flow)[0])


def predict_couple(pair: CrossModalPair, couple) -> tuple[np.ndarray, np.ndarray]:
    """(p_O, p_F): predicted flow H x W x 2 in pixels and frame H x W x 1."""
    frame, flow = _couple_arrays(couple)
    F, O = network_inputs(frame, flow, pair.config.max_speed)
    p_o = generate(pair.fo, F)[0] * pair.config.max_speed
    p_f = generate(pair.of, O)[0]
    return p_o.transpose(1, 2, 0), p_f.transpose(1, 2, 0)
