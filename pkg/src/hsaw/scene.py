"""Synthetic first-person corridor patrol with exact optical flow.

The world is a box tunnel (floor, ceiling, two textured walls) made of
straight segments and constant-radius right-hand arcs. Frames are rendered by
casting one ray per pixel through a cylindrical camera: the column encodes
azimuth (``u = f * phi``) and the row encodes ``Y / range``. Under that model a
pure yaw is an exact uniform horizontal image shift, and the flow of every
pixel is obtained by re-projecting its 3-D hit point into the next pose.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import numpy as np

from hsaw.errors import DomainError
from hsaw.rng import SplitMix64, derive_seed

# world constants (metres / frames)
HALF_WIDTH = 1.3
CAMERA_HEIGHT = 1.2
CEILING_HEIGHT = 1.2
LANE_OFFSET = 0.7
LANE_WIDTH = 0.06
ARC_RADIUS = 1.6
STEP = 0.08
FOG_RANGE = 6.0
PEDESTRIAN_WIDTH = 0.45
PEDESTRIAN_HEIGHT = 1.7
PEDESTRIAN_X = 0.3
AVOID_OFFSET = -0.6
HFOV = math.pi / 2

FLOOR_LEVEL = -0.6
LANE_LEVEL = 0.35
CEILING_LEVEL = 0.05
FOG_LEVEL = -0.8
PEDESTRIAN_LEVEL = 0.95


class ActivityLabel(enum.IntEnum):
    Straight = 0
    Curve = 1
    AbnormalPedestrian = 2

    @property
    def is_anomalous(self) -> bool:
        return self is ActivityLabel.AbnormalPedestrian


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int = 1
    frames_per_segment: int = 16
    laps: int = 1
    image_size: tuple = (64, 64)
    pedestrian_segment: int = 2
    pedestrian_frames: int = 24
    noise_sigma: float = 0.02
    seed: int = 0
    max_speed: float = 4.0

    def validate(self) -> None:
        h, w = self.image_size
        if self.scenario not in (1, 2):
            raise DomainError(f"scenario must be 1 or 2, got {self.scenario}")
        if h % 8 or w % 8 or h <= 0 or w <= 0:
            raise DomainError(f"image_size must be positive multiples of 8, got {self.image_size}")
        if self.frames_per_segment < 8:
            raise DomainError(f"frames_per_segment must be >= 8, got {self.frames_per_segment}")
        if self.laps < 1:
            raise DomainError(f"laps must be >= 1, got {self.laps}")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be >= 0")
        if self.scenario == 2:
            n_seg = 8 * self.laps
            if not 0 <= self.pedestrian_segment < n_seg:
                raise DomainError(
                    f"pedestrian_segment {self.pedestrian_segment} out of range [0, {n_seg})"
                )
            if self.pedestrian_segment % 2:
                raise DomainError(
                    f"pedestrian_segment {self.pedestrian_segment} is a curve; pick an even (straight) segment"
                )
            if self.pedestrian_frames < 8:
                raise DomainError("pedestrian_frames must be >= 8")

    @property
    def focal(self) -> float:
        return (self.image_size[1] / 2) / (HFOV / 2)


@dataclass(frozen=True)
class WorldState:
    """Camera pose and scene content in the local frame of one segment.

    Straight segments run along +z with walls at x = +-HALF_WIDTH. Arc
    segments turn right around the centre (radius, 0); ``x, z, heading`` are
    the camera pose in that frame, heading measured clockwise from +z.
    """

    kind: str = "straight"
    x: float = 0.0
    z: float = 0.0
    heading: float = 0.0
    radius: float = ARC_RADIUS
    tex_offset: float = 0.0
    pedestrian: Optional[tuple] = None  # (x, z) of the pedestrian's facing plane
    pedestrian_range: float = math.inf  # hidden while farther ahead than this depth


@dataclass
class FrameMotionCouple:
    frame: np.ndarray  # H x W x 1, in [-1, 1]
    flow: np.ndarray  # H x W x 2, (dx, dy) pixels/frame
    index: int


@dataclass
class Texture:
    """Seeded sinusoidal stripe pattern for each wall side."""

    freqs: np.ndarray  # (2 sides, n)
    phases: np.ndarray
    amps: np.ndarray

    @classmethod
    def from_seed(cls, seed: int, n: int = 3) -> "Texture":
        r = SplitMix64(derive_seed(seed, "texture"))
        freqs = r.uniform_range(1.5, 6.0, 2 * n).reshape(2, n)
        phases = r.uniform_range(0, 2 * math.pi, 2 * n).reshape(2, n)
        amps = r.uniform_range(0.08, 0.18, 2 * n).reshape(2, n)
        return cls(freqs, phases, amps)

    def wall(self, side: np.ndarray, s: np.ndarray) -> np.ndarray:
        out = np.full(s.shape, -0.15)
        for k in range(self.freqs.shape[1]):
            f = self.freqs[side, k]
            out += self.amps[side, k] * np.sin(f * s + self.phases[side, k])
        return out


@dataclass
class Hits:
    """Per-pixel 3-D hit points in the segment frame."""

    qx: np.ndarray
    qy: np.ndarray
    qz: np.ndarray
    rng: np.ndarray  # horizontal range from the camera
    surface: np.ndarray  # 0 floor, 1 ceiling, 2 wall, 3 pedestrian
    side: np.ndarray  # wall side index (0 left, 1 right / 0 inner, 1 outer)
    s: np.ndarray  # wall texture coordinate


def pixel_grid(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Image-plane coordinates (u right, v up) of every pixel centre."""
    h, w = config.image_size
    u = np.arange(w) + 0.5 - w / 2
    v = h / 2 - (np.arange(h) + 0.5)
    return np.meshgrid(u, v)


def _ray_circle(px, pz, dx, dz, cx, cz, r):
    """Smallest positive t with |p + t d - c| = r, inf when there is none."""
    ox, oz = px - cx, pz - cz
    b = ox * dx + oz * dz
    c = ox * ox + oz * oz - r * r
    disc = b * b - c
    t = np.full(np.shape(dx), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1, t2 = -b - sq, -b + sq
    eps = 1e-9
    t = np.where(ok & (t1 > eps), t1, np.where(ok & (t2 > eps), t2, np.inf))
    return t


def cast_rays(state: WorldState, config: ScenarioConfig) -> Hits:
    f = config.focal
    u, v = pixel_grid(config)
    phi = u / f
    ang = state.heading + phi
    dx, dz = np.sin(ang), np.cos(ang)

    with np.errstate(divide="ignore"):
        slope = v / f  # Y / range along the ray
        r_floor = np.where(slope < 0, -CAMERA_HEIGHT / np.where(slope < 0, slope, -1), np.inf)
        r_ceil = np.where(slope > 0, CEILING_HEIGHT / np.where(slope > 0, slope, 1), np.inf)
    r_flat = np.minimum(r_floor, r_ceil)

    if state.kind == "straight":
        with np.errstate(divide="ignore", invalid="ignore"):
            t_right = np.where(dx > 1e-12, (HALF_WIDTH - state.x) / dx, np.inf)
            t_left = np.where(dx < -1e-12, (-HALF_WIDTH - state.x) / dx, np.inf)
        r_wall = np.minimum(t_right, t_left)
        side = (t_right < t_left).astype(np.int64)
    else:
        R = state.radius
        t_in = _ray_circle(state.x, state.z, dx, dz, R, 0.0, R - HALF_WIDTH)
        t_out = _ray_circle(state.x, state.z, dx, dz, R, 0.0, R + HALF_WIDTH)
        r_wall = np.minimum(t_in, t_out)
        side = (t_out <= t_in).astype(np.int64)

    rng = np.minimum(r_wall, r_flat)
    qx = state.x + rng * dx
    qz = state.z + rng * dz
    qy = slope * rng
    surface = np.where(r_wall <= r_flat, 2, np.where(r_floor < r_ceil, 0, 1))

    if state.kind == "straight":
        s = state.tex_offset + qz
    else:
        R = state.radius
        beta = np.arctan2(qz, R - qx)  # clockwise arc angle around the centre
        s = state.tex_offset + np.where(side == 1, R + HALF_WIDTH, R - HALF_WIDTH) * beta

    if state.pedestrian is not None:
        px, pz = state.pedestrian
        with np.errstate(divide="ignore", invalid="ignore"):
            t_p = np.where(dz > 1e-9, (pz - state.z) / dz, np.inf)
        hx = state.x + t_p * dx
        hy = slope * t_p
        hit = (
            np.isfinite(t_p)
            & (t_p > 0)
            & (t_p < rng)
            & (pz - state.z <= state.pedestrian_range + 1e-9)
            & (np.abs(hx - px) <= PEDESTRIAN_WIDTH / 2)
            & (hy >= -CAMERA_HEIGHT)
            & (hy <= PEDESTRIAN_HEIGHT - CAMERA_HEIGHT)
        )
        rng = np.where(hit, t_p, rng)
        qx = np.where(hit, hx, qx)
        qz = np.where(hit, pz, qz)
        qy = np.where(hit, hy, qy)
        surface = np.where(hit, 3, surface)
    return Hits(qx, qy, qz, rng, surface, side, s)


def render_frame(state: WorldState, config: ScenarioConfig, texture: Texture,
                 noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Grayscale H x W frame in [-1, 1] for one world state.

    ``noise`` (same shape as the image) is added before clamping; pass None
    for a noiseless render.
    """
    hits = cast_rays(state, config)
    img = np.empty(hits.rng.shape)
    floor = hits.surface == 0
    if state.kind == "straight":
        lat = np.abs(hits.qx)
    else:
        lat = np.abs(np.hypot(state.radius - hits.qx, hits.qz) - state.radius)
    lane = np.exp(-0.5 * ((lat - LANE_OFFSET) / LANE_WIDTH) ** 2)
    img[floor] = FLOOR_LEVEL + (LANE_LEVEL - FLOOR_LEVEL) * lane[floor]
    img[hits.surface == 1] = CEILING_LEVEL
    wall = hits.surface == 2
    img[wall] = texture.wall(hits.side[wall], hits.s[wall])
    img[hits.surface == 3] = PEDESTRIAN_LEVEL
    fog = np.exp(-hits.rng / FOG_RANGE)
    img = FOG_LEVEL + (img - FOG_LEVEL) * fog
    if noise is not None:
        img = img + noise
    return np.clip(img, -1.0, 1.0)


def _project(hits: Hits, pose: WorldState, f: float) -> tuple[np.ndarray, np.ndarray]:
    """Cylindrical image coordinates (u right, v up) of the hit points seen from ``pose``."""
    rx = hits.qx - pose.x
    rz = hits.qz - pose.z
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    fwd = rx * s + rz * c
    lat = rx * c - rz * s
    return f * np.arctan2(lat, fwd), f * hits.qy / np.maximum(np.hypot(lat, fwd), 1e-9)


def analytic_flow(state: WorldState, next_state: WorldState, config: ScenarioConfig) -> np.ndarray:
    """Closed-form H x W x 2 flow (dx right, dy down) from ``state`` to ``next_state``.

    Both states must be expressed in the same segment frame; the geometry of
    ``state`` determines which surface each pixel sees.
    """
    hits = cast_rays(state, config)
    u, v = _project(hits, state, config.focal)
    u2, v2 = _project(hits, next_state, config.focal)
    du = u2 - u
    dv = -(v2 - v)
    # points at infinity (none inside a closed tunnel) would give nan
    du = np.nan_to_num(du)
    dv = np.nan_to_num(dv)
    lim = config.max_speed
    return np.stack([np.clip(du, -lim, lim), np.clip(dv, -lim, lim)], axis=-1)


# trajectory ------------------------------------------------------------------

@dataclass
class _Step:
    state: WorldState
    next_state: WorldState
    label: ActivityLabel


def _smoothstep(a: float) -> float:
    a = min(max(a, 0.0), 1.0)
    return 0.5 - 0.5 * math.cos(math.pi * a)


def avoidance_offset(k: int, n: int) -> float:
    """Lateral offset at episode frame ``k`` of ``n`` (ramp out, hold, ramp back)."""
    a = k / n
    if a < 0.25:
        return 0.0
    if a < 0.5:
        return AVOID_OFFSET * _smoothstep((a - 0.25) / 0.25)
    if a < 0.75:
        return AVOID_OFFSET
    return AVOID_OFFSET * (1.0 - _smoothstep((a - 0.75) / 0.25))


def _trajectory(config: ScenarioConfig) -> list[_Step]:
    k = config.frames_per_segment
    steps: list[_Step] = []
    tex = 0.0
    for seg in range(8 * config.laps):
        if seg % 2 == 0:
            episode = config.scenario == 2 and seg == config.pedestrian_segment
            n_total = k + (config.pedestrian_frames if episode else 0)
            ep_start = k // 2
            ped = None
            ped_range = math.inf
            if episode:
                pass_frame = 0.7 * config.pedestrian_frames
                ped_range = pass_frame * STEP
                ped = (PEDESTRIAN_X, (ep_start + pass_frame) * STEP)
            for j in range(n_total):
                in_ep = episode and ep_start <= j < ep_start + config.pedestrian_frames
                xo = avoidance_offset(j - ep_start, config.pedestrian_frames) if in_ep else 0.0
                xn = (
                    avoidance_offset(j + 1 - ep_start, config.pedestrian_frames)
                    if episode and ep_start <= j + 1 < ep_start + config.pedestrian_frames
                    else 0.0
                )
                st = WorldState("straight", xo, j * STEP, 0.0, tex_offset=tex,
                                pedestrian=ped, pedestrian_range=ped_range)
                nx = replace(st, x=xn, z=(j + 1) * STEP)
                label = ActivityLabel.AbnormalPedestrian if in_ep else ActivityLabel.Straight
                steps.append(_Step(st, nx, label))
            tex += n_total * STEP
        else:
            R = ARC_RADIUS
            for j in range(k):
                a0, a1 = j * STEP / R, (j + 1) * STEP / R
                st = WorldState("arc", R - R * math.cos(a0), R * math.sin(a0), a0, R, tex)
                nx = replace(st, x=R - R * math.cos(a1), z=R * math.sin(a1), heading=a1)
                steps.append(_Step(st, nx, ActivityLabel.Curve))
            tex += k * STEP
    return steps


@dataclass
class ScenarioData:
    """A rendered scenario: array-backed sequence of couples and labels."""

    config: ScenarioConfig
    frames: np.ndarray  # N x 1 x H x W float32
    flows: np.ndarray  # N x 2 x H x W float32, pixels/frame
    labels: np.ndarray  # N uint8 (ActivityLabel values)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, t: int) -> tuple[FrameMotionCouple, ActivityLabel]:
        couple = FrameMotionCouple(
            frame=self.frames[t].transpose(1, 2, 0),
            flow=self.flows[t].transpose(1, 2, 0),
            index=int(t),
        )
        return couple, ActivityLabel(int(self.labels[t]))

    def __iter__(self) -> Iterator[tuple[FrameMotionCouple, ActivityLabel]]:
        for t in range(len(self)):
            yield self[t]

    @property
    def is_anomalous(self) -> np.ndarray:
        return self.labels == ActivityLabel.AbnormalPedestrian

    def subset(self, indices) -> "ScenarioData":
        idx = np.asarray(indices, dtype=np.int64)
        return ScenarioData(self.config, self.frames[idx], self.flows[idx], self.labels[idx])


def frame_noise(config: ScenarioConfig, t: int) -> Optional[np.ndarray]:
    if config.noise_sigma == 0:
        return None
    h, w = config.image_size
    r = SplitMix64(derive_seed(config.seed, "noise", config.scenario, t))
    return config.noise_sigma * r.normal(h * w).reshape(h, w)


def world_states(config: ScenarioConfig) -> list[tuple[WorldState, WorldState, ActivityLabel]]:
    config.validate()
    return [(s.state, s.next_state, s.label) for s in _trajectory(config)]


def synthesize_scenario(config: ScenarioConfig) -> ScenarioData:
    """Render the whole patrol; deterministic in ``config``."""
    config.validate()
    texture = Texture.from_seed(config.seed)
    steps = _trajectory(config)
    h, w = config.image_size
    n = len(steps)
    frames = np.empty((n, 1, h, w), dtype=np.float32)
    flows = np.empty((n, 2, h, w), dtype=np.float32)
    labels = np.empty(n, dtype=np.uint8)
    for t, step in enumerate(steps):
        frames[t, 0] = render_frame(step.state, config, texture, frame_noise(config, t))
        flows[t] = analytic_flow(step.state, step.next_state, config).transpose(2, 0, 1)
        labels[t] = int(step.label)
    return ScenarioData(config, frames, flows, labels)


def split_subset(data: ScenarioData, label_filter) -> ScenarioData:
    """Couples whose label is in ``label_filter``, temporal order preserved."""
    if isinstance(label_filter, (ActivityLabel, int)):
        label_filter = {label_filter}
    wanted = np.array(sorted(int(l) for l in label_filter), dtype=np.uint8)
    idx = np.flatnonzero(np.isin(data.labels, wanted))
    if idx.size == 0:
        names = ", ".join(ActivityLabel(int(l)).name for l in wanted)
        raise DomainError(f"split_subset: no couples labelled {names}")
    return data.subset(idx)


def subset_indices(data: ScenarioData, label_filter) -> np.ndarray:
    if isinstance(label_filter, (ActivityLabel, int)):
        label_filter = {label_filter}
    wanted = [int(l) for l in label_filter]
    idx = np.flatnonzero(np.isin(data.labels, wanted))
    if idx.size == 0:
        raise DomainError("subset is empty")
    return idx
