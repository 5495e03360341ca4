"""Bit-exact on-disk formats for datasets, checkpoints and hierarchy manifests.

TensorBlob layout (little-endian)::

    b"HSAW" | u32 version | u32 name_len | name (utf-8) | u32 ndim | u32 dims[ndim] | f32 payload
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from hsaw.errors import (
    BadMagicError,
    ConsistencyError,
    MissingBlobError,
    PayloadLengthError,
    VersionMismatchError,
)
from hsaw.gan import CrossModalPair, GanConfig, history_csv, new_pair
from hsaw.hierarchy import BuildConfig, Hierarchy, HierarchyLevel
from hsaw.scene import ActivityLabel, ScenarioConfig, ScenarioData
from hsaw.som import SomGrid

MAGIC = b"HSAW"
BLOB_VERSION = 1
DATASET_VERSION = 1
MODEL_VERSION = 1


# tensor blobs ------------------------------------------------------------------

def encode_blob(name: str, array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    raw_name = name.encode("utf-8")
    head = MAGIC + struct.pack("<II", BLOB_VERSION, len(raw_name)) + raw_name
    head += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def decode_blob(buf: bytes, source: str = "<bytes>") -> tuple[str, np.ndarray]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, name_len = struct.unpack_from("<II", buf, 4)
    if version != BLOB_VERSION:
        raise VersionMismatchError(
            f"{source}: blob format version {version} is not supported (this reader handles "
            f"version {BLOB_VERSION}); re-export the file with a matching hsaw release"
        )
    off = 12
    name = buf[off:off + name_len].decode("utf-8")
    off += name_len
    if len(buf) < off + 4:
        raise PayloadLengthError(f"{source}: payload length mismatch (header truncated)")
    (ndim,) = struct.unpack_from("<I", buf, off)
    off += 4
    if len(buf) < off + 4 * ndim:
        raise PayloadLengthError(f"{source}: payload length mismatch (dims truncated)")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    got = len(buf) - off
    if got != expected:
        raise PayloadLengthError(
            f"{source}: payload length mismatch, expected {expected} bytes for dims {tuple(dims)}, found {got}"
        )
    arr = np.frombuffer(buf, dtype="<f4", offset=off).reshape(dims).astype(np.float32)
    return name, arr


def save_blob(path, name: str, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_blob(name, array))


def load_blob(path) -> tuple[str, np.ndarray]:
    path = Path(path)
    return decode_blob(path.read_bytes(), str(path))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _num(x: float):
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


def _unnum(x) -> float:
    return float(x)


# datasets ----------------------------------------------------------------------

def save_dataset(data: ScenarioData, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cfg = data.config
    manifest = {
        "format": "hsaw-dataset",
        "version": DATASET_VERSION,
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "count": len(data),
        "image_size": list(cfg.image_size),
        "max_speed": cfg.max_speed,
        "frames_per_segment": cfg.frames_per_segment,
        "laps": cfg.laps,
        "noise_sigma": cfg.noise_sigma,
        "pedestrian_segment": cfg.pedestrian_segment,
        "pedestrian_frames": cfg.pedestrian_frames,
        "label_counts": {l.name: int((data.labels == l).sum()) for l in ActivityLabel},
    }
    _write_json(d / "manifest.json", manifest)
    save_blob(d / "frames.blob", "frames", data.frames)
    save_blob(d / "flows.blob", "flows", data.flows)
    (d / "labels.bin").write_bytes(np.asarray(data.labels, dtype=np.uint8).tobytes())


def _read_manifest(path: Path, fmt: str, version: int) -> dict:
    if not path.exists():
        raise ConsistencyError(f"{path}: manifest not found")
    m = json.loads(path.read_text())
    if m.get("format") != fmt:
        raise BadMagicError(f"{path}: expected format {fmt!r}, found {m.get('format')!r}")
    if m.get("version") != version:
        raise VersionMismatchError(
            f"{path}: {fmt} version {m.get('version')} is not supported (expected {version}); "
            "regenerate it with this hsaw release"
        )
    return m


def load_dataset(directory) -> ScenarioData:
    d = Path(directory)
    m = _read_manifest(d / "manifest.json", "hsaw-dataset", DATASET_VERSION)
    _, frames = load_blob(d / "frames.blob")
    _, flows = load_blob(d / "flows.blob")
    labels = np.frombuffer((d / "labels.bin").read_bytes(), dtype=np.uint8).copy()
    n = m["count"]
    counts = {"manifest": n, "frames.blob": frames.shape[0], "flows.blob": flows.shape[0], "labels.bin": labels.size}
    if len(set(counts.values())) != 1:
        raise ConsistencyError(f"{d}: frame counts disagree: {counts}")
    h, w = m["image_size"]
    if frames.shape[1:] != (1, h, w) or flows.shape[1:] != (2, h, w):
        raise ConsistencyError(
            f"{d}: blob shapes {frames.shape} / {flows.shape} do not match image_size {h}x{w}"
        )
    if labels.size and labels.max() > max(ActivityLabel):
        raise ConsistencyError(f"{d}: labels.bin contains unknown label {labels.max()}")
    cfg = ScenarioConfig(
        scenario=m["scenario"],
        frames_per_segment=m["frames_per_segment"],
        laps=m["laps"],
        image_size=(h, w),
        pedestrian_segment=m["pedestrian_segment"],
        pedestrian_frames=m["pedestrian_frames"],
        noise_sigma=m["noise_sigma"],
        seed=m["seed"],
        max_speed=m["max_speed"],
    )
    return ScenarioData(cfg, frames, flows, labels)


def dataset_fingerprint(directory) -> str:
    import hashlib

    h = hashlib.sha256()
    for name in ("manifest.json", "frames.blob", "flows.blob", "labels.bin"):
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()[:16]


# models ------------------------------------------------------------------------

def _gan_dict(cfg: GanConfig) -> dict:
    return {k: _num(v) if isinstance(v, float) else v for k, v in asdict(cfg).items()}


def _gan_from(d: dict) -> GanConfig:
    kw = {}
    for f in fields(GanConfig):
        if f.name in d:
            kw[f.name] = _unnum(d[f.name]) if f.type in ("float", float) else d[f.name]
    return GanConfig(**kw)


def _build_dict(cfg: BuildConfig) -> dict:
    out = {}
    for f in fields(BuildConfig):
        v = getattr(cfg, f.name)
        if f.name == "gan":
            out[f.name] = _gan_dict(v)
        elif isinstance(v, float):
            out[f.name] = _num(v)
        else:
            out[f.name] = v
    return out


def _build_from(d: dict) -> BuildConfig:
    kw = {}
    for f in fields(BuildConfig):
        if f.name not in d:
            continue
        v = d[f.name]
        if f.name == "gan":
            kw[f.name] = _gan_from(v)
        elif f.type in ("float", float):
            kw[f.name] = _unnum(v)
        else:
            kw[f.name] = v
    return BuildConfig(**kw)


def save_pair(pair: CrossModalPair, directory: Path, prefix: str) -> dict:
    names = {}
    for pname, arr in pair.state_dict().items():
        fname = f"{prefix}.{pname}.blob"
        save_blob(directory / fname, f"{prefix}.{pname}", arr)
        names[pname] = fname
    return names


def save_model(hierarchy: Hierarchy, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    levels = []
    for level in hierarchy.levels:
        prefix = f"level{level.index}"
        params = save_pair(level.pair, d, prefix)
        som_file = f"{prefix}.som.prototypes.blob"
        save_blob(d / som_file, f"{prefix}.som.prototypes", level.som.prototypes)
        (d / f"{prefix}.train_log.csv").write_text(history_csv(level.pair))
        levels.append({
            "index": level.index,
            "theta": _num(level.theta),
            "som": {"rows": level.som.rows, "cols": level.som.cols, "prototypes": som_file},
            "normal_mask": [bool(x) for x in level.normal_mask],
            "cluster_mu": [_num(x) for x in level.cluster_mu],
            "cluster_count": [int(x) for x in level.cluster_count],
            "train_indices": [int(x) for x in level.train_indices],
            "subset_fingerprint": level.subset_fingerprint,
            "gan_config": _gan_dict(level.pair.config),
            "epochs_trained": level.pair.epochs_trained,
            "parameters": params,
        })
    manifest = {
        "format": "hsaw-model",
        "version": MODEL_VERSION,
        "level_count": len(hierarchy.levels),
        "tau": _num(hierarchy.tau),
        "build_config": _build_dict(hierarchy.build_config),
        "dataset_fingerprint": hierarchy.dataset_fingerprint,
        "levels": levels,
    }
    _write_json(d / "manifest.json", manifest)


def load_model(directory) -> Hierarchy:
    d = Path(directory)
    m = _read_manifest(d / "manifest.json", "hsaw-model", MODEL_VERSION)
    if m["level_count"] != len(m["levels"]):
        raise ConsistencyError(f"{d}: level_count {m['level_count']} but {len(m['levels'])} level entries")
    levels = []
    for entry in m["levels"]:
        gan_cfg = _gan_from(entry["gan_config"])
        pair = new_pair(gan_cfg)
        state = {}
        for pname, fname in entry["parameters"].items():
            path = d / fname
            if not path.exists():
                raise MissingBlobError(f"{d}: parameter {pname!r} refers to missing blob {fname}")
            _, state[pname] = load_blob(path)
        try:
            pair.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise ConsistencyError(f"{d}: level {entry['index']}: {exc}") from exc
        pair.epochs_trained = entry.get("epochs_trained", 0)
        pair.subset_fingerprint = entry["subset_fingerprint"]
        som_path = d / entry["som"]["prototypes"]
        if not som_path.exists():
            raise MissingBlobError(f"{d}: SOM prototypes refer to missing blob {som_path.name}")
        _, protos = load_blob(som_path)
        rows, cols = entry["som"]["rows"], entry["som"]["cols"]
        if protos.shape[0] != rows * cols:
            raise ConsistencyError(f"{d}: SOM blob has {protos.shape[0]} prototypes, expected {rows * cols}")
        som = SomGrid(rows, cols, protos, trained=True)
        mu = np.array([_unnum(x) for x in entry["cluster_mu"]])
        level = HierarchyLevel(
            entry["index"], pair, som, mu,
            np.array(entry["cluster_count"], dtype=np.int64),
            _unnum(entry["theta"]),
            np.array(entry["train_indices"], dtype=np.int64),
        )
        if [bool(x) for x in level.normal_mask] != entry["normal_mask"]:
            raise ConsistencyError(f"{d}: level {entry['index']} normal_mask disagrees with cluster_mu/theta")
        levels.append(level)
    return Hierarchy(levels, _unnum(m["tau"]), _build_from(m["build_config"]), m.get("dataset_fingerprint", ""))
