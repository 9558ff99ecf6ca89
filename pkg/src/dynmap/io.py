"""File formats: scene / robot-path JSON, dataset CSVs, the MODG grid container.

MODG layout (little endian)::

    b"MODG" | u16 version=1 | u32 width | u32 height
    | f64 origin_x | f64 origin_y | f64 cell_size | u16 channel_count
    | per channel: u8 name_len, name bytes, width*height float32 (row-major)
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import struct
import tempfile
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .descriptors import DescriptorMaps
from .errors import ConfigError
from .grid import Detection, GridSpec, PoseStamped
from .model import PARAM_SHAPES, ModelParams
from .sim import AgentSpec, RobotPath, Scene, SensorNoise, SimDataset, validate_scene

FORMAT_VERSION = 1
MAGIC = b"MODG"
DETECTION_HEADER = ["t", "x", "y", "alpha", "agent_id"]
POSE_HEADER = ["t", "x", "y", "z", "qx", "qy", "qz", "qw"]
MAP_CHANNELS = ("flow", "dir_cos", "dir_sin", "dir_valid", "entropy", "flow_valid")


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc) -> None:
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def read_json(path):
    with open(path) as f:
        return json.load(f)


# ---------------------------------------------------------------- configs

def _num(doc: dict, key: str, path: str, default=None):
    if key not in doc:
        if default is None:
            raise ConfigError(f"{path}{key}", "missing")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{path}{key}", "must be a finite number")
    return float(v)


def _points(value, path: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, "must be a list of [x, y] points")
    out = []
    for j, p in enumerate(value):
        if (not isinstance(p, (list, tuple)) or len(p) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)):
            raise ConfigError(f"{path}[{j}]", "must be an [x, y] pair of numbers")
        out.append((float(p[0]), float(p[1])))
    return out


def _check_version(doc, what: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("$", f"{what} must be a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError("version", f"expected {FORMAT_VERSION}, got {doc.get('version')!r}")


def parse_scene(doc: dict) -> Scene:
    _check_version(doc, "scene")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "must be a non-empty string")
    walls = []
    for i, w in enumerate(doc.get("walls", [])):
        if (not isinstance(w, list) or len(w) != 4
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in w)):
            raise ConfigError(f"walls[{i}]", "must be [x1, y1, x2, y2]")
        walls.append([float(v) for v in w])
    agents_doc = doc.get("agents")
    if not isinstance(agents_doc, list) or not agents_doc:
        raise ConfigError("agents", "must be a non-empty list")
    agents = []
    for i, a in enumerate(agents_doc):
        p = f"agents[{i}]."
        if not isinstance(a, dict):
            raise ConfigError(f"agents[{i}]", "must be an object")
        speed = _num(a, "speed", p)
        if speed <= 0:
            raise ConfigError(f"{p}speed", "must be > 0")
        dwell_at = a.get("dwell_at")
        agents.append(AgentSpec(
            pattern=a.get("pattern", "waypoint_loop"),
            waypoints=_points(a.get("waypoints"), f"{p}waypoints"),
            speed=speed,
            heading_noise_sigma=_num(a, "heading_noise_sigma", p, 0.0),
            dwell_time=_num(a, "dwell_time", p, 0.0),
            start_offset=_num(a, "start_offset", p, 0.0),
            dwell_at=None if dwell_at is None else tuple(int(k) for k in dwell_at),
        ))
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    bounds = doc.get("bounds")
    if bounds is not None:
        if (not isinstance(bounds, list) or len(bounds) != 4
                or not bounds[0] < bounds[2] or not bounds[1] < bounds[3]):
            raise ConfigError("bounds", "must be [xmin, ymin, xmax, ymax] with min < max")
        bounds = tuple(float(v) for v in bounds)
    scene = Scene(name, walls, agents, seed, bounds)
    validate_scene(scene)
    return scene


def scene_to_doc(scene: Scene) -> dict:
    agents = []
    for a in scene.agents:
        d = {"pattern": a.pattern, "waypoints": [list(p) for p in a.waypoints],
             "speed": a.speed, "heading_noise_sigma": a.heading_noise_sigma,
             "dwell_time": a.dwell_time, "start_offset": a.start_offset}
        if a.dwell_at is not None:
            d["dwell_at"] = list(a.dwell_at)
        agents.append(d)
    doc = {"version": FORMAT_VERSION, "name": scene.name, "seed": scene.seed,
           "walls": [list(map(float, w)) for w in scene.walls], "agents": agents}
    if scene.bounds is not None:
        doc["bounds"] = list(scene.bounds)
    return doc


def parse_robot_path(doc: dict) -> RobotPath:
    """Either explicit ``poses`` keyframes or a ``waypoints`` route at ``speed``."""
    _check_version(doc, "robot path")
    if "poses" in doc:
        poses = []
        for i, p in enumerate(doc["poses"]):
            path = f"poses[{i}]."
            t, x, y = _num(p, "t", path), _num(p, "x", path), _num(p, "y", path)
            z = _num(p, "z", path, 0.0)
            if "yaw" in p:
                poses.append(PoseStamped.from_yaw(t, x, y, _num(p, "yaw", path), z))
            else:
                q = [_num(p, k, path) for k in ("qx", "qy", "qz", "qw")]
                try:
                    poses.append(PoseStamped(t, x, y, z, *q))
                except ValueError as e:
                    raise ConfigError(f"poses[{i}]", str(e)) from None
        return RobotPath(poses)
    if "waypoints" in doc:
        speed = _num(doc, "speed", "")
        if speed <= 0:
            raise ConfigError("speed", "must be > 0")
        duration = doc.get("duration")
        return RobotPath.from_waypoints(
            _points(doc["waypoints"], "waypoints"), speed,
            t_start=_num(doc, "t_start", "", 0.0),
            duration=None if duration is None else _num(doc, "duration", ""),
            loop=bool(doc.get("loop", True)),
            turn_time=_num(doc, "turn_time", "", 1.0),
        )
    raise ConfigError("poses", "robot path needs 'poses' or 'waypoints'")


def parse_noise(doc: Optional[dict]) -> Optional[SensorNoise]:
    if doc is None:
        return None
    return SensorNoise(
        position_sigma=_num(doc, "position_sigma", "noise.", 0.0),
        miss_rate=_num(doc, "miss_rate", "noise.", 0.0),
        heading_sigma=_num(doc, "heading_sigma", "noise.", 0.0),
        seed=int(doc.get("seed", 0)),
    )


def builtin_scenes() -> list:
    files = resources.files("dynmap").joinpath("scenes")
    return sorted(p.name[:-len(".scene.json")] for p in files.iterdir()
                  if p.name.endswith(".scene.json"))


def load_scene(name_or_path) -> Scene:
    """Load a scene file, or a shipped scene by name."""
    p = Path(name_or_path)
    if p.exists():
        return parse_scene(read_json(p))
    res = resources.files("dynmap").joinpath("scenes", f"{name_or_path}.scene.json")
    if not res.is_file():
        raise FileNotFoundError(f"no scene file or shipped scene named {name_or_path!r}")
    return parse_scene(json.loads(res.read_text()))


def load_robot_path_doc(name_or_path) -> dict:
    p = Path(name_or_path)
    if p.exists():
        return read_json(p)
    res = resources.files("dynmap").joinpath("scenes", f"{name_or_path}.robot.json")
    if not res.is_file():
        raise FileNotFoundError(f"no robot path file or shipped path named {name_or_path!r}")
    return json.loads(res.read_text())


def scene_grid(scene: Scene, cell_size: float = 0.30) -> GridSpec:
    return GridSpec.from_bounds(*scene.extent(), cell_size)


# ---------------------------------------------------------------- CSV

def _fmt(v: float) -> str:
    # shortest repr that parses back to the same double
    return repr(float(v))


def detections_csv(detections) -> bytes:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETECTION_HEADER)
    for d in detections:
        w.writerow([_fmt(d.t), _fmt(d.x), _fmt(d.y), _fmt(d.alpha),
                    "" if d.agent_id is None else str(d.agent_id)])
    return buf.getvalue().encode()


def parse_detections_csv(text: str) -> list:
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or rows[0] != DETECTION_HEADER:
        raise FormatError(f"detections CSV must start with header {','.join(DETECTION_HEADER)}")
    out = []
    for r in rows[1:]:
        aid = int(r[4]) if r[4] != "" else None
        out.append(Detection(float(r[0]), float(r[1]), float(r[2]), float(r[3]), aid))
    return out


def poses_csv(poses) -> bytes:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POSE_HEADER)
    for p in poses:
        w.writerow([_fmt(v) for v in (p.t, p.x, p.y, p.z, p.qx, p.qy, p.qz, p.qw)])
    return buf.getvalue().encode()


def parse_poses_csv(text: str) -> list:
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or rows[0] != POSE_HEADER:
        raise FormatError(f"poses CSV must start with header {','.join(POSE_HEADER)}")
    return [PoseStamped(*(float(v) for v in r)) for r in rows[1:]]


def save_dataset(ds: SimDataset, directory, robot_path_doc: Optional[dict] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    atomic_write(d / "detections.csv", detections_csv(ds.detections))
    atomic_write(d / "poses.csv", poses_csv(ds.poses))
    if robot_path_doc is None:
        robot_path_doc = {"version": FORMAT_VERSION, "poses": [
            {"t": p.t, "x": p.x, "y": p.y, "z": p.z, "qx": p.qx, "qy": p.qy,
             "qz": p.qz, "qw": p.qw} for p in ds.robot_path.poses]}
    meta = dict(ds.meta)
    meta.update({"scene": scene_to_doc(ds.scene), "robot_path": robot_path_doc,
                 "files": {"detections": "detections.csv", "poses": "poses.csv"}})
    write_json(d / "metadata.json", meta)


def load_dataset(directory) -> SimDataset:
    d = Path(directory)
    meta = read_json(d / "metadata.json")
    if meta.get("version") != FORMAT_VERSION:
        raise FormatError(f"dataset version {meta.get('version')!r} is not {FORMAT_VERSION}")
    files = meta.get("files", {})
    dets = parse_detections_csv((d / files.get("detections", "detections.csv")).read_text())
    poses = parse_poses_csv((d / files.get("poses", "poses.csv")).read_text())
    scene = parse_scene(meta["scene"])
    path = parse_robot_path(meta["robot_path"])
    core = {k: v for k, v in meta.items() if k not in ("scene", "robot_path", "files")}
    return SimDataset(dets, poses, scene, path, core)


# ---------------------------------------------------------------- MODG grids

def gridfile_bytes(spec: GridSpec, channels: dict) -> bytes:
    out = [MAGIC, struct.pack("<HIIdddH", FORMAT_VERSION, spec.width, spec.height,
                              spec.origin_x, spec.origin_y, spec.cell_size, len(channels))]
    for name, arr in channels.items():
        raw = name.encode()
        if len(raw) > 255:
            raise FormatError(f"channel name {name!r} too long")
        arr = np.asarray(arr, dtype="<f4")
        if arr.size != spec.width * spec.height:
            raise FormatError(f"channel {name!r} has {arr.size} values, grid has "
                              f"{spec.width * spec.height}")
        out += [struct.pack("<B", len(raw)), raw, np.ascontiguousarray(arr).tobytes()]
    return b"".join(out)


def parse_gridfile(data: bytes):
    """Returns ``(GridSpec, {name: float32 array of shape (height, width)})``."""
    if data[:4] != MAGIC:
        raise FormatError("not a MODG file")
    head = struct.calcsize("<HIIdddH")
    version, w, h, ox, oy, cs, count = struct.unpack_from("<HIIdddH", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported MODG version {version}")
    spec = GridSpec(ox, oy, cs, w, h)
    pos = 4 + head
    channels = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<B", data, pos)
        pos += 1
        name = data[pos:pos + n].decode()
        pos += n
        size = 4 * w * h
        channels[name] = np.frombuffer(data, dtype="<f4", count=w * h, offset=pos).reshape(h, w).copy()
        pos += size
    if pos != len(data):
        raise FormatError("trailing bytes after last channel")
    return spec, channels


def write_gridfile(path, spec: GridSpec, channels: dict) -> None:
    atomic_write(path, gridfile_bytes(spec, channels))


def read_gridfile(path):
    return parse_gridfile(Path(path).read_bytes())


def maps_to_channels(maps: DescriptorMaps, visibility=None) -> dict:
    ch = {k: np.asarray(getattr(maps, k), dtype=float) for k in MAP_CHANNELS}
    if visibility is not None:
        ch["visibility"] = np.asarray(visibility, dtype=float)
    return ch


def channels_to_maps(spec: GridSpec, ch: dict, num_bins: int = 8,
                     normalized: bool = False) -> DescriptorMaps:
    missing = [k for k in MAP_CHANNELS if k not in ch]
    if missing:
        raise FormatError(f"grid file lacks channels {missing}")
    f = lambda k: ch[k].astype(float)
    return DescriptorMaps(spec, f("flow"), f("dir_cos"), f("dir_sin"), ch["dir_valid"] > 0.5,
                          f("entropy"), ch["flow_valid"] > 0.5, num_bins, normalized)


def save_maps(path, maps: DescriptorMaps, visibility=None, sidecar: Optional[dict] = None) -> None:
    """Write maps as MODG plus a ``.json`` sidecar holding bin count and flags."""
    path = Path(path)
    write_gridfile(path, maps.spec, maps_to_channels(maps, visibility))
    doc = {"version": FORMAT_VERSION, "num_bins": maps.num_bins, "normalized": maps.normalized}
    doc.update(sidecar or {})
    write_json(sidecar_path(path), doc)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_maps(path):
    """Returns ``(DescriptorMaps, visibility or None, sidecar dict)``."""
    spec, ch = read_gridfile(path)
    side = sidecar_path(path)
    meta = read_json(side) if side.exists() else {"num_bins": 8, "normalized": False}
    maps = channels_to_maps(spec, ch, int(meta.get("num_bins", 8)), bool(meta.get("normalized")))
    vis = ch["visibility"] > 0.5 if "visibility" in ch else None
    return maps, vis, meta


def as_stored(maps: DescriptorMaps) -> DescriptorMaps:
    """The maps exactly as a MODG round trip returns them (float32 values)."""
    spec, ch = parse_gridfile(gridfile_bytes(maps.spec, maps_to_channels(maps)))
    return channels_to_maps(spec, ch, maps.num_bins, maps.normalized)


# ---------------------------------------------------------------- model files

def save_model(path, params: ModelParams, extra: Optional[dict] = None) -> None:
    """Parameters as a one-row MODG (channel ``params``) plus a manifest JSON."""
    names = list(PARAM_SHAPES)
    flat = np.concatenate([params.arrays[k].ravel() for k in names])
    row = GridSpec(0.0, 0.0, 1.0, flat.size, 1)
    path = Path(path)
    write_gridfile(path, row, {"params": flat})
    s = params.spec
    manifest = {
        "version": FORMAT_VERSION,
        "grid": {"origin_x": s.origin_x, "origin_y": s.origin_y, "cell_size": s.cell_size,
                 "width": s.width, "height": s.height},
        "parameters": [{"name": k, "shape": list(params.arrays[k].shape)} for k in names],
    }
    manifest.update(extra or {})
    write_json(sidecar_path(path), manifest)


def load_model(path):
    """Returns ``(ModelParams, manifest dict)``."""
    path = Path(path)
    manifest = read_json(sidecar_path(path))
    _, ch = read_gridfile(path)
    flat = ch["params"].ravel().astype(float)
    g = manifest["grid"]
    spec = GridSpec(g["origin_x"], g["origin_y"], g["cell_size"], g["width"], g["height"])
    arrays, pos = {}, 0
    for entry in manifest["parameters"]:
        size = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = flat[pos:pos + size].reshape(entry["shape"]).copy()
        pos += size
    if pos != flat.size:
        raise FormatError("model manifest does not account for every parameter")
    return ModelParams(spec, arrays), manifest
