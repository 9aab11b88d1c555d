"""Synthetic stereo scenes with known ground truth.

Static landmarks are points and vertical (world ``y``) segments. Each one is
placed by picking a frame along the camera path, a pixel and a depth, and
back-projecting. Dynamic objects are rectangular faces that translate
rigidly and hide the static features behind them. All randomness comes from
one ``numpy.random.default_rng(seed)`` stream, so a seed fixes the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError
from ..frame_grid import Correspondences, LineSet, PointSet, RawFrame
from ..geometry import CameraModel, se3_exp
from .metrics import Trajectory

MIN_VIS_DEPTH = 0.5
MAX_RETRIES = 200


def default_camera():
    return CameraModel(400.0, 400.0, 320.0, 240.0, 0.5, 640, 480)


def constant_velocity_path(n_frames, step):
    """Camera-to-world twists ``i * step`` for ``i = 0..n_frames-1``."""
    step = np.asarray(step, dtype=float).reshape(6)
    return np.arange(n_frames)[:, None] * step[None, :]


@dataclass
class DynamicObjectConfig:
    """A rigid rectangular face moving at ``velocity`` (world m/frame).

    ``position`` is the face centre in the first frame's camera coordinates;
    the object is stationary before ``start_frame``.
    """

    n_points: int = 30
    n_lines: int = 0
    velocity: tuple = (0.15, 0.0, 0.3)
    position: tuple = (-1.5, 0.0, 8.0)
    size: tuple = (3.0, 2.0)
    start_frame: int = 0

    def __post_init__(self):
        self.velocity = tuple(float(x) for x in self.velocity)
        self.position = tuple(float(x) for x in self.position)
        self.size = tuple(float(x) for x in self.size)
        if len(self.velocity) != 3 or len(self.position) != 3 or len(self.size) != 2:
            raise ConfigError("object velocity/position need 3 values and size 2")
        if min(self.size) <= 0 or self.n_points < 0 or self.n_lines < 0:
            raise ConfigError("object size must be positive and feature counts non-negative")


@dataclass
class SyntheticSceneConfig:
    n_static_points: int = 200
    n_static_lines: int = 40
    objects: list = field(default_factory=list)
    path: np.ndarray = None
    placement_path: np.ndarray = None
    n_frames: int = 20
    step: tuple = (0.0, 0.0, 0.3, 0.0, 0.0, 0.0)
    sigma: float = 0.0
    seed: int = 0
    depth_range: tuple = (4.0, 30.0)
    line_length: tuple = (1.0, 3.0)
    margin: float = 10.0
    tag_corruption: float = 0.0
    camera: CameraModel = field(default_factory=default_camera)

    def __post_init__(self):
        if self.path is None:
            self.path = constant_velocity_path(self.n_frames, self.step)
        self.path = np.asarray(self.path, dtype=float).reshape(-1, 6)
        self.n_frames = len(self.path)
        if self.placement_path is not None:
            self.placement_path = np.asarray(self.placement_path, dtype=float).reshape(-1, 6)
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            raise ConfigError("depth_range must satisfy 0 < min <= max")
        if self.sigma < 0 or not 0 <= self.tag_corruption <= 1:
            raise ConfigError("sigma must be >= 0 and tag_corruption in [0, 1]")
        if self.n_frames < 1:
            raise ConfigError("camera path is empty")
        self.objects = [o if isinstance(o, DynamicObjectConfig) else DynamicObjectConfig(**o) for o in self.objects]


@dataclass
class SyntheticSequence:
    camera: CameraModel
    frames: list
    gt: Trajectory
    labels: dict
    points_world: np.ndarray
    lines_world: np.ndarray  # (N, 2, 3) static segment endpoints

    def feature_counts(self):
        n_dyn = sum(1 for v in self.labels.values() if v)
        return len(self.labels) - n_dyn, n_dyn


def _visible(Pc, cam):
    Z = Pc[..., 2]
    front = Z > MIN_VIS_DEPTH
    Zs = np.where(front, Z, 1.0)
    u = cam.fx * Pc[..., 0] / Zs + cam.cx
    v = cam.fy * Pc[..., 1] / Zs + cam.cy
    uR = u - cam.fx * cam.baseline / Zs
    ok = front & (v >= 0) & (v < cam.height) & (uR >= 0) & (u < cam.width)
    return ok, np.stack([u, v, uR], axis=-1)


def _place(rng, cam, T_wc, cfg, n, lines=False):
    """Back-project random (frame, pixel, depth) samples into the world."""
    lo, hi = cfg.depth_range
    out = np.empty((n, 2, 3)) if lines else np.empty((n, 3))
    m = cfg.margin
    for k in range(n):
        for _ in range(MAX_RETRIES):
            f = int(rng.integers(len(T_wc)))
            u = rng.uniform(m, cam.width - m)
            v = rng.uniform(m, cam.height - m)
            Z = rng.uniform(lo, hi)
            Pc = np.array([(u - cam.cx) * Z / cam.fx, (v - cam.cy) * Z / cam.fy, Z])
            if lines:
                half = 0.5 * rng.uniform(*cfg.line_length)
                Pc = np.stack([Pc - [0, half, 0], Pc + [0, half, 0]])
            # the anchor frame must see the whole landmark in both images
            if not _visible(Pc, cam)[0].all():
                continue
            out[k] = T_wc[f].apply(Pc.reshape(-1, 3)).reshape(out[k].shape)
            break
        else:
            raise ConfigError("could not place a visible landmark; check depth_range and camera path")
    return out


def _object_features(rng, obj, T_wc0):
    w, h = obj.size
    centre = T_wc0.apply(np.array(obj.position)[None])[0]
    pts = np.column_stack([rng.uniform(-w / 2, w / 2, obj.n_points), rng.uniform(-h / 2, h / 2, obj.n_points), np.zeros(obj.n_points)])
    xs = rng.uniform(-w / 2, w / 2, obj.n_lines)
    half = 0.5 * h * rng.uniform(0.5, 0.9, obj.n_lines)
    seg = np.stack([np.column_stack([xs, -half, np.zeros(obj.n_lines)]), np.column_stack([xs, half, np.zeros(obj.n_lines)])], axis=1)
    corners = np.array([[-w / 2, -h / 2, 0], [w / 2, -h / 2, 0], [w / 2, h / 2, 0], [-w / 2, h / 2, 0]])
    return centre, pts, seg, corners


def _occluders(objects, T_cw, cam):
    """Per object ``(umin, umax, vmin, vmax, zmin)`` over both images."""
    boxes = []
    for centre, corners in objects:
        Pc = T_cw.apply(centre + corners)
        if not (Pc[:, 2] > MIN_VIS_DEPTH).all():
            continue
        u = cam.fx * Pc[:, 0] / Pc[:, 2] + cam.cx
        v = cam.fy * Pc[:, 1] / Pc[:, 2] + cam.cy
        uR = u - cam.fx * cam.baseline / Pc[:, 2]
        boxes.append((min(u.min(), uR.min()), max(u.max(), uR.max()), v.min(), v.max(), Pc[:, 2].min()))
    return boxes


def _hidden(uvz, boxes):
    """``uvz`` is ``(..., 4)``: ``u, v, uR, Z``."""
    hid = np.zeros(uvz.shape[:-1], dtype=bool)
    for umin, umax, vmin, vmax, zmin in boxes:
        inside = (uvz[..., 3] > zmin) & (uvz[..., 1] >= vmin) & (uvz[..., 1] <= vmax)
        inside &= ((uvz[..., 0] >= umin) & (uvz[..., 0] <= umax)) | ((uvz[..., 2] >= umin) & (uvz[..., 2] <= umax))
        hid |= inside
    return hid


def _noisy_in_bounds(x, cam):
    """Rows of ``(..., 2k)`` pixel coordinates fully inside the image."""
    u, v = x[..., 0::2], x[..., 1::2]
    return ((u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)).all(axis=-1)


def generate_synthetic(cfg):
    """Render a :class:`SyntheticSequence` from ``cfg``.

    Point ids are ``0..`` (static first, then each object's points); line ids
    are numbered the same way in their own namespace. Descriptors are
    identity tags equal to the feature id, unless corrupted. ``labels`` maps
    ``('P'|'L', id)`` to ``True`` for dynamic features.
    """
    rng = np.random.default_rng(cfg.seed)
    cam = cfg.camera
    T_wc = [se3_exp(xi) for xi in cfg.path]
    T_cw = [T.inverse() for T in T_wc]
    # a longer placement path keeps the landmark density up near the end
    anchors = T_wc if cfg.placement_path is None else [se3_exp(xi) for xi in cfg.placement_path]

    P_static = _place(rng, cam, anchors, cfg, cfg.n_static_points)
    L_static = _place(rng, cam, anchors, cfg, cfg.n_static_lines, lines=True)
    objs = [_object_features(rng, o, T_wc[0]) for o in cfg.objects]

    labels = {("P", i): False for i in range(cfg.n_static_points)}
    labels.update({("L", i): False for i in range(cfg.n_static_lines)})
    np_off, nl_off = cfg.n_static_points, cfg.n_static_lines
    obj_ids = []
    for o in cfg.objects:
        pid = np.arange(np_off, np_off + o.n_points)
        lid = np.arange(nl_off, nl_off + o.n_lines)
        labels.update({("P", int(i)): True for i in pid})
        labels.update({("L", int(i)): True for i in lid})
        obj_ids.append((pid, lid))
        np_off += o.n_points
        nl_off += o.n_lines
    n_pt, n_ln = np_off, nl_off
    response_pt = rng.uniform(0.1, 1.0, n_pt)
    response_ln = rng.uniform(0.1, 1.0, n_ln)

    frames = []
    for f in range(cfg.n_frames):
        Tcw = T_cw[f]
        placed = []
        for o, (centre, pts, seg, corners) in zip(cfg.objects, objs):
            shift = np.asarray(o.velocity) * max(0, f - o.start_frame)
            placed.append((centre + shift, pts, seg, corners))
        boxes = _occluders([(c, k) for c, _, _, k in placed], Tcw, cam)

        # points
        Pw = [P_static] + [c + p for c, p, _, _ in placed]
        Pc = Tcw.apply(np.concatenate(Pw).reshape(-1, 3))
        vis, uvr = _visible(Pc, cam)
        uvz = np.concatenate([uvr, Pc[:, 2:3]], axis=1)
        hid = _hidden(uvz, boxes)
        hid[cfg.n_static_points :] = False
        vis &= ~hid

        # lines
        Lw = [L_static.reshape(-1, 2, 3)] + [c + s for c, _, s, _ in placed]
        Lc = Tcw.apply(np.concatenate(Lw).reshape(-1, 3)).reshape(-1, 2, 3)
        lvis, luvr = _visible(Lc, cam)
        luvz = np.concatenate([luvr, Lc[..., 2:3]], axis=-1)
        lhid = _hidden(luvz, boxes).any(axis=1)
        lhid[cfg.n_static_lines :] = False
        lvis = lvis.all(axis=1) & ~lhid

        pi = np.flatnonzero(vis)
        li = np.flatnonzero(lvis)
        noise = rng.normal(0.0, cfg.sigma, (len(pi), 4)) if cfg.sigma > 0 else np.zeros((len(pi), 4))
        lnoise = rng.normal(0.0, cfg.sigma, (len(li), 8)) if cfg.sigma > 0 else np.zeros((len(li), 8))
        uvL = uvr[pi][:, :2] + noise[:, :2]
        uvR = np.column_stack([uvr[pi][:, 2], uvr[pi][:, 1]]) + noise[:, 2:]
        segL = np.column_stack([luvr[li, 0, 0], luvr[li, 0, 1], luvr[li, 1, 0], luvr[li, 1, 1]]) + lnoise[:, :4]
        segR = np.column_stack([luvr[li, 0, 2], luvr[li, 0, 1], luvr[li, 1, 2], luvr[li, 1, 1]]) + lnoise[:, 4:]

        tags_p = pi.astype(np.int64)
        tags_l = li.astype(np.int64)
        if cfg.tag_corruption > 0:
            bad = rng.random(len(pi)) < cfg.tag_corruption
            tags_p = np.where(bad, -1 - rng.integers(0, 1 << 30, len(pi)), tags_p)
            badl = rng.random(len(li)) < cfg.tag_corruption
            tags_l = np.where(badl, -1 - rng.integers(0, 1 << 30, len(li)), tags_l)

        okL, okR = _noisy_in_bounds(uvL, cam), _noisy_in_bounds(uvR, cam)
        lokL, lokR = _noisy_in_bounds(segL, cam), _noisy_in_bounds(segR, cam)
        frames.append(
            RawFrame(
                f,
                PointSet(uvL[okL], pi[okL], tags_p[okL], response_pt[pi][okL]),
                PointSet(uvR[okR], pi[okR], tags_p[okR], response_pt[pi][okR]),
                LineSet(segL[lokL], li[lokL], tags_l[lokL], response_ln[li][lokL]),
                LineSet(segR[lokR], li[lokR], tags_l[lokR], response_ln[li][lokR]),
                timestamp=float(f),
            )
        )

    gt = Trajectory(list(range(cfg.n_frames)), [T_wc[0].inverse() @ T for T in T_wc])
    return SyntheticSequence(cam, frames, gt, labels, P_static, L_static)


def oracle_correspondences(prev, curr):
    """Pair two :class:`StereoFrame` objects by feature id (ground-truth
    association, bypassing the tracker)."""
    _, pi, pj = np.intersect1d(prev.pt_ids, curr.pt_ids, return_indices=True)
    _, li, lj = np.intersect1d(prev.ln_ids, curr.ln_ids, return_indices=True)
    return Correspondences(
        pt_prev_idx=pi,
        pt_curr_idx=pj,
        pt_ids=curr.pt_ids[pj],
        pt_xyz=prev.pt_xyz[pi],
        pt_obs=curr.pt_uvL[pj],
        ln_prev_idx=li,
        ln_curr_idx=lj,
        ln_ids=curr.ln_ids[lj],
        ln_Xs=prev.ln_Xs[li],
        ln_Xe=prev.ln_Xe[li],
        ln_plucker=prev.ln_plucker[li],
        ln_obs=curr.ln_segL[lj],
    )


# ---------------------------------------------------------------------------
# scene configuration files


def _floats(value, n, key):
    parts = value.replace(",", " ").split()
    if len(parts) != n:
        raise ConfigError(f"{key} needs {n} numbers, got {value!r}")
    try:
        return tuple(float(x) for x in parts)
    except ValueError:
        raise ConfigError(f"bad numbers for {key}: {value!r}") from None


def scene_config_from_dict(d):
    """Build a :class:`SyntheticSceneConfig` from ``key = value`` strings.

    Scalar keys mirror the dataclass fields. ``step``, ``depth_range`` and
    ``line_length`` take space-separated numbers, ``camera`` takes
    ``fx fy cx cy baseline width height`` and ``path_file`` names a file
    with one 6-number twist per line. ``placement_frames`` extends the
    constant-velocity path used for landmark placement. Objects use prefixed keys such as
    ``object0.velocity = 0.15 0 0.3``.
    """
    d = dict(d)
    kw = {}
    objs = {}
    ints = {"n_static_points", "n_static_lines", "n_frames", "seed"}
    floats = {"sigma", "margin", "tag_corruption"}
    obj_fields = {"n_points": int, "n_lines": int, "start_frame": int, "velocity": 3, "position": 3, "size": 2}
    for key, value in d.items():
        try:
            if key in ints:
                kw[key] = int(value)
            elif key in floats:
                kw[key] = float(value)
            elif key == "step":
                kw[key] = _floats(value, 6, key)
            elif key in ("depth_range", "line_length"):
                kw[key] = _floats(value, 2, key)
            elif key == "camera":
                c = _floats(value, 7, key)
                kw[key] = CameraModel(*c[:5], int(c[5]), int(c[6]))
            elif key == "placement_frames":
                kw["placement_path"] = int(value)
            elif key == "path_file":
                kw["path"] = np.loadtxt(value, ndmin=2)
            elif key.startswith("object") and "." in key:
                head, name = key.split(".", 1)
                idx = int(head[len("object") :])
                if name not in obj_fields:
                    raise ConfigError(f"unknown object key {key!r}")
                typ = obj_fields[name]
                objs.setdefault(idx, {})[name] = int(value) if typ is int else _floats(value, typ, key)
            elif key == "n_dynamic_objects":
                for i in range(int(value)):
                    objs.setdefault(i, {})
            else:
                raise ConfigError(f"unknown scene key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    kw["objects"] = [DynamicObjectConfig(**objs[i]) for i in sorted(objs)]
    if isinstance(kw.get("placement_path"), int):
        kw["placement_path"] = constant_velocity_path(kw["placement_path"], kw.get("step", SyntheticSceneConfig.step))
    return SyntheticSceneConfig(**kw)


def write_synthetic(seq, out_dir):
    """Write ``calib.txt``, ``features.txt``, ``gt.txt`` (KITTI) and
    ``labels.txt`` into ``out_dir``; returns the paths by name."""
    from .io import write_calibration, write_features, write_labels, write_trajectory

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.txt" for name in ("calib", "features", "gt", "labels")}
    write_calibration(seq.camera, paths["calib"])
    write_features(seq.frames, paths["features"], seq.camera)
    write_trajectory(seq.gt, paths["gt"], "kitti")
    write_labels(seq.labels, paths["labels"])
    return paths
