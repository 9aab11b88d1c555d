"""Text formats: calibration, feature observations, trajectories, labels and
``key = value`` configuration files.

Feature observation file
------------------------
One record per line, whitespace separated::

    frame_id cam kind feature_id c1 c2 [c3 c4] [descriptor [response]]

``cam`` is ``L`` or ``R``; ``kind`` is ``P`` (coords ``u v``) or ``L``
(coords ``us vs ue ve``). ``descriptor`` is ``-`` (none), ``t<int>`` (an
identity tag) or 64 hex digits (a 256-bit binary descriptor). Lines
starting with ``#`` are comments, except ``# size W H`` which declares the
image bounds and ``# frame N`` which declares frame ``N`` even when it has
no records. Records must be sorted by ``frame_id``.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import fields
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, ParseError
from ..frame_grid import LineSet, PointSet, RawFrame
from ..geometry import CameraModel, GeometryError, Pose
from .metrics import Trajectory

log = logging.getLogger(__name__)

KITTI_DEFAULT_SIZE = (1241, 376)
_HEX256 = re.compile(r"^[0-9a-fA-F]{64}$")


def _fmt(x, decimals=12):
    s = f"{x:.{decimals}f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


# ---------------------------------------------------------------------------
# calibration


def load_calibration(path, width=None, height=None):
    """Read a camera model.

    Accepts either a single data line ``fx fy cx cy baseline width height`` or
    a KITTI ``calib.txt`` with ``P0:``/``P1:`` projection rows (baseline
    ``-P1[0,3] / fx``). KITTI files carry no image size; pass ``width`` and
    ``height`` or add a ``size: W H`` line.
    """
    path = Path(path)
    text = path.read_text().splitlines()
    rows = {}
    plain = []
    for lineno, line in enumerate(text, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if ":" in stripped:
            key, rest = stripped.split(":", 1)
            try:
                rows[key.strip()] = ([float(x) for x in rest.split()], lineno)
            except ValueError:
                raise ParseError(f"malformed numbers in {key.strip()!r} row", path, lineno) from None
        else:
            try:
                plain.append(([float(x) for x in stripped.split()], lineno))
            except ValueError:
                raise ParseError("malformed numbers", path, lineno) from None

    if "P0" in rows and "P1" in rows:
        P0, ln0 = rows["P0"]
        P1, ln1 = rows["P1"]
        if len(P0) != 12 or len(P1) != 12:
            raise ParseError("projection rows need 12 numbers", path, ln0 if len(P0) != 12 else ln1)
        fx, cx, fy, cy = P0[0], P0[2], P0[5], P0[6]
        if not fx > 0:
            raise ParseError(f"fx must be positive, got {fx}", path, ln0)
        baseline = -P1[3] / P1[0]
        if "size" in rows:
            width, height = rows["size"][0][:2]
        if width is None or height is None:
            width, height = KITTI_DEFAULT_SIZE
            log.warning("%s: no image size given, assuming KITTI %dx%d", path, width, height)
        values = [fx, fy, cx, cy, baseline, width, height]
        lineno = ln1
    else:
        if len(plain) != 1:
            raise ParseError("expected exactly one line 'fx fy cx cy baseline width height'", path)
        values, lineno = plain[0]
        if len(values) != 7:
            raise ParseError(f"expected 7 numbers, got {len(values)}", path, lineno)
    for name, value in zip(("fx", "fy", "baseline", "width", "height"), (values[0], values[1], values[4], values[5], values[6])):
        if not (math.isfinite(value) and value > 0):
            raise ParseError(f"{name} must be positive, got {value}", path, lineno)
    fx, fy, cx, cy, baseline, w, h = values
    try:
        return CameraModel(fx, fy, cx, cy, baseline, int(round(w)), int(round(h)))
    except GeometryError as exc:
        raise ParseError(str(exc), path, lineno) from None


def write_calibration(cam, path):
    vals = [cam.fx, cam.fy, cam.cx, cam.cy, cam.baseline]
    Path(path).write_text(" ".join(repr(float(v)) for v in vals) + f" {cam.width} {cam.height}\n")


# ---------------------------------------------------------------------------
# features


def _parse_descriptor(tok, path, lineno):
    if tok == "-":
        return None
    if tok.startswith("t"):
        try:
            return int(tok[1:])
        except ValueError:
            raise ParseError(f"bad identity tag {tok!r}", path, lineno) from None
    if _HEX256.match(tok):
        return bytes.fromhex(tok)
    raise ParseError(f"bad descriptor {tok!r}", path, lineno)


def _stack_desc(descs):
    if not descs or any(d is None for d in descs):
        return None
    if all(isinstance(d, int) for d in descs):
        return np.array(descs, dtype=np.int64)
    if all(isinstance(d, bytes) for d in descs):
        return np.frombuffer(b"".join(descs), dtype=np.uint8).reshape(len(descs), 32).copy()
    raise ParseError("mixed descriptor kinds within one frame")


def _build_frame(frame_id, recs):
    out = {}
    for cam in "LR":
        pts = [r for r in recs if r[0] == cam and r[1] == "P"]
        lns = [r for r in recs if r[0] == cam and r[1] == "L"]
        out[cam, "P"] = PointSet(
            np.array([r[3] for r in pts], dtype=float).reshape(-1, 2),
            np.array([r[2] for r in pts], dtype=np.int64),
            _stack_desc([r[4] for r in pts]),
            np.array([r[5] for r in pts], dtype=float),
        )
        out[cam, "L"] = LineSet(
            np.array([r[3] for r in lns], dtype=float).reshape(-1, 4),
            np.array([r[2] for r in lns], dtype=np.int64),
            _stack_desc([r[4] for r in lns]),
            np.array([r[5] for r in lns], dtype=float),
        )
    return RawFrame(frame_id, out["L", "P"], out["R", "P"], out["L", "L"], out["R", "L"])


def load_features(path, cam=None):
    """Group feature records into per-frame :class:`RawFrame` objects.

    Records outside the image bounds (from ``cam`` or a ``# size`` header)
    are skipped. Returns ``(frames, n_skipped)``.
    """
    path = Path(path)
    size = (cam.width, cam.height) if cam is not None else None
    frames = []
    current_id, current = None, []
    skipped = 0

    def start(frame_id, lineno):
        nonlocal current_id, current
        if current_id is not None and frame_id < current_id:
            raise ParseError("records are not sorted by frame_id", path, lineno)
        if frame_id != current_id:
            if current_id is not None:
                frames.append(_build_frame(current_id, current))
            current_id, current = frame_id, []

    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if size is None and len(parts) == 3 and parts[0] == "size":
                    size = (float(parts[1]), float(parts[2]))
                elif len(parts) == 2 and parts[0] == "frame":
                    try:
                        marked = int(parts[1])
                    except ValueError:
                        raise ParseError(f"bad frame marker {s!r}", path, lineno) from None
                    start(marked, lineno)
                continue
            tok = s.split()
            if len(tok) < 6:
                raise ParseError("too few fields", path, lineno)
            try:
                frame_id = int(tok[0])
                feature_id = int(tok[3])
            except ValueError:
                raise ParseError("frame_id and feature_id must be integers", path, lineno) from None
            cam_tag, kind = tok[1], tok[2]
            if cam_tag not in ("L", "R") or kind not in ("P", "L"):
                raise ParseError(f"bad camera/kind {cam_tag!r} {kind!r}", path, lineno)
            nc = 2 if kind == "P" else 4
            if len(tok) < 4 + nc:
                raise ParseError("too few coordinates", path, lineno)
            try:
                coords = [float(x) for x in tok[4 : 4 + nc]]
            except ValueError:
                raise ParseError("malformed coordinates", path, lineno) from None
            rest = tok[4 + nc :]
            if len(rest) > 2:
                raise ParseError("too many fields", path, lineno)
            desc = _parse_descriptor(rest[0], path, lineno) if rest else None
            try:
                response = float(rest[1]) if len(rest) > 1 else 1.0
            except ValueError:
                raise ParseError("malformed response", path, lineno) from None
            start(frame_id, lineno)
            if size is not None:
                xy = np.array(coords).reshape(-1, 2)
                inside = (xy[:, 0] >= 0) & (xy[:, 0] < size[0]) & (xy[:, 1] >= 0) & (xy[:, 1] < size[1])
                if not inside.all():
                    skipped += 1
                    continue
            current.append((cam_tag, kind, feature_id, coords, desc, response))
    if current_id is not None:
        frames.append(_build_frame(current_id, current))
    return frames, skipped


def _desc_token(desc, k):
    if desc is None:
        return "-"
    if desc.ndim == 1:
        return f"t{int(desc[k])}"
    return bytes(desc[k]).hex()


def write_features(frames, path, cam=None):
    lines = []
    if cam is not None:
        lines.append(f"# size {cam.width} {cam.height}")
    for raw in frames:
        lines.append(f"# frame {raw.frame_id}")
        for tag, ps, ls in (("L", raw.left_points, raw.left_lines), ("R", raw.right_points, raw.right_lines)):
            for k in range(len(ps)):
                u, v = (float(x) for x in ps.uv[k])
                lines.append(
                    f"{raw.frame_id} {tag} P {int(ps.ids[k])} {u!r} {v!r} "
                    f"{_desc_token(ps.desc, k)} {float(ps.response[k])!r}"
                )
            for k in range(len(ls)):
                c = " ".join(repr(float(x)) for x in ls.seg[k])
                lines.append(
                    f"{raw.frame_id} {tag} L {int(ls.ids[k])} {c} "
                    f"{_desc_token(ls.desc, k)} {float(ls.response[k])!r}"
                )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# trajectories


def _quat_from_R(R):
    # Shepperd's method, w >= 0
    m = R
    tr = np.trace(m)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
    q = np.array(q)
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def _R_from_quat(qx, qy, qz, qw):
    q = np.array([qx, qy, qz, qw], dtype=float)
    n = np.linalg.norm(q)
    if not n > 0:
        raise ValueError("zero quaternion")
    x, y, z, w = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def format_pose(pose, fmt="kitti", frame_id=0, decimals=12):
    if fmt == "kitti":
        M = pose.matrix()[:3]
        return " ".join(_fmt(x, decimals) for x in M.ravel())
    if fmt == "tum":
        q = _quat_from_R(pose.R)
        vals = [*pose.t, *q]
        return f"{frame_id} " + " ".join(_fmt(x, decimals) for x in vals)
    raise ConfigError(f"unknown trajectory format {fmt!r}")


def write_trajectory(traj, path, fmt="kitti", decimals=12):
    """Write poses as KITTI rows (3x4, row-major) or TUM rows
    ``timestamp tx ty tz qx qy qz qw`` (timestamp = frame id)."""
    traj = traj if isinstance(traj, Trajectory) else Trajectory.from_pairs(traj)
    body = [format_pose(p, fmt, i, decimals) for i, p in zip(traj.frame_ids, traj.poses)]
    Path(path).write_text("\n".join(body) + ("\n" if body else ""))


def read_trajectory(path, fmt="kitti"):
    path = Path(path)
    ids, poses = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            vals = [float(x) for x in s.split()]
        except ValueError:
            raise ParseError("malformed number", path, lineno) from None
        if fmt == "kitti":
            if len(vals) != 12:
                raise ParseError(f"expected 12 numbers, got {len(vals)}", path, lineno)
            ids.append(len(ids))
            poses.append(Pose.from_matrix(np.array(vals).reshape(3, 4)))
        elif fmt == "tum":
            if len(vals) != 8:
                raise ParseError(f"expected 8 numbers, got {len(vals)}", path, lineno)
            stamp = vals[0]
            if stamp != int(stamp):
                raise ParseError("timestamps must be integral frame ids", path, lineno)
            try:
                R = _R_from_quat(*vals[4:])
            except ValueError:
                raise ParseError("zero quaternion", path, lineno) from None
            ids.append(int(stamp))
            poses.append(Pose(R, vals[1:4]))
        else:
            raise ConfigError(f"unknown trajectory format {fmt!r}")
    try:
        return Trajectory(ids, poses)
    except ValueError as exc:
        raise ParseError(str(exc), path) from None


# ---------------------------------------------------------------------------
# labels


def write_labels(labels, path):
    """``kind feature_id static|dynamic`` rows; ``labels`` maps
    ``(kind, id) -> is_dynamic``."""
    rows = [f"{k} {i} {'dynamic' if d else 'static'}" for (k, i), d in sorted(labels.items())]
    Path(path).write_text("\n".join(rows) + ("\n" if rows else ""))


def read_labels(path):
    path = Path(path)
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 3 or tok[0] not in ("P", "L") or tok[2] not in ("static", "dynamic"):
            raise ParseError("expected 'kind feature_id static|dynamic'", path, lineno)
        out[tok[0], int(tok[1])] = tok[2] == "dynamic"
    return out


# ---------------------------------------------------------------------------
# key = value configuration


def read_config(path):
    """Parse ``key = value`` lines (``#`` comments) into a dict of strings."""
    path = Path(path)
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ParseError("expected 'key = value'", path, lineno)
        key, value = (x.strip() for x in s.split("=", 1))
        if not key:
            raise ParseError("empty key", path, lineno)
        out[key] = value
    return out


def _coerce(value, typ, key):
    typ = typ if isinstance(typ, type) else {"bool": bool, "int": int, "float": float, "str": str}.get(str(typ), str)
    try:
        if typ is bool:
            low = str(value).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None


def apply_overrides(cls, overrides, base=None):
    """Instantiate dataclass ``cls`` from ``base`` (or defaults) updated with
    string ``overrides``; unknown keys raise :class:`ConfigError`."""
    known = {f.name: f for f in fields(cls)}
    values = {} if base is None else {k: getattr(base, k) for k in known}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = _coerce(value, known[key].type, key)
    return cls(**values)
