"""Synthetic sequences and the GOT-10K-style on-disk layout.

Layout, one directory per sequence::

    <root>/list.txt              sequence names, one per line
    <root>/<seq>/00000001.ppm    binary PPM (P6) frames
    <root>/<seq>/groundtruth.txt "x,y,w,h" per frame (top-left + size)
"""
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, zoom

from .bbox import BBox
from .config import read_kv, seed_override

MOTIONS = ("static", "linear", "sinusoidal")


@dataclass(frozen=True)
class SyntheticSpec:
    canvas: int = 192
    size_min: int = 20
    size_max: int = 36
    motion: str = "linear"  # static | linear | sinusoidal | mixed
    vx: float = float("nan")  # nan: drawn per sequence from max_speed
    vy: float = float("nan")
    max_speed: float = 3.0
    scale_amplitude: float = 0.3
    scale_period: float = 40.0
    distractors: int = 2
    noise: float = 6.0
    frames: int = 50
    num_sequences: int = 1
    seed: int = 0
    prefix: str = "seq"

    def __post_init__(self):
        if self.motion not in MOTIONS + ("mixed",):
            raise ValueError(f"unknown motion model {self.motion!r}")
        if not 4 <= self.size_min <= self.size_max:
            raise ValueError("need 4 <= size_min <= size_max")
        if self.size_max * (1 + self.scale_amplitude) > self.canvas:
            raise ValueError("objects must fit on the canvas")
        if self.frames < 1 or self.num_sequences < 1:
            raise ValueError("frames and num_sequences must be positive")

    @classmethod
    def from_mapping(cls, values, source="<spec>"):
        names = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(names)
        if unknown:
            raise ValueError(f"{source}: unknown keys {sorted(unknown)}")
        kw = {}
        for key, raw in values.items():
            typ = type(names[key].default)
            kw[key] = typ(raw) if typ is not str else raw
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        spec = cls.from_mapping(read_kv(path), source=str(path))
        seed = seed_override(spec.seed)
        return spec if seed == spec.seed else replace(spec, seed=seed)


# ----------------------------------------------------------------------------
# rendering

def _texture(rng, h, w, cells=4):
    """Blocky colour pattern, lightly blurred: a distinctive object appearance."""
    base = rng.uniform(0, 255, size=(3, cells, cells))
    tex = zoom(base, (1, h / cells, w / cells), order=0)[:, :h, :w]
    return gaussian_filter(tex, sigma=(0, 1.0, 1.0))


def _background(rng, size):
    low = rng.normal(0, 1, size=(3, size, size))
    low = gaussian_filter(low, sigma=(0, 12, 12))
    low = low / (np.abs(low).max() + 1e-12)
    base = rng.uniform(60, 190, size=(3, 1, 1))
    return base + 50 * low


def _paste(canvas, tex, x, y, w, h):
    """Resize ``tex`` to w×h and paste with top-left (x, y), clipped to the canvas."""
    w, h = int(round(w)), int(round(h))
    x, y = int(round(x)), int(round(y))
    if w < 1 or h < 1:
        return
    patch = zoom(tex, (1, h / tex.shape[1], w / tex.shape[2]), order=1)[:, :h, :w]
    H, W = canvas.shape[1:]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + patch.shape[2], W), min(y + patch.shape[1], H)
    if x1 <= x0 or y1 <= y0:
        return
    canvas[:, y0:y1, x0:x1] = patch[:, y0 - y:y1 - y, x0 - x:x1 - x]


def _bounce(pos, vel, lo, hi, n):
    """Positions under constant velocity, reflecting off [lo, hi]."""
    out = []
    p, v = pos, vel
    for _ in range(n):
        out.append(p)
        p += v
        if p < lo:
            p, v = 2 * lo - p, -v
        elif p > hi:
            p, v = 2 * hi - p, -v
    return out


def _trajectory(spec, motion, rng):
    n, C = spec.frames, spec.canvas
    w = float(rng.integers(spec.size_min, spec.size_max + 1))
    h = float(rng.integers(spec.size_min, spec.size_max + 1))
    if motion == "sinusoidal":
        phase = rng.uniform(0, 2 * math.pi)
        amp = spec.scale_amplitude
        s = [1.0 + amp * math.sin(2 * math.pi * t / spec.scale_period + phase) for t in range(n)]
        cx = rng.uniform(w * 0.8, C - w * 0.8)
        cy = rng.uniform(h * 0.8, C - h * 0.8)
        boxes = []
        for f in s:
            bw, bh = round(w * f), round(h * f)
            boxes.append((round(cx - bw / 2), round(cy - bh / 2), bw, bh))
        return boxes
    if motion == "static":
        vx = vy = 0.0
    else:
        if math.isnan(spec.vx) or math.isnan(spec.vy):
            ang = rng.uniform(0, 2 * math.pi)
            speed = rng.uniform(0.5, 1.0) * spec.max_speed
            vx, vy = speed * math.cos(ang), speed * math.sin(ang)
        else:
            vx, vy = spec.vx, spec.vy
    xs = _start_and_path(rng, C - w, vx, n)
    ys = _start_and_path(rng, C - h, vy, n)
    return [(round(x), round(y), w, h) for x, y in zip(xs, ys)]


def _start_and_path(rng, hi, v, n):
    span = abs(v) * (n - 1)
    if span <= hi:
        start = rng.uniform(0, hi - span) + (span if v < 0 else 0.0)
        return [start + v * t for t in range(n)]
    return _bounce(rng.uniform(0, hi), v, 0.0, hi, n)


def render_sequence(spec, index=0):
    """Frames (list of H×W×3 uint8) and ground-truth (x, y, w, h) tuples."""
    rng = np.random.default_rng([spec.seed, index])
    motion = MOTIONS[index % 3] if spec.motion == "mixed" else spec.motion
    gt = _trajectory(spec, motion, rng)
    bg = _background(rng, spec.canvas)
    target_tex = _texture(rng, 32, 32)
    distractors = []
    for _ in range(spec.distractors):
        dw, dh = rng.integers(spec.size_min, spec.size_max + 1, size=2)
        ang = rng.uniform(0, 2 * math.pi)
        sp = rng.uniform(0, spec.max_speed)
        path_x = _bounce(rng.uniform(0, spec.canvas - dw), sp * math.cos(ang), 0, spec.canvas - dw, spec.frames)
        path_y = _bounce(rng.uniform(0, spec.canvas - dh), sp * math.sin(ang), 0, spec.canvas - dh, spec.frames)
        distractors.append((_texture(rng, 32, 32), dw, dh, path_x, path_y))
    frames = []
    for t, (x, y, w, h) in enumerate(gt):
        canvas = bg.copy()
        for tex, dw, dh, px, py in distractors:
            _paste(canvas, tex, px[t], py[t], dw, dh)
        _paste(canvas, target_tex, x, y, w, h)
        canvas += rng.normal(0, spec.noise, size=canvas.shape)
        frames.append(np.clip(np.rint(canvas), 0, 255).astype(np.uint8).transpose(1, 2, 0))
    return frames, [tuple(float(v) for v in b) for b in gt]


def generate_sequence(spec, out_dir, index=0):
    """Render one sequence to ``out_dir`` (frames + groundtruth.txt)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, gt = render_sequence(spec, index)
    for t, frame in enumerate(frames, start=1):
        write_frame(out_dir / f"{t:08d}.ppm", frame)
    write_boxes(out_dir / "groundtruth.txt", gt)
    return out_dir


def generate_corpus(spec, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = [f"{spec.prefix}{i:03d}" for i in range(spec.num_sequences)]
    for i, name in enumerate(names):
        generate_sequence(spec, root / name, index=i)
    (root / "list.txt").write_text("".join(n + "\n" for n in names))
    return names


# ----------------------------------------------------------------------------
# I/O

def write_frame(path, frame):
    Image.fromarray(frame, mode="RGB").save(path, format="PPM")


def read_frame(path):
    """Channels-first float64 image (3×H×W, 0..255)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _fmt(v):
    return f"{v:.4f}".rstrip("0").rstrip(".")


def write_boxes(path, boxes):
    """``boxes``: (x, y, w, h) tuples or BBox objects."""
    lines = []
    for b in boxes:
        xywh = b.to_xywh() if isinstance(b, BBox) else b
        lines.append(",".join(_fmt(float(v)) for v in xywh))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_box(line, where):
    parts = line.replace("\t", ",").replace(" ", ",").split(",")
    parts = [p for p in parts if p]
    if len(parts) != 4:
        raise ValueError(f"{where}: expected x,y,w,h, got {line!r}")
    return BBox.from_xywh(*map(float, parts))


def read_boxes(path):
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return [_parse_box(ln, f"{path}:{i}") for i, ln in enumerate(lines, start=1) if ln]


def read_init_box(seq_dir):
    """First ground-truth box only: the one thing a tracker may see."""
    with open(Path(seq_dir) / "groundtruth.txt") as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                return _parse_box(line.strip(), f"{seq_dir}/groundtruth.txt:{i}")
    raise ValueError(f"{seq_dir}: empty groundtruth.txt")


def frame_paths(seq_dir):
    paths = sorted(Path(seq_dir).glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"{seq_dir}: no .ppm frames")
    return paths


def list_sequences(root):
    root = Path(root)
    listing = root / "list.txt"
    if listing.exists():
        names = [n.strip() for n in listing.read_text().splitlines() if n.strip()]
    else:
        names = sorted(p.name for p in root.iterdir() if (p / "groundtruth.txt").exists())
    if not names:
        raise FileNotFoundError(f"{root}: no sequences")
    return names
