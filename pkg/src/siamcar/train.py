"""Desk-scale SGD training on template/search pairs cut from synthetic sequences."""
import csv
import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .bbox import BBox
from .config import coerce, read_kv, seed_override
from .crop import context_size, crop_and_resize
from .data import frame_paths, list_sequences, read_boxes, read_frame
from .head import centerness_score, encode_targets, total_loss
from .model import ModelConfig, SiamCARModel
from .tensor import Tape
from .tracker import search_grid

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    freeze_epochs: int = 0  # the toy backbone starts random, nothing to protect
    steps_per_epoch: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 16
    lambda1: float = 1.0
    lambda2: float = 3.0
    seed: int = 42
    max_gap: int = 10
    context: float = 0.5
    grad_clip: float = 10.0  # global-norm clip, 0 disables
    lr_schedule: str = "cosine"  # constant | cosine (anneal to 0 over total_steps)

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, steps_per_epoch and batch_size must be positive")
        if not 0 <= self.freeze_epochs <= self.epochs:
            raise ValueError("freeze_epochs must lie in [0, epochs]")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch

    def lr_at(self, step):
        if self.lr_schedule == "cosine":
            return 0.5 * self.lr * (1.0 + math.cos(math.pi * step / self.total_steps))
        return self.lr

    @classmethod
    def from_mapping(cls, values, source="<config>"):
        names = {f.name: f.default for f in fields(cls)}
        cfg = cls(**coerce(names, values, source))
        seed = seed_override(cfg.seed)
        return cfg if seed == cfg.seed else replace(cfg, seed=seed)

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(read_kv(path), source=str(path))


class PairSampler:
    """Template from one frame, search region from another frame of the same sequence.

    The search crop is centred on the box of a *reference* frame up to
    ``max_gap`` frames before the search frame and sized from the template
    box, which is where and how a tracker would look; the target's displacement
    and scale change inside the crop come from real motion.
    """

    def __init__(self, root, model_config, rng, max_gap=10, context=0.5):
        self.root = Path(root)
        self.cfg = model_config
        self.rng = rng
        self.max_gap = max_gap
        self.context = context
        self.names = list_sequences(self.root)
        self.boxes = {n: read_boxes(self.root / n / "groundtruth.txt") for n in self.names}
        self.paths = {n: frame_paths(self.root / n) for n in self.names}
        for n in self.names:
            if len(self.paths[n]) != len(self.boxes[n]):
                raise ValueError(f"{n}: {len(self.paths[n])} frames but {len(self.boxes[n])} boxes")
        self._cache = {}
        size = model_config.score_size
        self.grid = search_grid(size, model_config.stride, model_config.search_size)

    def _frame(self, name, idx):
        key = (name, idx)
        if key not in self._cache:
            self._cache[key] = read_frame(self.paths[name][idx])
        return self._cache[key]

    def sample(self):
        cfg = self.cfg
        name = self.names[int(self.rng.integers(len(self.names)))]
        n = len(self.boxes[name])
        t_tmpl = int(self.rng.integers(n))
        t_search = int(self.rng.integers(n))
        t_ref = max(0, t_search - int(self.rng.integers(self.max_gap + 1)))
        gz = self.boxes[name][t_tmpl]
        gref = self.boxes[name][t_ref]
        gx = self.boxes[name][t_search]

        s_z = context_size(gz.width, gz.height, self.context)
        template = crop_and_resize(self._frame(name, t_tmpl), gz.center, s_z, cfg.template_size)

        # scale from the template box, as a tracker holding the initial size would crop
        scale = cfg.template_size / s_z
        s_x = s_z * cfg.search_size / cfg.template_size
        search = crop_and_resize(self._frame(name, t_search), gref.center, s_x, cfg.search_size)

        half = cfg.search_size / 2.0
        cx, cy = gref.center
        gt = BBox((gx.x0 - cx) * scale + half, (gx.y0 - cy) * scale + half,
                  (gx.x1 - cx) * scale + half, (gx.y1 - cy) * scale + half)
        return template, search, gt


def pair_loss(model, template, search, gt, grid, lambda1, lambda2):
    _, out = model.forward(template, search)
    reg = out.reg.data
    if not np.all(np.isfinite(reg)) or np.any(reg <= 0):
        # exp() over/underflowed: the raw regression output has run off
        raise TrainingDiverged(f"regression output left the representable range "
                               f"(min {reg.min():.3g}, max {reg.max():.3g})")
    target = encode_targets(gt, grid)
    return total_loss(out, target, centerness_score(target), lambda1, lambda2)


def _set_trainable(model, train_backbone):
    for name, p in model.params.items():
        p.requires_grad = train_backbone or not name.startswith("backbone.")


def train(data_dir, config, out_dir=None, model_config=None, model=None, progress=None):
    """SGD with momentum on the total loss; backbone frozen for ``freeze_epochs``.

    Returns ``(model, rows)`` where ``rows`` is the per-step loss log. When
    ``out_dir`` is given, weights and ``loss_log.csv`` are written there.
    """
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = SiamCARModel.initialize(model_config or ModelConfig(), seed=config.seed)
    sampler = PairSampler(data_dir, model.config, rng, config.max_gap, config.context)
    velocity = {name: np.zeros(p.shape) for name, p in model.params.items()}
    rows = []
    for step in range(config.total_steps):
        epoch = step // config.steps_per_epoch
        frozen = epoch < config.freeze_epochs
        _set_trainable(model, not frozen)
        for p in model.params.values():
            p.zero_grad()
        sums = {"total": 0.0, "cls": 0.0, "cen": 0.0, "reg": 0.0}
        for _ in range(config.batch_size):
            template, search, gt = sampler.sample()
            with Tape() as tape:
                try:
                    bundle = pair_loss(model, template, search, gt, sampler.grid, config.lambda1, config.lambda2)
                except TrainingDiverged as exc:
                    raise TrainingDiverged(f"step {step} (epoch {epoch}): {exc}") from None
                loss = bundle.total * (1.0 / config.batch_size)
                tape.backward(loss)
            for k, v in bundle.values().items():
                sums[k] += v / config.batch_size
        if not all(math.isfinite(v) for v in sums.values()):
            raise TrainingDiverged(f"non-finite loss at step {step} (epoch {epoch}): {sums}")
        trainable = {n: p for n, p in model.params.items() if p.requires_grad and p.grad is not None}
        clip = 1.0
        if config.grad_clip > 0:
            norm = math.sqrt(sum(float((p.grad ** 2).sum()) for p in trainable.values()))
            clip = min(1.0, config.grad_clip / (norm + 1e-12))
        lr = config.lr_at(step)
        for name, p in trainable.items():
            g = clip * p.grad + config.weight_decay * p.data
            velocity[name] = config.momentum * velocity[name] + g
            p.assign(p.data - lr * velocity[name])
        rows.append({"step": step, "epoch": epoch, "frozen": int(frozen), **sums})
        if progress is not None:
            progress(rows[-1])
    _set_trainable(model, True)
    if out_dir is not None:
        out_dir = Path(out_dir)
        model.save(out_dir)
        write_loss_log(out_dir / "loss_log.csv", rows)
    return model, rows


def write_loss_log(path, rows):
    cols = ["step", "epoch", "frozen", "total", "cls", "cen", "reg"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["step"], r["epoch"], r["frozen"]] + [repr(float(r[c])) for c in cols[3:]])


def read_loss_log(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
