"""Parameter container tying the backbone, the 1x1 reduction and the head together."""
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import coerce, read_kv, write_kv
from .fusion import BackboneConfig, extract_features, fuse
from .head import head_forward, head_param_shapes
from .tensor import ShapeError, Tensor, load_tensor, save_tensor

MANIFEST = "manifest.txt"


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    reduced_channels: int = 16
    tower_channels: int = 16
    tower_depth: int = 2
    template_size: int = 64
    search_size: int = 128

    @property
    def stride(self):
        return self.backbone.total_stride

    @property
    def score_size(self):
        b = self.backbone
        return b.feature_size(self.search_size) - b.feature_size(self.template_size) + 1

    def param_shapes(self):
        shapes = dict(self.backbone.param_shapes())
        shapes["neck.reduce.w"] = (self.reduced_channels, self.backbone.feature_channels, 1, 1)
        shapes.update(head_param_shapes(self.reduced_channels, self.tower_channels, self.tower_depth))
        return shapes

    def to_kv(self):
        flat = {k: v for k, v in asdict(self).items() if k != "backbone"}
        flat.update({f"backbone.{k}": v for k, v in asdict(self.backbone).items()})
        return {f"config.{k}": ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
                for k, v in flat.items()}

    @classmethod
    def from_kv(cls, kv):
        bb_fields = asdict(BackboneConfig())
        top_fields = {k: v for k, v in asdict(cls()).items() if k != "backbone"}
        bb = {k[len("config.backbone."):]: v for k, v in kv.items() if k.startswith("config.backbone.")}
        top = {k[len("config."):]: v for k, v in kv.items()
               if k.startswith("config.") and not k.startswith("config.backbone.")}
        backbone = BackboneConfig(**coerce(bb_fields, bb, MANIFEST))
        return cls(backbone=backbone, **coerce(top_fields, top, MANIFEST))


def _init_value(name, shape, rng):
    if name.endswith(".b"):
        return np.zeros(shape)
    fan_in = int(np.prod(shape[1:]))
    if name == "neck.reduce.w":
        # correlation sums over the whole template window: keep the reduced map O(1)
        return rng.normal(0.0, 1.0 / fan_in, size=shape)
    if name.endswith("proj.w"):
        return rng.normal(0.0, 0.01, size=shape)
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class SiamCARModel:
    """Named float64 parameters plus the forward passes that use them."""

    def __init__(self, config, params):
        expected = config.param_shapes()
        missing = set(expected) - set(params)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != tuple(shape):
                raise ShapeError(f"{name}: expected {shape}, got {tuple(params[name].shape)}")
        self.config = config
        self.params = {name: params[name] for name in expected}
        for name, p in self.params.items():
            p.name = name

    @classmethod
    def initialize(cls, config=None, seed=0):
        config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        params = {name: Tensor(_init_value(name, shape, rng)) for name, shape in config.param_shapes().items()}
        return cls(config, params)

    def backbone_params(self):
        return {k: v for k, v in self.params.items() if k.startswith("backbone.")}

    def head_params(self):
        return {k: v for k, v in self.params.items() if not k.startswith("backbone.")}

    @staticmethod
    def normalize(crop):
        # roughly unit-variance input for 0..255 pixels
        return Tensor((np.asarray(crop, dtype=np.float64) - 127.5) / 64.0)

    def features(self, crop):
        """Backbone features of a raw 0..255 crop (3×S×S)."""
        return extract_features(self.normalize(crop), self.config.backbone, self.params)

    def fuse(self, search_feat, template_feat):
        return fuse(search_feat, template_feat, self.params["neck.reduce.w"],
                    stride=self.config.stride, search_size=self.config.search_size)

    def head(self, response):
        return head_forward(response, self.params)

    def forward(self, template_crop, search_crop):
        fused = self.fuse(self.features(search_crop), self.features(template_crop))
        return fused, self.head(fused.response)

    # -- persistence ------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = dict(self.config.to_kv())
        for name, p in self.params.items():
            save_tensor(directory / f"{name}.tnsr", p)
            manifest[f"param.{name}"] = "x".join(map(str, p.shape))
        write_kv(directory / MANIFEST, manifest)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        kv = read_kv(directory / MANIFEST)
        config = ModelConfig.from_kv({k: v for k, v in kv.items() if k.startswith("config.")})
        params = {}
        for key, shape in kv.items():
            if not key.startswith("param."):
                continue
            name = key[len("param."):]
            t = load_tensor(directory / f"{name}.tnsr")
            if "x".join(map(str, t.shape)) != shape:
                raise ShapeError(f"{name}: manifest says {shape}, file holds {t.shape}")
            params[name] = t
        return cls(config, params)
