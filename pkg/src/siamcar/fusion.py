"""Siamese feature extraction and depth-wise correlation fusion.

The toy backbone is a stride-4 stem followed by three tapped stages
(stride 2, 1, 1). The three tap outputs share one resolution, are stacked
along channels, correlated channel-by-channel (search vs. template as kernel)
and squeezed by a 1x1 convolution into the response map fed to the head.
"""
from dataclasses import dataclass

from .tensor import ShapeError, Tensor, concat_channels, conv2d, depthwise_xcorr, relu


@dataclass(frozen=True)
class BackboneConfig:
    stage_channels: tuple = (8, 8, 8)
    kernel_sizes: tuple = (4, 3, 3)
    stage_strides: tuple = (2, 1, 1)
    stem_channels: int = 8
    stem_kernel: int = 4
    stem_stride: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stage_channels) != 3 or len(self.kernel_sizes) != 3 or len(self.stage_strides) != 3:
            raise ValueError("the backbone has exactly three tap points")
        if min(self.stage_channels) < 1 or min(self.stage_strides) < 1 or self.stem_stride < 1:
            raise ValueError("channels and strides must be positive")
        if self.stage_strides[1] != 1 or self.stage_strides[2] != 1:
            raise ValueError("taps 2 and 3 must keep the tap-1 resolution (stride 1)")
        for k, s in zip(self.kernel_sizes[1:], self.stage_strides[1:]):
            if k % 2 == 0:
                raise ValueError(f"stride-{s} stages need odd kernels to preserve resolution, got {k}")

    @property
    def total_stride(self):
        return self.stem_stride * self.stage_strides[0]

    @property
    def feature_channels(self):
        return sum(self.stage_channels)

    def stage_padding(self, idx):
        return (self.kernel_sizes[idx] - self.stage_strides[idx]) // 2

    def feature_size(self, size):
        """Spatial extent of the tapped features for a ``size`` px input."""
        s = (size - self.stem_kernel) // self.stem_stride + 1
        k, st, p = self.kernel_sizes[0], self.stage_strides[0], self.stage_padding(0)
        return (s + 2 * p - k) // st + 1

    def param_shapes(self):
        shapes = {
            "backbone.stem.w": (self.stem_channels, self.in_channels, self.stem_kernel, self.stem_kernel),
            "backbone.stem.b": (self.stem_channels,),
        }
        prev = self.stem_channels
        for i, (c, k) in enumerate(zip(self.stage_channels, self.kernel_sizes), start=1):
            shapes[f"backbone.stage{i}.w"] = (c, prev, k, k)
            shapes[f"backbone.stage{i}.b"] = (c,)
            prev = c
        return shapes


# 256-channel taps for the 127/255 px template/search crops
FULL_WIDTH_BACKBONE = BackboneConfig(stage_channels=(256, 256, 256), stem_channels=64)


@dataclass
class FusionOutput:
    response: Tensor
    stride: int
    search_size: int


def _check_weights(weights, config):
    for name, shape in config.param_shapes().items():
        if name not in weights:
            raise ShapeError(f"missing backbone weight {name}")
        if tuple(weights[name].shape) != shape:
            raise ShapeError(f"{name}: expected {shape}, got {tuple(weights[name].shape)}")


def extract_features(image, config, weights):
    """Run the toy backbone on a 3×S×S image and concatenate its three taps.

    Returns a ``sum(stage_channels)`` × s × s tensor with ``s = S / total_stride``
    for sizes divisible by the stride.
    """
    _check_weights(weights, config)
    if image.ndim != 3 or image.shape[0] != config.in_channels:
        raise ShapeError(f"expected {config.in_channels}×S×S image, got {image.shape}")
    x = relu(conv2d(image, weights["backbone.stem.w"], weights["backbone.stem.b"],
                    stride=config.stem_stride, padding=0))
    taps = []
    for i in range(3):
        x = relu(conv2d(x, weights[f"backbone.stage{i + 1}.w"], weights[f"backbone.stage{i + 1}.b"],
                        stride=config.stage_strides[i], padding=config.stage_padding(i)))
        taps.append(x)
    return concat_channels(taps)


def correlate(search_feat, template_feat):
    """Depth-wise correlation; the output keeps the input channel count."""
    return depthwise_xcorr(search_feat, template_feat)


def fuse(search_feat, template_feat, reduce_weights, stride=8, search_size=None):
    """Correlate search features with template features, then 1x1-reduce."""
    if reduce_weights.ndim != 4 or reduce_weights.shape[2:] != (1, 1):
        raise ShapeError(f"reduce weights must be Cr×C×1×1, got {reduce_weights.shape}")
    corr = correlate(search_feat, template_feat)
    response = conv2d(corr, reduce_weights)
    if search_size is None:
        search_size = search_feat.shape[1] * stride
    return FusionOutput(response=response, stride=stride, search_size=search_size)
