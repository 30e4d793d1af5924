"""Axis-aligned boxes in corner form, continuous pixel coordinates."""
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def from_xywh(cls, x, y, w, h):
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def center(self):
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def area(self):
        return max(self.width, 0.0) * max(self.height, 0.0)

    def is_valid(self):
        return self.x0 < self.x1 and self.y0 < self.y1

    def to_xywh(self):
        return (self.x0, self.y0, self.width, self.height)
