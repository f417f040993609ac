"""RGB to YIQ conversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.containers import RasterImage
from ..errors import NotColorImage

#: Rows give Y, I and Q as weighted sums of (R, G, B).
YIQ_MATRIX = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.596, -0.274, -0.322],
        [0.211, -0.523, 0.312],
    ]
)


@dataclass(frozen=True, eq=False)
class YiqImage:
    """Luminance and chrominance planes sharing the source geometry."""

    Y: np.ndarray
    I: np.ndarray  # noqa: E741
    Q: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.Y.shape

    def luminance(self) -> RasterImage:
        return RasterImage(self.Y, self.spacing)

    def iq(self) -> np.ndarray:
        """Chrominance samples, shape ``(H*W, 2)``."""
        return np.stack([self.I.ravel(), self.Q.ravel()], axis=1)


def rgb_to_yiq(image: RasterImage) -> YiqImage:
    """Apply the YIQ matrix to every pixel of a 3-channel image in [0, 1]."""
    if image.channels != 3:
        raise NotColorImage(f"expected a 3-channel image, got {image.channels} channel(s)")
    yiq = np.einsum("ij,hwj->hwi", YIQ_MATRIX, image.data)
    planes = [np.ascontiguousarray(yiq[..., c]) for c in range(3)]
    for p in planes:
        p.flags.writeable = False
    return YiqImage(*planes, spacing=image.spacing)
