"""Windowed structural similarity between two rasters.

Both images are converted to 8-bit-range grayscale (luma weights
0.299/0.587/0.114); when shapes differ the candidate is resized bilinearly
to the reference geometry.  Over every local window the stabilized
similarity is::

    (2*mu_a*mu_b + C1) * (2*cov_ab + C2)
    ------------------------------------------------
    (mu_a^2 + mu_b^2 + C1) * (var_a + var_b + C2)

with C1 = (k1*L)^2 and C2 = (k2*L)^2, window moments weighted by the
window kernel.  The reported score is the window mean clamped to [0, 1].
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image, UnidentifiedImageError


class DecodeFailureError(ValueError):
    pass


class DegenerateImageError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianWindow:
    size: int = 11
    sigma: float = 1.5

    def __post_init__(self) -> None:
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError("gaussian window size must be odd and >= 3")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def kernel_1d(self) -> np.ndarray:
        offsets = np.arange(self.size, dtype=np.float64) - (self.size - 1) / 2
        kernel = np.exp(-(offsets**2) / (2 * self.sigma**2))
        return kernel / kernel.sum()


@dataclass(frozen=True)
class UniformWindow:
    size: int = 8

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError("uniform window size must be >= 2")

    def kernel_1d(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size, dtype=np.float64)


Window = GaussianWindow | UniformWindow


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0
    window: Window = GaussianWindow()

    def __post_init__(self) -> None:
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")


_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def to_grayscale(image) -> np.ndarray:
    """Decode an image (PNG bytes, PIL image, or array) to float64 luma."""
    if isinstance(image, (bytes, bytearray)):
        try:
            with Image.open(io.BytesIO(image)) as img:
                img.load()
                pil = img
                array = _pil_to_array(pil)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise DecodeFailureError(f"cannot decode image: {exc}") from exc
    elif isinstance(image, Image.Image):
        array = _pil_to_array(image)
    else:
        array = np.asarray(image, dtype=np.float64)
    if array.ndim == 3:
        array = array[..., :3] @ _LUMA
    if array.ndim != 2:
        raise DecodeFailureError(f"expected a 2-D or 3-D image, got shape {array.shape}")
    return array.astype(np.float64)


def _pil_to_array(img: Image.Image) -> np.ndarray:
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64)
    return np.asarray(img.convert("RGB"), dtype=np.float64)


def _resize_bilinear(gray: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    height, width = shape
    pil = Image.fromarray(gray.astype(np.float32), mode="F")
    return np.asarray(pil.resize((width, height), Image.BILINEAR), dtype=np.float64)


def _filter_valid(image: np.ndarray, kernel_1d: np.ndarray) -> np.ndarray:
    """Separable windowed weighted mean ('valid' region only)."""
    rows = sliding_window_view(image, len(kernel_1d), axis=1) @ kernel_1d
    return sliding_window_view(rows, len(kernel_1d), axis=0) @ kernel_1d


def ssim(candidate, reference, params: SsimParams = SsimParams()) -> float:
    """Similarity of candidate to reference, clamped to [0, 1]."""
    gray_cand = to_grayscale(candidate)
    gray_ref = to_grayscale(reference)
    if gray_cand.shape != gray_ref.shape:
        gray_cand = _resize_bilinear(gray_cand, gray_ref.shape)

    size = params.window.size
    if min(gray_ref.shape) < size:
        raise DegenerateImageError(
            f"image of shape {gray_ref.shape} is smaller than the {size}x{size} window"
        )
    kernel = params.window.kernel_1d()

    a, b = gray_cand, gray_ref
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    var_a = _filter_valid(a * a, kernel) - mu_a * mu_a
    var_b = _filter_valid(b * b, kernel) - mu_b * mu_b
    cov_ab = _filter_valid(a * b, kernel) - mu_a * mu_b

    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov_ab + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(min(1.0, max(0.0, ssim_map.mean())))


@dataclass(frozen=True)
class ImageQualityResult:
    per_task: dict[str, float]
    mean: float | None
    participating: int


def image_quality_suite(records, tasks, params: SsimParams = SsimParams()) -> ImageQualityResult:
    """Mean similarity over (final image, reference image) pairs.

    Only records that produced an image and whose task carries a reference
    image participate; with no participants the mean is reported absent,
    not zero.
    """
    by_id = tasks.by_id()
    per_task: dict[str, float] = {}
    for record in records:
        image = record.final_image
        task = by_id.get(record.task_id)
        if image is None or task is None or task.reference_image is None:
            continue
        per_task[record.task_id] = ssim(image, task.reference_image, params)
    mean = sum(per_task.values()) / len(per_task) if per_task else None
    return ImageQualityResult(per_task=per_task, mean=mean, participating=len(per_task))
