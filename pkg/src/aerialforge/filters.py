"""Historic-photo degradation filters.

Three parametric pointwise transforms: grayscale, grayscale with film grain,
and sepia with uniform sensor noise. All math runs in float64 with a single
terminal quantization to 8-bit; masks are never touched.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

FILTER_KINDS = ("none", "grayscale", "grayscale_grain", "sepia_noise")

DEFAULT_GAMMA = 1.2
DEFAULT_CONTRAST = 0.8
DEFAULT_GRAIN_SIGMA = 0.1 * 255.0
DEFAULT_NOISE_HIGH = 50.0
DEFAULT_P_FILTER = 0.2

SEPIA_MATRIX = np.array(
    [
        [0.272, 0.534, 0.131],
        [0.349, 0.686, 0.168],
        [0.393, 0.769, 0.189],
    ],
    dtype=np.float64,
)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class FilterSpec:
    kind: str
    gamma: float = DEFAULT_GAMMA
    contrast: float = DEFAULT_CONTRAST
    grain_sigma: float = DEFAULT_GRAIN_SIGMA
    noise_high: float = DEFAULT_NOISE_HIGH
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luminance from RGB: 0.299 R + 0.587 G + 0.114 B."""
    return rgb.astype(np.float64) @ LUMA_WEIGHTS


def apply_gamma(gray: np.ndarray, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """255 * (I/255)^gamma."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return 255.0 * (gray.astype(np.float64) / 255.0) ** np.float64(gamma)


def apply_contrast(img: np.ndarray, c: float = DEFAULT_CONTRAST) -> np.ndarray:
    """(I - mu) * c + mu, with mu the mean of this operation's own input."""
    img = img.astype(np.float64)
    mu = img.mean(dtype=np.float64)
    return (img - np.float64(mu)) * np.float64(c) + np.float64(mu)


def add_gaussian_grain(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """clip(I + eta), eta ~ N(0, sigma^2) i.i.d. per pixel."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    eta = rng.normal(0.0, sigma, size=img.shape).astype(np.float64)
    return np.clip(img.astype(np.float64) + eta, 0.0, 255.0)


def apply_sepia(rgb: np.ndarray) -> np.ndarray:
    """clip(M [R,G,B]^T) with the fixed sepia matrix."""
    out = rgb.astype(np.float64) @ SEPIA_MATRIX.T
    return np.clip(out, 0.0, 255.0)


def add_uniform_noise(
    img: np.ndarray, rng: np.random.Generator, high: float = DEFAULT_NOISE_HIGH
) -> np.ndarray:
    """clip(I + xi), xi ~ U(0, high) i.i.d. per pixel."""
    xi = rng.uniform(0.0, high, size=img.shape).astype(np.float64)
    return np.clip(img.astype(np.float64) + xi, 0.0, 255.0)


def sample_filter(rng: np.random.Generator, p_filter: float = DEFAULT_P_FILTER) -> FilterSpec:
    """Draw a filter: none with probability 1-p_filter, else one of the three
    degradations with equal probability."""
    if not 0.0 <= p_filter <= 1.0:
        raise ValueError("p_filter must be in [0, 1]")
    if rng.random() >= p_filter:
        kind = "none"
    else:
        kind = FILTER_KINDS[1 + rng.integers(3)]
    return FilterSpec(kind=kind, seed=int(rng.integers(2**63)))


def image_stream_seed(base_seed: int, image_id: str) -> int:
    """Per-image noise seed so parallel processing order never changes output."""
    digest = hashlib.blake2b(image_id.encode(), digest_size=8).digest()
    return (base_seed ^ int.from_bytes(digest, "big")) & (2**64 - 1)


def quantize(img: np.ndarray) -> np.ndarray:
    """Terminal 8-bit quantization, rounding half away from zero."""
    return np.clip(np.floor(img.astype(np.float64) + 0.5), 0, 255).astype(np.uint8)


def apply(spec: FilterSpec, rgb: np.ndarray) -> np.ndarray:
    """Run the full filter pipeline for one spec on an 8-bit RGB image."""
    if spec.kind == "none":
        return rgb.copy()
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "grayscale":
        gray = to_grayscale(rgb)
        return quantize(np.repeat(gray[..., None], 3, axis=2))
    if spec.kind == "grayscale_grain":
        gray = to_grayscale(rgb)
        gray = apply_gamma(gray, spec.gamma)
        gray = apply_contrast(gray, spec.contrast)
        # Grain is drawn on the single gray channel, luminance-coherent.
        gray = add_gaussian_grain(gray, spec.grain_sigma, rng)
        return quantize(np.repeat(gray[..., None], 3, axis=2))
    if spec.kind == "sepia_noise":
        out = apply_sepia(rgb)
        out = add_uniform_noise(out, rng, spec.noise_high)
        return quantize(out)
    raise ValueError(f"unknown filter kind {spec.kind!r}")
