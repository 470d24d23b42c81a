"""SNR-driven distortion of detection sets.

Stands in for the whole encode -> fade/noise -> decode -> re-detect loop:
the receiver's view of a frame is the source detections with some objects
missed, centers and confidences jittered, and a few low-confidence
phantom objects added.  Every rate follows the same logistic in SNR::

    rate(snr) = rate_max * logistic((s_mid - snr) / width)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .sakp import Detection, FrameDetections

SPURIOUS_MAX_CONFIDENCE = 0.5
SPURIOUS_SIZE_RANGE = (0.02, 0.3)

# Reference constants before calibration; the profile examples are stated
# against these.
REFERENCE_CONSTANTS = dict(p_drop_max=0.5, lambda_spurious_max=1.0, sigma_center_max=0.05,
                           sigma_conf_max=0.15, s_mid=8.0, width=2.5)


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class DistortionProfile:
    p_drop: float = 0.0
    lambda_spurious: float = 0.0
    sigma_center: float = 0.0
    sigma_conf: float = 0.0

    @property
    def is_identity(self) -> bool:
        return not (self.p_drop or self.lambda_spurious or self.sigma_center or self.sigma_conf)


@dataclass(frozen=True)
class ChannelParams:
    snr_db: float = 25.0
    # calibrated: best 128-bit-secure (K, Q) at 25 dB, T=1 gives MCR-SKG ~0.85
    p_drop_max: float = 0.3
    lambda_spurious_max: float = 0.5
    sigma_center_max: float = 0.01
    sigma_conf_max: float = 0.1
    s_mid: float = 8.0
    width: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_drop_max <= 1.0:
            raise ConfigurationError(f"p_drop_max {self.p_drop_max} outside [0, 1]")
        for name in ("lambda_spurious_max", "sigma_center_max", "sigma_conf_max"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.width <= 0:
            raise ConfigurationError("width must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


# Noiseless link: every rate is exactly zero regardless of SNR.
LOSSLESS = ChannelParams(p_drop_max=0.0, lambda_spurious_max=0.0, sigma_center_max=0.0,
                         sigma_conf_max=0.0)


def profile_from_snr(params: ChannelParams) -> DistortionProfile:
    f = logistic((params.s_mid - params.snr_db) / params.width)
    return DistortionProfile(
        p_drop=params.p_drop_max * f,
        lambda_spurious=params.lambda_spurious_max * f,
        sigma_center=params.sigma_center_max * f,
        sigma_conf=params.sigma_conf_max * f,
    )


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def make_rng(seed) -> np.random.Generator:
    """Generator from an int or a sequence of ints (e.g. ``(seed, run, step)``)."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def distort_detections(frame: FrameDetections, profile: DistortionProfile, rng_seed,
                       num_classes: int = 80) -> FrameDetections:
    if profile.is_identity:
        return frame
    rng = make_rng(rng_seed)
    out = []
    for det in frame.detections:
        if profile.p_drop and rng.random() < profile.p_drop:
            continue
        cx, cy, p = det.cx, det.cy, det.confidence
        if profile.sigma_center:
            dx, dy = rng.normal(0.0, profile.sigma_center, size=2)
            cx, cy = _clamp01(cx + dx), _clamp01(cy + dy)
        if profile.sigma_conf:
            p = _clamp01(p + rng.normal(0.0, profile.sigma_conf))
        out.append(Detection(det.class_id, float(p), float(cx), float(cy), det.w, det.h))
    if profile.lambda_spurious:
        lo, hi = SPURIOUS_SIZE_RANGE
        for _ in range(rng.poisson(profile.lambda_spurious)):
            out.append(Detection(
                int(rng.integers(num_classes)),
                float(rng.uniform(0.0, SPURIOUS_MAX_CONFIDENCE)),
                float(rng.random()), float(rng.random()),
                float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)),
            ))
    return FrameDetections(frame.frame_index, tuple(out))
