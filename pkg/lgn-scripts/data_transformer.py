from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from error_handler import ConfigError, DataError

BINARIZE_KINDS = ("none", "threshold", "thermometer")


@dataclass
class BinarizeSpec:
    """Configuration for turning features into bits."""
    kind: str = "threshold"
    threshold: float = 0.5
    count: int = 31            # thermometer thresholds per channel value
    low: float = 0.0           # raw value range the thresholds split
    high: float = 255.0

    def validate(self):
        if self.kind not in BINARIZE_KINDS:
            raise ConfigError("binarize", f"unknown scheme '{self.kind}', expected one of {', '.join(BINARIZE_KINDS)}")
        if self.kind == "thermometer":
            if self.count < 1:
                raise ConfigError("binarize", f"thermometer needs at least one threshold, got {self.count}")
            if not self.high > self.low:
                raise ConfigError("binarize", f"empty value range [{self.low}, {self.high}]")

    def thresholds(self) -> np.ndarray:
        return thermometer_thresholds(self.count, self.low, self.high)


def thermometer_thresholds(count: int = 31, low: float = 0.0, high: float = 255.0) -> np.ndarray:
    """count evenly spaced interior points of [low, high]: low + (high - low) * j / (count + 1)."""
    j = np.arange(1, count + 1, dtype=np.float64)
    return low + (high - low) * j / (count + 1)


def _check_unit(features: np.ndarray):
    if features.size and (np.min(features) < 0.0 or np.max(features) > 1.0 or not np.all(np.isfinite(features))):
        raise DataError("features must lie in [0, 1] before binarization",
                        {"min": float(np.min(features)), "max": float(np.max(features))})


def binarize_threshold(features, theta: float = 0.5) -> np.ndarray:
    """bit = 1 iff x > theta; a value exactly at theta maps to 0."""
    features = np.asarray(features, dtype=np.float64)
    _check_unit(features)
    return (features > theta).astype(np.uint8)


def binarize_thermometer(values, spec: Optional[BinarizeSpec] = None) -> np.ndarray:
    """
    Thermometer-encode channel-major raw values.

    values has shape (samples, channels, pixels) in [spec.low, spec.high]. Every value
    expands to spec.count bits, bit t = 1 iff value > threshold_t, and the output is
    laid out (samples, channels * count * pixels) in channel, threshold, pixel order.
    """
    spec = spec or BinarizeSpec(kind="thermometer")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise DataError(f"thermometer encoding expects (samples, channels, pixels), got shape {values.shape}")
    thresholds = spec.thresholds()
    bits = values[:, :, None, :] > thresholds[None, None, :, None]
    return bits.reshape(values.shape[0], -1).astype(np.uint8)


@dataclass
class PixelDistribution:
    """Fractions of feature values per bin; the first four bins partition [0, 1]."""
    exactly_zero: float
    near_zero: float        # (0, 0.1)
    middle: float           # [0.1, 0.9]
    near_one: float         # (0.9, 1]
    binary_like: float      # < 0.1 or > 0.9
    count: int

    def as_percent(self) -> Dict[str, float]:
        return {
            "exactly_zero": 100.0 * self.exactly_zero,
            "(0, 0.1)": 100.0 * self.near_zero,
            "[0.1, 0.9]": 100.0 * self.middle,
            "(0.9, 1]": 100.0 * self.near_one,
            "binary_like": 100.0 * self.binary_like,
        }

    def render(self) -> str:
        lines = [f"Pixel distribution over {self.count} values:"]
        lines.extend(f"  {name:>12}: {value:6.2f}%" for name, value in self.as_percent().items())
        return "\n".join(lines)


def pixel_distribution_report(features) -> PixelDistribution:
    values = np.asarray(features, dtype=np.float64).ravel()
    if values.size == 0:
        raise DataError("pixel distribution of an empty feature set is undefined")
    _check_unit(values)
    n = values.size
    zero = values == 0.0
    near_zero = (values > 0.0) & (values < 0.1)
    middle = (values >= 0.1) & (values <= 0.9)
    near_one = values > 0.9
    return PixelDistribution(
        exactly_zero=float(np.count_nonzero(zero) / n),
        near_zero=float(np.count_nonzero(near_zero) / n),
        middle=float(np.count_nonzero(middle) / n),
        near_one=float(np.count_nonzero(near_one) / n),
        binary_like=float(np.count_nonzero(values < 0.1) + np.count_nonzero(near_one)) / n,
        count=n,
    )


def transform_features(features, spec: BinarizeSpec, channels: Optional[int] = None) -> np.ndarray:
    """
    Apply a binarization scheme to a (samples, dims) feature matrix in [0, 1].
    Thermometer encoding rescales to the raw range and needs the channel count.
    """
    spec.validate()
    features = np.asarray(features, dtype=np.float64)
    if spec.kind == "none":
        _check_unit(features)
        return features
    if spec.kind == "threshold":
        return binarize_threshold(features, spec.threshold)
    if not channels or features.shape[1] % channels:
        raise DataError(f"cannot split {features.shape[1]} features into {channels} channels")
    _check_unit(features)
    raw = spec.low + features * (spec.high - spec.low)
    return binarize_thermometer(raw.reshape(features.shape[0], channels, -1), spec)

