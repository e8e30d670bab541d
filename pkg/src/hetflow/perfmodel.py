"""Linear execution-time model ``T(x) = alpha * x + beta`` and its fitting.

``x`` is the image size in MB and ``T`` the task duration in seconds.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, FittingError, InputError
from .kinds import Design, TaskKind

MIN_DURATION_S = 0.001
DEFAULT_BIN_WIDTH_MB = 125.0
DEFAULT_BIN_RANGE_MB = (50.0, 2800.0)
REPRESENTATIVE_BINS = (4, 18)


@dataclass(frozen=True)
class ExecTimeModel:
    alpha: float
    beta: float
    noise_std: float = 0.0
    design: Design | None = None
    kind: TaskKind | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.alpha == 0 and self.beta == 0:
            raise ConfigurationError("model predicts zero duration everywhere")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "noise_std": self.noise_std}


def predict_mean(model: ExecTimeModel, size_mb: float) -> float:
    if not size_mb > 0:
        raise InputError(f"size_mb must be positive, got {size_mb}")
    return model.alpha * size_mb + model.beta


def sample_duration(model: ExecTimeModel, size_mb: float, rng: np.random.Generator) -> float:
    """Mean duration plus homoscedastic Gaussian noise, floored at 1 ms."""
    mean = predict_mean(model, size_mb)
    if model.noise_std == 0:
        return mean
    return max(MIN_DURATION_S, mean + rng.normal(0.0, model.noise_std))


# Fitted parameters (alpha s/MB, beta s) with S_error as the default noise.
REFERENCE_MODELS = {
    (Design.D1, TaskKind.TILING): (1.92e-2, 60.49, 1.93),
    (Design.D1, TaskKind.COUNTING): (5.21e-2, 128.53, 5.73),
    (Design.D2, TaskKind.TILING): (3.174e-2, 64.81, 5.50),
    (Design.D2, TaskKind.COUNTING): (4.71e-2, 95.83, 5.96),
    (Design.D2A, TaskKind.TILING): (2.74e-2, 49.03, 3.89),
    (Design.D2A, TaskKind.COUNTING): (4.8e-2, 87.36, 6.19),
}


class ModelRegistry(dict):
    """Maps ``(Design, TaskKind)`` to an :class:`ExecTimeModel`."""

    def get_model(self, design, kind) -> ExecTimeModel:
        key = (Design.parse(design), TaskKind.parse(kind))
        try:
            return self[key]
        except KeyError:
            raise ConfigurationError(f"no model registered for {key[0].value}/{key[1].value}") from None

    def with_noise(self, noise_std: float | None) -> "ModelRegistry":
        """Copy with every model's noise replaced (``None`` keeps it)."""
        if noise_std is None:
            return ModelRegistry(self)
        return ModelRegistry({
            k: ExecTimeModel(m.alpha, m.beta, noise_std, m.design, m.kind) for k, m in self.items()
        })

    def to_json(self) -> dict:
        out: dict = {}
        for (design, kind), model in sorted(self.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            out.setdefault(design.value, {})[kind.value] = model.to_dict()
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "ModelRegistry":
        reg = cls()
        for design, kinds in data.items():
            d = Design.parse(design)
            if not isinstance(kinds, Mapping):
                raise ConfigurationError(f"models[{design!r}] must be an object")
            for kind, params in kinds.items():
                k = TaskKind.parse(kind)
                try:
                    reg[(d, k)] = ExecTimeModel(
                        float(params["alpha"]), float(params["beta"]),
                        float(params.get("noise_std", 0.0)), d, k,
                    )
                except (KeyError, TypeError) as exc:
                    raise ConfigurationError(f"models[{design}][{kind}]: {exc}") from exc
        return reg


def default_registry() -> ModelRegistry:
    return ModelRegistry({
        key: ExecTimeModel(a, b, s, key[0], key[1]) for key, (a, b, s) in REFERENCE_MODELS.items()
    })


# --- fitting ---------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    alpha: float
    beta: float
    r_squared: float
    s_error: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def _as_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(list(pairs), dtype=float)
    if arr.size == 0:
        return np.empty(0), np.empty(0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError("expected a collection of (size_mb, duration) pairs")
    return arr[:, 0], arr[:, 1]


def fit_linear(pairs: Iterable[tuple[float, float]]) -> FitResult:
    """Ordinary least squares on centred data.

    ``r_squared = 1 - SSE/SST`` and ``s_error = sqrt(SSE / (n - 2))``.
    """
    x, y = _as_arrays(pairs)
    n = x.size
    if n < 3:
        raise FittingError(f"need at least 3 points to fit, got {n}")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    if sxx == 0.0 or np.ptp(x) == 0.0:
        raise FittingError("all sizes are equal; slope is undetermined")
    alpha = float(dx @ dy) / sxx
    beta = float(ym - alpha * xm)
    resid = y - (alpha * x + beta)
    sse = float(resid @ resid)
    sst = float(dy @ dy)
    if sst == 0.0:
        r2 = 1.0 if sse == 0.0 else -math.inf
    else:
        r2 = 1.0 - sse / sst
    return FitResult(alpha, beta, r2, math.sqrt(sse / (n - 2)), n)


# --- binning ---------------------------------------------------------------

@dataclass
class SizeBin:
    index: int  # 1-based
    lower_mb: float
    upper_mb: float
    samples: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples)) if self.samples else math.nan

    @property
    def std(self) -> float:
        # sample (n-1) convention; a singleton has no spread
        if not self.samples:
            return math.nan
        if len(self.samples) == 1:
            return 0.0
        return float(np.std(self.samples, ddof=1))

    @property
    def quartiles(self) -> tuple[float, float, float]:
        if not self.samples:
            return (math.nan,) * 3
        q1, med, q3 = np.percentile(self.samples, [25, 50, 75])
        return float(q1), float(med), float(q3)

    @property
    def whiskers(self) -> tuple[float, float]:
        """Tukey whiskers: furthest samples within 1.5 IQR of the box."""
        if not self.samples:
            return (math.nan, math.nan)
        q1, _, q3 = self.quartiles
        iqr = q3 - q1
        arr = np.asarray(self.samples)
        lo = arr[arr >= q1 - 1.5 * iqr].min()
        hi = arr[arr <= q3 + 1.5 * iqr].max()
        return float(lo), float(hi)


def _bin_index(size: float, lo: float, width: float, nbins: int) -> int:
    idx = int(math.floor((size - lo) / width)) + 1
    return min(idx, nbins)  # the top edge belongs to the last bin


def bin_by_size(pairs, bin_width_mb: float = DEFAULT_BIN_WIDTH_MB,
                range_mb: tuple[float, float] = DEFAULT_BIN_RANGE_MB) -> list[SizeBin]:
    lo, hi = range_mb
    if not bin_width_mb > 0:
        raise InputError(f"bin width must be positive, got {bin_width_mb}")
    if not hi > lo:
        raise InputError(f"empty range [{lo}, {hi}]")
    nbins = math.ceil((hi - lo) / bin_width_mb)
    bins = [SizeBin(i + 1, lo + i * bin_width_mb, lo + (i + 1) * bin_width_mb) for i in range(nbins)]
    for size, duration in pairs:
        if not lo <= size <= hi:
            raise InputError(f"pair ({size}, {duration}) lies outside [{lo}, {hi}] MB")
        bins[_bin_index(size, lo, bin_width_mb, nbins) - 1].samples.append(float(duration))
    return bins


def restrict_to_representative_bins(pairs, bin_range: tuple[int, int] = REPRESENTATIVE_BINS,
                                    bin_width_mb: float = DEFAULT_BIN_WIDTH_MB,
                                    range_mb: tuple[float, float] = DEFAULT_BIN_RANGE_MB) -> list[tuple[float, float]]:
    """Keep pairs whose size bin index (1-based) lies in ``bin_range``.

    With the defaults this keeps sizes in [425, 2300) MB.
    """
    first, last = bin_range
    lo, hi = range_mb
    nbins = math.ceil((hi - lo) / bin_width_mb)
    if not 1 <= first <= last:
        raise InputError(f"invalid bin range {bin_range}")
    kept = []
    for size, duration in pairs:
        if not lo <= size <= hi:
            continue
        if first <= _bin_index(size, lo, bin_width_mb, nbins) <= last:
            kept.append((float(size), float(duration)))
    return kept


def format_bins_csv(bins: Sequence[SizeBin]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "n", "mean", "std", "q1", "median", "q3"])
    for b in bins:
        q1, med, q3 = b.quartiles
        w.writerow([b.lower_mb, b.upper_mb, b.n] + [
            "" if math.isnan(v) else f"{v:.6f}" for v in (b.mean, b.std, q1, med, q3)
        ])
    return buf.getvalue()
