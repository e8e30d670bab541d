"""Image datasets: synthetic generation and CSV manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, InputError

MANIFEST_HEADER = ("id", "size_mb")


@dataclass(frozen=True)
class ImageSpec:
    id: str
    size_mb: float

    def __post_init__(self):
        if not (self.size_mb > 0 and math.isfinite(self.size_mb)):
            raise InputError(f"image {self.id!r}: size_mb must be positive, got {self.size_mb}")


@dataclass(frozen=True)
class WorkloadSpec:
    count: int
    mean_mb: float = 1304.85
    std_mb: float = 512.68
    min_mb: float = 50.0
    max_mb: float = 2770.0
    seed: int = 0

    def validate(self) -> None:
        if self.count < 0:
            raise ConfigurationError(f"count must be >= 0, got {self.count}")
        if not self.std_mb > 0:
            raise ConfigurationError(f"std_mb must be positive, got {self.std_mb}")
        if not self.min_mb > 0:
            raise ConfigurationError(f"min_mb must be positive, got {self.min_mb}")
        if not self.max_mb > self.min_mb:
            raise ConfigurationError(f"max_mb ({self.max_mb}) must exceed min_mb ({self.min_mb})")


def generate_workload(spec: WorkloadSpec) -> list[ImageSpec]:
    """Draw ``spec.count`` image sizes from a normal distribution truncated to
    ``[min_mb, max_mb]``.

    Out-of-range draws are rejected and redrawn rather than clamped, so no
    probability mass piles up on the bounds.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sizes = np.empty(0)
    while sizes.size < spec.count:
        need = spec.count - sizes.size
        draw = rng.normal(spec.mean_mb, spec.std_mb, size=max(need * 2, 16))
        draw = draw[(draw >= spec.min_mb) & (draw <= spec.max_mb)]
        sizes = np.concatenate([sizes, draw[:need]])
    width = max(4, len(str(spec.count)))
    return [ImageSpec(f"img{i:0{width}d}", float(s)) for i, s in enumerate(sizes)]


def _check_unique(images: Sequence[ImageSpec]) -> None:
    seen = set()
    for img in images:
        if img.id in seen:
            raise InputError(f"duplicate image id {img.id!r}")
        seen.add(img.id)


def load_workload(path) -> list[ImageSpec]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, source=str(path))


def parse_manifest(text: str, source: str = "<manifest>") -> list[ImageSpec]:
    if not text.strip():
        return []
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise InputError(f"{source}: expected header 'id,size_mb', got {','.join(header)!r}")
    images = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise InputError(f"{source}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            size = float(row[1])
        except ValueError as exc:
            raise InputError(f"{source}:{lineno}: bad size {row[1]!r}") from exc
        images.append(ImageSpec(row[0].strip(), size))
    _check_unique(images)
    return images


def format_manifest(images: Iterable[ImageSpec]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for img in images:
        writer.writerow([img.id, repr(float(img.size_mb))])
    return buf.getvalue()


def write_manifest(images: Iterable[ImageSpec], path) -> Path:
    from .io import atomic_write_text

    return atomic_write_text(path, format_manifest(images))


def workload_digest(images: Sequence[ImageSpec]) -> str:
    """Stable fingerprint used to check that runs share a workload."""
    h = hashlib.sha256()
    for img in images:
        h.update(f"{img.id}\t{float(img.size_mb)!r}\n".encode())
    return h.hexdigest()[:16]
