"""Task records, run manifests and their file formats."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import InputError
from .io import atomic_write_text, write_json
from .kinds import TaskKind

TRACE_HEADER = ("task_id", "kind", "image_id", "node_id", "start_s", "end_s", "outcome")


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    kind: TaskKind
    image_id: str
    node_id: str
    start: float
    end: float
    outcome: str = "ok"

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Interval:
    label: str
    start: float
    end: float

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass
class RunManifest:
    design: str
    backend: str = "sim"
    seed: int = 0
    run_start: float = 0.0
    run_end: float = 0.0
    intervals: list[Interval] = field(default_factory=list)
    n_images: int = 0
    workload_digest: str = ""
    cluster: dict = field(default_factory=dict)
    caps: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["intervals"] = [{"label": i.label, "start_s": i.start, "end_s": i.end} for i in self.intervals]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunManifest":
        d = dict(d)
        d["intervals"] = [Interval(i["label"], float(i["start_s"]), float(i["end_s"]))
                          for i in d.get("intervals", [])]
        return cls(**d)


@dataclass
class Trace:
    records: list[TaskRecord]
    manifest: RunManifest | None = None

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, kind) -> list[TaskRecord]:
        kind = TaskKind.parse(kind)
        return [r for r in self.records if r.kind is kind]

    def to_csv(self) -> str:
        return format_trace_csv(self.records)

    def write(self, directory, stem: str = "trace") -> tuple[Path, Path | None]:
        directory = Path(directory)
        csv_path = atomic_write_text(directory / f"{stem}.csv", self.to_csv())
        man_path = None
        if self.manifest is not None:
            man_path = write_json(directory / f"{stem}.manifest.json", self.manifest.to_json())
        return csv_path, man_path


def _fmt(t: float) -> str:
    return f"{t:.6f}"


def format_trace_csv(records: Iterable[TaskRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in records:
        w.writerow([r.task_id, r.kind.value, r.image_id, r.node_id, _fmt(r.start), _fmt(r.end), r.outcome])
    return buf.getvalue()


def parse_trace_csv(text: str, source: str = "<trace>") -> list[TaskRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return []
    missing = set(TRACE_HEADER) - set(reader.fieldnames)
    if missing:
        raise InputError(f"{source}: trace is missing columns {sorted(missing)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append(TaskRecord(row["task_id"], TaskKind.parse(row["kind"]), row["image_id"],
                                  row["node_id"], float(row["start_s"]), float(row["end_s"]),
                                  row["outcome"]))
        except (ValueError, TypeError) as exc:
            raise InputError(f"{source}:{lineno}: {exc}") from exc
    return out


def read_trace(csv_path, manifest_path=None) -> Trace:
    csv_path = Path(csv_path)
    records = parse_trace_csv(csv_path.read_text(encoding="utf-8"), str(csv_path))
    manifest = None
    if manifest_path is None:
        guess = csv_path.with_name(csv_path.stem + ".manifest.json")
        manifest_path = guess if guess.exists() else None
    if manifest_path is not None:
        manifest = RunManifest.from_json(json.loads(Path(manifest_path).read_text(encoding="utf-8")))
    return Trace(records, manifest)
