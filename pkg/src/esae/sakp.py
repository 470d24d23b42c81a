"""Semantic-aware key pre-processing.

Turns one frame of object detections into a canonical byte digest that
both endpoints can compute independently: keep the top-K detections by
confidence, map each box center to a grid cell, sort the resulting
``(class_id, grid_index)`` pairs and encode them as ASCII.

Digest grammar::

    digest := pair ("|" pair)* | "EMPTY"
    pair   := class_id ":" grid_index        (decimal, no whitespace)
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import ConfigurationError, InputDomainError

EMPTY_DIGEST = b"EMPTY"
DIGEST_PATTERN = re.compile(r"[0-9]+:[0-9]+(\|[0-9]+:[0-9]+)*")


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    cx: float
    cy: float
    w: float
    h: float

    def validate(self, num_classes: int | None = None) -> None:
        if isinstance(self.class_id, bool) or not isinstance(self.class_id, int):
            raise InputDomainError(f"class_id must be an int, got {self.class_id!r}")
        if self.class_id < 0 or (num_classes is not None and self.class_id >= num_classes):
            raise InputDomainError(f"class_id {self.class_id} outside [0, {num_classes})")
        for name in ("confidence", "cx", "cy"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InputDomainError(f"{name}={v!r} outside [0, 1]")
        for name in ("w", "h"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise InputDomainError(f"{name}={v!r} outside (0, 1]")


@dataclass(frozen=True)
class FrameDetections:
    frame_index: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        if self.frame_index < 0:
            raise InputDomainError(f"frame_index must be >= 0, got {self.frame_index}")
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @property
    def cells(self) -> int:
        return self.rows * self.cols

    @classmethod
    def from_cells(cls, q: int) -> "GridSpec":
        """Most-square ``rows x cols`` factorisation of ``q`` (900 -> 30x30)."""
        if q < 1:
            raise ConfigurationError(f"Q must be >= 1, got {q}")
        rows = math.isqrt(q)
        while q % rows:
            rows -= 1
        return cls(rows, q // rows)


@dataclass(frozen=True)
class SakpConfig:
    top_k: int = 5
    grid: GridSpec = field(default_factory=lambda: GridSpec(30, 30))
    num_classes: int = 80
    window: int = 1

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigurationError(f"top_k must be >= 1, got {self.top_k}")
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")


@dataclass(frozen=True)
class SemanticDigest:
    data: bytes
    pair_count: int

    def __str__(self):
        return self.data.decode("utf-8")

    def pairs(self) -> list[tuple[int, int]]:
        """Parsed ``(class_id, grid_index)`` pairs; empty for the EMPTY digest."""
        if self.data == EMPTY_DIGEST:
            return []
        return [tuple(int(x) for x in p.split(":")) for p in self.data.decode().split("|")]


def grid_index(cx: float, cy: float, grid: GridSpec) -> int:
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise InputDomainError(f"center ({cx!r}, {cy!r}) outside the unit square")
    row = min(math.floor(cy * grid.rows), grid.rows - 1)
    col = min(math.floor(cx * grid.cols), grid.cols - 1)
    return row * grid.cols + col


def _rank_key(det: Detection, grid: GridSpec):
    # trailing geometry terms only make the order total; they never affect the digest
    return (-det.confidence, det.class_id, grid_index(det.cx, det.cy, grid),
            det.cy, det.cx, det.w, det.h)


def select_top_k(frame: FrameDetections | Iterable[Detection], k: int,
                 grid: GridSpec = GridSpec(30, 30)) -> list[Detection]:
    """Return the ``k`` most confident detections, most confident first.

    Equal confidences are ordered by class id, then by grid cell.
    """
    if k < 1:
        raise InputDomainError(f"k must be >= 1, got {k}")
    dets = frame.detections if isinstance(frame, FrameDetections) else tuple(frame)
    return sorted(dets, key=lambda d: _rank_key(d, grid))[:k]


def canonical_digest(frame: FrameDetections, cfg: SakpConfig) -> SemanticDigest:
    for det in frame.detections:
        det.validate(cfg.num_classes)
    chosen = select_top_k(frame, cfg.top_k, cfg.grid)
    if not chosen:
        return SemanticDigest(EMPTY_DIGEST, 0)
    pairs = sorted((grid_index(d.cx, d.cy, cfg.grid), d.class_id) for d in chosen)
    text = "|".join(f"{c}:{g}" for g, c in pairs)
    return SemanticDigest(text.encode("utf-8"), len(pairs))


# -- detection-log JSONL -----------------------------------------------------

def frame_to_json(frame: FrameDetections) -> str:
    dets = [{"c": d.class_id, "p": d.confidence, "cx": d.cx, "cy": d.cy, "w": d.w, "h": d.h}
            for d in frame.detections]
    return json.dumps({"frame": frame.frame_index, "dets": dets}, separators=(",", ":"))


def frame_from_json(line: str | bytes, num_classes: int | None = None) -> FrameDetections:
    try:
        obj = json.loads(line)
        index = obj["frame"]
        raw = obj["dets"]
    except (ValueError, KeyError, TypeError) as exc:
        raise InputDomainError(f"bad detection record: {exc}") from exc
    if isinstance(index, bool) or not isinstance(index, int) or not isinstance(raw, list):
        raise InputDomainError("bad detection record: frame must be int and dets a list")
    dets = []
    for d in raw:
        try:
            det = Detection(d["c"], float(d["p"]), float(d["cx"]), float(d["cy"]),
                            float(d["w"]), float(d["h"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputDomainError(f"bad detection entry {d!r}: {exc}") from exc
        det.validate(num_classes)
        dets.append(det)
    return FrameDetections(index, tuple(dets))


def read_detection_log(fh: IO[str], num_classes: int | None = None) -> Iterator[FrameDetections]:
    """Yield frames from a JSONL log, enforcing strictly increasing frame indices."""
    last = -1
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            frame = frame_from_json(line, num_classes)
        except InputDomainError as exc:
            raise InputDomainError(f"line {lineno}: {exc}") from exc
        if frame.frame_index <= last:
            raise InputDomainError(f"line {lineno}: frame index {frame.frame_index} not increasing")
        last = frame.frame_index
        yield frame


def write_detection_log(fh: IO[str], frames: Iterable[FrameDetections]) -> None:
    for frame in frames:
        fh.write(frame_to_json(frame) + "\n")
