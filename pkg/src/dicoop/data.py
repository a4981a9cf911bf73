"""Multi-domain feature data: synthetic generation, file format, splitting.

Feature file format (binary, little-endian), extension-agnostic:

    magic "DCF1" | u32 version=1 | u32 dim | u32 count | u32 n_classes
    | u32 n_domains | count records of: u32 class_id | u32 domain_id
    | dim x f32 feature

A sidecar manifest shares the basename with suffix ``.manifest.json``:

    {"version": 1, "dim": D, "count": N, "classes": [...], "domains": [...],
     "source": "synth"|"export"}

Features are stored at 32-bit and widened to 64-bit on load; round-trip
bit-exactness is defined at the 32-bit representation. Parsing is fail-fast:
every format error is raised before any record is produced.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    ArgumentError,
    BadMagicError,
    DegenerateFeatureError,
    FeatureFormatError,
    HeaderMismatchError,
    IdRangeError,
    InsufficientDataError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .rng import stream

log = logging.getLogger(__name__)

MAGIC = b"DCF1"
FORMAT_VERSION = 1
UNIT_NORM_TOL = 1e-6
SOURCES = ("synth", "export")
FEATURE_FILE_NAME = "features.dcf1"

_HEADER = struct.Struct("<IIIII")  # version, dim, count, n_classes, n_domains


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One precomputed image feature with its class and domain ids."""

    feature: np.ndarray
    class_id: int
    domain_id: int

    def __post_init__(self) -> None:
        arr = np.array(self.feature, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ArgumentError("feature must be a non-empty vector")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("feature must be finite")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ArgumentError(f"feature norm {norm!r} is not 1 within {UNIT_NORM_TOL}")
        if self.class_id < 0 or self.domain_id < 0:
            raise ArgumentError("ids must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "feature", arr)


@dataclass(frozen=True, eq=False)
class FeatureStore:
    """An immutable collection of records plus the class and domain names."""

    records: tuple[FeatureRecord, ...]
    class_names: tuple[str, ...]
    domain_names: tuple[str, ...]
    dim: int
    source: str = "synth"

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "domain_names", tuple(self.domain_names))
        if self.source not in SOURCES:
            raise ArgumentError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.dim < 1:
            raise ArgumentError("feature width must be positive")
        for names, kind in ((self.class_names, "class"), (self.domain_names, "domain")):
            if not names:
                raise ArgumentError(f"at least one {kind} name required")
            if len(set(names)) != len(names):
                raise ArgumentError(f"{kind} names must be unique")
        for rec in self.records:
            if rec.feature.shape[0] != self.dim:
                raise ArgumentError("all records must share the store's feature width")
            if rec.class_id >= len(self.class_names):
                raise ArgumentError(f"class id {rec.class_id} has no name")
            if rec.domain_id >= len(self.domain_names):
                raise ArgumentError(f"domain id {rec.domain_id} has no name")

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def features(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.dim))
        out = np.stack([r.feature for r in self.records])
        out.setflags(write=False)
        return out

    @cached_property
    def class_ids(self) -> np.ndarray:
        out = np.array([r.class_id for r in self.records], dtype=np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def domain_ids(self) -> np.ndarray:
        out = np.array([r.domain_id for r in self.records], dtype=np.int64)
        out.setflags(write=False)
        return out

    def domains_present(self) -> tuple[int, ...]:
        return tuple(sorted({r.domain_id for r in self.records}))


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic multi-domain feature generator.

    ``domain_shift`` mixes a per-domain direction into every feature; zero
    means the domains are indistinguishable. ``noise_scale`` is the per-record
    Gaussian noise. Defaults mirror a four-domain, seven-class benchmark
    shape.
    """

    n_classes: int = 7
    n_domains: int = 4
    shots_per_cell: int = 16
    feature_width: int = 64
    domain_shift: float = 0.8
    noise_scale: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ArgumentError("need at least two classes")
        if self.n_domains < 2:
            raise ArgumentError("need at least two domains")
        if self.shots_per_cell < 1:
            raise ArgumentError("need at least one record per (class, domain) cell")
        if self.feature_width < 1:
            raise ArgumentError("feature width must be positive")
        if self.domain_shift < 0.0 or self.noise_scale < 0.0:
            raise ArgumentError("domain shift and noise scale must be >= 0")


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise DegenerateFeatureError("cannot normalize a near-zero vector")
    return rows / norms


def synth_generate(cfg: SynthConfig) -> FeatureStore:
    """Generate a store with exactly shots_per_cell records per (class, domain).

    Each record is normalize(prototype + shift * domain_direction + noise);
    prototypes and domain directions are drawn uniformly on the unit sphere.
    Every random consumer has its own stream, so e.g. turning noise off does
    not move the prototypes.
    """
    protos = _unit_rows(
        stream(cfg.seed, "class-prototypes").normal(size=(cfg.n_classes, cfg.feature_width))
    )
    shifts = _unit_rows(
        stream(cfg.seed, "domain-shifts").normal(size=(cfg.n_domains, cfg.feature_width))
    )
    noise_rng = stream(cfg.seed, "record-noise")
    records = []
    for k in range(cfg.n_classes):
        for p in range(cfg.n_domains):
            eps = noise_rng.normal(size=(cfg.shots_per_cell, cfg.feature_width))
            raw = protos[k] + cfg.domain_shift * shifts[p] + cfg.noise_scale * eps
            for row in _unit_rows(raw):
                records.append(FeatureRecord(feature=row, class_id=k, domain_id=p))
    return FeatureStore(
        records=tuple(records),
        class_names=tuple(f"class_{k}" for k in range(cfg.n_classes)),
        domain_names=tuple(f"domain_{p}" for p in range(cfg.n_domains)),
        dim=cfg.feature_width,
        source="synth",
    )


def manifest_path(path: Path | str) -> Path:
    return Path(path).with_suffix(".manifest.json")


def write_features(store: FeatureStore, path: Path | str) -> Path:
    """Write the store as a feature file plus its sidecar manifest.

    Both files are written atomically (temp file, then rename).
    """
    path = Path(path)
    n = len(store.records)
    blob = bytearray()
    blob += MAGIC
    blob += _HEADER.pack(
        FORMAT_VERSION, store.dim, n, len(store.class_names), len(store.domain_names)
    )
    for rec in store.records:
        blob += struct.pack("<II", rec.class_id, rec.domain_id)
        blob += rec.feature.astype("<f4").tobytes()
    manifest = {
        "version": FORMAT_VERSION,
        "dim": store.dim,
        "count": n,
        "classes": list(store.class_names),
        "domains": list(store.domain_names),
        "source": store.source,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, bytes(blob))
    _atomic_write(
        manifest_path(path), json.dumps(manifest, indent=2).encode("utf-8") + b"\n"
    )
    return path


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def read_features(path: Path | str) -> FeatureStore:
    """Read a feature file and its manifest back into a store.

    Every declared inconsistency has its own error type: magic, version,
    truncation, header/manifest mismatch, and id range.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(MAGIC):
        raise TruncatedPayloadError(f"{path} holds {len(blob)} bytes, too short for magic")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(
            f"{path} starts with {blob[:len(MAGIC)]!r}, expected magic {MAGIC!r}"
        )
    header_end = len(MAGIC) + _HEADER.size
    if len(blob) < header_end:
        raise TruncatedPayloadError(f"{path} ends inside the header")
    version, dim, count, n_classes, n_domains = _HEADER.unpack(blob[len(MAGIC) : header_end])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path} declares version {version}, supported: 1")
    if dim == 0:
        raise HeaderMismatchError(f"{path} declares a zero feature width")
    record_size = 8 + 4 * dim
    expected = header_end + count * record_size
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"{path} declares {count} records ({expected} bytes) but holds {len(blob)}"
        )
    if len(blob) > expected:
        raise HeaderMismatchError(
            f"{path} holds {len(blob) - expected} bytes beyond the declared payload"
        )
    man_path = manifest_path(path)
    if not man_path.exists():
        raise FeatureFormatError(f"manifest {man_path} not found")
    manifest = json.loads(man_path.read_text(encoding="utf-8"))
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(f"{man_path} declares version {manifest.get('version')}")
    classes = manifest.get("classes")
    domains = manifest.get("domains")
    if manifest.get("dim") != dim or manifest.get("count") != count:
        raise HeaderMismatchError(f"{man_path} dim/count disagree with the binary header")
    if not isinstance(classes, list) or len(classes) != n_classes:
        raise HeaderMismatchError(f"{man_path} class list disagrees with the header")
    if not isinstance(domains, list) or len(domains) != n_domains:
        raise HeaderMismatchError(f"{man_path} domain list disagrees with the header")
    source = manifest.get("source")
    if source not in SOURCES:
        raise FeatureFormatError(f"{man_path} source must be one of {SOURCES}")
    rec_dtype = np.dtype(
        [("class_id", "<u4"), ("domain_id", "<u4"), ("feature", "<f4", (dim,))]
    )
    raw = np.frombuffer(blob, dtype=rec_dtype, count=count, offset=header_end)
    if count and (int(raw["class_id"].max()) >= n_classes):
        bad = int(raw["class_id"].max())
        raise IdRangeError(f"{path} carries class id {bad}, declared range is [0, {n_classes})")
    if count and (int(raw["domain_id"].max()) >= n_domains):
        bad = int(raw["domain_id"].max())
        raise IdRangeError(f"{path} carries domain id {bad}, declared range is [0, {n_domains})")
    records = tuple(
        FeatureRecord(
            feature=raw["feature"][i].astype(np.float64),
            class_id=int(raw["class_id"][i]),
            domain_id=int(raw["domain_id"][i]),
        )
        for i in range(count)
    )
    return FeatureStore(
        records=records,
        class_names=tuple(str(c) for c in classes),
        domain_names=tuple(str(d) for d in domains),
        dim=dim,
        source=source,
    )


def leave_one_domain_out(store: FeatureStore, holdout_name: str) -> tuple[FeatureStore, FeatureStore]:
    """Split a store into (sources, holdout) by domain name.

    Both halves keep the full name lists, so ids stay globally consistent.
    """
    if holdout_name not in store.domain_names:
        raise ArgumentError(
            f"unknown holdout domain {holdout_name!r}; store has {store.domain_names}"
        )
    holdout_id = store.domain_names.index(holdout_name)
    test = tuple(r for r in store.records if r.domain_id == holdout_id)
    train = tuple(r for r in store.records if r.domain_id != holdout_id)
    common = dict(
        class_names=store.class_names,
        domain_names=store.domain_names,
        dim=store.dim,
        source=store.source,
    )
    return (
        FeatureStore(records=train, **common),
        FeatureStore(records=test, **common),
    )


def sample_few_shot(store: FeatureStore, n: int, seed: int) -> FeatureStore:
    """Sample exactly n records per occupied (class, domain) cell, no replacement.

    A cell with fewer than n records is an error, never padded: silent
    duplication would corrupt what "n-shot" means.
    """
    if n < 1:
        raise ArgumentError(f"shot count must be positive, got {n}")
    cells: dict[tuple[int, int], list[int]] = {}
    for i, rec in enumerate(store.records):
        cells.setdefault((rec.class_id, rec.domain_id), []).append(i)
    rng = stream(seed, "few-shot")
    chosen: list[int] = []
    for (class_id, domain_id) in sorted(cells):
        indices = cells[(class_id, domain_id)]
        if len(indices) < n:
            raise InsufficientDataError(
                f"cell (class={store.class_names[class_id]!r}, "
                f"domain={store.domain_names[domain_id]!r}) holds {len(indices)} "
                f"records, cannot sample {n}"
            )
        picks = rng.choice(len(indices), size=n, replace=False)
        chosen.extend(indices[j] for j in sorted(picks))
    return FeatureStore(
        records=tuple(store.records[i] for i in chosen),
        class_names=store.class_names,
        domain_names=store.domain_names,
        dim=store.dim,
        source=store.source,
    )
