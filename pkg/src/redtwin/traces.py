"""Durable, mergeable transition logs and the count index built from them.

A ``.cgt`` log is line-delimited JSON: one header line, then one record
per line with a fixed field order, so logs can be merged by
concatenation, streamed, and inspected by eye. Observation keys are
canonical serializations, which keeps a log self-contained: the fact
contents of every observation can be reconstructed from the keys alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

FORMAT_VERSION = 1
TRACE_SUFFIX = ".cgt"

_HEADER_FIELDS = ("format_version", "scenario_digest", "seed", "created_by")
_RECORD_FIELDS = (
    "episode",
    "step",
    "o_key",
    "action_id",
    "o2_key",
    "reward",
    "per_hand_executable",
    "virtual_time_s",
)


class TraceError(ValueError):
    """Malformed log content; carries the offending path and line number."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{where}{message}")
        self.path = str(path) if path is not None else None
        self.line = line


class DigestMismatchError(TraceError):
    """Log belongs to a different scenario."""


@dataclass(frozen=True)
class TraceHeader:
    scenario_digest: str
    seed: int
    created_by: str
    format_version: int = FORMAT_VERSION

    def encode(self) -> str:
        return json.dumps(
            {
                "format_version": self.format_version,
                "scenario_digest": self.scenario_digest,
                "seed": self.seed,
                "created_by": self.created_by,
            },
            separators=(",", ":"),
        )

    @classmethod
    def decode(cls, line: str, path: str | Path | None = None) -> TraceHeader:
        try:
            doc = json.loads(line)
            return cls(
                scenario_digest=str(doc["scenario_digest"]),
                seed=int(doc["seed"]),
                created_by=str(doc["created_by"]),
                format_version=int(doc["format_version"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TraceError(f"bad header line ({exc})", path, 1) from None


@dataclass(frozen=True)
class TransitionRecord:
    """One logged (o, a, o') tuple plus audit fields."""

    episode: int
    step: int
    o_key: str
    action_id: int
    o2_key: str
    reward: float
    per_hand_executable: tuple[bool, ...]
    virtual_time_s: float

    def encode(self) -> str:
        return json.dumps(
            {
                "episode": self.episode,
                "step": self.step,
                "o_key": self.o_key,
                "action_id": self.action_id,
                "o2_key": self.o2_key,
                "reward": self.reward,
                "per_hand_executable": list(self.per_hand_executable),
                "virtual_time_s": self.virtual_time_s,
            },
            separators=(",", ":"),
        )

    @classmethod
    def decode(cls, line: str, path: str | Path | None = None, lineno: int | None = None) -> TransitionRecord:
        try:
            doc = json.loads(line)
            return cls(
                episode=int(doc["episode"]),
                step=int(doc["step"]),
                o_key=str(doc["o_key"]),
                action_id=int(doc["action_id"]),
                o2_key=str(doc["o2_key"]),
                reward=float(doc["reward"]),
                per_hand_executable=tuple(bool(x) for x in doc["per_hand_executable"]),
                virtual_time_s=float(doc["virtual_time_s"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TraceError(f"corrupt record ({exc})", path, lineno) from None


class TraceWriter:
    """Single-writer append handle; records are durable after close()."""

    def __init__(self, path: str | Path, header: TraceHeader):
        self.path = Path(path)
        self.header = header
        if self.path.exists() and self.path.stat().st_size > 0:
            with self.path.open("r", encoding="utf-8") as fh:
                existing = TraceHeader.decode(fh.readline().rstrip("\n"), self.path)
            if existing.scenario_digest != header.scenario_digest:
                raise DigestMismatchError(
                    f"log has scenario digest {existing.scenario_digest}, "
                    f"writer has {header.scenario_digest}",
                    self.path,
                    1,
                )
            self._fh = self.path.open("a", encoding="utf-8")
        else:
            self._fh = self.path.open("w", encoding="utf-8")
            self._fh.write(header.encode() + "\n")

    def append(self, record: TransitionRecord) -> None:
        self._fh.write(record.encode() + "\n")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()

    def __enter__(self) -> TraceWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_writer(path: str | Path, header: TraceHeader) -> TraceWriter:
    return TraceWriter(path, header)


def read_log(path: str | Path) -> tuple[TraceHeader, list[TransitionRecord]]:
    """Read one log; errors report path and line number."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise TraceError("empty log file", path, 1)
        header = TraceHeader.decode(header_line.rstrip("\n"), path)
        records = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            records.append(TransitionRecord.decode(line, path, lineno))
    return header, records


@dataclass
class CountIndex:
    """Transition counts C keyed by (o_key, action_id) -> {o2_key: count}.

    Also carries the per-pair executability flags (a pure function of the
    observation, so any disagreement between records is corruption) and
    the set of episode-start keys.
    """

    counts: dict[tuple[str, int], dict[str, int]] = field(default_factory=dict)
    totals: dict[tuple[str, int], int] = field(default_factory=dict)
    executable: dict[tuple[str, int], tuple[bool, ...]] = field(default_factory=dict)
    initial_keys: set[str] = field(default_factory=set)
    record_count: int = 0
    scenario_digest: str | None = None

    def add_record(
        self, record: TransitionRecord, path: str | Path | None = None, lineno: int | None = None
    ) -> None:
        pair = (record.o_key, record.action_id)
        outcome_counts = self.counts.setdefault(pair, {})
        outcome_counts[record.o2_key] = outcome_counts.get(record.o2_key, 0) + 1
        self.totals[pair] = self.totals.get(pair, 0) + 1
        flags = self.executable.get(pair)
        if flags is None:
            self.executable[pair] = record.per_hand_executable
        elif flags != record.per_hand_executable:
            raise TraceError(
                f"inconsistent per_hand_executable for pair {pair!r}", path, lineno
            )
        if record.step == 0:
            self.initial_keys.add(record.o_key)
        self.record_count += 1

    def merge(self, other: CountIndex) -> None:
        if (
            self.scenario_digest is not None
            and other.scenario_digest is not None
            and self.scenario_digest != other.scenario_digest
        ):
            raise DigestMismatchError(
                f"cannot merge indexes for digests {self.scenario_digest} and {other.scenario_digest}"
            )
        for pair, outcome_counts in other.counts.items():
            mine = self.counts.setdefault(pair, {})
            for o2_key, count in outcome_counts.items():
                mine[o2_key] = mine.get(o2_key, 0) + count
            self.totals[pair] = self.totals.get(pair, 0) + other.totals[pair]
            flags = self.executable.get(pair)
            if flags is None:
                self.executable[pair] = other.executable[pair]
            elif flags != other.executable[pair]:
                raise TraceError(f"inconsistent per_hand_executable for pair {pair!r}")
        self.initial_keys |= other.initial_keys
        self.record_count += other.record_count
        if self.scenario_digest is None:
            self.scenario_digest = other.scenario_digest

    def dominates(self, other: CountIndex) -> bool:
        """True when this index contains at least every count in `other`."""
        for pair, outcome_counts in other.counts.items():
            mine = self.counts.get(pair)
            if mine is None:
                return False
            for o2_key, count in outcome_counts.items():
                if mine.get(o2_key, 0) < count:
                    return False
        return True

    @classmethod
    def from_records(
        cls, records: Iterable[TransitionRecord], scenario_digest: str | None = None
    ) -> CountIndex:
        idx = cls(scenario_digest=scenario_digest)
        for record in records:
            idx.add_record(record)
        return idx


def load(paths: Iterable[str | Path]) -> CountIndex:
    """Aggregate logs into one CountIndex; order-insensitive.

    All logs must share one scenario digest; corrupt records are
    reported with their line number.
    """
    idx = CountIndex()
    for path in paths:
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            header_line = fh.readline()
            if not header_line:
                raise TraceError("empty log file", path, 1)
            header = TraceHeader.decode(header_line.rstrip("\n"), path)
            if idx.scenario_digest is None:
                idx.scenario_digest = header.scenario_digest
            elif idx.scenario_digest != header.scenario_digest:
                raise DigestMismatchError(
                    f"log digest {header.scenario_digest} does not match {idx.scenario_digest}",
                    path,
                    1,
                )
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                record = TransitionRecord.decode(line, path, lineno)
                idx.add_record(record, path, lineno)
    return idx


@dataclass(frozen=True)
class TraceStats:
    distinct_observations: int
    distinct_pairs: int
    total_transitions: int
    branching_histogram: dict[int, int]


def stats(idx: CountIndex) -> TraceStats:
    """Exact aggregate counts over an index."""
    observations: set[str] = set()
    histogram: dict[int, int] = {}
    for (o_key, _), outcome_counts in idx.counts.items():
        observations.add(o_key)
        observations.update(outcome_counts)
        n = len(outcome_counts)
        histogram[n] = histogram.get(n, 0) + 1
    return TraceStats(
        distinct_observations=len(observations),
        distinct_pairs=len(idx.counts),
        total_transitions=sum(idx.totals.values()),
        branching_histogram=dict(sorted(histogram.items())),
    )


def iter_records(paths: Iterable[str | Path]) -> Iterator[TransitionRecord]:
    for path in paths:
        _, records = read_log(path)
        yield from records
