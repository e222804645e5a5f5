"""Annotation campaign state: pair queue, leases, storage, benchmark filter.

Annotators pull pairs one at a time under a timed lease, answer four
dimensions with four options each, and submissions land canonically (the
presentation swap is undone) in an append-only line-delimited log that fully
reconstructs state on replay. The benchmark export keeps only pairs with a
strict visual-consistency preference that no other dimension contradicts.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .judging import GoldPair, swap_decision

ANNOTATION_DIMENSIONS = ("IF", "VQ", "VC", "Overall")
CHOICES = ("PreferA", "BothGood", "BothBad", "PreferB")
DEFAULT_LEASE_TIMEOUT = 15 * 60.0
EXPORT_MODES = ("any", "unanimous")

_OPPOSITE = {"PreferA": "PreferB", "PreferB": "PreferA"}


class AnnotationError(ValueError):
    """Raised for malformed submissions or unknown pairs."""


@dataclass
class AnnotationPair:
    """One candidate pair queued for human annotation."""

    pair_id: str
    task: str
    instruction: str
    original: object
    candidate_a: object
    candidate_b: object

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "task": self.task,
            "instruction": self.instruction,
            "original": self.original,
            "candidate_a": self.candidate_a,
            "candidate_b": self.candidate_b,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AnnotationPair":
        return cls(
            pair_id=obj["pair_id"],
            task=obj.get("task", ""),
            instruction=obj.get("instruction", ""),
            original=obj.get("original"),
            candidate_a=obj["candidate_a"],
            candidate_b=obj["candidate_b"],
        )


def _check_choices(choices: Mapping[str, str]) -> dict[str, str]:
    if set(choices) != set(ANNOTATION_DIMENSIONS):
        raise AnnotationError(
            f"choices must cover exactly {ANNOTATION_DIMENSIONS}, got {sorted(choices)}"
        )
    for dim, choice in choices.items():
        if choice not in CHOICES:
            raise AnnotationError(f"dimension {dim}: unknown choice {choice!r}; use one of {CHOICES}")
    return {d: choices[d] for d in ANNOTATION_DIMENSIONS}


@dataclass
class AnnotationRecord:
    """Canonical (unswapped) four-dimension judgment by one annotator."""

    pair_id: str
    annotator_id: str
    choices: dict[str, str]
    timestamp: float

    def __post_init__(self):
        if not self.pair_id or not self.annotator_id:
            raise AnnotationError("record needs non-empty pair and annotator ids")
        self.choices = _check_choices(self.choices)

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "annotator_id": self.annotator_id,
            "choices": dict(self.choices),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AnnotationRecord":
        return cls(
            pair_id=obj["pair_id"],
            annotator_id=obj["annotator_id"],
            choices=dict(obj["choices"]),
            timestamp=float(obj["timestamp"]),
        )


@dataclass
class ServedPair:
    """A pair as presented to an annotator, possibly with swapped positions."""

    pair_id: str
    task: str
    instruction: str
    original: object
    left: object
    right: object
    swapped: bool

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "task": self.task,
            "instruction": self.instruction,
            "original": self.original,
            "left": self.left,
            "right": self.right,
        }


def record_passes_filter(record: AnnotationRecord) -> str | None:
    """Winner letter if the record supports a benchmark pair, else None.

    Requires a strict preference on VC and no opposing preference on IF, VQ,
    or Overall; Both-Good and Both-Bad count as ties and never block.
    """
    vc = record.choices["VC"]
    if vc not in _OPPOSITE:
        return None
    blocking = _OPPOSITE[vc]
    for dim in ("IF", "VQ", "Overall"):
        if record.choices[dim] == blocking:
            return None
    return "A" if vc == "PreferA" else "B"


def filter_benchmark(
    records: Iterable[AnnotationRecord],
    pairs: Mapping[str, AnnotationPair],
    mode: str = "any",
) -> list[GoldPair]:
    """Turn annotation records into strict-preference gold pairs.

    Mode "any" emits a pair when at least one record passes the filter and no
    passing record disagrees on direction; "unanimous" additionally requires
    every record of the pair to pass with the same winner.
    """
    if mode not in EXPORT_MODES:
        raise AnnotationError(f"unknown export mode {mode!r}; use one of {EXPORT_MODES}")
    by_pair: dict[str, list[AnnotationRecord]] = {}
    for rec in records:
        if rec.pair_id not in pairs:
            raise AnnotationError(f"record references unknown pair {rec.pair_id!r}")
        by_pair.setdefault(rec.pair_id, []).append(rec)

    gold: list[GoldPair] = []
    for pair_id in pairs:
        recs = by_pair.get(pair_id, [])
        verdicts = [record_passes_filter(r) for r in recs]
        winners = {v for v in verdicts if v is not None}
        if len(winners) != 1:
            continue
        if mode == "unanimous" and any(v is None for v in verdicts):
            continue
        winner = winners.pop()
        src = pairs[pair_id]
        gold.append(
            GoldPair(
                pair_id=pair_id,
                task=src.task,
                instruction=src.instruction,
                original=src.original,
                candidate_a=src.candidate_a,
                candidate_b=src.candidate_b,
                human_preference=winner,
            )
        )
    return gold


@dataclass
class _Lease:
    pair_id: str
    annotator_id: str
    expires: float


class AnnotationService:
    """In-process campaign state with durable JSONL persistence.

    The clock is injectable so lease expiry is testable without waiting;
    presentation swaps are derived from the seed, never stored.
    """

    def __init__(
        self,
        pairs: Iterable[AnnotationPair],
        log_path: str | Path | None = None,
        seed: int = 0,
        lease_timeout: float = DEFAULT_LEASE_TIMEOUT,
        clock: Callable[[], float] = time.time,
    ):
        self.pairs: dict[str, AnnotationPair] = {}
        for p in pairs:
            if p.pair_id in self.pairs:
                raise AnnotationError(f"duplicate pair id {p.pair_id!r}")
            self.pairs[p.pair_id] = p
        self.seed = seed
        self.lease_timeout = lease_timeout
        self.clock = clock
        self.log_path = Path(log_path) if log_path is not None else None
        self._records: dict[tuple[str, str], AnnotationRecord] = {}
        self._leases: dict[str, _Lease] = {}
        self._lock = threading.Lock()
        if self.log_path is not None and self.log_path.exists():
            self._replay()

    # -- persistence ----------------------------------------------------

    def _replay(self) -> None:
        with self.log_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = AnnotationRecord.from_json(json.loads(line))
                if rec.pair_id not in self.pairs:
                    raise AnnotationError(f"log references unknown pair {rec.pair_id!r}")
                self._records[(rec.pair_id, rec.annotator_id)] = rec

    def _append(self, rec: AnnotationRecord) -> None:
        if self.log_path is None:
            return
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            fh.flush()

    # -- queue ----------------------------------------------------------

    def _prune_leases(self, now: float) -> None:
        expired = [pid for pid, lease in self._leases.items() if lease.expires <= now]
        for pid in expired:
            del self._leases[pid]

    def _serve(self, pair: AnnotationPair) -> ServedPair:
        swapped = swap_decision(self.seed, pair.pair_id)
        left, right = (
            (pair.candidate_b, pair.candidate_a) if swapped else (pair.candidate_a, pair.candidate_b)
        )
        return ServedPair(
            pair_id=pair.pair_id,
            task=pair.task,
            instruction=pair.instruction,
            original=pair.original,
            left=left,
            right=right,
            swapped=swapped,
        )

    def next_pair(self, annotator_id: str) -> ServedPair | None:
        """Lease the next pair this annotator hasn't answered, or None.

        Re-requesting while holding an active lease returns the same pair, so
        a reloaded client resumes where it left off.
        """
        if not annotator_id:
            raise AnnotationError("annotator id must be non-empty")
        with self._lock:
            now = self.clock()
            self._prune_leases(now)
            for lease in self._leases.values():
                if (
                    lease.annotator_id == annotator_id
                    and (lease.pair_id, annotator_id) not in self._records
                ):
                    lease.expires = now + self.lease_timeout
                    return self._serve(self.pairs[lease.pair_id])
            for pair_id, pair in self.pairs.items():
                if (pair_id, annotator_id) in self._records:
                    continue
                if pair_id in self._leases:
                    continue
                self._leases[pair_id] = _Lease(
                    pair_id=pair_id, annotator_id=annotator_id, expires=now + self.lease_timeout
                )
                return self._serve(pair)
            return None

    # -- writes ---------------------------------------------------------

    def record(
        self,
        pair_id: str,
        annotator_id: str,
        choices: Mapping[str, str],
        timestamp: float | None = None,
    ) -> AnnotationRecord:
        """Persist a submission given in presentation order.

        Prefer-left/right answers are mapped back through the pair's swap
        decision so stored records always speak about canonical A and B.
        Resubmission by the same annotator overwrites the earlier answer.
        """
        if pair_id not in self.pairs:
            raise AnnotationError(f"unknown pair {pair_id!r}")
        if not annotator_id:
            raise AnnotationError("annotator id must be non-empty")
        presented = _check_choices(choices)
        if swap_decision(self.seed, pair_id):
            canonical = {
                dim: _OPPOSITE.get(choice, choice) for dim, choice in presented.items()
            }
        else:
            canonical = presented
        with self._lock:
            rec = AnnotationRecord(
                pair_id=pair_id,
                annotator_id=annotator_id,
                choices=canonical,
                timestamp=self.clock() if timestamp is None else timestamp,
            )
            self._records[(pair_id, annotator_id)] = rec
            self._append(rec)
            lease = self._leases.get(pair_id)
            if lease is not None and lease.annotator_id == annotator_id:
                del self._leases[pair_id]
            return rec


    def records(self) -> list[AnnotationRecord]:
        """Current canonical records, one per (pair, annotator), stable order."""
        with self._lock:
            return [self._records[k] for k in sorted(self._records)]

    def export_benchmark(self, mode: str = "any") -> list[GoldPair]:
        return filter_benchmark(self.records(), self.pairs, mode=mode)

    def progress(self) -> dict:
        with self._lock:
            now = self.clock()
            self._prune_leases(now)
            annotated = {pid for pid, _ in self._records}
            per_annotator: dict[str, int] = {}
            for _, annotator in self._records:
                per_annotator[annotator] = per_annotator.get(annotator, 0) + 1
            return {
                "total_pairs": len(self.pairs),
                "annotated_pairs": len(annotated),
                "total_records": len(self._records),
                "active_leases": len(self._leases),
                "per_annotator": dict(sorted(per_annotator.items())),
                "complete": annotated >= set(self.pairs),
            }
