"""Corpus manifests: one JSONL row per utterance.

Row schema: utterance_id, path, speaker_id, label ("PD" | "HC" | "none"),
domain (int), duration_sec. Label "none" marks rows usable only for
self-supervised pretraining.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

LABELS = ("PD", "HC", "none")


@dataclass
class UtteranceRecord:
    utterance_id: str
    path: str
    speaker_id: str
    label: str
    domain: int
    duration_sec: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


class Manifest:
    """Ordered collection of utterance records with unique ids."""

    def __init__(self, records: list[UtteranceRecord] | None = None):
        self.records: list[UtteranceRecord] = []
        self._ids: set[str] = set()
        for r in records or []:
            self.append(r)

    def append(self, rec: UtteranceRecord) -> None:
        if rec.utterance_id in self._ids:
            raise ValueError(f"duplicate utterance_id {rec.utterance_id!r}")
        self._ids.add(rec.utterance_id)
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def speakers(self) -> list[str]:
        """Unique speaker ids in first-seen order."""
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.speaker_id, None)
        return list(seen)

    def speaker_label(self, speaker_id: str) -> str:
        labels = {r.label for r in self.records if r.speaker_id == speaker_id}
        if len(labels) != 1:
            raise ValueError(f"speaker {speaker_id!r} has mixed labels {sorted(labels)}")
        return labels.pop()

    def by_speaker(self) -> dict[str, list[UtteranceRecord]]:
        out: dict[str, list[UtteranceRecord]] = {}
        for r in self.records:
            out.setdefault(r.speaker_id, []).append(r)
        return out

    def labeled(self) -> "Manifest":
        return Manifest([r for r in self.records if r.label != "none"])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        recs = []
        with open(path, "r", encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                    recs.append(UtteranceRecord(**d))
                except (json.JSONDecodeError, TypeError, ValueError) as e:
                    raise ValueError(f"{path}:{i + 1}: bad manifest row: {e}") from e
        return cls(recs)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
