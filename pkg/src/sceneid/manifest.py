"""JSON-lines corpus manifests: one record per recording.

Each line holds at least a path and a scene label; optional fields carry
speaker identity (for mixing exclusion rules), a condition tag (clean / SBR
variant), a cross-validation fold, and mixing provenance (seed, gain).
Paths are stored as written and resolved relative to the manifest file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import SceneidError


class ManifestError(SceneidError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    speaker_id: str | None = None
    condition: str = "clean"
    fold: int | None = None
    seed: int | None = None
    gain: float | None = None

    def to_record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


class CorpusManifest:
    """Ordered list of manifest entries plus the directory they resolve against."""

    def __init__(self, entries, base_dir=None):
        self.entries: list[ManifestEntry] = list(entries)
        self.base_dir = Path(base_dir) if base_dir is not None else Path(".")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.base_dir / p

    def labels(self) -> list[str]:
        return sorted({e.label for e in self.entries})

    def conditions(self) -> list[str]:
        return sorted({e.condition for e in self.entries})

    def filter(self, predicate) -> "CorpusManifest":
        return CorpusManifest([e for e in self.entries if predicate(e)], self.base_dir)

    def validate(self, label_set=None) -> None:
        """Check path uniqueness, label membership and fold consistency."""
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ManifestError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)
        if label_set is not None:
            declared = set(label_set)
            for e in self.entries:
                if e.label not in declared:
                    raise ManifestError(f"label {e.label!r} not in declared set for {e.path}")
        folds = [e.fold for e in self.entries]
        with_fold = [f for f in folds if f is not None]
        if with_fold and len(with_fold) != len(folds):
            raise ManifestError("fold assignments must cover all entries or none")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
                if "path" not in record or "label" not in record:
                    raise ManifestError(f"{path}:{lineno}: record needs 'path' and 'label'")
                known = {f for f in ManifestEntry.__dataclass_fields__}
                unknown = set(record) - known
                if unknown:
                    raise ManifestError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
                entries.append(ManifestEntry(**record))
        return cls(entries, base_dir=path.parent)

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")
