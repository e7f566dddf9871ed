"""Dataset manifests and clip loading."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError, FormatError
from .frontend import AudioClip, load_clip

log = logging.getLogger(__name__)

MANIFEST_HEADER = ("path", "label", "fold")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    fold: int


@dataclass
class Manifest:
    rows: list[ManifestRow]
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.rows)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.root / p

    @property
    def labels(self) -> list[str]:
        return sorted({r.label for r in self.rows})

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
                raise FormatError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != 3:
                    raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
                audio, label, fold = (v.strip() for v in rec)
                if not audio:
                    raise FormatError(f"{path}:{lineno}: empty path")
                try:
                    fold_i = int(fold)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: fold {fold!r} is not an integer") from None
                if fold_i < 0:
                    raise FormatError(f"{path}:{lineno}: fold must be >= 0")
                rows.append(ManifestRow(audio, label, fold_i))
        return cls(rows, path.parent)

    def write(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for r in self.rows:
                writer.writerow([r.path, r.label, r.fold])


def load_clips(manifest: Manifest) -> tuple[list[AudioClip], list[ManifestRow]]:
    """Load every readable clip at 16 kHz; unreadable files are skipped with a warning."""
    if len(manifest) == 0:
        raise ContractError("manifest is empty")
    clips, kept = [], []
    for row in manifest.rows:
        try:
            clips.append(load_clip(manifest.resolve(row)))
            kept.append(row)
        except (OSError, FormatError, ContractError) as exc:
            log.warning("skipping %s: %s", row.path, exc)
    return clips, kept
