"""Subject discovery, CSV manifests and seeded train/validation/inference splits."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (AmbiguousMatch, DuplicateSubject, EmptyDataset, IoError, ManifestPathMissing,
                     MissingModality, PreconditionViolation)
from .volume import Interpolation

KNOWN_EXTENSIONS = (".nii.gz", ".nii", ".hdr", ".csv")
SEPARATORS = "-_."
SPLITS = ("training", "validation", "inference")


@dataclass(frozen=True)
class SourceSpec:
    name: str
    path_to_search: str
    filename_contains: tuple = ()
    filename_not_contains: tuple = ()
    interp: Interpolation = Interpolation.TRILINEAR


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    paths: dict = field(hash=False)


def _split_extension(filename):
    lower = filename.lower()
    for ext in KNOWN_EXTENSIONS:
        if lower.endswith(ext):
            return filename[: -len(ext)], ext
    return filename, None


def subject_id_from_filename(filename, contains=()) -> str:
    """Filename minus extension and matched substrings, separators trimmed at both ends."""
    stem, _ = _split_extension(filename)
    for token in contains:
        if token:
            stem = stem.replace(token, "")
    return stem.strip(SEPARATORS)


def _matches(filename, spec: SourceSpec) -> bool:
    stem, ext = _split_extension(filename)
    if ext is None:
        return False
    if not all(token in stem for token in spec.filename_contains):
        return False
    return not any(token and token in stem for token in spec.filename_not_contains)


def discover_subjects(specs) -> list:
    """Group files from each source directory into per-subject records.

    Subjects are keyed by :func:`subject_id_from_filename` and returned
    sorted by id.  Every source must provide exactly one file per subject.
    """
    specs = list(specs)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise PreconditionViolation(f"duplicate source names in {names}")

    found = {}
    for spec in specs:
        directory = Path(spec.path_to_search)
        if not directory.is_dir():
            raise IoError(f"source {spec.name!r}: {directory} is not a directory")
        by_subject = {}
        for entry in sorted(os.listdir(directory)):
            if not (directory / entry).is_file() or not _matches(entry, spec):
                continue
            sid = subject_id_from_filename(entry, spec.filename_contains)
            if not sid:
                continue
            by_subject.setdefault(sid, []).append(str(directory / entry))
        for sid, files in by_subject.items():
            if len(files) > 1:
                raise AmbiguousMatch(spec.name, sid, files)
        found[spec.name] = {sid: files[0] for sid, files in by_subject.items()}

    all_ids = sorted(set().union(*(f.keys() for f in found.values()))) if found else []
    for sid in all_ids:
        for spec in specs:
            if sid not in found[spec.name]:
                raise MissingModality(sid, spec.name)
    return [SubjectRecord(sid, {s.name: found[s.name][sid] for s in specs}) for sid in all_ids]


def load_manifest(csv_path, sources=None) -> list:
    """Read a manifest CSV: ``subject_id`` then one path column per source.

    Relative paths resolve against the manifest's directory.  Records keep
    row order.  When ``sources`` is given only those columns are used.
    """
    csv_path = Path(csv_path)
    try:
        text = csv_path.read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise IoError(f"cannot read manifest {csv_path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text, newline="")))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyDataset(f"{csv_path}: no header row")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "subject_id":
        raise PreconditionViolation(f"{csv_path}: first column must be 'subject_id', got {header[:1]}")
    columns = header[1:]
    if sources is not None:
        missing = [s for s in sources if s not in columns]
        if missing:
            raise ManifestPathMissing(0, missing[0])
        columns = list(sources)

    records, seen = [], set()
    base = csv_path.parent
    for row_no, row in enumerate(rows[1:], start=1):
        cells = dict(zip(header, (c.strip() for c in row)))
        sid = cells.get("subject_id", "")
        if not sid:
            raise ManifestPathMissing(row_no, "subject_id")
        if sid in seen:
            raise DuplicateSubject(f"{csv_path}: subject {sid!r} listed twice")
        seen.add(sid)
        paths = {}
        for col in columns:
            value = cells.get(col, "")
            if not value:
                raise ManifestPathMissing(row_no, col)
            path = Path(value)
            if not path.is_absolute():
                path = base / path
            if not path.exists():
                raise ManifestPathMissing(row_no, col)
            paths[col] = str(path)
        records.append(SubjectRecord(sid, paths))
    return records


@dataclass(frozen=True)
class PartitionTable:
    rows: tuple  # (subject_id, split) sorted by subject_id
    seed: int | None = None
    ratios: tuple | None = None

    def split(self, name) -> list:
        return [sid for sid, s in self.rows if s == name]

    def sizes(self) -> tuple:
        return tuple(len(self.split(name)) for name in SPLITS)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject_id", "split"])
        writer.writerows(self.rows)
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8", newline="")
        return path

    @classmethod
    def load(cls, path) -> "PartitionTable":
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["subject_id", "split"]:
                raise PreconditionViolation(f"{path}: expected header subject_id,split")
            rows = []
            for sid, split in reader:
                if split not in SPLITS:
                    raise PreconditionViolation(f"{path}: unknown split {split!r}")
                rows.append((sid, split))
        return cls(tuple(sorted(rows)))


def split_sizes(n, ratios) -> tuple:
    """Floor each validation/inference share; training takes the remainder."""
    # tolerance keeps products like 100 * 0.29 from flooring one short
    val = math.floor(n * ratios[1] + 1e-9)
    inf = math.floor(n * ratios[2] + 1e-9)
    return n - val - inf, val, inf


def partition(subjects, ratios=(0.8, 0.1, 0.1), seed=0) -> PartitionTable:
    """Shuffle subjects with a seeded generator and cut them into three splits."""
    ids = sorted(s.subject_id if isinstance(s, SubjectRecord) else str(s) for s in subjects)
    if not ids:
        raise EmptyDataset("cannot partition an empty subject list")
    if len(set(ids)) != len(ids):
        raise DuplicateSubject("subject ids must be unique")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise PreconditionViolation(f"ratios must be 3 non-negative values summing to 1, got {ratios}")

    order = np.random.default_rng(seed).permutation(len(ids))
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assignment[ids[idx]] = "training"
        elif rank < n_train + n_val:
            assignment[ids[idx]] = "validation"
        else:
            assignment[ids[idx]] = "inference"
    return PartitionTable(tuple((sid, assignment[sid]) for sid in ids), seed, ratios)
