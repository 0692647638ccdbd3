"""Dataset manifests: the file-level contract between pipeline stages.

A manifest lists cases by id, each mapping role names ("volume",
"lesions", "prediction", "gt", ...) to file paths. Paths may be relative;
they resolve against the manifest's own directory, so a manifest travels
with its data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

__all__ = ["ManifestError", "Case", "DatasetManifest"]


class ManifestError(ValueError):
    """A manifest that cannot be used."""


@dataclass(frozen=True)
class Case:
    id: str
    paths: Mapping[str, Path]

    def path(self, role: str) -> Path:
        try:
            return self.paths[role]
        except KeyError:
            raise ManifestError(
                f"case {self.id!r} has no {role!r} entry "
                f"(roles present: {sorted(self.paths)})"
            ) from None

    def has(self, role: str) -> bool:
        return role in self.paths


@dataclass(frozen=True)
class DatasetManifest:
    cases: tuple[Case, ...]
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        ids = [c.id for c in self.cases]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate case ids: {dupes}")
        if any(not i for i in ids):
            raise ManifestError("case ids must be non-empty")
        object.__setattr__(self, "cases", tuple(self.cases))
        object.__setattr__(self, "base_dir", Path(self.base_dir))

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    @staticmethod
    def load(path: str | Path) -> "DatasetManifest":
        """Read a manifest from JSON (or CSV with an ``id`` column)."""
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        if path.suffix.lower() == ".csv":
            return DatasetManifest._from_csv(path)
        return DatasetManifest._from_json(path)

    @staticmethod
    def _from_json(path: Path) -> "DatasetManifest":
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
        rows = payload.get("cases") if isinstance(payload, dict) else payload
        if not isinstance(rows, list):
            raise ManifestError(f"{path}: expected a list of cases")
        base = path.parent
        cases = []
        for i, row in enumerate(rows):
            if not isinstance(row, dict) or "id" not in row:
                raise ManifestError(f"{path}: case #{i} lacks an 'id'")
            raw_paths = row.get("paths", {})
            if not isinstance(raw_paths, dict):
                raise ManifestError(f"{path}: case {row['id']!r} 'paths' must be a mapping")
            paths = {
                role: _resolve(base, p) for role, p in raw_paths.items()
            }
            cases.append(Case(id=str(row["id"]), paths=paths))
        return DatasetManifest(cases=tuple(cases), base_dir=base)

    @staticmethod
    def _from_csv(path: Path) -> "DatasetManifest":
        base = path.parent
        cases = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or "id" not in reader.fieldnames:
                raise ManifestError(f"{path}: CSV manifest needs an 'id' column")
            for row in reader:
                paths = {
                    role: _resolve(base, value)
                    for role, value in row.items()
                    if role != "id" and value
                }
                cases.append(Case(id=row["id"], paths=paths))
        return DatasetManifest(cases=tuple(cases), base_dir=base)

    def to_dict(self, relative_to: Path | None = None) -> dict:
        out = []
        for case in self.cases:
            paths = {}
            for role, p in case.paths.items():
                if relative_to is not None:
                    try:
                        p = p.relative_to(relative_to)
                    except ValueError:
                        pass
                paths[role] = str(p)
            out.append({"id": case.id, "paths": paths})
        return {"cases": out}

    def require_roles(self, *roles: str) -> None:
        for case in self.cases:
            for role in roles:
                case.path(role)


def _resolve(base: Path, value) -> Path:
    p = Path(str(value))
    return p if p.is_absolute() else base / p
