"""Versioned store of validated P4 functions.

On disk: ``<root>/<name>__<version>.json`` holds the canonical
serialization of each function and ``<root>/index.json`` lists
``(name, version, hash)`` in ``(name, version)`` order.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

from ._fileio import atomic_write_json, atomic_write_text, read_json
from .dsl import P4FunctionDef, parse_function_def, serialize_function, validate_function
from .errors import RepoError

log = logging.getLogger(__name__)


def content_hash(fdef: P4FunctionDef) -> str:
    return hashlib.sha256(serialize_function(fdef).encode("utf-8")).hexdigest()


class FunctionRepo:
    """The P4 function repository. ``root=None`` keeps it in memory only."""

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._entries: dict[tuple[str, int], P4FunctionDef] = {}
        if self.root is not None:
            self._load()

    def _load(self) -> None:
        index = read_json(self.root / "index.json", default=[])
        for item in index:
            path = self.root / f"{item['name']}__{item['version']}.json"
            fdef = parse_function_def(path.read_text(encoding="utf-8"))
            if content_hash(fdef) != item["hash"]:
                raise RepoError("CORRUPT", f"hash mismatch for {path.name}")
            if validate_function(fdef):
                raise RepoError("CORRUPT", f"{path.name} no longer validates")
            self._entries[fdef.ident] = fdef

    def upload_function(self, fdef: P4FunctionDef) -> str:
        """Validate and store ``fdef``. Returns its content hash."""
        violations = validate_function(fdef)
        if violations:
            raise RepoError(
                "VALIDATION_FAILED",
                ", ".join(v.code for v in violations),
                violations=violations,
            )
        if fdef.ident in self._entries:
            raise RepoError("DUPLICATE_VERSION", f"{fdef.name} v{fdef.version} already stored")
        digest = content_hash(fdef)
        if self.root is not None:
            # function file first: an index entry never points at a missing file
            atomic_write_text(self.root / f"{fdef.name}__{fdef.version}.json", serialize_function(fdef))
            pending = dict(self._entries)
            pending[fdef.ident] = fdef
            atomic_write_json(self.root / "index.json", self._index_doc(pending))
        self._entries[fdef.ident] = fdef
        log.info("uploaded %s v%d (%s)", fdef.name, fdef.version, digest[:12])
        return digest

    def get_function(self, name: str, version: int) -> P4FunctionDef:
        try:
            return self._entries[(name, version)]
        except KeyError:
            raise RepoError("NOT_FOUND", f"{name} v{version} not in repository") from None

    def __contains__(self, ident: tuple[str, int]) -> bool:
        return ident in self._entries

    def list_functions(self) -> list[P4FunctionDef]:
        return [self._entries[k] for k in sorted(self._entries)]

    def index(self) -> list[dict]:
        return self._index_doc(self._entries)

    @staticmethod
    def _index_doc(entries: dict[tuple[str, int], P4FunctionDef]) -> list[dict]:
        return [
            {"name": name, "version": version, "hash": content_hash(entries[(name, version)])}
            for name, version in sorted(entries)
        ]
