"""Durable ``ns_functions`` and ``cp_rules`` tables.

Both live as JSON files under one directory and are rewritten atomically
on every mutation, so a reload after any returned call sees exactly what
the call left behind. ``cp_rules`` is a current image of CP state: one live
rule per ``(owner, table, key)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ._fileio import atomic_write_json, read_json
from .composer import FORWARD_L2
from .descriptor import NsDescriptor
from .errors import StoreError

ADMIN = "admin"


@dataclass(frozen=True)
class NsRecord:
    descriptor: NsDescriptor
    instantiated_at: int

    @property
    def ns_id(self) -> str:
        return self.descriptor.ns_id

    def to_document(self) -> dict:
        return {"descriptor": self.descriptor.to_document(), "instantiated_at": self.instantiated_at}

    @classmethod
    def from_document(cls, doc: dict) -> "NsRecord":
        return cls(NsDescriptor.from_document(doc["descriptor"]), doc["instantiated_at"])


def _key_to_json(key: tuple) -> list:
    return [list(k) if isinstance(k, tuple) else k for k in key]


def _key_from_json(doc: list) -> tuple:
    return tuple(tuple(k) if isinstance(k, list) else k for k in doc)


@dataclass(frozen=True)
class CpRule:
    """One live CP entry.

    ``table`` is ``(function_name, table_name)`` for slice tables or the
    string ``"forward_l2"``. ``for_ns`` tags admin ``forward_l2`` rules
    that were installed for an NS's members.
    """

    rule_id: int
    owner: str
    table: tuple[str, str] | str
    key_values: tuple
    action: str
    params: tuple[tuple[str, int], ...]
    priority: int
    inserted_at: int
    for_ns: str | None = None

    @property
    def identity(self) -> tuple:
        return (self.owner, self.table, self.key_values)

    def to_document(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "owner": self.owner,
            "table": list(self.table) if isinstance(self.table, tuple) else self.table,
            "key_values": _key_to_json(self.key_values),
            "action": self.action,
            "params": dict(self.params),
            "priority": self.priority,
            "inserted_at": self.inserted_at,
            "for_ns": self.for_ns,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "CpRule":
        table = doc["table"]
        return cls(
            rule_id=doc["rule_id"],
            owner=doc["owner"],
            table=tuple(table) if isinstance(table, list) else table,
            key_values=_key_from_json(doc["key_values"]),
            action=doc["action"],
            params=tuple(sorted(doc["params"].items())),
            priority=doc["priority"],
            inserted_at=doc["inserted_at"],
            for_ns=doc.get("for_ns"),
        )


class StateStore:
    """``root=None`` keeps state in memory (used by property tests)."""

    NS_FILE = "ns_functions.json"
    RULES_FILE = "cp_rules.json"
    SEQ_FILE = "rule_seq.json"

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._ns: dict[str, NsRecord] = {}
        self._rules: dict[int, CpRule] = {}
        self._next_id = 1
        if self.root is not None:
            for doc in read_json(self.root / self.NS_FILE, default=[]):
                rec = NsRecord.from_document(doc)
                self._ns[rec.ns_id] = rec
            for doc in read_json(self.root / self.RULES_FILE, default=[]):
                rule = CpRule.from_document(doc)
                self._rules[rule.rule_id] = rule
            seq = read_json(self.root / self.SEQ_FILE, default={"next_rule_id": 1})
            self._next_id = max([seq["next_rule_id"], *(r + 1 for r in self._rules)])

    # -- persistence ------------------------------------------------------

    def _flush_ns(self) -> None:
        if self.root is not None:
            atomic_write_json(self.root / self.NS_FILE, [self._ns[k].to_document() for k in sorted(self._ns)])

    def _flush_rules(self) -> None:
        if self.root is not None:
            atomic_write_json(self.root / self.SEQ_FILE, {"next_rule_id": self._next_id})
            atomic_write_json(self.root / self.RULES_FILE, [r.to_document() for r in self.rules_for()])

    def snapshot(self) -> tuple:
        return (dict(self._ns), dict(self._rules))

    def restore(self, snap: tuple) -> None:
        """Put both tables back to a ``snapshot()``. Rule ids are never reissued."""
        self._ns, self._rules = dict(snap[0]), dict(snap[1])
        self._flush_ns()
        self._flush_rules()

    # -- ns_functions -----------------------------------------------------

    def record_ns(self, descriptor: NsDescriptor, time: int) -> NsRecord:
        if descriptor.ns_id in self._ns:
            raise StoreError("DUPLICATE_NS", f"{descriptor.ns_id} already active")
        for rec in self._ns.values():
            if rec.descriptor.vlan_id == descriptor.vlan_id:
                raise StoreError("VLAN_IN_USE", f"vlan {descriptor.vlan_id} used by {rec.ns_id}")
        rec = NsRecord(descriptor, time)
        self._ns[descriptor.ns_id] = rec
        self._flush_ns()
        return rec

    def remove_ns(self, ns_id: str) -> NsRecord:
        try:
            rec = self._ns.pop(ns_id)
        except KeyError:
            raise StoreError("NOT_FOUND", f"no active NS {ns_id!r}") from None
        self._flush_ns()
        return rec

    def get_ns(self, ns_id: str) -> NsRecord:
        try:
            return self._ns[ns_id]
        except KeyError:
            raise StoreError("NOT_FOUND", f"no active NS {ns_id!r}") from None

    def active_ns(self) -> list[NsRecord]:
        return [self._ns[k] for k in sorted(self._ns)]

    # -- cp_rules ---------------------------------------------------------

    def append_rule(
        self,
        owner: str,
        table: tuple[str, str] | str,
        key_values: Sequence,
        action: str,
        params: dict[str, int] | None = None,
        priority: int = 0,
        inserted_at: int = 0,
        for_ns: str | None = None,
    ) -> CpRule:
        """Add a rule, replacing (and retiring the id of) any live rule with the same identity."""
        if (table == FORWARD_L2) != (owner == ADMIN):
            raise StoreError("INVALID", "forward_l2 rules are owned by admin, and only those")
        rule = CpRule(
            rule_id=self._next_id,
            owner=owner,
            table=tuple(table) if isinstance(table, list) else table,
            key_values=tuple(key_values),
            action=action,
            params=tuple(sorted((params or {}).items())),
            priority=priority,
            inserted_at=inserted_at,
            for_ns=for_ns,
        )
        for rid, existing in list(self._rules.items()):
            if existing.identity == rule.identity:
                del self._rules[rid]
        self._next_id += 1
        self._rules[rule.rule_id] = rule
        self._flush_rules()
        return rule

    def find_rule(self, owner: str, table, key_values: Sequence) -> CpRule | None:
        ident = (owner, table, tuple(key_values))
        for rule in self._rules.values():
            if rule.identity == ident:
                return rule
        return None

    def remove_rule(self, owner: str, table, key_values: Sequence) -> CpRule:
        rule = self.find_rule(owner, table, key_values)
        if rule is None:
            raise StoreError("NOT_FOUND", f"no rule for {owner} {table} {tuple(key_values)}")
        del self._rules[rule.rule_id]
        self._flush_rules()
        return rule

    def rules_for(self, owner: str | None = None) -> list[CpRule]:
        return [self._rules[k] for k in sorted(self._rules) if owner is None or self._rules[k].owner == owner]

    def purge_ns_rules(self, ns_id: str) -> int:
        if ns_id == ADMIN:
            raise StoreError("INVALID", "admin rules cannot be purged with an NS")
        doomed = [rid for rid, r in self._rules.items() if r.owner == ns_id]
        for rid in doomed:
            del self._rules[rid]
        if doomed:
            self._flush_rules()
        return len(doomed)

    def discard_l2_for_ns(self, ns_id: str) -> int:
        """Drop the admin ``forward_l2`` rules installed for ``ns_id``'s members."""
        doomed = [rid for rid, r in self._rules.items() if r.owner == ADMIN and r.for_ns == ns_id]
        for rid in doomed:
            del self._rules[rid]
        if doomed:
            self._flush_rules()
        return len(doomed)

    def dangling_rules(self) -> list[CpRule]:
        """Live rules whose owner is neither admin nor an active NS."""
        return [r for r in self.rules_for() if r.owner != ADMIN and r.owner not in self._ns]
