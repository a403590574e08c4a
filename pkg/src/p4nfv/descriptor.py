"""NS descriptors (the P4NF metadata file) and principals."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .dsl import int_to_mac, is_identifier, mac_to_int
from .errors import OrchestratorError


@dataclass(frozen=True)
class Member:
    name: str
    mac: int
    port: int


@dataclass(frozen=True)
class NsDescriptor:
    ns_id: str
    tenant_id: str
    vlan_id: int
    functions: tuple[tuple[str, int], ...]
    members: tuple[Member, ...] = ()

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise OrchestratorError("BAD_DESCRIPTOR", "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not is_identifier(self.ns_id):
            out.append(f"ns_id {self.ns_id!r} is not a valid identifier")
        if not is_identifier(self.tenant_id):
            out.append(f"tenant_id {self.tenant_id!r} is not a valid identifier")
        if self.ns_id == "admin" or self.tenant_id == "admin":
            out.append("'admin' is reserved")
        if not isinstance(self.vlan_id, int) or not 1 <= self.vlan_id <= 4094:
            out.append(f"vlan_id {self.vlan_id!r} outside 1..4094")
        if not self.functions:
            out.append("functions must be non-empty")
        names = [name for name, _ in self.functions]
        if len(set(names)) != len(names):
            out.append("a function may appear only once per NS")
        macs = [m.mac for m in self.members]
        if len(set(macs)) != len(macs):
            out.append("member MACs must be pairwise distinct")
        for m in self.members:
            if not 0 <= m.mac < (1 << 48):
                out.append(f"member {m.name!r} MAC out of range")
            if m.port < 0:
                out.append(f"member {m.name!r} port must be non-negative")
        return out

    @property
    def ports(self) -> frozenset[int]:
        return frozenset(m.port for m in self.members)

    def to_document(self) -> dict[str, Any]:
        return {
            "ns_id": self.ns_id,
            "tenant_id": self.tenant_id,
            "vlan_id": self.vlan_id,
            "functions": [{"name": n, "version": v} for n, v in self.functions],
            "members": [{"name": m.name, "mac": int_to_mac(m.mac), "port": m.port} for m in self.members],
        }

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "NsDescriptor":
        try:
            return cls(
                ns_id=doc["ns_id"],
                tenant_id=doc["tenant_id"],
                vlan_id=doc["vlan_id"],
                functions=tuple((f["name"], f["version"]) for f in doc["functions"]),
                members=tuple(
                    Member(m["name"], mac_to_int(m["mac"]), m["port"]) for m in doc.get("members", [])
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise OrchestratorError("BAD_DESCRIPTOR", f"malformed descriptor: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "NsDescriptor":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise OrchestratorError("BAD_DESCRIPTOR", str(exc)) from None
        if not isinstance(doc, dict):
            raise OrchestratorError("BAD_DESCRIPTOR", "descriptor must be a JSON object")
        return cls.from_document(doc)


@dataclass(frozen=True)
class Principal:
    """Either the network administrator or a tenant."""

    tenant_id: str | None = None

    @property
    def is_admin(self) -> bool:
        return self.tenant_id is None

    @classmethod
    def admin(cls) -> "Principal":
        return cls(None)

    @classmethod
    def tenant(cls, tenant_id: str) -> "Principal":
        return cls(tenant_id)

    @classmethod
    def parse(cls, text: str) -> "Principal":
        """``admin`` or ``tenant:<id>`` (a bare ``<id>`` is also accepted)."""
        if text == "admin":
            return cls.admin()
        tenant = text.split(":", 1)[1] if text.startswith("tenant:") else text
        if not is_identifier(tenant):
            raise OrchestratorError("BAD_PRINCIPAL", f"cannot parse principal {text!r}")
        return cls.tenant(tenant)

    def may_manage(self, tenant_id: str) -> bool:
        return self.is_admin or self.tenant_id == tenant_id

    def __str__(self) -> str:
        return "admin" if self.is_admin else f"tenant:{self.tenant_id}"
