"""Merges the functions of every active NS into one switch program.

Each NS gets its own copy of every table of every function it references
(qualified as ``ns__<ns_id>__<function>__<table>``), so no CP writer can
reach another NS's entries. A single parser covers the union of all header
requirements, a dispatch stage maps VLAN ids to slices, and ``forward_l2``
is the one shared, admin-owned table.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from ._fileio import atomic_write_text
from .descriptor import NsDescriptor
from .dsl import (
    HEADER_CATALOG,
    MANDATORY_HEADERS,
    ActionCall,
    FieldRef,
    KeySpec,
    P4FunctionDef,
    TableDef,
    canonical_json,
    is_identifier,
    prerequisite_closure,
    table_to_document,
)
from .errors import ComposeError, RepoError

FORWARD_L2 = "forward_l2"
DEFAULT_L2_CAPACITY = 1024

# (from header, selector field, value, to header); a transition is live only
# if its target is in the plan
_TRANSITIONS = (
    ("ethernet", "ethertype", 0x8100, "vlan"),
    ("vlan", "ethertype", 0x0800, "ipv4"),
    ("ipv4", "protocol", 6, "tcp"),
    ("ipv4", "protocol", 17, "udp"),
)

# deterministic header order for rendering
_HEADER_ORDER = tuple(HEADER_CATALOG)


class FunctionSource(Protocol):
    def get_function(self, name: str, version: int) -> P4FunctionDef: ...


def qualify_table_name(ns_id: str, function_name: str, table_name: str) -> str:
    for part in (ns_id, function_name, table_name):
        if not is_identifier(part):
            raise ComposeError("BAD_IDENTIFIER", f"{part!r} cannot be qualified")
    return f"ns__{ns_id}__{function_name}__{table_name}"


def split_qualified_name(name: str) -> tuple[str, str, str]:
    prefix, *parts = name.split("__")
    if prefix != "ns" or len(parts) != 3:
        raise ValueError(f"{name!r} is not a qualified slice table name")
    return parts[0], parts[1], parts[2]


@dataclass(frozen=True)
class ParsePlan:
    headers: frozenset[str]

    @property
    def transitions(self) -> tuple[tuple[str, str, int, str], ...]:
        return tuple(t for t in _TRANSITIONS if t[0] in self.headers and t[3] in self.headers)

    def to_document(self) -> dict:
        return {
            "headers": [h for h in _HEADER_ORDER if h in self.headers],
            "transitions": [list(t) for t in self.transitions],
        }


@dataclass(frozen=True)
class QualifiedTable:
    qualified_name: str
    table: TableDef
    function: tuple[str, int]


@dataclass(frozen=True)
class NsSlice:
    ns_id: str
    tenant_id: str
    vlan_id: int
    tables: tuple[QualifiedTable, ...]
    control_order: tuple[str, ...]

    @property
    def table_names(self) -> frozenset[str]:
        return frozenset(t.qualified_name for t in self.tables)

    def to_document(self) -> dict:
        return {
            "ns_id": self.ns_id,
            "tenant_id": self.tenant_id,
            "vlan_id": self.vlan_id,
            "tables": [
                {
                    "qualified_name": q.qualified_name,
                    "function": {"name": q.function[0], "version": q.function[1]},
                    "table": table_to_document(q.table),
                }
                for q in self.tables
            ],
            "control_order": list(self.control_order),
        }


@dataclass(frozen=True)
class ComposedProgram:
    parse_plan: ParsePlan
    dispatch: tuple[tuple[int, str], ...]  # (vlan_id, ns_id) sorted by vlan_id
    slices: tuple[NsSlice, ...]  # sorted by ns_id
    forward_l2: TableDef
    program_hash: str = ""

    @property
    def dispatch_map(self) -> dict[int, str]:
        return dict(self.dispatch)

    def slice(self, ns_id: str) -> NsSlice:
        for s in self.slices:
            if s.ns_id == ns_id:
                return s
        raise KeyError(ns_id)

    def tables(self) -> dict[str, TableDef]:
        """Every table by its program-wide name, ``forward_l2`` included."""
        out = {q.qualified_name: q.table for s in self.slices for q in s.tables}
        out[FORWARD_L2] = self.forward_l2
        return out

    @property
    def qualified_table_count(self) -> int:
        return sum(len(s.tables) for s in self.slices)

    def to_document(self) -> dict:
        return {
            "parse_plan": self.parse_plan.to_document(),
            "dispatch": {str(vid): ns for vid, ns in self.dispatch},
            "slices": [s.to_document() for s in self.slices],
            "forward_l2": table_to_document(self.forward_l2),
        }

    def canonical(self) -> str:
        return canonical_json(self.to_document())


def forward_l2_table(capacity: int = DEFAULT_L2_CAPACITY) -> TableDef:
    return TableDef(
        name=FORWARD_L2,
        keys=(KeySpec(FieldRef("ethernet", "dst_addr"), "exact"),),
        actions=("forward",),
        default_action=ActionCall("drop"),
        max_entries=capacity,
    )


def build_super_parser(functions: Iterable[P4FunctionDef]) -> ParsePlan:
    headers = set(MANDATORY_HEADERS)
    for f in functions:
        headers.update(h for h in f.headers if h in HEADER_CATALOG)
    return ParsePlan(prerequisite_closure(headers))


def _lookup(repo: FunctionSource | Mapping, name: str, version: int) -> P4FunctionDef:
    if isinstance(repo, Mapping):
        return repo[(name, version)]
    return repo.get_function(name, version)


def compose(
    active: Iterable[NsDescriptor],
    repo: FunctionSource | Mapping[tuple[str, int], P4FunctionDef],
    *,
    l2_capacity: int = DEFAULT_L2_CAPACITY,
) -> ComposedProgram:
    ordered = sorted(active, key=lambda d: d.ns_id)

    by_vlan: dict[int, str] = {}
    seen_ns: set[str] = set()
    for d in ordered:
        if d.ns_id in seen_ns:
            raise ComposeError("DUPLICATE_NS", f"{d.ns_id} listed twice", ns_id=d.ns_id)
        seen_ns.add(d.ns_id)
        if d.vlan_id in by_vlan:
            raise ComposeError(
                "VLAN_COLLISION",
                f"vlan {d.vlan_id} used by {by_vlan[d.vlan_id]} and {d.ns_id}",
                vlan_id=d.vlan_id,
                ns_a=by_vlan[d.vlan_id],
                ns_b=d.ns_id,
            )
        by_vlan[d.vlan_id] = d.ns_id

    used: list[P4FunctionDef] = []
    slices = []
    for d in ordered:
        tables: list[QualifiedTable] = []
        control: list[str] = []
        for name, version in d.functions:
            try:
                fdef = _lookup(repo, name, version)
            except (KeyError, RepoError):
                raise ComposeError(
                    "FUNCTION_NOT_FOUND",
                    f"{d.ns_id} requires {name} v{version}",
                    ns_id=d.ns_id,
                    name=name,
                    version=version,
                ) from None
            used.append(fdef)
            for t in fdef.tables:
                tables.append(QualifiedTable(qualify_table_name(d.ns_id, name, t.name), t, (name, version)))
            control.extend(qualify_table_name(d.ns_id, name, c) for c in fdef.control)
        slices.append(NsSlice(d.ns_id, d.tenant_id, d.vlan_id, tuple(tables), tuple(control)))

    program = ComposedProgram(
        parse_plan=build_super_parser(used),
        dispatch=tuple(sorted(by_vlan.items())),
        slices=tuple(slices),
        forward_l2=forward_l2_table(l2_capacity),
    )
    digest = hashlib.sha256(program.canonical().encode("utf-8")).hexdigest()
    return ComposedProgram(program.parse_plan, program.dispatch, program.slices, program.forward_l2, digest)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _render_table(lines: list[str], name: str, t: TableDef) -> None:
    lines.append(f"    table {name} {{")
    if t.keys:
        lines.append("        key = {")
        for k in t.keys:
            lines.append(f"            hdr.{k.field}: {k.match};")
        lines.append("        }")
    lines.append("        actions = { " + "; ".join(sorted(set(t.actions) | {t.default_action.name})) + "; }")
    lines.append(f"        default_action = {t.default_action};")
    lines.append(f"        size = {t.max_entries};")
    lines.append("    }")


def render_pseudo_p4(program: ComposedProgram) -> str:
    plan = program.parse_plan
    lines = [f"// program {program.program_hash}", ""]
    for h in _HEADER_ORDER:
        if h not in plan.headers:
            continue
        lines.append(f"header {h}_t {{")
        for fname, width in HEADER_CATALOG[h].fields:
            lines.append(f"    bit<{width}> {fname};")
        lines.append("}")
    lines.append("")
    lines.append("parser SuperParser(packet_in pkt, out headers_t hdr) {")
    for h in _HEADER_ORDER:
        if h not in plan.headers:
            continue
        lines.append(f"    state parse_{h} {{")
        lines.append(f"        pkt.extract(hdr.{h});")
        outgoing = [t for t in plan.transitions if t[0] == h]
        if outgoing:
            sel = outgoing[0][1]
            lines.append(f"        transition select(hdr.{h}.{sel}) {{")
            for _, _, value, dst in outgoing:
                lines.append(f"            {value:#06x}: parse_{dst};")
            lines.append("            default: accept;")
            lines.append("        }")
        else:
            lines.append("        transition accept;")
        lines.append("    }")
    lines.append("    state start { transition parse_ethernet; }")
    lines.append("}")
    lines.append("")
    lines.append("control Ingress(inout headers_t hdr, inout metadata_t meta) {")
    for s in program.slices:
        for q in s.tables:
            _render_table(lines, q.qualified_name, q.table)
    _render_table(lines, FORWARD_L2, program.forward_l2)
    lines.append("    apply {")
    lines.append("        if (!hdr.vlan.isValid()) { drop(); return; }")
    lines.append("        switch (hdr.vlan.vid) {")
    by_ns = {s.ns_id: s for s in program.slices}
    for vid, ns in program.dispatch:
        lines.append(f"            {vid}: {{  // {ns} (tenant {by_ns[ns].tenant_id})")
        for name in by_ns[ns].control_order:
            lines.append(f"                if (!meta.done) {name}.apply();")
        lines.append("            }")
    lines.append("            default: { drop(); return; }")
    lines.append("        }")
    lines.append(f"        if (!meta.egress_set) {FORWARD_L2}.apply();")
    lines.append("    }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_build(program: ComposedProgram, build_dir: Path | str) -> tuple[Path, Path]:
    build_dir = Path(build_dir)
    json_path = build_dir / f"program-{program.program_hash}.json"
    p4_path = build_dir / f"program-{program.program_hash}.p4.txt"
    atomic_write_text(json_path, program.canonical())
    atomic_write_text(p4_path, render_pseudo_p4(program))
    return json_path, p4_path
