"""Header catalog, function-definition format and composability checks.

A P4 function here is a declarative subset of a P4 program: the headers it
needs parsed, a list of match-action tables over those headers and a linear
control sequence applying them. Only the five catalog actions are allowed.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import DefinitionError

IDENTIFIER_RE = re.compile(r"^[a-z0-9]+(?:[_-][a-z0-9]+)*$")


def is_identifier(name: object) -> bool:
    """Lowercase alphanumerics joined by single ``_`` or ``-``.

    No leading, trailing or doubled separators, so a ``__`` never occurs
    inside a name and can be used as an unambiguous qualifier separator.
    """
    return isinstance(name, str) and IDENTIFIER_RE.match(name) is not None


# ---------------------------------------------------------------------------
# Header catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeaderDef:
    name: str
    fields: tuple[tuple[str, int], ...]

    @property
    def total_bits(self) -> int:
        return sum(width for _, width in self.fields)

    @property
    def total_bytes(self) -> int:
        return self.total_bits // 8

    def field_layout(self, field_name: str) -> tuple[int, int]:
        offset = 0
        for name, width in self.fields:
            if name == field_name:
                return offset, width
            offset += width
        raise KeyError(field_name)


HEADER_CATALOG: dict[str, HeaderDef] = {
    h.name: h
    for h in (
        HeaderDef("ethernet", (("dst_addr", 48), ("src_addr", 48), ("ethertype", 16))),
        HeaderDef("vlan", (("pcp", 3), ("dei", 1), ("vid", 12), ("ethertype", 16))),
        HeaderDef(
            "ipv4",
            (
                ("version", 4),
                ("ihl", 4),
                ("dscp_ecn", 8),
                ("total_len", 16),
                ("identification", 16),
                ("flags_frag", 16),
                ("ttl", 8),
                ("protocol", 8),
                ("checksum", 16),
                ("src_addr", 32),
                ("dst_addr", 32),
            ),
        ),
        HeaderDef("tcp", (("src_port", 16), ("dst_port", 16))),
        HeaderDef("udp", (("src_port", 16), ("dst_port", 16), ("length", 16), ("checksum", 16))),
    )
}

MANDATORY_HEADERS = frozenset({"ethernet", "vlan"})

# header -> header that must be parsed before it
PARSE_PREREQUISITE = {"vlan": "ethernet", "ipv4": "vlan", "tcp": "ipv4", "udp": "ipv4"}

# fields rendered as dotted-quad / colon-hex in text forms
IPV4_ADDRESS_FIELDS = frozenset({("ipv4", "src_addr"), ("ipv4", "dst_addr")})
MAC_ADDRESS_FIELDS = frozenset({("ethernet", "src_addr"), ("ethernet", "dst_addr")})


def prerequisite_closure(headers: Iterable[str]) -> frozenset[str]:
    closed = set(headers)
    pending = list(closed)
    while pending:
        dep = PARSE_PREREQUISITE.get(pending.pop())
        if dep is not None and dep not in closed:
            closed.add(dep)
            pending.append(dep)
    return frozenset(closed)


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

PORT_BITS = 16

# action name -> ordered (param name, bit width)
ACTION_CATALOG: dict[str, tuple[tuple[str, int], ...]] = {
    "pass": (),
    "drop": (),
    "count": (),
    "forward": (("port", PORT_BITS),),
    "l3_route": (("port", PORT_BITS), ("src_mac", 48), ("dst_mac", 48)),
}


@dataclass(frozen=True)
class ActionCall:
    """An action name bound to its parameters (sorted ``(name, value)`` pairs)."""

    name: str
    params: tuple[tuple[str, int], ...] = ()

    @classmethod
    def of(cls, name: str, params: Mapping[str, int] | None = None) -> "ActionCall":
        return cls(name, tuple(sorted((params or {}).items())))

    @property
    def param_dict(self) -> dict[str, int]:
        return dict(self.params)

    def signature_errors(self) -> list[str]:
        """Problems with this call against the catalog; empty when well formed."""
        if self.name not in ACTION_CATALOG:
            return [f"unknown action {self.name!r}"]
        expected = dict(ACTION_CATALOG[self.name])
        got = self.param_dict
        problems = []
        if set(got) != set(expected):
            problems.append(
                f"{self.name} takes params {sorted(expected)}, got {sorted(got)}"
            )
        for pname, value in got.items():
            width = expected.get(pname)
            if width is None:
                continue
            if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < (1 << width):
                problems.append(f"param {pname}={value!r} does not fit {width} bits")
        return problems

    def __str__(self) -> str:
        if not self.params:
            return f"{self.name}()"
        inner = ",".join(f"{k}={v}" for k, v in self.params)
        return f"{self.name}({inner})"


# ---------------------------------------------------------------------------
# Function definitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldRef:
    header: str
    field: str

    @classmethod
    def parse(cls, text: str) -> "FieldRef":
        header, sep, fname = text.partition(".")
        if not sep or not header or not fname or "." in fname:
            raise DefinitionError("BAD_TYPE", f"field reference {text!r} is not 'header.field'")
        return cls(header, fname)

    def __str__(self) -> str:
        return f"{self.header}.{self.field}"


@dataclass(frozen=True)
class KeySpec:
    field: FieldRef
    match: str  # "exact" | "lpm"


@dataclass(frozen=True)
class TableDef:
    name: str
    keys: tuple[KeySpec, ...]
    actions: tuple[str, ...]
    default_action: ActionCall
    max_entries: int

    @property
    def has_lpm(self) -> bool:
        return bool(self.keys) and self.keys[-1].match == "lpm"


@dataclass(frozen=True)
class P4FunctionDef:
    name: str
    version: int
    headers: frozenset[str]
    tables: tuple[TableDef, ...]
    control: tuple[str, ...]

    @property
    def ident(self) -> tuple[str, int]:
        return (self.name, self.version)

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    where: str = field(default="")


def resolve_field(ref: FieldRef) -> tuple[int, int]:
    """Return ``(bit_offset, bit_width)`` of a field inside its header."""
    hdr = HEADER_CATALOG.get(ref.header)
    if hdr is None:
        raise DefinitionError("UNKNOWN_FIELD", f"no header {ref.header!r} in catalog")
    try:
        return hdr.field_layout(ref.field)
    except KeyError:
        raise DefinitionError("UNKNOWN_FIELD", f"header {ref.header!r} has no field {ref.field!r}") from None


def validate_function(fdef: P4FunctionDef) -> list[Violation]:
    """Collect every composability violation, in a stable order."""
    out: list[Violation] = []

    def add(code: str, message: str, where: str = "") -> None:
        out.append(Violation(code, message, where))

    if not is_identifier(fdef.name):
        add("BAD_IDENTIFIER", f"function name {fdef.name!r} is not a valid identifier", "name")

    for h in sorted(fdef.headers):
        if h not in HEADER_CATALOG:
            add("UNKNOWN_HEADER", f"header {h!r} is not in the catalog", "headers")
    missing = MANDATORY_HEADERS - fdef.headers
    if missing:
        add("MISSING_MANDATORY_HEADERS", f"missing {sorted(missing)}", "headers")
    known = {h for h in fdef.headers if h in HEADER_CATALOG}
    for h in sorted(known):
        dep = PARSE_PREREQUISITE.get(h)
        if dep is not None and dep not in fdef.headers:
            add("MISSING_PREREQUISITE_HEADER", f"{h!r} requires {dep!r}", "headers")

    seen: set[str] = set()
    for t in fdef.tables:
        where = f"tables.{t.name}"
        if not is_identifier(t.name):
            add("BAD_IDENTIFIER", f"table name {t.name!r} is not a valid identifier", where)
        if t.name in seen:
            add("DUP_TABLE_NAME", f"table {t.name!r} declared twice", where)
        seen.add(t.name)

        for i, key in enumerate(t.keys):
            ref = key.field
            if ref.header not in HEADER_CATALOG:
                add("UNKNOWN_HEADER", f"key {ref} uses unknown header {ref.header!r}", where)
                continue
            try:
                resolve_field(ref)
            except DefinitionError:
                add("UNKNOWN_FIELD", f"key {ref} names no catalog field", where)
                continue
            if ref.header not in fdef.headers:
                add("UNDECLARED_HEADER_IN_KEY", f"key {ref} uses undeclared header {ref.header!r}", where)
            if key.match == "lpm" and i != len(t.keys) - 1:
                add("BAD_LPM_POSITION", f"lpm key {ref} must be the last key", where)
            if key.match not in ("exact", "lpm"):
                add("BAD_MATCH_KIND", f"match kind {key.match!r} not supported", where)

        for a in t.actions:
            if a not in ACTION_CATALOG:
                add("UNKNOWN_ACTION", f"action {a!r} is not in the catalog", where)
        d = t.default_action
        if d.name not in t.actions and d.name not in ("pass", "drop"):
            add("BAD_DEFAULT_ACTION", f"default {d.name!r} not among permitted actions", where)
        elif d.signature_errors():
            add("BAD_DEFAULT_ACTION", "; ".join(d.signature_errors()), where)

    applied: set[str] = set()
    for name in fdef.control:
        if name not in seen:
            add("CONTROL_REFERENCES_UNKNOWN_TABLE", f"control applies unknown table {name!r}", "control")
        elif name in applied:
            add("DUP_CONTROL_ENTRY", f"table {name!r} applied more than once", "control")
        applied.add(name)
    return out


# ---------------------------------------------------------------------------
# Document format
# ---------------------------------------------------------------------------

_TOP_KEYS = ("name", "version", "headers", "tables", "control")
_TABLE_KEYS = ("name", "keys", "actions", "default_action", "max_entries")


def _require(doc: Mapping[str, Any], key: str, kind: type | tuple[type, ...], where: str) -> Any:
    if key not in doc:
        raise DefinitionError("MISSING_FIELD", f"{where}: missing {key!r}")
    value = doc[key]
    if not isinstance(value, kind) or (isinstance(value, bool) and kind is not bool):
        raise DefinitionError("BAD_TYPE", f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
    return value


def _parse_param(value: Any, where: str) -> int:
    if isinstance(value, bool):
        raise DefinitionError("BAD_TYPE", f"{where}: boolean is not a parameter value")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return parse_scalar(value)
        except ValueError as exc:
            raise DefinitionError("BAD_TYPE", f"{where}: {exc}") from None
    raise DefinitionError("BAD_TYPE", f"{where}: expected integer or address string")


def _parse_action_call(doc: Any, where: str) -> ActionCall:
    if not isinstance(doc, dict):
        raise DefinitionError("BAD_TYPE", f"{where}: expected object")
    name = _require(doc, "action", str, where)
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise DefinitionError("BAD_TYPE", f"{where}.params: expected object")
    return ActionCall.of(name, {k: _parse_param(v, f"{where}.params.{k}") for k, v in params.items()})


def function_from_document(doc: Any) -> P4FunctionDef:
    if not isinstance(doc, dict):
        raise DefinitionError("BAD_TYPE", "document root must be an object")
    extra = sorted(set(doc) - set(_TOP_KEYS))
    if extra:
        raise DefinitionError("MALFORMED_DOCUMENT", f"unknown top-level keys {extra}")
    name = _require(doc, "name", str, "function")
    version = _require(doc, "version", int, "function")
    if version < 1:
        raise DefinitionError("BAD_TYPE", "function.version must be positive")
    headers = _require(doc, "headers", list, "function")
    if not all(isinstance(h, str) for h in headers):
        raise DefinitionError("BAD_TYPE", "function.headers must be strings")
    tables_doc = _require(doc, "tables", list, "function")
    control_doc = _require(doc, "control", list, "function")

    tables = []
    for i, tdoc in enumerate(tables_doc):
        where = f"tables[{i}]"
        if not isinstance(tdoc, dict):
            raise DefinitionError("BAD_TYPE", f"{where}: expected object")
        extra = sorted(set(tdoc) - set(_TABLE_KEYS))
        if extra:
            raise DefinitionError("MALFORMED_DOCUMENT", f"{where}: unknown keys {extra}")
        tname = _require(tdoc, "name", str, where)
        keys = []
        for j, kdoc in enumerate(_require(tdoc, "keys", list, where)):
            kwhere = f"{where}.keys[{j}]"
            if not isinstance(kdoc, dict):
                raise DefinitionError("BAD_TYPE", f"{kwhere}: expected object")
            ref = FieldRef.parse(_require(kdoc, "field", str, kwhere))
            keys.append(KeySpec(ref, _require(kdoc, "match", str, kwhere)))
        actions = _require(tdoc, "actions", list, where)
        if not all(isinstance(a, str) for a in actions):
            raise DefinitionError("BAD_TYPE", f"{where}.actions must be strings")
        if "default_action" not in tdoc:
            raise DefinitionError("MISSING_FIELD", f"{where}: missing 'default_action'")
        default = _parse_action_call(tdoc["default_action"], f"{where}.default_action")
        max_entries = _require(tdoc, "max_entries", int, where)
        if max_entries < 1:
            raise DefinitionError("BAD_TYPE", f"{where}.max_entries must be positive")
        tables.append(TableDef(tname, tuple(keys), tuple(actions), default, max_entries))

    control = []
    for i, cdoc in enumerate(control_doc):
        if not isinstance(cdoc, dict):
            raise DefinitionError("BAD_TYPE", f"control[{i}]: expected object")
        control.append(_require(cdoc, "apply", str, f"control[{i}]"))

    return P4FunctionDef(name, version, frozenset(headers), tuple(tables), tuple(control))


def parse_function_def(document: str | bytes) -> P4FunctionDef:
    """Parse a JSON function definition. Structural only; see ``validate_function``."""
    try:
        doc = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DefinitionError("MALFORMED_DOCUMENT", str(exc)) from None
    return function_from_document(doc)


def action_to_document(call: ActionCall) -> dict:
    return {"action": call.name, "params": call.param_dict}


def table_to_document(t: TableDef) -> dict:
    return {
        "name": t.name,
        "keys": [{"field": str(k.field), "match": k.match} for k in t.keys],
        "actions": list(t.actions),
        "default_action": action_to_document(t.default_action),
        "max_entries": t.max_entries,
    }


def function_to_document(fdef: P4FunctionDef) -> dict:
    return {
        "name": fdef.name,
        "version": fdef.version,
        "headers": sorted(fdef.headers),
        "tables": [table_to_document(t) for t in fdef.tables],
        "control": [{"apply": c} for c in fdef.control],
    }


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def serialize_function(fdef: P4FunctionDef) -> str:
    return canonical_json(function_to_document(fdef))


# ---------------------------------------------------------------------------
# Value text forms
# ---------------------------------------------------------------------------


def mac_to_int(text: str) -> int:
    parts = text.split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise ValueError(f"bad MAC address {text!r}")
    return int("".join(parts), 16)


def int_to_mac(value: int) -> str:
    raw = f"{value:012x}"
    return ":".join(raw[i : i + 2] for i in range(0, 12, 2))


def parse_scalar(text: str) -> int:
    """Integer from decimal, ``0x`` hex, MAC or dotted-quad IPv4 text."""
    text = text.strip()
    if text.count(":") == 5:
        return mac_to_int(text)
    if text.count(".") == 3:
        return int(ipaddress.IPv4Address(text))
    return int(text, 0)


def parse_key_value(key: KeySpec, text: str) -> int | tuple[int, int]:
    """Parse one CP key component. LPM components take ``value/prefix_len``."""
    if key.match == "lpm":
        value, sep, plen = text.partition("/")
        if not sep:
            _, width = resolve_field(key.field)
            return (parse_scalar(value), width)
        return (parse_scalar(value), int(plen))
    return parse_scalar(text)


def format_key_value(key: KeySpec, value: int | tuple[int, int]) -> str:
    ref = (key.field.header, key.field.field)

    def scalar(v: int) -> str:
        if ref in IPV4_ADDRESS_FIELDS:
            return str(ipaddress.IPv4Address(v))
        if ref in MAC_ADDRESS_FIELDS:
            return int_to_mac(v)
        return str(v)

    if isinstance(value, tuple):
        return f"{scalar(value[0])}/{value[1]}"
    return scalar(value)
