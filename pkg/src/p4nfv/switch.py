"""Virtual-time software switch executing composed programs.

Pipeline per frame: compile window, ingress port, parse, VLAN tag check,
dispatch on VID, the selected slice's tables in control order, then
``forward_l2`` unless a slice action already chose an egress port.

Loading a program opens a compile window ``[at, at + duration)``. In
``hard_swap`` mode every frame in the window is dropped; in ``slow_mode``
the previous program keeps serving. At the end of the window the new
program becomes active. CP writes issued while a compile is pending go to
the incoming program, so they are live from the swap instant onward.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .composer import FORWARD_L2, ComposedProgram, ParsePlan
from .dsl import HEADER_CATALOG, ActionCall, TableDef, format_key_value, resolve_field
from .errors import SwitchError

log = logging.getLogger(__name__)

HARD_SWAP = "hard_swap"
SLOW_MODE = "slow_mode"
COMPILE_MODES = (HARD_SWAP, SLOW_MODE)

DROP_REASONS = (
    "NO_VLAN_TAG",
    "UNKNOWN_VLAN",
    "TABLE_DROP",
    "L2_MISS",
    "RECOMPILING",
    "TTL_EXPIRED",
    "PARSE_ERROR",
    "PORT_DOWN",
)

DEFAULT_BASE_COMPILE_US = 500_000
DEFAULT_PER_TABLE_US = 10_000

# ---------------------------------------------------------------------------
# Frames and parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    data: bytes
    ingress_port: int
    timestamp: int = 0


def _field_extractors(header: str) -> tuple[tuple[str, int, int], ...]:
    hdr = HEADER_CATALOG[header]
    out = []
    offset = 0
    for name, width in hdr.fields:
        out.append((name, hdr.total_bits - offset - width, (1 << width) - 1))
        offset += width
    return tuple(out)


_EXTRACTORS = {h: _field_extractors(h) for h in HEADER_CATALOG}
_SIZES = {h: HEADER_CATALOG[h].total_bytes for h in HEADER_CATALOG}


@dataclass
class ParsedHeaders:
    fields: dict[str, dict[str, int]] = field(default_factory=dict)
    offsets: dict[str, int] = field(default_factory=dict)
    invalid: set[str] = field(default_factory=set)

    def valid(self, header: str) -> bool:
        return header in self.fields and header not in self.invalid

    def get(self, header: str, fname: str) -> int:
        return self.fields[header][fname]


def parse_frame(data: bytes, plan: ParsePlan | Iterable[str]) -> ParsedHeaders:
    """Run the parser for ``plan``; raises ``SwitchError(PARSE_ERROR)`` on truncation."""
    headers = plan.headers if isinstance(plan, ParsePlan) else frozenset(plan)
    out = ParsedHeaders()
    pos = 0
    current = "ethernet"
    while current is not None:
        size = _SIZES[current]
        if len(data) < pos + size:
            raise SwitchError("PARSE_ERROR", f"frame ends inside {current} header")
        raw = int.from_bytes(data[pos : pos + size], "big")
        values = {name: (raw >> shift) & mask for name, shift, mask in _EXTRACTORS[current]}
        out.fields[current] = values
        out.offsets[current] = pos
        pos += size
        nxt = None
        if current == "ethernet":
            if values["ethertype"] == 0x8100:
                nxt = "vlan"
        elif current == "vlan":
            if values["ethertype"] == 0x0800:
                nxt = "ipv4"
        elif current == "ipv4":
            if values["version"] != 4 or values["ihl"] != 5:
                out.invalid.add("ipv4")
            elif values["protocol"] == 6:
                nxt = "tcp"
            elif values["protocol"] == 17:
                nxt = "udp"
        current = nxt if nxt in headers else None
    return out


def ipv4_checksum(header: bytes) -> int:
    """Ones' complement sum over a 20-byte header with the checksum field zeroed."""
    words = bytearray(header)
    words[10:12] = b"\x00\x00"
    total = sum(int.from_bytes(words[i : i + 2], "big") for i in range(0, len(words), 2))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


# ---------------------------------------------------------------------------
# Verdicts and stats
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEntry:
    stage: str
    table: str
    result: str  # "hit" | "miss" | "-"
    action: str

    def __str__(self) -> str:
        return f"{self.stage}:{self.table}:{self.result}:{self.action}"


@dataclass(frozen=True)
class Verdict:
    port: int | None
    reason: str | None
    trace: tuple[TraceEntry, ...]
    ns_id: str | None = None
    data: bytes = b""

    @property
    def forwarded(self) -> bool:
        return self.reason is None

    def __str__(self) -> str:
        return f"FORWARD({self.port})" if self.forwarded else f"DROP({self.reason})"


@dataclass(frozen=True)
class CompileJob:
    program_hash: str
    start: int
    duration: int
    mode: str

    @property
    def end(self) -> int:
        return self.start + self.duration

    def to_document(self) -> dict:
        return {"program_hash": self.program_hash, "start": self.start, "duration": self.duration, "mode": self.mode}


@dataclass
class SwitchStats:
    offered: int
    groups: dict[str, dict]  # ns_id | "global" -> {"delivered": n, "dropped": {reason: n}}
    downtime_windows: list[tuple[int, int]]
    counters: dict[str, dict[str, int]]

    @property
    def delivered(self) -> int:
        return sum(g["delivered"] for g in self.groups.values())

    def dropped(self, reason: str | None = None) -> int:
        return sum(
            n for g in self.groups.values() for r, n in g["dropped"].items() if reason is None or r == reason
        )

    @property
    def downtime_us(self) -> int:
        return sum(end - start for start, end in self.downtime_windows)

    def to_document(self) -> dict:
        dropped = Counter()
        for g in self.groups.values():
            dropped.update(g["dropped"])
        return {
            "offered": self.offered,
            "delivered": self.delivered,
            "dropped": dict(sorted(dropped.items())),
            "groups": self.groups,
            "downtime_windows": [list(w) for w in self.downtime_windows],
            "downtime_us": self.downtime_us,
            "counters": self.counters,
        }


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass
class _Entry:
    action: ActionCall
    priority: int = 0
    hits: int = 0


class _TableState:
    def __init__(self, tdef: TableDef):
        self.tdef = tdef
        self.widths = tuple(resolve_field(k.field)[1] for k in tdef.keys)
        self.lpm = tdef.has_lpm
        self.entries: dict[tuple, _Entry] = {}
        self._prefix_lens: Counter[int] = Counter()
        self._order: tuple[int, ...] = ()
        self.default_hits = 0

    def normalize_key(self, key_values: Sequence) -> tuple:
        keys = self.tdef.keys
        if not isinstance(key_values, (list, tuple)) or len(key_values) != len(keys):
            raise SwitchError("BAD_KEY", f"{self.tdef.name} takes {len(keys)} key values")
        out = []
        for spec, width, kv in zip(keys, self.widths, key_values):
            if spec.match == "lpm":
                if not isinstance(kv, (list, tuple)) or len(kv) != 2:
                    raise SwitchError("BAD_KEY", f"lpm key {spec.field} needs (value, prefix_len)")
                value, plen = kv
                if not isinstance(plen, int) or not 0 <= plen <= width:
                    raise SwitchError("BAD_KEY", f"prefix length {plen!r} outside 0..{width}")
                self._check_width(spec, value, width)
                host_mask = (1 << (width - plen)) - 1
                if value & host_mask:
                    raise SwitchError("BAD_KEY", f"{spec.field} value has bits set beyond /{plen}")
                out.append((value, plen))
            else:
                self._check_width(spec, kv, width)
                out.append(kv)
        return tuple(out)

    @staticmethod
    def _check_width(spec, value, width) -> None:
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < (1 << width):
            raise SwitchError("BAD_KEY", f"{spec.field} value {value!r} does not fit {width} bits")

    def put(self, key: tuple, entry: _Entry) -> bool:
        replaced = key in self.entries
        self.entries[key] = entry
        if self.lpm and not replaced:
            self._prefix_lens[key[-1][1]] += 1
            self._order = tuple(sorted(self._prefix_lens, reverse=True))
        return replaced

    def remove(self, key: tuple) -> None:
        del self.entries[key]
        if self.lpm:
            plen = key[-1][1]
            self._prefix_lens[plen] -= 1
            if not self._prefix_lens[plen]:
                del self._prefix_lens[plen]
            self._order = tuple(sorted(self._prefix_lens, reverse=True))

    def lookup(self, values: tuple[int, ...]) -> tuple[tuple, _Entry] | None:
        if not self.lpm:
            entry = self.entries.get(values)
            return (values, entry) if entry is not None else None
        exact, lpm_value = values[:-1], values[-1]
        width = self.widths[-1]
        full = (1 << width) - 1
        for plen in self._order:
            mask = full ^ ((1 << (width - plen)) - 1)
            key = exact + ((lpm_value & mask, plen),)
            entry = self.entries.get(key)
            if entry is not None:
                return key, entry
        return None

    def key_text(self, key: tuple) -> str:
        return "|".join(format_key_value(spec, v) for spec, v in zip(self.tdef.keys, key)) or "()"


class _Pipeline:
    """A loaded program plus its CP state (table entries, up ports)."""

    def __init__(self, program: ComposedProgram):
        self.program = program
        self.tables = {name: _TableState(t) for name, t in program.tables().items()}
        self.ports: frozenset[int] = frozenset()
        self.key_fields = {
            name: tuple((k.field.header, k.field.field) for k in t.tdef.keys) for name, t in self.tables.items()
        }
        slices = {s.ns_id: s for s in program.slices}
        self.dispatch = {vid: (ns, tuple(slices[ns].control_order)) for vid, ns in program.dispatch}


# ---------------------------------------------------------------------------
# Switch
# ---------------------------------------------------------------------------


class Switch:
    def __init__(self, base_compile_us: int = DEFAULT_BASE_COMPILE_US, per_table_us: int = DEFAULT_PER_TABLE_US):
        self.base_compile_us = base_compile_us
        self.per_table_us = per_table_us
        self.now = 0
        self._active: _Pipeline | None = None
        self._staged: _Pipeline | None = None
        self._job: CompileJob | None = None
        self.jobs: list[CompileJob] = []
        self._downtime: list[tuple[int, int]] = []
        self._offered = 0
        self._groups: dict[str, dict] = {}

    # -- time and program lifecycle ---------------------------------------

    def compile_duration(self, program: ComposedProgram) -> int:
        return self.base_compile_us + self.per_table_us * (program.qualified_table_count + 1)

    def advance(self, t: int) -> None:
        if t < self.now:
            raise SwitchError("TIME_REGRESSION", f"time {t} is before current time {self.now}")
        self.now = t
        if self._job is not None and t >= self._job.end:
            self._active = self._staged
            self._staged = None
            log.debug("program %s active at %d", self._job.program_hash[:12], self._job.end)
            self._job = None

    def compiling(self) -> bool:
        return self._job is not None

    @property
    def pending_job(self) -> CompileJob | None:
        return self._job

    @property
    def program(self) -> ComposedProgram | None:
        """The program currently serving traffic."""
        return self._active.program if self._active else None

    @property
    def incoming_program(self) -> ComposedProgram | None:
        """The program CP writes target: the one compiling, else the active one."""
        target = self._staged or self._active
        return target.program if target else None

    def load_program(self, program: ComposedProgram, at: int, mode: str = HARD_SWAP) -> CompileJob:
        if mode not in COMPILE_MODES:
            raise SwitchError("BAD_MODE", f"unknown compile mode {mode!r}")
        self.advance(at)
        if self._job is not None:
            raise SwitchError("COMPILE_IN_PROGRESS", f"compile running until {self._job.end}")
        job = CompileJob(program.program_hash, at, self.compile_duration(program), mode)
        self._staged = _Pipeline(program)
        self._job = job
        self.jobs.append(job)
        if mode == HARD_SWAP:
            self._downtime.append((job.start, job.end))
        if job.duration == 0:
            self.advance(at)
        return job

    def cancel_compile(self) -> None:
        """Abandon the pending compile as though it was never started."""
        if self._job is None:
            raise SwitchError("NO_COMPILE", "no compile pending")
        job = self._job
        self.jobs.remove(job)
        if job.mode == HARD_SWAP:
            self._downtime.remove((job.start, job.end))
        self._job = None
        self._staged = None

    def install_program(self, program: ComposedProgram) -> None:
        """Activate ``program`` immediately, with no compile window.

        Used to rebuild switch state in a fresh process from persisted
        state; not part of the lifecycle workflow.
        """
        if self._job is not None:
            raise SwitchError("COMPILE_IN_PROGRESS", f"compile running until {self._job.end}")
        self._active = _Pipeline(program)

    def _cp_target(self) -> _Pipeline:
        target = self._staged or self._active
        if target is None:
            raise SwitchError("NO_PROGRAM", "no program loaded")
        return target

    # -- control plane ----------------------------------------------------

    def configure_ports(self, ports: Iterable[int]) -> None:
        self._cp_target().ports = frozenset(ports)

    @property
    def ports(self) -> frozenset[int]:
        return self._active.ports if self._active else frozenset()

    def _table(self, name: str) -> _TableState:
        table = self._cp_target().tables.get(name)
        if table is None:
            raise SwitchError("UNKNOWN_TABLE", f"program has no table {name!r}", table=name)
        return table

    def normalize_key(self, table: str, key_values: Sequence) -> tuple:
        return self._table(table).normalize_key(key_values)

    def check_entry(self, table: str, key_values: Sequence, action: str, params=None) -> tuple:
        """Validate an insert without applying it. Returns the normalized key."""
        t = self._table(table)
        key = t.normalize_key(key_values)
        if action not in t.tdef.actions:
            raise SwitchError("ACTION_NOT_PERMITTED", f"{action!r} not permitted in {table}")
        call = ActionCall.of(action, params)
        problems = call.signature_errors()
        if problems:
            raise SwitchError("BAD_PARAMS", "; ".join(problems))
        if key not in t.entries and len(t.entries) >= t.tdef.max_entries:
            raise SwitchError("TABLE_FULL", f"{table} holds {t.tdef.max_entries} entries")
        return key

    def insert_entry(self, table: str, key_values: Sequence, action: str, params=None, priority: int = 0) -> str:
        """Insert or replace an entry. Returns ``"INSERTED"`` or ``"REPLACED"``."""
        key = self.check_entry(table, key_values, action, params)
        replaced = self._table(table).put(key, _Entry(ActionCall.of(action, params), priority))
        return "REPLACED" if replaced else "INSERTED"

    def delete_entry(self, table: str, key_values: Sequence) -> None:
        t = self._table(table)
        key = t.normalize_key(key_values)
        if key not in t.entries:
            raise SwitchError("NOT_FOUND", f"no entry {key!r} in {table}")
        t.remove(key)

    def entries(self, incoming: bool = False) -> dict[str, dict[tuple, tuple[str, tuple]]]:
        """Live entries per table: ``{table: {key: (action, params)}}``."""
        pipe = (self._staged or self._active) if incoming else self._active
        if pipe is None:
            return {}
        return {
            name: {k: (e.action.name, e.action.params) for k, e in t.entries.items()}
            for name, t in pipe.tables.items()
        }

    def counter(self, table: str, key_values: Sequence | None = None) -> int:
        """Hits recorded by ``count`` on an entry, or on the default action when ``key_values`` is None."""
        if self._active is None or table not in self._active.tables:
            raise SwitchError("UNKNOWN_TABLE", f"program has no table {table!r}")
        t = self._active.tables[table]
        if key_values is None:
            return t.default_hits
        entry = t.entries.get(t.normalize_key(key_values))
        return entry.hits if entry else 0

    # -- data plane -------------------------------------------------------

    def process_packet(self, frame: Frame) -> Verdict:
        self.advance(frame.timestamp)
        verdict = self._run(frame)
        self._offered += 1
        group = self._groups.setdefault(verdict.ns_id or "global", {"delivered": 0, "dropped": {}})
        if verdict.forwarded:
            group["delivered"] += 1
        else:
            group["dropped"][verdict.reason] = group["dropped"].get(verdict.reason, 0) + 1
        return verdict

    def _run(self, frame: Frame) -> Verdict:
        trace: list[TraceEntry] = []

        def drop(reason: str, ns_id: str | None = None) -> Verdict:
            return Verdict(None, reason, tuple(trace), ns_id, frame.data)

        job = self._job
        if job is not None and job.mode == HARD_SWAP:
            trace.append(TraceEntry("compile", "-", "-", "drop"))
            return drop("RECOMPILING")
        pipe = self._active
        if pipe is None or frame.ingress_port not in pipe.ports:
            trace.append(TraceEntry("ingress", "-", "-", f"port_down({frame.ingress_port})"))
            return drop("PORT_DOWN")
        trace.append(TraceEntry("ingress", "-", "-", f"port({frame.ingress_port})"))

        try:
            hdrs = parse_frame(frame.data, pipe.program.parse_plan)
        except SwitchError:
            trace.append(TraceEntry("parse", "-", "-", "error"))
            return drop("PARSE_ERROR")
        trace.append(TraceEntry("parse", "-", "-", "+".join(hdrs.fields)))

        if "vlan" not in hdrs.fields:
            trace.append(TraceEntry("vlan", "-", "miss", "drop"))
            return drop("NO_VLAN_TAG")
        vid = hdrs.get("vlan", "vid")
        selected = pipe.dispatch.get(vid)
        if selected is None:
            trace.append(TraceEntry("dispatch", "dispatch", "miss", "drop"))
            return drop("UNKNOWN_VLAN")
        ns_id, control = selected
        trace.append(TraceEntry("dispatch", "dispatch", "hit", f"slice({ns_id})"))

        data = frame.data
        egress = None
        for name in control:
            table = pipe.tables[name]
            fields = pipe.key_fields[name]
            found = None
            if all(hdrs.valid(h) for h, _ in fields):
                found = table.lookup(tuple(hdrs.fields[h][f] for h, f in fields))
            if found is None:
                call = table.tdef.default_action
            else:
                call = found[1].action
            trace.append(TraceEntry("slice", name, "hit" if found else "miss", str(call)))

            if call.name == "pass":
                continue
            if call.name == "count":
                if found is None:
                    table.default_hits += 1
                else:
                    found[1].hits += 1
                continue
            if call.name == "drop":
                return drop("TABLE_DROP", ns_id)
            params = call.param_dict
            if call.name == "forward":
                egress = params["port"]
                break
            if call.name == "l3_route":
                if not hdrs.valid("ipv4"):
                    return drop("PARSE_ERROR", ns_id)
                if hdrs.get("ipv4", "ttl") <= 1:
                    return drop("TTL_EXPIRED", ns_id)
                data = _l3_rewrite(data, hdrs.offsets["ipv4"], params["src_mac"], params["dst_mac"])
                egress = params["port"]
                break
            raise AssertionError(f"unhandled action {call.name}")

        if egress is None:
            l2 = pipe.tables[FORWARD_L2]
            found = l2.lookup((hdrs.get("ethernet", "dst_addr"),))
            if found is None:
                trace.append(TraceEntry("forward_l2", FORWARD_L2, "miss", "drop"))
                return drop("L2_MISS", ns_id)
            call = found[1].action
            trace.append(TraceEntry("forward_l2", FORWARD_L2, "hit", str(call)))
            egress = call.param_dict["port"]

        if egress not in pipe.ports:
            trace.append(TraceEntry("egress", "-", "-", f"port_down({egress})"))
            return Verdict(None, "PORT_DOWN", tuple(trace), ns_id, data)
        trace.append(TraceEntry("egress", "-", "-", f"port({egress})"))
        return Verdict(egress, None, tuple(trace), ns_id, data)

    # -- reporting --------------------------------------------------------

    def stats(self) -> SwitchStats:
        counters: dict[str, dict[str, int]] = {}
        if self._active is not None:
            for name, t in sorted(self._active.tables.items()):
                row = {t.key_text(k): e.hits for k, e in sorted(t.entries.items()) if e.hits}
                if t.default_hits:
                    row["*"] = t.default_hits
                if row:
                    counters[name] = row
        groups = {
            g: {"delivered": v["delivered"], "dropped": dict(sorted(v["dropped"].items()))}
            for g, v in sorted(self._groups.items())
        }
        return SwitchStats(self._offered, groups, list(self._downtime), counters)


def _l3_rewrite(data: bytes, ip_off: int, src_mac: int, dst_mac: int) -> bytes:
    buf = bytearray(data)
    buf[0:6] = dst_mac.to_bytes(6, "big")
    buf[6:12] = src_mac.to_bytes(6, "big")
    buf[ip_off + 8] -= 1
    buf[ip_off + 10 : ip_off + 12] = ipv4_checksum(bytes(buf[ip_off : ip_off + 20])).to_bytes(2, "big")
    return bytes(buf)


def read_trace(text: str) -> list[Frame]:
    """Parse ``PKT <time_us> <ingress_port> <hex-bytes>`` lines."""
    frames = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "PKT":
            raise SwitchError("BAD_TRACE", f"line {lineno}: expected 'PKT <time> <port> <hex>'")
        try:
            frames.append(Frame(bytes.fromhex(parts[3]), int(parts[2]), int(parts[1])))
        except ValueError as exc:
            raise SwitchError("BAD_TRACE", f"line {lineno}: {exc}") from None
    return frames
