"""Line-oriented scenario scripts driving one orchestrator/switch instance.

Each non-comment line is ``<time_us> <KIND> <args...>``::

    0     UPLOAD functions/l2_count.json
    10    INSTANTIATE ns/blue1.json --as tenant:blue
    20    DAY2_INSERT blue1 l3_firewall fw_rules 10.0.0.1,10.0.0.2 drop --as tenant:blue
    30    ADMIN_L2 02:00:00:00:09:09 7
    40    PKT 1 0200000001020200000001018100...
    40    EXPECT FORWARD(2)
    50    TERMINATE blue1 --as admin
    60    EXPECT ACTIVE -
    70    EXPECT STATS dropped.RECOMPILING 3

``EXPECT`` forms: ``FORWARD(<port>)``, ``DROP(<reason>)`` (verdict of the
last PKT), ``ERROR <code>`` (the previous event failed with that code),
``ACTIVE <ns,...|->`` and ``STATS <dotted.path> <int>``. Events run in
time order; equal times keep file order. A failing event that is not
immediately followed by a matching ``EXPECT ERROR`` is an event error.
"""

from __future__ import annotations

import json
import re
import shlex
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ._fileio import atomic_write_text, dump_json
from .composer import DEFAULT_L2_CAPACITY
from .descriptor import NsDescriptor, Principal
from .dsl import parse_function_def, parse_scalar
from .errors import P4nfvError, ScenarioError
from .orchestrator import Orchestrator
from .repo import FunctionRepo
from .state import StateStore
from .switch import COMPILE_MODES, DEFAULT_BASE_COMPILE_US, DEFAULT_PER_TABLE_US, HARD_SWAP, Frame, Switch, Verdict

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2
EXIT_EVENT_ERROR = 3

KINDS = ("UPLOAD", "INSTANTIATE", "TERMINATE", "DAY2_INSERT", "DAY2_DELETE", "ADMIN_L2", "PKT", "EXPECT")

_VERDICT_RE = re.compile(r"^(FORWARD|DROP)\(([A-Z0-9_]+)\)$")


@dataclass
class Config:
    mode: str = HARD_SWAP
    base_compile_us: int = DEFAULT_BASE_COMPILE_US
    per_table_us: int = DEFAULT_PER_TABLE_US
    l2_capacity: int = DEFAULT_L2_CAPACITY
    state_dir: Path | None = None
    repo_dir: Path | None = None
    output_dir: Path | None = None
    build_dir: Path | None = None

    _DIRS = ("state_dir", "repo_dir", "output_dir", "build_dir")

    @classmethod
    def from_document(cls, doc: dict[str, Any], base: Path = Path(".")) -> "Config":
        unknown = set(doc) - {"mode", "base_compile_us", "per_table_us", "l2_capacity", *cls._DIRS}
        if unknown:
            raise ScenarioError("BAD_CONFIG", f"unknown config keys {sorted(unknown)}")
        cfg = cls()
        for key, value in doc.items():
            if key in cls._DIRS:
                value = base / value
            setattr(cfg, key, value)
        if cfg.mode not in COMPILE_MODES:
            raise ScenarioError("BAD_CONFIG", f"mode must be one of {COMPILE_MODES}")
        return cfg

    @classmethod
    def load(cls, path: Path | str) -> "Config":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError("BAD_CONFIG", str(exc)) from None
        return cls.from_document(doc, path.parent)


@dataclass
class Event:
    line: int
    time: int
    kind: str
    args: list[str]
    options: dict[str, str] = field(default_factory=dict)

    def principal(self, default: str = "admin") -> Principal:
        return Principal.parse(self.options.get("as", default))


def parse_scenario(text: str) -> list[Event]:
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise ScenarioError("SCENARIO_PARSE", str(exc), line=lineno) from None
        if len(tokens) < 2:
            raise ScenarioError("SCENARIO_PARSE", "expected '<time> <KIND> ...'", line=lineno)
        try:
            time = int(tokens[0])
        except ValueError:
            raise ScenarioError("SCENARIO_PARSE", f"bad time {tokens[0]!r}", line=lineno) from None
        kind = tokens[1].upper()
        if kind not in KINDS:
            raise ScenarioError("SCENARIO_PARSE", f"unknown event {tokens[1]!r}", line=lineno)
        args, options = [], {}
        it = iter(tokens[2:])
        for tok in it:
            if tok.startswith("--"):
                value = next(it, None)
                if value is None:
                    raise ScenarioError("SCENARIO_PARSE", f"option {tok} needs a value", line=lineno)
                options[tok[2:]] = value
            else:
                args.append(tok)
        events.append(Event(lineno, time, kind, args, options))
        _check_arity(events[-1])
    return sorted(events, key=lambda e: e.time)


_ARITY = {
    "UPLOAD": (1, 1),
    "INSTANTIATE": (1, 1),
    "TERMINATE": (1, 1),
    "DAY2_INSERT": (5, None),
    "DAY2_DELETE": (4, 4),
    "ADMIN_L2": (2, 2),
    "PKT": (2, 2),
    "EXPECT": (1, 3),
}


def _check_arity(ev: Event) -> None:
    lo, hi = _ARITY[ev.kind]
    n = len(ev.args)
    if n < lo or (hi is not None and n > hi):
        raise ScenarioError("SCENARIO_PARSE", f"{ev.kind} takes {lo}..{hi or 'n'} arguments, got {n}", line=ev.line)
    if ev.kind == "EXPECT":
        form = {"ERROR": 2, "ACTIVE": 2, "STATS": 3}.get(ev.args[0])
        if form is None and not (n == 1 and _VERDICT_RE.match(ev.args[0])):
            raise ScenarioError("SCENARIO_PARSE", f"cannot parse expectation {' '.join(ev.args)!r}", line=ev.line)
        if form is not None and n != form:
            raise ScenarioError("SCENARIO_PARSE", f"EXPECT {ev.args[0]} takes {form - 1} argument(s)", line=ev.line)


def parse_key_list(text: str) -> tuple:
    """``a,b/24,c`` -> key tuple; ``-`` is the empty key."""
    if text == "-":
        return ()
    out = []
    for part in text.split(","):
        value, sep, plen = part.partition("/")
        out.append((parse_scalar(value), int(plen)) if sep else parse_scalar(value))
    return tuple(out)


def parse_params(tokens: list[str]) -> dict[str, int]:
    params = {}
    for tok in tokens:
        name, sep, value = tok.partition("=")
        if not sep:
            raise ValueError(f"parameter {tok!r} is not name=value")
        params[name] = parse_scalar(value)
    return params


def _dash(value: str) -> str | None:
    return None if value == "-" else value


@dataclass
class ScenarioResult:
    exit_code: int
    failures: list[str]
    reports: list[dict]
    stats: dict
    log: list[str]


class ScenarioRunner:
    def __init__(self, orchestrator: Orchestrator, base_dir: Path):
        self.orch = orchestrator
        self.base_dir = base_dir
        self.last_verdict: Verdict | None = None
        self.pending_error: tuple[Event, P4nfvError] | None = None
        self.failures: list[str] = []
        self.event_errors = 0
        self.log: list[str] = []

    def _path(self, rel: str) -> Path:
        return self.base_dir / rel

    def run(self, events: list[Event]) -> None:
        for ev in events:
            if self.pending_error is not None and not (ev.kind == "EXPECT" and ev.args[0] == "ERROR"):
                self._unexpected_error()
            try:
                outcome = self._dispatch(ev)
            except P4nfvError as exc:
                self.pending_error = (ev, exc)
                outcome = f"error {exc.code}"
            except (OSError, ValueError) as exc:
                self.pending_error = (ev, ScenarioError("EVENT_ERROR", str(exc), line=ev.line))
                outcome = "error EVENT_ERROR"
            self.log.append(f"L{ev.line} t={ev.time} {ev.kind} {' '.join(ev.args)} -> {outcome}")
        if self.pending_error is not None:
            self._unexpected_error()

    def _unexpected_error(self) -> None:
        ev, exc = self.pending_error
        self.pending_error = None
        self.event_errors += 1
        self.failures.append(f"EVENT_ERROR(line {ev.line}, {exc.code}): {exc.message}")

    def _dispatch(self, ev: Event) -> str:
        orch = self.orch
        a = ev.args
        if ev.kind == "UPLOAD":
            fdef = parse_function_def(self._path(a[0]).read_text(encoding="utf-8"))
            return f"uploaded {orch.repo.upload_function(fdef)[:12]}"
        if ev.kind == "INSTANTIATE":
            desc = NsDescriptor.from_json(self._path(a[0]).read_text(encoding="utf-8"))
            return self._lifecycle(orch.instantiate_ns(desc, ev.principal(), ev.time))
        if ev.kind == "TERMINATE":
            return self._lifecycle(orch.terminate_ns(a[0], ev.principal(), ev.time))
        if ev.kind == "DAY2_INSERT":
            rid = orch.day2_insert_rule(
                ev.principal(),
                _dash(a[0]),
                _dash(a[1]),
                a[2],
                parse_key_list(a[3]),
                a[4],
                parse_params(a[5:]),
                ev.time,
                int(ev.options.get("priority", 0)),
            )
            return f"rule {rid}"
        if ev.kind == "DAY2_DELETE":
            orch.day2_delete_rule(ev.principal(), _dash(a[0]), _dash(a[1]), a[2], parse_key_list(a[3]), ev.time)
            return "deleted"
        if ev.kind == "ADMIN_L2":
            rid = orch.admin_set_l2(ev.principal(), parse_scalar(a[0]), int(a[1]), ev.time)
            return f"rule {rid}"
        if ev.kind == "PKT":
            self.last_verdict = orch.switch.process_packet(Frame(bytes.fromhex(a[1]), int(a[0]), ev.time))
            return str(self.last_verdict)
        return self._expect(ev)

    def _lifecycle(self, report) -> str:
        if not report.ok:
            raise ScenarioError(report.error, f"{report.operation} aborted at {report.failed_step!r}")
        return f"SUCCESS {report.program_hash[:12]}"

    def _fail(self, ev: Event, message: str) -> str:
        self.failures.append(f"ASSERTION_FAILED(line {ev.line}): {message}")
        return "FAILED"

    def _expect(self, ev: Event) -> str:
        what = ev.args[0]
        if what == "ERROR":
            pending, self.pending_error = self.pending_error, None
            got = pending[1].code if pending else "no error"
            if got != ev.args[1]:
                return self._fail(ev, f"expected error {ev.args[1]}, got {got}")
            return "ok"
        if what == "ACTIVE":
            want = [] if ev.args[1] == "-" else sorted(ev.args[1].split(","))
            got = [r.ns_id for r in self.orch.store.active_ns()]
            return "ok" if got == want else self._fail(ev, f"active NSs {got}, expected {want}")
        if what == "STATS":
            node: Any = self.orch.switch.stats().to_document()
            for part in ev.args[1].split("."):
                node = node.get(part, 0) if isinstance(node, dict) else 0
            want = int(ev.args[2])
            return "ok" if node == want else self._fail(ev, f"stats {ev.args[1]} = {node}, expected {want}")
        got = str(self.last_verdict) if self.last_verdict else "no packet"
        return "ok" if got == what else self._fail(ev, f"verdict {got}, expected {what}")


def run_scenario(scenario: Path | str, config: Config | None = None) -> ScenarioResult:
    """Execute a scenario on fresh state and write reports to the output directory."""
    scenario = Path(scenario)
    config = config or Config()
    events = parse_scenario(scenario.read_text(encoding="utf-8"))

    out = config.output_dir or scenario.parent / "out"
    out.mkdir(parents=True, exist_ok=True)
    owned = [d for d, given in ((out / "state", config.state_dir), (out / "repo", config.repo_dir)) if given is None]
    for d in owned:
        shutil.rmtree(d, ignore_errors=True)

    orch = Orchestrator(
        FunctionRepo(config.repo_dir or out / "repo"),
        StateStore(config.state_dir or out / "state"),
        Switch(config.base_compile_us, config.per_table_us),
        config.mode,
        l2_capacity=config.l2_capacity,
        build_dir=config.build_dir,
    )
    runner = ScenarioRunner(orch, scenario.parent)
    runner.run(events)

    reports = [r.to_document() for r in orch.reports]
    stats = orch.switch.stats().to_document()
    atomic_write_text(out / "reports.json", dump_json(reports))
    atomic_write_text(out / "stats.json", dump_json(stats))
    atomic_write_text(out / "events.log", "\n".join(runner.log + runner.failures) + "\n")

    if runner.event_errors:
        code = EXIT_EVENT_ERROR
    elif runner.failures:
        code = EXIT_ASSERTION
    else:
        code = EXIT_OK
    return ScenarioResult(code, runner.failures, reports, stats, runner.log)
