"""NS lifecycle: instantiation, termination and day-2 CP operations.

Every instantiation or termination recomposes the whole switch program
from ``ns_functions``, recompiles it (destroying all table contents) and
then rebuilds the CP by replaying ``cp_rules`` in rule-id order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .composer import DEFAULT_L2_CAPACITY, FORWARD_L2, ComposedProgram, compose, qualify_table_name, write_build
from .descriptor import NsDescriptor, Principal
from .errors import OrchestratorError, P4nfvError, RepoError
from .repo import FunctionRepo
from .state import ADMIN, CpRule, StateStore
from .switch import HARD_SWAP, CompileJob, Switch

log = logging.getLogger(__name__)

STEP_CHECK_FUNCTIONS = "Check required P4 functions"
STEP_UPDATE_NS_FUNCTIONS = "Update ns_functions table"
STEP_COMPOSE = "Compose P4 program"
STEP_COMPILE = "Compile P4 program"
STEP_CONFIGURE_PORTS = "Configure switch ports"
STEP_UPDATE_CP = "Update CP"

INSTANTIATION_STEPS = (
    STEP_CHECK_FUNCTIONS,
    STEP_UPDATE_NS_FUNCTIONS,
    STEP_COMPOSE,
    STEP_COMPILE,
    STEP_CONFIGURE_PORTS,
    STEP_UPDATE_CP,
)
TERMINATION_STEPS = (
    STEP_UPDATE_NS_FUNCTIONS,
    STEP_COMPOSE,
    STEP_COMPILE,
    STEP_CONFIGURE_PORTS,
    STEP_UPDATE_CP,
)


@dataclass
class StepRecord:
    name: str
    started: int
    finished: int
    outcome: str  # "ok" or an error code


@dataclass
class LifecycleReport:
    operation: str
    ns_id: str
    steps: list[StepRecord] = field(default_factory=list)
    compile_window: tuple[int, int] | None = None  # (start, duration)
    status: str = "SUCCESS"
    failed_step: str | None = None
    error: str | None = None
    message: str = ""
    program_hash: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "SUCCESS"

    @property
    def step_names(self) -> list[str]:
        return [s.name for s in self.steps]

    def to_document(self) -> dict:
        return {
            "operation": self.operation,
            "ns_id": self.ns_id,
            "steps": [
                {"name": s.name, "started": s.started, "finished": s.finished, "outcome": s.outcome}
                for s in self.steps
            ],
            "compile_window": list(self.compile_window) if self.compile_window else None,
            "status": self.status,
            "failed_step": self.failed_step,
            "error": self.error,
            "message": self.message,
            "program_hash": self.program_hash,
        }


class _Aborted(Exception):
    pass


class Orchestrator:
    def __init__(
        self,
        repo: FunctionRepo,
        store: StateStore,
        switch: Switch,
        mode: str = HARD_SWAP,
        *,
        l2_capacity: int = DEFAULT_L2_CAPACITY,
        build_dir: Path | str | None = None,
    ):
        self.repo = repo
        self.store = store
        self.switch = switch
        self.mode = mode
        self.l2_capacity = l2_capacity
        self.build_dir = Path(build_dir) if build_dir is not None else None
        self.reports: list[LifecycleReport] = []

    # -- helpers ----------------------------------------------------------

    @staticmethod
    def _run_step(report: LifecycleReport, name: str, started: int, fn: Callable[[], object]):
        try:
            result = fn()
        except P4nfvError as exc:
            report.steps.append(StepRecord(name, started, started, exc.code))
            report.status = "ABORTED"
            report.failed_step = name
            report.error = exc.code
            report.message = exc.message
            raise _Aborted from exc
        return result

    def _finish_step(self, report: LifecycleReport, name: str, started: int, finished: int) -> None:
        report.steps.append(StepRecord(name, started, finished, "ok"))

    def _compose(self) -> ComposedProgram:
        program = compose([r.descriptor for r in self.store.active_ns()], self.repo, l2_capacity=self.l2_capacity)
        if self.build_dir is not None:
            write_build(program, self.build_dir)
        return program

    def _active_ports(self) -> frozenset[int]:
        return frozenset(p for r in self.store.active_ns() for p in r.descriptor.ports)

    @staticmethod
    def switch_table_name(rule: CpRule) -> str:
        if rule.table == FORWARD_L2:
            return FORWARD_L2
        function_name, table_name = rule.table
        return qualify_table_name(rule.owner, function_name, table_name)

    def _replay(self) -> int:
        rules = self.store.rules_for()
        for rule in rules:
            self.switch.insert_entry(
                self.switch_table_name(rule), rule.key_values, rule.action, dict(rule.params), rule.priority
            )
        return len(rules)

    def _require_ownership(self, principal: Principal, tenant_id: str, what: str) -> None:
        if not principal.may_manage(tenant_id):
            raise OrchestratorError("OWNERSHIP", f"{principal} may not {what} (owned by tenant {tenant_id})")

    def _recompile(self, report: LifecycleReport, names: Sequence[str], time: int, cp_update: Callable[[], None]):
        """Compose, compile, configure ports and rebuild the CP (the common tail of both workflows)."""
        compose_step, compile_step, ports_step, cp_step = names
        program = self._run_step(report, compose_step, time, self._compose)
        self._finish_step(report, compose_step, time, time)
        report.program_hash = program.program_hash

        job: CompileJob = self._run_step(
            report, compile_step, time, lambda: self.switch.load_program(program, time, self.mode)
        )
        self._finish_step(report, compile_step, job.start, job.end)
        report.compile_window = (job.start, job.duration)
        swap = job.end

        try:
            self._run_step(report, ports_step, swap, lambda: self.switch.configure_ports(self._active_ports()))
            self._finish_step(report, ports_step, swap, swap)
            self._run_step(report, cp_step, swap, cp_update)
            self._finish_step(report, cp_step, swap, swap)
        except _Aborted:
            self.switch.cancel_compile()
            raise

    # -- lifecycle --------------------------------------------------------

    def instantiate_ns(self, descriptor: NsDescriptor, principal: Principal, time: int) -> LifecycleReport:
        self._require_ownership(principal, descriptor.tenant_id, f"instantiate {descriptor.ns_id}")
        report = LifecycleReport("instantiate", descriptor.ns_id)
        snapshot = self.store.snapshot()

        def check_functions():
            for name, version in descriptor.functions:
                try:
                    self.repo.get_function(name, version)
                except RepoError:
                    raise OrchestratorError("FUNCTION_NOT_FOUND", f"{name} v{version} not in repository") from None

        def update_ns_functions():
            macs = {m.mac for m in descriptor.members}
            for rec in self.store.active_ns():
                if rec.ns_id != descriptor.ns_id and macs & {m.mac for m in rec.descriptor.members}:
                    raise OrchestratorError("MAC_IN_USE", f"member MAC already bound by {rec.ns_id}")
            self.store.record_ns(descriptor, time)

        def update_cp():
            for m in descriptor.members:
                self.store.append_rule(
                    ADMIN, FORWARD_L2, (m.mac,), "forward", {"port": m.port}, inserted_at=time, for_ns=descriptor.ns_id
                )
            self._replay()

        try:
            self._run_step(report, STEP_CHECK_FUNCTIONS, time, check_functions)
            self._finish_step(report, STEP_CHECK_FUNCTIONS, time, time)
            self._run_step(report, STEP_UPDATE_NS_FUNCTIONS, time, update_ns_functions)
            self._finish_step(report, STEP_UPDATE_NS_FUNCTIONS, time, time)
            self._recompile(report, INSTANTIATION_STEPS[2:], time, update_cp)
        except _Aborted:
            self.store.restore(snapshot)
            log.warning("instantiate %s aborted at %r: %s", descriptor.ns_id, report.failed_step, report.error)
        else:
            log.info("instantiated %s (program %s)", descriptor.ns_id, report.program_hash[:12])
        self.reports.append(report)
        return report

    def terminate_ns(self, ns_id: str, principal: Principal, time: int) -> LifecycleReport:
        try:
            record = self.store.get_ns(ns_id)
        except P4nfvError:
            raise OrchestratorError("NOT_FOUND", f"no active NS {ns_id!r}") from None
        self._require_ownership(principal, record.descriptor.tenant_id, f"terminate {ns_id}")
        report = LifecycleReport("terminate", ns_id)
        snapshot = self.store.snapshot()

        def update_cp():
            self.store.discard_l2_for_ns(ns_id)
            self.store.purge_ns_rules(ns_id)
            self._replay()

        try:
            self._run_step(report, STEP_UPDATE_NS_FUNCTIONS, time, lambda: self.store.remove_ns(ns_id))
            self._finish_step(report, STEP_UPDATE_NS_FUNCTIONS, time, time)
            self._recompile(report, TERMINATION_STEPS[1:], time, update_cp)
        except _Aborted:
            self.store.restore(snapshot)
            log.warning("terminate %s aborted at %r: %s", ns_id, report.failed_step, report.error)
        else:
            log.info("terminated %s (program %s)", ns_id, report.program_hash[:12])
        self.reports.append(report)
        return report

    # -- day-2 ------------------------------------------------------------

    def _slice_target(self, principal: Principal, ns_id: str, function_name: str, table_name: str) -> str:
        try:
            record = self.store.get_ns(ns_id)
        except P4nfvError:
            raise OrchestratorError("NOT_FOUND", f"no active NS {ns_id!r}") from None
        self._require_ownership(principal, record.descriptor.tenant_id, f"modify tables of {ns_id}")
        versions = dict(record.descriptor.functions)
        if function_name not in versions:
            raise OrchestratorError("UNKNOWN_TABLE", f"{ns_id} does not use function {function_name!r}")
        fdef = self.repo.get_function(function_name, versions[function_name])
        if table_name not in {t.name for t in fdef.tables}:
            raise OrchestratorError("UNKNOWN_TABLE", f"{function_name} has no table {table_name!r}")
        return qualify_table_name(ns_id, function_name, table_name)

    def day2_insert_rule(
        self,
        principal: Principal,
        ns_id: str,
        function_name: str | None,
        table_name: str,
        key_values: Sequence,
        action: str,
        params: dict[str, int] | None = None,
        time: int | None = None,
        priority: int = 0,
    ) -> int:
        time = self.switch.now if time is None else time
        if table_name == FORWARD_L2:
            if not principal.is_admin:
                raise OrchestratorError("OWNERSHIP", "forward_l2 is managed by the administrator only")
            owner, ref, qname = ADMIN, FORWARD_L2, FORWARD_L2
        else:
            qname = self._slice_target(principal, ns_id, function_name, table_name)
            owner, ref = ns_id, (function_name, table_name)
        self.switch.advance(time)
        key = self.switch.check_entry(qname, key_values, action, params)
        # a remapped member MAC stays tied to its NS for cleanup at termination
        previous = self.store.find_rule(owner, ref, key)
        for_ns = previous.for_ns if previous is not None else None
        rule = self.store.append_rule(owner, ref, key, action, params, priority, inserted_at=time, for_ns=for_ns)
        self.switch.insert_entry(qname, key, action, params, priority)
        return rule.rule_id

    def day2_delete_rule(
        self,
        principal: Principal,
        ns_id: str,
        function_name: str | None,
        table_name: str,
        key_values: Sequence,
        time: int | None = None,
    ) -> None:
        time = self.switch.now if time is None else time
        if table_name == FORWARD_L2:
            if not principal.is_admin:
                raise OrchestratorError("OWNERSHIP", "forward_l2 is managed by the administrator only")
            owner, ref, qname = ADMIN, FORWARD_L2, FORWARD_L2
        else:
            qname = self._slice_target(principal, ns_id, function_name, table_name)
            owner, ref = ns_id, (function_name, table_name)
        self.switch.advance(time)
        key = self.switch.normalize_key(qname, key_values)
        self.store.remove_rule(owner, ref, key)
        self.switch.delete_entry(qname, key)

    def admin_set_l2(self, principal: Principal, mac: int, port: int, time: int | None = None) -> int:
        if not principal.is_admin:
            raise OrchestratorError("OWNERSHIP", "forward_l2 is managed by the administrator only")
        return self.day2_insert_rule(principal, ADMIN, None, FORWARD_L2, (mac,), "forward", {"port": port}, time)

    # -- process restart --------------------------------------------------

    def restore(self) -> ComposedProgram:
        """Rebuild switch state from the persisted tables, without a compile window."""
        program = self._compose()
        self.switch.install_program(program)
        self.switch.configure_ports(self._active_ports())
        self._replay()
        return program
