import pytest

from p4nfv.composer import compose
from p4nfv.descriptor import Principal
from p4nfv.errors import OrchestratorError, SwitchError
from p4nfv.orchestrator import INSTANTIATION_STEPS, TERMINATION_STEPS
from p4nfv.packets import build_frame
from p4nfv.state import StateStore
from p4nfv.switch import HARD_SWAP, SLOW_MODE, Frame

from .support import (
    ADMIN,
    L2_COUNT,
    L3_FIREWALL,
    TCP_ACL,
    cp_replay_image,
    descriptor,
    ip,
    mac,
    make_orchestrator,
    make_repo,
    settle,
)

BLUE = Principal.tenant("blue")
RED = Principal.tenant("red")
FW = ("l3_firewall", "fw_rules")

BLUE1 = descriptor("blue1", "blue", 100, [L3_FIREWALL], [("h1", mac(1), 1), ("h2", mac(2), 2)])
RED1 = descriptor("red1", "red", 200, [L3_FIREWALL, L2_COUNT], [("r1", mac(11), 3), ("r2", mac(12), 4)])


def test_first_instantiation():
    orch = make_orchestrator()
    rep = orch.instantiate_ns(BLUE1, BLUE, 0)
    assert rep.ok and rep.step_names == list(INSTANTIATION_STEPS)
    assert rep.compile_window == (0, 520_000)
    assert [s.outcome for s in rep.steps] == ["ok"] * 6
    assert [s.started for s in rep.steps] == [0, 0, 0, 0, 520_000, 520_000]
    settle(orch)
    sw = orch.switch
    assert sorted(sw.program.tables()) == ["forward_l2", "ns__blue1__l3_firewall__fw_rules"]
    assert sw.ports == frozenset({1, 2})
    assert sw.entries()["forward_l2"] == {
        (mac(1),): ("forward", (("port", 1),)),
        (mac(2),): ("forward", (("port", 2),)),
    }
    v = sw.process_packet(Frame(build_frame(mac(2), mac(1), 100, ipv4=(1, 2)), 1, sw.now))
    assert str(v) == "FORWARD(2)"


def test_missing_function_aborts_without_side_effects():
    orch = make_orchestrator()
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    before = (orch.store.snapshot(), orch.switch.program.program_hash, orch.switch.entries(), orch.switch.stats().downtime_windows)
    ghost = descriptor("red1", "red", 200, [("l3_firewall", 9)])
    rep = orch.instantiate_ns(ghost, RED, t)
    assert not rep.ok and rep.status == "ABORTED"
    assert (rep.failed_step, rep.error) == ("Check required P4 functions", "FUNCTION_NOT_FOUND")
    assert rep.compile_window is None
    after = (orch.store.snapshot(), orch.switch.program.program_hash, orch.switch.entries(), orch.switch.stats().downtime_windows)
    assert after == before


@pytest.mark.parametrize("mode", [HARD_SWAP, SLOW_MODE])
def test_second_ns_replays_existing_rules(mode):
    orch = make_orchestrator(mode)
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    for i in range(3):
        orch.day2_insert_rule(BLUE, "blue1", *FW, (ip("10.0.0.1"), ip(f"10.0.1.{i}")), "drop", time=t)
    blue_entries = orch.switch.entries()["ns__blue1__l3_firewall__fw_rules"]
    rep = orch.instantiate_ns(RED1, RED, t + 10)
    assert rep.ok
    settle(orch)
    assert orch.switch.entries()["ns__blue1__l3_firewall__fw_rules"] == blue_entries
    assert orch.switch.entries() == cp_replay_image(orch)
    assert orch.switch.ports == frozenset({1, 2, 3, 4})
    windows = orch.switch.stats().downtime_windows
    assert len(windows) == (2 if mode == HARD_SWAP else 0)


def test_termination_returns_to_floor_program():
    orch = make_orchestrator()
    floor = compose([], make_repo())
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    orch.day2_insert_rule(BLUE, "blue1", *FW, (1, 2), "drop", time=t)
    rep = orch.terminate_ns("blue1", BLUE, t + 1)
    assert rep.ok and rep.step_names == list(TERMINATION_STEPS)
    settle(orch)
    assert orch.switch.program.program_hash == floor.program_hash
    assert orch.store.rules_for() == [] and orch.store.active_ns() == []
    assert orch.switch.ports == frozenset()
    assert orch.store.dangling_rules() == []


def test_termination_leaves_other_ns_untouched():
    orch = make_orchestrator()
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    orch.instantiate_ns(RED1, RED, t)
    t = settle(orch)
    orch.day2_insert_rule(RED, "red1", *FW, (5, 6), "drop", time=t)
    orch.day2_insert_rule(BLUE, "blue1", *FW, (5, 6), "drop", time=t)
    red_before = {k: v for k, v in orch.switch.entries().items() if k.startswith("ns__red1__")}
    orch.terminate_ns("blue1", ADMIN, t + 1)
    settle(orch)
    entries = orch.switch.entries()
    assert {k: v for k, v in entries.items() if k.startswith("ns__red1__")} == red_before
    assert not any(k.startswith("ns__blue1__") for k in entries)
    assert set(entries["forward_l2"]) == {(mac(11),), (mac(12),)}
    assert entries == cp_replay_image(orch)


def test_ownership():
    orch = make_orchestrator()
    with pytest.raises(OrchestratorError) as exc:
        orch.instantiate_ns(BLUE1, RED, 0)
    assert exc.value.code == "OWNERSHIP"
    assert orch.reports == [] and orch.store.active_ns() == []
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    for call in (
        lambda: orch.day2_insert_rule(RED, "blue1", *FW, (1, 2), "drop", time=t),
        lambda: orch.day2_insert_rule(BLUE, None, None, "forward_l2", (mac(5),), "forward", {"port": 1}, t),
        lambda: orch.admin_set_l2(BLUE, mac(5), 1, t),
        lambda: orch.terminate_ns("blue1", RED, t),
    ):
        with pytest.raises(OrchestratorError) as exc:
            call()
        assert exc.value.code == "OWNERSHIP"
    with pytest.raises(OrchestratorError) as exc:
        orch.terminate_ns("nope", ADMIN, t)
    assert exc.value.code == "NOT_FOUND"
    assert orch.store.rules_for("blue1") == []


def test_day2_errors_leave_store_unchanged():
    orch = make_orchestrator()
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    snap = orch.store.snapshot()
    cases = [
        (lambda: orch.day2_insert_rule(BLUE, "blue1", "tcp_acl", "acl", (80,), "drop", time=t), "UNKNOWN_TABLE"),
        (lambda: orch.day2_insert_rule(BLUE, "blue1", "l3_firewall", "nope", (1, 2), "drop", time=t), "UNKNOWN_TABLE"),
        (lambda: orch.day2_insert_rule(BLUE, "blue1", *FW, (1,), "drop", time=t), "BAD_KEY"),
        (lambda: orch.day2_insert_rule(BLUE, "blue1", *FW, (1, 2), "count", time=t), "ACTION_NOT_PERMITTED"),
        (lambda: orch.day2_delete_rule(BLUE, "blue1", *FW, (1, 2), time=t), "NOT_FOUND"),
    ]
    for call, code in cases:
        with pytest.raises((OrchestratorError, SwitchError, Exception)) as exc:
            call()
        assert exc.value.code == code
    assert orch.store.snapshot() == snap


def test_day2_insert_and_delete_round_trip():
    orch = make_orchestrator()
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    rid = orch.day2_insert_rule(BLUE, "blue1", *FW, (ip("10.0.0.1"), ip("10.0.0.2")), "drop", time=t)
    frame = Frame(build_frame(mac(2), mac(1), 100, ipv4=(ip("10.0.0.1"), ip("10.0.0.2"))), 1, t)
    assert str(orch.switch.process_packet(frame)) == "DROP(TABLE_DROP)"
    assert orch.store.rules_for("blue1")[0].rule_id == rid
    orch.day2_delete_rule(BLUE, "blue1", *FW, (ip("10.0.0.1"), ip("10.0.0.2")), time=t)
    assert str(orch.switch.process_packet(frame)) == "FORWARD(2)"


def test_admin_l2_remap_survives_recompile_and_cleans_up():
    orch = make_orchestrator()
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    orch.admin_set_l2(ADMIN, mac(2), 1, t)
    frame = lambda t: Frame(build_frame(mac(2), mac(1), 100), 1, t)
    assert str(orch.switch.process_packet(frame(t))) == "FORWARD(1)"
    orch.instantiate_ns(RED1, RED, t)
    t = settle(orch)
    assert str(orch.switch.process_packet(frame(t))) == "FORWARD(1)"
    assert len([r for r in orch.store.rules_for() if r.key_values == (mac(2),)]) == 1
    orch.terminate_ns("blue1", BLUE, t)
    settle(orch)
    assert (mac(2),) not in orch.switch.entries()["forward_l2"]


def test_abort_at_update_cp_is_atomic():
    orch = make_orchestrator(l2_capacity=2)
    small = descriptor("blue1", "blue", 100, [L2_COUNT], [("h1", mac(1), 1)])
    orch.instantiate_ns(small, BLUE, 0)
    t = settle(orch)
    before = (orch.store.snapshot(), orch.switch.program, orch.switch.entries(), orch.switch.ports)
    rep = orch.instantiate_ns(RED1, RED, t)  # two more members: 3 > capacity 2
    assert (rep.status, rep.failed_step, rep.error) == ("ABORTED", "Update CP", "TABLE_FULL")
    assert rep.step_names[-1] == "Update CP"
    settle(orch)
    after = (orch.store.snapshot(), orch.switch.program, orch.switch.entries(), orch.switch.ports)
    assert after == before
    assert orch.switch.pending_job is None


def test_mac_and_vlan_conflicts_abort():
    orch = make_orchestrator()
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    steal = descriptor("red1", "red", 200, [L2_COUNT], [("x", mac(1), 5)])
    clash = descriptor("red1", "red", 100, [L2_COUNT])
    for desc, code in [(steal, "MAC_IN_USE"), (clash, "VLAN_IN_USE"), (BLUE1, "DUPLICATE_NS")]:
        rep = orch.instantiate_ns(desc, ADMIN, t)
        assert (rep.failed_step, rep.error) == ("Update ns_functions table", code)
    assert [r.ns_id for r in orch.store.active_ns()] == ["blue1"]


def test_no_dangling_rules_after_lifecycle_mix():
    orch = make_orchestrator(SLOW_MODE)
    t = 0
    for desc, who in [(BLUE1, BLUE), (RED1, RED)]:
        orch.instantiate_ns(desc, who, t)
        t = settle(orch)
    orch.day2_insert_rule(RED, "red1", "l2_count", "src_count", (mac(40),), "count", time=t)
    orch.day2_insert_rule(BLUE, "blue1", *FW, (1, 1), "pass", time=t)
    orch.terminate_ns("red1", RED, t)
    t = settle(orch)
    assert orch.store.dangling_rules() == []
    assert [r.owner for r in orch.store.rules_for()] == ["admin", "admin", "blue1"]


def test_restore_rebuilds_switch_from_disk(tmp_path):
    repo = make_repo(root=tmp_path / "repo")
    orch = make_orchestrator(repo=repo, store=StateStore(tmp_path / "state"), build_dir=tmp_path / "build")
    orch.instantiate_ns(BLUE1, BLUE, 0)
    t = settle(orch)
    orch.day2_insert_rule(BLUE, "blue1", *FW, (3, 4), "drop", time=t)
    fresh = make_orchestrator(repo=make_repo([], tmp_path / "repo"), store=StateStore(tmp_path / "state"))
    program = fresh.restore()
    assert program.program_hash == orch.switch.program.program_hash
    assert fresh.switch.entries() == orch.switch.entries()
    assert fresh.switch.stats().downtime_windows == []
    assert (tmp_path / "build" / f"program-{program.program_hash}.json").exists()


def test_tcp_acl_reachable_through_day2():
    orch = make_orchestrator()
    orch.instantiate_ns(descriptor("web", "blue", 7, [TCP_ACL], [("a", mac(1), 1), ("b", mac(2), 2)]), BLUE, 0)
    t = settle(orch)
    orch.day2_insert_rule(BLUE, "web", "tcp_acl", "acl", (22,), "drop", time=t)
    ssh = build_frame(mac(2), mac(1), 7, ipv4=(1, 2), proto=6, dport=22)
    web = build_frame(mac(2), mac(1), 7, ipv4=(1, 2), proto=6, dport=80)
    assert str(orch.switch.process_packet(Frame(ssh, 1, t))) == "DROP(TABLE_DROP)"
    assert str(orch.switch.process_packet(Frame(web, 1, t))) == "FORWARD(2)"
