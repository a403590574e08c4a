"""Shared builders for the test suite."""

from __future__ import annotations

import json

from p4nfv.descriptor import Member, NsDescriptor, Principal
from p4nfv.dsl import P4FunctionDef, function_from_document
from p4nfv.orchestrator import Orchestrator
from p4nfv.repo import FunctionRepo
from p4nfv.state import StateStore
from p4nfv.switch import HARD_SWAP, Switch

ADMIN = Principal.admin()


def table(name, keys=(), actions=("pass",), default=("pass", {}), max_entries=16):
    return {
        "name": name,
        "keys": [{"field": f, "match": m} for f, m in keys],
        "actions": list(actions),
        "default_action": {"action": default[0], "params": default[1]},
        "max_entries": max_entries,
    }


def function_doc(name, headers, tables, control=None, version=1):
    return {
        "name": name,
        "version": version,
        "headers": list(headers),
        "tables": tables,
        "control": [{"apply": t["name"]} for t in tables] if control is None else [{"apply": c} for c in control],
    }


def make_function(*args, **kw) -> P4FunctionDef:
    return function_from_document(function_doc(*args, **kw))


L2_COUNT = make_function(
    "l2_count",
    ["ethernet", "vlan"],
    [table("src_count", [("ethernet.src_addr", "exact")], ["count", "pass"], ("count", {}))],
)

L3_FIREWALL = make_function(
    "l3_firewall",
    ["ethernet", "vlan", "ipv4"],
    [table("fw_rules", [("ipv4.src_addr", "exact"), ("ipv4.dst_addr", "exact")], ["pass", "drop"])],
)

L3_ROUTER = make_function(
    "l3_router",
    ["ethernet", "vlan", "ipv4"],
    [table("routes", [("ipv4.dst_addr", "lpm")], ["l3_route", "forward", "drop"])],
)

TCP_ACL = make_function(
    "tcp_acl",
    ["ethernet", "vlan", "ipv4", "tcp"],
    [table("acl", [("tcp.dst_port", "exact")], ["drop", "pass", "count"])],
)

UDP_MON = make_function(
    "udp_mon",
    ["ethernet", "vlan", "ipv4", "udp"],
    [table("mon", [("udp.dst_port", "exact")], ["count", "pass"], ("count", {}))],
)

ALL_FUNCTIONS = (L2_COUNT, L3_FIREWALL, L3_ROUTER, TCP_ACL, UDP_MON)


def mac(n: int) -> int:
    return 0x020000000000 | n


def ip(text: str) -> int:
    a, b, c, d = (int(x) for x in text.split("."))
    return (a << 24) | (b << 16) | (c << 8) | d


def descriptor(ns_id, tenant, vid, functions, members=()):
    return NsDescriptor(
        ns_id,
        tenant,
        vid,
        tuple((f.name, f.version) if isinstance(f, P4FunctionDef) else f for f in functions),
        tuple(Member(n, m, p) for n, m, p in members),
    )


def make_repo(functions=ALL_FUNCTIONS, root=None) -> FunctionRepo:
    repo = FunctionRepo(root)
    for f in functions:
        repo.upload_function(f)
    return repo


def make_orchestrator(mode=HARD_SWAP, repo=None, store=None, base=500_000, per_table=10_000, **kw) -> Orchestrator:
    return Orchestrator(
        repo if repo is not None else make_repo(),
        store if store is not None else StateStore(),
        Switch(base, per_table),
        mode,
        **kw,
    )


def settle(orch: Orchestrator) -> int:
    """Move virtual time past any pending compile; returns the new time."""
    job = orch.switch.pending_job
    if job is not None:
        orch.switch.advance(job.end)
    return orch.switch.now


def cp_replay_image(orch: Orchestrator) -> dict:
    """Entries the switch should hold, derived only from ``cp_rules``."""
    image: dict[str, dict] = {name: {} for name in orch.switch.program.tables()}
    for rule in orch.store.rules_for():
        if rule.table == "forward_l2":
            name = "forward_l2"
        else:
            name = f"ns__{rule.owner}__{rule.table[0]}__{rule.table[1]}"
        image.setdefault(name, {})[rule.key_values] = (rule.action, rule.params)
    return image


def dump(doc) -> str:
    return json.dumps(doc, sort_keys=True)
