"""Command-line entry point.

Stateful subcommands rebuild the switch from the persisted ``ns_functions``
and ``cp_rules`` tables on every invocation; only ``run`` keeps one switch
alive across many events.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .composer import render_pseudo_p4
from .descriptor import NsDescriptor, Principal
from .dsl import parse_function_def, parse_scalar
from .errors import P4nfvError, RepoError
from .orchestrator import Orchestrator
from .packets import build_frame
from .repo import FunctionRepo
from .scenario import EXIT_EVENT_ERROR, EXIT_OK, EXIT_USAGE, Config, parse_key_list, parse_params, run_scenario
from .state import StateStore
from .switch import Switch, read_trace


def _config(args) -> Config:
    if args.config:
        return Config.load(args.config)
    return Config()


def _orchestrator(cfg: Config) -> Orchestrator:
    orch = Orchestrator(
        FunctionRepo(cfg.repo_dir or Path("repo")),
        StateStore(cfg.state_dir or Path("state")),
        Switch(cfg.base_compile_us, cfg.per_table_us),
        cfg.mode,
        l2_capacity=cfg.l2_capacity,
        build_dir=cfg.build_dir or Path("build"),
    )
    orch.restore()
    return orch


def _print_json(doc) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2))


def cmd_repo_upload(args) -> int:
    repo = FunctionRepo(_config(args).repo_dir or Path("repo"))
    fdef = parse_function_def(Path(args.file).read_text(encoding="utf-8"))
    try:
        digest = repo.upload_function(fdef)
    except RepoError as exc:
        for v in exc.detail.get("violations", []):
            print(f"  {v.code}: {v.message}", file=sys.stderr)
        raise
    print(f"{fdef.name} {fdef.version} {digest}")
    return EXIT_OK


def cmd_repo_list(args) -> int:
    repo = FunctionRepo(_config(args).repo_dir or Path("repo"))
    for item in repo.index():
        print(f"{item['name']} {item['version']} {item['hash']}")
    return EXIT_OK


def _report_exit(report) -> int:
    _print_json(report.to_document())
    return EXIT_OK if report.ok else EXIT_EVENT_ERROR


def cmd_ns_instantiate(args) -> int:
    orch = _orchestrator(_config(args))
    desc = NsDescriptor.from_json(Path(args.file).read_text(encoding="utf-8"))
    return _report_exit(orch.instantiate_ns(desc, Principal.parse(args.principal), args.time))


def cmd_ns_terminate(args) -> int:
    orch = _orchestrator(_config(args))
    return _report_exit(orch.terminate_ns(args.ns_id, Principal.parse(args.principal), args.time))


def cmd_day2(args) -> int:
    orch = _orchestrator(_config(args))
    ns_id = None if args.ns_id == "-" else args.ns_id
    function = None if args.function == "-" else args.function
    key = parse_key_list(args.keys)
    principal = Principal.parse(args.principal)
    if args.op == "insert":
        if not args.action:
            raise SystemExit("day2 insert needs an action")
        rid = orch.day2_insert_rule(
            principal, ns_id, function, args.table, key, args.action[0], parse_params(args.action[1:]), args.time
        )
        print(f"rule {rid}")
    else:
        orch.day2_delete_rule(principal, ns_id, function, args.table, key, args.time)
        print("deleted")
    return EXIT_OK


def cmd_admin_l2(args) -> int:
    orch = _orchestrator(_config(args))
    rid = orch.admin_set_l2(Principal.parse(args.principal), parse_scalar(args.mac), args.port, args.time)
    print(f"rule {rid}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.output:
        cfg.output_dir = Path(args.output)
    result = run_scenario(args.scenario, cfg)
    for line in result.log:
        print(line)
    for failure in result.failures:
        print(failure, file=sys.stderr)
    return result.exit_code


def cmd_render(args) -> int:
    orch = _orchestrator(_config(args))
    sys.stdout.write(render_pseudo_p4(orch.switch.program))
    return EXIT_OK


def cmd_stats(args) -> int:
    orch = _orchestrator(_config(args))
    if args.trace:
        for frame in read_trace(Path(args.trace).read_text(encoding="utf-8")):
            verdict = orch.switch.process_packet(frame)
            if args.verbose:
                print(f"t={frame.timestamp} port={frame.ingress_port} {verdict}", file=sys.stderr)
                for entry in verdict.trace:
                    print(f"  {entry}", file=sys.stderr)
    _print_json(orch.switch.stats().to_document())
    return EXIT_OK


def cmd_frame(args) -> int:
    ipv4 = None
    if args.ipv4:
        ipv4 = (parse_scalar(args.ipv4[0]), parse_scalar(args.ipv4[1]))
    proto = {"tcp": 6, "udp": 17, None: None}[args.l4]
    data = build_frame(
        parse_scalar(args.dst), parse_scalar(args.src), args.vid, ipv4=ipv4, ttl=args.ttl, proto=proto,
        sport=args.sport, dport=args.dport,
    )
    print(data.hex())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="p4nfv", description="P4 network-function composition testbed")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON config file (mode, compile constants, directories)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    repo = sub.add_parser("repo", help="P4 function repository").add_subparsers(dest="repo_cmd", required=True)
    up = repo.add_parser("upload", help="validate and store a function definition")
    up.add_argument("file")
    up.set_defaults(func=cmd_repo_upload)
    repo.add_parser("list", help="list stored functions").set_defaults(func=cmd_repo_list)

    ns = sub.add_parser("ns", help="network service lifecycle").add_subparsers(dest="ns_cmd", required=True)
    inst = ns.add_parser("instantiate")
    inst.add_argument("file")
    inst.add_argument("--as", dest="principal", required=True, help="admin or tenant:<id>")
    inst.add_argument("--time", type=int, default=0)
    inst.set_defaults(func=cmd_ns_instantiate)
    term = ns.add_parser("terminate")
    term.add_argument("ns_id")
    term.add_argument("--as", dest="principal", required=True)
    term.add_argument("--time", type=int, default=0)
    term.set_defaults(func=cmd_ns_terminate)

    day2 = sub.add_parser("day2", help="insert or delete a CP rule in an NS table")
    day2.add_argument("op", choices=["insert", "delete"])
    day2.add_argument("ns_id")
    day2.add_argument("function", help="function name, or - for forward_l2")
    day2.add_argument("table")
    day2.add_argument("keys", help="comma-separated key values; lpm as value/len; - for none")
    day2.add_argument("action", nargs="*", help="insert only: action name then name=value params")
    day2.add_argument("--as", dest="principal", required=True)
    day2.add_argument("--time", type=int, default=0)
    day2.set_defaults(func=cmd_day2)

    admin = sub.add_parser("admin", help="administrator operations").add_subparsers(dest="admin_cmd", required=True)
    l2 = admin.add_parser("l2", help="map a MAC to a switch port in forward_l2")
    l2.add_argument("mac")
    l2.add_argument("port", type=int)
    l2.add_argument("--as", dest="principal", default="admin")
    l2.add_argument("--time", type=int, default=0)
    l2.set_defaults(func=cmd_admin_l2)

    run = sub.add_parser("run", help="execute a scenario script")
    run.add_argument("scenario")
    run.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    run.add_argument("--output", help="output directory (overrides config)")
    run.set_defaults(func=cmd_run)

    sub.add_parser("render", help="print pseudo-P4 of the current program").set_defaults(func=cmd_render)

    st = sub.add_parser("stats", help="print switch statistics, optionally after replaying a trace")
    st.add_argument("--trace", help="file of 'PKT <time_us> <port> <hex>' lines")
    st.set_defaults(func=cmd_stats)

    fr = sub.add_parser("frame", help="print the hex of a synthetic frame")
    fr.add_argument("--dst", required=True)
    fr.add_argument("--src", required=True)
    fr.add_argument("--vid", type=int)
    fr.add_argument("--ipv4", nargs=2, metavar=("SRC", "DST"))
    fr.add_argument("--l4", choices=["tcp", "udp"])
    fr.add_argument("--sport", type=int, default=1024)
    fr.add_argument("--dport", type=int, default=80)
    fr.add_argument("--ttl", type=int, default=64)
    fr.set_defaults(func=cmd_frame)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except P4nfvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if exc.code in ("SCENARIO_PARSE", "BAD_CONFIG", "MALFORMED_DOCUMENT") else EXIT_EVENT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
