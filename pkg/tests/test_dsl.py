import json

import pytest
from hypothesis import given, strategies as st

from p4nfv.dsl import (
    HEADER_CATALOG,
    FieldRef,
    function_to_document,
    parse_function_def,
    resolve_field,
    serialize_function,
    validate_function,
)
from p4nfv.errors import DefinitionError

from .support import L3_FIREWALL, function_doc, make_function, table


def codes(fdef):
    return [v.code for v in validate_function(fdef)]


def test_catalog_headers_are_byte_aligned():
    for hdr in HEADER_CATALOG.values():
        assert hdr.total_bits % 8 == 0
        names = [n for n, _ in hdr.fields]
        assert len(names) == len(set(names))


@pytest.mark.parametrize(
    "ref, expected",
    [
        (("ethernet", "ethertype"), (96, 16)),
        (("vlan", "vid"), (4, 12)),
        (("ipv4", "ttl"), (64, 8)),
        (("ipv4", "dst_addr"), (128, 32)),
        (("udp", "checksum"), (48, 16)),
    ],
)
def test_resolve_field(ref, expected):
    assert resolve_field(FieldRef(*ref)) == expected


def test_resolve_unknown_field():
    with pytest.raises(DefinitionError) as exc:
        resolve_field(FieldRef("ipv4", "options"))
    assert exc.value.code == "UNKNOWN_FIELD"


def test_parse_minimal_l2_count():
    doc = function_doc(
        "l2_count", ["ethernet", "vlan"], [table("src_count", [("ethernet.src_addr", "exact")], ["count"], ("count", {}))]
    )
    fdef = parse_function_def(json.dumps(doc))
    assert fdef.name == "l2_count" and fdef.version == 1
    assert fdef.headers == {"ethernet", "vlan"}
    assert fdef.tables[0].actions == ("count",)
    assert fdef.control == ("src_count",)


def test_missing_control_is_missing_field():
    doc = function_doc("x", ["ethernet", "vlan"], [])
    del doc["control"]
    with pytest.raises(DefinitionError) as exc:
        parse_function_def(json.dumps(doc))
    assert exc.value.code == "MISSING_FIELD"


@pytest.mark.parametrize(
    "text, code",
    [
        ("{not json", "MALFORMED_DOCUMENT"),
        ('{"name": "x", "version": 1, "headers": [], "tables": [], "control": [], "extra": 1}', "MALFORMED_DOCUMENT"),
        ('{"name": 3, "version": 1, "headers": [], "tables": [], "control": []}', "BAD_TYPE"),
        ('{"name": "x", "version": "1", "headers": [], "tables": [], "control": []}', "BAD_TYPE"),
        ('{"name": "x", "version": 1, "headers": "ethernet", "tables": [], "control": []}', "BAD_TYPE"),
        ("[1, 2]", "BAD_TYPE"),
    ],
)
def test_parse_errors(text, code):
    with pytest.raises(DefinitionError) as exc:
        parse_function_def(text)
    assert exc.value.code == code


def test_unknown_header_in_key_parses_then_fails_validation():
    doc = function_doc("v6", ["ethernet", "vlan"], [table("t", [("ipv6.src", "exact")])])
    fdef = parse_function_def(json.dumps(doc))
    assert "UNKNOWN_HEADER" in codes(fdef)


def test_missing_vlan_header():
    fdef = make_function("eth_only", ["ethernet"], [])
    assert "MISSING_MANDATORY_HEADERS" in codes(fdef)


def test_l3_firewall_is_composable():
    assert validate_function(L3_FIREWALL) == []


def test_undeclared_header_in_key():
    fdef = make_function("acl", ["ethernet", "vlan", "ipv4"], [table("t", [("tcp.dst_port", "exact")])])
    assert "UNDECLARED_HEADER_IN_KEY" in codes(fdef)


@pytest.mark.parametrize(
    "fdef, code",
    [
        (make_function("a", ["ethernet", "vlan"], [table("t", actions=["teleport"])]), "UNKNOWN_ACTION"),
        (make_function("a", ["ethernet", "vlan"], [table("t"), table("t")], control=["t"]), "DUP_TABLE_NAME"),
        (
            make_function(
                "a",
                ["ethernet", "vlan", "ipv4"],
                [table("t", [("ipv4.dst_addr", "lpm"), ("ipv4.src_addr", "exact")])],
            ),
            "BAD_LPM_POSITION",
        ),
        (make_function("a", ["ethernet", "vlan"], [table("t")], control=["t", "u"]), "CONTROL_REFERENCES_UNKNOWN_TABLE"),
        (make_function("a", ["ethernet", "vlan"], [table("t", actions=["pass"], default=("count", {}))]), "BAD_DEFAULT_ACTION"),
        (
            make_function("a", ["ethernet", "vlan"], [table("t", actions=["forward"], default=("forward", {}))]),
            "BAD_DEFAULT_ACTION",
        ),
        (make_function("a", ["ethernet", "vlan"], [table("t")], control=["t", "t"]), "DUP_CONTROL_ENTRY"),
        (make_function("a", ["ethernet", "vlan", "udp"], []), "MISSING_PREREQUISITE_HEADER"),
        (make_function("a", ["ethernet", "vlan", "sctp"], []), "UNKNOWN_HEADER"),
        (make_function("bad__name", ["ethernet", "vlan"], []), "BAD_IDENTIFIER"),
        (make_function("a", ["ethernet", "vlan", "ipv4"], [table("t", [("ipv4.options", "exact")])]), "UNKNOWN_FIELD"),
    ],
)
def test_violation_codes(fdef, code):
    assert code in codes(fdef)


def test_default_drop_allowed_outside_actions():
    fdef = make_function("a", ["ethernet", "vlan"], [table("t", actions=["count"], default=("drop", {}))])
    assert validate_function(fdef) == []


def test_validation_is_pure_and_order_stable():
    fdef = make_function(
        "Bad",
        ["ethernet", "udp"],
        [table("t", [("tcp.dst_port", "lpm"), ("ipv4.ttl", "exact")], ["jump"]), table("t")],
        control=["zz", "t", "t"],
    )
    first = validate_function(fdef)
    assert len(first) >= 6
    assert all(validate_function(fdef) == first for _ in range(5))


def test_mac_params_accepted_as_text():
    doc = function_doc(
        "r",
        ["ethernet", "vlan", "ipv4"],
        [
            table(
                "t",
                actions=["l3_route"],
                default=("l3_route", {"port": 3, "src_mac": "02:00:00:00:00:01", "dst_mac": "0x020000000002"}),
            )
        ],
        version=2,
    )
    fdef = parse_function_def(json.dumps(doc))
    assert fdef.tables[0].default_action.param_dict == {"port": 3, "src_mac": 0x020000000001, "dst_mac": 0x020000000002}
    assert validate_function(fdef) == []


# -- property tests ---------------------------------------------------------

IDENT = st.from_regex(r"[a-z][a-z0-9]{0,5}(_[a-z0-9]{1,3})?", fullmatch=True)
KEY_FIELDS = ["ethernet.src_addr", "ethernet.dst_addr", "vlan.pcp", "ipv4.src_addr", "ipv4.dst_addr", "ipv4.ttl",
              "tcp.dst_port", "udp.src_port", "ipv6.src"]
HEADERS = ["ethernet", "vlan", "ipv4", "tcp", "udp", "ipv6"]
ACTIONS = ["pass", "drop", "count", "forward", "l3_route", "mirror"]


@st.composite
def function_docs(draw):
    tables = []
    for name in draw(st.lists(IDENT, max_size=3)):
        keys = draw(st.lists(st.tuples(st.sampled_from(KEY_FIELDS), st.sampled_from(["exact", "lpm"])), max_size=2))
        actions = draw(st.lists(st.sampled_from(ACTIONS), min_size=1, max_size=3))
        default = draw(st.sampled_from([("pass", {}), ("drop", {}), ("count", {}), ("forward", {"port": 1})]))
        tables.append(table(name, keys, actions, default, draw(st.integers(1, 64))))
    control = draw(st.lists(st.sampled_from([t["name"] for t in tables] or ["x"]), max_size=3))
    headers = draw(st.sets(st.sampled_from(HEADERS)))
    return function_doc(draw(IDENT), sorted(headers), tables, control, draw(st.integers(1, 5)))


@given(function_docs())
def test_round_trip_identity(doc):
    fdef = parse_function_def(json.dumps(doc))
    assert parse_function_def(serialize_function(fdef)) == fdef
    assert function_to_document(parse_function_def(serialize_function(fdef))) == function_to_document(fdef)


@given(function_docs())
def test_accepted_functions_declare_ethernet_and_vlan(doc):
    fdef = parse_function_def(json.dumps(doc))
    if not validate_function(fdef):
        assert {"ethernet", "vlan"} <= fdef.headers
