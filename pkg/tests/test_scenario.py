import copy
import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from vppfra.errors import ParseError, ValidationError
from vppfra.scenario import (
    BcParams,
    CtnNode,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_ctn,
)
from vppfra.synthetic import default_vpp, random_small_vpp, tiny_fixture


def _write(tmp_path, doc):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    return p


def test_tiny_fixture_file_loads(tmp_path):
    vpp = load_scenario("fixtures/tiny.json")
    assert len(vpp.mines) == 1
    assert vpp.time.horizon_length == 3
    assert scenario_to_dict(vpp) == scenario_to_dict(tiny_fixture())


def test_default_fixture_file_matches_generator():
    assert scenario_to_dict(load_scenario("fixtures/default.json")) == scenario_to_dict(default_vpp())


@pytest.mark.parametrize("make", [tiny_fixture, default_vpp, lambda: random_small_vpp(5)])
def test_save_load_round_trip_is_identity(tmp_path, make):
    vpp = make()
    path = tmp_path / "s.json"
    save_scenario(vpp, path)
    back = load_scenario(path)
    assert back == vpp


def test_reversed_link_is_a_flow_direction_error(tmp_path):
    doc = scenario_to_dict(tiny_fixture())
    link = doc["mines"][0]["ctn"]["links"][0]
    link["from_node"], link["to_node"] = link["to_node"], link["from_node"]
    with pytest.raises(ValidationError, match="flow direction"):
        load_scenario(_write(tmp_path, doc))


def test_silo_start_above_capacity_names_the_silo(tmp_path):
    doc = scenario_to_dict(tiny_fixture())
    doc["mines"][0]["devices"]["silos"][0]["level_start"] = 1e6
    with pytest.raises(ValidationError) as e:
        load_scenario(_write(tmp_path, doc))
    assert e.value.element == "ms1"


def test_malformed_json_is_a_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_scenario(p)


def test_missing_key_is_a_parse_error():
    doc = scenario_to_dict(tiny_fixture())
    del doc["mines"][0]["grid"]
    with pytest.raises(ParseError, match="grid"):
        scenario_from_dict(doc)


def test_short_series_is_rejected():
    doc = scenario_to_dict(tiny_fixture())
    doc["mines"][0]["profiles"]["price"] = [0.1]
    with pytest.raises(ValidationError, match="length"):
        scenario_from_dict(doc)


def test_horizon_of_one_is_rejected():
    doc = scenario_to_dict(tiny_fixture(horizon=2))
    doc["time"]["horizon_length"] = 1
    for key in ("price", "elec_load", "heat_load", "pv_avail", "wt_avail"):
        doc["mines"][0]["profiles"][key] = [0.0]
    with pytest.raises(ValidationError, match="horizon_length"):
        scenario_from_dict(doc)


# --------------------------------------------------------------- CTN rules


def _mine_with(nodes, links):
    base = tiny_fixture().mines[0]
    proto = base.bc_links[0]
    bcs = tuple(replace(proto, id=f"l{i}", from_node=a, to_node=b) for i, (a, b) in enumerate(links))
    return replace(base, ctn_nodes=tuple(CtnNode(i, k) for i, k in nodes), bc_links=bcs)


CANON = [("cf1", "CoalFace"), ("cf2", "CoalFace"), ("ss", "ShaftSilo"), ("ms", "MainSilo"), ("cpp", "PreparationPlant")]


def test_canonical_topology_has_no_violations():
    m = _mine_with(CANON, [("cf1", "ss"), ("cf2", "ss"), ("ss", "ms"), ("ms", "cpp")])
    assert validate_ctn(m) == []


def test_cycle_is_reported():
    nodes = [("cf", "CoalFace"), ("ss", "ShaftSilo"), ("ms", "MainSilo"), ("cpp", "PreparationPlant")]
    m = _mine_with(nodes, [("cf", "ss"), ("ss", "ms"), ("ms", "ss")])
    kinds = {v.rule for v in validate_ctn(m)}
    assert "cycle" in kinds


def test_shaft_silo_with_two_outbound_links_gives_one_violation():
    nodes = CANON + [("ms2", "MainSilo")]
    m = _mine_with(nodes, [("cf1", "ss"), ("cf2", "ss"), ("ss", "ms"), ("ss", "ms2"), ("ms", "cpp"), ("ms2", "cpp")])
    out = validate_ctn(m)
    assert len(out) == 1
    assert out[0].message == "multiple outbound links"
    assert out[0].element == "ss"


def test_two_plants_are_reported():
    nodes = CANON + [("cpp2", "PreparationPlant")]
    m = _mine_with(nodes, [("cf1", "ss"), ("cf2", "ss"), ("ss", "ms"), ("ms", "cpp")])
    assert any(v.rule == "plant" for v in validate_ctn(m))


def _reference_ok(nodes, links):
    """Independent check: radial, ascending, every coal face reaches the single plant."""
    level = {"CoalFace": 0, "ShaftSilo": 1, "MainSilo": 2, "PreparationPlant": 3}
    kind = dict(nodes)
    plants = [n for n, k in nodes if k == "PreparationPlant"]
    if len(plants) != 1 or not any(k == "CoalFace" for _, k in nodes):
        return False
    out = {}
    inbound = {n: 0 for n, _ in nodes}
    for a, b in links:
        if a not in kind or b not in kind or level[kind[b]] <= level[kind[a]]:
            return False
        out.setdefault(a, []).append(b)
        inbound[b] += 1
    for n, k in nodes:
        if k == "PreparationPlant":
            if out.get(n):
                return False
            continue
        if len(out.get(n, [])) != 1:
            return False
        if k == "ShaftSilo" and inbound[n] == 0:
            return False
        if k == "MainSilo" and kind[out[n][0]] != "PreparationPlant":
            return False
    for n, k in nodes:
        if k == "CoalFace":
            seen, cur = set(), n
            while cur != plants[0]:
                if cur in seen or cur not in out:
                    return False
                seen.add(cur)
                cur = out[cur][0]
    return True


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([n for n, _ in CANON]), st.sampled_from([n for n, _ in CANON])), max_size=6))
def test_validate_ctn_agrees_with_reference_check(links):
    m = _mine_with(CANON, links)
    assert (validate_ctn(m) == []) == _reference_ok(CANON, links)
