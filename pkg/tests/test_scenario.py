"""Scenario schema: loading, validation errors, interpolation, generators."""

import copy

import pytest
import yaml

from demandflow.cli import bundled_scenario_path
from demandflow.model import (
    EntityRole,
    ScenarioParseError,
    ScenarioValidationError,
)
from demandflow.scenario import (
    Waypoint,
    interpolate,
    load_request_file,
    load_scenario,
    make_scale_scenario,
    scenario_from_mapping,
)


@pytest.fixture(scope="module")
def reference_raw():
    path = bundled_scenario_path("collective_perception")
    return yaml.safe_load(path.read_text(encoding="utf-8"))


def variant(reference_raw, mutate):
    raw = copy.deepcopy(reference_raw)
    mutate(raw)
    return raw


def expect_invalid(raw, needle):
    with pytest.raises(ScenarioValidationError) as info:
        scenario_from_mapping(raw, origin="case")
    assert needle in str(info.value)
    assert str(info.value).startswith("case:")


def test_reference_scenario_loads(reference_scenario):
    s = reference_scenario
    assert s.name == "collective-perception"
    assert len(s.entities) == 7
    assert [t.version for t in s.templates] == ["v1"]
    assert s.rule.d_start == 150.0
    assert s.rule.d_stop == 170.0
    assert s.timeline.mode == "scripted"
    assert s.timeline.window == 3
    assert len(s.timeline.events) == 8
    # budget defaults to one window per event
    assert s.tick_budget == 24
    assert s.entity("V0").provides("pointcloud")
    assert not s.entity("V1").provides("pointcloud")
    with pytest.raises(KeyError):
        s.entity("nope")


def test_upgrade_scenario_loads(upgrade_scenario):
    assert [t.version for t in upgrade_scenario.templates] == ["v1", "v2"]
    upgrades = [e for e in upgrade_scenario.timeline.events if e.upgrade]
    assert [e.upgrade for e in upgrades] == [("object-detection-fusion", "v2")]


def test_waypoint_scenario_loads(waypoint_scenario):
    assert waypoint_scenario.timeline.mode == "waypoints"
    assert set(waypoint_scenario.timeline.waypoints) == {"V0", "V1"}
    assert waypoint_scenario.tick_budget == 100


def test_yaml_error_reports_line(tmp_path):
    bad = tmp_path / "broken.yaml"
    bad.write_text("name: x\nentities:\n  - {id: V0, role: cv\n")
    with pytest.raises(ScenarioParseError) as info:
        load_scenario(bad)
    assert "broken.yaml" in str(info.value)
    assert "line" in str(info.value)


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ScenarioParseError):
        load_scenario(tmp_path / "missing.yaml")


def test_top_level_must_be_mapping():
    with pytest.raises(ScenarioValidationError):
        scenario_from_mapping(["not", "a", "mapping"])
    with pytest.raises(ScenarioValidationError):
        scenario_from_mapping({"entities": []})  # no name


def test_entity_validation(reference_raw):
    expect_invalid(
        variant(reference_raw, lambda r: r["entities"].append(
            {"id": "V0", "role": "cv"}
        )),
        "duplicate entity V0",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["entities"].append(
            {"id": "9bad", "role": "cv"}
        )),
        "bad entity id",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["entities"].append(
            {"id": "X", "role": "submarine"}
        )),
        "unknown role",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["entities"].append(
            {"id": "X", "role": "cv", "capabilities": ["sonar"]}
        )),
        "unknown capability",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["entities"].append(
            {"id": "E2", "role": "edge"}
        )),
        "exactly one edge",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["entities"].pop(5)),  # drop E
        "exactly one edge",
    )


def test_application_validation(reference_raw):
    def dup_role(r):
        parts = r["applications"][0]["parts"]
        parts.append(dict(parts[0]))

    expect_invalid(variant(reference_raw, dup_role), "duplicate part role")

    def bad_kind(r):
        r["applications"][0]["parts"][0]["kind"] = "teleport"

    expect_invalid(variant(reference_raw, bad_kind), "bad part")

    def forward_ref(r):
        r["applications"][0]["parts"][0]["inputs"] = ["outputs:fusion"]
        del r["applications"][0]["parts"][0]["per_source"]

    expect_invalid(variant(reference_raw, forward_ref), "object-detection-fusion")

    def twice(r):
        r["applications"].append(copy.deepcopy(r["applications"][0]))

    expect_invalid(variant(reference_raw, twice), "declared twice")


def test_geofence_validation(reference_raw):
    expect_invalid(
        variant(reference_raw, lambda r: r["geofence"].update(center=[0.0])),
        "center must be [x, y]",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["geofence"].update(application="ghost")),
        "unknown application",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["geofence"].update(risu="V0")),
        "must have the risu role",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["geofence"].update(risu="ghost")),
        "unknown entity",
    )
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["geofence"].update(d_start=200.0, d_stop=150.0),
        ),
        "d_stop",
    )


def test_timeline_validation(reference_raw):
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["timeline"]["events"].insert(0, {"step": 99, "enter": "V0"}),
        ),
        "non-decreasing",
    )
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["timeline"]["events"].append({"step": 9}),
        ),
        "exactly one of enter/leave/upgrade",
    )
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["timeline"]["events"].append(
                {"step": 9, "enter": "V0", "leave": "V1"}
            ),
        ),
        "exactly one of enter/leave/upgrade",
    )
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["timeline"]["events"].append({"step": 9, "enter": "S"}),
        ),
        "only vehicles",
    )
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["timeline"]["events"].append({"step": 9, "enter": "ghost"}),
        ),
        "unknown entity",
    )
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["timeline"]["events"].append(
                {"step": 9, "upgrade": {"application": "object-detection-fusion",
                                        "version": "v9"}}
            ),
        ),
        "unknown application version",
    )
    expect_invalid(
        variant(
            reference_raw,
            lambda r: r["timeline"].update(settle_ticks=-1),
        ),
        "settle_ticks",
    )
    expect_invalid(
        variant(reference_raw, lambda r: r["timeline"].update(mode="improv")),
        "unknown timeline mode",
    )


def test_waypoint_timeline_validation(reference_raw):
    def to_waypoints(points):
        def mutate(r):
            r["timeline"] = {"mode": "waypoints", "waypoints": {"V0": points}}
            r["tick_budget"] = 10

        return mutate

    good = [{"t": 0, "x": 0.0, "y": 0.0}, {"t": 5, "x": 1.0, "y": 0.0}]
    scenario_from_mapping(variant(reference_raw, to_waypoints(good)))

    expect_invalid(
        variant(reference_raw, to_waypoints([{"t": 0, "x": 0.0}])),
        "needs t, x, y",
    )
    expect_invalid(
        variant(
            reference_raw,
            to_waypoints([{"t": 5, "x": 0.0, "y": 0.0},
                          {"t": 5, "x": 1.0, "y": 0.0}]),
        ),
        "increasing ticks",
    )

    def risu_route(r):
        r["timeline"] = {"mode": "waypoints", "waypoints": {"S": good}}
        r["tick_budget"] = 10

    expect_invalid(variant(reference_raw, risu_route), "not a vehicle")

    def no_budget(r):
        r["timeline"] = {"mode": "waypoints", "waypoints": {"V0": good}}
        r.pop("tick_budget", None)

    expect_invalid(variant(reference_raw, no_budget), "tick_budget")


def test_empty_scripted_timeline_is_valid(reference_raw):
    raw = variant(reference_raw, lambda r: r["timeline"].update(events=[]))
    scenario = scenario_from_mapping(raw)
    assert scenario.timeline.events == ()
    assert scenario.tick_budget == 0


def test_interpolate_matches_linear_oracle():
    route = (
        Waypoint(0, 0.0, 0.0),
        Waypoint(10, 100.0, 0.0),
        Waypoint(20, 100.0, 50.0),
    )
    assert interpolate(route, -5) == (0.0, 0.0)
    assert interpolate(route, 0) == (0.0, 0.0)
    assert interpolate(route, 3) == (30.0, 0.0)
    assert interpolate(route, 10) == (100.0, 0.0)
    assert interpolate(route, 15) == (100.0, 25.0)
    assert interpolate(route, 99) == (100.0, 50.0)
    with pytest.raises(ValueError):
        interpolate((), 0)


def test_scale_scenario_shape():
    scenario = make_scale_scenario(5)
    vehicles = [e for e in scenario.entities if e.role is EntityRole.CV]
    assert [v.entity_id for v in vehicles] == [
        "V000", "V001", "V002", "V003", "V004",
    ]
    assert all(v.capabilities == ("ego",) for v in vehicles)
    events = scenario.timeline.events
    assert len(events) == 10
    assert [e.enter for e in events[:5]] == [v.entity_id for v in vehicles]
    assert [e.leave for e in events[5:]] == [v.entity_id for v in vehicles]
    assert scenario.tick_budget == 10 * scenario.timeline.window
    with pytest.raises(ValueError):
        make_scale_scenario(0)


def test_request_file_round_trip(tmp_path):
    path = tmp_path / "request.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "request": {
                    "id": "manual-1",
                    "action": "request",
                    "application": "object-detection-fusion",
                    "requesters": ["V0", "S"],
                    "inputs": ["V0:ego", "S:pointcloud"],
                }
            }
        )
    )
    request = load_request_file(path)
    assert request["id"] == "manual-1"
    assert request["inputs"] == ["V0:ego", "S:pointcloud"]


def test_request_file_validation(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("request: {id: x, action: request}\n")
    with pytest.raises(ScenarioValidationError) as info:
        load_request_file(path)
    assert "missing" in str(info.value)
    path.write_text("[]\n")
    with pytest.raises(ScenarioValidationError):
        load_request_file(path)
    path.write_text("a: [b\n")
    with pytest.raises(ScenarioParseError):
        load_request_file(path)
