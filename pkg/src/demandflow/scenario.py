"""Scenario files: schema, loading, validation, and generators.

A scenario bundles the entity topology, the application templates, the
geofence rule, and a timeline.  Timelines come in two flavors: scripted
(an ordered list of enter/leave/upgrade steps, each given a settle window
of ticks) and waypoints (per-vehicle piecewise-linear trajectories that
the detector samples every tick).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .catalog import ApplicationTemplate, PartRule
from .detector import DEFAULT_D_START, DEFAULT_D_STOP, GeofenceRule
from .model import (
    Entity,
    EntityRole,
    ScenarioParseError,
    ScenarioValidationError,
    ServiceKind,
    TOPIC_KINDS,
)

_ID_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_-]*$")

MODE_SCRIPTED = "scripted"
MODE_WAYPOINTS = "waypoints"

DEFAULT_SETTLE_TICKS = 2


@dataclass(frozen=True)
class ScriptedEvent:
    step: int
    enter: str | None = None
    leave: str | None = None
    upgrade: tuple[str, str] | None = None  # (application, version)


@dataclass(frozen=True)
class Waypoint:
    tick: int
    x: float
    y: float


@dataclass(frozen=True)
class Timeline:
    mode: str
    events: tuple[ScriptedEvent, ...] = ()
    waypoints: Mapping[str, tuple[Waypoint, ...]] = field(default_factory=dict)
    settle_ticks: int = DEFAULT_SETTLE_TICKS

    @property
    def window(self) -> int:
        """Ticks per scripted step: the event tick plus the settle ticks."""
        return 1 + self.settle_ticks


@dataclass(frozen=True)
class Scenario:
    name: str
    entities: tuple[Entity, ...]
    rule: GeofenceRule
    templates: tuple[ApplicationTemplate, ...]
    timeline: Timeline
    tick_budget: int

    def entity(self, entity_id: str) -> Entity:
        for entity in self.entities:
            if entity.entity_id == entity_id:
                return entity
        raise KeyError(entity_id)


def interpolate(waypoints: tuple[Waypoint, ...], tick: int) -> tuple[float, float]:
    """Pose at `tick` along a piecewise-linear trajectory.

    Clamps to the first and last waypoint outside the covered range.
    """
    if not waypoints:
        raise ValueError("empty trajectory")
    if tick <= waypoints[0].tick:
        return waypoints[0].x, waypoints[0].y
    for a, b in zip(waypoints, waypoints[1:]):
        if tick <= b.tick:
            span = b.tick - a.tick
            f = (tick - a.tick) / span if span else 1.0
            return a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)
    return waypoints[-1].x, waypoints[-1].y


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ScenarioParseError(f"{path.name}{where}: {exc}") from exc
    except OSError as exc:
        raise ScenarioParseError(str(exc)) from exc
    return scenario_from_mapping(raw, origin=path.name)


def scenario_from_mapping(raw: Any, origin: str = "<inline>") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioValidationError(f"{origin}: top level must be a mapping")

    def fail(message: str) -> ScenarioValidationError:
        return ScenarioValidationError(f"{origin}: {message}")

    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise fail("missing scenario name")

    entities = _parse_entities(raw.get("entities"), fail)
    by_id = {e.entity_id: e for e in entities}
    if sum(1 for e in entities if e.role is EntityRole.EDGE) != 1:
        raise fail("exactly one edge entity is required")

    templates = _parse_applications(raw.get("applications"), fail)
    app_versions = {(t.app_name, t.version) for t in templates}
    app_names = {t.app_name for t in templates}

    rule = _parse_geofence(raw.get("geofence"), by_id, app_names, fail)

    timeline = _parse_timeline(raw.get("timeline"), by_id, app_versions, fail)

    budget = raw.get("tick_budget")
    if budget is None:
        if timeline.mode == MODE_SCRIPTED:
            budget = len(timeline.events) * timeline.window
        else:
            raise fail("waypoint scenarios must set tick_budget")
    if not isinstance(budget, int) or budget < 0:
        raise fail("tick_budget must be a non-negative integer")

    return Scenario(
        name=name,
        entities=entities,
        rule=rule,
        templates=templates,
        timeline=timeline,
        tick_budget=budget,
    )


def _parse_entities(raw: Any, fail) -> tuple[Entity, ...]:
    if not isinstance(raw, list) or not raw:
        raise fail("entities must be a non-empty list")
    entities: list[Entity] = []
    seen: set[str] = set()
    for item in raw:
        if not isinstance(item, dict):
            raise fail("each entity must be a mapping")
        entity_id = item.get("id")
        if not isinstance(entity_id, str) or not _ID_RE.match(entity_id):
            raise fail(f"bad entity id {entity_id!r}")
        if entity_id in seen:
            raise fail(f"duplicate entity {entity_id}")
        seen.add(entity_id)
        role_raw = item.get("role")
        try:
            role = EntityRole(role_raw)
        except ValueError:
            raise fail(f"entity {entity_id}: unknown role {role_raw!r}") from None
        capabilities = tuple(item.get("capabilities", ()))
        for kind in capabilities:
            if kind not in TOPIC_KINDS:
                raise fail(f"entity {entity_id}: unknown capability {kind!r}")
        entities.append(
            Entity(
                entity_id=entity_id,
                role=role,
                capabilities=capabilities,
                node_id=item.get("node", entity_id),
            )
        )
    return tuple(entities)


def _parse_applications(raw: Any, fail) -> tuple[ApplicationTemplate, ...]:
    if not isinstance(raw, list) or not raw:
        raise fail("applications must be a non-empty list")
    templates: list[ApplicationTemplate] = []
    for item in raw:
        if not isinstance(item, dict):
            raise fail("each application must be a mapping")
        app_name = item.get("name")
        version = item.get("version")
        if not isinstance(app_name, str) or not _ID_RE.match(app_name or ""):
            raise fail(f"bad application name {app_name!r}")
        if not isinstance(version, str) or not version:
            raise fail(f"application {app_name}: missing version")
        parts_raw = item.get("parts")
        if not isinstance(parts_raw, list) or not parts_raw:
            raise fail(f"application {app_name}: parts must be a non-empty list")
        parts: list[PartRule] = []
        for part in parts_raw:
            if not isinstance(part, dict):
                raise fail(f"application {app_name}: each part must be a mapping")
            try:
                parts.append(
                    PartRule(
                        role=part["role"],
                        service_kind=ServiceKind(part["kind"]),
                        placement_role=EntityRole(part.get("placement", "edge")),
                        per_source_kind=part.get("per_source"),
                        input_selectors=tuple(part.get("inputs", ())),
                        output_topic=part.get("output_topic"),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise fail(f"application {app_name}: bad part ({exc})") from None
        template = ApplicationTemplate(
            app_name=app_name, version=version, parts=tuple(parts)
        )
        try:
            template.validate()
        except ValueError as exc:
            raise fail(f"application {app_name}: {exc}") from None
        if any(
            t.app_name == app_name and t.version == version for t in templates
        ):
            raise fail(f"application {app_name} {version} declared twice")
        templates.append(template)
    return tuple(templates)


def _parse_geofence(
    raw: Any,
    by_id: dict[str, Entity],
    app_names: set[str],
    fail,
) -> GeofenceRule:
    if not isinstance(raw, dict):
        raise fail("geofence must be a mapping")
    center = raw.get("center")
    if (
        not isinstance(center, list)
        or len(center) != 2
        or not all(isinstance(v, (int, float)) for v in center)
    ):
        raise fail("geofence center must be [x, y]")
    app_name = raw.get("application")
    if app_name not in app_names:
        raise fail(f"geofence names unknown application {app_name!r}")
    risu_id = raw.get("risu")
    risu = by_id.get(risu_id)
    if risu is None:
        raise fail(f"geofence names unknown entity {risu_id!r}")
    if risu.role is not EntityRole.RISU:
        raise fail(f"geofence entity {risu_id} must have the risu role")
    if "pointcloud" not in risu.capabilities:
        raise fail(f"geofence entity {risu_id} must provide pointcloud data")
    try:
        return GeofenceRule(
            app_name=app_name,
            risu_id=risu_id,
            center=(float(center[0]), float(center[1])),
            d_start=float(raw.get("d_start", DEFAULT_D_START)),
            d_stop=float(raw.get("d_stop", DEFAULT_D_STOP)),
        )
    except ValueError as exc:
        raise fail(f"geofence: {exc}") from None


def _parse_timeline(
    raw: Any,
    by_id: dict[str, Entity],
    app_versions: set[tuple[str, str]],
    fail,
) -> Timeline:
    if not isinstance(raw, dict):
        raise fail("timeline must be a mapping")
    mode = raw.get("mode", MODE_SCRIPTED)
    if mode == MODE_SCRIPTED:
        settle = raw.get("settle_ticks", DEFAULT_SETTLE_TICKS)
        if not isinstance(settle, int) or settle < 0:
            raise fail("settle_ticks must be a non-negative integer")
        events_raw = raw.get("events", [])
        if not isinstance(events_raw, list):
            raise fail("timeline events must be a list")
        events: list[ScriptedEvent] = []
        last_step = 0
        for item in events_raw:
            if not isinstance(item, dict) or "step" not in item:
                raise fail("each timeline event needs a step number")
            step = item["step"]
            if not isinstance(step, int) or step < last_step:
                raise fail(f"timeline steps must be non-decreasing (step {step})")
            last_step = step
            keys = {"enter", "leave", "upgrade"} & item.keys()
            if len(keys) != 1:
                raise fail(
                    f"step {step}: exactly one of enter/leave/upgrade required"
                )
            if "upgrade" in keys:
                up = item["upgrade"]
                if (
                    not isinstance(up, dict)
                    or "application" not in up
                    or "version" not in up
                ):
                    raise fail(f"step {step}: upgrade needs application and version")
                if (up["application"], up["version"]) not in app_versions:
                    raise fail(
                        f"step {step}: unknown application version "
                        f"{up['application']} {up['version']}"
                    )
                events.append(
                    ScriptedEvent(
                        step=step, upgrade=(up["application"], up["version"])
                    )
                )
                continue
            key = keys.pop()
            entity_id = item[key]
            entity = by_id.get(entity_id)
            if entity is None:
                raise fail(f"step {step}: unknown entity {entity_id!r}")
            if entity.role is not EntityRole.CV:
                raise fail(
                    f"step {step}: {entity_id} is a {entity.role.value}, "
                    "only vehicles enter or leave"
                )
            events.append(
                ScriptedEvent(
                    step=step,
                    enter=entity_id if key == "enter" else None,
                    leave=entity_id if key == "leave" else None,
                )
            )
        return Timeline(
            mode=MODE_SCRIPTED, events=tuple(events), settle_ticks=settle
        )

    if mode == MODE_WAYPOINTS:
        routes_raw = raw.get("waypoints")
        if not isinstance(routes_raw, dict) or not routes_raw:
            raise fail("waypoint timelines need a waypoints mapping")
        routes: dict[str, tuple[Waypoint, ...]] = {}
        for entity_id, points in routes_raw.items():
            entity = by_id.get(entity_id)
            if entity is None:
                raise fail(f"waypoints name unknown entity {entity_id!r}")
            if entity.role is not EntityRole.CV:
                raise fail(f"waypoints: {entity_id} is not a vehicle")
            if not isinstance(points, list) or not points:
                raise fail(f"waypoints for {entity_id} must be a non-empty list")
            parsed: list[Waypoint] = []
            last_tick = -1
            for point in points:
                try:
                    wp = Waypoint(
                        tick=int(point["t"]),
                        x=float(point["x"]),
                        y=float(point["y"]),
                    )
                except (KeyError, TypeError, ValueError):
                    raise fail(
                        f"waypoints for {entity_id}: each point needs t, x, y"
                    ) from None
                if wp.tick <= last_tick:
                    raise fail(
                        f"waypoints for {entity_id} must have increasing ticks"
                    )
                last_tick = wp.tick
                parsed.append(wp)
            routes[entity_id] = tuple(parsed)
        return Timeline(mode=MODE_WAYPOINTS, waypoints=routes)

    raise fail(f"unknown timeline mode {mode!r}")


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------


def make_scale_scenario(n_vehicles: int, settle_ticks: int = 2) -> Scenario:
    """A scenario with `n_vehicles` vehicles entering then leaving in turn.

    Used for load testing: demand ramps up to all vehicles at once, then
    back down to nothing.
    """
    if n_vehicles < 1:
        raise ValueError("need at least one vehicle")
    vehicles = [f"V{i:03d}" for i in range(n_vehicles)]
    raw = {
        "name": f"scale-{n_vehicles}",
        "entities": [
            *(
                {"id": v, "role": "cv", "capabilities": ["ego"]}
                for v in vehicles
            ),
            {"id": "S", "role": "risu", "capabilities": ["pointcloud"]},
            {"id": "E", "role": "edge"},
            {"id": "C", "role": "cloud"},
        ],
        "applications": [_reference_application()],
        "geofence": {
            "center": [0.0, 0.0],
            "application": "object-detection-fusion",
            "risu": "S",
        },
        "timeline": {
            "mode": "scripted",
            "settle_ticks": settle_ticks,
            "events": [
                *(
                    {"step": i + 1, "enter": v}
                    for i, v in enumerate(vehicles)
                ),
                *(
                    {"step": n_vehicles + i + 1, "leave": v}
                    for i, v in enumerate(vehicles)
                ),
            ],
        },
    }
    return scenario_from_mapping(raw, origin=f"scale-{n_vehicles}")


def _reference_application(version: str = "v1") -> dict:
    return {
        "name": "object-detection-fusion",
        "version": version,
        "parts": [
            {
                "role": "objdet",
                "kind": "object-detection",
                "placement": "edge",
                "per_source": "pointcloud",
                "output_topic": "/detections/{source}/objects",
            },
            {
                "role": "fusion",
                "kind": "object-fusion",
                "placement": "edge",
                "inputs": ["demand:ego", "outputs:objdet"],
                "output_topic": "/fusion/objects",
            },
        ],
    }


# --------------------------------------------------------------------------
# Injected request files
# --------------------------------------------------------------------------


def load_request_file(path: str | Path) -> dict:
    """Parse a single-request file used by the inject command.

    Returns the raw mapping; the caller builds the DeploymentRequest
    against a concrete scenario topology.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"{path.name}: {exc}") from exc
    except OSError as exc:
        raise ScenarioParseError(str(exc)) from exc
    if not isinstance(raw, dict) or "request" not in raw:
        raise ScenarioValidationError(
            f"{path.name}: expected a top-level request mapping"
        )
    request = raw["request"]
    required = {"id", "action", "application", "requesters", "inputs"}
    missing = required - set(request)
    if missing:
        raise ScenarioValidationError(
            f"{path.name}: request is missing {sorted(missing)}"
        )
    return request
