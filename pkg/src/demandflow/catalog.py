"""Application templates and the resolution of demand into concrete parts.

A template describes an application as a list of part rules.  Resolution
takes a demand description (who is asking, which source topics they bring
along) and produces the concrete service parts plus the connections that
carry remote source topics to the node where they are consumed.
Resolution is a pure function of (template, topology, demand); it never
inspects what is already deployed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    CFG_DST,
    CFG_FORWARD_TOPIC,
    CFG_INPUT_TOPIC,
    CFG_NODE,
    CFG_OUTPUT_TOPIC,
    CFG_SERVICE_KIND,
    CFG_SOURCE,
    CFG_SRC,
    AlreadyRegisteredError,
    ConfigItem,
    EntityRole,
    ServiceKind,
    Topology,
    TOPIC_KINDS,
    UnknownApplicationError,
    UnknownVersionError,
    source_topic,
)

# Short tokens used when deriving resource names from service kinds.
_KIND_TOKENS = {
    ServiceKind.OBJECT_DETECTION: "objdet",
    ServiceKind.OBJECT_FUSION: "fusion",
}

# Selector prefixes understood in PartRule.input_selectors.
SELECT_DEMAND = "demand"
SELECT_OUTPUTS = "outputs"


def service_cr_name(app_name: str, role: str, source: str | None = None) -> str:
    suffix = source if source is not None else "singleton"
    return f"svc-{app_name}-{role}-{suffix}"


def connection_cr_name(src_node: str, dst_node: str) -> str:
    return f"conn-{src_node}-{dst_node}"


@dataclass(frozen=True)
class PartRule:
    """How one kind of part of an application is instantiated.

    With `per_source_kind` set, one part is created per entity providing
    that topic kind; otherwise the rule yields a single part.  Input
    selectors are either ``demand:<kind>`` (all demanded topics of that
    kind) or ``outputs:<role>`` (output topics of an earlier rule).
    """

    role: str
    service_kind: ServiceKind
    placement_role: EntityRole
    per_source_kind: str | None = None
    input_selectors: tuple[str, ...] = ()
    output_topic: str | None = None


@dataclass(frozen=True)
class ApplicationTemplate:
    app_name: str
    version: str
    parts: tuple[PartRule, ...]

    def validate(self) -> None:
        if not self.app_name or not self.version:
            raise ValueError("template needs a name and a version")
        seen_roles: set[str] = set()
        for rule in self.parts:
            if rule.role in seen_roles:
                raise ValueError(f"duplicate part role {rule.role!r}")
            if rule.per_source_kind is not None:
                if rule.per_source_kind not in TOPIC_KINDS:
                    raise ValueError(
                        f"unknown source kind {rule.per_source_kind!r}"
                    )
                if rule.input_selectors:
                    raise ValueError(
                        "per-source rules derive their input from the source"
                    )
            for selector in rule.input_selectors:
                prefix, _, arg = selector.partition(":")
                if prefix == SELECT_DEMAND:
                    if arg not in TOPIC_KINDS:
                        raise ValueError(f"bad selector {selector!r}")
                elif prefix == SELECT_OUTPUTS:
                    if arg not in seen_roles:
                        raise ValueError(
                            f"selector {selector!r} must reference an earlier rule"
                        )
                else:
                    raise ValueError(f"bad selector {selector!r}")
            seen_roles.add(rule.role)


@dataclass(frozen=True)
class DemandDescription:
    """Who is demanding an application and which source topics they bring.

    `inputs` is an ordered list of (entity, topic kind) pairs; order is
    preserved all the way into rendered config items.
    """

    requesters: tuple[str, ...]
    inputs: tuple[tuple[str, str], ...]

    def entities(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for entity_id, _ in self.inputs:
            seen.setdefault(entity_id)
        return tuple(seen)

    def entities_providing(self, kind: str) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for entity_id, k in self.inputs:
            if k == kind:
                seen.setdefault(entity_id)
        return tuple(seen)

    def topics_of(self, entity_id: str) -> tuple[str, ...]:
        return tuple(
            source_topic(eid, kind) for eid, kind in self.inputs if eid == entity_id
        )

    def topics_of_kind(self, kind: str) -> tuple[str, ...]:
        return tuple(
            source_topic(eid, k) for eid, k in self.inputs if k == kind
        )


@dataclass(frozen=True)
class ServicePartSpec:
    cr_name: str
    service_kind: ServiceKind
    target_node: str
    config_items: tuple[ConfigItem, ...]
    version: str


@dataclass(frozen=True)
class ConnectionPartSpec:
    cr_name: str
    src_node: str
    dst_node: str
    topics: tuple[str, ...]

    def config_items(self) -> tuple[ConfigItem, ...]:
        items = [ConfigItem(CFG_SRC, self.src_node), ConfigItem(CFG_DST, self.dst_node)]
        items.extend(ConfigItem(CFG_FORWARD_TOPIC, t) for t in self.topics)
        return tuple(items)


@dataclass(frozen=True)
class ResolvedParts:
    services: tuple[ServicePartSpec, ...]
    connections: tuple[ConnectionPartSpec, ...]


class Catalog:
    """Registry of application templates, keyed by (name, version)."""

    def __init__(self, topology: Topology):
        self._topology = topology
        self._templates: dict[tuple[str, str], ApplicationTemplate] = {}

    @property
    def topology(self) -> Topology:
        return self._topology

    def register_application(self, template: ApplicationTemplate) -> None:
        template.validate()
        key = (template.app_name, template.version)
        if key in self._templates:
            raise AlreadyRegisteredError(
                f"{template.app_name} {template.version} is already registered"
            )
        self._templates[key] = template

    def is_registered(self, app_name: str, version: str | None = None) -> bool:
        if version is None:
            return any(name == app_name for name, _ in self._templates)
        return (app_name, version) in self._templates

    def versions(self, app_name: str) -> tuple[str, ...]:
        """Registered versions of an application, in registration order."""
        return tuple(v for name, v in self._templates if name == app_name)

    def first_version(self, app_name: str) -> str:
        versions = self.versions(app_name)
        if not versions:
            raise UnknownApplicationError(f"unknown application {app_name!r}")
        return versions[0]

    def template(self, app_name: str, version: str) -> ApplicationTemplate:
        if not self.is_registered(app_name):
            raise UnknownApplicationError(f"unknown application {app_name!r}")
        try:
            return self._templates[(app_name, version)]
        except KeyError:
            raise UnknownVersionError(
                f"{app_name} has no version {version!r}"
            ) from None

    # -- resolution --------------------------------------------------------

    def resolve(
        self, app_name: str, version: str, demand: DemandDescription
    ) -> ResolvedParts:
        template = self.template(app_name, version)
        for entity_id in (*demand.requesters, *demand.entities()):
            self._topology.get(entity_id)  # raises UnknownEntityError

        services: list[ServicePartSpec] = []
        outputs_by_role: dict[str, list[str]] = {}
        placement_nodes: set[str] = set()
        for rule in template.parts:
            placed = self._topology.single_node_with_role(rule.placement_role)
            placement_nodes.add(placed)
            if rule.per_source_kind is not None:
                sources = sorted(demand.entities_providing(rule.per_source_kind))
                for source in sources:
                    out = (rule.output_topic or "").format(source=source)
                    items = [
                        ConfigItem(CFG_NODE, placed),
                        ConfigItem(CFG_SERVICE_KIND, rule.service_kind.value),
                        ConfigItem(CFG_SOURCE, source),
                        ConfigItem(
                            CFG_INPUT_TOPIC,
                            source_topic(source, rule.per_source_kind),
                        ),
                    ]
                    if out:
                        items.append(ConfigItem(CFG_OUTPUT_TOPIC, out))
                    services.append(
                        ServicePartSpec(
                            cr_name=service_cr_name(app_name, rule.role, source),
                            service_kind=rule.service_kind,
                            target_node=placed,
                            config_items=tuple(items),
                            version=version,
                        )
                    )
                    if out:
                        outputs_by_role.setdefault(rule.role, []).append(out)
            else:
                inputs: list[str] = []
                for selector in rule.input_selectors:
                    prefix, _, arg = selector.partition(":")
                    if prefix == SELECT_DEMAND:
                        inputs.extend(demand.topics_of_kind(arg))
                    else:
                        inputs.extend(outputs_by_role.get(arg, ()))
                out = (rule.output_topic or "").format(source="")
                items = [
                    ConfigItem(CFG_NODE, placed),
                    ConfigItem(CFG_SERVICE_KIND, rule.service_kind.value),
                ]
                items.extend(ConfigItem(CFG_INPUT_TOPIC, t) for t in inputs)
                if out:
                    items.append(ConfigItem(CFG_OUTPUT_TOPIC, out))
                services.append(
                    ServicePartSpec(
                        cr_name=service_cr_name(app_name, rule.role),
                        service_kind=rule.service_kind,
                        target_node=placed,
                        config_items=tuple(items),
                        version=version,
                    )
                )
                if out:
                    outputs_by_role.setdefault(rule.role, []).append(out)

        # All compute parts of one application land on one node; that node
        # is where every demanded source topic must be made available.
        if len(placement_nodes) != 1:
            raise ValueError(
                f"{app_name} {version} places parts on {len(placement_nodes)} nodes, "
                "expected one"
            )
        dst_node = placement_nodes.pop()

        connections: list[ConnectionPartSpec] = []
        for source in sorted(demand.entities()):
            src_node = self._topology.node_of(source)
            if src_node == dst_node:
                continue
            connections.append(
                ConnectionPartSpec(
                    cr_name=connection_cr_name(src_node, dst_node),
                    src_node=src_node,
                    dst_node=dst_node,
                    topics=demand.topics_of(source),
                )
            )
        return ResolvedParts(services=tuple(services), connections=tuple(connections))
