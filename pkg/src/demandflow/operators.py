"""Reference-counted demand bookkeeping and the reconcile loops.

The spec of a custom resource carries only the latest demand delta, so
the accumulated truth lives here, in each operator's ledgers: a counted
multiset of requesters and one of countable config items.  A requester or
config item stays part of the effective state while its count is
positive; release deltas decrement and a count reaching zero drops the
key.  The support set being empty is the one and only shutdown signal.
"""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import Enum

from .cluster import ClusterSim, InstanceSpec, ServiceInstance
from .model import (
    CFG_FORWARD_TOPIC,
    CFG_INPUT_TOPIC,
    CFG_NODE,
    CFG_SERVICE_KIND,
    CFG_SRC,
    CFG_DST,
    ChangeType,
    ConfigItem,
    DeltaAction,
    NotFoundError,
    OrchestrationError,
    Phase,
    ResourceKind,
    ServiceKind,
    config_value,
)
from .store import DemandDelta, ResourceStatus, ResourceStore, WatchEvent, Watcher
from .tracing import Trace

log = logging.getLogger(__name__)

# Config item kinds subject to reference counting; everything else is
# adopted once from the first delta and kept as base config.
COUNTED_CONFIG_KINDS = frozenset({CFG_INPUT_TOPIC, CFG_FORWARD_TOPIC})


@dataclass(frozen=True)
class DemandLedger:
    """Accumulated demand for one custom resource.

    Dict fields are treated as immutable; apply_demand builds new dicts
    rather than mutating.  Key order is first-demand order, which keeps
    rendered support lists stable across runs.
    """

    requester_counts: dict[str, int] = field(default_factory=dict)
    config_counts: dict[ConfigItem, int] = field(default_factory=dict)
    base_config: tuple[ConfigItem, ...] = ()
    version: str = ""

    @property
    def support(self) -> tuple[str, ...]:
        return tuple(self.requester_counts)

    @property
    def effective_config(self) -> tuple[ConfigItem, ...]:
        return self.base_config + tuple(self.config_counts)

    def is_empty(self) -> bool:
        return not self.requester_counts


@dataclass(frozen=True)
class LedgerRejection:
    """Why a delta could not be applied.  The ledger stays untouched."""

    kind: str
    detail: str


def apply_demand(
    ledger: DemandLedger, delta: DemandDelta
) -> tuple[DemandLedger, LedgerRejection | None]:
    """Fold one demand delta into a ledger, atomically.

    A release that would push any requester or config count below zero is
    rejected as a whole; partial application never happens.  Version-only
    deltas touch nothing but the version field.
    """
    if delta.is_version_only():
        return replace(ledger, version=delta.app_version), None

    counted = [i for i in delta.config_items if i.kind in COUNTED_CONFIG_KINDS]
    base = tuple(
        i for i in delta.config_items if i.kind not in COUNTED_CONFIG_KINDS
    )

    if delta.action is DeltaAction.REQUEST:
        requesters = dict(ledger.requester_counts)
        for requester in delta.requesters:
            requesters[requester] = requesters.get(requester, 0) + 1
        config = dict(ledger.config_counts)
        for item in counted:
            config[item] = config.get(item, 0) + 1
        return DemandLedger(
            requester_counts=requesters,
            config_counts=config,
            base_config=ledger.base_config or base,
            version=delta.app_version or ledger.version,
        ), None

    needed_requesters = Counter(delta.requesters)
    for requester, n in needed_requesters.items():
        if ledger.requester_counts.get(requester, 0) < n:
            return ledger, LedgerRejection(
                "unknown-requester-release", requester
            )
    needed_config = Counter(counted)
    for item, n in needed_config.items():
        if ledger.config_counts.get(item, 0) < n:
            return ledger, LedgerRejection(
                "unknown-config-release", item.render()
            )

    requesters = dict(ledger.requester_counts)
    for requester, n in needed_requesters.items():
        remaining = requesters[requester] - n
        if remaining:
            requesters[requester] = remaining
        else:
            del requesters[requester]
    config = dict(ledger.config_counts)
    for item, n in needed_config.items():
        remaining = config[item] - n
        if remaining:
            config[item] = remaining
        else:
            del config[item]
    return replace(
        ledger, requester_counts=requesters, config_counts=config
    ), None


class DecisionAction(str, Enum):
    DEPLOY = "deploy"
    RECONFIGURE = "reconfigure"
    REPLACE = "replace"
    SHUTDOWN = "shutdown"
    NOOP = "noop"


@dataclass(frozen=True)
class ReconcileDecision:
    action: DecisionAction
    effective_config: tuple[ConfigItem, ...]
    target_version: str


def decide(
    before: DemandLedger,
    after: DemandLedger,
    instance: ServiceInstance | None,
) -> ReconcileDecision:
    """Map a ledger transition plus current instance onto one action.

    Shutdown exactly when support is empty after the delta; `before` is
    part of the contract for symmetry but the decision depends only on
    the resulting state.
    """
    del before
    config = after.effective_config
    if after.is_empty():
        return ReconcileDecision(DecisionAction.SHUTDOWN, config, after.version)
    if instance is None:
        return ReconcileDecision(DecisionAction.DEPLOY, config, after.version)
    if after.version and instance.version != after.version:
        return ReconcileDecision(DecisionAction.REPLACE, config, after.version)
    if set(config) != set(instance.config):
        return ReconcileDecision(
            DecisionAction.RECONFIGURE, config, after.version
        )
    return ReconcileDecision(DecisionAction.NOOP, config, after.version)


class _BaseOperator:
    """Shared reconcile plumbing for both resource kinds.

    One watch event is processed at a time.  Reconciling an event means:
    replay every spec generation not yet folded into the ledger, decide,
    execute against the cluster, then publish status and a ledger trace
    record.  Cluster failures roll the attempt back and re-queue the
    event a bounded number of times before the delta is dropped with an
    error record.
    """

    kind: ResourceKind
    source: str

    def __init__(
        self,
        store: ResourceStore,
        sim: ClusterSim,
        trace: Trace,
        max_attempts: int = 3,
    ):
        self._store = store
        self._sim = sim
        self._trace = trace
        self._max_attempts = max_attempts
        self._watcher: Watcher = store.watch(self.kind)
        self._ledgers: dict[str, DemandLedger] = {}
        self._observed: dict[str, int] = {}
        self._retry: deque[WatchEvent] = deque()
        self._attempts: dict[tuple[str, int], int] = {}

    # -- queue handling ----------------------------------------------------

    def pending(self) -> int:
        return self._watcher.pending() + len(self._retry)

    def run_pending(self) -> int:
        """Process queued retries, then all queued watch events."""
        processed = 0
        retries = list(self._retry)
        self._retry.clear()
        for event in retries:
            self.reconcile(event)
            processed += 1
        while (event := self._watcher.pop()) is not None:
            self.reconcile(event)
            processed += 1
        return processed

    def ledger(self, name: str) -> DemandLedger | None:
        return self._ledgers.get(name)

    def ledgers(self) -> dict[str, DemandLedger]:
        return dict(self._ledgers)

    # -- the reconcile step ------------------------------------------------

    def reconcile(self, event: WatchEvent) -> None:
        name = event.name
        if event.change is ChangeType.DELETED:
            self._on_deleted(name)
            return
        observed = self._observed.get(name, 0)
        if event.generation <= observed:
            return  # stale or duplicate event
        if not self._store.exists(self.kind, name):
            return  # deleted meanwhile; the deletion event is behind us

        target = event.generation
        ledger = self._ledgers.get(name, DemandLedger())
        before = ledger
        rejections: list[tuple[int, LedgerRejection]] = []
        for generation in range(observed + 1, target + 1):
            delta = self._store.get_spec(self.kind, name, generation)
            ledger, rejection = apply_demand(ledger, delta)
            if rejection is not None:
                rejections.append((generation, rejection))

        decision = decide(before, ledger, self._primary_instance(name))
        try:
            self._execute(name, decision, ledger)
        except OrchestrationError as exc:
            self._handle_failure(name, event, exc)
            return

        self._attempts.pop((name, target), None)
        self._observed[name] = target
        self._ledgers[name] = ledger
        for generation, rejection in rejections:
            self._trace.error(
                self.source,
                rejection.kind,
                f"{name}@{generation}:{rejection.detail}",
            )
        if decision.action is DecisionAction.SHUTDOWN:
            self._forget(name)
            if self._store.exists(self.kind, name):
                self._store.delete_cr(self.kind, name)
            self._trace.ledger_state(name, (), ())
        else:
            self._store.update_status(
                self.kind,
                name,
                ResourceStatus(
                    phase=Phase.RUNNING,
                    support=ledger.support,
                    instance_ids=self._instance_ids(name),
                    observed_generation=target,
                ),
            )
            self._trace.ledger_state(
                name,
                ledger.support,
                (i.render() for i in ledger.effective_config),
            )

    def _handle_failure(
        self, name: str, event: WatchEvent, exc: OrchestrationError
    ) -> None:
        key = (name, event.generation)
        attempts = self._attempts.get(key, 0) + 1
        self._attempts[key] = attempts
        if attempts < self._max_attempts:
            log.debug("reconcile of %s failed (%s), attempt %d, re-queueing",
                      name, exc, attempts)
            if self._store.exists(self.kind, name):
                self._store.update_status(
                    self.kind,
                    name,
                    ResourceStatus(
                        phase=Phase.PENDING,
                        support=self._ledgers.get(name, DemandLedger()).support,
                        instance_ids=self._instance_ids(name),
                        observed_generation=self._observed.get(name, 0),
                    ),
                )
            self._retry.append(event)
            return
        # Give up: the delta is dropped, the ledger keeps its last good
        # state, and the trace records what happened.
        del self._attempts[key]
        self._observed[name] = event.generation
        self._trace.error(
            self.source,
            "reconcile-failed",
            f"{name}@{event.generation}:{type(exc).__name__}",
        )

    # -- hooks per operator ------------------------------------------------

    def _execute(
        self, name: str, decision: ReconcileDecision, ledger: DemandLedger
    ) -> None:
        raise NotImplementedError

    def _primary_instance(self, name: str) -> ServiceInstance | None:
        raise NotImplementedError

    def _instance_ids(self, name: str) -> tuple[str, ...]:
        raise NotImplementedError

    def _forget(self, name: str) -> None:
        self._ledgers.pop(name, None)
        self._observed.pop(name, None)

    def _on_deleted(self, name: str) -> None:
        self._forget(name)


class ServiceOperator(_BaseOperator):
    """Reconciles managed services onto single cluster instances."""

    kind = ResourceKind.MANAGED_SERVICE
    source = "service-operator"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._instances: dict[str, str] = {}

    def _primary_instance(self, name: str) -> ServiceInstance | None:
        instance_id = self._instances.get(name)
        if instance_id is None:
            return None
        try:
            return self._sim.get_instance(instance_id)
        except NotFoundError:
            return None

    def _instance_ids(self, name: str) -> tuple[str, ...]:
        instance_id = self._instances.get(name)
        return (instance_id,) if instance_id else ()

    def _spec_from(
        self, name: str, decision: ReconcileDecision
    ) -> InstanceSpec:
        config = decision.effective_config
        return InstanceSpec(
            cr_name=name,
            service_kind=ServiceKind(config_value(config, CFG_SERVICE_KIND)),
            node_id=config_value(config, CFG_NODE),
            config=config,
            version=decision.target_version,
        )

    def _execute(
        self, name: str, decision: ReconcileDecision, ledger: DemandLedger
    ) -> None:
        action = decision.action
        current = self._instances.get(name)
        if action is DecisionAction.DEPLOY:
            instance_id = self._sim.deploy_instance(self._spec_from(name, decision))
            self._instances[name] = instance_id
            self._trace.instance_action(
                name, "deploy", (instance_id,),
                (self._sim.get_instance(instance_id).node_id,),
            )
        elif action is DecisionAction.RECONFIGURE:
            self._sim.reconfigure_instance(current, decision.effective_config)
            node = self._sim.get_instance(current).node_id
            self._trace.instance_action(name, "reconfigure", (current,), (node,))
        elif action is DecisionAction.REPLACE:
            new_id = self._sim.deploy_instance(self._spec_from(name, decision))
            self._sim.terminate_instance(current)
            self._instances[name] = new_id
            node = self._sim.get_instance(new_id).node_id
            self._trace.instance_action(
                name, "replace", (new_id,), (node,), replaced=(current,)
            )
        elif action is DecisionAction.SHUTDOWN:
            if current is not None:
                node = self._sim.get_instance(current).node_id
                self._sim.terminate_instance(current)
                self._trace.instance_action(
                    name, "terminate", (current,), (node,)
                )

    def _forget(self, name: str) -> None:
        super()._forget(name)
        self._instances.pop(name, None)

    def _on_deleted(self, name: str) -> None:
        # External deletes still tear the instance down.
        current = self._instances.get(name)
        if current is not None:
            try:
                node = self._sim.get_instance(current).node_id
                self._sim.terminate_instance(current)
                self._trace.instance_action(
                    name, "terminate", (current,), (node,)
                )
            except (NotFoundError, OrchestrationError):
                pass
        self._forget(name)


class ConnectionOperator(_BaseOperator):
    """Reconciles managed connections onto sender/receiver instance pairs.

    The pair is atomic: a deploy that cannot complete both halves tears
    the first half down again, so no half-connected state survives.
    """

    kind = ResourceKind.MANAGED_CONNECTION
    source = "connection-operator"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # cr name -> (sender id, receiver id)
        self._pairs: dict[str, tuple[str, str]] = {}

    def _primary_instance(self, name: str) -> ServiceInstance | None:
        pair = self._pairs.get(name)
        if pair is None:
            return None
        try:
            return self._sim.get_instance(pair[0])
        except NotFoundError:
            return None

    def _instance_ids(self, name: str) -> tuple[str, ...]:
        return self._pairs.get(name, ())

    def _deploy_pair(
        self, name: str, decision: ReconcileDecision
    ) -> tuple[str, str]:
        config = decision.effective_config
        src = config_value(config, CFG_SRC)
        dst = config_value(config, CFG_DST)
        receiver_id = self._sim.deploy_instance(
            InstanceSpec(
                cr_name=name,
                service_kind=ServiceKind.COMM_RECEIVER,
                node_id=dst,
                config=tuple(
                    i for i in config if i.kind != CFG_FORWARD_TOPIC
                ),
                version=decision.target_version,
            )
        )
        try:
            sender_id = self._sim.deploy_instance(
                InstanceSpec(
                    cr_name=name,
                    service_kind=ServiceKind.COMM_SENDER,
                    node_id=src,
                    config=config,
                    version=decision.target_version,
                )
            )
        except OrchestrationError:
            self._sim.terminate_instance(receiver_id)
            raise
        return sender_id, receiver_id

    def _execute(
        self, name: str, decision: ReconcileDecision, ledger: DemandLedger
    ) -> None:
        action = decision.action
        pair = self._pairs.get(name)
        if action is DecisionAction.DEPLOY:
            sender_id, receiver_id = self._deploy_pair(name, decision)
            self._pairs[name] = (sender_id, receiver_id)
            self._trace.instance_action(
                name,
                "deploy",
                (sender_id, receiver_id),
                self._pair_nodes((sender_id, receiver_id)),
            )
        elif action is DecisionAction.RECONFIGURE:
            self._sim.reconfigure_instance(pair[0], decision.effective_config)
            self._trace.instance_action(
                name, "reconfigure", (pair[0],), self._pair_nodes(pair[:1])
            )
        elif action is DecisionAction.REPLACE:
            new_pair = self._deploy_pair(name, decision)
            for instance_id in pair:
                self._sim.terminate_instance(instance_id)
            self._pairs[name] = new_pair
            self._trace.instance_action(
                name,
                "replace",
                new_pair,
                self._pair_nodes(new_pair),
                replaced=pair,
            )
        elif action is DecisionAction.SHUTDOWN:
            if pair is not None:
                nodes = self._pair_nodes(pair)
                for instance_id in pair:
                    self._sim.terminate_instance(instance_id)
                self._trace.instance_action(name, "terminate", pair, nodes)

    def _pair_nodes(self, instance_ids: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(
            self._sim.get_instance(i).node_id for i in instance_ids
        )

    def _forget(self, name: str) -> None:
        super()._forget(name)
        self._pairs.pop(name, None)

    def _on_deleted(self, name: str) -> None:
        pair = self._pairs.get(name)
        if pair is not None:
            try:
                nodes = self._pair_nodes(pair)
                for instance_id in pair:
                    self._sim.terminate_instance(instance_id)
                self._trace.instance_action(name, "terminate", pair, nodes)
            except (NotFoundError, OrchestrationError):
                pass
        self._forget(name)
