#!/usr/bin/env python3
"""Walk through the reference timeline and print the ledger bookkeeping.

Four vehicles pass through the zone one after another.  After every step
this script shows which resources are live and who supports them.  The
point to notice: the shared services (detection on the roadside lidar,
the fusion stage, the S-to-edge connection) are deployed exactly once at
step 1 and only their support lists breathe; per-vehicle resources come
and go with their vehicle.
"""

from collections import defaultdict

from demandflow.cli import bundled_scenario_path
from demandflow.runner import run_scenario
from demandflow.scenario import load_scenario
from demandflow.tracing import TAG_ACTION, TAG_LEDGER


def describe(event):
    if event.enter:
        return f"{event.enter} enters the zone"
    if event.leave:
        return f"{event.leave} leaves the zone"
    app, version = event.upgrade
    return f"{app} upgrades to {version}"


def main():
    scenario = load_scenario(bundled_scenario_path("collective_perception"))
    runner = run_scenario(scenario)

    by_step = defaultdict(list)
    for record in runner.trace.records:
        by_step[record.step].append(record)

    live = {}
    deploy_counts = defaultdict(int)
    for event in scenario.timeline.events:
        step = event.step
        print(f"step {step}: {describe(event)}")
        for record in by_step[step]:
            if record.tag == TAG_ACTION:
                action = record.get("action")
                if action == "deploy":
                    deploy_counts[record.get("cr")] += 1
                ids = record.get("instances")
                print(f"  {action:12s} {record.get('cr')}  ({ids})")
            elif record.tag == TAG_LEDGER:
                support = record.values("support")
                if support:
                    live[record.get("cr")] = support
                else:
                    live.pop(record.get("cr"), None)
        if live:
            width = max(len(name) for name in live)
            for name in sorted(live):
                print(f"    {name:{width}s}  support={','.join(live[name])}")
        else:
            print("    (nothing live)")
        print()

    print("deploy counts over the whole run:")
    for name in sorted(deploy_counts):
        print(f"  {deploy_counts[name]}x {name}")
    print()
    print(f"instances still running at the end: {len(runner.system.sim.instances())}")


if __name__ == "__main__":
    main()
