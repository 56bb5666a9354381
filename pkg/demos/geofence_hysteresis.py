#!/usr/bin/env python3
"""Drive one vehicle through the geofence band and watch the hysteresis.

The zone arms at distance 150 and disarms past 170.  The 20 m band in
between means a vehicle wobbling around the boundary does not flap the
deployment: it stays in whatever state it last committed to.
"""

from demandflow.cli import bundled_scenario_path
from demandflow.detector import EventDetector
from demandflow.model import Topology
from demandflow.scenario import load_scenario

# x positions of a drive toward the center, a wobble inside the band,
# and a slow exit
DRIVE = [
    300, 220, 171, 170, 151, 150,      # approach; enter exactly at 150
    160, 169, 155, 168,                # wobble inside the band: nothing
    170, 171,                          # leave only past 170
    169, 155,                          # back in the band: still outside
    149,                               # re-enter
    400,                               # and away
]


def main():
    scenario = load_scenario(bundled_scenario_path("collective_perception"))
    detector = EventDetector(scenario.rule, Topology(scenario.entities))

    print(f"enter at d <= {scenario.rule.d_start:.0f}, "
          f"leave at d > {scenario.rule.d_stop:.0f}")
    print()
    print(f"{'tick':>4}  {'x':>5}  {'inside':6}  event")
    for tick, x in enumerate(DRIVE, 1):
        detector.observe_pose("V0", (float(x), 0.0))
        requests = detector.evaluate(tick)
        if requests:
            event = f"{requests[0].action.value} ({requests[0].request_id})"
        else:
            event = "-"
        inside = "yes" if detector.is_inside("V0") else "no"
        print(f"{tick:>4}  {x:>5}  {inside:6}  {event}")

    print()
    print("note the silent stretch between 150 and 170 in both directions")


if __name__ == "__main__":
    main()
