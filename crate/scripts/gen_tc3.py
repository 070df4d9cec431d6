"""Generate the 123-node single-phase radial feeder used by scenarios/tc3.json.

Trunk of 30 sections with laterals and sub-laterals; impedances in per-unit
on a 4.16 kV / 1 MVA base. Deterministic: rerunning yields identical output.
"""
import json
import random

rng = random.Random(123)
lines = []
next_bus = 1


def add(frm, kind):
    global next_bus
    to = next_bus
    next_bus += 1
    if kind == "trunk":
        x = rng.uniform(0.008, 0.016)
        r = x * rng.uniform(0.55, 0.8)
    else:
        x = rng.uniform(0.012, 0.03)
        r = x * rng.uniform(0.8, 1.3)
    lines.append({"from": frm, "to": to, "r": round(r, 6), "x": round(x, 6)})
    return to


trunk = [0]
for _ in range(30):
    trunk.append(add(trunk[-1], "trunk"))

target = 122
laterals = []
for t in trunk[1:]:
    if len(lines) >= target:
        break
    if rng.random() < 0.75:
        prev = t
        for _ in range(rng.randint(2, 5)):
            if len(lines) >= target:
                break
            prev = add(prev, "lateral")
            laterals.append(prev)
while len(lines) < target:
    start = rng.choice(laterals)
    prev = start
    for _ in range(rng.randint(1, 3)):
        if len(lines) >= target:
            break
        prev = add(prev, "lateral")
        laterals.append(prev)

print(json.dumps({"buses": next_bus, "lines": lines, "v0": 1.0}))
