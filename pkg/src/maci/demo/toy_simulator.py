#!/usr/bin/env python3
"""Deterministic toy workload: score = 10*gain + offset + mode bump + tiny
seeded noise. Two runs with the same seed produce identical records."""

import json
import os
import random
import urllib.request


def report(metric, value):
    request = urllib.request.Request(
        os.environ["MACI_REPORT_URL"] + "/metric",
        json.dumps({"metric": metric, "value": value}).encode(),
        {"Content-Type": "application/json"},
    )
    urllib.request.urlopen(request)


def main():
    doc = json.load(open(os.environ["MACI_PARAMS_FILE"]))
    p = doc["params"]
    rng = random.Random(int(os.environ["MACI_SEED"]))

    bump = 0.25 if p["mode"] == "bursty" else 0.0
    noise = rng.gauss(0, 0.01)
    score = 10.0 * p["gain"] + p["offset"] + bump + noise
    cost = p["offset"] + 0.5 * p["gain"] + rng.gauss(0, 0.01)

    report("score", score)
    report("cost", cost)


if __name__ == "__main__":
    main()
