#!/usr/bin/env python3
"""Toy stand-in for a DASH playback run: no emulation, just a deterministic
model of stalls/quality as a function of the swept knobs plus seeded noise.
Real deployments replace this script with one driving Mininet or a player."""

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
    rng = random.Random(doc["seed"])

    player_bias = {"DASH.JS": 0.0, "Shaka": -0.2, "AStream": 0.4}[p["player"]]
    algo_bias = 0.0 if p["adaptation_algorithm"] == "Standard" else -0.3
    buffer_s = 8.0 if p["target_buffer_s"] == "Default" else float(p["target_buffer_s"])

    # Stalls grow with bandwidth variance and segment length, shrink with
    # mean bandwidth and buffer headroom.
    pressure = (
        p["bandwidth_variance"] / max(p["bandwidth_mean_mbps"], 0.1)
        + p["segment_length_s"] / (buffer_s + 1.0)
        + player_bias
        + algo_bias
    )
    stallings = max(0.0, pressure + rng.gauss(0, 0.25))
    quality = max(0.5, min(5.0, 1.0 + p["bandwidth_mean_mbps"] * 0.4 - 0.3 * pressure))
    utilization = max(0.1, min(1.0, 0.9 - 0.05 * p["segment_length_s"] / 15.0 + rng.gauss(0, 0.02)))

    report("stallings", stallings)
    report("avg_quality", quality)
    report("network_utilization", utilization)


if __name__ == "__main__":
    main()
