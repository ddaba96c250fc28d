#!/usr/bin/env python3
"""Standalone M/M/1 queue simulation with a fixed configuration."""
import random
import json, os, urllib.request

_doc = json.load(open(os.environ["MACI_PARAMS_FILE"]))
ARRIVAL_RATE = _doc["params"]["arrival_rate"]
SERVICE_RATE = _doc["params"]["service_rate"]
SEED = _doc["seed"]


def simulate(arrival_rate, service_rate, seed, customers=20000):
    rng = random.Random(seed)
    clock = 0.0
    server_free_at = 0.0
    total_wait = 0.0
    for _ in range(customers):
        clock += rng.expovariate(arrival_rate)
        start = max(clock, server_free_at)
        total_wait += start - clock
        server_free_at = start + rng.expovariate(service_rate)
    return total_wait / customers


if __name__ == "__main__":
    mean_wait = simulate(ARRIVAL_RATE, SERVICE_RATE, SEED)
    print(f"mean_wait={mean_wait:.4f}")
    urllib.request.urlopen(urllib.request.Request(os.environ["MACI_REPORT_URL"] + "/metric", json.dumps({"metric": "mean_wait", "value": mean_wait}).encode(), {"Content-Type": "application/json"}))
