#!/usr/bin/env python3
"""Random search for the full-profile clean operating point.

Scores candidates against all clean-side bands at once: accuracy, eval
latency, window latency, mean rate, window rate variance, weight change.
"""

from __future__ import annotations

import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from spikesec import rng as rngmod
from spikesec.harness import build_baseline
from spikesec.profiles import full_profile
from spikesec.telemetry import TYPE_NONE, run_telemetry_window
from spikesec.workload import accuracy, draw_sample

BANDS = {
    "acc": (94.0, 96.0),
    "lat": (8.0, 11.5),
    "wlat": (8.0, 12.0),
    "rate": (42.0, 57.0),
    "var": (3.0, 7.0),
    "wc": (0.40, 0.60),
}


def candidate_cfg(p):
    cfg = full_profile()
    stdp = dataclasses.replace(cfg.sim.stdp, a_plus=p["ap"], a_minus=p["ap"] * 0.923)
    return dataclasses.replace(
        cfg,
        sim=dataclasses.replace(cfg.sim, v_thresh=p["thr"], stdp=stdp),
        task=dataclasses.replace(cfg.task, noise_sigma=p["sig"], base_rate_hz=p["base"],
                                 peak_rate_hz=p["peak"], samples_per_class=p["spc"]),
        workload=dataclasses.replace(cfg.workload, bg_current=p["bg"],
                                     input_charge=p["charge"],
                                     stream_common_jitter_hz=p["cj"]),
    )


def measure(p):
    cfg = candidate_cfg(p)
    try:
        baseline, task, readout = build_baseline(cfg)
        gen = rngmod.substream(1, 1)
        samples = [draw_sample(cfg.task, k % 5, gen, task.prototypes) for k in range(600)]
        acc, recs = accuracy(baseline, readout, samples, cfg.sim, cfg.workload, seed=9)
        rows = [run_telemetry_window(baseline, readout, task, cfg.sim, cfg.workload,
                                     TYPE_NONE, w, 99) for w in range(12)]
    except Exception as exc:
        return p, None, f"{type(exc).__name__}: {exc}"
    hz = [r.metrics.spike_frequency_hz for r in rows]
    got = {
        "acc": acc,
        "lat": float(np.mean([r[2] for r in recs])),
        "wlat": float(np.mean([r.metrics.latency_ms for r in rows])),
        "rate": float(np.mean(hz)),
        "var": float(np.var(hz, ddof=1)),
        "wc": float(np.mean([r.metrics.weight_change_pct for r in rows])),
    }
    return p, got, None


def score(got):
    total = 0.0
    for k, (lo, hi) in BANDS.items():
        v = got[k]
        half = (hi - lo) / 2
        if v < lo:
            total += (lo - v) / half
        elif v > hi:
            total += (v - hi) / half
    return total


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    n = int(sys.argv[2]) if len(sys.argv) > 2 else 24
    gen = np.random.default_rng(seed)
    cands = []
    for _ in range(n):
        cands.append(dict(
            bg=round(float(gen.uniform(1.6, 1.95)), 3),
            base=round(float(gen.uniform(25, 55)), 1),
            peak=round(float(gen.uniform(700, 1000)), 0),
            sig=round(float(gen.uniform(15, 45)), 1),
            spc=int(gen.choice([7, 8, 10, 12])),
            cj=round(float(gen.uniform(3, 9)), 1),
            charge=round(float(gen.uniform(62, 80)), 1),
            thr=round(float(gen.uniform(55, 68)), 1),
            ap=round(float(gen.uniform(2.6e-5, 4.5e-5)), 7),
        ))
    results = []
    with ProcessPoolExecutor(max_workers=4) as pool:
        for p, got, err in pool.map(measure, cands):
            if err:
                print(f"FAIL {p} {err}", flush=True)
                continue
            s = score(got)
            results.append((s, p, got))
            print(f"score {s:6.2f} {p} -> " +
                  " ".join(f"{k}={v:.2f}" for k, v in got.items()), flush=True)
    results.sort(key=lambda r: r[0])
    print("\n=== best ===")
    for s, p, got in results[:5]:
        print(f"score {s:.2f} {p}")
        print("   " + " ".join(f"{k}={v:.2f}" for k, v in got.items()))


if __name__ == "__main__":
    main()
