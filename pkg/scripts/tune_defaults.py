#!/usr/bin/env python3
"""Exploration harness for picking shipped default constants.

Trains a baseline network under a candidate parameter set and prints the
clean-side operating point: population rates, weight drift per window,
accuracy, decision latency, and the learned block contrast.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from spikesec import rng as rngmod
from spikesec.config import SimConfig, StdpConfig, TaskSpec, WorkloadConfig
from spikesec.network import init_network, run_window
from spikesec.workload import accuracy, draw_sample, encode_poisson, gen_task, train
from spikesec.workload import _steady_drive


def build_parser():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--channels", type=int, default=250)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--v-thresh", type=float, default=60.0)
    p.add_argument("--refractory", type=float, default=1.0)
    p.add_argument("--bg", type=float, default=1.1)
    p.add_argument("--input-charge", type=float, default=65.0)
    p.add_argument("--teacher", type=float, default=9.0)
    p.add_argument("--a-plus", type=float, default=5e-5)
    p.add_argument("--a-minus", type=float, default=2.5e-5)
    p.add_argument("--tau-stdp", type=float, default=20.0)
    p.add_argument("--peak", type=float, default=450.0)
    p.add_argument("--base", type=float, default=120.0)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--margin", type=int, default=3)
    p.add_argument("--group-size", type=int, default=40)
    p.add_argument("--train-per-class", type=int, default=10)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--eval-n", type=int, default=150)
    p.add_argument("--eval-window", type=float, default=100.0)
    p.add_argument("--free-windows", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    return p


def make_configs(args):
    sim = SimConfig(
        n_neurons=args.n, v_thresh=args.v_thresh, refractory=args.refractory,
        seed=args.seed,
        stdp=StdpConfig(a_plus=args.a_plus, a_minus=args.a_minus,
                        tau_plus=args.tau_stdp, tau_minus=args.tau_stdp),
    )
    task_spec = TaskSpec(
        n_classes=args.classes, n_channels=args.channels,
        base_rate_hz=args.base, peak_rate_hz=args.peak, noise_sigma=args.sigma,
        samples_per_class=int(np.ceil(args.train_per_class / 0.7)) + 1, seed=args.seed,
    )
    wl = WorkloadConfig(
        group_size=args.group_size, decision_margin=args.margin,
        input_charge=args.input_charge, bg_current=args.bg,
        teacher_current=args.teacher, eval_window_ms=args.eval_window,
        train_passes=args.passes,
    )
    return sim, task_spec, wl


def block_contrast(weights, groups, n_channels, n_classes):
    blk = n_channels // n_classes
    mat = np.empty((n_classes, n_classes))
    for g in range(n_classes):
        for c in range(n_classes):
            mat[g, c] = weights[c * blk:(c + 1) * blk, :][:, groups[g]].mean()
    diag = np.diag(mat).mean()
    off = (mat.sum() - np.trace(mat)) / (n_classes * (n_classes - 1))
    return diag, off, mat


def main(argv=None):
    args = build_parser().parse_args(argv)
    sim, task_spec, wl = make_configs(args)
    state = init_network(sim)
    task = gen_task(task_spec)

    t0 = time.time()
    state, readout = train(state, task, sim, wl, seed=args.seed + 1)
    diag, off, _ = block_contrast(state.weights, readout.group_neurons,
                                  task_spec.n_channels, task_spec.n_classes)
    inin = state.weights[:task_spec.n_channels, :task_spec.n_channels].mean()
    print(f"train: {time.time()-t0:.0f}s/{len(task.train)}win  assign={readout.assignment}  "
          f"diag {diag:.3f} off {off:.3f} in-in {inin:.3f}")

    gen = rngmod.substream(args.seed, 99)
    rates, wcs, lats, pops = [], [], [], []
    for k in range(args.free_windows):
        snap = state.copy()
        sample = draw_sample(task_spec, int(gen.integers(args.classes)), gen, task.prototypes)
        sched = encode_poisson(sample, wl.window_ms, sim.dt,
                               rngmod.stream_seed(args.seed, 98, k),
                               input_charge=wl.input_charge)
        res = run_window(snap, sched, wl.window_ms, sim, learning=True,
                         steady_current=np.full(sim.n_neurons, wl.bg_current),
                         group_of=readout.group_of, n_groups=readout.n_groups,
                         margin=readout.decision_margin)
        c = res.counts
        nc = task_spec.n_channels
        pops.append((c[:nc].mean(), c[nc:sim.n_neurons - 5 * args.group_size].mean()))
        rates.append(1000.0 * len(res.record) / (sim.n_neurons * wl.window_ms))
        wcs.append(100.0 * res.sum_abs_dw / (sim.n_neurons * (sim.n_neurons - 1)))
        lats.append(res.latency_ms)
    pin, phid = np.mean([p[0] for p in pops]), np.mean([p[1] for p in pops])
    print(f"free-run: rate {np.mean(rates):.1f}+-{np.std(rates):.2f} Hz (var {np.var(rates, ddof=1) if len(rates)>1 else 0:.2f})  "
          f"in {pin:.0f} hid {phid:.1f}  wc {np.mean(wcs):.3f}%  win-lat {np.mean(lats):.1f}")

    test = task.test[: args.eval_n]
    acc, records = accuracy(state, readout, test, sim, wl, seed=args.seed + 2)
    lats = [r[2] for r in records]
    print(f"eval: acc {acc:.1f}%  lat {np.mean(lats):.2f}+-{np.std(lats):.2f} ms  "
          f"timeout {100*np.mean([r[3] for r in records]):.1f}%  n={len(test)}")


if __name__ == "__main__":
    main()
