#!/usr/bin/env python3
"""Scored search over candidate operating points, attack response included.

Each candidate trains a baseline and measures the clean operating point
plus tamper/poison accuracy drops and latency impacts. Prints one line per
candidate plus a deviation score against the target bands.
"""

from __future__ import annotations

import sys
import dataclasses

import numpy as np

from spikesec import rng as rngmod
from spikesec.config import SimConfig, StdpConfig, TaskSpec, WorkloadConfig
from spikesec.network import init_network, run_window
from spikesec.workload import classify, draw_sample, encode_poisson, gen_task, train
from spikesec.workload import _steady_drive


def build(p, seed=42):
    sim = SimConfig(n_neurons=1000, v_thresh=p["thr"], refractory=1.0, seed=seed,
                    stdp=StdpConfig(a_plus=p["ap"], a_minus=p["am"], tau_plus=20, tau_minus=20))
    spec = TaskSpec(n_classes=5, n_channels=250, base_rate_hz=p["base"], peak_rate_hz=p["peak"],
                    noise_sigma=p["sigma"], samples_per_class=int(np.ceil(p["tpc"] / 0.7)) + 2,
                    seed=seed)
    wl = WorkloadConfig(group_size=80, decision_margin=p["m"], input_charge=p["charge"],
                        bg_current=p["bg"], teacher_current=p["teacher"],
                        readout_bias=p.get("rb", 0.0))
    state = init_network(sim)
    task = gen_task(spec)
    by = {}
    for s in task.train:
        by.setdefault(s.label, []).append(s)
    task = dataclasses.replace(
        task, train=tuple(s for c in range(5) for s in by[c][: p["tpc"]]))
    state, readout = train(state, task, sim, wl, seed=seed + 1)
    return sim, spec, wl, state, task, readout


def eval_acc(sim, spec, wl, task, st, ro, n=250, poison=None, seed0=67):
    gen = rngmod.substream(7, 3)
    ok, lats, tmo = 0, [], 0
    for i in range(n):
        lbl = i % 5
        s = draw_sample(spec, lbl, gen, task.prototypes)
        if poison:
            s = poison(s, i)
        pred, lat, t = classify(st, ro, s, sim, wl, rngmod.stream_seed(seed0, i))
        ok += int(pred == lbl)
        lats.append(lat)
        tmo += int(t)
    return 100 * ok / n, float(np.mean(lats)), tmo


def tamper(st, readout, nc, victim, rival, tseed, adv_frac, beta_lo, beta_hi):
    n = st.n_neurons
    rng = rngmod.substream(tseed, rngmod.ATTACK)
    count = int(0.10 * n * (n - 1))
    flat = rng.choice(n * (n - 1), size=count, replace=False)
    i = flat // (n - 1)
    r = flat % (n - 1)
    j = np.where(r < i, r, r + 1)
    w2 = st.weights.copy()
    vic = readout.group_neurons[victim]
    riv = readout.group_neurons[rival]
    beta = rng.uniform(beta_lo, beta_hi)
    sign = np.where(rng.random(count) < (1 + beta) / 2, 1.0, -1.0)
    adv = rng.random(count) < adv_frac
    is_in = i < nc
    sign[adv & is_in & np.isin(j, vic)] = -1.0
    sign[adv & is_in & np.isin(j, riv)] = +1.0
    w2[i, j] = np.clip(w2[i, j] + 0.1 * sign, 0, 1)
    return st.copy_transients(shared_weights=w2)


def mk_poison(pseed, spec, task):
    k = int(0.05 * spec.n_channels)

    def poison(s, i):
        rng = rngmod.substream(pseed, rngmod.ATTACK, i)
        chans = rng.choice(spec.n_channels, size=k, replace=False)
        rival = (s.label + 1 + rng.integers(spec.n_classes - 1)) % spec.n_classes
        rates = s.rates.copy()
        vals = task.prototypes[rival][chans] + rng.normal(0, spec.noise_sigma, k)
        rates[chans] = np.clip(vals, spec.base_rate_hz,
                               spec.peak_rate_hz + 4 * spec.noise_sigma)
        return dataclasses.replace(s, rates=rates)

    return poison


TARGETS = dict(acc=94.6, lat=10.0, tdrop=3.3, pdrop=3.0, tlat=25.0, plat=15.0,
               rate=52.0, wc=0.5)
SCALES = dict(acc=1.0, lat=2.0, tdrop=1.0, pdrop=1.0, tlat=5.0, plat=5.0,
              rate=8.0, wc=0.1)


def assess(p, n_eval=250, n_tamper=4, seed=42):
    try:
        sim, spec, wl, state, task, readout = build(p, seed)
    except Exception as exc:
        print(f"{p}: FAILED {exc}")
        return None
    acc0, lat0, tmo = eval_acc(sim, spec, wl, task, state, readout, n=n_eval)
    drops, dlats = [], []
    for k in range(n_tamper):
        st2 = tamper(state, readout, spec.n_channels, victim=k % 5, rival=(k + 2) % 5,
                     tseed=100 + k, adv_frac=p.get("adv", 0.4),
                     beta_lo=p.get("blo", -1.0), beta_hi=p.get("bhi", 1.0))
        a, l, _ = eval_acc(sim, spec, wl, task, st2, readout, n=n_eval)
        drops.append(acc0 - a)
        dlats.append(100 * (l - lat0) / lat0)
    a2, l2, _ = eval_acc(sim, spec, wl, task, state, readout, n=n_eval,
                         poison=mk_poison(55, spec, task))
    snap = state.copy()
    gen = rngmod.substream(3, 1)
    s = draw_sample(spec, 0, gen, task.prototypes)
    sched = encode_poisson(s, 1000.0, sim.dt, 11, input_charge=wl.input_charge)
    res = run_window(snap, sched, 1000.0, sim, learning=True,
                     steady_current=_steady_drive(sim.n_neurons, wl, None,
                                                  readout.group_neurons))
    got = dict(acc=acc0, lat=lat0, tdrop=float(np.mean(drops)), pdrop=acc0 - a2,
               tlat=float(np.mean(dlats)), plat=100 * (l2 - lat0) / lat0,
               rate=len(res.record) / 1000.0,
               wc=100.0 * res.sum_abs_dw / (sim.n_neurons * (sim.n_neurons - 1)))
    score = sum(abs(got[k] - TARGETS[k]) / SCALES[k] for k in TARGETS)
    print(f"{p}\n  -> acc {got['acc']:.1f} lat {got['lat']:.1f} (tmo {tmo}) | "
          f"tamper {got['tdrop']:+.1f}pp (sd {np.std(drops):.1f}) lat {got['tlat']:+.1f}% | "
          f"poison {got['pdrop']:+.1f}pp lat {got['plat']:+.1f}% | "
          f"rate {got['rate']:.1f} wc {got['wc']:.2f} | score {score:.1f}")
    sys.stdout.flush()
    return got


BASE = dict(thr=60.0, bg=1.7, charge=65.0, teacher=22.0, peak=700.0, base=60.0,
            sigma=30.0, ap=7.5e-5, am=6.9e-5, tpc=4, m=2)

if __name__ == "__main__":
    candidates = [
        dict(BASE),
        dict(BASE, m=4, peak=1000, charge=80, bg=1.55),
        dict(BASE, m=6, peak=1000, charge=80, bg=1.55),
        dict(BASE, m=6, peak=1000, charge=80, bg=1.55, tpc=5),
        dict(BASE, blo=-1.0, bhi=0.2),
        dict(BASE, m=3, blo=-1.0, bhi=0.2, bg=1.75),
    ]
    for p in candidates:
        assess(p)
