"""Numba kernels for the hot simulation loops.

All kernels are single-threaded and use fixed iteration orders, so results
are bit-identical across runs and across process counts. Input-channel
spikes are drawn from a counter-based splitmix64 generator keyed on
(window seed, step, channel), which makes stimulus generation stateless,
deterministic, and safe to truncate at early decision stops.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)
_STEP_KEY = np.uint64(0xD1342543DE82EF95)
_CHAN_KEY = np.uint64(0xA0761D6478BD642F)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)

TWO64 = 18446744073709551616.0  # 2**64 as float, for probability thresholds


@njit(cache=True, inline="always")
def _splitmix64(z):
    z = z + _SM_GAMMA
    z = (z ^ (z >> _U30)) * _SM_M1
    z = (z ^ (z >> _U27)) * _SM_M2
    return z ^ (z >> _U31)


@njit(cache=True)
def channel_spike_matrix(stim_seed, chan_thresh, n_steps, ep_steps):
    """Materialize the full (n_channels, n_steps) boolean spike raster.

    ``chan_thresh`` holds one row of per-step thresholds per episode.
    """
    n_ep = chan_thresh.shape[0]
    nc = chan_thresh.shape[1]
    out = np.zeros((nc, n_steps), dtype=np.bool_)
    for s in range(n_steps):
        e = min(s // ep_steps, n_ep - 1)
        h = _splitmix64(stim_seed ^ (np.uint64(s) * _STEP_KEY))
        for c in range(nc):
            u = _splitmix64(h ^ (np.uint64(c) * _CHAN_KEY))
            if u < chan_thresh[e, c]:
                out[c, s] = True
    return out


@njit(cache=True)
def integrate_step_kernel(
    v, refr_until, w, prev_buf, n_prev, ext_current, t,
    dt, tau_m, v_rest, v_reset, v_thresh, refractory, cur_out,
):
    """One leaky-integrate step with one-step-delayed synaptic input.

    Returns the number of spikes written to ``cur_out``.
    """
    n = v.shape[0]
    acc = np.zeros(n, dtype=np.float64)
    for k in range(n_prev):
        wi = w[prev_buf[k]]
        for j in range(n):
            acc[j] += wi[j]
    leak = dt / tau_m
    n_cur = 0
    for j in range(n):
        if t >= refr_until[j] - 1e-9:
            vj = v[j] + leak * (v_rest - v[j]) + dt * (acc[j] + ext_current[j])
            if vj >= v_thresh:
                v[j] = v_reset
                refr_until[j] = t + refractory
                cur_out[n_cur] = j
                n_cur += 1
            else:
                v[j] = vj
    return n_cur


@njit(cache=True)
def stdp_step_kernel(
    w, trace_pre, trace_post, spikes, n_spk,
    a_plus, a_minus, dec_plus, dec_minus, w_min, w_max,
):
    """One pair-based STDP step; returns the summed |dw| actually applied.

    Trace decay runs every step; this step's spikes depress their outgoing
    row by the postsynaptic trace and potentiate their incoming column by
    the presynaptic trace, with hard clamping. Traces bump last, so a
    spike never pairs with itself.
    """
    n = w.shape[0]
    sum_abs = 0.0
    for j in range(n):
        tp = trace_pre[j] * dec_plus
        trace_pre[j] = tp if tp > 1e-30 else 0.0
        tq = trace_post[j] * dec_minus
        trace_post[j] = tq if tq > 1e-30 else 0.0
    for k in range(n_spk):
        i = spikes[k]
        wi = w[i]
        for j in range(n):
            dwn = a_minus * trace_post[j]
            if dwn > 0.0 and j != i:
                old = wi[j]
                nw = old - dwn
                if nw < w_min:
                    nw = w_min
                if old > nw:
                    sum_abs += old - nw
                    wi[j] = nw
    for k in range(n_spk):
        j = spikes[k]
        for i in range(n):
            dwp = a_plus * trace_pre[i]
            if dwp > 0.0 and i != j:
                old = w[i, j]
                nw = old + dwp
                if nw > w_max:
                    nw = w_max
                if nw > old:
                    sum_abs += nw - old
                    w[i, j] = nw
    for k in range(n_spk):
        i = spikes[k]
        trace_pre[i] += 1.0
        trace_post[i] += 1.0
    return sum_abs


@njit(cache=True)
def run_window_kernel(
    v, refr_until, w, trace_pre, trace_post, prev_buf, n_prev,
    t0, n_steps, ep_steps,
    dt, tau_m, v_rest, v_reset, v_thresh, refractory,
    learn, a_plus, a_minus, dec_plus, dec_minus, w_min, w_max,
    chan_neuron, chan_thresh, input_charge, stim_seed,
    ext_charge,
    tamper_step, tamper_pre, tamper_post, tamper_delta, tamper_old, tamper_new,
    group_of, n_groups, margin, stop_on_decision,
    ev_time, ev_id, counts,
    ep_group, ep_dec_step, ep_timed_out,
):
    """Simulate one window of one or more stimulus episodes.

    Equivalent to a loop of integrate + STDP steps. ``chan_thresh`` has one
    row of channel spike thresholds per episode; each episode runs its own
    cumulative-count race between readout groups, decided when the leader
    exceeds the runner-up by ``margin`` (else timeout: the count argmax at
    the episode end, flagged in ``ep_timed_out``). Returns
    (n_events, sum_abs_dw, overflow, n_prev_out).
    """
    n = v.shape[0]
    nc = chan_neuron.shape[0]
    n_ep = chan_thresh.shape[0]
    acc = np.zeros(n, dtype=np.float64)
    cur = np.empty(n, dtype=np.int32)
    group_counts = np.zeros(max(n_groups, 1), dtype=np.int64)
    cap = ev_id.shape[0]
    leak = dt / tau_m
    inp_cur = input_charge / dt
    n_ev = 0
    sum_abs = 0.0
    overflow = False
    episode = 0
    decided = False

    for s in range(n_steps):
        t = t0 + s * dt
        e = min(s // ep_steps, n_ep - 1)
        if e != episode:
            # close the previous episode: timeout -> argmax fallback
            if n_groups > 0 and not decided:
                best = 0
                for g in range(1, n_groups):
                    if group_counts[g] > group_counts[best]:
                        best = g
                ep_group[episode] = best
                ep_dec_step[episode] = -1
                ep_timed_out[episode] = True
            episode = e
            decided = False
            for g in range(n_groups):
                group_counts[g] = 0

        if s == tamper_step:
            for k in range(tamper_pre.shape[0]):
                ti = tamper_pre[k]
                tj = tamper_post[k]
                old = w[ti, tj]
                nw = old + tamper_delta[k]
                if nw < w_min:
                    nw = w_min
                elif nw > w_max:
                    nw = w_max
                w[ti, tj] = nw
                tamper_old[k] = old
                tamper_new[k] = nw
                d = nw - old
                sum_abs += d if d >= 0.0 else -d

        for j in range(n):
            acc[j] = 0.0
        for k in range(n_prev):
            wi = w[prev_buf[k]]
            for j in range(n):
                acc[j] += wi[j]

        if nc > 0:
            h = _splitmix64(stim_seed ^ (np.uint64(s) * _STEP_KEY))
            row = chan_thresh[e]
            for c in range(nc):
                u = _splitmix64(h ^ (np.uint64(c) * _CHAN_KEY))
                if u < row[c]:
                    acc[chan_neuron[c]] += inp_cur

        n_cur = 0
        for j in range(n):
            if t >= refr_until[j] - 1e-9:
                vj = v[j] + leak * (v_rest - v[j]) + dt * acc[j] + ext_charge[j]
                if vj >= v_thresh:
                    v[j] = v_reset
                    refr_until[j] = t + refractory
                    cur[n_cur] = j
                    n_cur += 1
                    counts[j] += 1
                    if n_ev < cap:
                        ev_time[n_ev] = t
                        ev_id[n_ev] = j
                        n_ev += 1
                    else:
                        overflow = True
                    g = group_of[j]
                    if g >= 0:
                        group_counts[g] += 1
                else:
                    v[j] = vj

        if learn:
            for j in range(n):
                tp = trace_pre[j] * dec_plus
                trace_pre[j] = tp if tp > 1e-30 else 0.0
                tq = trace_post[j] * dec_minus
                trace_post[j] = tq if tq > 1e-30 else 0.0
            for k in range(n_cur):
                i = cur[k]
                wi = w[i]
                for j in range(n):
                    dwn = a_minus * trace_post[j]
                    if dwn > 0.0 and j != i:
                        old = wi[j]
                        nw = old - dwn
                        if nw < w_min:
                            nw = w_min
                        if old > nw:
                            sum_abs += old - nw
                            wi[j] = nw
            for k in range(n_cur):
                j = cur[k]
                for i in range(n):
                    dwp = a_plus * trace_pre[i]
                    if dwp > 0.0 and i != j:
                        old = w[i, j]
                        nw = old + dwp
                        if nw > w_max:
                            nw = w_max
                        if nw > old:
                            sum_abs += nw - old
                            w[i, j] = nw
            for k in range(n_cur):
                i = cur[k]
                trace_pre[i] += 1.0
                trace_post[i] += 1.0

        for k in range(n_cur):
            prev_buf[k] = cur[k]
        n_prev = n_cur

        if not decided and n_groups > 0 and n_cur > 0:
            best = 0
            for g in range(1, n_groups):
                if group_counts[g] > group_counts[best]:
                    best = g
            c2 = np.int64(-1)
            second = -1
            for g in range(n_groups):
                if g != best and group_counts[g] > c2:
                    c2 = group_counts[g]
                    second = g
            if second >= 0 and group_counts[best] - c2 >= margin:
                decided = True
                ep_group[episode] = best
                ep_dec_step[episode] = s - episode * ep_steps
                ep_timed_out[episode] = False
                if stop_on_decision and n_ep == 1:
                    return n_ev, sum_abs, overflow, n_prev

    if n_groups > 0 and not decided:
        best = 0
        for g in range(1, n_groups):
            if group_counts[g] > group_counts[best]:
                best = g
        ep_group[episode] = best
        ep_dec_step[episode] = -1
        ep_timed_out[episode] = True

    return n_ev, sum_abs, overflow, n_prev
