"""Event-driven leaky integrate-and-fire network with trace-based STDP.

The simulated chip is a dense all-to-all network (no self-connections)
with weights confined to [w_min, w_max]. Synaptic input arrives with a
one-step delay; plasticity uses pair-based exponential traces with
additive updates and hard clamping. Everything is driven by explicit
seeds: the same (seed, config, stimulus) triple reproduces every output
bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from ._kernels import (
    TWO64,
    channel_spike_matrix,
    integrate_step_kernel,
    run_window_kernel,
    stdp_step_kernel,
)
from .config import SimConfig, validate_sim
from .errors import StructuralError

_NO_TAMPER_I = np.empty(0, dtype=np.int32)
_NO_TAMPER_D = np.empty(0, dtype=np.float64)


def probability_thresholds(probs: np.ndarray) -> np.ndarray:
    """Map per-step spike probabilities to uint64 comparison thresholds."""
    scaled = np.asarray(probs, dtype=np.float64) * TWO64
    out = np.empty(len(scaled), dtype=np.uint64)
    for k, val in enumerate(scaled):
        out[k] = np.iinfo(np.uint64).max if val >= TWO64 else np.uint64(val)
    return out


@dataclass
class SpikeSchedule:
    """Channel spike trains as a counter-seeded Bernoulli thinning.

    ``probs`` holds per-step spike probabilities, one row per stimulus
    episode (a window is one or more equal-length episodes). The spike
    raster is a pure function of (seed, channel, step), so a window can be
    truncated at any step without perturbing earlier draws.
    """

    channel_neurons: np.ndarray  # int32 target neuron per channel
    probs: np.ndarray  # float64 (n_episodes, n_channels) or (n_channels,)
    seed: int  # 64-bit counter seed
    duration_ms: float
    dt: float
    input_charge: float = 1.0  # membrane charge delivered per channel spike

    def probs_2d(self) -> np.ndarray:
        p = np.asarray(self.probs, dtype=np.float64)
        return p.reshape(1, -1) if p.ndim == 1 else p

    @property
    def n_episodes(self) -> int:
        return self.probs_2d().shape[0]

    def thresholds(self) -> np.ndarray:
        p = self.probs_2d()
        flat = probability_thresholds(p.reshape(-1))
        return flat.reshape(p.shape)

    def n_steps(self) -> int:
        return int(round(self.duration_ms / self.dt))

    def episode_steps(self) -> int:
        return self.n_steps() // self.n_episodes

    def materialize(self) -> np.ndarray:
        """Full (n_channels, n_steps) boolean raster, for tests/inspection."""
        return channel_spike_matrix(np.uint64(self.seed), self.thresholds(),
                                    self.n_steps(), self.episode_steps())


def empty_schedule(dt: float, duration_ms: float) -> SpikeSchedule:
    return SpikeSchedule(
        channel_neurons=np.empty(0, dtype=np.int32),
        probs=np.empty((1, 0), dtype=np.float64),
        seed=0,
        duration_ms=duration_ms,
        dt=dt,
    )


@dataclass
class SpikeRecord:
    """Ordered spike events of one window."""

    times: np.ndarray  # float64 ms, sorted
    neuron_ids: np.ndarray  # int32
    window_start: float
    window_end: float

    def __len__(self) -> int:
        return len(self.times)


class NetworkState:
    """Mutable simulation state; confine each instance to one context."""

    __slots__ = ("v", "refractory_until", "weights", "trace_pre", "trace_post",
                 "t_now", "pending", "n_pending")

    def __init__(self, v, refractory_until, weights, trace_pre, trace_post,
                 t_now=0.0, pending=None, n_pending=0):
        self.v = v
        self.refractory_until = refractory_until
        self.weights = weights
        self.trace_pre = trace_pre
        self.trace_post = trace_post
        self.t_now = t_now
        self.pending = pending if pending is not None else np.empty(len(v), dtype=np.int32)
        self.n_pending = n_pending

    @property
    def n_neurons(self) -> int:
        return len(self.v)

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.v.copy(), self.refractory_until.copy(), self.weights.copy(),
            self.trace_pre.copy(), self.trace_post.copy(),
            self.t_now, self.pending.copy(), self.n_pending,
        )

    def copy_transients(self, shared_weights: np.ndarray | None = None) -> "NetworkState":
        """Copy everything but the weight matrix, which is shared (read-only
        use only, e.g. classification with learning off)."""
        w = self.weights if shared_weights is None else shared_weights
        return NetworkState(
            self.v.copy(), self.refractory_until.copy(), w,
            self.trace_pre.copy(), self.trace_post.copy(),
            self.t_now, self.pending.copy(), self.n_pending,
        )


def init_network(config: SimConfig) -> NetworkState:
    """Fresh network: uniform random weights, all potentials at rest."""
    validate_sim(config)
    n = config.n_neurons
    gen = rngmod.substream(config.seed, rngmod.INIT)
    weights = gen.uniform(config.w_min, config.w_max, size=(n, n))
    np.fill_diagonal(weights, 0.0)
    return NetworkState(
        v=np.full(n, config.v_rest, dtype=np.float64),
        refractory_until=np.full(n, -np.inf, dtype=np.float64),
        weights=weights,
        trace_pre=np.zeros(n, dtype=np.float64),
        trace_post=np.zeros(n, dtype=np.float64),
    )


def _check_dims(state: NetworkState, config: SimConfig) -> None:
    n = config.n_neurons
    if state.weights.shape != (n, n) or len(state.v) != n:
        raise StructuralError(
            f"state arrays do not match config.n_neurons={n}: "
            f"weights {state.weights.shape}, v {len(state.v)}"
        )


def step(state: NetworkState, external_current: np.ndarray, config: SimConfig):
    """Advance one time step; returns (state, spiked neuron ids).

    ``external_current`` is a per-neuron drive in potential units per ms;
    synaptic input comes from the spikes of the previous step.
    """
    _check_dims(state, config)
    ext = np.asarray(external_current, dtype=np.float64)
    if ext.shape != (config.n_neurons,):
        raise StructuralError(
            f"external_current shape {ext.shape} != ({config.n_neurons},)"
        )
    cur = np.empty(config.n_neurons, dtype=np.int32)
    n_cur = integrate_step_kernel(
        state.v, state.refractory_until, state.weights,
        state.pending, state.n_pending, ext, state.t_now,
        config.dt, config.tau_m, config.v_rest, config.v_reset,
        config.v_thresh, config.refractory, cur,
    )
    spikes = cur[:n_cur].copy()
    state.pending[:n_cur] = spikes
    state.n_pending = n_cur
    state.t_now += config.dt
    return state, spikes


def stdp_apply(state: NetworkState, spikes_this_step: np.ndarray, config: SimConfig):
    """Apply one step of trace STDP for the given spikes; returns (state, sum|dw|)."""
    s = config.stdp
    spikes = np.asarray(spikes_this_step, dtype=np.int32)
    sum_abs = stdp_step_kernel(
        state.weights, state.trace_pre, state.trace_post, spikes, len(spikes),
        s.a_plus, s.a_minus,
        float(np.exp(-config.dt / s.tau_plus)), float(np.exp(-config.dt / s.tau_minus)),
        config.w_min, config.w_max,
    )
    return state, sum_abs


@dataclass
class TamperEvent:
    """A scheduled in-window batch of direct weight writes."""

    at_ms: float  # offset from window start
    pre: np.ndarray  # int32 source neurons
    post: np.ndarray  # int32 target neurons
    delta: np.ndarray  # float64 requested weight changes
    old: np.ndarray | None = None  # filled at execution
    new: np.ndarray | None = None


@dataclass
class WindowResult:
    state: NetworkState
    record: SpikeRecord
    sum_abs_dw: float
    counts: np.ndarray  # per-neuron spike counts
    ep_group: np.ndarray  # winning readout group per episode
    ep_latency_ms: np.ndarray  # decision latency per episode
    ep_timed_out: np.ndarray  # per-episode timeout flags
    n_steps: int

    @property
    def decided_group(self) -> int:
        return int(self.ep_group[0]) if len(self.ep_group) else -1

    @property
    def latency_ms(self) -> float:
        return float(self.ep_latency_ms.mean()) if len(self.ep_latency_ms) else 0.0

    @property
    def timed_out(self) -> bool:
        return bool(self.ep_timed_out[0]) if len(self.ep_timed_out) else False


def run_window(
    state: NetworkState,
    stimulus: SpikeSchedule,
    duration_ms: float,
    config: SimConfig,
    learning: bool = True,
    *,
    steady_current: np.ndarray | None = None,
    tamper: TamperEvent | None = None,
    group_of: np.ndarray | None = None,
    n_groups: int = 0,
    margin: int = 1,
    stop_on_decision: bool = False,
    race_deadline_ms: float | None = None,
) -> WindowResult:
    """Simulate ``duration_ms`` of activity on ``state`` (mutated in place).

    Composes the same integrate and STDP steps as :func:`step` and
    :func:`stdp_apply` in a single compiled loop, tracking the spike
    record, the summed |dw| accumulator, and the readout race.
    """
    _check_dims(state, config)
    n = config.n_neurons
    n_steps = int(round(duration_ms / config.dt))
    if n_steps <= 0 or abs(n_steps * config.dt - duration_ms) > 1e-6:
        raise StructuralError(
            f"duration_ms={duration_ms} is not a positive multiple of dt={config.dt}"
        )
    if len(stimulus.channel_neurons) and int(stimulus.channel_neurons.max()) >= n:
        raise StructuralError(
            f"stimulus targets neuron {int(stimulus.channel_neurons.max())} "
            f"but the network has {n} neurons"
        )

    if steady_current is None:
        ext_charge = np.zeros(n, dtype=np.float64)
    else:
        ext_charge = np.asarray(steady_current, dtype=np.float64) * config.dt
        if ext_charge.shape != (n,):
            raise StructuralError(f"steady_current shape {ext_charge.shape} != ({n},)")

    if tamper is None:
        tamper_step = -1
        t_pre = t_post = _NO_TAMPER_I
        t_delta = t_old = t_new = _NO_TAMPER_D
    else:
        tamper_step = int(round(tamper.at_ms / config.dt))
        if not (0 <= tamper_step < n_steps):
            raise StructuralError(f"tamper.at_ms={tamper.at_ms} outside the window")
        t_pre = tamper.pre
        t_post = tamper.post
        t_delta = tamper.delta
        t_old = np.empty(len(t_pre), dtype=np.float64)
        t_new = np.empty(len(t_pre), dtype=np.float64)

    if group_of is None:
        group_of = np.full(n, -1, dtype=np.int32)

    n_ep = stimulus.n_episodes if len(stimulus.channel_neurons) else 1
    if n_steps % n_ep != 0:
        raise StructuralError(
            f"{n_ep} episodes do not divide the window of {n_steps} steps")
    ep_steps = n_steps // n_ep

    # Exact event capacity: refractoriness bounds each neuron's spike count.
    per_neuron = n_steps if config.refractory <= 0 else min(
        n_steps, int(duration_ms / (config.refractory + config.dt)) + 2
    )
    cap = n * per_neuron
    ev_time = np.empty(cap, dtype=np.float64)
    ev_id = np.empty(cap, dtype=np.int32)
    counts = np.zeros(n, dtype=np.int64)
    ep_group = np.full(n_ep, -1, dtype=np.int64)
    ep_dec_step = np.full(n_ep, -1, dtype=np.int64)
    ep_timed_out = np.zeros(n_ep, dtype=np.bool_)

    thresholds = stimulus.thresholds() if len(stimulus.channel_neurons) else (
        np.zeros((1, 0), dtype=np.uint64))

    stdp = config.stdp
    t0 = state.t_now
    n_ev, sum_abs, overflow, n_pending = run_window_kernel(
        state.v, state.refractory_until, state.weights,
        state.trace_pre, state.trace_post, state.pending, state.n_pending,
        t0, n_steps, ep_steps,
        config.dt, config.tau_m, config.v_rest, config.v_reset,
        config.v_thresh, config.refractory,
        learning, stdp.a_plus, stdp.a_minus,
        float(np.exp(-config.dt / stdp.tau_plus)),
        float(np.exp(-config.dt / stdp.tau_minus)),
        config.w_min, config.w_max,
        stimulus.channel_neurons, thresholds,
        float(stimulus.input_charge), np.uint64(stimulus.seed),
        ext_charge,
        tamper_step, t_pre, t_post, t_delta, t_old, t_new,
        group_of, n_groups, margin, stop_on_decision,
        ev_time, ev_id, counts,
        ep_group, ep_dec_step, ep_timed_out,
    )
    if overflow:
        raise StructuralError("spike record capacity exceeded; refractory bound violated")

    state.n_pending = n_pending
    executed = n_steps
    if stop_on_decision and n_ep == 1 and ep_dec_step[0] >= 0:
        executed = int(ep_dec_step[0]) + 1
    state.t_now = t0 + executed * config.dt
    if tamper is not None:
        tamper.old = t_old
        tamper.new = t_new

    # Each episode's race has a decision deadline: a race that resolves at
    # or after it counts as a timeout at the deadline latency, with the
    # count argmax as the fallback prediction (a race resolving exactly on
    # the final step is indistinguishable from a timeout and folds in).
    deadline_steps = ep_steps if race_deadline_ms is None else min(
        ep_steps, int(round(race_deadline_ms / config.dt)))
    ep_latency = np.empty(n_ep, dtype=np.float64)
    for e in range(n_ep):
        if 0 <= ep_dec_step[e] < deadline_steps - 1:
            ep_latency[e] = (ep_dec_step[e] + 1) * config.dt
        else:
            ep_latency[e] = deadline_steps * config.dt
            ep_timed_out[e] = True

    record = SpikeRecord(
        times=ev_time[:n_ev].copy(),
        neuron_ids=ev_id[:n_ev].copy(),
        window_start=t0,
        window_end=t0 + n_steps * config.dt,
    )
    return WindowResult(
        state=state,
        record=record,
        sum_abs_dw=float(sum_abs),
        counts=counts,
        ep_group=ep_group if n_groups else ep_group[:0],
        ep_latency_ms=ep_latency if n_groups else ep_latency[:0],
        ep_timed_out=ep_timed_out if n_groups else ep_timed_out[:0],
        n_steps=executed,
    )
