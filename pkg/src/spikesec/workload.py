"""Synthetic sensor-classification workload.

The task is a rate-coded pattern classification: each class owns a
disjoint block of input channels driven at a peak rate while the rest sit
at a base rate, with Gaussian jitter on every channel. Readout is a
population spike-count race between one output group per class; training
is STDP with a teacher current injected into the labelled group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .config import SimConfig, TaskSpec, WorkloadConfig, validate_task, validate_workload
from .errors import ConfigError, TrainingFailure, UsageError
from .network import NetworkState, SpikeSchedule, run_window

__all__ = [
    "Sample", "TaskSet", "ReadoutMap", "gen_task", "draw_sample",
    "encode_poisson", "build_groups", "train", "classify", "accuracy",
    "export_samples_csv",
]


@dataclass(frozen=True)
class Sample:
    rates: np.ndarray  # per-channel Hz, >= 0
    label: int


@dataclass(frozen=True)
class TaskSet:
    spec: TaskSpec
    prototypes: np.ndarray  # (n_classes, n_channels) Hz
    train: tuple[Sample, ...]
    test: tuple[Sample, ...]


def class_prototypes(spec: TaskSpec) -> np.ndarray:
    """Disjoint peak blocks of n_channels // n_classes channels per class."""
    block = spec.n_channels // spec.n_classes
    protos = np.full((spec.n_classes, spec.n_channels), spec.base_rate_hz, dtype=np.float64)
    for c in range(spec.n_classes):
        protos[c, c * block:(c + 1) * block] = spec.peak_rate_hz
    return protos


def draw_sample(spec: TaskSpec, label: int, gen: np.random.Generator,
                prototypes: np.ndarray | None = None) -> Sample:
    protos = class_prototypes(spec) if prototypes is None else prototypes
    rates = protos[label] + gen.normal(0.0, spec.noise_sigma, spec.n_channels)
    np.clip(rates, 0.0, None, out=rates)
    return Sample(rates=rates, label=label)


def gen_task(spec: TaskSpec, split: float = 0.7) -> TaskSet:
    """Generate the labelled train/test sample sets for a task spec."""
    validate_task(spec)
    if not 0 < split < 1:
        raise ConfigError(f"task split must be in (0, 1), got {split}")
    protos = class_prototypes(spec)
    gen = rngmod.substream(spec.seed, rngmod.TASK)
    train: list[Sample] = []
    test: list[Sample] = []
    n_train = max(1, int(round(split * spec.samples_per_class)))
    if n_train >= spec.samples_per_class:
        n_train = spec.samples_per_class - 1 if spec.samples_per_class > 1 else 1
    for c in range(spec.n_classes):
        for k in range(spec.samples_per_class):
            s = draw_sample(spec, c, gen, protos)
            (train if k < n_train else test).append(s)
    return TaskSet(spec=spec, prototypes=protos, train=tuple(train), test=tuple(test))


def export_samples_csv(samples, path: str) -> None:
    """Write samples as one row per sample: channel rates then the label."""
    if not samples:
        raise UsageError("no samples to export")
    nc = len(samples[0].rates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"channel_{i}" for i in range(nc)] + ["label"])
        for s in samples:
            writer.writerow([f"{r:.6g}" for r in s.rates] + [s.label])


def rates_to_probs(rates: np.ndarray, dt: float) -> np.ndarray:
    probs = np.asarray(rates, dtype=np.float64) * dt / 1000.0
    if probs.size and probs.max() > 1.0:
        raise ConfigError(
            f"dt={dt} too coarse: a rate of {1000.0 * probs.max() / dt:.6g} Hz "
            "gives a per-step spike probability above 1"
        )
    return probs


def encode_poisson(sample: Sample, duration_ms: float, dt: float, seed: int,
                   input_charge: float = 1.0,
                   channel_neurons: np.ndarray | None = None) -> SpikeSchedule:
    """Rate-code a sample: per step, channel c spikes with p = rate*dt/1000."""
    if duration_ms <= 0:
        raise ConfigError(f"duration_ms must be > 0, got {duration_ms}")
    probs = rates_to_probs(sample.rates, dt)
    if channel_neurons is None:
        channel_neurons = np.arange(len(probs), dtype=np.int32)
    return SpikeSchedule(
        channel_neurons=np.asarray(channel_neurons, dtype=np.int32),
        probs=probs, seed=int(seed) & 0xFFFFFFFFFFFFFFFF,
        duration_ms=duration_ms, dt=dt, input_charge=input_charge,
    )


def encode_stream(rate_rows: np.ndarray, episode_ms: float, dt: float, seed: int,
                  input_charge: float = 1.0) -> SpikeSchedule:
    """Rate-code a sequence of stimulus episodes (one rate row each)."""
    rows = np.atleast_2d(np.asarray(rate_rows, dtype=np.float64))
    if episode_ms <= 0:
        raise ConfigError(f"episode_ms must be > 0, got {episode_ms}")
    probs = rates_to_probs(rows, dt)
    return SpikeSchedule(
        channel_neurons=np.arange(rows.shape[1], dtype=np.int32),
        probs=probs, seed=int(seed) & 0xFFFFFFFFFFFFFFFF,
        duration_ms=episode_ms * rows.shape[0], dt=dt, input_charge=input_charge,
    )


def stream_labels(n_episodes: int, n_classes: int, gen: np.random.Generator):
    """Balanced shuffled class sequence for a free-running stream window."""
    reps = int(np.ceil(n_episodes / n_classes))
    labels = np.tile(np.arange(n_classes), reps)[:n_episodes]
    gen.shuffle(labels)
    return labels


@dataclass(frozen=True)
class ReadoutMap:
    """Output-group partition plus the group -> class assignment."""

    group_neurons: np.ndarray  # (n_groups, group_size) int32
    assignment: np.ndarray  # (n_groups,) class per group
    decision_margin: int
    group_of: np.ndarray  # (n_neurons,) int32, -1 for non-readout neurons

    @property
    def n_groups(self) -> int:
        return len(self.group_neurons)

    def validate(self, n_classes: int) -> None:
        if self.decision_margin < 1:
            raise ConfigError(f"decision_margin must be >= 1, got {self.decision_margin}")
        missing = set(range(n_classes)) - set(int(a) for a in self.assignment)
        if missing:
            raise TrainingFailure(f"classes with no readout group: {sorted(missing)}")


def build_groups(n_neurons: int, n_classes: int, group_size: int,
                 n_channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Partition the last n_classes*group_size neurons into readout groups."""
    total = n_classes * group_size
    if n_channels + total > n_neurons:
        raise ConfigError(
            f"network too small: {n_channels} input + {total} readout neurons "
            f"exceed n_neurons={n_neurons}"
        )
    start = n_neurons - total
    groups = np.arange(start, n_neurons, dtype=np.int32).reshape(n_classes, group_size)
    group_of = np.full(n_neurons, -1, dtype=np.int32)
    for g in range(n_classes):
        group_of[groups[g]] = g
    return groups, group_of


def _steady_drive(n: int, wl: WorkloadConfig, teacher_neurons=None,
                  readout_neurons=None) -> np.ndarray:
    drive = np.full(n, wl.bg_current, dtype=np.float64)
    if readout_neurons is not None and wl.readout_bias:
        drive[readout_neurons] += wl.readout_bias
    if teacher_neurons is not None:
        drive[teacher_neurons] += wl.teacher_current
    return drive


def reset_transients(state: NetworkState, sim: SimConfig) -> None:
    """Return membrane/trace/refractory state to rest, keeping the weights."""
    state.v[:] = sim.v_rest
    state.refractory_until[:] = -np.inf
    state.trace_pre[:] = 0.0
    state.trace_post[:] = 0.0
    state.n_pending = 0


def settle_state(state: NetworkState, spec: TaskSpec, sim: SimConfig,
                 wl: WorkloadConfig, seed: int,
                 readout_neurons=None) -> NetworkState:
    """Wash stimulus residue out of the transient state.

    Resets membranes/traces and re-ignites the network on a class-neutral
    all-base stimulus (learning off), so whatever was presented last
    cannot bias the next classification. Weights are untouched.
    """
    reset_transients(state, sim)
    if wl.settle_ms > 0:
        blank = Sample(rates=np.full(spec.n_channels, spec.base_rate_hz), label=0)
        sched = encode_poisson(blank, wl.settle_ms, sim.dt, seed,
                               input_charge=wl.input_charge)
        run_window(state, sched, wl.settle_ms, sim, learning=False,
                   steady_current=_steady_drive(len(state.v), wl, None,
                                                readout_neurons))
    return state


def _assign_by_response(responses: np.ndarray) -> np.ndarray:
    """Each group claims the class that drives it hardest."""
    return np.argmax(responses, axis=1).astype(np.int64)


def train(state: NetworkState, task: TaskSet, sim: SimConfig, wl: WorkloadConfig,
          seed: int) -> tuple[NetworkState, ReadoutMap]:
    """Imprint the task with teacher-forced STDP, then map groups to classes.

    Presents every training sample for one window with learning on and a
    teacher current driving the labelled group, then probes each class
    with jitter-free prototypes (learning off) and assigns each group to
    the class maximizing its mean spike response.
    """
    validate_workload(wl)
    spec = task.spec
    groups, group_of = build_groups(sim.n_neurons, spec.n_classes, wl.group_size,
                                    spec.n_channels)
    # Round-robin class order so no class dominates late plasticity.
    by_class: list[list[Sample]] = [[] for _ in range(spec.n_classes)]
    for s in task.train:
        by_class[s.label].append(s)
    order: list[Sample] = []
    for k in range(max(len(b) for b in by_class)):
        for c in range(spec.n_classes):
            if k < len(by_class[c]):
                order.append(by_class[c][k])

    presentation = 0
    for _ in range(wl.train_passes):
        for sample in order:
            sched = encode_poisson(
                sample, wl.window_ms, sim.dt,
                rngmod.stream_seed(seed, rngmod.STIMULUS, presentation),
                input_charge=wl.input_charge,
            )
            drive = _steady_drive(sim.n_neurons, wl, groups[sample.label], groups)
            run_window(state, sched, wl.window_ms, sim, learning=True,
                       steady_current=drive)
            presentation += 1

    # Settle after the teacher-driven phase: the last-presented class would
    # otherwise carry its membrane/trace residue into every later window
    # and win races it should not. The settle also re-ignites the network
    # on a class-neutral stimulus so later windows start from a steady
    # operating point instead of paying the cold-start delay.
    settle_state(state, spec, sim, wl,
                 rngmod.stream_seed(seed, rngmod.STIMULUS, 2_000_000), groups)

    # Probe with jitter-free prototypes over full windows (ambient base
    # drive kept so the network stays ignited); the shared background
    # response is removed per probe so the assignment reads the
    # class-specific drive, not common-mode rate fluctuations.
    responses = np.zeros((spec.n_classes, spec.n_classes), dtype=np.float64)
    for c in range(spec.n_classes):
        proto = Sample(rates=task.prototypes[c], label=c)
        for r in range(wl.probe_repeats):
            sched = encode_poisson(
                proto, wl.window_ms, sim.dt,
                rngmod.stream_seed(seed, rngmod.STIMULUS, 1_000_000 + c * 1000 + r),
                input_charge=wl.input_charge,
            )
            probe_state = state.copy_transients()
            res = run_window(probe_state, sched, wl.window_ms, sim, learning=False,
                             steady_current=_steady_drive(sim.n_neurons, wl, None, groups))
            counts = res.counts[groups].sum(axis=1) / (wl.probe_repeats * wl.group_size)
            responses[:, c] += counts - counts.mean()

    readout = ReadoutMap(
        group_neurons=groups,
        assignment=_assign_by_response(responses),
        decision_margin=wl.decision_margin,
        group_of=group_of,
    )
    readout.validate(spec.n_classes)
    return state, readout


def classify(state: NetworkState, readout: ReadoutMap, sample: Sample,
             sim: SimConfig, wl: WorkloadConfig, seed: int,
             duration_ms: float | None = None):
    """Classify one sample with learning off.

    Returns (predicted label, latency_ms, timed_out). The caller's state
    is never mutated; the decision is the first cumulative spike-count
    lead of ``decision_margin`` between readout groups, ties at window end
    falling back to the count argmax.
    """
    duration = wl.eval_window_ms if duration_ms is None else duration_ms
    sched = encode_poisson(sample, duration, sim.dt, seed, input_charge=wl.input_charge)
    work = state.copy_transients()
    res = run_window(work, sched, duration, sim, learning=False,
                     steady_current=_steady_drive(sim.n_neurons, wl, None,
                                                  readout.group_neurons),
                     group_of=readout.group_of, n_groups=readout.n_groups,
                     margin=readout.decision_margin, stop_on_decision=True)
    pred = int(readout.assignment[res.decided_group]) if res.decided_group >= 0 else 0
    return pred, res.latency_ms, res.timed_out


def accuracy(state: NetworkState, readout: ReadoutMap, samples, sim: SimConfig,
             wl: WorkloadConfig, seed: int):
    """Percentage of correct predictions plus per-sample records.

    Records are (label, prediction, latency_ms, timed_out) tuples in
    presentation order.
    """
    if not samples:
        raise UsageError("accuracy needs a non-empty sample set")
    records = []
    correct = 0
    for idx, sample in enumerate(samples):
        pred, latency, timed_out = classify(
            state, readout, sample, sim, wl,
            rngmod.stream_seed(seed, rngmod.STIMULUS, idx),
        )
        records.append((sample.label, pred, latency, timed_out))
        correct += int(pred == sample.label)
    return 100.0 * correct / len(samples), records
