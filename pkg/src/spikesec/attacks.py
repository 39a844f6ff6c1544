"""The two covert attacks: synaptic weight tampering and input poisoning.

Both are seeded, fully logged, and leave everything they did not touch
bit-identical. Tampering perturbs a random tenth of the synapses by a
fixed magnitude; in adversarial mode the signs are chosen to weaken the
victim class's readout pathway, strengthen a rival's, and drift the rest
of the campaign in a random common direction. Poisoning replaces a twentieth
of the input channels with a rival class's prototype rates, staying inside
the legitimate rate envelope.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .config import AttackSpec, INPUT_POISON, SIGN_ADVERSARIAL, SIGN_RANDOM, WEIGHT_TAMPER
from .errors import ConfigError, UsageError
from .network import NetworkState, TamperEvent
from .workload import ReadoutMap, Sample, TaskSet

__all__ = [
    "TamperLog", "PoisonLog", "TamperPlan", "plan_tamper", "tamper_weights",
    "poison_sample", "poison_inputs", "check_stealth", "attack_success",
]


@dataclass
class TamperPlan:
    """The exact writes one tamper campaign will attempt."""

    pre: np.ndarray  # int32 source neurons
    post: np.ndarray  # int32 target neurons
    delta: np.ndarray  # float64 requested weight change (+-magnitude)
    victim: int  # readout class being weakened (-1 in random mode)
    rival: int  # readout class being strengthened (-1 in random mode)
    sign_drift: float  # campaign-level sign imbalance in [-1, 1]


@dataclass
class TamperLog:
    """Every write of one tamper campaign: synapse, old/new weight, time."""

    pre: np.ndarray
    post: np.ndarray
    old: np.ndarray
    new: np.ndarray
    t_ms: float
    victim: int
    rival: int

    def __len__(self) -> int:
        return len(self.pre)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["pre", "post", "old_weight", "new_weight", "t_ms"])
            for k in range(len(self.pre)):
                w.writerow([self.pre[k], self.post[k],
                            f"{self.old[k]:.6g}", f"{self.new[k]:.6g}", f"{self.t_ms:.6g}"])


@dataclass
class PoisonLog:
    """Per-window channel substitutions: (window, channel, old, new rate)."""

    window_ids: list
    channels: list
    old_rates: list
    new_rates: list

    def __len__(self) -> int:
        return len(self.window_ids)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["window_id", "channel", "old_rate", "new_rate"])
            for k in range(len(self.window_ids)):
                w.writerow([self.window_ids[k], self.channels[k],
                            f"{self.old_rates[k]:.6g}", f"{self.new_rates[k]:.6g}"])


def _flat_to_pair(flat: np.ndarray, n: int):
    """Invert the diagonal-free flattening: flat = i*(n-1) + (j - (j > i))."""
    i = flat // (n - 1)
    r = flat % (n - 1)
    j = np.where(r < i, r, r + 1)
    return i.astype(np.int32), j.astype(np.int32)


def plan_tamper(spec: AttackSpec, n_neurons: int, readout: ReadoutMap | None,
                n_channels: int, rng: np.random.Generator | None = None) -> TamperPlan:
    """Draw the synapse selection and signs for one tamper campaign.

    Selection is a uniform seeded draw over the off-diagonal synapses. In
    adversarial mode a fraction of the selected input-to-readout synapses
    get victim-weakening / rival-strengthening signs and the remainder
    share a campaign-level sign drift; in random mode all signs are fair
    i.i.d. coin flips.
    """
    if spec.kind != WEIGHT_TAMPER:
        raise ConfigError(f"plan_tamper needs kind=weight_tamper, got {spec.kind!r}")
    if rng is None:
        rng = rngmod.substream(spec.seed, rngmod.ATTACK)
    n_eligible = n_neurons * (n_neurons - 1)
    count = int(spec.fraction * n_eligible)
    if count > n_eligible:
        raise ConfigError(f"attack.fraction={spec.fraction} exceeds eligible synapses")
    flat = rng.choice(n_eligible, size=count, replace=False)
    pre, post = _flat_to_pair(flat, n_neurons)

    if spec.sign_mode == SIGN_RANDOM or readout is None:
        sign = np.where(rng.random(count) < 0.5, 1.0, -1.0)
        victim = rival = -1
        drift = 0.0
    else:
        classes = len(readout.group_neurons)
        victim = int(rng.integers(classes))
        rival = int((victim + 1 + rng.integers(classes - 1)) % classes)
        drift = float(rng.uniform(-spec.sign_drift_max, spec.sign_drift_max))
        sign = np.where(rng.random(count) < (1.0 + drift) / 2.0, 1.0, -1.0)
        adversarial = rng.random(count) < spec.adv_fraction
        from_input = pre < n_channels
        vic_set = np.isin(post, readout.group_neurons[victim])
        riv_set = np.isin(post, readout.group_neurons[rival])
        sign[adversarial & from_input & vic_set] = -1.0
        sign[adversarial & from_input & riv_set] = +1.0
    return TamperPlan(pre=pre, post=post, delta=spec.magnitude * sign,
                      victim=victim, rival=rival, sign_drift=drift)


def plan_to_event(plan: TamperPlan, at_ms: float) -> TamperEvent:
    return TamperEvent(at_ms=at_ms, pre=plan.pre, post=plan.post, delta=plan.delta)


def event_to_log(event: TamperEvent, plan: TamperPlan, window_start_ms: float) -> TamperLog:
    """Assemble the log after a scheduled tamper event has executed."""
    if event.old is None or event.new is None:
        raise UsageError("tamper event has not executed yet")
    return TamperLog(pre=plan.pre, post=plan.post, old=event.old, new=event.new,
                     t_ms=window_start_ms + event.at_ms,
                     victim=plan.victim, rival=plan.rival)


def tamper_weights(state: NetworkState, spec: AttackSpec,
                   readout: ReadoutMap | None = None,
                   n_channels: int = 0) -> tuple[NetworkState, TamperLog]:
    """Apply one tamper campaign to ``state`` right now (mutates weights)."""
    plan = plan_tamper(spec, state.n_neurons, readout, n_channels)
    w = state.weights
    old = w[plan.pre, plan.post].copy()
    new = np.clip(old + plan.delta, 0.0, 1.0)
    w[plan.pre, plan.post] = new
    log = TamperLog(pre=plan.pre, post=plan.post, old=old, new=new,
                    t_ms=state.t_now, victim=plan.victim, rival=plan.rival)
    return state, log


def poison_sample(sample: Sample, window_id: int, spec: AttackSpec,
                  task: TaskSet) -> tuple[Sample, list]:
    """Poison one window's input rates; returns the sample and log entries.

    A seeded choice of ``fraction * n_channels`` channels is replaced with
    the corresponding rates of a different class's prototype plus jitter,
    clipped into the legitimate envelope [base, peak + 4*sigma].
    """
    tspec = task.spec
    if tspec.n_classes < 2:
        raise ConfigError("input poisoning needs at least 2 classes")
    k = int(spec.fraction * tspec.n_channels)
    if k == 0:
        return sample, []
    rng = rngmod.substream(spec.seed, rngmod.ATTACK, window_id)
    channels = rng.choice(tspec.n_channels, size=k, replace=False)
    rival = int((sample.label + 1 + rng.integers(tspec.n_classes - 1)) % tspec.n_classes)
    rates = sample.rates.copy()
    values = task.prototypes[rival][channels] + rng.normal(0.0, tspec.noise_sigma, k)
    values = np.clip(values, tspec.base_rate_hz,
                     tspec.peak_rate_hz + 4.0 * tspec.noise_sigma)
    entries = [(window_id, int(c), float(rates[c]), float(v))
               for c, v in zip(channels, values)]
    rates[channels] = values
    return replace(sample, rates=rates), entries


def poison_stream_rates(rate_rows: np.ndarray, window_id: int, spec: AttackSpec,
                        task: TaskSet):
    """Poison one stream window: a seeded channel subset carries a steady
    injected signal (a rival prototype's rates plus jitter, inside the
    legitimate envelope) across all of the window's episodes."""
    tspec = task.spec
    if tspec.n_classes < 2:
        raise ConfigError("input poisoning needs at least 2 classes")
    k = int(spec.fraction * tspec.n_channels)
    rows = np.array(rate_rows, dtype=np.float64, copy=True)
    if k == 0:
        return rows, []
    rng = rngmod.substream(spec.seed, rngmod.ATTACK, window_id)
    channels = rng.choice(tspec.n_channels, size=k, replace=False)
    rival = int(rng.integers(tspec.n_classes))
    values = task.prototypes[rival][channels] + rng.normal(0.0, tspec.noise_sigma, k)
    values = np.clip(values, tspec.base_rate_hz,
                     tspec.peak_rate_hz + 4.0 * tspec.noise_sigma)
    entries = [(window_id, int(c), float(rows[0, c]), float(v))
               for c, v in zip(channels, values)]
    rows[:, channels] = values
    return rows, entries


def poison_inputs(samples, spec: AttackSpec, task: TaskSet):
    """Poison a stream of samples (window id = position in the stream)."""
    if spec.kind != INPUT_POISON:
        raise ConfigError(f"poison_inputs needs kind=input_poison, got {spec.kind!r}")
    log = PoisonLog([], [], [], [])
    out = []
    for window_id, sample in enumerate(samples):
        poisoned, entries = poison_sample(sample, window_id, spec, task)
        out.append(poisoned)
        for wid, ch, old, new in entries:
            log.window_ids.append(wid)
            log.channels.append(ch)
            log.old_rates.append(old)
            log.new_rates.append(new)
    return out, log


def check_stealth(accuracy_clean: float, accuracy_attacked: float,
                  spec: AttackSpec) -> bool:
    """Covert iff the accuracy loss stays strictly under the stealth budget."""
    for name, v in (("accuracy_clean", accuracy_clean),
                    ("accuracy_attacked", accuracy_attacked)):
        if not 0.0 <= v <= 100.0:
            raise UsageError(f"{name}={v} outside [0, 100]")
    return (accuracy_clean - accuracy_attacked) < spec.stealth_budget_pp


def attack_success(records_clean, records_attacked, spec: AttackSpec) -> bool:
    """An attack succeeds iff it measurably degrades accuracy while covert.

    Both record lists come from :func:`spikesec.workload.accuracy` over the
    same test set; success needs a drop of at least
    ``spec.success_threshold_pp`` that still passes :func:`check_stealth`.
    """
    if len(records_clean) != len(records_attacked) or not records_clean:
        raise UsageError("clean/attacked records must cover the same non-empty test set")
    for (la, *_), (lb, *_) in zip(records_clean, records_attacked):
        if la != lb:
            raise UsageError("clean/attacked records disagree on sample labels")
    acc_clean = 100.0 * sum(l == p for l, p, *_ in records_clean) / len(records_clean)
    acc_att = 100.0 * sum(l == p for l, p, *_ in records_attacked) / len(records_attacked)
    drop = acc_clean - acc_att
    return drop >= spec.success_threshold_pp and check_stealth(acc_clean, acc_att, spec)
