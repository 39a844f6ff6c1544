"""Per-window telemetry, dataset generation, and summary statistics.

Every dataset row is one 1-second window run on a fresh copy of the
trained baseline with learning on: spike frequency in Hz, summed synaptic
weight change as a percentage of the weight range, and the decision
latency of the window's classification. Attack rows carry either a
mid-window tamper write burst or poisoned input rates.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as sstats

from . import rng as rngmod
from .attacks import plan_tamper, plan_to_event, poison_stream_rates
from .config import AttackSpec, INPUT_POISON, SimConfig, WEIGHT_TAMPER, WorkloadConfig
from .errors import UndefinedStatisticError, UsageError
from .network import NetworkState, run_window
from .workload import (ReadoutMap, TaskSet, draw_sample, encode_stream,
                       stream_labels)
from .workload import _steady_drive

__all__ = [
    "WindowMetrics", "DatasetSample", "SummaryStats", "spike_frequency",
    "weight_change_pct", "collect_window", "run_telemetry_window",
    "generate_dataset", "summarize", "welch_t_test", "write_dataset_csv",
    "read_dataset_csv", "DATASET_HEADER",
]

LABEL_NORMAL = "normal"
LABEL_ATTACK = "attack"
TYPE_NONE = "none"

DATASET_HEADER = ("scenario_id,window_id,label,attack_type,"
                  "spike_frequency_hz,weight_change_pct,latency_ms,seed")


def q6(x: float) -> float:
    """Quantize to 6 significant digits (the CSV precision) at collection,
    so written and in-memory datasets are the same numbers."""
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class WindowMetrics:
    spike_frequency_hz: float
    weight_change_pct: float
    latency_ms: float

    def vector(self) -> np.ndarray:
        return np.array([self.spike_frequency_hz, self.weight_change_pct,
                         self.latency_ms])


@dataclass(frozen=True)
class DatasetSample:
    metrics: WindowMetrics
    label: str  # normal | attack
    attack_type: str  # none | weight_tamper | input_poison
    scenario_id: int
    window_id: int
    seed: int


@dataclass(frozen=True)
class SummaryStats:
    """Per-condition mean/sd of each metric plus spike-frequency variance."""

    condition: str
    n: int
    mean: WindowMetrics
    sd: WindowMetrics
    spike_variance_hz2: float


def spike_frequency(record, n_neurons: int, duration_ms: float) -> float:
    """Mean per-neuron firing rate of the window, in Hz."""
    if duration_ms <= 0:
        raise UsageError(f"duration_ms must be > 0, got {duration_ms}")
    return 1000.0 * len(record) / (n_neurons * duration_ms)


def weight_change_pct(sum_abs_dw: float, n_synapses: int,
                      w_min: float = 0.0, w_max: float = 1.0) -> float:
    """Accumulated |dw| per synapse as a percentage of the weight range."""
    if n_synapses <= 0:
        raise UsageError(f"n_synapses must be > 0, got {n_synapses}")
    return 100.0 * (sum_abs_dw / n_synapses) / (w_max - w_min)


def collect_window(record, sum_abs_dw: float, latency_ms, n_neurons: int,
                   duration_ms: float, *, label: str, attack_type: str,
                   scenario_id: int, window_id: int, seed: int) -> DatasetSample:
    """Assemble one telemetry row from a completed, classified window."""
    if latency_ms is None:
        raise UsageError("window has no classification; latency is required")
    n_syn = n_neurons * (n_neurons - 1)
    metrics = WindowMetrics(
        spike_frequency_hz=q6(spike_frequency(record, n_neurons, duration_ms)),
        weight_change_pct=q6(weight_change_pct(sum_abs_dw, n_syn)),
        latency_ms=q6(latency_ms),
    )
    return DatasetSample(metrics=metrics, label=label, attack_type=attack_type,
                         scenario_id=scenario_id, window_id=window_id, seed=seed)


def build_stream(task: TaskSet, wl: WorkloadConfig, gen) -> np.ndarray:
    """Rate rows for one free-running window: a balanced shuffled sequence
    of classification episodes (window_ms / eval_window_ms of them).

    On top of the per-sample jitter, the whole window shares one ambient
    rate offset (slow drift of the sensed environment); it is the dominant
    source of window-to-window spike-frequency variance.
    """
    n_ep = max(1, int(round(wl.window_ms / wl.eval_window_ms)))
    labels = stream_labels(n_ep, task.spec.n_classes, gen)
    rows = np.stack([draw_sample(task.spec, int(lbl), gen, task.prototypes).rates
                     for lbl in labels])
    if wl.stream_common_jitter_hz > 0:
        rows = np.clip(rows + gen.normal(0.0, wl.stream_common_jitter_hz), 0.0, None)
    return rows


def run_telemetry_window(
    baseline: NetworkState, readout: ReadoutMap, task: TaskSet,
    sim: SimConfig, wl: WorkloadConfig,
    attack_type: str, window_id: int, seed_root: int,
    tamper_spec: AttackSpec | None = None,
    poison_spec: AttackSpec | None = None,
    scenario_id: int = 0,
    tamper_at_ms: float | None = None,
) -> DatasetSample:
    """One full telemetry window on a fresh copy of the baseline.

    The window streams class-balanced stimulus episodes with learning on;
    its latency metric is the mean decision latency of the episodes.
    Tamper windows execute their write burst mid-window, poison windows
    carry injected rates on a seeded channel subset throughout.
    """
    gen = rngmod.substream(seed_root, rngmod.DATASET, window_id)
    rows = build_stream(task, wl, gen)

    if attack_type == INPUT_POISON:
        rows, _ = poison_stream_rates(rows, window_id, poison_spec, task)

    tamper = None
    if attack_type == WEIGHT_TAMPER:
        at_ms = wl.window_ms / 2 if tamper_at_ms is None else tamper_at_ms
        plan = plan_tamper(tamper_spec, sim.n_neurons, readout, task.spec.n_channels,
                           rng=rngmod.substream(tamper_spec.seed, rngmod.ATTACK, window_id))
        tamper = plan_to_event(plan, at_ms)

    stim_seed = rngmod.stream_seed(seed_root, rngmod.DATASET, window_id, 1)
    sched = encode_stream(rows, wl.eval_window_ms, sim.dt, stim_seed,
                          input_charge=wl.input_charge)
    state = baseline.copy()
    res = run_window(state, sched, wl.window_ms, sim, learning=True,
                     steady_current=_steady_drive(sim.n_neurons, wl, None,
                                                  readout.group_neurons),
                     tamper=tamper, group_of=readout.group_of,
                     n_groups=readout.n_groups, margin=readout.decision_margin,
                     race_deadline_ms=wl.eval_window_ms)
    return collect_window(
        res.record, res.sum_abs_dw, res.latency_ms, sim.n_neurons, wl.window_ms,
        label=LABEL_ATTACK if attack_type != TYPE_NONE else LABEL_NORMAL,
        attack_type=attack_type, scenario_id=scenario_id, window_id=window_id,
        seed=stim_seed,
    )


def window_attack_pattern(n_samples: int, attack_ratio: float):
    """Deterministic interleaving of window labels and attack types.

    Attack windows are spread evenly through the id space (so any split by
    id keeps both classes); attack types alternate tamper/poison.
    """
    kinds = []
    n_attack = 0
    for i in range(n_samples):
        is_attack = int((i + 1) * attack_ratio) > int(i * attack_ratio)
        if is_attack:
            kinds.append(WEIGHT_TAMPER if n_attack % 2 == 0 else INPUT_POISON)
            n_attack += 1
        else:
            kinds.append(TYPE_NONE)
    return kinds


_WORKER = {}


def _dataset_worker_init(baseline, readout, task, sim, wl, tamper_spec,
                         poison_spec, seed_root):
    _WORKER.update(baseline=baseline, readout=readout, task=task, sim=sim, wl=wl,
                   tamper_spec=tamper_spec, poison_spec=poison_spec,
                   seed_root=seed_root)


def _dataset_worker(args):
    window_id, attack_type = args
    w = _WORKER
    row = run_telemetry_window(
        w["baseline"], w["readout"], w["task"], w["sim"], w["wl"],
        attack_type, window_id, w["seed_root"],
        tamper_spec=w["tamper_spec"], poison_spec=w["poison_spec"])
    return window_id, row


def generate_dataset(
    baseline: NetworkState, readout: ReadoutMap, task: TaskSet,
    sim: SimConfig, wl: WorkloadConfig,
    tamper_spec: AttackSpec, poison_spec: AttackSpec,
    n_samples: int = 10000, attack_ratio: float = 0.5,
    seed_root: int = 0, out_csv: str | None = None, jobs: int = 1,
    progress=None,
) -> list[DatasetSample]:
    """Generate the telemetry dataset; optionally write it as CSV.

    Deterministic for fixed seeds regardless of ``jobs``: every window's
    randomness is derived from (seed_root, window id) alone and rows are
    ordered by window id.
    """
    if n_samples < 2:
        raise UsageError(f"n_samples must be >= 2, got {n_samples}")
    if not 0.0 <= attack_ratio <= 1.0:
        raise UsageError(f"attack_ratio must be in [0, 1], got {attack_ratio}")
    kinds = window_attack_pattern(n_samples, attack_ratio)
    work = list(enumerate(kinds))
    rows: list[DatasetSample | None] = [None] * n_samples
    if jobs <= 1:
        for window_id, kind in work:
            rows[window_id] = run_telemetry_window(
                baseline, readout, task, sim, wl, kind, window_id, seed_root,
                tamper_spec=tamper_spec, poison_spec=poison_spec)
            if progress and (window_id + 1) % 500 == 0:
                progress(window_id + 1, n_samples)
    else:
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_dataset_worker_init,
                initargs=(baseline, readout, task, sim, wl, tamper_spec,
                          poison_spec, seed_root)) as pool:
            done = 0
            for window_id, row in pool.map(_dataset_worker, work, chunksize=16):
                rows[window_id] = row
                done += 1
                if progress and done % 500 == 0:
                    progress(done, n_samples)
    dataset = [r for r in rows if r is not None]
    if out_csv is not None:
        write_dataset_csv(dataset, out_csv)
    return dataset


def write_dataset_csv(dataset, path: str) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(dataset_csv_text(dataset))
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def dataset_csv_text(dataset) -> str:
    out = io.StringIO()
    out.write(DATASET_HEADER + "\n")
    for r in dataset:
        m = r.metrics
        out.write(f"{r.scenario_id},{r.window_id},{r.label},{r.attack_type},"
                  f"{m.spike_frequency_hz:.6g},{m.weight_change_pct:.6g},"
                  f"{m.latency_ms:.6g},{r.seed}\n")
    return out.getvalue()


def read_dataset_csv(path: str) -> list[DatasetSample]:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != DATASET_HEADER:
            raise UsageError(f"unexpected dataset header in {path}")
        out = []
        for row in reader:
            out.append(DatasetSample(
                metrics=WindowMetrics(float(row[4]), float(row[5]), float(row[6])),
                label=row[2], attack_type=row[3],
                scenario_id=int(row[0]), window_id=int(row[1]), seed=int(row[7])))
    return out


def _condition_rows(dataset, condition: str):
    if condition == LABEL_NORMAL or condition == LABEL_ATTACK:
        return [r for r in dataset if r.label == condition]
    return [r for r in dataset if r.attack_type == condition]


def summarize(dataset, conditions=(LABEL_NORMAL, LABEL_ATTACK)) -> list[SummaryStats]:
    """Mean +- sample sd of each metric per condition, plus the stability
    metric (variance of spike frequency across the condition's windows)."""
    out = []
    for cond in conditions:
        rows = _condition_rows(dataset, cond)
        if len(rows) < 2:
            raise UsageError(f"condition {cond!r} has fewer than 2 rows")
        arr = np.array([r.metrics.vector() for r in rows])
        mean = arr.mean(axis=0)
        sd = arr.std(axis=0, ddof=1)
        out.append(SummaryStats(
            condition=cond, n=len(rows),
            mean=WindowMetrics(*map(float, mean)),
            sd=WindowMetrics(*map(float, sd)),
            spike_variance_hz2=float(arr[:, 0].var(ddof=1)),
        ))
    return out


def summary_csv_text(stats: list[SummaryStats]) -> str:
    out = io.StringIO()
    out.write("condition,n,spike_frequency_mean_hz,spike_frequency_sd_hz,"
              "weight_change_mean_pct,weight_change_sd_pct,"
              "latency_mean_ms,latency_sd_ms,spike_variance_hz2\n")
    for s in stats:
        out.write(f"{s.condition},{s.n},{s.mean.spike_frequency_hz:.6g},"
                  f"{s.sd.spike_frequency_hz:.6g},{s.mean.weight_change_pct:.6g},"
                  f"{s.sd.weight_change_pct:.6g},{s.mean.latency_ms:.6g},"
                  f"{s.sd.latency_ms:.6g},{s.spike_variance_hz2:.6g}\n")
    return out.getvalue()


def summary_table_text(stats: list[SummaryStats]) -> str:
    lines = [f"{'condition':<14} {'n':>6} {'spike freq (Hz)':>18} "
             f"{'weight change (%)':>19} {'latency (ms)':>15} {'spike var (Hz^2)':>17}"]
    for s in stats:
        lines.append(
            f"{s.condition:<14} {s.n:>6} "
            f"{s.mean.spike_frequency_hz:>10.2f} ± {s.sd.spike_frequency_hz:<5.2f} "
            f"{s.mean.weight_change_pct:>11.3f} ± {s.sd.weight_change_pct:<5.3f} "
            f"{s.mean.latency_ms:>8.2f} ± {s.sd.latency_ms:<5.2f} "
            f"{s.spike_variance_hz2:>16.2f}")
    return "\n".join(lines) + "\n"


def welch_t_test(group_a, group_b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value.

    The p-value uses the Student-t survival function at the
    Welch-Satterthwaite degrees of freedom.
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise UsageError("welch_t_test needs at least 2 values per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    if se2 == 0.0:
        if a.mean() == b.mean():
            raise UndefinedStatisticError(
                "zero variance in both groups with equal means; t is undefined")
        return (float(np.inf) if a.mean() > b.mean() else float(-np.inf)), 0.0
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    dof = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(sstats.t.sf(abs(t), dof))
    return float(t), p
