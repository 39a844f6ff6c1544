"""Experiment orchestration: scenarios, the full protocol, calibration,
and report emission.

A scenario is one paired attack evaluation: the trained baseline is
copied, run through a short continued-learning phase (clean, attacked,
and attacked-under-secure-protocol variants), then evaluated on the same
per-scenario test stimuli. All randomness derives from (root_seed,
scenario id), so results are independent of execution order and process
count.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import rng as rngmod
from .attacks import (attack_success, check_stealth, plan_tamper, plan_to_event,
                      poison_sample, poison_stream_rates)
from .config import (AttackSpec, ExperimentConfig, INPUT_POISON, WEIGHT_TAMPER,
                     config_hash, validate_experiment)
from .defenses import (AnomalyModel, IdsRuleSet, evaluate_detector, fit_anomaly,
                       fit_ids_rules, filter_net_updates, ids_detect, roc_points)
from .errors import CalibrationError, UsageError
from .network import NetworkState, init_network, run_window
from .telemetry import (LABEL_ATTACK, LABEL_NORMAL, build_stream, collect_window,
                        generate_dataset, summarize, welch_t_test)
from .workload import (ReadoutMap, TaskSet, accuracy, classify, draw_sample,
                       encode_poisson, encode_stream, gen_task, settle_state,
                       train)
from .workload import _steady_drive

__all__ = [
    "ScenarioResult", "ExperimentReport", "run_experiment", "run_scenario",
    "latency_impact", "emit_report", "calibrate", "CalibrationTargets",
    "ExperimentContext", "build_baseline",
]


@dataclass(frozen=True)
class ScenarioResult:
    scenario_id: int
    attack_type: str
    victim: int
    rival: int
    clean_accuracy: float
    attacked_accuracy: float
    secured_accuracy: float | None
    success: bool
    stealthy: bool
    secured_success: bool | None
    clean_latency_ms: float
    attacked_latency_ms: float
    clean_weight_change_pct: float
    attacked_weight_change_pct: float
    clean_spike_hz: float
    attacked_spike_hz: float
    anomaly_flag: bool | None
    anomaly_score: float | None
    ids_flag: bool | None
    rejected_updates: int  # secure-mode: tamper writes refused by the verifier

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ExperimentContext:
    """Everything a scenario worker needs, shipped once per process."""

    cfg: ExperimentConfig
    baseline: NetworkState
    readout: ReadoutMap
    task: TaskSet
    anomaly: AnomalyModel | None
    ids_rules: IdsRuleSet | None


def build_baseline(cfg: ExperimentConfig):
    """Train the baseline network for an experiment config."""
    state = init_network(cfg.sim)
    task = gen_task(cfg.task, split=cfg.workload.train_split)
    state, readout = train(state, task, cfg.sim, cfg.workload, seed=cfg.root_seed)
    return state, task, readout


def _scenario_samples(ctx: ExperimentContext, scn_id: int):
    """Stratified eval set, per-scenario seeded."""
    cfg = ctx.cfg
    gen = rngmod.substream(cfg.root_seed, rngmod.SCENARIO, scn_id)
    n_classes = cfg.task.n_classes
    return [draw_sample(cfg.task, k % n_classes, gen, ctx.task.prototypes)
            for k in range(cfg.eval_samples)]


def _adapt_phase(ctx: ExperimentContext, state: NetworkState, scn_id: int,
                 tamper_event=None, poison_spec=None, secure_cap=None):
    """Run the scenario's continued-learning stream windows; returns the
    telemetry of the window carrying the attack."""
    cfg = ctx.cfg
    sim, wl = cfg.sim, cfg.workload
    telemetry = None
    gen = rngmod.substream(cfg.root_seed, rngmod.SCENARIO, scn_id, 7)
    for w in range(cfg.n_adapt_windows):
        rows = build_stream(ctx.task, wl, gen)
        if poison_spec is not None:
            rows, _ = poison_stream_rates(rows, 200_000 + scn_id * 100 + w,
                                          poison_spec, ctx.task)
        sched = encode_stream(
            rows, wl.eval_window_ms, sim.dt,
            rngmod.stream_seed(cfg.root_seed, rngmod.SCENARIO, scn_id, 10 + w),
            input_charge=wl.input_charge)
        before = state.weights.copy() if secure_cap is not None else None
        res = run_window(
            state, sched, wl.window_ms, sim, learning=True,
            steady_current=_steady_drive(sim.n_neurons, wl, None,
                                         ctx.readout.group_neurons),
            tamper=tamper_event if w == cfg.tamper_adapt_index else None,
            group_of=ctx.readout.group_of, n_groups=ctx.readout.n_groups,
            margin=ctx.readout.decision_margin, race_deadline_ms=wl.eval_window_ms)
        if secure_cap is not None:
            verified, _ = filter_net_updates(before, state.weights, secure_cap)
            state.weights[:] = verified
        if w == cfg.tamper_adapt_index:
            telemetry = res
    return telemetry


def _eval_condition(ctx: ExperimentContext, state: NetworkState, samples,
                    scn_id: int, poison_spec: AttackSpec | None):
    """Classify the scenario's eval samples (identical stimuli per pairing
    discipline; only the attack's own substitutions may differ)."""
    cfg = ctx.cfg
    records = []
    correct = 0
    for k, sample in enumerate(samples):
        if poison_spec is not None:
            sample, _ = poison_sample(sample, 100_000 + scn_id * 1000 + k,
                                      poison_spec, ctx.task)
        pred, lat, tmo = classify(
            state, ctx.readout, sample, cfg.sim, cfg.workload,
            rngmod.stream_seed(cfg.root_seed, rngmod.SCENARIO, scn_id, 1000 + k))
        records.append((sample.label, pred, lat, tmo))
        correct += int(pred == sample.label)
    acc = 100.0 * correct / len(records)
    mean_lat = float(np.mean([r[2] for r in records]))
    return acc, mean_lat, records


def run_scenario(ctx: ExperimentContext, scn_id: int, attack_type: str) -> ScenarioResult:
    """One paired clean/attacked (and secured) evaluation."""
    cfg = ctx.cfg
    sim, wl = cfg.sim, cfg.workload
    eval_samples = _scenario_samples(ctx, scn_id)
    n_syn = sim.n_neurons * (sim.n_neurons - 1)
    secure_on = cfg.detectors.secure_enabled

    def window_stats(res):
        hz = 1000.0 * len(res.record) / (sim.n_neurons * wl.window_ms)
        wc = 100.0 * res.sum_abs_dw / n_syn / (sim.w_max - sim.w_min)
        return hz, wc

    settle_seed = rngmod.stream_seed(cfg.root_seed, rngmod.SCENARIO, scn_id, 9)

    def settle(st):
        return settle_state(st, cfg.task, sim, wl, settle_seed,
                            ctx.readout.group_neurons)

    # Clean condition.
    state_c = ctx.baseline.copy()
    tele_c = _adapt_phase(ctx, state_c, scn_id)
    acc_c, lat_c, rec_c = _eval_condition(ctx, settle(state_c), eval_samples,
                                          scn_id, None)
    hz_c, wc_c = window_stats(tele_c)

    # Attacked condition: same adapt/eval stimuli, plus the attack.
    state_a = ctx.baseline.copy()
    victim = rival = -1
    rejected = 0
    poison_spec = None
    if attack_type == WEIGHT_TAMPER:
        spec = dataclasses.replace(cfg.tamper, seed=cfg.tamper.seed + scn_id)
        plan = plan_tamper(spec, sim.n_neurons, ctx.readout, cfg.task.n_channels)
        victim, rival = plan.victim, plan.rival
        event = plan_to_event(plan, wl.window_ms / 2)
        tele_a = _adapt_phase(ctx, state_a, scn_id, tamper_event=event)
    else:
        poison_spec = dataclasses.replace(cfg.poison, seed=cfg.poison.seed + scn_id)
        tele_a = _adapt_phase(ctx, state_a, scn_id, poison_spec=poison_spec)
    acc_a, lat_a, rec_a = _eval_condition(ctx, settle(state_a), eval_samples,
                                          scn_id, poison_spec)
    hz_a, wc_a = window_stats(tele_a)

    success = attack_success(rec_c, rec_a, cfg.tamper if attack_type == WEIGHT_TAMPER
                             else cfg.poison)
    stealthy = check_stealth(acc_c, acc_a, cfg.tamper if attack_type == WEIGHT_TAMPER
                             else cfg.poison)

    # Secured condition: the verified-learning protocol is active.
    acc_s = None
    sec_success = None
    if secure_on:
        cap = cfg.secure.delta_cap
        state_s = ctx.baseline.copy()
        if attack_type == WEIGHT_TAMPER:
            spec = dataclasses.replace(cfg.tamper, seed=cfg.tamper.seed + scn_id)
            plan = plan_tamper(spec, sim.n_neurons, ctx.readout, cfg.task.n_channels)
            n_inside = int(cfg.secure.supply_chain_fraction * len(plan.pre))
            # Writes from the supply-chain position corrupt the verified
            # store directly; the rest go through the update interface and
            # fail MAC verification.
            w = state_s.weights
            pre, post = plan.pre[:n_inside], plan.post[:n_inside]
            w[pre, post] = np.clip(w[pre, post] + plan.delta[:n_inside],
                                   sim.w_min, sim.w_max)
            rejected = len(plan.pre) - n_inside
            _adapt_phase(ctx, state_s, scn_id, secure_cap=cap)
            sec_poison = None
        else:
            sec_poison = poison_spec
            _adapt_phase(ctx, state_s, scn_id, poison_spec=poison_spec,
                         secure_cap=cap)
        acc_s, _, rec_s = _eval_condition(ctx, settle(state_s), eval_samples,
                                          scn_id, sec_poison)
        sec_success = attack_success(rec_c, rec_s, cfg.tamper if attack_type == WEIGHT_TAMPER
                                     else cfg.poison)

    # Detector verdicts on the attacked telemetry window.
    att_metrics = collect_window(
        tele_a.record, tele_a.sum_abs_dw, tele_a.latency_ms, sim.n_neurons,
        wl.window_ms, label=LABEL_ATTACK, attack_type=attack_type,
        scenario_id=scn_id, window_id=cfg.tamper_adapt_index, seed=0).metrics
    an_flag = an_score = ids_flag = None
    if ctx.anomaly is not None:
        an_score = ctx.anomaly.score(att_metrics)
        an_flag = an_score > ctx.anomaly.threshold
    if ctx.ids_rules is not None:
        ids_flag = ids_detect(ctx.ids_rules, att_metrics)

    return ScenarioResult(
        scenario_id=scn_id, attack_type=attack_type, victim=victim, rival=rival,
        clean_accuracy=acc_c, attacked_accuracy=acc_a, secured_accuracy=acc_s,
        success=success, stealthy=stealthy, secured_success=sec_success,
        clean_latency_ms=lat_c, attacked_latency_ms=lat_a,
        clean_weight_change_pct=wc_c, attacked_weight_change_pct=wc_a,
        clean_spike_hz=hz_c, attacked_spike_hz=hz_a,
        anomaly_flag=an_flag, anomaly_score=an_score, ids_flag=ids_flag,
        rejected_updates=rejected,
    )


_SCN_CTX: dict = {}


def _scenario_worker_init(ctx):
    _SCN_CTX["ctx"] = ctx


def _scenario_worker(args):
    scn_id, attack_type = args
    return scn_id, run_scenario(_SCN_CTX["ctx"], scn_id, attack_type)


@dataclass
class ExperimentReport:
    config_hash: str
    root_seed: int
    version: str
    clean_accuracy_gate: float
    table1: dict
    table2: dict
    table3: dict | None
    attack_stats: dict
    latency_impacts: dict
    spike_variance: dict
    welch: dict
    detector_eval: dict | None
    roc: list | None
    scenarios: list

    def to_json(self) -> str:
        obj = dataclasses.asdict(self)
        obj["scenarios"] = [s if isinstance(s, dict) else s.to_dict()
                            for s in self.scenarios]
        return json.dumps(obj, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentReport":
        obj = json.loads(text)
        return ExperimentReport(**obj)


def latency_impact(report: ExperimentReport) -> dict:
    """Per-attack latency increase over the clean mean, in percent."""
    return report.latency_impacts


def _latency_impacts(results: list[ScenarioResult]) -> dict:
    out = {}
    pooled_clean, pooled_att = [], []
    for kind in (WEIGHT_TAMPER, INPUT_POISON):
        rows = [r for r in results if r.attack_type == kind]
        if not rows:
            continue
        clean = float(np.mean([r.clean_latency_ms for r in rows]))
        att = float(np.mean([r.attacked_latency_ms for r in rows]))
        if clean == 0:
            raise UsageError("clean latency mean is zero; impact undefined")
        out[kind] = 100.0 * (att - clean) / clean
        pooled_clean.extend(r.clean_latency_ms for r in rows)
        pooled_att.extend(r.attacked_latency_ms for r in rows)
    if pooled_clean:
        c, a = float(np.mean(pooled_clean)), float(np.mean(pooled_att))
        out["pooled"] = 100.0 * (a - c) / c
    return out


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, progress=None,
                   out_dataset_csv: str | None = None) -> ExperimentReport:
    """The full protocol: baseline, telemetry dataset, detectors, scenarios.

    Deterministic for a fixed root seed regardless of ``jobs``.
    """
    validate_experiment(cfg)
    say = progress or (lambda msg: None)

    say("training baseline network")
    baseline, task, readout = build_baseline(cfg)

    say("checking clean-accuracy calibration gate")
    gate_n = 800
    gen = rngmod.substream(cfg.root_seed, rngmod.CALIBRATION, 1)
    gate_samples = [draw_sample(cfg.task, k % cfg.task.n_classes, gen, task.prototypes)
                    for k in range(gate_n)]
    gate_acc, _ = accuracy(baseline, readout, gate_samples, cfg.sim, cfg.workload,
                           seed=rngmod.stream_seed(cfg.root_seed, rngmod.CALIBRATION, 2))
    if not 94.0 <= gate_acc <= 96.0:
        raise CalibrationError(
            f"clean accuracy {gate_acc:.1f}% outside 95 +- 1 under this config; "
            "run `spikesec calibrate` before the experiment")

    say(f"generating telemetry dataset ({cfg.dataset_size} windows)")
    tamper_spec = dataclasses.replace(cfg.tamper, seed=cfg.tamper.seed + 777_000)
    poison_spec = dataclasses.replace(cfg.poison, seed=cfg.poison.seed + 777_000)
    dataset = generate_dataset(
        baseline, readout, task, cfg.sim, cfg.workload, tamper_spec, poison_spec,
        n_samples=cfg.dataset_size, attack_ratio=cfg.attack_ratio,
        seed_root=cfg.root_seed, out_csv=out_dataset_csv, jobs=jobs,
        progress=(lambda d, t: say(f"dataset {d}/{t}")) if progress else None)

    say("summary statistics and significance tests")
    sums = summarize(dataset, conditions=(LABEL_NORMAL, LABEL_ATTACK,
                                          WEIGHT_TAMPER, INPUT_POISON))
    by_cond = {s.condition: s for s in sums}
    normal_rows = [r for r in dataset if r.label == LABEL_NORMAL]
    attack_rows = [r for r in dataset if r.label == LABEL_ATTACK]
    welch = {}
    for k, name in enumerate(("spike_frequency_hz", "weight_change_pct", "latency_ms")):
        t, p = welch_t_test([r.metrics.vector()[k] for r in normal_rows],
                            [r.metrics.vector()[k] for r in attack_rows])
        welch[name] = {"t": t, "p": p}

    detector_eval = None
    roc = None
    anomaly = None
    ids_rules = None
    if cfg.detectors.anomaly_enabled or cfg.detectors.ids_enabled:
        say("fitting and evaluating detectors (70/30 telemetry split)")
        cut = int(cfg.split * cfg.dataset_size)
        train_rows = [r for r in dataset if r.window_id < cut]
        test_rows = [r for r in dataset if r.window_id >= cut]
        train_normal = [r.metrics for r in train_rows if r.label == LABEL_NORMAL]
        test_w = [r.metrics for r in test_rows]
        test_y = [r.label == LABEL_ATTACK for r in test_rows]
        detector_eval = {}
        if cfg.detectors.anomaly_enabled:
            anomaly = fit_anomaly(train_normal, cfg.detectors.target_fpr)
            ev = evaluate_detector(anomaly.flag, test_w, test_y)
            detector_eval["anomaly"] = dataclasses.asdict(ev)
            roc = roc_points(anomaly, test_w, test_y)
        if cfg.detectors.ids_enabled:
            ids_rules = fit_ids_rules(
                train_normal[:cfg.detectors.ids_prestudy_windows],
                cfg.detectors.ids_k_sigma)
            ev = evaluate_detector(lambda w: ids_detect(ids_rules, w), test_w, test_y)
            detector_eval["ids"] = dataclasses.asdict(ev)

    say(f"running {cfg.n_tamper_scenarios + cfg.n_poison_scenarios} attack scenarios")
    plan = []
    t_left, p_left = cfg.n_tamper_scenarios, cfg.n_poison_scenarios
    while t_left or p_left:  # interleave so partial runs stay balanced
        if t_left:
            plan.append(WEIGHT_TAMPER)
            t_left -= 1
        if p_left:
            plan.append(INPUT_POISON)
            p_left -= 1
    work = [(scn_id, plan[scn_id]) for scn_id in range(len(plan))]
    ctx = ExperimentContext(cfg=cfg, baseline=baseline, readout=readout, task=task,
                            anomaly=anomaly, ids_rules=ids_rules)
    results: list[ScenarioResult | None] = [None] * len(plan)
    if jobs <= 1:
        for scn_id, kind in work:
            results[scn_id] = run_scenario(ctx, scn_id, kind)
            if progress and (scn_id + 1) % 50 == 0:
                say(f"scenario {scn_id + 1}/{len(plan)}")
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_scenario_worker_init,
                                 initargs=(ctx,)) as pool:
            done = 0
            for scn_id, res in pool.map(_scenario_worker, work, chunksize=4):
                results[scn_id] = res
                done += 1
                if progress and done % 50 == 0:
                    say(f"scenario {done}/{len(plan)}")
    results = [r for r in results if r is not None]

    say("aggregating the report")
    attack_stats = {}
    table2 = {"clean": _acc_block([r.clean_accuracy for r in results],
                                  [r.clean_latency_ms for r in results],
                                  [r.clean_weight_change_pct for r in results])}
    for kind in (WEIGHT_TAMPER, INPUT_POISON):
        rows = [r for r in results if r.attack_type == kind]
        if not rows:
            continue
        n = len(rows)
        stats = {
            "n": n,
            "success_rate_pct": 100.0 * sum(r.success for r in rows) / n,
            "stealth_rate_pct": 100.0 * sum(r.stealthy for r in rows) / n,
            "mean_drop_pp": float(np.mean([r.clean_accuracy - r.attacked_accuracy
                                           for r in rows])),
        }
        if rows[0].secured_success is not None:
            stats["secured_success_rate_pct"] = (
                100.0 * sum(r.secured_success for r in rows) / n)
            stats["rejected_updates_total"] = int(sum(r.rejected_updates for r in rows))
        attack_stats[kind] = stats
        table2[kind] = _acc_block([r.attacked_accuracy for r in rows],
                                  [r.attacked_latency_ms for r in rows],
                                  [r.attacked_weight_change_pct for r in rows])

    spike_variance = {
        "normal": by_cond[LABEL_NORMAL].spike_variance_hz2,
        WEIGHT_TAMPER: by_cond[WEIGHT_TAMPER].spike_variance_hz2,
        INPUT_POISON: by_cond[INPUT_POISON].spike_variance_hz2,
    }

    table1 = {s.condition: {
        "n": s.n,
        "spike_frequency_hz": [s.mean.spike_frequency_hz, s.sd.spike_frequency_hz],
        "weight_change_pct": [s.mean.weight_change_pct, s.sd.weight_change_pct],
        "latency_ms": [s.mean.latency_ms, s.sd.latency_ms],
        "spike_variance_hz2": s.spike_variance_hz2,
    } for s in sums}

    table3 = None
    if detector_eval is not None:
        table3 = {}
        if "anomaly" in detector_eval:
            table3["anomaly_detection"] = {
                "detection_rate_pct": detector_eval["anomaly"]["detection_accuracy_pct"],
                "false_positive_rate_pct": detector_eval["anomaly"]["false_positive_rate_pct"],
                "residual_attack_success_pct":
                    100.0 - detector_eval["anomaly"]["detection_accuracy_pct"],
            }
        if "ids" in detector_eval:
            table3["traditional_ids"] = {
                "detection_rate_pct": detector_eval["ids"]["detection_accuracy_pct"],
                "false_positive_rate_pct": detector_eval["ids"]["false_positive_rate_pct"],
                "residual_attack_success_pct":
                    100.0 - detector_eval["ids"]["detection_accuracy_pct"],
            }
        if cfg.detectors.secure_enabled and attack_stats:
            table3["secure_protocols"] = {
                "residual_tamper_success_pct":
                    attack_stats.get(WEIGHT_TAMPER, {}).get("secured_success_rate_pct"),
                "residual_poison_success_pct":
                    attack_stats.get(INPUT_POISON, {}).get("secured_success_rate_pct"),
            }

    report = ExperimentReport(
        config_hash=config_hash(cfg), root_seed=cfg.root_seed, version=__version__,
        clean_accuracy_gate=gate_acc, table1=table1, table2=table2, table3=table3,
        attack_stats=attack_stats, latency_impacts=_latency_impacts(results),
        spike_variance=spike_variance, welch=welch, detector_eval=detector_eval,
        roc=roc, scenarios=[r.to_dict() for r in results],
    )
    return report


def _acc_block(accs, lats, wcs):
    return {
        "accuracy_pct": [float(np.mean(accs)), float(np.std(accs, ddof=1))
                         if len(accs) > 1 else 0.0],
        "latency_ms": [float(np.mean(lats)), float(np.std(lats, ddof=1))
                       if len(lats) > 1 else 0.0],
        "weight_change_pct": [float(np.mean(wcs)), float(np.std(wcs, ddof=1))
                              if len(wcs) > 1 else 0.0],
    }


# ---------------------------------------------------------------------------
# Report emission


def _md_table(headers, rows) -> str:
    out = ["| " + " | ".join(headers) + " |",
           "|" + "|".join("---" for _ in headers) + "|"]
    for row in rows:
        out.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(out) + "\n"


def emit_report(report: ExperimentReport, out_dir: str,
                formats=("csv", "markdown", "json", "plotdata"),
                dataset=None) -> list[str]:
    """Write the report artifacts; returns the list of paths written.

    Output bytes are a pure function of the report (no timestamps), so a
    rerun of the same experiment reproduces every file byte for byte.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output dir {out_dir}: {exc}") from exc
    written = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        written.append(path)

    if "json" in formats:
        emit("report.json", report.to_json())

    t1_rows = []
    for cond in (LABEL_NORMAL, LABEL_ATTACK, WEIGHT_TAMPER, INPUT_POISON):
        if cond not in report.table1:
            continue
        b = report.table1[cond]
        t1_rows.append([cond, b["n"],
                        f"{b['spike_frequency_hz'][0]:.2f}", f"{b['spike_frequency_hz'][1]:.2f}",
                        f"{b['weight_change_pct'][0]:.3f}", f"{b['weight_change_pct'][1]:.3f}",
                        f"{b['latency_ms'][0]:.2f}", f"{b['latency_ms'][1]:.2f}",
                        f"{b['spike_variance_hz2']:.2f}"])
    t1_head = ["condition", "n", "spike_freq_mean_hz", "spike_freq_sd_hz",
               "weight_change_mean_pct", "weight_change_sd_pct",
               "latency_mean_ms", "latency_sd_ms", "spike_variance_hz2"]

    t2_rows = []
    for cond in ("clean", WEIGHT_TAMPER, INPUT_POISON):
        if cond not in report.table2:
            continue
        b = report.table2[cond]
        var = (report.spike_variance.get(cond if cond != "clean" else "normal"))
        t2_rows.append([cond,
                        f"{b['accuracy_pct'][0]:.1f}", f"{b['accuracy_pct'][1]:.1f}",
                        f"{b['latency_ms'][0]:.2f}",
                        f"{b['weight_change_pct'][0]:.3f}",
                        f"{var:.2f}" if var is not None else ""])
    t2_head = ["condition", "accuracy_mean_pct", "accuracy_sd_pct",
               "latency_mean_ms", "weight_change_mean_pct", "spike_variance_hz2"]

    t3_head = ["countermeasure", "detection_rate_pct", "false_positive_rate_pct",
               "residual_attack_success_pct"]
    t3_rows = []
    if report.table3:
        for name, key in (("anomaly_detection", "anomaly_detection"),
                          ("secure_protocols", "secure_protocols"),
                          ("traditional_ids", "traditional_ids")):
            if key not in report.table3:
                continue
            b = report.table3[key]
            if key == "secure_protocols":
                res_t = b.get("residual_tamper_success_pct")
                res_p = b.get("residual_poison_success_pct")
                resid = (f"tamper {res_t:.1f} / poison {res_p:.1f}"
                         if res_t is not None and res_p is not None else "")
                t3_rows.append([name, "", "", resid])
            else:
                t3_rows.append([name, f"{b['detection_rate_pct']:.1f}",
                                f"{b['false_positive_rate_pct']:.1f}",
                                f"{b['residual_attack_success_pct']:.1f}"])

    if "csv" in formats:
        for name, head, rows in (("table1.csv", t1_head, t1_rows),
                                 ("table2.csv", t2_head, t2_rows),
                                 ("table3.csv", t3_head, t3_rows)):
            if name == "table3.csv" and not report.table3:
                continue
            buf = io.StringIO()
            buf.write(",".join(head) + "\n")
            for row in rows:
                buf.write(",".join(str(c) for c in row) + "\n")
            emit(name, buf.getvalue())

    if "markdown" in formats:
        emit("table1.md", _md_table(t1_head, t1_rows))
        emit("table2.md", _md_table(t2_head, t2_rows))
        if report.table3:
            emit("table3.md", _md_table(t3_head, t3_rows))

    if "plotdata" in formats:
        if dataset is not None:
            normal = [r.metrics.spike_frequency_hz for r in dataset
                      if r.label == LABEL_NORMAL]
            attack = [r.metrics.spike_frequency_hz for r in dataset
                      if r.label == LABEL_ATTACK]
            lo = np.floor(min(min(normal), min(attack)))
            hi = np.ceil(max(max(normal), max(attack)))
            edges = np.linspace(lo, hi, 41)
            hn, _ = np.histogram(normal, bins=edges)
            ha, _ = np.histogram(attack, bins=edges)
            buf = io.StringIO()
            buf.write("bin_lo,bin_hi,count_normal,count_attack\n")
            for k in range(len(hn)):
                buf.write(f"{edges[k]:.6g},{edges[k+1]:.6g},{hn[k]},{ha[k]}\n")
            emit("fig1_spike_hist.csv", buf.getvalue())
        buf = io.StringIO()
        buf.write("attack_type,success_rate_pct\n")
        for kind in (WEIGHT_TAMPER, INPUT_POISON):
            if kind in report.attack_stats:
                buf.write(f"{kind},{report.attack_stats[kind]['success_rate_pct']:.6g}\n")
        emit("fig3_success.csv", buf.getvalue())
        buf = io.StringIO()
        buf.write("condition,mean_latency_ms\n")
        buf.write(f"clean,{report.table2['clean']['latency_ms'][0]:.6g}\n")
        for kind in (WEIGHT_TAMPER, INPUT_POISON):
            if kind in report.table2:
                buf.write(f"{kind},{report.table2[kind]['latency_ms'][0]:.6g}\n")
        emit("fig4_latency.csv", buf.getvalue())

    return written


# ---------------------------------------------------------------------------
# Calibration


@dataclass(frozen=True)
class CalibrationTargets:
    """Clean-side bands the shipped config must land in (lo, hi)."""

    spike_frequency_hz: tuple = (40.0, 60.0)
    weight_change_pct: tuple = (0.4, 0.6)
    latency_ms: tuple = (8.0, 12.0)
    accuracy_pct: tuple = (94.0, 96.0)


@dataclass
class CalibrationReport:
    converged: bool
    iterations: int
    achieved: dict
    targets: dict
    unmet: list
    config: ExperimentConfig


def _probe_clean(cfg: ExperimentConfig, n_eval: int, n_windows: int):
    """Measure the clean operating point for a candidate config."""
    baseline, task, readout = build_baseline(cfg)
    gen = rngmod.substream(cfg.root_seed, rngmod.CALIBRATION, 11)
    samples = [draw_sample(cfg.task, k % cfg.task.n_classes, gen, task.prototypes)
               for k in range(n_eval)]
    acc, records = accuracy(baseline, readout, samples, cfg.sim, cfg.workload,
                            seed=rngmod.stream_seed(cfg.root_seed, rngmod.CALIBRATION, 12))
    lat = float(np.mean([r[2] for r in records]))
    hzs, wcs = [], []
    n_syn = cfg.sim.n_neurons * (cfg.sim.n_neurons - 1)
    for w in range(n_windows):
        snap = baseline.copy()
        sample = draw_sample(cfg.task, int(gen.integers(cfg.task.n_classes)), gen,
                             task.prototypes)
        sched = encode_poisson(sample, cfg.workload.window_ms, cfg.sim.dt,
                               rngmod.stream_seed(cfg.root_seed, rngmod.CALIBRATION, 100 + w),
                               input_charge=cfg.workload.input_charge)
        res = run_window(snap, sched, cfg.workload.window_ms, cfg.sim, learning=True,
                         steady_current=_steady_drive(cfg.sim.n_neurons, cfg.workload,
                                                      None, readout.group_neurons))
        hzs.append(1000.0 * len(res.record) / (cfg.sim.n_neurons * cfg.workload.window_ms))
        wcs.append(100.0 * res.sum_abs_dw / n_syn)
    return {"spike_frequency_hz": float(np.mean(hzs)),
            "weight_change_pct": float(np.mean(wcs)),
            "latency_ms": lat, "accuracy_pct": acc}


def _band_loss(achieved: dict, targets: CalibrationTargets):
    loss = 0.0
    unmet = []
    for name, (lo, hi) in dataclasses.asdict(targets).items():
        v = achieved[name]
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        if not lo <= v <= hi:
            unmet.append(name)
            loss += abs(v - mid) / half
    return loss, unmet


_CAL_KNOBS = (
    # (name, getter path, multiplicative step)
    ("workload.bg_current", 0.06),
    ("sim.v_thresh", 0.08),
    ("task.peak_rate_hz", 0.12),
    ("stdp_scale", 0.30),
    ("task.noise_sigma", 0.25),
)


def _get_knob(cfg: ExperimentConfig, name: str) -> float:
    if name == "stdp_scale":
        return 1.0
    section, fieldname = name.split(".")
    return getattr(getattr(cfg, section), fieldname)


def _set_knob(cfg: ExperimentConfig, name: str, value: float) -> ExperimentConfig:
    if name == "stdp_scale":
        stdp = cfg.sim.stdp
        stdp = dataclasses.replace(stdp, a_plus=stdp.a_plus * value,
                                   a_minus=stdp.a_minus * value)
        return dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, stdp=stdp))
    section, fieldname = name.split(".")
    sub = dataclasses.replace(getattr(cfg, section), **{fieldname: value})
    return dataclasses.replace(cfg, **{section: sub})


def calibrate(cfg: ExperimentConfig, targets: CalibrationTargets | None = None,
              budget: int = 20, n_eval: int = 300, n_windows: int = 3,
              progress=None) -> CalibrationReport:
    """Seeded coordinate search until the clean metrics land in the bands.

    Knobs: background drive, threshold, input peak rate, STDP rate scale,
    and sample jitter. Returns a report either way; a non-converged report
    lists the unmet bands and the best achieved values.
    """
    targets = targets or CalibrationTargets()
    say = progress or (lambda msg: None)
    achieved = _probe_clean(cfg, n_eval, n_windows)
    loss, unmet = _band_loss(achieved, targets)
    iterations = 0
    if not unmet:
        return CalibrationReport(True, 0, achieved, dataclasses.asdict(targets),
                                 [], cfg)
    best = (loss, cfg, achieved, unmet)
    while iterations < budget and best[3]:
        improved = False
        for name, step in _CAL_KNOBS:
            if iterations >= budget:
                break
            base_val = _get_knob(best[1], name)
            for direction in (1.0 + step, 1.0 - step):
                cand_cfg = _set_knob(best[1], name, base_val * direction)
                try:
                    validate_experiment(cand_cfg)
                    cand = _probe_clean(cand_cfg, n_eval, n_windows)
                except Exception:
                    iterations += 1
                    continue
                iterations += 1
                cand_loss, cand_unmet = _band_loss(cand, targets)
                say(f"iter {iterations}: {name} x{direction:.2f} -> loss {cand_loss:.3f}")
                if cand_loss < best[0]:
                    best = (cand_loss, cand_cfg, cand, cand_unmet)
                    improved = True
                if not cand_unmet:
                    return CalibrationReport(True, iterations, cand,
                                             dataclasses.asdict(targets), [], cand_cfg)
                if iterations >= budget:
                    break
        if not improved:
            break
    return CalibrationReport(False, iterations, best[2],
                             dataclasses.asdict(targets), best[3], best[1])
