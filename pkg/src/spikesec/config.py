"""Configuration dataclasses, validation, and the experiment config file.

The config file is flat typed key=value text with INI sections. Unknown
sections or keys are rejected so typos cannot silently fall back to
defaults. ``schema_version`` is stored in the ``[experiment]`` section.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields

from .errors import ConfigError

SCHEMA_VERSION = 1

WEIGHT_TAMPER = "weight_tamper"
INPUT_POISON = "input_poison"
SIGN_RANDOM = "random"
SIGN_ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class StdpConfig:
    a_plus: float = 0.01
    a_minus: float = 0.01
    tau_plus: float = 20.0  # ms
    tau_minus: float = 20.0  # ms


@dataclass(frozen=True)
class SimConfig:
    n_neurons: int = 1000
    dt: float = 0.1  # simulated ms per step
    tau_m: float = 20.0  # membrane time constant, ms
    v_rest: float = 0.0
    v_reset: float = 0.0
    v_thresh: float = 1.0
    refractory: float = 2.0  # ms
    stdp: StdpConfig = field(default_factory=StdpConfig)
    w_min: float = 0.0
    w_max: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class TaskSpec:
    n_classes: int = 5
    n_channels: int = 64
    base_rate_hz: float = 10.0
    peak_rate_hz: float = 100.0
    noise_sigma: float = 5.0  # Hz of per-channel rate jitter
    samples_per_class: int = 100
    seed: int = 0


@dataclass(frozen=True)
class WorkloadConfig:
    """Drive levels and readout plumbing around the task itself."""

    group_size: int = 10  # neurons per readout group
    decision_margin: int = 12  # spike-count lead required to decide
    input_charge: float = 1.0  # membrane charge per input-channel spike
    bg_current: float = 0.0  # constant background drive, charge/ms
    teacher_current: float = 2.0  # training-only drive onto the label group
    readout_bias: float = 0.0  # standing extra drive on all readout neurons
    window_ms: float = 1000.0  # telemetry/learning window length
    eval_window_ms: float = 100.0  # classification-only window length
    train_passes: int = 1  # presentations of the training set
    settle_ms: float = 300.0  # post-training re-ignition on a neutral stimulus
    probe_repeats: int = 2  # readout-assignment probes per class
    train_split: float = 0.7  # task-sample train/test split
    stream_common_jitter_hz: float = 0.0  # per-window ambient rate drift


@dataclass(frozen=True)
class AttackSpec:
    kind: str = WEIGHT_TAMPER
    fraction: float = 0.10  # tampered synapse / poisoned channel fraction
    magnitude: float = 0.1  # weight units, tamper only
    sign_mode: str = SIGN_ADVERSARIAL
    stealth_budget_pp: float = 5.0  # max accuracy loss to stay covert
    success_threshold_pp: float = 1.0  # min accuracy loss to count as a hit
    sign_drift_max: float = 1.0  # adversarial per-campaign sign imbalance bound
    adv_fraction: float = 0.6  # share of readout-bound writes signed adversarially
    seed: int = 0


def default_poison_spec(seed: int = 0) -> AttackSpec:
    return AttackSpec(kind=INPUT_POISON, fraction=0.05, seed=seed)


@dataclass(frozen=True)
class DetectorConfig:
    anomaly_enabled: bool = True
    ids_enabled: bool = True
    secure_enabled: bool = True
    target_fpr: float = 0.10
    ids_prestudy_windows: int = 200
    ids_k_sigma: float = 3.0


@dataclass(frozen=True)
class SecureConfig:
    key_hex: str = "73706b73656375726974792d64656661756c74"  # session MAC key
    supply_chain_fraction: float = 0.30  # tamper writes landing before signing
    delta_cap: float = 0.004  # max verified per-synapse net update per window


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    tamper: AttackSpec = field(default_factory=AttackSpec)
    poison: AttackSpec = field(default_factory=default_poison_spec)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    secure: SecureConfig = field(default_factory=SecureConfig)
    n_tamper_scenarios: int = 500
    n_poison_scenarios: int = 500
    split: float = 0.7  # telemetry train/test split for detectors
    dataset_size: int = 10000
    attack_ratio: float = 0.5
    n_adapt_windows: int = 4  # continued-learning windows per scenario
    tamper_adapt_index: int = 2  # adapt window carrying the tamper write
    eval_samples: int = 250  # paired evaluation windows per scenario
    root_seed: int = 42
    output_dir: str = "out"


_SECTIONS = {
    "sim": (SimConfig, ("sim",)),
    "stdp": (StdpConfig, ("sim", "stdp")),
    "task": (TaskSpec, ("task",)),
    "workload": (WorkloadConfig, ("workload",)),
    "attack.weight_tamper": (AttackSpec, ("tamper",)),
    "attack.input_poison": (AttackSpec, ("poison",)),
    "detectors": (DetectorConfig, ("detectors",)),
    "secure": (SecureConfig, ("secure",)),
    "experiment": (ExperimentConfig, ()),
}

_NESTED_FIELDS = {"sim", "task", "workload", "tamper", "poison", "detectors", "secure", "stdp"}


def _parse_value(raw: str, typ: type, section: str, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from exc


def load_config(path: str) -> ExperimentConfig:
    """Load an ExperimentConfig from an INI-style file, rejecting unknown keys."""
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    updates: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls, dest = _SECTIONS[section]
        known = {f.name: f.type for f in fields(cls) if f.name not in _NESTED_FIELDS}
        type_map = {"int": int, "float": float, "str": str, "bool": bool}
        sect_updates = {}
        for key, raw in parser.items(section):
            if section == "experiment" and key == "schema_version":
                version = _parse_value(raw, int, section, key)
                if version != SCHEMA_VERSION:
                    raise ConfigError(
                        f"[experiment] schema_version: expected {SCHEMA_VERSION}, got {version}"
                    )
                continue
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            typ = known[key]
            if isinstance(typ, str):
                typ = type_map.get(typ, str)
            sect_updates[key] = _parse_value(raw, typ, section, key)
        updates[section] = sect_updates

    cfg = ExperimentConfig()
    # Apply nested sections first, then experiment-level scalars.
    for section, sect_updates in updates.items():
        if not sect_updates:
            continue
        _, dest = _SECTIONS[section]
        if dest == ():
            cfg = dataclasses.replace(cfg, **sect_updates)
        elif dest == ("sim", "stdp"):
            cfg = dataclasses.replace(
                cfg, sim=dataclasses.replace(cfg.sim, stdp=dataclasses.replace(cfg.sim.stdp, **sect_updates))
            )
        else:
            (attr,) = dest
            cfg = dataclasses.replace(cfg, **{attr: dataclasses.replace(getattr(cfg, attr), **sect_updates)})
    validate_experiment(cfg)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize to the canonical config-file text (deterministic bytes)."""
    out = io.StringIO()
    for section, (cls, dest) in _SECTIONS.items():
        if dest == ():
            obj = cfg
        elif dest == ("sim", "stdp"):
            obj = cfg.sim.stdp
        else:
            obj = getattr(cfg, dest[0])
        out.write(f"[{section}]\n")
        if section == "experiment":
            out.write(f"schema_version = {SCHEMA_VERSION}\n")
        for f in fields(cls):
            if f.name in _NESTED_FIELDS:
                continue
            out.write(f"{f.name} = {getattr(obj, f.name)!r}\n".replace("'", ""))
        out.write("\n")
    return out.getvalue()


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_sim(cfg: SimConfig) -> None:
    _require(cfg.n_neurons > 0, f"sim.n_neurons must be positive, got {cfg.n_neurons}")
    _require(cfg.dt > 0, f"sim.dt must be > 0, got {cfg.dt}")
    _require(cfg.tau_m > 0, f"sim.tau_m must be > 0, got {cfg.tau_m}")
    _require(cfg.v_reset < cfg.v_thresh, "sim.v_reset must be below sim.v_thresh")
    _require(cfg.refractory >= 0, f"sim.refractory must be >= 0, got {cfg.refractory}")
    _require(0.0 <= cfg.w_min < cfg.w_max, "sim.w_min must satisfy 0 <= w_min < w_max")
    _require(cfg.stdp.tau_plus > 0, "stdp.tau_plus must be > 0")
    _require(cfg.stdp.tau_minus > 0, "stdp.tau_minus must be > 0")
    _require(cfg.stdp.a_plus >= 0, "stdp.a_plus must be >= 0")
    _require(cfg.stdp.a_minus >= 0, "stdp.a_minus must be >= 0")


def validate_task(spec: TaskSpec) -> None:
    _require(spec.n_classes >= 2, f"task.n_classes must be >= 2, got {spec.n_classes}")
    _require(
        spec.n_channels >= spec.n_classes,
        f"task.n_channels ({spec.n_channels}) must be >= task.n_classes ({spec.n_classes})",
    )
    _require(spec.base_rate_hz >= 0, "task.base_rate_hz must be >= 0")
    _require(
        spec.base_rate_hz < spec.peak_rate_hz,
        "task.base_rate_hz must be below task.peak_rate_hz",
    )
    _require(spec.noise_sigma >= 0, "task.noise_sigma must be >= 0")
    _require(spec.samples_per_class >= 1, "task.samples_per_class must be >= 1")


def validate_workload(cfg: WorkloadConfig) -> None:
    _require(cfg.group_size >= 1, "workload.group_size must be >= 1")
    _require(cfg.decision_margin >= 1, "workload.decision_margin must be >= 1")
    _require(cfg.window_ms > 0, "workload.window_ms must be > 0")
    _require(cfg.eval_window_ms > 0, "workload.eval_window_ms must be > 0")
    _require(0 < cfg.train_split < 1, "workload.train_split must be in (0, 1)")
    _require(cfg.train_passes >= 1, "workload.train_passes must be >= 1")


def validate_attack(spec: AttackSpec) -> None:
    _require(spec.kind in (WEIGHT_TAMPER, INPUT_POISON), f"attack.kind unknown: {spec.kind!r}")
    _require(0 < spec.fraction <= 1, f"attack.fraction must be in (0, 1], got {spec.fraction}")
    _require(spec.magnitude > 0, f"attack.magnitude must be > 0, got {spec.magnitude}")
    _require(
        spec.sign_mode in (SIGN_RANDOM, SIGN_ADVERSARIAL),
        f"attack.sign_mode unknown: {spec.sign_mode!r}",
    )
    _require(spec.stealth_budget_pp > 0, "attack.stealth_budget_pp must be > 0")
    _require(0 <= spec.sign_drift_max <= 1, "attack.sign_drift_max must be in [0, 1]")
    _require(0 <= spec.adv_fraction <= 1, "attack.adv_fraction must be in [0, 1]")


def validate_experiment(cfg: ExperimentConfig) -> None:
    validate_sim(cfg.sim)
    validate_task(cfg.task)
    validate_workload(cfg.workload)
    validate_attack(cfg.tamper)
    validate_attack(cfg.poison)
    _require(cfg.tamper.kind == WEIGHT_TAMPER, "tamper spec must have kind=weight_tamper")
    _require(cfg.poison.kind == INPUT_POISON, "poison spec must have kind=input_poison")
    _require(0 < cfg.split < 1, f"experiment.split must be in (0, 1), got {cfg.split}")
    _require(cfg.dataset_size >= 2, "experiment.dataset_size must be >= 2")
    _require(0 <= cfg.attack_ratio <= 1, "experiment.attack_ratio must be in [0, 1]")
    _require(
        cfg.n_tamper_scenarios >= 1 and cfg.n_poison_scenarios >= 1,
        "experiment scenario counts must be >= 1",
    )
    _require(cfg.n_adapt_windows >= 1, "experiment.n_adapt_windows must be >= 1")
    _require(
        0 <= cfg.tamper_adapt_index < cfg.n_adapt_windows,
        "experiment.tamper_adapt_index must index an adapt window",
    )
    _require(cfg.eval_samples >= 1, "experiment.eval_samples must be >= 1")
    _require(0 <= cfg.secure.supply_chain_fraction <= 1, "secure.supply_chain_fraction must be in [0, 1]")
    _require(cfg.secure.delta_cap > 0, "secure.delta_cap must be > 0")
    try:
        bytes.fromhex(cfg.secure.key_hex)
    except ValueError:
        raise ConfigError("secure.key_hex must be a hex string") from None
