"""Shipped experiment profiles.

``full`` reproduces the headline protocol: 1000 neurons, 1000 attack
scenarios, a 10,000-window telemetry dataset. ``desk`` is a small profile
for CI and quick iteration: the hard properties and orderings hold there,
while the numeric calibration bands are only checked on ``full``.

The constants below are the output of the shipped calibration procedure
(scripts/tune_defaults.py, scripts/explore_attacks.py, and `spikesec
calibrate`); they are what makes the default runs land in the documented
bands.
"""

from __future__ import annotations

from .config import (AttackSpec, DetectorConfig, ExperimentConfig, INPUT_POISON,
                     SecureConfig, SimConfig, StdpConfig, TaskSpec, WEIGHT_TAMPER,
                     WorkloadConfig)

PROFILES = ("desk", "full")


def full_profile(root_seed: int = 42) -> ExperimentConfig:
    return ExperimentConfig(
        sim=SimConfig(
            n_neurons=1000, dt=0.1, tau_m=20.0, v_rest=0.0, v_reset=0.0,
            v_thresh=60.0, refractory=1.0,
            stdp=StdpConfig(a_plus=3.9e-5, a_minus=3.6e-5,
                            tau_plus=20.0, tau_minus=20.0),
            w_min=0.0, w_max=1.0, seed=root_seed,
        ),
        task=TaskSpec(
            n_classes=5, n_channels=250, base_rate_hz=60.0, peak_rate_hz=700.0,
            noise_sigma=30.0, samples_per_class=12, seed=root_seed,
        ),
        workload=WorkloadConfig(
            group_size=80, decision_margin=2, input_charge=65.0, bg_current=1.7,
            teacher_current=22.0, readout_bias=0.0, window_ms=1000.0,
            eval_window_ms=100.0, train_passes=1, probe_repeats=2,
            train_split=0.7, settle_ms=300.0,
        ),
        tamper=AttackSpec(kind=WEIGHT_TAMPER, fraction=0.10, magnitude=0.1,
                          sign_mode="adversarial", adv_fraction=0.6,
                          sign_drift_max=1.0, seed=root_seed + 1),
        poison=AttackSpec(kind=INPUT_POISON, fraction=0.05, magnitude=0.1,
                          sign_mode="adversarial", seed=root_seed + 2),
        detectors=DetectorConfig(target_fpr=0.10, ids_prestudy_windows=200,
                                 ids_k_sigma=3.0),
        secure=SecureConfig(supply_chain_fraction=0.30, delta_cap=0.004),
        n_tamper_scenarios=500, n_poison_scenarios=500,
        split=0.7, dataset_size=10000, attack_ratio=0.5,
        n_adapt_windows=1, tamper_adapt_index=0, eval_samples=250,
        root_seed=root_seed, output_dir="out",
    )


def desk_profile(root_seed: int = 42) -> ExperimentConfig:
    """CI-scale profile: ~150 neurons, 100 scenarios, small dataset."""
    full = full_profile(root_seed)
    return ExperimentConfig(
        sim=SimConfig(
            n_neurons=150, dt=0.1, tau_m=20.0, v_rest=0.0, v_reset=0.0,
            v_thresh=30.0, refractory=1.0,
            stdp=StdpConfig(a_plus=3.4e-5, a_minus=3.13e-5,
                            tau_plus=20.0, tau_minus=20.0),
            w_min=0.0, w_max=1.0, seed=root_seed,
        ),
        task=TaskSpec(
            n_classes=5, n_channels=40, base_rate_hz=60.0, peak_rate_hz=700.0,
            noise_sigma=60.0, samples_per_class=11, seed=root_seed,
        ),
        workload=WorkloadConfig(
            group_size=14, decision_margin=2, input_charge=35.0, bg_current=1.5,
            teacher_current=12.0, readout_bias=0.0, window_ms=1000.0,
            eval_window_ms=100.0, train_passes=7, probe_repeats=2,
            train_split=0.7, settle_ms=300.0,
        ),
        tamper=full.tamper, poison=full.poison,
        detectors=DetectorConfig(target_fpr=0.10, ids_prestudy_windows=60,
                                 ids_k_sigma=3.0),
        secure=full.secure,
        n_tamper_scenarios=50, n_poison_scenarios=50,
        split=0.7, dataset_size=400, attack_ratio=0.5,
        n_adapt_windows=1, tamper_adapt_index=0, eval_samples=60,
        root_seed=root_seed, output_dir="out",
    )


def get_profile(name: str, root_seed: int = 42) -> ExperimentConfig:
    if name == "full":
        return full_profile(root_seed)
    if name == "desk":
        return desk_profile(root_seed)
    raise ValueError(f"unknown profile {name!r}; choose from {PROFILES}")
