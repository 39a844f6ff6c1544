"""Deterministic spiking-network security workbench.

Simulates a leaky integrate-and-fire network with STDP learning, runs
covert weight-tampering and input-poisoning attacks against a synthetic
sensor-classification workload, extracts neural telemetry, and evaluates
three defenses (statistical anomaly detection, a static-threshold IDS
baseline, and a MAC-signed hash-chained synaptic update log).
"""

__version__ = "0.1.0"
