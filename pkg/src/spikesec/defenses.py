"""The three defenses.

* A multivariate anomaly detector over the window telemetry (squared
  Mahalanobis distance against the normal-operation distribution, with an
  empirical-quantile threshold at a target false-positive rate).
* A static-threshold IDS baseline that watches only externally observable
  metrics (spike frequency, latency) with fixed 3-sigma bounds from a
  coarse pre-study; deliberately blind to synaptic telemetry.
* Cryptographically verified synaptic learning: a MAC-signed, hash-chained
  append-only log of weight updates. Replay rejects anything unsigned,
  unchained, foreign-origin, or outside the per-update magnitude policy.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, UsageError
from .network import NetworkState
from .telemetry import WindowMetrics

__all__ = [
    "AnomalyModel", "fit_anomaly", "detect", "roc_points",
    "IdsRuleSet", "fit_ids_rules", "ids_detect",
    "UpdateRecord", "SecureLog", "SecurePolicy", "verify_records",
    "secure_verify_and_apply", "filter_net_updates",
    "DetectorEval", "evaluate_detector",
]

FEATURES = ("spike_frequency_hz", "weight_change_pct", "latency_ms")
ORIGIN_STDP = "stdp"
ORIGIN_EXTERNAL = "external"
_ORIGIN_CODE = {ORIGIN_STDP: 0, ORIGIN_EXTERNAL: 1}
_ORIGIN_NAME = {v: k for k, v in _ORIGIN_CODE.items()}
GENESIS = b"\x00" * 32

# ---------------------------------------------------------------------------
# Anomaly detection


@dataclass(frozen=True)
class AnomalyModel:
    mean: np.ndarray  # (3,)
    cov: np.ndarray  # (3, 3), regularized
    cov_inv: np.ndarray
    threshold: float  # squared-Mahalanobis cutoff
    target_fpr: float

    def score(self, window: WindowMetrics) -> float:
        d = window.vector() - self.mean
        return float(d @ self.cov_inv @ d)

    def flag(self, window: WindowMetrics) -> bool:
        return self.score(window) > self.threshold

    def to_json(self) -> str:
        return json.dumps({
            "features": list(FEATURES),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "threshold": self.threshold,
            "target_fpr": self.target_fpr,
        }, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "AnomalyModel":
        obj = json.loads(text)
        cov = np.array(obj["cov"])
        return AnomalyModel(mean=np.array(obj["mean"]), cov=cov,
                            cov_inv=np.linalg.inv(cov),
                            threshold=float(obj["threshold"]),
                            target_fpr=float(obj["target_fpr"]))


def fit_anomaly(windows, target_fpr: float = 0.10) -> AnomalyModel:
    """Fit mean/covariance on normal windows; threshold at the empirical
    (1 - target_fpr) quantile of the training scores."""
    if len(windows) < 30:
        raise UsageError(f"fit_anomaly needs >= 30 normal windows, got {len(windows)}")
    if not 0.0 < target_fpr < 1.0:
        raise UsageError(f"target_fpr must be in (0, 1), got {target_fpr}")
    x = np.array([w.vector() for w in windows])
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1)
    d = cov.shape[0]
    cov = cov + np.eye(d) * (1e-6 * np.trace(cov) / d)
    try:
        cov_inv = np.linalg.inv(cov)
        if not np.all(np.isfinite(cov_inv)):
            raise np.linalg.LinAlgError("non-finite inverse")
    except np.linalg.LinAlgError as exc:
        raise FitError(f"degenerate covariance after regularization: {exc}") from exc
    centered = x - mean
    scores = np.einsum("ij,jk,ik->i", centered, cov_inv, centered)
    threshold = float(np.quantile(scores, 1.0 - target_fpr))
    if threshold <= 0:
        raise FitError("threshold collapsed to zero; training windows degenerate")
    return AnomalyModel(mean=mean, cov=cov, cov_inv=cov_inv,
                        threshold=threshold, target_fpr=target_fpr)


def detect(model: AnomalyModel, window: WindowMetrics) -> tuple[float, bool]:
    """Squared Mahalanobis score and the strict-threshold flag."""
    score = model.score(window)
    return score, score > model.threshold


def roc_points(model: AnomalyModel, windows, labels) -> list[tuple[float, float]]:
    """(FPR %, detection %) pairs from a threshold sweep over the scores."""
    scores = np.array([model.score(w) for w in windows])
    y = np.asarray(labels, dtype=bool)
    if y.all() or not y.any():
        raise UsageError("ROC sweep needs both classes")
    points = []
    for thr in [-np.inf] + sorted(scores.tolist()) + [np.inf]:
        flagged = scores > thr
        fpr = 100.0 * (flagged & ~y).sum() / (~y).sum()
        tpr = 100.0 * (flagged & y).sum() / y.sum()
        points.append((float(fpr), float(tpr)))
    return sorted(set(points), reverse=True)


# ---------------------------------------------------------------------------
# Static-threshold IDS baseline


@dataclass(frozen=True)
class IdsRuleSet:
    """Fixed per-feature (lo, hi) bounds; None means the feature is not
    monitored (the baseline cannot see synaptic internals)."""

    bounds: tuple  # one (lo, hi) | None per feature in FEATURES order

    def __post_init__(self):
        for b in self.bounds:
            if b is not None and not b[0] < b[1]:
                raise UsageError(f"IDS bound {b} must satisfy lo < hi")


def fit_ids_rules(windows, k_sigma: float = 3.0,
                  monitored=(0, 2)) -> IdsRuleSet:
    """Mean +- k*sigma bounds from a coarse pre-study sample.

    By default only spike frequency and latency are monitored: a
    traditional IDS sees system-level signals, not synaptic state.
    """
    if len(windows) < 2:
        raise UsageError("fit_ids_rules needs at least 2 pre-study windows")
    x = np.array([w.vector() for w in windows])
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    bounds = []
    for k in range(x.shape[1]):
        if k in monitored:
            bounds.append((float(mean[k] - k_sigma * sd[k]),
                           float(mean[k] + k_sigma * sd[k])))
        else:
            bounds.append(None)
    return IdsRuleSet(bounds=tuple(bounds))


def ids_detect(rules: IdsRuleSet, window: WindowMetrics) -> bool:
    """Flag iff any monitored feature falls outside its static bounds."""
    vec = window.vector()
    for value, bound in zip(vec, rules.bounds):
        if bound is not None and not bound[0] <= value <= bound[1]:
            return True
    return False


# ---------------------------------------------------------------------------
# Secure synaptic learning protocol

_CORE = struct.Struct("<QIIddB")  # seq, i, j, delta_w, t_sim, origin


@dataclass(frozen=True)
class UpdateRecord:
    seq: int
    i: int
    j: int
    delta_w: float
    t_sim: float
    origin: str
    prev_hash: bytes  # 32 bytes, chains to the previous record
    mac: bytes  # 32-byte keyed tag over core fields + prev_hash

    def core_bytes(self) -> bytes:
        return _CORE.pack(self.seq, self.i, self.j, self.delta_w, self.t_sim,
                          _ORIGIN_CODE[self.origin]) + self.prev_hash

    def record_bytes(self) -> bytes:
        return self.core_bytes() + self.mac

    def record_hash(self) -> bytes:
        return hashlib.blake2b(self.record_bytes(), digest_size=32).digest()


def _mac(core: bytes, key: bytes) -> bytes:
    return hashlib.blake2b(core, digest_size=32, key=key).digest()


@dataclass
class SecureLog:
    """Append-only MAC-signed hash chain of synaptic updates."""

    records: list = field(default_factory=list)

    def last_hash(self) -> bytes:
        return self.records[-1].record_hash() if self.records else GENESIS

    def append(self, i: int, j: int, delta_w: float, t_sim: float,
               origin: str, key: bytes) -> UpdateRecord:
        if origin not in _ORIGIN_CODE:
            raise UsageError(f"unknown update origin {origin!r}")
        seq = self.records[-1].seq + 1 if self.records else 1
        prev = self.last_hash()
        core = _CORE.pack(seq, i, j, delta_w, t_sim, _ORIGIN_CODE[origin]) + prev
        rec = UpdateRecord(seq=seq, i=i, j=j, delta_w=delta_w, t_sim=t_sim,
                           origin=origin, prev_hash=prev, mac=_mac(core, key))
        self.records.append(rec)
        return rec

    def append_unkeyed(self, i: int, j: int, delta_w: float, t_sim: float,
                       origin: str = ORIGIN_EXTERNAL) -> UpdateRecord:
        """What an attacker without the session key can do: a structurally
        valid, correctly chained record with a forged (unverifiable) tag."""
        seq = self.records[-1].seq + 1 if self.records else 1
        rec = UpdateRecord(seq=seq, i=i, j=j, delta_w=delta_w, t_sim=t_sim,
                           origin=origin, prev_hash=self.last_hash(),
                           mac=b"\x00" * 32)
        self.records.append(rec)
        return rec

    def to_bytes(self) -> bytes:
        out = bytearray()
        for rec in self.records:
            payload = rec.record_bytes()
            out += struct.pack("<I", len(payload)) + payload
        return bytes(out)

    @staticmethod
    def from_bytes(blob: bytes) -> "SecureLog":
        records = []
        off = 0
        while off < len(blob):
            (length,) = struct.unpack_from("<I", blob, off)
            off += 4
            payload = blob[off:off + length]
            if len(payload) != length:
                raise UsageError("truncated secure log")
            off += length
            core, mac = payload[:-32], payload[-32:]
            seq, i, j, delta_w, t_sim, origin = _CORE.unpack(core[:_CORE.size])
            prev_hash = core[_CORE.size:]
            if len(prev_hash) != 32 or origin not in _ORIGIN_NAME:
                raise UsageError("malformed secure log record")
            records.append(UpdateRecord(seq=seq, i=i, j=j, delta_w=delta_w,
                                        t_sim=t_sim, origin=_ORIGIN_NAME[origin],
                                        prev_hash=prev_hash, mac=mac))
        return SecureLog(records=records)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @staticmethod
    def load(path: str) -> "SecureLog":
        with open(path, "rb") as fh:
            return SecureLog.from_bytes(fh.read())


@dataclass(frozen=True)
class SecurePolicy:
    """What a verified-learning replay accepts besides a valid MAC/chain."""

    delta_cap: float = np.inf  # max |delta_w| per record
    accept_origins: tuple = (ORIGIN_STDP,)


@dataclass
class VerifyResult:
    accepted: list
    rejected: list  # (record, reason) pairs
    alarm: bool  # tamper evidence: broken chain or bad tag


def verify_records(log: SecureLog, key: bytes,
                   policy: SecurePolicy | None = None) -> VerifyResult:
    """Walk the chain; split records into accepted and rejected.

    A MAC or chain failure is tamper evidence: it raises the alarm and
    rejects everything from the failure onward (later records commit to
    the damaged prefix, so nothing after it is trustworthy). Policy
    rejections (foreign origin, oversized update) drop single records.
    """
    policy = policy or SecurePolicy()
    result = VerifyResult(accepted=[], rejected=[], alarm=False)
    expected_prev = GENESIS
    expected_seq = None
    for k, rec in enumerate(log.records):
        chain_ok = (rec.prev_hash == expected_prev
                    and (expected_seq is None or rec.seq == expected_seq))
        mac_ok = hmac_mod.compare_digest(rec.mac, _mac(rec.core_bytes(), key))
        if not chain_ok or not mac_ok:
            result.alarm = True
            reason = "chain break" if not chain_ok else "bad mac"
            for later in log.records[k:]:
                result.rejected.append((later, reason))
            return result
        expected_prev = rec.record_hash()
        expected_seq = rec.seq + 1
        if rec.origin not in policy.accept_origins:
            result.rejected.append((rec, "origin not accepted"))
        elif abs(rec.delta_w) > policy.delta_cap:
            result.rejected.append((rec, "delta exceeds policy cap"))
        else:
            result.accepted.append(rec)
    return result


def secure_verify_and_apply(state: NetworkState, log: SecureLog, key: bytes,
                            policy: SecurePolicy | None = None,
                            w_min: float = 0.0, w_max: float = 1.0):
    """Replay the log onto ``state``: only verified updates are applied.

    Returns (state, VerifyResult). Accepted deltas apply in seq order with
    clamping; everything else is left exactly as it was.
    """
    result = verify_records(log, key, policy)
    w = state.weights
    for rec in result.accepted:
        w[rec.i, rec.j] = min(max(w[rec.i, rec.j] + rec.delta_w, w_min), w_max)
    return state, result


def filter_net_updates(w_before: np.ndarray, w_after: np.ndarray,
                       delta_cap: float) -> tuple[np.ndarray, int]:
    """Policy-equivalent fast path for whole-window STDP batches.

    The chip signs one net update per touched synapse per window; replay
    accepts those within the magnitude cap. This applies the identical
    acceptance rule vectorized, returning the verified weight matrix and
    the number of rejected updates. Equivalence with the record-level
    replay is pinned by tests.
    """
    delta = w_after - w_before
    reject = np.abs(delta) > delta_cap
    out = np.where(reject, w_before, w_after)
    return out, int(np.count_nonzero(reject & (delta != 0.0)))


# ---------------------------------------------------------------------------
# Detector evaluation


@dataclass(frozen=True)
class DetectorEval:
    detection_accuracy_pct: float  # attack windows flagged
    false_positive_rate_pct: float  # normal windows flagged
    n_attack: int
    n_normal: int


def evaluate_detector(flag_fn, windows, labels) -> DetectorEval:
    """Detection rate on attack windows and FPR on normal windows."""
    y = np.asarray(labels, dtype=bool)
    if len(windows) != len(y) or len(windows) == 0:
        raise UsageError("windows/labels must be non-empty and aligned")
    if y.all() or not y.any():
        raise UsageError("evaluation needs both normal and attack windows")
    flags = np.array([bool(flag_fn(w)) for w in windows])
    return DetectorEval(
        detection_accuracy_pct=100.0 * (flags & y).sum() / y.sum(),
        false_positive_rate_pct=100.0 * (flags & ~y).sum() / (~y).sum(),
        n_attack=int(y.sum()), n_normal=int((~y).sum()),
    )
