"""Laplace sampling, mechanism calibration and privacy-budget accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import CalibrationError, DataError

__all__ = [
    "PrivacyBudget",
    "LaplaceNoiseSpec",
    "MechanismRecord",
    "PrivacyLedger",
    "make_rng",
    "sample_laplace",
    "laplace_noise",
    "laplace_mechanism",
    "sigmoid_encoder_sensitivity",
    "compose_simple",
    "compose_advanced",
    "pipeline_budget",
    "pipeline_budget_advanced",
    "format_ledger",
    "parse_ledger",
]


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise CalibrationError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise CalibrationError(f"delta must lie in [0, 1), got {self.delta}")

    def __add__(self, other: PrivacyBudget) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon + other.epsilon, self.delta + other.delta)


@dataclass(frozen=True)
class LaplaceNoiseSpec:
    scale_b: float

    def __post_init__(self):
        if not self.scale_b > 0 or not math.isfinite(self.scale_b):
            raise CalibrationError(f"Laplace scale must be positive and finite, got {self.scale_b}")

    @classmethod
    def calibrate(cls, sensitivity: float, epsilon: float) -> LaplaceNoiseSpec:
        """Scale for an epsilon-DP Laplace mechanism with the given l1-sensitivity."""
        if not sensitivity > 0:
            raise CalibrationError(f"sensitivity must be positive, got {sensitivity}")
        if not epsilon > 0:
            raise CalibrationError(f"epsilon must be positive, got {epsilon}")
        return cls(sensitivity / epsilon)


@dataclass(frozen=True)
class MechanismRecord:
    name: str
    per_invocation_epsilon: float
    invocations: int = 1

    def __post_init__(self):
        if not self.per_invocation_epsilon > 0:
            raise CalibrationError(f"{self.name}: epsilon must be positive")
        if int(self.invocations) != self.invocations or self.invocations < 1:
            raise CalibrationError(f"{self.name}: invocations must be a positive integer")
        if "," in self.name or "\n" in self.name:
            raise DataError(f"mechanism name may not contain ',' or newlines: {self.name!r}")


@dataclass(frozen=True)
class PrivacyLedger:
    records: tuple[MechanismRecord, ...] = ()
    delta_budget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not 0.0 <= self.delta_budget < 1.0:
            raise CalibrationError(f"delta_budget must lie in [0, 1), got {self.delta_budget}")

    def add(self, name: str, epsilon: float, invocations: int = 1) -> PrivacyLedger:
        rec = MechanismRecord(name, float(epsilon), int(invocations))
        return PrivacyLedger(self.records + (rec,), self.delta_budget)

    def simple_total(self) -> float:
        return compose_simple(self)

    def advanced_total(self) -> PrivacyBudget:
        """Per-record advanced composition, summed component-wise.

        Records whose bound falls back to the linear branch stay pure and
        contribute no delta.
        """
        if not self.records:
            raise DataError("cannot compose an empty ledger")
        if self.delta_budget <= 0:
            return PrivacyBudget(self.simple_total(), 0.0)
        eps = 0.0
        delta = 0.0
        for rec in self.records:
            linear = rec.per_invocation_epsilon * rec.invocations
            adv = compose_advanced(rec.per_invocation_epsilon, rec.invocations, self.delta_budget)
            if adv < linear:
                eps += adv
                delta += self.delta_budget
            else:
                eps += linear
        return PrivacyBudget(eps, delta)


def make_rng(seed: int | None = None, stream: int = 0, mode: str = "test") -> np.random.Generator:
    """Counter-based (Philox) generator.

    ``mode="test"`` requires a seed and is reproducible per ``(seed, stream)``;
    ``mode="deploy"`` ignores the seed and draws its key from OS entropy.
    """
    if mode == "deploy":
        return np.random.Generator(np.random.Philox())
    if mode != "test":
        raise ValueError(f"unknown rng mode {mode!r}")
    if seed is None:
        raise ValueError("test-mode rng needs a seed")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    # uniform on the open interval (-1/2, 1/2); -1/2 would map to -inf
    u = rng.random(size) - 0.5
    bad = u <= -0.5
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum())) - 0.5
        bad = u <= -0.5
    return u


def laplace_noise(scale_b: float, size, rng: np.random.Generator) -> np.ndarray:
    """Array of Laplace(0, scale_b) draws via the inverse CDF."""
    scale_b = LaplaceNoiseSpec(float(scale_b)).scale_b
    u = _open_uniform(rng, size)
    return -scale_b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_laplace(scale_b: float, rng: np.random.Generator) -> float:
    return float(laplace_noise(scale_b, 1, rng)[0])


def laplace_mechanism(v, sensitivity: float, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Release ``v`` with per-entry Laplace noise calibrated to ``sensitivity / epsilon``."""
    spec = LaplaceNoiseSpec.calibrate(sensitivity, epsilon)
    v = np.asarray(v, dtype=np.float64)
    return v + laplace_noise(spec.scale_b, v.shape, rng)


def sigmoid_encoder_sensitivity(channels_C: int, length_K: int) -> float:
    """l1-sensitivity of a C x K latent whose entries are confined to [0, 1]."""
    if int(channels_C) != channels_C or int(length_K) != length_K:
        raise CalibrationError("latent dimensions must be integers")
    if channels_C < 1 or length_K < 1:
        raise CalibrationError(f"latent dimensions must be positive, got C={channels_C}, K={length_K}")
    return float(channels_C * length_K)


def compose_simple(ledger: PrivacyLedger | Iterable[MechanismRecord]) -> float:
    records = ledger.records if isinstance(ledger, PrivacyLedger) else tuple(ledger)
    if not records:
        raise DataError("cannot compose an empty ledger")
    return float(sum(r.per_invocation_epsilon * r.invocations for r in records))


def compose_advanced(epsilon: float, k: int, delta: float) -> float:
    """Tightest of the three k-fold composition bounds for epsilon-DP mechanisms.

    Returns min(k*eps,
                k*eps*tanh(eps/2) + eps*sqrt(2k*ln(e + sqrt(k*eps^2)/delta)),
                k*eps*tanh(eps/2) + eps*sqrt(2k*ln(1/delta))).
    The result holds as (result, delta)-DP; callers wanting integers should floor.
    """
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise CalibrationError(f"epsilon must be positive and finite, got {epsilon}")
    if int(k) != k or k < 1:
        raise CalibrationError(f"k must be a positive integer, got {k}")
    if not 0.0 < delta < 1.0:
        raise CalibrationError(f"delta must lie in (0, 1), got {delta}")
    k = int(k)
    # (e^eps - 1)/(e^eps + 1) == tanh(eps/2); tanh avoids overflow for large eps
    drift = k * epsilon * math.tanh(epsilon / 2.0)
    b1 = k * epsilon
    b2 = drift + epsilon * math.sqrt(2 * k * math.log(math.e + math.sqrt(k * epsilon**2) / delta))
    b3 = drift + epsilon * math.sqrt(2 * k * math.log(1.0 / delta))
    return min(b1, b2, b3)


def pipeline_budget(epsilon_pitch: float, epsilon_bn_frame: float, K: int) -> PrivacyBudget:
    """Utterance-level budget of the pitch release plus K frame-level BN releases."""
    ledger = _pipeline_ledger(epsilon_pitch, epsilon_bn_frame, K, 0.0)
    return PrivacyBudget(ledger.simple_total(), 0.0)


def pipeline_budget_advanced(
    epsilon_pitch: float, epsilon_bn_frame: float, K: int, delta: float
) -> PrivacyBudget:
    if not 0.0 < delta < 1.0:
        raise CalibrationError(f"delta must lie in (0, 1), got {delta}")
    return _pipeline_ledger(epsilon_pitch, epsilon_bn_frame, K, delta).advanced_total()


def _pipeline_ledger(eps1: float, eps2: float, K: int, delta: float) -> PrivacyLedger:
    if int(K) != K or K < 1:
        raise CalibrationError(f"K must be a positive integer, got {K}")
    return PrivacyLedger(delta_budget=delta).add("pitch", eps1, 1).add("bn_frame", eps2, int(K))


LEDGER_HEADER = "dpledger v1"


def format_ledger(ledger: PrivacyLedger) -> str:
    lines = [f"{LEDGER_HEADER} delta={ledger.delta_budget!r}"]
    for r in ledger.records:
        lines.append(f"{r.name},{r.per_invocation_epsilon!r},{r.invocations}")
    return "\n".join(lines) + "\n"


def parse_ledger(text: str) -> PrivacyLedger:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(LEDGER_HEADER + " delta="):
        raise DataError(f"ledger: expected header '{LEDGER_HEADER} delta=<float>' on line 1")
    try:
        delta = float(lines[0][len(LEDGER_HEADER) + len(" delta="):])
    except ValueError as exc:
        raise DataError(f"ledger: bad delta on line 1: {exc}") from None
    records: list[MechanismRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"ledger line {lineno}: expected 'name,epsilon,invocations'")
        try:
            records.append(MechanismRecord(parts[0], float(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise DataError(f"ledger line {lineno}: {exc}") from None
    return PrivacyLedger(tuple(records), delta)
