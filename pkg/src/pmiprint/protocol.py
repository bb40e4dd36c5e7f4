"""Repeated-trial fingerprinting: per-class accuracy, best class and ownership verdict."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

from .dataset import SplitPools, member_index, sample_trial
from .errors import CapacityError, ConfigError
from .nn import MlpModel, TrainConfig, fine_tune, finetune_config, prune
from .pmi import infer_member

logger = logging.getLogger(__name__)

OWNED = "owned"
NOT_PROVEN = "not-proven"


@dataclass(frozen=True)
class ProtocolConfig:
    m: int = 3
    n: int = 100
    t: int = 100
    rho: float = 0.1
    classes: tuple[int, ...] | None = None
    base_seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ConfigError(f"need m >= 2 and n >= 2, got m={self.m}, n={self.n}")
        if self.t < 1:
            raise ConfigError(f"need t >= 1 trials, got {self.t}")
        if not 0 < self.rho <= 1 - 1 / self.m:
            raise ConfigError(f"rho must lie in (0, {1 - 1 / self.m:.4g}], got {self.rho}")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be non-negative")
        if self.classes is not None:
            object.__setattr__(self, "classes", tuple(int(r) for r in self.classes))
            if not self.classes:
                raise ConfigError("classes must be non-empty")

    def tested_classes(self, c: int) -> tuple[int, ...]:
        classes = tuple(range(c)) if self.classes is None else self.classes
        bad = [r for r in classes if not 0 <= r < c]
        if bad:
            raise ConfigError(f"classes {bad} outside [0, {c})")
        return classes


@dataclass(frozen=True)
class TrialRecord:
    cls: int
    seed: int
    predicted: int
    member: int

    @property
    def success(self) -> bool:
        return self.predicted == self.member


@dataclass(frozen=True)
class FingerprintReport:
    config: ProtocolConfig
    per_class: dict[int, float]
    trials: tuple[TrialRecord, ...] = field(default=())

    @property
    def baseline(self) -> float:
        return 1.0 / self.config.m

    @property
    def r_opt(self) -> int:
        # max over acc_r - 1/m is max over acc_r; dict order is ascending r
        return max(self.per_class, key=lambda r: (self.per_class[r], -r))

    @property
    def acc_r_opt(self) -> float:
        return self.per_class[self.r_opt]

    @property
    def margin(self) -> float:
        return self.acc_r_opt - self.baseline

    @property
    def mean_accuracy(self) -> float:
        return sum(self.per_class.values()) / len(self.per_class)

    @property
    def verdict(self) -> str:
        return OWNED if passes(self.acc_r_opt, self.config.m, self.config.rho) else NOT_PROVEN

    @property
    def mean_passes(self) -> bool:
        return passes(self.mean_accuracy, self.config.m, self.config.rho)

    @property
    def discrepancy(self) -> bool:
        """Verdict is owned but the class-averaged accuracy misses the margin."""
        return self.verdict == OWNED and not self.mean_passes

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["classes"] = list(self.config.classes) if self.config.classes is not None else None
        return {
            "config": cfg,
            "per_class": {str(r): acc for r, acc in self.per_class.items()},
            "r_opt": self.r_opt,
            "acc_r_opt": self.acc_r_opt,
            "baseline": self.baseline,
            "margin": self.margin,
            "mean_accuracy": self.mean_accuracy,
            "mean_passes": self.mean_passes,
            "discrepancy": self.discrepancy,
            "verdict": self.verdict,
            "trials": [[t.cls, t.seed, t.predicted, t.member] for t in self.trials],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> FingerprintReport:
        cfg = dict(doc["config"])
        if cfg.get("classes") is not None:
            cfg["classes"] = tuple(cfg["classes"])
        per_class = {int(r): float(a) for r, a in sorted(doc["per_class"].items(),
                                                          key=lambda kv: int(kv[0]))}
        trials = tuple(TrialRecord(*row) for row in doc.get("trials", []))
        return cls(ProtocolConfig(**cfg), per_class, trials)

    @classmethod
    def from_json(cls, text: str) -> FingerprintReport:
        return cls.from_dict(json.loads(text))

    def format_table(self) -> str:
        cfg = self.config
        lines = [
            f"m={cfg.m} n={cfg.n} t={cfg.t} rho={cfg.rho:g} base_seed={cfg.base_seed}",
            f"{'class':>5}  {'acc_r':>6}  {'acc_r-1/m':>9}",
        ]
        for r, acc in self.per_class.items():
            mark = "  <- r_opt" if r == self.r_opt else ""
            lines.append(f"{r:>5}  {acc:>6.3f}  {acc - self.baseline:>+9.3f}{mark}")
        lines += [
            f"r_opt={self.r_opt} acc_r_opt={self.acc_r_opt:.3f} 1/m={self.baseline:.3f} "
            f"margin={self.margin:+.3f}",
            f"mean acc={self.mean_accuracy:.3f} (mean criterion "
            f"{'met' if self.mean_passes else 'not met'})",
            f"verdict: {self.verdict}",
        ]
        if self.discrepancy:
            lines.append("note: best-class margin passes but the mean accuracy does not")
        return "\n".join(lines) + "\n"


def passes(acc: float, m: int, rho: float) -> bool:
    # rational arithmetic with 1e-12 slack: acc equal to 1/m + rho up to float rounding passes
    return Fraction(acc) - Fraction(1, m) >= Fraction(rho) - Fraction(1, 10**12)


def check_capacity(pools: SplitPools, classes: Sequence[int], m: int, n: int) -> None:
    for r in classes:
        p, q = len(pools.member_pool(r)), len(pools.nonmember_pool(r))
        if p < n:
            raise CapacityError(f"class {r}: |P| = {p} < n = {n}")
        if q < n * (m - 1):
            raise CapacityError(f"class {r}: |Q| = {q} < n(m-1) = {n * (m - 1)}")


def run_trials(model: MlpModel, pools: SplitPools, r: int,
               cfg: ProtocolConfig) -> list[TrialRecord]:
    records = []
    for i in range(cfg.t):
        seed = cfg.base_seed + i
        try:
            minis = sample_trial(pools, r, cfg.m, cfg.n, seed)
        except CapacityError as exc:
            raise CapacityError(f"class {r}: {exc}") from exc
        records.append(TrialRecord(r, seed, infer_member(model, minis, seed),
                                   member_index(minis)))
    return records


def run_class(model: MlpModel, pools: SplitPools, r: int, cfg: ProtocolConfig) -> float:
    records = run_trials(model, pools, r, cfg)
    return sum(rec.success for rec in records) / cfg.t


def run_all(model: MlpModel, pools: SplitPools, cfg: ProtocolConfig) -> FingerprintReport:
    classes = cfg.tested_classes(pools.c)
    check_capacity(pools, classes, cfg.m, cfg.n)
    per_class, trials = {}, []
    for r in classes:
        records = run_trials(model, pools, r, cfg)
        per_class[r] = sum(rec.success for rec in records) / cfg.t
        trials.extend(records)
        logger.info("class %d: acc %.3f", r, per_class[r])
    return FingerprintReport(cfg, dict(sorted(per_class.items())),
                             tuple(sorted(trials, key=lambda t: (t.cls, t.seed))))


@dataclass(frozen=True)
class FineTuneAttack:
    fraction: float = 0.2
    train: TrainConfig | None = None
    seed: int = 0


@dataclass(frozen=True)
class PruneAttack:
    rate: float


def apply_attack(model: MlpModel, pools: SplitPools, attack, base: TrainConfig | None = None):
    """Returns the attacked model and the pools the fingerprint should use."""
    if isinstance(attack, PruneAttack):
        return prune(model, attack.rate), pools
    if isinstance(attack, FineTuneAttack):
        cfg = attack.train or finetune_config(base or TrainConfig())
        return fine_tune(model, pools, attack.fraction, cfg, attack.seed)
    raise ConfigError(f"unknown attack {attack!r}")


def run_attacked(model: MlpModel, pools: SplitPools, cfg: ProtocolConfig, attack,
                 base: TrainConfig | None = None) -> FingerprintReport:
    """Attack, then fingerprint again with the best class re-chosen from scratch."""
    attacked, attacked_pools = apply_attack(model, pools, attack, base)
    return run_all(attacked, attacked_pools, cfg)
