"""Desk-scale predictability check on synthetic universes.

One run writes a one-ticker universe of 31 weeks (one warm-up week plus six
five-week windows), trains the benchmark and a tiny deepLOB(L2) at a short
horizon and reports the benchmark's MCS p-value.  With imbalance feedback on,
the planted signal should get the benchmark excluded; with feedback off it
should survive.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

from ..nn.train import TrainConfig
from .experiment import ExperimentConfig, ExperimentResult, run_experiment
from .synth import SynthSpec, synth_universe
from .windows import business_days

SURROGATE_TICKER = "SYN"
SURROGATE_WEEKS = 31
SURROGATE_FEEDBACK = 1.0

# Tiny dims and a short schedule.  The optimiser uses the conventional small
# epsilon: with eps = 1 and a few thousand samples, updates are too small to
# move the weights within ten epochs.
SURROGATE_TRAIN = TrainConfig(lr=0.01, eps=1e-7, batch_size=64, epochs=10, patience=3)


def surrogate_synth(seed: int, feedback: float) -> SynthSpec:
    """About 1500 events per session."""
    return SynthSpec(event_rate=1500 / 23400, seed=seed, feedback=feedback)


def surrogate_config(root: str | os.PathLike, seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        tickers=(SURROGATE_TICKER,),
        horizons=(10,),
        models=(("benchmark", None, "single"), ("deepLOB", "L2", "single")),
        T=10,
        W=10,
        channels=4,
        hidden=8,
        train=replace(SURROGATE_TRAIN, seed=seed),
        seed=seed,
        subsample=10,
        warmup_weeks=1,
        B=1000,
        data_root=str(root),
    )


@dataclass(frozen=True)
class SurrogateOutcome:
    seed: int
    feedback: float
    pvalue: float
    excluded: bool
    result: ExperimentResult


def run_surrogate(workdir: str | os.PathLike, seed: int, feedback: float = SURROGATE_FEEDBACK,
                  alpha: float = 0.05, start: str = "2019-01-07") -> SurrogateOutcome:
    """Generate (if absent) and evaluate one synthetic universe."""
    root = Path(workdir) / f"fb{feedback:g}_seed{seed}"
    if not root.exists():
        dates = business_days(start, 5 * SURROGATE_WEEKS)
        synth_universe(root, [SURROGATE_TICKER], dates, surrogate_synth(seed, feedback))
    result = run_experiment(surrogate_config(root, seed))
    p = result.benchmark_pvalue(SURROGATE_TICKER, 10)
    return SurrogateOutcome(seed, feedback, p, p < alpha, result)
