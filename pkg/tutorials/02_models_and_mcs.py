"""Train small classifiers on a synthetic universe and compare them with the MCS.

Run with ``python tutorials/02_models_and_mcs.py``; takes a couple of minutes.
"""

# %% Data: one ticker, eleven weeks (a warm-up week plus two five-week windows)
import tempfile
from pathlib import Path

import numpy as np

from lobpredict.harness.experiment import ExperimentConfig, run_experiment
from lobpredict.harness.report import emit_report
from lobpredict.harness.synth import SynthSpec, synth_universe
from lobpredict.harness.windows import business_days
from lobpredict.mcs import LossPanel, mcs_run
from lobpredict.nn.model import ModelSpec, check_shapes
from lobpredict.nn.train import TrainConfig

work = Path(tempfile.mkdtemp())
synth_universe(work / "data", ["SYN"], business_days("2019-01-07", 55), SynthSpec(event_rate=0.05, seed=2, feedback=1.0))

# %% Architectures at full size: the shape trace of deepLOB on 100 x 40 inputs
for layer, shape in check_shapes(ModelSpec("deepLOB", "L2")):
    print(f"{layer:>10} -> {shape}")

# %% A run with tiny models and a short schedule
cfg = ExperimentConfig(
    tickers=("SYN",),
    horizons=(10, 50),
    models=(("benchmark", None, "single"), ("deepLOB", "L2", "single"), ("deepVOL", "L2", "single")),
    T=10, W=10, channels=4, hidden=8,
    train=TrainConfig(eps=1e-7, batch_size=64, epochs=5, patience=2),
    B=1000, block=1,  # only two windows here, so resample single windows
    data_root=str(work / "data"),
)
result = run_experiment(cfg)
for (ticker, h), panel in result.panels.items():
    print(f"h={h}: mean test cross-entropy", {m: round(float(v), 4) for m, v in zip(panel.models, panel.losses.mean(axis=1))})
    if (ticker, h) in result.mcs:
        print("       MCS p-values", result.mcs[(ticker, h)].pvalues)

for path in emit_report(result, work / "report"):
    print("wrote", path)

# %% The MCS on its own: five models, the first clearly best
rng = np.random.default_rng(0)
losses = np.array([0.0, 0.3, 0.3, 0.4, 1.0])[:, None] + rng.normal(size=(5, 60))
res = mcs_run(LossPanel(["best", "a", "b", "c", "poor"], losses), B=2000)
print("elimination order:", res.order)
print("90% set:", res.included(0.10), " 99% set:", res.included(0.01))
