"""From raw messages to model inputs on one synthetic session.

Run with ``python tutorials/01_book_and_features.py``; takes a few seconds.
"""

# %% A synthetic LOBSTER session with imbalance feedback
import numpy as np

from lobpredict import features as F
from lobpredict.book import ASK, BID, iter_replay, replay_reconcile
from lobpredict.harness.synth import SynthSpec, synth_generate
from lobpredict.ingest import clean_session
from lobpredict.labels import PAPER, ReturnSpec, alpha_hat, classify, return_series

messages, snapshots = synth_generate(SynthSpec(event_rate=0.2, seed=7, feedback=0.5))
print(f"{len(messages)} messages, first: {messages[0]}")

# %% Replaying the messages rebuilds the order-level book; every snapshot must agree
report = replay_reconcile(messages, snapshots)
print(f"reconciled: {report.matched} over {report.events} events")

for i, state in iter_replay(messages, snapshots):
    if i == 500:
        best = state.best_ask
        print("best ask", best / 1e4, "queue (order id, size):", state.queue(ASK, best)[:4])
        print("queue slots with depth 3:", state.queue_slots(ASK, best, 3))
        break

# %% Cleaning drops the open/close edges and collapses same-timestamp bursts
session = clean_session(messages, snapshots, date="2019-01-07")
print(f"{len(session)} events after cleaning, flags {session.flags}")

# %% Per-event frames, then one window of each representation
frames = F.materialize(session, levels=10, window=20, depth=5, tick=100, with_l3=True)
days = [frames] * 6  # a real run uses the five previous sessions for normalisation
lob_stats = F.lob_stats(days)[5]
of_stats = F.order_flow_stats(days)[5]

t, T = 400, 100
for name, window in (
    ("raw LOB", F.build_raw_lob(frames, t, T, lob_stats)),
    ("order flow", F.build_order_flow(frames, t, T, of_stats)),
    ("volume", F.build_volume(frames, t, T)),
    ("volume L3", F.build_volume(frames, t, T, depth=5)),
):
    print(f"{name:>10}: shape {window.data.shape}, range [{window.data.min():.2f}, {window.data.max():.2f}]")

# %% Smoothed returns and three-class labels
spec = ReturnSpec(PAPER, horizon=20, k=5)
r = return_series(frames.mid, spec)
r = r[~np.isnan(r)]
threshold = alpha_hat(r, horizon=20)
labels = classify(r, threshold.alpha)
print(f"alpha = {threshold.alpha:.2e}; class shares (down, flat, up) =", np.bincount(labels, minlength=3) / len(r))
