"""Command line entry point: ``lobpredict <subcommand> ...``.

Data locations default to ``$LOBPREDICT_DATA`` when ``--root`` is omitted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import features as F
from .book import replay_reconcile
from .harness.data import data_root, discover, prepare_ticker, read_dataset, write_dataset, write_frames
from .harness.experiment import ExperimentConfig, run_experiment, run_universal, valid_anchors
from .harness.report import emit_report
from .harness.synth import SynthSpec, synth_universe
from .harness.windows import business_days
from .ingest import clean_session, parse_session
from .labels import ReturnSpec, alpha_hat, classify, return_series
from .mcs import LossPanel, mcs_run, window_loss
from .nn.model import ModelSpec, predict_proba
from .nn.train import TrainConfig, load_checkpoint, save_checkpoint, train_model

logger = logging.getLogger("lobpredict")


def _ingest(args) -> int:
    messages, snapshots = parse_session(args.message, args.orderbook, args.levels)
    session = clean_session(messages, snapshots, (args.open, args.close), date=args.date or "")
    out = {
        "raw_events": len(messages),
        "clean_events": len(session),
        "flags": session.flags,
        "excluded": session.excluded,
    }
    if args.reconcile:
        rep = replay_reconcile(messages, snapshots, args.tick, args.levels)
        out["reconciled"] = rep.matched
        out["first_mismatch"] = rep.first_mismatch
    print(json.dumps(out, indent=2))
    return 0 if out.get("reconciled", True) else 1


def _features(args) -> int:
    root = data_root(args.root)
    dates = args.dates or [s.date for s in discover(root, args.ticker)]
    td = prepare_ticker(root, args.ticker, dates, levels=args.L, window=args.W, depth=args.D, tick=args.tick,
                        with_l3=args.rep == F.VOLUME_L3)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = ReturnSpec(args.variant, args.horizon, args.k)
    for d in dates:
        frames = td.frames[d]
        write_frames(out / f"{args.ticker}_{d}.lobt", frames)
        stats = td.lob_stats[d] if args.rep == F.RAW_LOB else td.of_stats[d]
        if args.rep in (F.RAW_LOB, F.ORDER_FLOW) and stats is None:
            logger.info("%s: warm-up day, no %s windows written", d, args.rep)
            continue
        anchors = valid_anchors(len(frames), args.T, spec)[:: args.stride]
        if len(anchors) == 0:
            continue
        x = F.stack_windows(frames, anchors, args.rep, args.T, stats, levels=args.L, W=args.W,
                            depth=args.D if args.rep == F.VOLUME_L3 else None)
        r = return_series(frames.mid, spec)[anchors]
        alpha = args.alpha if args.alpha else alpha_hat(r).alpha
        meta = {"ticker": args.ticker, "date": d, "representation": args.rep, "T": args.T, "L": args.L,
                "W": args.W, "D": args.D, "return": vars(spec), "alpha": alpha, "anchors": anchors.tolist()}
        write_dataset(out / f"{args.ticker}_{d}_{args.rep}.lobt", x, classify(r, alpha), meta)
    print(f"wrote features for {len(dates)} sessions to {out}")
    return 0


def _synth(args) -> int:
    dates = business_days(args.start, 5 * args.weeks)
    spec = SynthSpec(event_rate=args.rate, feedback=args.feedback, seed=args.seed, levels=args.levels)
    synth_universe(data_root(args.root), args.tickers, dates, spec)
    print(f"wrote {len(args.tickers)} x {len(dates)} sessions")
    return 0


def _load_sets(paths):
    xs, ys = [], []
    for p in paths:
        x, y, _ = read_dataset(p)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def _train(args) -> int:
    spec = ModelSpec(args.family, args.level, args.head, T=args.T, L=args.L, W=args.W, D=args.D,
                     K=args.K, channels=args.channels, hidden=args.hidden)
    cfg = TrainConfig(lr=args.lr, eps=args.eps, batch_size=args.batch_size, epochs=args.epochs, patience=args.patience, seed=args.seed)
    train = _load_sets(args.train)
    val = _load_sets(args.val)
    params, history = train_model(spec, train, val, cfg)
    save_checkpoint(args.out, spec, params, args.seed, history.best_epoch)
    if args.history:
        history.write_csv(args.history)
    print(f"{spec.name}: best epoch {history.best_epoch}, checkpoint {args.out}")
    return 0


def _evaluate(args) -> int:
    spec, params, _ = load_checkpoint(args.checkpoint)
    x, y = _load_sets(args.data)
    p = predict_proba(spec, params, x)
    if p.ndim == 3:
        p, y = p[:, args.head_index], y[:, args.head_index]
    loss = window_loss(p, y)
    if args.predictions:
        np.savetxt(args.predictions, np.column_stack([y, p]), delimiter=",", header="label,p_down,p_flat,p_up", comments="")
    print(json.dumps({"model": spec.name, "n": int(len(y)), "cce": loss}))
    return 0


def _mcs(args) -> int:
    panel = LossPanel.from_csv(args.panel)
    res = mcs_run(panel, args.alpha, args.B, args.block, args.seed)
    if args.out:
        res.to_json(args.out)
    print(json.dumps({"pvalues": res.pvalues, "sets": {str(a): res.included(a) for a in args.alpha}}, indent=2))
    return 0


def _report(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.root:
        cfg = replace(cfg, data_root=args.root)
    result = run_universal(cfg) if args.universal else run_experiment(cfg)
    files = emit_report(result, args.out)
    print("\n".join(str(f) for f in files))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lobpredict", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse, clean and optionally reconcile one LOBSTER session")
    s.add_argument("--message", required=True)
    s.add_argument("--orderbook", required=True)
    s.add_argument("--levels", type=int, default=10)
    s.add_argument("--tick", type=int, default=100)
    s.add_argument("--date")
    s.add_argument("--open", type=float, default=34200.0)
    s.add_argument("--close", type=float, default=57600.0)
    s.add_argument("--reconcile", action="store_true")
    s.set_defaults(func=_ingest)

    s = sub.add_parser("features", help="materialise sessions and write feature/label containers")
    s.add_argument("--root")
    s.add_argument("--ticker", required=True)
    s.add_argument("--dates", nargs="*")
    s.add_argument("--rep", choices=F.REPRESENTATIONS, default=F.RAW_LOB)
    s.add_argument("-T", type=int, default=100)
    s.add_argument("-L", type=int, default=10)
    s.add_argument("-W", type=int, default=20)
    s.add_argument("-D", type=int, default=10)
    s.add_argument("--tick", type=int, default=100)
    s.add_argument("--variant", default="paper-smoothed")
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("-k", type=int, default=5)
    s.add_argument("--alpha", type=float)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_features)

    s = sub.add_parser("synth", help="write a synthetic LOBSTER universe")
    s.add_argument("--root")
    s.add_argument("--tickers", nargs="+", default=["SYN"])
    s.add_argument("--start", default="2019-01-07")
    s.add_argument("--weeks", type=int, default=12)
    s.add_argument("--rate", type=float, default=1.0, help="events per second")
    s.add_argument("--feedback", type=float, default=0.0)
    s.add_argument("--levels", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_synth)

    s = sub.add_parser("train", help="train one model on dataset containers")
    s.add_argument("--train", nargs="+", required=True)
    s.add_argument("--val", nargs="+", required=True)
    s.add_argument("--family", required=True)
    s.add_argument("--level", default="L2")
    s.add_argument("--head", default="single")
    for name, default in (("T", 100), ("L", 10), ("W", 20), ("D", 10), ("K", 1)):
        s.add_argument(f"-{name}", type=int, default=default)
    s.add_argument("--channels", type=int, default=32)
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--eps", type=float, default=1.0, help="Adam epsilon")
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--history")
    s.set_defaults(func=_train)

    s = sub.add_parser("evaluate", help="test-set cross-entropy of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", nargs="+", required=True)
    s.add_argument("--head-index", type=int, default=0)
    s.add_argument("--predictions")
    s.set_defaults(func=_evaluate)

    s = sub.add_parser("mcs", help="model confidence set on a loss panel CSV")
    s.add_argument("--panel", required=True)
    s.add_argument("--alpha", type=float, nargs="+", default=[0.05, 0.01])
    s.add_argument("-B", type=int, default=10_000)
    s.add_argument("--block", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_mcs)

    s = sub.add_parser("report", help="run an experiment config and write CSV/JSON tables")
    s.add_argument("--config", required=True)
    s.add_argument("--root")
    s.add_argument("--universal", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
