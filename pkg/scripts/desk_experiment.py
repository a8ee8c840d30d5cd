"""Desk-scale experiment: train the layered and direct toy refiners on
synthetic composites and score them, plus the propagation baseline, on a
held-out suite. Writes ``results.json`` and the two loss curves.

    python3 scripts/desk_experiment.py --out runs/desk [--iters 3000] [--lr 1e-3]
"""
import argparse
import csv
import json
import logging
from pathlib import Path

from depthlayers.experiment import DeskConfig, run
from depthlayers.toynet import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--iters", type=int, default=3000, help="iterations per stage")
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--n-train", type=int, default=500)
    ap.add_argument("--n-test", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = DeskConfig(n_train=args.n_train, n_test=args.n_test, seed=args.seed,
                     train=TrainConfig(lr=args.lr, iters_stage1=args.iters, iters_stage2=args.iters,
                                       seed=args.seed))
    res = run(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in res["models"].logs.items():
        with open(out / f"loss_{name}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    summary = {k: res[k] for k in ("config", "scores", "sweep", "seconds")}
    (out / "results.json").write_text(json.dumps(summary, indent=2, default=str))

    print(f"{'method':<12} {'MBE':>8} {'RMSE':>8} {'R3':>8}")
    for name, agg in res["scores"].items():
        r3 = agg.get("r3")
        print(f"{name:<12} {agg['mbe']:8.4f} {agg['rmse']:8.4f} {r3 if r3 is None else f'{r3:8.3f}'}")
    for op, rows in res["sweep"].items():
        print(op, " ".join(f"k={k}:{v['mbe']:.4f}" for k, v in rows.items()))
    print(f"{res['seconds'] / 60:.1f} min, results in {out}")


if __name__ == "__main__":
    main()
