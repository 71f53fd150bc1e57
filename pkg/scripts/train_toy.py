#!/usr/bin/env python3
"""End-to-end toy experiment: synthesize a corpus, build a shard with stub
clients, train the control branch, and plot the loss curves.

Usage: python scripts/train_toy.py --out runs/toy [--steps 200] [--seed 0]
"""

import argparse
import json
from pathlib import Path

from painter import checkpoint, clients, data, masks, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--records", type=int, default=8)
    ap.add_argument("--signal-config", action="store_true",
                    help="use the deterministic learning-signal configuration")
    args = ap.parse_args()

    out = Path(args.out)
    shard_dir = out / "shard"
    ckpt_dir = out / "ckpt"
    out.mkdir(parents=True, exist_ok=True)

    sources = data.synthesize_records(args.records, size=128, seed=args.seed)
    stats = data.build_shard(
        sources, masks.MaskGenParams(seed=args.seed), clients.stub_clients(),
        shard_dir, seed=args.seed,
    )
    print("shard:", json.dumps(stats.to_json()))

    records = data.load_bench(shard_dir)
    if args.signal_config:
        cfg = train.toy_signal_config(seed=args.seed, steps=args.steps)
    else:
        cfg = train.TrainConfig(steps=args.steps, seed=args.seed, lr=1e-2)
    bundle, history = train.run_training(records, cfg, log_path=out / "train_log.jsonl")
    checkpoint.save_checkpoint(bundle, ckpt_dir)
    print("summary:", json.dumps(train.loss_curve_summary(history)))

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        steps = range(1, len(history) + 1)
        fig, ax = plt.subplots(1, 2, figsize=(9, 3.2))
        ax[0].plot(steps, [b.diff for b in history])
        ax[0].set_title("noise-prediction loss")
        ax[1].plot(steps, [b.atal for b in history], color="tab:orange")
        ax[1].set_title("attention alignment loss")
        for a in ax:
            a.set_xlabel("step")
        fig.tight_layout()
        fig.savefig(out / "losses.png", dpi=120)
        print(f"plot: {out / 'losses.png'}")
    except ImportError:
        pass

    print(f"checkpoint: {ckpt_dir}")


if __name__ == "__main__":
    main()
