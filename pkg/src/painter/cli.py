"""Command-line entrypoint: mask synthesis, dataset building, training,
inference, benchmarking, checkpoint bootstrap, and the studio service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import bench, checkpoint, clients, data, masks, pipeline, server, train
from .errors import PainterError


def _cmd_mask_gen(args) -> int:
    seg = masks.load_mask_png(args.seg)
    rng = np.random.default_rng(args.seed)
    params = masks.MaskGenParams(seed=args.seed)
    if args.kind == "box":
        out = masks.gen_box_mask(seg, params, rng)
        kind = "box"
    elif args.kind == "irr":
        out = masks.gen_irregular_mask(seg, params, rng)
        kind = "irr"
    else:
        out, kind = masks.sample_mask(seg, rng.uniform(), params, rng)
    masks.save_mask_png(out, args.out)
    print(f"wrote {args.out} (kind={kind}, coverage={masks.coverage_ratio(out):.4f})")
    return 0


def _load_source_records(src: str):
    if src.startswith("synth:"):
        n = int(src.split(":", 1)[1])
        return data.synthesize_records(n)
    return data.load_sources(src)


def _cmd_dataset_build(args) -> int:
    sources = _load_source_records(args.src)
    cset = clients.stub_clients() if args.stub_clients else clients.ClientSet()
    stats = data.build_shard(
        sources, masks.MaskGenParams(seed=args.seed), cset, args.out, seed=args.seed
    )
    print(json.dumps(stats.to_json(), indent=2, sort_keys=True))
    return 0


def _cmd_dataset_stats(args) -> int:
    records = data.load_bench(args.dir)
    doc = {
        "records": len(records),
        "categories": data.category_histogram(records),
        "kinds": {},
    }
    for r in records:
        doc["kinds"][r.kind] = doc["kinds"].get(r.kind, 0) + 1
    stats_file = Path(args.dir) / data.STATS
    if stats_file.exists():
        doc["build_stats"] = json.loads(stats_file.read_text())
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    records = data.load_bench(args.data)
    cfg = train.TrainConfig(
        beta=args.beta, steps=args.steps, batch=args.batch, lr=args.lr,
        seed=args.seed, preset=args.preset, w=args.w,
        resample_each_step=not args.fixed_batch,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle, history = train.run_training(records, cfg, log_path=out / "train_log.jsonl")
    checkpoint.save_checkpoint(bundle, out)
    summary = train.loss_curve_summary(history)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"checkpoint written to {out}")
    return 0


def _cmd_ckpt_init(args) -> int:
    bundle = train.build_bundle(args.preset, seed=args.seed)
    checkpoint.save_checkpoint(bundle, args.out)
    print(f"fresh {args.preset} checkpoint written to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    bundle = checkpoint.load_checkpoint(args.ckpt)
    with Image.open(args.image) as im:
        image = np.asarray(im.convert("RGB"))
    mask = masks.load_mask_png(args.mask)
    request = pipeline.InpaintRequest(
        image=image, mask=mask, local_prompt=args.prompt,
        steps=args.steps, guidance=args.guidance, w=args.w, seed=args.seed,
    )
    result = pipeline.inpaint(request, bundle)
    Image.fromarray(result.image, mode="RGB").save(args.out)
    print(f"wrote {args.out} in {result.timing_s:.2f}s")
    return 0


def _cmd_eval(args) -> int:
    records = data.load_bench(args.bench)
    bundle = checkpoint.load_checkpoint(args.ckpt)
    if args.stub_clients:
        eval_clients = bench.EvalClients(
            similarity=clients.FixedSimilarity(0.25), detector=clients.EchoDetector()
        )
    else:
        raise PainterError(
            "live scoring clients are not bundled; run with --stub-clients or wire "
            "custom clients through the API"
        )
    report = bench.run_benchmark(
        records, lambda req: pipeline.inpaint(req, bundle), eval_clients,
        seed=args.seed, steps=args.steps, guidance=args.guidance,
    )
    report.save(args.out)
    print(bench.render_table(report))
    print(f"report written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    bundle = checkpoint.load_checkpoint(args.ckpt)
    static = args.static
    if static is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend"
        static = str(candidate) if candidate.is_dir() else None
    server.serve(bundle, host=args.host, port=args.port, static_dir=static)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="painter")
    sub = parser.add_subparsers(dest="command", required=True)

    mask = sub.add_parser("mask", help="mask synthesis").add_subparsers(
        dest="mask_command", required=True
    )
    gen = mask.add_parser("gen", help="generate a mask from a segmentation PNG")
    gen.add_argument("--seg", required=True)
    gen.add_argument("--kind", choices=("box", "irr", "mix"), default="mix")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(fn=_cmd_mask_gen)

    dataset = sub.add_parser("dataset", help="shard building and inspection").add_subparsers(
        dest="dataset_command", required=True
    )
    build = dataset.add_parser("build")
    build.add_argument("--src", required=True, help="source dir or synth:N")
    build.add_argument("--out", required=True)
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--stub-clients", action="store_true")
    build.set_defaults(fn=_cmd_dataset_build)
    stats = dataset.add_parser("stats")
    stats.add_argument("dir")
    stats.set_defaults(fn=_cmd_dataset_stats)

    tr = sub.add_parser("train", help="train the control branch")
    tr.add_argument("--data", required=True)
    tr.add_argument("--preset", choices=("toy", "sd15-adapter"), default="toy")
    tr.add_argument("--beta", type=float, default=train.BETA_DEFAULT)
    tr.add_argument("--steps", type=int, default=200)
    tr.add_argument("--batch", type=int, default=8)
    tr.add_argument("--lr", type=float, default=1e-4)
    tr.add_argument("--w", type=float, default=1.0)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--fixed-batch", action="store_true",
                    help="freeze masks/timesteps/noise for a deterministic objective")
    tr.add_argument("--out", required=True)
    tr.set_defaults(fn=_cmd_train)

    ck = sub.add_parser("ckpt", help="checkpoint utilities").add_subparsers(
        dest="ckpt_command", required=True
    )
    init = ck.add_parser("init", help="write a fresh untrained checkpoint")
    init.add_argument("--preset", default="toy")
    init.add_argument("--seed", type=int, default=0)
    init.add_argument("--out", required=True)
    init.set_defaults(fn=_cmd_ckpt_init)

    infer = sub.add_parser("infer", help="inpaint one image")
    infer.add_argument("--ckpt", required=True)
    infer.add_argument("--image", required=True)
    infer.add_argument("--mask", required=True)
    infer.add_argument("--prompt", required=True)
    infer.add_argument("--steps", type=int, default=pipeline.DEFAULT_STEPS)
    infer.add_argument("--guidance", type=float, default=pipeline.DEFAULT_GUIDANCE)
    infer.add_argument("--w", type=float, default=1.0)
    infer.add_argument("--seed", type=int, default=0)
    infer.add_argument("--out", required=True)
    infer.set_defaults(fn=_cmd_infer)

    ev = sub.add_parser("eval", help="run the benchmark")
    ev.add_argument("--bench", required=True)
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--steps", type=int, default=pipeline.DEFAULT_STEPS)
    ev.add_argument("--guidance", type=float, default=pipeline.DEFAULT_GUIDANCE)
    ev.add_argument("--stub-clients", action="store_true")
    ev.add_argument("--out", default="report.json")
    ev.set_defaults(fn=_cmd_eval)

    sv = sub.add_parser("serve", help="run the studio service")
    sv.add_argument("--ckpt", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8787)
    sv.add_argument("--static", default=None, help="directory of studio assets")
    sv.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PainterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
