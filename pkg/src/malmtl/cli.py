"""Command-line entry point: ``malmtl {convert,synth,train,eval,augment}``.

Exit codes: 0 success, 3 partial conversion failure, 4 configuration
error, 5 dataset error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import cyclegan, mtl, pipeline, synth
from .containers import BinaryFormat
from .nn.checkpoint import CheckpointError
from .nn.optim import OPTIMIZERS

EXIT_OK = 0
EXIT_PARTIAL = 3
EXIT_CONFIG = 4
EXIT_DATASET = 5


def _tasks(value: str | None):
    return [t for t in value.split(",") if t] if value else None


def _out(args, name: str) -> Path:
    return Path(args.out) if args.out else pipeline.output_root() / name


def _trunk_config(args) -> mtl.TrunkConfig:
    base = mtl.TrunkConfig() if args.trunk == "full" else mtl.desk_config()
    kw = dict(activation=args.activation, input_policy=args.input_policy)
    if args.pool_out:
        kw["adaptive_pool_out"] = (args.pool_out, args.pool_out)
    if args.resize:
        kw["resize_to"] = (args.resize, args.resize)
    return mtl.TrunkConfig(**{**base.to_dict(), **kw})


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults only for options that have one."""

    def _get_help_string(self, action):
        if action.default is None or action.default is False:
            return action.help or ""
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="malmtl", description=__doc__.splitlines()[0],
                                formatter_class=_HelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    out_help = f"output directory (default: ${pipeline.OUTPUT_ROOT_ENV}/<command>, root defaults to ./malmtl-out)"

    c = sub.add_parser("convert", help="turn container files into images",
                       formatter_class=_HelpFormatter)
    c.add_argument("inputs", nargs="*", help="container files (or use --manifest)")
    c.add_argument("--manifest", help="convert every record of this manifest, keeping labels")
    c.add_argument("--format", choices=[f.value for f in BinaryFormat], help="skip detection")
    c.add_argument("--width", type=int, help="fixed image width in pixels (default: near-square)")
    c.add_argument("--image-format", choices=sorted(pipeline.codec.WRITERS), default="png", help="output encoding")
    c.add_argument("--out", help=out_help)

    s = sub.add_parser("synth", help="generate a labelled synthetic container corpus",
                       formatter_class=_HelpFormatter)
    s.add_argument("--tasks", help="comma-separated task ids (default: t1..t7)")
    s.add_argument("--samples-per-class", type=int, default=10, help="files per class and task")
    s.add_argument("--samples-per-task", type=int, help="split this many samples evenly over classes")
    s.add_argument("--payload-size", type=int, default=1536, help="section payload bytes per file")
    s.add_argument("--gap", type=float, default=135.0, help="distance between binary class byte means")
    s.add_argument("--half-width", type=float, default=60.0, help="half-width of each binary class byte band")
    s.add_argument("--purity", type=float, default=1.0, help="fraction of payload bytes drawn from the class band")
    s.add_argument("--test-fraction", type=float, default=0.2, help="share of each class held out for test")
    s.add_argument("--seed", type=int, default=0, help="corpus seed")
    s.add_argument("--out", help=out_help)

    t = sub.add_parser("train", help="train the multi-task network",
                       formatter_class=_HelpFormatter)
    t.add_argument("manifest", help="image manifest with train records")
    t.add_argument("--tasks", help="comma-separated task subset (default: all in manifest)")
    t.add_argument("--trunk", choices=["full", "desk"], default="desk", help="layer widths: full size or narrow")
    t.add_argument("--activation", choices=["relu", "leaky_relu", "prelu", "elu"], default="prelu",
                   help="trunk activation")
    t.add_argument("--optimizer", choices=sorted(OPTIMIZERS), default="adam", help="update rule")
    t.add_argument("--lr", type=float, help="learning rate (default: the optimizer's own)")
    t.add_argument("--epochs", type=int, default=10, help="passes over every task")
    t.add_argument("--batch-size", type=int, default=32, help="samples per single-task batch")
    t.add_argument("--pool-out", type=int, help="adaptive pool side (full: 6, desk: 1)")
    t.add_argument("--input-policy", choices=["adaptive", "resize"], default="adaptive",
                   help="keep native image sizes or resize to one size")
    t.add_argument("--resize", type=int, help="square side for --input-policy resize")
    t.add_argument("--exclude-synthetic", action="store_true", help="ignore records flagged synthetic")
    t.add_argument("--seed", type=int, default=0, help="initialisation and shuffling seed")
    t.add_argument("--out", help=out_help)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split",
                       formatter_class=_HelpFormatter)
    e.add_argument("checkpoint", help="model written by train")
    e.add_argument("manifest", help="image manifest with test records")
    e.add_argument("--tasks", help="comma-separated task subset (default: all in checkpoint)")
    e.add_argument("--out", help=out_help)

    a = sub.add_parser("augment", help="synthesize malware-domain images with a CycleGAN",
                       formatter_class=_HelpFormatter)
    a.add_argument("manifest", help="image manifest with benign and malware train records")
    a.add_argument("--task", default="t6", help="task whose benign images are translated")
    a.add_argument("-n", type=int, default=50, help="synthetic images to write")
    a.add_argument("--generator", help="load a saved G instead of training")
    a.add_argument("--lambda-cyc", type=float, default=10.0, help="cycle-consistency weight")
    a.add_argument("--epochs", type=int, default=5, help="CycleGAN training epochs")
    a.add_argument("--batch-size", type=int, default=4, help="images per domain per step")
    a.add_argument("--lr", type=float, default=2e-4, help="Adam step size for both players")
    a.add_argument("--seed", type=int, default=0, help="initialisation and sampling seed")
    a.add_argument("--out", help=out_help)
    return p


def run(args) -> int:
    if args.command == "synth":
        tasks = synth.default_synth_tasks()
        if args.tasks:
            wanted = _tasks(args.tasks)
            unknown = set(wanted) - {t.task_id for t in tasks}
            if unknown:
                raise ValueError(f"unknown synthetic task(s): {sorted(unknown)}")
            tasks = tuple(t for t in tasks if t.task_id in wanted)
        spec = synth.SynthCorpusSpec(tasks, args.samples_per_class, args.samples_per_task, args.payload_size,
                                     args.gap, args.half_width, purity=args.purity,
                                     test_fraction=args.test_fraction, seed=args.seed)
        print(pipeline.cmd_synth(spec, _out(args, "synth")))
        return EXIT_OK

    if args.command == "convert":
        if not args.inputs and not args.manifest:
            raise ValueError("give input files or --manifest")
        fmt = BinaryFormat(args.format) if args.format else None
        res = pipeline.cmd_convert(args.inputs or None, _out(args, "convert"), fmt, args.width,
                                   args.image_format, args.manifest)
        for line in res.errors:
            print("error\t" + line, file=sys.stderr)
        print(f"{len(res.written)} converted, {len(res.errors)} failed; manifest {res.manifest_path}")
        return EXIT_PARTIAL if res.partial else EXIT_OK

    if args.command == "train":
        out = _out(args, "train")
        out.mkdir(parents=True, exist_ok=True)
        kw = {"lr": args.lr} if args.lr is not None else {}
        schedule = mtl.Schedule(args.epochs, args.batch_size, args.optimizer, kw)
        pipeline.cmd_train(args.manifest, _tasks(args.tasks), _trunk_config(args), schedule, args.seed,
                           out / "model.ckpt", out / "trace.tsv", not args.exclude_synthetic,
                           log=lambda r: print(r.line(), flush=True))
        return EXIT_OK

    if args.command == "eval":
        res = pipeline.cmd_eval(args.checkpoint, args.manifest, _tasks(args.tasks), _out(args, "eval"))
        print(pipeline.metrics.format_table(res.reports))
        return EXIT_OK

    if args.command == "augment":
        out = _out(args, "augment")
        cfg = cyclegan.CycleGanConfig(args.lambda_cyc, args.lr, args.lr, epochs=args.epochs,
                                      batch_size=args.batch_size, seed=args.seed)
        path = pipeline.cmd_augment(args.manifest, args.task, args.n, out, cfg, args.generator,
                                    generator_out=out / "generator.ckpt", trace_out=out / "gan_trace.tsv")
        print(path)
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (mtl.EmptyDataset, mtl.UnknownTask, pipeline.ManifestError) as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATASET
    except (pipeline.TaskNotInCheckpoint, CheckpointError, ValueError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
