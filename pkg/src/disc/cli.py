"""Command-line entry point: ``disc gen | run | eval | selftest``.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 non-finite
values during a forward pass.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io
from .config import MODES, PipelineConfig, load_config
from .errors import ConfigError, NumericalError
from .metrics import ConfusionAccumulator, accumulate, finalize
from .model import run_forward, weights_for
from .pipeline import load_scene, run_eval, save_scene, scene_for

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NAN = 0, 1, 2, 3


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's unset flag from clobbering one given before it
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override [run] seed")
    p.add_argument("--mode", choices=MODES, default=argparse.SUPPRESS, help="override [run] mode")
    return p


def build_parser() -> argparse.ArgumentParser:
    flags = _global_flags()
    parser = argparse.ArgumentParser(prog="disc", parents=[flags],
                                     description="Dual-stream semantic scene completion at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[flags], help="generate a synthetic scene")
    gen.add_argument("--config", type=Path)
    gen.add_argument("--out", type=Path, required=True)

    run = sub.add_parser("run", parents=[flags], help="predict one scene")
    run.add_argument("--config", type=Path)
    run.add_argument("--scene", required=True, help="scene file written by 'disc gen', or an integer seed")
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--report", type=Path, help="metrics (and losses in train mode); default OUT.txt")
    run.add_argument("--dump-intermediates", type=Path, metavar="DIR")

    ev = sub.add_parser("eval", parents=[flags], help="evaluate consecutive seeds")
    ev.add_argument("--config", type=Path)
    ev.add_argument("--scenes", type=int, required=True)
    ev.add_argument("--report", type=Path, required=True)
    ev.add_argument("--workers", type=int, default=1)
    ev.add_argument("--perfect", action="store_true", help="score the ground truth against itself")

    st = sub.add_parser("selftest", parents=[flags], help="run the acceptance checks")
    st.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    return cfg.with_overrides(getattr(args, "seed", None), getattr(args, "mode", None))


def _cmd_gen(args) -> int:
    cfg = _config(args)
    scene = scene_for(cfg, cfg.run.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_scene(args.out, scene)
    print(f"wrote {args.out} ({'x'.join(map(str, scene.gt.shape))}, seed {scene.seed})")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _config(args)
    if Path(args.scene).exists():
        scene = load_scene(args.scene)
    else:
        try:
            seed = int(args.scene)
        except ValueError:
            raise ConfigError(f"scene {args.scene!r} is neither a file nor a seed") from None
        scene = scene_for(cfg, seed)
    expected = cfg.spec.refined(2).dims
    if scene.gt.shape != expected or scene.num_classes != cfg.partition.num_classes:
        raise ConfigError(f"scene {scene.gt.shape}/K={scene.num_classes} does not match the config "
                          f"({expected}/K={cfg.partition.num_classes})")
    res = run_forward(cfg, scene, weights_for(cfg))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    io.save_labels(args.out, res.pred, cfg.partition.num_classes)

    acc = accumulate(res.pred, scene.gt, ConfusionAccumulator(cfg.partition.num_classes, cfg.partition.free))
    text = finalize(acc, cfg.partition).to_text()
    if res.loss is not None:
        text += "\n" + "".join(f"loss.{line}\n" for line in res.loss.to_text().splitlines())
    report = args.report or args.out.with_name(args.out.name + ".txt")
    report.write_text(text)

    if args.dump_intermediates:
        args.dump_intermediates.mkdir(parents=True, exist_ok=True)
        for name, arr in res.intermediates.items():
            io.save_tensor(args.dump_intermediates / f"{name}.tens1", arr)
    print(f"wrote {args.out} and {report}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _config(args)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    result = run_eval(cfg, args.scenes, perfect=args.perfect, workers=args.workers)
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(result.to_text())
    m = result.metrics
    print(f"{args.scenes} scenes: IoU {100 * m.iou:.2f} mIoU {100 * m.miou:.2f} "
          f"InsM {100 * m.insm:.2f} ScnM {100 * m.scnm:.2f}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from . import acceptance

    numbers = args.only or [n for n, *_ in acceptance.CRITERIA]
    results = [acceptance.run_criterion(n, getattr(args, "seed", 0)) for n in numbers]
    for r in results:
        print(r.line())
    failed = [r.number for r in results if not r.passed]
    print("all criteria passed" if not failed else f"failed: {failed}")
    return EXIT_OK if not failed else EXIT_FAIL


COMMANDS = {"gen": _cmd_gen, "run": _cmd_run, "eval": _cmd_eval, "selftest": _cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
