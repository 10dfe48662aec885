"""Command-line entry point: ``ecoc <subcommand> [flags]``.

A full run::

    ecoc pretrain  --out runs/a --data-dir data/mnist
    ecoc train-eco --out runs/a
    ecoc quantize  --out runs/a
    ecoc compress  --out runs/a
    ecoc report    --out runs/a

Every subcommand reads and writes fixed artifact names inside ``--out`` unless
an explicit path is given.  Usage problems (bad flags, missing files, invalid
config) exit with status 2; any other failure exits with status 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..codec import compress_model, compression_report, decompress_model, read_ecm, write_ecm
from ..errors import ContractError, EcoError
from .checkpoint import DENSE, QUANTIZED, STOCHASTIC, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_list
from .data import mnist_available
from .metrics import trace_checks, entropy_bound_violations
from .train import evaluate, load_data, pretrain, quantize_model, train_eco

log = logging.getLogger("ecocompress")

PRETRAINED = "pretrained.ckpt"
ECO = "eco.ckpt"
QUANTIZED_CKPT = "quantized.ckpt"
ECM = "model.ecm"
DECODED = "decoded.ckpt"
USAGE_ERROR = 2


class UsageError(Exception):
    pass


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in u64, got {value}")
    return value


def _int_list(text: str) -> tuple:
    try:
        return parse_list(text)
    except ContractError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with an [eco] section")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--data-dir")
    common.add_argument("--dataset", choices=("mnist", "blobs"))
    common.add_argument("--out", help="artifact directory")
    common.add_argument("--log-every", type=int)
    common.add_argument("--alpha-max", type=float)
    common.add_argument("--steps", type=int, help="ECO training steps (overrides eco_epochs)")
    common.add_argument("--arch", type=_int_list, help="layer widths, e.g. 784,300,100,10")
    common.add_argument("--cardinalities", type=_int_list, help="codebook sizes per layer, e.g. 3,3,33")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ecoc", description="Entropy-constrained network compression")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="train the dense network")
    p = sub.add_parser("train-eco", parents=[common], help="entropy-constrained training")
    p.add_argument("--checkpoint", help=f"dense checkpoint (default OUT/{PRETRAINED})")
    p = sub.add_parser("quantize", parents=[common], help="MAP-quantize a stochastic checkpoint")
    p.add_argument("--checkpoint", help=f"stochastic checkpoint (default OUT/{ECO})")
    p = sub.add_parser("compress", parents=[common], help="entropy-code a quantized checkpoint")
    p.add_argument("--checkpoint", help=f"quantized checkpoint (default OUT/{QUANTIZED_CKPT})")
    p = sub.add_parser("decompress", parents=[common], help="decode a .ecm file to a checkpoint")
    p.add_argument("--input", help=f"compressed model (default OUT/{ECM})")
    p = sub.add_parser("evaluate", parents=[common], help="test error of a checkpoint or .ecm")
    p.add_argument("--model", help=f"checkpoint or .ecm file (default OUT/{ECM})")
    p = sub.add_parser("report", parents=[common], help="compression table for a .ecm file")
    p.add_argument("--model", help=f"compressed model (default OUT/{ECM})")
    p.add_argument("--no-eval", action="store_true", help="skip the test-error column")
    return parser


def config_from_args(args) -> TrainConfig:
    return load_config(
        args.config,
        seed=args.seed,
        data_dir=args.data_dir,
        dataset=args.dataset,
        out=args.out,
        log_every=args.log_every,
        alpha_max=args.alpha_max,
        steps=args.steps,
        arch=args.arch,
        cardinalities=args.cardinalities,
    )


def _existing(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} {path} not found")
    return path


def _load_kind(path: Path, kind: int, what: str):
    ckpt = load_checkpoint(_existing(path, what))
    if ckpt.kind != kind:
        raise UsageError(f"{path} holds a {ckpt.kind_name} model, expected {what}")
    return ckpt


def _load_model(path: Path):
    path = _existing(path, "model")
    if path.suffix == ".ecm":
        return read_ecm(path)
    return load_checkpoint(path).layers


def _data(config: TrainConfig) -> tuple:
    if config.dataset == "mnist" and not mnist_available(config.data_dir):
        raise UsageError(f"MNIST IDX files not found under {config.data_dir}")
    return load_data(config)


def _out_dir(config: TrainConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
def cmd_pretrain(args, config: TrainConfig) -> None:
    out = _out_dir(config)
    train, test = _data(config)
    layers, err = pretrain(config, train, test)
    save_checkpoint(out / PRETRAINED, layers, seed=config.seed, metric=err)
    (out / "config.ini").write_text(config.to_text())
    print(f"pretrained test error {err * 100:.2f}% -> {out / PRETRAINED}")


def cmd_train_eco(args, config: TrainConfig) -> None:
    out = _out_dir(config)
    dense = _load_kind(args.checkpoint or out / PRETRAINED, DENSE, "dense checkpoint")
    train, test = _data(config)
    (out / "config.ini").write_text(config.to_text())
    model, trace = train_eco(config, dense.layers, train, test, checkpoint_path=out / ECO)
    trace.write(out)
    last = trace.rows[-1]
    save_checkpoint(out / ECO, model, seed=config.seed, metric=last.err_cont)
    checks = trace_checks(trace)
    (out / "checks.json").write_text(json.dumps(
        {**checks, "entropy_bound_violations": entropy_bound_violations(trace)}, indent=2) + "\n")
    print(f"ECO done: {len(trace)} logged steps, error {last.err_cont * 100:.2f}% (continuous) "
          f"{last.err_quant * 100:.2f}% (quantized)")
    for name, ok in checks.items():
        print(f"  {name}: {'ok' if ok else 'VIOLATED'}")


def cmd_quantize(args, config: TrainConfig) -> None:
    out = _out_dir(config)
    ckpt = _load_kind(args.checkpoint or out / ECO, STOCHASTIC, "stochastic checkpoint")
    qmodel = quantize_model(ckpt.layers)
    save_checkpoint(out / QUANTIZED_CKPT, qmodel, seed=ckpt.seed)
    print(f"quantized {len(qmodel)} layers -> {out / QUANTIZED_CKPT}")


def cmd_compress(args, config: TrainConfig) -> None:
    out = _out_dir(config)
    ckpt = _load_kind(args.checkpoint or out / QUANTIZED_CKPT, QUANTIZED, "quantized checkpoint")
    size = write_ecm(compress_model(ckpt.layers), out / ECM)
    print(f"wrote {size} bytes -> {out / ECM}")


def cmd_decompress(args, config: TrainConfig) -> None:
    out = _out_dir(config)
    cmodel = read_ecm(_existing(args.input or out / ECM, "compressed model"))
    save_checkpoint(out / DECODED, decompress_model(cmodel), seed=config.seed)
    print(f"decoded {len(cmodel.layers)} layers -> {out / DECODED}")


def cmd_evaluate(args, config: TrainConfig) -> None:
    model = _load_model(Path(args.model or Path(config.out) / ECM))
    _, test = _data(config)
    err = evaluate(model, test)
    print(f"test error {err * 100:.2f}% ({err!r})")


def cmd_report(args, config: TrainConfig) -> None:
    out = _out_dir(config)
    path = _existing(args.model or out / ECM, "compressed model")
    cmodel = read_ecm(path)
    err = None
    if not args.no_eval:
        _, test = _data(config)
        err = evaluate(cmodel, test)
    report = compression_report(cmodel, error_rate=err, name=path.stem)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    print(report.table())
    print()
    print(report.to_csv(), end="")


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train-eco": cmd_train_eco,
    "quantize": cmd_quantize,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        COMMANDS[args.command](args, config)
    except (UsageError, ContractError, FileNotFoundError) as exc:
        print(f"ecoc {args.command}: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (EcoError, OSError) as exc:
        print(f"ecoc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
