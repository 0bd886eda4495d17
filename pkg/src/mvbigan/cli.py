"""Command-line surface: training, sampling, and evaluation subcommands.

Configuration is a flat text file of `key = value` lines with dotted keys
(for example `train.lambda = 1e-5`); `--set key=value` flags override the
file, and named flags override both. Unknown keys are rejected. The
environment variable MVBIGAN_DATA_DIR supplies the default dataset root.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .data import TaskSpec, SyntheticSpec, parse_idx
from .errors import (
    BadMagic,
    CorruptCheckpoint,
    EmptyDataset,
    InvalidConfig,
    NonFiniteLoss,
    TruncatedFile,
    VersionMismatch,
)
from .evaluation import (
    input_canvas,
    render_grid,
    sample_conditional,
    synthetic_report,
    variance_profile,
    write_pgm,
    write_report,
)
from .networks import ArchConfig
from .training import (
    TrainConfig,
    build_dataset,
    default_arch_for_task,
    load_checkpoint,
    train,
)
from .data import sample_view_sequence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# every accepted dotted config key: name -> (parser, default shown in help)
_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected true/false, got '{text}'")


CONFIG_KEYS = {
    "task.kind": (str, "quarters", "quarters | stream | hetero | synthetic"),
    "task.steps": (int, 4, "stream task: number of cumulative reveal views"),
    "task.seq_len": (int, None, "sequence length (default: task view count)"),
    "arch.latent_dim": (int, None, "latent size (dense default 128)"),
    "arch.agg_dim": (int, None, "aggregation space size (dense default 1500)"),
    "arch.gen_hidden": (int, None, "generator hidden size (dense default 1500)"),
    "arch.enc_hidden": (int, None, "encoder hidden size (dense default 1500)"),
    "arch.disc_hidden": (int, None, "discriminator hidden size (dense default 1500)"),
    "arch.gen_output": (str, None, "generator output: sigmoid | tanh | linear"),
    "arch.leaky_slope": (float, 0.2, "negative slope of leaky ReLU"),
    "train.lambda": (float, 1e-5, "KL penalty weight"),
    "train.learning_rate": (float, 2e-5, "Adam step size"),
    "train.beta1": (float, 0.5, "Adam first-moment decay"),
    "train.beta2": (float, 0.999, "Adam second-moment decay"),
    "train.adam_eps": (float, 1e-3, "Adam epsilon"),
    "train.batch_size": (int, 128, "minibatch size"),
    "train.epochs": (int, 30, "training epochs (paper-scale value: 300)"),
    "train.seed": (int, 0, "run seed"),
    "train.update_mode": (str, "alternating", "alternating | onepass"),
    "train.checkpoint_interval": (int, 50, "epochs between checkpoints"),
    "train.threads": (int, 1, "torch CPU threads (1 keeps runs reproducible)"),
    "train.out_dir": (str, "runs/run", "output directory"),
    "data.dir": (str, None, "IDX dataset directory (default $MVBIGAN_DATA_DIR)"),
    "data.limit": (int, None, "items to load/draw (digit default 10000)"),
    "synthetic.stddev": (float, 0.1, "mixture component stddev"),
    "synthetic.view_noise": (float, 0.0, "additive noise on sign views"),
}

_PARSERS = {int: int, float: float, str: lambda s: s, bool: _parse_bool}


def config_help_epilog() -> str:
    lines = ["configuration keys (file or --set key=value):"]
    for key, (typ, default, help_text) in CONFIG_KEYS.items():
        shown = "-" if default is None else default
        lines.append(f"  {key:26} {typ.__name__:5} default {shown!s:12} {help_text}")
    return "\n".join(lines)


def parse_config_file(path) -> dict:
    """Read `key = value` lines; '#' starts a comment; blank lines ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def resolve_config(values: dict) -> dict:
    """Validate keys and parse values to their declared types."""
    out = {}
    for key, text in values.items():
        if key not in CONFIG_KEYS:
            raise InvalidConfig(f"unknown configuration key '{key}'")
        typ = CONFIG_KEYS[key][0]
        try:
            out[key] = _PARSERS[typ](text) if isinstance(text, str) else text
        except ValueError as exc:
            raise InvalidConfig(f"bad value for {key}: {exc}") from exc
    return out


def build_train_config(values: dict) -> TrainConfig:
    """Assemble TaskSpec + ArchConfig + TrainConfig from resolved keys."""
    cfg = {key: default for key, (_, default, _) in CONFIG_KEYS.items()}
    cfg.update(values)

    kind = cfg["task.kind"]
    if kind == "quarters":
        task = TaskSpec.quarters()
    elif kind == "stream":
        task = TaskSpec.stream(cfg["task.steps"])
    elif kind == "hetero":
        task = TaskSpec.hetero()
    elif kind == "synthetic":
        task = TaskSpec.synthetic()
    else:
        raise InvalidConfig(f"unknown task kind '{kind}'")

    arch = default_arch_for_task(task)
    arch_overrides = {}
    for field in ("latent_dim", "agg_dim", "gen_hidden", "enc_hidden",
                  "disc_hidden", "gen_output", "leaky_slope"):
        value = cfg[f"arch.{field}"]
        if value is not None:
            arch_overrides[field] = value
    if arch_overrides:
        arch = dataclasses.replace(arch, **arch_overrides)

    synthetic = None
    if kind == "synthetic":
        synthetic = SyntheticSpec(
            stddev=cfg["synthetic.stddev"], view_noise=cfg["synthetic.view_noise"]
        ).validate()

    return TrainConfig(
        task=task,
        arch=arch,
        lam=cfg["train.lambda"],
        learning_rate=cfg["train.learning_rate"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        adam_eps=cfg["train.adam_eps"],
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        seed=cfg["train.seed"],
        update_mode=cfg["train.update_mode"],
        checkpoint_interval=cfg["train.checkpoint_interval"],
        out_dir=cfg["train.out_dir"],
        seq_len=cfg["task.seq_len"],
        n_items=cfg["data.limit"],
        data_dir=cfg["data.dir"],
        synthetic=synthetic,
        threads=cfg["train.threads"],
    ).validate()


def gather_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise InvalidConfig(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    flag_keys = {
        "task": "task.kind",
        "seed": "train.seed",
        "out": "train.out_dir",
        "epochs": "train.epochs",
        "data": "data.dir",
        "limit": "data.limit",
        "lam": "train.lambda",
    }
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = value
    return build_train_config(resolve_config(values))


class _Parser(argparse.ArgumentParser):
    """argparse parser that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(sub):
    sub.add_argument("--config", help="flat key = value configuration file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one configuration key (repeatable)")
    sub.add_argument("--task", help="task kind (shortcut for task.kind)")
    sub.add_argument("--seed", type=int, help="run seed")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--epochs", type=int, help="training epochs")
    sub.add_argument("--data", help="dataset directory")
    sub.add_argument("--limit", type=int, help="dataset size limit")
    sub.add_argument("--lam", type=float, help="KL penalty weight")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="mvbigan",
        description="Multi-view bidirectional GAN: train and evaluate "
        "conditional generators over subsets of views.",
        epilog=config_help_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = subs.add_parser(
        "train", help="train a model",
        epilog=config_help_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_config_flags(p_train)
    p_train.add_argument("--resume", help="checkpoint to resume from")
    p_train.set_defaults(func=cmd_train)

    p_sample = subs.add_parser("sample", help="draw conditional samples")
    p_sample.add_argument("--ckpt", required=True, help="checkpoint file")
    p_sample.add_argument("--index", type=int, default=0, help="dataset item")
    p_sample.add_argument("--mask", help="comma-separated mask bits, e.g. 1,0,1,0")
    p_sample.add_argument("--num-samples", type=int, default=8)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--data", help="dataset directory")
    p_sample.add_argument("--out", required=True, help="output file (.pgm or .json)")
    p_sample.set_defaults(func=cmd_sample)

    p_var = subs.add_parser("eval-variance", help="variance-vs-views profile")
    p_var.add_argument("--ckpt", required=True)
    p_var.add_argument("--items", type=int, default=100)
    p_var.add_argument("--num-samples", type=int, default=16)
    p_var.add_argument("--steps", type=int, default=None)
    p_var.add_argument("--seed", type=int, default=0)
    p_var.add_argument("--data", help="dataset directory")
    p_var.add_argument("--data-seed", type=int, default=None,
                       help="corpus seed (default: train seed + 1)")
    p_var.add_argument("--out", help="write the profile as JSON")
    p_var.set_defaults(func=cmd_eval_variance)

    p_syn = subs.add_parser("eval-synthetic", help="mixture-oracle report")
    p_syn.add_argument("--ckpt", required=True)
    p_syn.add_argument("--num-samples", type=int, default=512)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--out", required=True, help="output directory")
    p_syn.set_defaults(func=cmd_eval_synthetic)

    p_inspect = subs.add_parser("inspect-data", help="print IDX file dimensions")
    p_inspect.add_argument("--idx", required=True, help="IDX file to inspect")
    p_inspect.set_defaults(func=cmd_inspect_data)

    p_grid = subs.add_parser("render-grid", help="sample grid along a sequence")
    p_grid.add_argument("--ckpt", required=True)
    p_grid.add_argument("--index", type=int, default=0)
    p_grid.add_argument("--steps", type=int, default=None)
    p_grid.add_argument("--num-samples", type=int, default=8)
    p_grid.add_argument("--seed", type=int, default=0)
    p_grid.add_argument("--data", help="dataset directory")
    p_grid.add_argument("--out", required=True, help="output PGM path")
    p_grid.set_defaults(func=cmd_render_grid)
    return parser


def _load_model(args):
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    model.eval()
    return ckpt, model


def _eval_dataset(ckpt, args, data_seed=None):
    config = ckpt.train_config
    replace = {}
    if getattr(args, "data", None):
        replace["data_dir"] = args.data
    if data_seed is not None:
        replace["seed"] = data_seed
    if getattr(args, "items", None):
        replace["n_items"] = args.items
    if replace:
        config = dataclasses.replace(config, **replace)
    return config, build_dataset(config)


def cmd_train(args) -> int:
    config = gather_config(args)
    final, _ = train(config, resume_from=args.resume)
    print(f"finished {config.epochs} epochs; checkpoints in {config.out_dir}")
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt, model = _load_model(args)
    config, dataset = _eval_dataset(ckpt, args)
    task = dataset.task
    rng = np.random.default_rng(args.seed)
    mask = None
    if args.mask:
        mask = [int(b) for b in args.mask.split(",")]
    vs = dataset.viewset(args.index, mask)
    samples = sample_conditional(model, vs, args.num_samples, rng)
    if task.kind == "synthetic":
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"samples": samples.tolist()}, fh, indent=2)
    else:
        side = int(np.sqrt(task.output_size))
        strip = np.concatenate(
            [s.reshape(side, side) for s in samples], axis=1
        )
        write_pgm(args.out, strip)
    print(f"wrote {args.num_samples} samples to {args.out}")
    return EXIT_OK


def cmd_eval_variance(args) -> int:
    ckpt, model = _load_model(args)
    data_seed = (
        args.data_seed if args.data_seed is not None
        else ckpt.train_config.seed + 1
    )
    config, dataset = _eval_dataset(ckpt, args, data_seed=data_seed)
    steps = args.steps or config.effective_seq_len
    profile = variance_profile(
        model, dataset, steps, num_samples=args.num_samples, seed=args.seed,
        max_items=args.items,
    )
    for t, v in enumerate(profile.step_mean_variance, 1):
        print(f"views={t} mean_variance={v:.6f}")
    print(f"fraction_monotone={profile.fraction_monotone:.3f}")
    print(f"ratio_last_to_first={profile.ratio_last_to_first:.4f}")
    if args.out:
        payload = {
            "step_mean_variance": profile.step_mean_variance.tolist(),
            "fraction_monotone": profile.fraction_monotone,
            "ratio_last_to_first": profile.ratio_last_to_first,
            "item_variances": profile.item_variances.tolist(),
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        print(f"wrote profile to {args.out}")
    return EXIT_OK


def cmd_eval_synthetic(args) -> int:
    ckpt, model = _load_model(args)
    spec = ckpt.train_config.synthetic or SyntheticSpec()
    report = synthetic_report(model, spec, num_samples=args.num_samples,
                              seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    text_path = os.path.join(args.out, "synthetic-report.txt")
    json_path = os.path.join(args.out, "synthetic-report.json")
    write_report(report, text_path, json_path)
    for cond in report["conditions"]:
        print(
            f"signs {cond['signs']}: two-view mean "
            f"{np.round(cond['two_view_mean'], 3).tolist()} "
            f"var {np.round(cond['two_view_var'], 4).tolist()}"
        )
    print(f"wrote report to {args.out}")
    return EXIT_OK


def cmd_inspect_data(args) -> int:
    dims, _ = parse_idx(args.idx)
    print(f"dims: {' x '.join(str(d) for d in dims)}")
    return EXIT_OK


def cmd_render_grid(args) -> int:
    ckpt, model = _load_model(args)
    config, dataset = _eval_dataset(ckpt, args, data_seed=ckpt.train_config.seed + 1)
    task = dataset.task
    steps = args.steps or config.effective_seq_len
    rng = np.random.default_rng(args.seed)
    seq = sample_view_sequence(task.num_views, steps, rng,
                               ordered=task.ordered_sequences)
    side = int(np.sqrt(task.output_size))
    inputs, rows = [], []
    for mask in seq:
        vs = dataset.viewset(args.index, mask)
        inputs.append(input_canvas(task, vs))
        samples = sample_conditional(model, vs, args.num_samples, rng)
        rows.append([s.reshape(side, side) for s in samples])
    render_grid(inputs, rows, args.out)
    print(f"wrote grid to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, BadMagic, TruncatedFile, CorruptCheckpoint, VersionMismatch,
            EmptyDataset) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
