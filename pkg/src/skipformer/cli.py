"""Operator surface: gen-data / train / infer / bench / profile."""

from __future__ import annotations

import argparse
import json
import sys

from . import data as dt
from . import evalbench as eb
from . import training
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .engine import generate
from .model import ModelParams


def _add_common(sp):
    sp.add_argument("--config", default=None, help="path to a key=value config file")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    dest="overrides", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="skipformer",
        description="Similarity-gated early-exit encoder-decoder toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
            ("gen-data", "write a synthetic dataset"),
            ("train", "train a model, write checkpoint + loss CSV"),
            ("infer", "generate outputs and exit traces per example"),
            ("bench", "threshold sweep, write the tradeoff CSV"),
            ("profile", "write the layer-similarity saturation CSV")):
        _add_common(sub.add_parser(name, help=help_))
    return ap


def cmd_gen_data(cfg) -> int:
    examples = dt.gen_dataset(cfg["data.seed"], cfg["data.count"],
                              cfg["data.task"], cfg["model.grid_side"])
    dt.write_dataset(examples, cfg["data.path"])
    print(f"wrote {len(examples)} {cfg['data.task']} examples "
          f"to {cfg['data.path']}")
    return 0


def cmd_train(cfg) -> int:
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    dataset = dt.read_dataset(cfg["data.path"])
    params = ModelParams.init(mcfg, cfg["model.init_seed"])
    curve = training.train(dataset, params, tcfg)
    save_checkpoint(params, cfg["output.checkpoint"])
    n_layers = len(curve[0].per_layer)
    with open(cfg["output.loss_csv"], "w", encoding="utf-8",
              newline="\n") as f:
        f.write("step,total," + ",".join(
            f"layer_{i + 1}" for i in range(n_layers)) + "\n")
        for step, rep in enumerate(curve):
            f.write(",".join([str(step), eb.fmt_float(rep.total)]
                             + [eb.fmt_float(v) for v in rep.per_layer])
                    + "\n")
    print(f"final loss {curve[-1].total:.6f} after {tcfg.steps} steps; "
          f"checkpoint -> {cfg['output.checkpoint']}, "
          f"loss curve -> {cfg['output.loss_csv']}")
    return 0


def cmd_infer(cfg) -> int:
    mcfg = cfg.model_config()
    dataset = dt.read_dataset(cfg["data.path"])
    params = load_checkpoint(cfg["output.checkpoint"], mcfg)
    policy = cfg.exit_policy()
    raw = params.raw()
    for ex in dataset:
        out = generate(ex, raw, mcfg, policy,
                       record_signals=cfg["infer.record_signals"])
        record = {
            "output": dt.detokenize(out.tokens),
            "tokens": out.tokens,
            "hit_budget": out.hit_budget,
            "trace": {
                "image_exit_layer": out.trace.image_exit_layer,
                "text_exit_layer": out.trace.text_exit_layer,
                "per_token_decoder_exit": out.trace.per_token_decoder_exit,
            },
        }
        if out.trace.per_layer_similarities is not None:
            record["trace"]["per_layer_similarities"] = \
                out.trace.per_layer_similarities
        print(json.dumps(record))
    return 0


def cmd_bench(cfg) -> int:
    mcfg = cfg.model_config()
    dataset = dt.read_dataset(cfg["data.path"])
    params = load_checkpoint(cfg["output.checkpoint"], mcfg)
    rows = eb.threshold_sweep(
        params.raw(), mcfg, dataset, cfg["bench.theta_grid"],
        cfg["bench.policy"], base=cfg.exit_policy(),
        measure_wall=cfg["bench.measure_wall"],
        encoder_weighting=cfg["bench.encoder_weighting"])
    with open(cfg["output.bench_csv"], "w", encoding="utf-8",
              newline="\n") as f:
        f.write(eb.rows_to_csv(rows))
    print(f"wrote {len(rows)} sweep rows to {cfg['output.bench_csv']}")
    return 0


def cmd_profile(cfg) -> int:
    mcfg = cfg.model_config()
    dataset = dt.read_dataset(cfg["data.path"])
    params = load_checkpoint(cfg["output.checkpoint"], mcfg)
    prof = eb.saturation_profile(params.raw(), mcfg, dataset,
                                 cfg["profile.samples"])
    with open(cfg["output.profile_csv"], "w", encoding="utf-8",
              newline="\n") as f:
        f.write(eb.profile_to_csv(prof))
    print(f"wrote saturation profile to {cfg['output.profile_csv']}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "bench": cmd_bench,
    "profile": cmd_profile,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
