"""Command-line entry point: ``sau <subcommand> ...``.

Every subcommand is a pure pipeline over files.  Outputs are written
atomically and are byte-identical for identical inputs.

Exit codes
    0  success
    2  usage error (unknown flag, missing argument)
    3  invalid configuration
    4  hash mismatch (plan built for a different mask)
    5  checkpoint or input file could not be loaded
    6  runtime failure (divergence, violated precondition)
    7  a theory check failed

On failure a single line is printed to stderr::

    error: code=<n> kind=<name> message=<JSON string>
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import eval_harness as eh
from . import theory
from .checkpoint import Bundle, atomic_write_text, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_schema
from .errors import CheckpointError, ConfigError, HashMismatchError, SAUError
from .models import FactDataset, Model, build_model, gen_facts, train
from .pruning import apply_mask, prune, sparsity_of
from .saliency import compute_saliency
from .sau_core import build_plan
from .scoring import score
from .unlearner import run_unlearning

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_HASH, EXIT_LOAD, EXIT_RUNTIME, EXIT_THEORY = 0, 2, 3, 4, 5, 6, 7


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _config(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        data = ExperimentConfig.load(args.config).to_dict()
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(item, "override must look like KEY=VALUE")
        try:
            data[key] = json.loads(raw)
        except json.JSONDecodeError:
            data[key] = raw
    return ExperimentConfig.from_dict(data)


def _load_data(path) -> FactDataset:
    try:
        return FactDataset.load(path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_LOAD, "data_load", f"{path}: {exc}") from exc


def _load_bundle(path) -> Bundle:
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise CliError(EXIT_LOAD, "checkpoint_load", f"{path}: {exc}") from exc


def _load_model(path) -> tuple[Model, Bundle]:
    b = _load_bundle(path)
    if b.params is None or b.model_config is None:
        raise CliError(EXIT_LOAD, "checkpoint_load", f"{path}: no model parameters")
    return build_model(b.model_config, b.params), b


def _base(args, cfg: ExperimentConfig):
    if getattr(args, "model", None):
        if not args.data:
            raise CliError(EXIT_USAGE, "usage", "--model requires --data")
        model, _ = _load_model(args.model)
        return _load_data(args.data), model
    return eh.prepare_base(cfg)


# -- subcommands -----------------------------------------------------------

def cmd_gen_data(args):
    cfg = _config(args)
    ds = gen_facts(cfg.n_facts, cfg.vocab, cfg.key_len, cfg.val_len, cfg.forget_fraction, cfg.data_seed)
    ds.save(args.out)


def cmd_train(args):
    cfg = _config(args)
    ds = _load_data(args.data)
    mc = cfg.model_config()
    if (mc.vocab, mc.key_len, mc.val_len) != (ds.vocab, ds.key_len, ds.val_len):
        raise ConfigError("vocab", "model shape does not match the dataset")
    model = build_model(mc)
    result = train(model, ds, cfg.train_lr, cfg.train_epochs, cfg.train_batch_size, cfg.train_seed)
    meta = {"stage": "train", "losses": result.losses, "data_hash": ds.content_hash()}
    save_checkpoint(args.out, Bundle(params=result.params, model_config=mc, meta=meta))


def cmd_prune(args):
    cfg = _config(args)
    model, b = _load_model(args.model)
    calib = _load_data(args.data).retain[: cfg.calibration_size] if args.data else None
    if cfg.pruner == "activation" and calib is None:
        raise CliError(EXIT_USAGE, "usage", "activation pruning needs --data for calibration")
    mask = prune(model, cfg.pruner, cfg.sparsity, calib)
    params = apply_mask(model.params, mask)
    meta = {"stage": "prune", "pruner": cfg.pruner, "sparsity": sparsity_of(mask),
            "base_hash": model.params.content_hash()}
    save_checkpoint(args.out, Bundle(params=params, mask=mask, model_config=b.model_config, meta=meta))


def cmd_saliency(args):
    cfg = _config(args)
    model, b = _load_model(args.model)
    ds = _load_data(args.data)
    sal = compute_saliency(model, ds.forget, cfg.saliency_batch_size)
    meta = {"stage": "saliency", "params_hash": model.params.content_hash()}
    save_checkpoint(args.out, Bundle(saliency=sal, mask=b.mask, meta=meta))


def cmd_plan(args):
    cfg = _config(args)
    sb = _load_bundle(args.saliency)
    mb = _load_bundle(args.mask)
    if sb.saliency is None:
        raise CliError(EXIT_LOAD, "checkpoint_load", f"{args.saliency}: no saliency map")
    if mb.mask is None:
        raise CliError(EXIT_LOAD, "checkpoint_load", f"{args.mask}: no sparsity mask")
    plan = build_plan(sb.saliency, mb.mask, cfg.sau_config())
    save_checkpoint(args.out, Bundle(plan=plan, meta={"stage": "plan"}))


def cmd_unlearn(args):
    cfg = _config(args)
    model, b = _load_model(args.model)
    if b.mask is None:
        raise CliError(EXIT_LOAD, "checkpoint_load", f"{args.model}: no sparsity mask")
    ds = _load_data(args.data)
    ucfg = cfg.unlearn_config()
    plan = None
    if ucfg.variant == "sau":
        if not args.plan:
            raise CliError(EXIT_USAGE, "usage", "variant 'sau' needs --plan")
        plan = _load_bundle(args.plan).plan
        if plan is None:
            raise CliError(EXIT_LOAD, "checkpoint_load", f"{args.plan}: no plan")
    params, manifest = run_unlearning(model, b.mask, plan, ds.forget, ds.retain, ucfg,
                                      record_timing=cfg.record_timing)
    meta = {"stage": "unlearn", "final": manifest.final}
    save_checkpoint(args.out, Bundle(params=params, mask=b.mask, model_config=b.model_config, meta=meta))
    if args.manifest:
        atomic_write_text(args.manifest, manifest.to_json())


def cmd_eval(args):
    model, _ = _load_model(args.model)
    ds = _load_data(args.data)
    card = score(model, ds)
    text = _dump({**card.to_dict(), "note": eh.SCORE_NOTE})
    _emit(text, args.out)


def cmd_sweep(args):
    cfg = _config(args)
    ds, base = _base(args, cfg)
    result = eh.sparsity_sweep(base, ds, cfg)
    eh.write_result(result, args.out_dir, "sweep", {"base_hash": base.params.content_hash()})


def cmd_resurface(args):
    cfg = _config(args)
    ds, base = _base(args, cfg)
    report = eh.resurfacing_experiment(base, ds, cfg)
    _emit(_dump(report), args.out)


def cmd_ablate(args):
    cfg = _config(args)
    ds, base = _base(args, cfg)
    if args.kind == "topk":
        result = eh.ablation_topk(base, ds, cfg)
        extra = {}
    else:
        result = eh.ablation_redistribution(base, ds, cfg)
        extra = {"per_seed_deltas": eh.redistribution_deltas(result)}
    eh.write_result(result, args.out_dir, f"ablate_{args.kind}", extra)


def cmd_verify_theory(args):
    report = theory.run_suite(args.seed, n_instances=args.instances)
    _emit(theory.report_json(report), args.out)
    if not report["passed"]:
        raise CliError(EXIT_THEORY, "theory_check", "at least one theory check failed")


def cmd_report(args):
    try:
        rows = eh.csv_to_rows(Path(args.csv).read_text(encoding="utf-8"))
    except (OSError, ValueError, IndexError) as exc:
        raise CliError(EXIT_LOAD, "data_load", f"{args.csv}: {exc}") from exc
    if not rows:
        raise CliError(EXIT_RUNTIME, "runtime", "sweep table is empty")
    eh.emit_report(rows, args.out_dir, args.stem)


def cmd_schema(args):
    _emit(_dump(config_schema()), args.out)


def _emit(text: str, out) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sau", description="Sparsity-aware unlearning at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_, config=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        if config:
            sp.add_argument("--config", help="JSON experiment config")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a config field (value parsed as JSON when possible)")
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the synthetic fact dataset")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "pre-train the dense model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("prune", cmd_prune, "prune a model and store params plus mask")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", help="dataset (retain split used for calibration)")
    sp.add_argument("--out", required=True)

    sp = add("saliency", cmd_saliency, "forget-set saliency map of a (pruned) model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("plan", cmd_plan, "build the gradient mask and redistribution plan")
    sp.add_argument("--saliency", required=True)
    sp.add_argument("--mask", required=True, help="checkpoint holding the sparsity mask")
    sp.add_argument("--out", required=True)

    sp = add("unlearn", cmd_unlearn, "GradDiff unlearning on a pruned model")
    sp.add_argument("--model", required=True, help="pruned checkpoint (params + mask)")
    sp.add_argument("--data", required=True)
    sp.add_argument("--plan", help="plan checkpoint (required for variant 'sau')")
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifest", help="write the JSON run manifest here")

    sp = add("eval", cmd_eval, "score a model on both splits", config=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")

    for name, fn, help_ in (("sweep", cmd_sweep, "sparsity sweep over variants and seeds"),
                            ("resurface", cmd_resurface, "unlearn-then-prune resurfacing experiment"),
                            ("ablate", cmd_ablate, "top-k or redistribution ablation")):
        sp = add(name, fn, help_)
        sp.add_argument("--model", help="base model checkpoint (default: train from config)")
        sp.add_argument("--data", help="dataset matching --model")
        if name == "resurface":
            sp.add_argument("--out")
        else:
            sp.add_argument("--out-dir", required=True)
        if name == "ablate":
            sp.add_argument("--kind", choices=("topk", "redistribution"), required=True)

    sp = add("verify-theory", cmd_verify_theory, "run the numerical theory checks", config=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--instances", type=int, default=1000)
    sp.add_argument("--out")

    sp = add("report", cmd_report, "CSV summary and SVG chart from a sweep CSV", config=False)
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--stem", default="report")

    sp = add("schema", cmd_schema, "print the JSON schema of config files", config=False)
    sp.add_argument("--out")
    return p


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(f"error: code={code} kind={kind} message={json.dumps(message)}\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except HashMismatchError as exc:
        return _fail(EXIT_HASH, "hash_mismatch", str(exc))
    except CheckpointError as exc:
        return _fail(EXIT_LOAD, "checkpoint_load", f"{type(exc).__name__}: {exc}")
    except SAUError as exc:
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        return _fail(EXIT_LOAD, "io", str(exc))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
