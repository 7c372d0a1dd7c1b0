"""Command-line entry point: ``grpolab {train,eval,reward,gradcheck,synth}``.

Configuration comes from a JSON file (``--config``), overridden by
``--set key=value`` pairs (values parsed as JSON when possible) and by the
dedicated flags ``--seed`` and ``--method``. Every run that writes to an
output directory also writes ``resolved_config.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset as ds
from .evaluation import evaluate, format_table
from .gradcheck import run_gradcheck
from .grpo_core import GrpoConfig, GrpoError
from .policy import PolicyError, ToyTemplatePolicy, load_policy, save_policy
from .reward import score_reward_file
from .trainer import TrainingAborted, train_grpo, train_sft

log = logging.getLogger("grpolab")

GRADCHECK_TOLERANCE = 1e-5

DEFAULTS = {
    "train": {
        **GrpoConfig().to_dict(),
        "method": "grpo",
        "train_path": None,
        "categories": "auto",
    },
    "eval": {
        "checkpoint": None,
        "id_test_path": None,
        "ood_test_path": None,
        "method": "model",
        "greedy": True,
        "case_sensitive": False,
        "seed": 0,
        "seen_samples": None,
    },
    "synth": {
        "family": "organs",
        "n_options": 4,
        "n_train": 600,
        "n_id_test": 300,
        "ood": [{"modality": "CT", "shift": 0.5, "n": 300},
                {"modality": "XRAY", "shift": 1.0, "n": 300}],
        "seed": 0,
    },
    "gradcheck": {"trials": 100, "seed": 0, "fault": None, "step": 1e-6},
    "reward": {},
}


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(loaded)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "method", None) is not None:
        cfg["method"] = args.method
    unknown = sorted(set(cfg) - set(DEFAULTS[command]))
    if unknown:
        raise ConfigError(f"unknown config field(s) for {command}: {', '.join(unknown)}")
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(out: Path, command: str, cfg: dict) -> None:
    (out / "resolved_config.json").write_text(
        json.dumps({"command": command, **cfg}, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def _require(cfg: dict, key: str):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"config field {key!r} is required")
    return cfg[key]


def cmd_train(args) -> int:
    cfg = resolve_config("train", args)
    train_path = _require(cfg, "train_path")
    if cfg["method"] not in ("grpo", "sft"):
        raise ConfigError(f"config field 'method' must be 'grpo' or 'sft', got {cfg['method']!r}")
    grpo_cfg = GrpoConfig.from_dict(cfg)
    records = ds.resolve_dataset(train_path)
    if not records:
        raise ConfigError(f"config field 'train_path' points at an empty dataset: {train_path}")
    cats = cfg["categories"]
    if cats == "auto":
        cats = sorted({r.category for r in records if r.category is not None})
    policy = ToyTemplatePolicy(cats)

    out = _out_dir(args)
    _write_resolved(out, "train", {**cfg, "categories": list(cats)})
    trace = open(out / "trace.jsonl", "w", encoding="utf-8") if args.trace else None
    try:
        with open(out / "metrics.jsonl", "w", encoding="utf-8") as metrics:
            if cfg["method"] == "grpo":
                state = train_grpo(records, policy, grpo_cfg, metrics_out=metrics, trace_out=trace)
            else:
                state = train_sft(records, policy, grpo_cfg, metrics_out=metrics)
    finally:
        if trace is not None:
            trace.close()
    save_policy(policy, out / "checkpoint.json")
    last = state.history[-1]
    log.info("trained %s for %d steps; last row %s", cfg["method"], state.step, json.dumps(last))
    print(json.dumps(last))
    return 0


def _load_split(path_or_paths) -> list:
    if path_or_paths is None:
        return []
    paths = path_or_paths if isinstance(path_or_paths, list) else [path_or_paths]
    out = []
    for p in paths:
        out.extend(ds.resolve_dataset(p))
    return out


def cmd_eval(args) -> int:
    import numpy as np

    cfg = resolve_config("eval", args)
    policy = load_policy(_require(cfg, "checkpoint"))
    id_test = _load_split(_require(cfg, "id_test_path"))
    ood_test = _load_split(cfg["ood_test_path"])
    if not ood_test:
        log.warning("no out-of-domain split given; reporting in-domain columns only")
    ds.SplitSpec.from_records([], id_test, ood_test)
    test = id_test + ood_test
    if policy.categories and not any(r.category in policy.categories for r in test):
        raise PolicyError("checkpoint is keyed on categories that no test record carries")

    id_mods = list(dict.fromkeys(r.modality for r in id_test))
    columns = id_mods + [m for m in dict.fromkeys(r.modality for r in ood_test) if m not in id_mods]
    rng = np.random.default_rng(cfg["seed"])
    report = evaluate(policy, test, rng=rng, method=cfg["method"], greedy=cfg["greedy"],
                      case_sensitive=cfg["case_sensitive"], modalities=columns,
                      seen_samples=cfg["seen_samples"])
    for m in report.empty_modalities:
        log.warning("modality %s has no records", m)
    table = format_table([report], columns)
    out = _out_dir(args)
    _write_resolved(out, "eval", cfg)
    (out / "report.txt").write_text(table, encoding="utf-8")
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(table, end="")
    return 0


def cmd_reward(args) -> int:
    with open(args.input, encoding="utf-8") as src:
        if args.out:
            out = _out_dir(args)
            with open(out / "rewards.jsonl", "w", encoding="utf-8") as dst:
                errors = score_reward_file(src, dst)
        else:
            errors = score_reward_file(src, sys.stdout)
    if errors:
        log.error("%d line(s) could not be scored", errors)
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    cfg = resolve_config("gradcheck", args)
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.fault is not None:
        cfg["fault"] = args.fault
    trials = int(cfg["trials"])
    if trials <= 0:
        log.warning("no trials requested; nothing was checked")
        print("max relative error: n/a (0 trials)")
        return 0
    results = run_gradcheck(trials, int(cfg["seed"]), float(cfg["step"]), cfg["fault"])
    worst = max(results, key=lambda r: r.error)
    print(f"max relative error: {worst.error:.3e} over {trials} trials "
          f"(grpo {max(r.grpo_error for r in results):.3e}, "
          f"score {max(r.score_error for r in results):.3e})")
    if worst.error > GRADCHECK_TOLERANCE:
        which, idx = (("grpo_gradient", worst.grpo_index) if worst.grpo_error >= worst.score_error
                      else ("logprob_grad", worst.score_index))
        print(f"FAIL: trial {worst.trial}, {which}, parameter index {idx} "
              f"(clip_eps={worst.clip_eps}, kl_beta={worst.kl_beta})")
        return 1
    print("PASS")
    return 0


def cmd_synth(args) -> int:
    cfg = resolve_config("synth", args)
    out = _out_dir(args)
    seed = int(cfg["seed"])
    if cfg["family"] == "bandit":
        ds.dump_records(ds.bandit_records(n_options=cfg["n_options"]), out / "train.jsonl")
    elif cfg["family"] == "organs":
        fam = ds.default_family(cfg["n_options"])
        train = ds.generate_synthetic_family(
            fam.shifted(0.0, "MRI", "organs-train"), cfg["n_train"], seed)
        id_test = ds.generate_synthetic_family(
            fam.shifted(0.0, "MRI", "organs-idtest"), cfg["n_id_test"], seed + 1)
        ood = []
        for k, spec in enumerate(cfg["ood"]):
            shifted = fam.shifted(spec["shift"], spec["modality"], f"organs-{spec['modality'].lower()}")
            ood += ds.generate_synthetic_family(shifted, spec["n"], seed + 2 + k)
        ds.SplitSpec.from_records(train, id_test, ood)
        ds.dump_records(train, out / "train.jsonl")
        ds.dump_records(id_test, out / "id_test.jsonl")
        ds.dump_records(ood, out / "ood_test.jsonl")
    else:
        raise ConfigError(f"config field 'family' must be 'organs' or 'bandit', got {cfg['family']!r}")
    _write_resolved(out, "synth", cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grpolab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--trace", action="store_true", help="write per-group debug records")
        p.add_argument("--method")

    common(sub.add_parser("train", help="train a policy with GRPO or SFT"))
    common(sub.add_parser("eval", help="strict multiple-choice evaluation of a checkpoint"))
    p = sub.add_parser("reward", help="score a JSONL file of responses")
    p.add_argument("input")
    p.add_argument("--out", help="output directory (default: stdout)")
    p.add_argument("--seed", type=int, help="accepted for uniformity; scoring is deterministic")
    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p, out_required=False)
    p.add_argument("--trials", type=int)
    p.add_argument("--fault", choices=["sign-flip"], help="inject a gradient fault (self-test)")
    common(sub.add_parser("synth", help="generate synthetic train/test splits"))
    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "reward": cmd_reward,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except TrainingAborted as exc:
        log.error("%s", exc)
        return 3
    except (ConfigError, GrpoError, ds.RecordError, PolicyError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
