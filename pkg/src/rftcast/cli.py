"""``rftcast`` command line: one subcommand per pipeline stage.

Every command resolves the config (file plus ``--set key=value``
overrides), writes ``config.resolved.json`` and its artifacts under
``output_dir``, and refreshes ``manifest.json`` with sha256 hashes of
everything there. Failures print one JSON object to stderr and exit
nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .advantage import shape_table, step_advantages
from .config import ConfigError, RunConfig, load_config
from .data import SynthSpec, generate_synthetic, save_csv, target_norm_stats
from .evaluation import EvalReport, compare, evaluate
from .pipeline import PreparedData, finetune_rft, finetune_sft, prepare_data, run_selection, warm_start
from .policy import PolicyParams, load_checkpoint, save_checkpoint
from .rewards import build_reward_table
from .selection import SelectionVerdict

log = logging.getLogger("rftcast")

PRETRAINED_NAME = "pretrained.ckpt.json"
VERDICTS_NAME = "verdicts.jsonl"
SELECTED_NAME = "selected_windows.json"


class CommandError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _write_jsonl(path: Path, rows) -> Path:
    return _write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    entries = {p.relative_to(out).as_posix(): _sha256(p) for p in files}
    return _write_text(out / "manifest.json", _dumps({"version": __version__, "files": entries}))


def _pretrained(cfg: RunConfig, prepared: PreparedData) -> PolicyParams:
    """Warm-start policy, cached under output_dir keyed by what produced it."""
    if cfg["pretrain"]["checkpoint"] is not None:
        return warm_start(cfg, prepared.policy_config)
    pc = prepared.policy_config
    key = hashlib.sha256(
        json.dumps({"policy": cfg["policy"], "pretrain": cfg["pretrain"], "layout": pc.to_dict()}, sort_keys=True).encode()
    ).hexdigest()[:16]
    path = cfg.output_dir / PRETRAINED_NAME
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("extra", {}).get("fingerprint") == key:
            return load_checkpoint(path)
    log.info("running warm start (%d steps)", cfg["pretrain"]["steps"])
    params = warm_start(cfg, pc)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, path, extra={"fingerprint": key})
    return params


def _selection_key(cfg: RunConfig) -> str:
    return cfg.fingerprint("data", "policy", "pretrain", "selection")


def _select(cfg: RunConfig, prepared: PreparedData, policy: PolicyParams) -> tuple[list, list[SelectionVerdict], list[Path]]:
    windows = prepared.split.train_windows
    kept, verdicts = run_selection(cfg, windows, policy)
    if not cfg["selection"]["enabled"]:
        kept = list(windows)
    out = cfg.output_dir
    written = [
        _write_jsonl(out / VERDICTS_NAME, [v.to_dict() for v in verdicts]),
        _write_text(
            out / SELECTED_NAME,
            _dumps({
                "fingerprint": _selection_key(cfg),
                "selection_enabled": cfg["selection"]["enabled"],
                "num_windows": len(windows),
                "origin_indices": [w.origin_index for w in kept],
            }),
        ),
    ]
    return kept, verdicts, written


def _kept_windows(cfg: RunConfig, prepared: PreparedData, policy: PolicyParams) -> tuple[list, list[Path]]:
    """Kept windows from a matching ``select`` run, or selection run now."""
    path = cfg.output_dir / SELECTED_NAME
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("fingerprint") == _selection_key(cfg):
            wanted = set(doc["origin_indices"])
            return [w for w in prepared.split.train_windows if w.origin_index in wanted], []
    kept, _, written = _select(cfg, prepared, policy)
    return kept, written


def _load(path: str | None, what: str) -> PolicyParams | None:
    if path is None:
        return None
    if not Path(path).exists():
        raise CommandError(f"{what} not found: {path}")
    return load_checkpoint(path)


def _check_layout(params: PolicyParams, prepared: PreparedData, what: str) -> None:
    if params.config != prepared.policy_config:
        raise CommandError(f"{what} was built for a different data/policy configuration")


def cmd_synth(cfg: RunConfig, args) -> dict:
    spec = cfg["data"]["synth_spec"]
    if spec is None:
        raise CommandError("synth needs data.synth_spec (data.csv_path is set)")
    series = generate_synthetic(SynthSpec.from_dict(spec), cfg["data"]["synth_seed"])
    out = cfg.output_dir
    csv_path = out / "data.csv"
    out.mkdir(parents=True, exist_ok=True)
    save_csv(series, csv_path)
    echo = _write_text(out / "synth_spec.json", _dumps({"spec": spec, "seed": cfg["data"]["synth_seed"]}))
    return {"files": [str(csv_path), str(echo)], "rows": series.length}


def cmd_select(cfg: RunConfig, args) -> dict:
    prepared = prepare_data(cfg)
    policy = _pretrained(cfg, prepared)
    kept, verdicts, written = _select(cfg, prepared, policy)
    counts: dict[str, int] = {}
    for v in verdicts:
        counts[v.reason.value] = counts.get(v.reason.value, 0) + 1
    return {"files": [str(p) for p in written], "kept": len(kept), "reasons": counts}


def _save_training(out: Path, prefix: str, result, records) -> list[Path]:
    best, final = out / f"{prefix}_best.ckpt.json", out / f"{prefix}_final.ckpt.json"
    save_checkpoint(result.params, best, extra={"step": result.best_step})
    save_checkpoint(result.final_params, final)
    rec = _write_jsonl(out / f"{prefix}_records.jsonl", [r.to_dict() for r in records])
    val = _write_jsonl(out / f"{prefix}_val.jsonl", [{"step": s, "val_mse": m} for s, m in result.val_history])
    return [best, final, rec, val]


def cmd_train_sft(cfg: RunConfig, args) -> dict:
    prepared = prepare_data(cfg)
    init = _load(args.init_checkpoint, "init checkpoint") or _pretrained(cfg, prepared)
    _check_layout(init, prepared, "init checkpoint")
    records = []
    result = finetune_sft(cfg, prepared, init, on_record=records.append)
    written = _save_training(cfg.output_dir, "sft", result, records)
    return {"files": [str(p) for p in written], "best_step": result.best_step}


def cmd_train_rft(cfg: RunConfig, args) -> dict:
    prepared = prepare_data(cfg)
    pretrained = _pretrained(cfg, prepared)
    init = _load(args.init_checkpoint, "init checkpoint") or pretrained
    ref = _load(args.ref_checkpoint, "reference checkpoint") or pretrained
    _check_layout(init, prepared, "init checkpoint")
    _check_layout(ref, prepared, "reference checkpoint")
    kept, written = _kept_windows(cfg, prepared, pretrained)
    if not kept:
        raise CommandError("selection kept no training windows")
    records, trace_rows = [], []

    def trace(step, gb):
        trace_rows.append({"step": step, "origin_indices": [p.window.origin_index for p in gb.prep]})

    result = finetune_rft(cfg, prepared, init, ref, kept, on_record=records.append, trace=trace)
    written += _save_training(cfg.output_dir, "rft", result, records)
    written.append(_write_jsonl(cfg.output_dir / "rft_trace.jsonl", trace_rows))
    return {"files": [str(p) for p in written], "best_step": result.best_step, "train_windows": len(kept)}


def _report(cfg: RunConfig, prepared: PreparedData, params: PolicyParams) -> EvalReport:
    ev = cfg["eval"]
    windows = prepared.split.test_windows if ev["split"] == "test" else prepared.split.val_windows
    return evaluate(params, windows, ev["num_samples"], ev["seed"])


def _stem(path: str) -> str:
    name = Path(path).name
    return name[: -len(".ckpt.json")] if name.endswith(".ckpt.json") else Path(path).stem


def cmd_eval(cfg: RunConfig, args) -> dict:
    prepared = prepare_data(cfg)
    params = _load(args.checkpoint, "checkpoint")
    _check_layout(params, prepared, "checkpoint")
    report = _report(cfg, prepared, params)
    base = cfg.output_dir / f"eval_{_stem(args.checkpoint)}_{cfg['eval']['split']}"
    js = _write_text(base.with_suffix(".json"), report.to_json() + "\n")
    report.write_csv(base.with_suffix(".csv"))
    return {"files": [str(js), str(base.with_suffix(".csv"))], "aggregate_mse": report.aggregate_mse}


def cmd_compare(cfg: RunConfig, args) -> dict:
    prepared = prepare_data(cfg)
    a = _load(args.checkpoint_a, "checkpoint a")
    b = _load(args.checkpoint_b, "checkpoint b")
    _check_layout(a, prepared, "checkpoint a")
    _check_layout(b, prepared, "checkpoint b")
    ra, rb = _report(cfg, prepared, a), _report(cfg, prepared, b)
    summary = compare(ra, rb)
    doc = {
        "split": cfg["eval"]["split"],
        "a": {"checkpoint": args.checkpoint_a, "aggregate_mse": ra.aggregate_mse, "aggregate_mae": ra.aggregate_mae},
        "b": {"checkpoint": args.checkpoint_b, "aggregate_mse": rb.aggregate_mse, "aggregate_mae": rb.aggregate_mae},
        "summary": summary.to_dict(),
        "per_window_mse": [[x.mse, y.mse] for x, y in zip(ra.per_window, rb.per_window)],
    }
    path = _write_text(cfg.output_dir / "comparison.json", _dumps(doc))
    return {"files": [str(path)], **summary.to_dict()}


def cmd_score(cfg: RunConfig, args) -> dict:
    """Reward and advantage tables for forecasts supplied in a JSON file:
    ``{"split": "train"|"val"|"test", "window_index": i, "forecasts": [G][H][N_d]}``
    in raw units."""
    path = Path(args.forecasts)
    if not path.exists():
        raise CommandError(f"forecasts file not found: {path}")
    doc = json.loads(path.read_text())
    prepared = prepare_data(cfg)
    split = doc.get("split", "train")
    windows = {
        "train": prepared.split.train_windows,
        "val": prepared.split.val_windows,
        "test": prepared.split.test_windows,
    }.get(split)
    if windows is None:
        raise CommandError(f"unknown split {split!r}")
    idx = doc.get("window_index", 0)
    if not isinstance(idx, int) or not 0 <= idx < len(windows):
        raise CommandError(f"window_index must lie in [0, {len(windows)})")
    w = windows[idx]
    forecasts = np.asarray(doc["forecasts"], dtype=float)
    table = build_reward_table(forecasts, w.target_y, prepared.policy_config.layout, target_norm_stats(w), cfg.rewards)
    shaped = shape_table(table, cfg.shaping)
    adv = step_advantages(shaped)
    out = {
        "split": split,
        "window_index": idx,
        "origin_index": w.origin_index,
        "rewards": table.to_dict(),
        "shaped_combined": shaped.combined.tolist(),
        "advantages": adv.to_dict(),
    }
    written = _write_text(cfg.output_dir / "score.json", _dumps(out))
    return {"files": [str(written)]}


COMMANDS = {
    "synth": cmd_synth,
    "select": cmd_select,
    "train-sft": cmd_train_sft,
    "train-rft": cmd_train_rft,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "score": cmd_score,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rftcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; defaults fill everything missing")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.max_steps=50 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write the synthetic series as CSV")
    sub.add_parser("select", parents=[common], help="score training windows and write verdicts")
    p = sub.add_parser("train-sft", parents=[common], help="supervised finetuning")
    p.add_argument("--init-checkpoint")
    p = sub.add_parser("train-rft", parents=[common], help="reinforcement finetuning on kept windows")
    p.add_argument("--init-checkpoint", help="starting policy (default: the warm start)")
    p.add_argument("--ref-checkpoint", help="KL reference policy (default: the warm start)")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["val", "test"])
    p = sub.add_parser("compare", parents=[common], help="paired comparison of two checkpoints")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", required=True)
    p.add_argument("--split", choices=["val", "test"])
    p = sub.add_parser("score", parents=[common], help="reward/advantage dump for given forecasts")
    p.add_argument("--forecasts", required=True)
    return parser


def _fail(kind: str, message: str, problems: list[str] | None = None, code: int = 1) -> int:
    err = {"error": kind, "message": message}
    if problems is not None:
        err["problems"] = problems
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    overrides = list(args.overrides)
    if getattr(args, "split", None):
        overrides.append(f"eval.split={json.dumps(args.split)}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        return _fail("config", "invalid configuration", exc.problems, code=2)
    try:
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "config.resolved.json", cfg.to_json() + "\n")
        summary = COMMANDS[args.command](cfg, args)
        write_manifest(out)
    except CommandError as exc:
        return _fail("command", str(exc))
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        return _fail(type(exc).__name__, str(exc))
    print(json.dumps({"command": args.command, **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
