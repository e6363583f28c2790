"""Command-line pipeline: one subcommand per stage, artifacts passed by file.

Stages communicate only through files — dataset caches, supernet checkpoints,
assignment JSON — so any stage can be re-run or swapped without touching the
others' outputs. Every stage directory receives the resolved configuration,
the stage seed, a build identifier, and a manifest with input/output content
hashes; a consuming stage refuses inputs whose hashes no longer match the
manifest of the stage that produced them.

Set ``EMBSIZER_LOG`` to debug/info/warning/error to control verbosity.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (consistency_eval, consistency_report, stability_csv,
                       stability_eval)
from .config import RunConfig, apply_overrides, from_dict, load_config
from .core.rng import RngStream
from .data import generate_synthetic, load_csv, load_split, save_split
from .errors import (ConfigError, DataError, EmbsizerError, StaleArtifactError)
from .retrain import SizeAssignment, build_report, retrain
from .sampling import make_sampler
from .search import expected_param_count, run_search
from .supernet import Supernet, load_supernet, train_supernet

log = logging.getLogger("embsizer.cli")

DATASET_FILE = "dataset.bin"
CHECKPOINT_FILE = "supernet.ckpt"
ASSIGNMENT_FILE = "assignment.json"

_MODE_FLAGS = {"effect": "effect_first", "resource": "resource_first"}


# -- plumbing ---------------------------------------------------------------

def _setup_logging() -> None:
    name = os.environ.get("EMBSIZER_LOG", "warning").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _build_id() -> dict:
    try:
        rev = subprocess.run(
            ["git", "-C", str(Path(__file__).resolve().parent), "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=10).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return {"package": f"embsizer {__version__}", "git": rev or "unknown"}


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2,
                               ensure_ascii=False) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None


def _consume_input(path: Path, inputs: dict) -> Path:
    """Record an input's hash; refuse it if its producing stage disagrees.

    A stage that wrote ``path`` left a manifest next to it listing the content
    hash at production time. A mismatch means something mutated the artifact
    after the fact, so downstream results would not be attributable to it.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input {path} does not exist")
    actual = _hash_file(path)
    manifest = path.parent / "manifest.json"
    if manifest.exists():
        recorded = _read_json(manifest).get("outputs", {}).get(path.name)
        if recorded is not None and recorded != actual:
            raise StaleArtifactError(
                f"{path} was modified after its producing stage ran "
                f"(manifest hash {recorded[:12]}…, file hash {actual[:12]}…)")
    inputs[str(path)] = actual
    return path


def _finish_stage(out_dir: Path, stage: str, cfg: RunConfig, seed: int,
                  inputs: dict, output_names: list[str]) -> None:
    """Write the reproducibility trio: resolved config, then the manifest."""
    write_json(out_dir / "config.json", cfg.resolved())
    manifest = {
        "stage": stage,
        "seed": seed,
        "build": _build_id(),
        "inputs": inputs,
        "outputs": {name: _hash_file(out_dir / name)
                    for name in sorted(output_names + ["config.json"])},
    }
    write_json(out_dir / "manifest.json", manifest)
    log.info("%s: wrote %s", stage, ", ".join(sorted(output_names)))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> RunConfig:
    overrides = {}
    for flag, dotted in (("seed", "seed"), ("scheme", "scheme"),
                         ("sampler", "sampler.kind"),
                         ("lambda_r", "search.lambda_r"),
                         ("lambda_c", "search.lambda_c")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[dotted] = value
    mode = getattr(args, "mode", None)
    if mode is not None:
        overrides["search.mode"] = _MODE_FLAGS[mode]
    if getattr(args, "config", None):
        return load_config(args.config, overrides)
    return from_dict(apply_overrides({}, overrides))


def _load_split_checked(path: Path):
    try:
        return load_split(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None


def _load_net(ckpt: Path, split):
    net, sampler_state = load_supernet(ckpt, expected_schema_hash=split.schema_hash())
    return net, sampler_state


@contextmanager
def _pool(workers: int | None):
    """Ordered map over independent units; a process pool when workers > 1."""
    if workers is not None and workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as executor:
            yield executor.map
    else:
        yield map


def _native(obj):
    """Recursively convert numpy scalars/arrays for JSON emission."""
    if isinstance(obj, np.ndarray):
        return [_native(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_native(v) for v in obj]
    return obj


# -- stages -----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    if cfg.synthetic is None:
        raise ConfigError("synth needs a config with a dataset.synthetic section")
    out = _out_dir(args)
    split = generate_synthetic(cfg.synthetic)
    save_split(out / DATASET_FILE, split)
    _finish_stage(out, "synth", cfg, cfg.seed("data"), {}, [DATASET_FILE])
    return 0


def cmd_prep(args) -> int:
    cfg = _load_cfg(args)
    if cfg.dataset_schema is None:
        raise ConfigError("prep needs a config with a dataset.schema section")
    out = _out_dir(args)
    inputs: dict = {}
    source = _consume_input(Path(args.input), inputs)
    split = load_csv(source, cfg.dataset_schema)
    save_split(out / DATASET_FILE, split)
    _finish_stage(out, "prep", cfg, cfg.seed("data"), inputs, [DATASET_FILE])
    return 0


def cmd_train_supernet(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    inputs: dict = {}
    split = _load_split_checked(_consume_input(Path(args.data), inputs))
    seed = cfg.seed("supernet")

    net = Supernet(cfg.model, split.schemas, cfg.candidates, cfg.scheme, seed=seed)
    sampler = make_sampler(cfg.sampler_kind,
                           [s.cardinality for s in split.schemas],
                           list(cfg.candidates.sizes),
                           RngStream(seed).child("sampler"),
                           rate_kwargs=cfg.sampler_rates or None)
    history = train_supernet(net, sampler, split, epochs=cfg.supernet_epochs,
                             batch_size=cfg.supernet_batch, run_seed=seed)

    rates = getattr(sampler, "rates", None)
    state = None if rates is None else {"p_e": rates.p_e, "p_f": rates.p_f}
    net.save(out / CHECKPOINT_FILE, data_schema_hash=split.schema_hash(),
             sampler_state=state)
    write_json(out / "supernet_log.json", [{
        "epoch": rec.epoch,
        "mean_loss": rec.mean_loss,
        "p_e": _native(rec.p_e) if rec.p_e is not None else None,
        "p_f": _native(rec.p_f) if rec.p_f is not None else None,
    } for rec in history])
    _finish_stage(out, "train-supernet", cfg, seed, inputs,
                  [CHECKPOINT_FILE, "supernet_log.json"])
    return 0


def cmd_search(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    inputs: dict = {}
    split = _load_split_checked(_consume_input(Path(args.data), inputs))
    net, _ = _load_net(_consume_input(Path(args.ckpt), inputs), split)

    search_cfg = replace(cfg.search, seed=cfg.seed("search"))
    result = run_search(net, split, search_cfg)
    doc = {
        "assignment": result.assignment,
        "sizes": [int(d) for d in result.sizes],
        "selection": [int(j) for j in result.selection],
        "p": _native(result.p),
        "converged": result.converged,
        "steps": result.steps,
        "expected_params": expected_param_count(net, result.p),
        "schema_hash": split.schema_hash(),
        "penalty": {"lambda_r": search_cfg.penalty.lambda_r,
                    "lambda_c": search_cfg.penalty.lambda_c,
                    "lambda_rew": search_cfg.penalty.lambda_rew},
    }
    write_json(out / ASSIGNMENT_FILE, doc)
    _finish_stage(out, "search", cfg, search_cfg.seed, inputs, [ASSIGNMENT_FILE])
    return 0


def _retrain_to_report(cfg: RunConfig, split, sizes: list[int],
                       inherit_net=None) -> dict:
    result = retrain(sizes, split, cfg.model, epochs=cfg.retrain_epochs,
                     batch_size=cfg.retrain_batch, seed=cfg.seed("retrain"),
                     inherit_from=inherit_net, baseline_size=cfg.baseline_size)
    return build_report(result, split.schemas, cfg.model)


def cmd_retrain(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    inputs: dict = {}
    split = _load_split_checked(_consume_input(Path(args.data), inputs))
    doc = _read_json(_consume_input(Path(args.assignment), inputs))
    recorded = doc.get("schema_hash")
    if recorded is not None and recorded != split.schema_hash():
        raise StaleArtifactError(
            "assignment was searched on a dataset with a different schema")
    sizes = SizeAssignment(tuple(int(d) for d in doc["sizes"]))\
        .validated(cfg.candidates, split.schemas).sizes

    inherit_net = None
    if args.inherit:
        inherit_net, _ = _load_net(_consume_input(Path(args.inherit), inputs), split)
    report = _retrain_to_report(cfg, split, list(sizes), inherit_net)
    write_json(out / "report.json", report)
    _finish_stage(out, "retrain", cfg, cfg.seed("retrain"), inputs, ["report.json"])
    return 0


def cmd_baseline(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    inputs: dict = {}
    split = _load_split_checked(_consume_input(Path(args.data), inputs))
    sizes = [int(args.ues)] * len(split.schemas)
    report = {"ues": int(args.ues),
              **_retrain_to_report(cfg, split, sizes)}
    write_json(out / "report.json", report)
    _finish_stage(out, "baseline", cfg, cfg.seed("retrain"), inputs, ["report.json"])
    return 0


def cmd_consistency(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    inputs: dict = {}
    split = _load_split_checked(_consume_input(Path(args.data), inputs))
    net, _ = _load_net(_consume_input(Path(args.ckpt), inputs), split)
    k = args.k if args.k is not None else cfg.consistency_k
    with _pool(args.workers) as map_fn:
        result = consistency_eval(
            net, split, k=k, rng=RngStream(cfg.seed("search")).child("consistency"),
            retrain_epochs=cfg.standalone_epochs, batch_size=cfg.retrain_batch,
            eval_samples=cfg.eval_samples, map_fn=map_fn)
    write_json(out / "consistency.json", consistency_report(result))
    _finish_stage(out, "consistency", cfg, cfg.seed("search"), inputs,
                  ["consistency.json"])
    return 0


def cmd_stability(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    inputs: dict = {}
    split = _load_split_checked(_consume_input(Path(args.data), inputs))
    net, _ = _load_net(_consume_input(Path(args.ckpt), inputs), split)
    runs = args.runs if args.runs is not None else cfg.stability_runs
    base = cfg.seed("search")
    with _pool(args.workers) as map_fn:
        report = stability_eval(net, split, cfg.search,
                                seeds=range(base, base + runs), map_fn=map_fn)
    (out / "stability.csv").write_text(stability_csv(report), encoding="utf-8")
    write_json(out / "stability.json", {
        "fields": report.field_names,
        "sizes": [int(d) for d in report.sizes],
        "histogram": _native(report.histogram),
        "mode_sizes": report.mode_sizes,
        "mode_frequency": _native(report.mode_frequency),
        "runs": report.runs,
    })
    _finish_stage(out, "stability", cfg, base, inputs,
                  ["stability.csv", "stability.json"])
    return 0


_REPORT_NAMES = ("config.json", "supernet_log.json", ASSIGNMENT_FILE,
                 "report.json", "consistency.json", "stability.json")


def cmd_report(args) -> int:
    """Merge every stage artifact under a run directory into one summary."""
    run_dir = Path(args.run)
    if not run_dir.is_dir():
        raise DataError(f"run directory {run_dir} does not exist")
    artifacts: dict[str, object] = {}
    for path in sorted(run_dir.rglob("*")):
        rel = path.relative_to(run_dir).as_posix()
        if path.name in _REPORT_NAMES:
            artifacts[rel] = _read_json(path)
        elif path.name == "stability.csv":
            artifacts[rel] = path.read_text(encoding="utf-8")
        elif path.name == "manifest.json":
            recorded = _read_json(path).get("outputs", {})
            for name, expected in recorded.items():
                target = path.parent / name
                if not target.exists() or _hash_file(target) != expected:
                    raise StaleArtifactError(
                        f"{target} no longer matches the manifest of its stage")
    if not artifacts:
        raise DataError(f"no stage artifacts found under {run_dir}")
    summary = {"artifacts": artifacts, "n_artifacts": len(artifacts)}
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "summary.json", summary)
    return 0


# -- entry point ------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--seed", type=int, help="set every stage seed at once")

    parser = argparse.ArgumentParser(
        prog="embsizer",
        description="Per-field embedding size search: train a weight-sharing "
                    "supernet, search size assignments, retrain, evaluate.")
    parser.add_argument("--version", action="version",
                        version=f"embsizer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, fn, help_, parents=(common,), out_required=True):
        p = sub.add_parser(name, parents=list(parents), help=help_)
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(fn=fn)
        return p

    stage("synth", cmd_synth, "generate a synthetic labeled dataset")

    p = stage("prep", cmd_prep, "encode a CSV into a cached dataset split")
    p.add_argument("--input", required=True, help="source CSV file")

    p = stage("train-supernet", cmd_train_supernet,
              "train the weight-sharing supernet over all candidate sizes")
    p.add_argument("--data", required=True, help="dataset cache from synth/prep")
    p.add_argument("--scheme", choices=["independent", "shared"],
                   help="candidate weight storage scheme")
    p.add_argument("--sampler", choices=["adaptive", "random",
                                         "vanilla_uniform", "weight_uniform"],
                   help="subnet sampling strategy")

    p = stage("search", cmd_search,
              "search a per-field size assignment on a trained supernet")
    p.add_argument("--ckpt", required=True, help="supernet checkpoint")
    p.add_argument("--data", required=True, help="dataset cache")
    p.add_argument("--mode", choices=sorted(_MODE_FLAGS),
                   help="penalty preset: effect- or resource-first")
    p.add_argument("--lambda-r", dest="lambda_r", type=float,
                   help="resource penalty weight")
    p.add_argument("--lambda-c", dest="lambda_c", type=float,
                   help="competition reward weight")

    p = stage("retrain", cmd_retrain,
              "retrain a searched assignment from scratch and evaluate it")
    p.add_argument("--assignment", required=True, help="assignment JSON from search")
    p.add_argument("--data", required=True, help="dataset cache")
    p.add_argument("--inherit", help="supernet checkpoint to warm-start from")

    p = stage("baseline", cmd_baseline,
              "train a uniform-size baseline for comparison")
    p.add_argument("--ues", required=True, type=int,
                   help="uniform embedding size for every field")
    p.add_argument("--data", required=True, help="dataset cache")

    p = stage("consistency", cmd_consistency,
              "rank-agreement of inherited vs stand-alone subnet scores")
    p.add_argument("--ckpt", required=True, help="supernet checkpoint")
    p.add_argument("--data", required=True, help="dataset cache")
    p.add_argument("--k", type=int, help="number of architectures to compare")
    p.add_argument("--workers", type=int, default=os.cpu_count(),
                   help="parallel stand-alone trainings (default: cores)")

    p = stage("stability", cmd_stability,
              "mode frequency of repeated searches across seeds")
    p.add_argument("--ckpt", required=True, help="supernet checkpoint")
    p.add_argument("--data", required=True, help="dataset cache")
    p.add_argument("--runs", type=int, help="number of repeated searches")
    p.add_argument("--workers", type=int, default=os.cpu_count(),
                   help="parallel searches (default: cores)")

    p = stage("report", cmd_report,
              "merge stage artifacts under a directory into one summary",
              out_required=False)
    p.add_argument("--run", required=True, help="directory holding stage outputs")
    p.add_argument("--out", help="where to write summary.json (default: --run)")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except EmbsizerError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        if isinstance(exc, ConfigError):
            return 2
        if isinstance(exc, (StaleArtifactError, DataError)):
            return 3
        return 1


if __name__ == "__main__":
    sys.exit(main())
