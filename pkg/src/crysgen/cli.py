"""Operator-facing command surface.

Subcommands: ``train``, ``generate``, ``evaluate``, ``check``, ``stats``.
Configuration lives in a single TOML or JSON file; ``--set section.key=value``
flags override file fields (flags win). Every command is deterministic given
the configured seed, and seeds are recorded in all output artifacts.

Exit codes: 0 success, 2 invalid configuration, 3 incompatible checkpoint,
4 unparseable input file, 1 failed checks or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coupling import BaseDistributionSpec, fit_lattice_base
from .checks import run_all_checks
from .data import dataset_stats, load_dataset, load_structures, save_structures
from .dfm import TokenSpace
from .metrics import MatchTolerances, evaluate_sets
from .network import (
    CheckpointError,
    ModelConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .sampling import GenerationConfig, GenerationError, generate, validate_generation
from .structures import MASK_TOKEN
from .train import TrainConfig, train

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    pass


class InputParseError(ValueError):
    pass


@dataclass
class RunConfig:
    """Bundle of everything one run needs, mirrored 1:1 by the config file."""

    seed: int = 0
    dataset_path: str | None = None
    checkpoint_path: str = "model.ckpt.json"
    metrics_csv_path: str = "train_metrics.csv"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    base: BaseDistributionSpec | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset_path": self.dataset_path,
            "checkpoint_path": self.checkpoint_path,
            "metrics_csv_path": self.metrics_csv_path,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "generation": self.generation.to_dict(),
            "base": self.base.to_dict() if self.base is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"seed", "dataset_path", "checkpoint_path", "metrics_csv_path",
                 "model", "train", "generation", "base"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(
                seed=int(d.get("seed", 0)),
                dataset_path=d.get("dataset_path"),
                checkpoint_path=d.get("checkpoint_path", "model.ckpt.json"),
                metrics_csv_path=d.get("metrics_csv_path", "train_metrics.csv"),
                model=ModelConfig.from_dict(d.get("model", {})),
                train=TrainConfig.from_dict(d.get("train", {})),
                generation=GenerationConfig.from_dict(d.get("generation", {})),
                base=(BaseDistributionSpec.from_dict(d["base"])
                      if d.get("base") else None),
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None

    def validate_cross_rules(self) -> None:
        """Rules spanning sections: SDE sampling needs a latent-bearing
        interpolant and denoiser heads; species tasks need the species head."""
        try:
            validate_generation(self.generation, self.train.x_spec,
                                self.train.l_spec, self.model)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self.train.task in ("dng", "cfp") and not self.model.predict_species:
            raise ConfigError(f"task {self.train.task!r} requires model.predict_species")
        if self.train.task == "cfp" and self.model.include_geometry:
            raise ConfigError("task 'cfp' requires model.include_geometry = false")


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-table field {p!r}")
    node[parts[-1]] = value


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    """Read a TOML or JSON config file and apply flag overrides (flags win)."""
    tree: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        if p.suffix == ".json":
            try:
                tree = json.loads(p.read_text())
            except json.JSONDecodeError as err:
                raise ConfigError(f"config parse error at byte {err.pos}: {err.msg}") from None
        else:
            try:
                tree = tomllib.loads(p.read_text())
            except tomllib.TOMLDecodeError as err:
                raise ConfigError(f"config parse error: {err}") from None
    for text in overrides or []:
        key, value = _parse_override(text)
        _apply_override(tree, key, value)
    return RunConfig.from_dict(tree)


def save_config(path, config: RunConfig) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))


def _load_dataset_any(path: str) -> dict:
    """Accept either a dataset manifest (with split) or a bare structure file."""
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"dataset file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise InputParseError(f"dataset parse error at byte {err.pos}: {err.msg}") from None
    if isinstance(payload, dict) and "structures" in payload:
        return load_dataset(path)
    structures = load_structures(path)
    n = len(structures)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    order = np.random.default_rng(0).permutation(n)
    return {
        "spec": None,
        "structures": structures,
        "split": {
            "train": sorted(int(i) for i in order[:n_train]),
            "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
            "test": sorted(int(i) for i in order[n_train + n_val:]),
        },
    }


def _derive_base(config: RunConfig, train_structures) -> BaseDistributionSpec:
    if config.base is not None:
        return config.base
    sbd_x = config.train.x_spec.family in ("vp_sbd", "ve_sbd")
    sbd_l = config.train.l_spec.family in ("vp_sbd", "ve_sbd")
    return fit_lattice_base(
        train_structures,
        coord_kind="wrapped_normal" if sbd_x else "uniform",
        lattice_kind="gaussian" if sbd_l else "lognormal_angles",
        sbd_sigma0=config.train.x_spec.sigma0,
    )


def cmd_train(args) -> int:
    config = load_config(args.config, args.set)
    config.validate_cross_rules()
    if config.dataset_path is None:
        raise ConfigError("train requires dataset_path in the config")
    dataset = _load_dataset_any(config.dataset_path)
    structures = dataset["structures"]
    train_set = [structures[i] for i in dataset["split"]["train"]]
    val_set = [structures[i] for i in dataset["split"]["val"]]
    base = _derive_base(config, train_set)
    token_space = TokenSpace(n_tokens=config.model.n_tokens, mask=MASK_TOKEN)

    params = init_params(config.model, np.random.default_rng(config.seed))
    started = time.perf_counter()
    history = train(params, train_set, val_set, config.train, config.model, base,
                    token_space if config.train.task in ("dng", "cfp") else None,
                    log_fn=lambda rec: print(
                        f"epoch {rec['epoch']:4d} loss {rec['loss']:+.6f}"
                        + (f" val {rec['val_loss']:+.6f}" if "val_loss" in rec else ""),
                        flush=True))
    elapsed = time.perf_counter() - started

    save_checkpoint(config.checkpoint_path, params, config.model, extra={
        "seed": config.seed,
        "task": config.train.task,
        "train_config": config.train.to_dict(),
        "base": base.to_dict(),
        "atom_count_hist": dataset_stats(train_set)["atom_count_hist"],
    })
    if history:
        keys = sorted({k for rec in history for k in rec})
        with open(config.metrics_csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(history)
    print(f"trained {config.train.epochs} epochs in {elapsed:.1f}s; "
          f"checkpoint {config.checkpoint_path}; metrics {config.metrics_csv_path}")
    return 0


def _read_compositions(path: str) -> list[np.ndarray]:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"compositions file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise InputParseError(
            f"compositions parse error at byte {err.pos}: {err.msg}") from None
    if not isinstance(payload, list):
        raise InputParseError("compositions file must be a JSON array")
    comps = []
    for idx, item in enumerate(payload):
        if isinstance(item, dict):
            if "species" not in item:
                raise InputParseError(f"record {idx}: no species field")
            comps.append(np.asarray(item["species"], dtype=np.int64))
        else:
            comps.append(np.asarray(item, dtype=np.int64))
    return comps


def cmd_generate(args) -> int:
    config = load_config(args.config, args.set)
    config.validate_cross_rules()
    try:
        params, model, extra = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    except CheckpointError as err:
        print(f"incompatible checkpoint: {err}", file=sys.stderr)
        return 3
    if model != config.model:
        print("incompatible checkpoint: model section differs from the checkpoint "
              "manifest", file=sys.stderr)
        return 3

    task = args.task
    base = (BaseDistributionSpec.from_dict(extra["base"]) if "base" in extra
            else config.base)
    if base is None:
        raise ConfigError("no base distribution: missing from checkpoint and config")
    token_space = TokenSpace(n_tokens=model.n_tokens, mask=MASK_TOKEN)

    kwargs: dict = {}
    if task == "csp":
        if args.compositions is None:
            raise ConfigError("csp generation requires --compositions")
        comps = _read_compositions(args.compositions)
        if args.count is not None:
            comps = comps[:args.count]
        kwargs["compositions"] = comps
        n_request = len(comps)
    else:
        if args.count is None:
            raise ConfigError("dng generation requires --count")
        hist = extra.get("atom_count_hist")
        if hist is None:
            raise ConfigError("checkpoint lacks an atom-count histogram for dng")
        kwargs["atom_count_dist"] = {int(k): float(v) for k, v in hist.items()}
        kwargs["token_space"] = token_space
        n_request = args.count

    gen = config.generation
    rng = np.random.default_rng(gen.seed)
    started = time.perf_counter()
    structures = []
    n_aborts = 0
    chunk = 64
    for lo in range(0, n_request, chunk):
        hi = min(lo + chunk, n_request)
        chunk_kwargs = dict(kwargs)
        if task == "csp":
            chunk_kwargs["compositions"] = kwargs["compositions"][lo:hi]
        else:
            chunk_kwargs["n_structures"] = hi - lo
        try:
            structures.extend(generate(params, model, config.train.x_spec,
                                       config.train.l_spec, base, gen, task,
                                       rng=rng, **chunk_kwargs))
        except GenerationError as err:
            n_aborts += 1
            print(f"chunk [{lo}:{hi}] aborted: {err}", file=sys.stderr)
    elapsed = time.perf_counter() - started

    save_structures(args.out, structures)
    Path(str(args.out) + ".meta.json").write_text(json.dumps({
        "seed": gen.seed, "task": task, "count": len(structures),
        "generation": gen.to_dict(),
    }))
    print(f"generated {len(structures)}/{n_request} structures in {elapsed:.1f}s; "
          f"nan-aborted chunks {n_aborts}; wrote {args.out}")
    return 0


def _write_histogram(path: Path, values, n_bins: int = 30) -> None:
    values = np.asarray(values, dtype=np.float64)
    counts, edges = np.histogram(values, bins=n_bins)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def cmd_evaluate(args) -> int:
    try:
        gen_set = load_structures(args.generated)
        ref_set = load_structures(args.reference)
    except FileNotFoundError as err:
        raise ConfigError(str(err)) from None
    except ValueError as err:
        print(f"input parse failure: {err}", file=sys.stderr)
        return 4
    tol = MatchTolerances(stol=args.stol, ltol=args.ltol, angle_tol=args.angle_tol)
    n_threads = int(os.environ.get("CRYSGEN_THREADS", "1"))
    report = evaluate_sets(gen_set, ref_set, tol, min_dist=args.min_dist,
                           cn_cutoff=args.cn_cutoff, n_threads=n_threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "evaluation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(report["rows"][0].keys()))
        writer.writeheader()
        writer.writerows(report["rows"])
    (out_dir / "summary.json").write_text(json.dumps(report["summary"], indent=2))
    for key, label in (("rho", "density"), ("n_ary", "nary"), ("mean_cn", "cutoff_cn")):
        _write_histogram(out_dir / f"hist_{label}_generated.csv",
                         [p[key] for p in report["gen_properties"]])
        _write_histogram(out_dir / f"hist_{label}_reference.csv",
                         [p[key] for p in report["ref_properties"]])
    s = report["summary"]
    rmse = "n/a" if s["mean_rmse"] is None else f"{s['mean_rmse']:.4f}"
    print(f"match rate {s['match_rate']:.4f}; mean rmse {rmse}; "
          f"validity {s['validity_rate']:.4f}; W1 rho {s['w1_rho']:.4f}; "
          f"wrote {out_dir}")
    return 0


def cmd_check(args) -> int:
    started = time.perf_counter()
    results = run_all_checks()
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name} ({r.seconds:.2f}s): {r.detail}")
    elapsed = time.perf_counter() - started
    n_fail = sum(not r.ok for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed in {elapsed:.1f}s")
    if elapsed > 300.0:
        print("warning: check suite exceeded the 5 minute budget", file=sys.stderr)
    return 1 if n_fail else 0


def cmd_stats(args) -> int:
    try:
        dataset = _load_dataset_any(args.dataset)
    except InputParseError as err:
        print(f"input parse failure: {err}", file=sys.stderr)
        return 4
    stats = dataset_stats(dataset["structures"])
    print(json.dumps({
        "n_structures": len(dataset["structures"]),
        "split_sizes": {k: len(v) for k, v in dataset["split"].items()},
        "atom_count_hist": stats["atom_count_hist"],
        "length_mu_log": [float(v) for v in stats["length_mu_log"]],
        "length_sigma_log": [float(v) for v in stats["length_sigma_log"]],
        "species_freq": stats["species_freq"],
    }, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crysgen",
        description="Generative modeling of periodic structures with "
                    "stochastic interpolants")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--set", action="append", default=[],
                         metavar="SECTION.KEY=VALUE",
                         help="override a config field (flags win over the file)")
    p_train.set_defaults(fn=cmd_train)

    p_gen = sub.add_parser("generate", help="generate structures from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--task", choices=("csp", "dng"), required=True)
    p_gen.add_argument("--count", type=int, default=None)
    p_gen.add_argument("--compositions", default=None,
                       help="JSON file of compositions or structures (csp)")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--set", action="append", default=[])
    p_gen.set_defaults(fn=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="evaluate generated against reference")
    p_eval.add_argument("--generated", required=True)
    p_eval.add_argument("--reference", required=True)
    p_eval.add_argument("--out-dir", required=True)
    p_eval.add_argument("--stol", type=float, default=0.5)
    p_eval.add_argument("--ltol", type=float, default=0.3)
    p_eval.add_argument("--angle-tol", type=float, default=10.0)
    p_eval.add_argument("--min-dist", type=float, default=0.5)
    p_eval.add_argument("--cn-cutoff", type=float, default=3.0)
    p_eval.set_defaults(fn=cmd_evaluate)

    p_check = sub.add_parser("check", help="run the invariant suite")
    p_check.set_defaults(fn=cmd_check)

    p_stats = sub.add_parser("stats", help="print dataset statistics")
    p_stats.add_argument("--dataset", required=True)
    p_stats.set_defaults(fn=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return 2
    except InputParseError as err:
        print(f"input parse failure: {err}", file=sys.stderr)
        return 4
    except GenerationError as err:
        print(f"generation failed: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
