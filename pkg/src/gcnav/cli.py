"""``gcnav`` command line: generate worlds, run batches, analyze, probe, export."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import random
import subprocess
import sys
from pathlib import Path
from typing import Any

from . import __version__, metrics, prompts
from .agents import BackendError, MissingApiKey, build_backend
from .config import ConfigError, RunConfig, build_specs, build_worlds, load_config
from .protocol import Backends, EpisodeRecord, SpecError, read_episodes, run_batch, write_episodes
from .world import GenerationFailed, Heading, Pose, WorldError, save_world

log = logging.getLogger("gcnav")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_BACKEND = 0, 2, 3, 4

EPISODE_COLUMNS = ["episode_id", "world_name", "target_label", "mode", "c_len", "k", "outcome", "excluded",
                   "exclusion_kind", "n_steps", "initial_distance", "min_distance", "final_distance",
                   "shortest_path_length", "path_length", "n_turns"]
TRANSCRIPT_COLUMNS = ["episode_id", "step_index", "turn_index", "speaker", "text"]
PROBE_COLUMNS = ["grid_cells", "n", "accuracy_pct", "mean_cell_distance"]


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --- helpers -----------------------------------------------------------------------


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).parent)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:8]


def _new_run_dir(cfg: RunConfig, out: str | None) -> Path:
    if out is not None:
        path = Path(out)
        if path.exists() and any(path.iterdir()):
            raise CliError(f"output directory {path} is not empty; run directories are append-only", EXIT_IO)
        return path
    stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = Path(cfg.output_dir) / f"{stamp}-{_config_hash(cfg)}"
    path, n = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{n}")
        n += 1
    return path


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config, allow_any_clen=args.allow_any_clen)
    if getattr(args, "seed", None) is not None:
        cfg.worlds.seed = args.seed
    if getattr(args, "parallelism", None) is not None:
        if args.parallelism < 1:
            raise ConfigError("--parallelism must be >= 1")
        cfg.parallelism = args.parallelism
    return cfg


def build_backends(cfg: RunConfig) -> Backends:
    seed = cfg.worlds.seed
    return Backends(oa=build_backend(cfg.backends["oa"], seed), ga=build_backend(cfg.backends["ga"], seed),
                    decider=build_backend(cfg.backends["decider"], seed))


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def _read_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def _read_run(run_dir: Path) -> list[EpisodeRecord]:
    path = run_dir / "episodes.jsonl"
    if not path.exists():
        raise CliError(f"{path} not found", EXIT_IO)
    return read_episodes(path)


def build_classifier(spec: Any) -> metrics.PreemptiveClassifier:
    if spec is None:
        return metrics.RuleBasedClassifier()
    if isinstance(spec, str):
        spec = {"id": spec}
    cid = spec.get("id")
    if cid == "rule":
        return metrics.RuleBasedClassifier()
    if cid == "ground_truth":
        return metrics.GroundTruthClassifier()
    if cid == "llm":
        backend_spec = (spec.get("params") or {}).get("backend")
        if backend_spec is None:
            raise ConfigError("llm classifier needs params.backend")
        return metrics.LLMClassifier(build_backend(backend_spec))
    raise ConfigError(f"unknown classifier {cid!r}")


def build_embedder(spec: Any) -> metrics.TextEmbedder:
    if spec is None:
        return metrics.BagOfWordsEmbedder()
    if isinstance(spec, str):
        spec = {"id": spec}
    eid = spec.get("id")
    if eid == "bow":
        return metrics.BagOfWordsEmbedder()
    if eid == "sentence-transformer":
        return metrics.SentenceTransformerEmbedder(**(spec.get("params") or {}))
    raise ConfigError(f"unknown embedder {eid!r}")


# --- subcommands ----------------------------------------------------------------------


def cmd_gen_worlds(args: argparse.Namespace) -> int:
    cfg = _load(args)
    worlds = build_worlds(cfg)
    out = Path(args.out or Path(cfg.output_dir) / "worlds")
    out.mkdir(parents=True, exist_ok=True)
    for w in worlds:
        save_world(w, out / f"{w.name}.world")
    print(f"wrote {len(worlds)} worlds to {out}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> Path:
    cfg = _load(args)
    worlds = build_worlds(cfg)
    specs = build_specs(cfg, worlds)
    backends = build_backends(cfg)
    run_dir = _new_run_dir(cfg, args.out)
    (run_dir / "worlds").mkdir(parents=True, exist_ok=True)
    for w in worlds:
        save_world(w, run_dir / "worlds" / f"{w.name}.world")
    log.info("running %d episodes (mode=%s, c_len=%d, parallelism=%d)", len(specs), cfg.episode.mode,
             cfg.episode.c_len, cfg.parallelism)
    records = run_batch(specs, backends, cfg.parallelism)
    write_episodes(records, run_dir / "episodes.jsonl")
    excluded = sum(1 for r in records if r.excluded)
    manifest = {
        "run_id": run_dir.name,
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "package_version": __version__,
        "git_describe": _git_describe(),
        "templates_digest": prompts.templates_digest(),
        "config": cfg.to_dict(),
        "n_episodes": len(records),
        "n_excluded": excluded,
    }
    _write_text(run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"run {run_dir}: {len(records)} episodes, {excluded} excluded")
    return run_dir


def analyze_run(run_dir: Path) -> str:
    """Compute reports for a run directory and write report/term files. Returns the report text."""
    records = _read_run(run_dir)
    conf = _read_manifest(run_dir).get("config", {})
    backends = conf.get("backends", {})
    classifier = build_classifier(backends.get("classifier"))
    embedder = build_embedder(backends.get("embedder"))
    reports = [metrics.compute_report(group, classifier, embedder, spl_success=conf.get("spl_success", "oracle"),
                                      ghost_unit=conf.get("ghost_unit", "mention"))
               for group in metrics.group_records(records)]
    text = metrics.format_tables(reports)
    _write_text(run_dir / "report.txt", text)
    _write_text(run_dir / "report.csv", metrics.reports_csv(reports))
    try:
        terms = metrics.term_frequencies(records)
    except metrics.EmptySet:
        terms = []
    _write_text(run_dir / "terms.csv", metrics.terms_csv(terms))
    return text


def cmd_analyze(args: argparse.Namespace) -> int:
    print(analyze_run(Path(args.run_dir)), end="")
    return EXIT_OK


def probe_table(cfg: RunConfig) -> list[dict]:
    worlds = build_worlds(cfg)
    specs = build_specs(cfg, worlds)
    backend = build_backend(cfg.backends.get("probe", "oracle"), cfg.worlds.seed)
    rows = []
    for g in cfg.probe.grid_sizes:
        results = []
        for spec in specs:
            world = spec.world
            poses = [spec.start_pose]
            rng = random.Random(f"probe:{world.seed}")
            free = world.free_cells()
            for _ in range(cfg.probe.poses_per_world - 1):
                x, y = rng.choice(free)
                poses.append(Pose(x, y, Heading(rng.randrange(4))))
            for pose in poses:
                results.append(metrics.localization_probe(world, pose, g, backend.bind(spec.seed, "probe"),
                                                          spec.crop))
        n = len(results)
        rows.append({
            "grid_cells": g,
            "n": n,
            "accuracy_pct": 100.0 * sum(r.correct for r in results) / n,
            "mean_cell_distance": math.fsum(r.distance_cells for r in results) / n,
        })
    return rows


def format_probe_table(rows: list[dict]) -> str:
    lines = [f"{'Grid cells':>10}  {'N':>5}  {'Accuracy %':>10}  {'Mean cell dist':>14}"]
    for r in rows:
        lines.append(f"{r['grid_cells']:>10}  {r['n']:>5}  {r['accuracy_pct']:>10.2f}  "
                     f"{r['mean_cell_distance']:>14.3f}")
    return "\n".join(lines) + "\n"


def cmd_probe(args: argparse.Namespace) -> int:
    cfg = _load(args)
    rows = probe_table(cfg)
    text = format_probe_table(rows)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "probe.txt", text)
        with open(out / "probe.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, PROBE_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def export_csv(run_dir: Path) -> tuple[Path, Path]:
    records = _read_run(run_dir)
    ep_path, tr_path = run_dir / "episodes.csv", run_dir / "transcripts.csv"
    with open(ep_path, "w", newline="", encoding="utf-8") as fe, \
            open(tr_path, "w", newline="", encoding="utf-8") as ft:
        ew = csv.writer(fe, lineterminator="\n")
        tw = csv.writer(ft, lineterminator="\n")
        ew.writerow(EPISODE_COLUMNS)
        tw.writerow(TRANSCRIPT_COLUMNS)
        for r in records:
            s = r.spec
            turns = [t for tr in r.transcripts() for t in tr]
            ew.writerow([s.episode_id, s.world_name, s.target_label, s.mode.value, s.c_len, s.k, r.outcome.value,
                         int(r.excluded), (r.exclusion or {}).get("kind", ""), len(r.steps), r.initial_distance,
                         r.min_distance, r.final_distance, r.shortest_path_length, r.path_length, len(turns)])
            for step in r.steps:
                for i, turn in enumerate(step.transcript or ()):
                    tw.writerow([s.episode_id, step.step_index, i, turn.speaker, turn.text])
    return ep_path, tr_path


def cmd_export(args: argparse.Namespace) -> int:
    if args.format != "csv":
        raise CliError(f"unknown export format {args.format!r} (supported: csv)", EXIT_CONFIG)
    for p in export_csv(Path(args.run_dir)):
        print(f"wrote {p}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcnav", description="Assisted object-navigation dialogue experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--allow-any-clen", action="store_true")
        return sp

    run = with_config(sub.add_parser("run", help="generate/load worlds and run a batch of episodes"))
    run.add_argument("--parallelism", type=int)
    run.set_defaults(func=lambda a: (cmd_run(a), EXIT_OK)[1])

    gen = with_config(sub.add_parser("gen-worlds", help="generate and save worlds"))
    gen.set_defaults(func=cmd_gen_worlds)

    probe = with_config(sub.add_parser("probe-localization", help="overhead localization accuracy by grid size"))
    probe.set_defaults(func=cmd_probe)

    an = sub.add_parser("analyze", help="compute metric tables for a run directory")
    an.add_argument("run_dir")
    an.set_defaults(func=cmd_analyze)

    ex = sub.add_parser("export", help="export a run as CSV")
    ex.add_argument("run_dir")
    ex.add_argument("--format", default="csv")
    ex.set_defaults(func=cmd_export)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except MissingApiKey as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, SpecError, GenerationFailed, WorldError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error ({exc.kind}): {exc.detail}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
