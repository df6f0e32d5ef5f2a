#!/usr/bin/env python3
"""Run every execution mode at each communication length and print both metric tables.

Example:
    python3 scripts/table_sweep.py --config configs/noisy_selective.yaml --c-lens 1 3 5 --out runs/sweep
"""

from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path

from gcnav import metrics
from gcnav.cli import build_backends, build_classifier, build_embedder
from gcnav.config import build_specs, build_worlds, load_config, validate
from gcnav.protocol import Mode, run_batch, write_episodes

COMM_MODES = (Mode.COOPERATIVE_ACTION, Mode.SELECTIVE_ACTION, Mode.SELECTIVE_COMMUNICATION)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="base YAML config; its episode mode and c_len are overridden")
    ap.add_argument("--c-lens", type=int, nargs="+", default=[1, 3, 5])
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    base = load_config(args.config)
    worlds = build_worlds(base)
    backends = build_backends(base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cells = [(Mode.RANDOM, 0), (Mode.NO_COMM, 0)] + [(m, c) for c in args.c_lens for m in COMM_MODES]
    reports = []
    for mode, c_len in cells:
        cfg = dataclasses.replace(base, episode=dataclasses.replace(base.episode, mode=mode.value, c_len=c_len))
        validate(cfg)
        records = run_batch(build_specs(cfg, worlds), backends, cfg.parallelism)
        write_episodes(records, out / f"{mode.value}-c{c_len}.jsonl")
        reports.append(metrics.compute_report(
            records, build_classifier(cfg.backends.get("classifier")), build_embedder(cfg.backends.get("embedder")),
            spl_success=cfg.spl_success, ghost_unit=cfg.ghost_unit))
        print(f"done {mode.value} c_len={c_len}", flush=True)

    text = metrics.format_tables(reports)
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(metrics.reports_csv(reports))
    print(text)


if __name__ == "__main__":
    main()
