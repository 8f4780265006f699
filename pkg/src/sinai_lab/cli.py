"""Command-line entry point.

    sinai-lab --list
    sinai-lab --config lln.json --set horizons=[1000,10000] --jobs 4
    sinai-lab --config lln.json --validate

Exit status: 0 when every verdict passes, 1 when a verdict fails or the
failure budget is exceeded, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigurationError
from .experiments import EXPERIMENTS, canonical_json, check_config, default_jobs, \
    defaults_for, resolve_config, run_experiment

SEED_ENV = "SINAI_LAB_SEED"
ALIASES = {"n": "horizons", "R": "replicates"}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigFileError(Exception):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}" if line else f"{path}: {message}")


def _key_line(text, key):
    """1-based line of the first occurrence of ``"key"`` in ``text`` (0 if absent)."""
    leaf = key.split(".")[-1]
    m = re.search(r'"%s"\s*:' % re.escape(leaf), text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


def load_config(path):
    """Parse a JSON config file; returns ``(dict, text)``."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigFileError(path, 0, f"cannot read config: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFileError(path, exc.lineno, f"invalid JSON: {exc.msg} (column {exc.colno})") \
            from None
    if not isinstance(data, dict):
        raise ConfigFileError(path, 1, "config must be a JSON object")
    return data, text


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, overrides):
    """Apply ``key=value`` strings; dotted keys address nested objects."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        parts[0] = ALIASES.get(parts[0], parts[0])
        val = _parse_value(value.strip())
        if parts == ["horizons"] and not isinstance(val, list):
            val = [val]
        if len(parts) > 1 and not isinstance(out.get(parts[0]), dict):
            # start from the section's defaults so a single key can be changed
            base = defaults_for(out.get("experiment")).get(parts[0])
            out[parts[0]] = json.loads(json.dumps(base)) if isinstance(base, dict) else {}
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = val
    return out


def _seed_override(raw):
    env = os.environ.get(SEED_ENV)
    if env is None:
        return raw
    try:
        seed = int(env, 0)
    except ValueError:
        raise ConfigurationError(f"{SEED_ENV}={env!r} is not an integer") from None
    return {**raw, "seed": seed}


def _print_diagnostics(path, text, diags, stream):
    for d in diags:
        line = _key_line(text, d.key) if text else 0
        where = f"{path}:{line}" if line else str(path)
        print(f"{where}: {d}", file=stream)


def write_outputs(result, out_dir, started, finished, jobs):
    """Write report.json, data.csv, summary.txt and meta.json; returns the run directory."""
    report = result.report
    h = report["config_hash"]
    run_dir = Path(out_dir) / report["experiment"] / h
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    buf = io.StringIO()
    buf.write(f"# config_hash: {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "series", "n", "replicate", "value"])
    for exp, series, n, rep, value in result.data:
        w.writerow([exp, series, n, rep, repr(float(value)) if isinstance(value, float) else value])
    (run_dir / "data.csv").write_text(buf.getvalue())

    (run_dir / "summary.txt").write_text(summary_text(report))
    meta = {"config_hash": h, "started": started, "finished": finished, "jobs": jobs,
            "output_dir": str(run_dir), "verdicts": {k: v["pass"] for k, v in
                                                     report["verdicts"].items()}}
    (run_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return run_dir


def summary_text(report):
    lines = [f"experiment   {report['experiment']}",
             f"config hash  {report['config_hash']}",
             f"master seed  {report['master_seed']}",
             f"replicates   {report['config']['replicates']}",
             f"distribution {canonical_json(report['config']['distribution'])}",
             f"function     {canonical_json(report['config']['function'])}",
             ""]
    rows = report["rows"]
    if rows:
        cols = list(rows[0])
        lines.append("  ".join(f"{c:>14}" for c in cols))
        for r in rows:
            lines.append("  ".join(f"{_fmt(r.get(c)):>14}" for c in cols))
        lines.append("")
    for name, v in report["verdicts"].items():
        lines.append(f"[{'PASS' if v['pass'] else 'FAIL'}] {name}: {v['detail']}")
    for name, v in report.get("diagnostics", {}).items():
        if isinstance(v, dict) and "pass" in v and "detail" in v:
            lines.append(f"[info:{'pass' if v['pass'] else 'fail'}] {name}: {v['detail']}")
    lines.append(f"overall: {'PASS' if report['passed'] else 'FAIL'}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def build_parser():
    p = argparse.ArgumentParser(prog="sinai-lab",
                                description="Monte Carlo checks for Sinai's walk in random environment")
    p.add_argument("command", nargs="?", choices=["run"], default="run",
                   help="optional verb; 'run' is the only one")
    p.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                   help="override a config key (dotted for nesting; repeatable)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--out", metavar="DIR", help="output root (default: config 'output' or ./out)")
    p.add_argument("--list", action="store_true", help="print the experiment names and exit")
    p.add_argument("--validate", action="store_true", help="validate the config without running")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list:
        for name in EXPERIMENTS:
            print(name)
        return EXIT_OK
    if not args.config:
        print("error: --config is required (or use --list)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw, text = load_config(args.config)
        raw = _seed_override(apply_overrides(raw, args.overrides))
    except (ConfigFileError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out is not None:
        raw["output"] = args.out

    resolved, diags = check_config(raw)
    if diags:
        _print_diagnostics(args.config, text, diags, sys.stderr)
        return EXIT_CONFIG
    if args.validate:
        print("ok")
        print(json.dumps(resolved, indent=2, sort_keys=True))
        return EXIT_OK

    cfg = resolve_config(raw)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    started = datetime.now(timezone.utc).isoformat()
    result = run_experiment(cfg, jobs=jobs)
    finished = datetime.now(timezone.utc).isoformat()
    run_dir = write_outputs(result, cfg.output, started, finished, jobs)
    sys.stdout.write(summary_text(result.report))
    print(f"wrote {run_dir}")
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
