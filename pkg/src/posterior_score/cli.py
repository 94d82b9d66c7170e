"""Command-line entry point: ``posterior-score {score,synth,report}``.

Settings resolve as flags > ``--config`` TOML file > built-in defaults.
Exit codes: 0 success, 1 data or runtime error, 2 bad usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dataset, reporting, scoring, synthetic
from .density import DensityConfig, DensityError

log = logging.getLogger("posterior_score")

SYNTH_MODELS = {
    "oracle": "oracle",
    "marginal": "marginal_only",
    "marginal_only": "marginal_only",
    "shuffled": "shuffled",
    "overconfident": "overconfident",
    "shifted": "shifted",
}


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _pick(flag, config: dict, key: str, default):
    if flag is not None:
        return flag
    return config.get(key, default)


def _density_config(args, config: dict) -> DensityConfig:
    fields = {f.name for f in dataclasses.fields(DensityConfig)}
    base = {k: v for k, v in config.get("density", {}).items() if k in fields}
    unknown = set(config.get("density", {})) - fields
    if unknown:
        raise UsageError(f"unknown [density] keys in config: {', '.join(sorted(unknown))}")
    if args.density is not None:
        base["estimator"] = args.density
    if args.k_max is not None:
        base["posterior_k_max"] = args.k_max
    if args.marginal_k_max is not None:
        base["marginal_k_max"] = args.marginal_k_max
    if args.marginal_cap is not None:
        base["marginal_cap"] = args.marginal_cap
    try:
        return DensityConfig(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_score(args) -> int:
    config = _load_config(args.config)
    dconf = _density_config(args, config)
    seed = int(_pick(args.seed, config, "seed", 0))
    fmt = _pick(args.format, config, "format", None)
    features_arg = _pick(args.features, config, "features", "all")
    scoring.set_threads(args.threads)

    tables = dataset.parse_tables(args.input, fmt)
    reports = []
    for table in tables:
        available = [f.id for f in table.features]
        if features_arg == "all":
            wanted = available
        else:
            wanted = [f.strip() for f in str(features_arg).split(",") if f.strip()]
            missing = [f for f in wanted if f not in available]
            if missing:
                raise KeyError(
                    f"feature(s) {', '.join(missing)} not found for model {table.model_name!r}"
                    f" (available: {', '.join(available)})"
                )
        for fid in wanted:
            log.info("scoring model=%s feature=%s", table.model_name, fid)
            reports.append(scoring.info_gain(table, fid, dconf, seed))
    summary = reporting.write_score_outputs(reports, args.out, dump_cells=args.dump_cells)
    for row in summary["rows"]:
        vals = ", ".join(f"{f}={v:.4f}" for f, v in row["values"].items())
        print(f"{row['label']:<16} {row['model']:<24} {vals}")
    return 0


def cmd_synth(args) -> int:
    kind = SYNTH_MODELS[args.model]
    if args.offset is not None and kind != "shifted":
        raise UsageError("--offset only applies to --model shifted")
    if args.width_factor is not None and kind != "overconfident":
        raise UsageError("--width-factor only applies to --model overconfident")
    if kind == "shifted" and args.offset is None:
        raise UsageError("--model shifted requires --offset")
    if kind == "overconfident" and args.width_factor is None:
        raise UsageError("--model overconfident requires --width-factor")
    try:
        spec = synthetic.ScenarioSpec(
            n_cells=args.cells, k_samples=args.samples, conditioning_sd=args.conditioning_sd,
            posterior_sd=args.posterior_sd, seed=args.seed, family=args.family, feature=args.feature,
        )
        model = synthetic.ReferenceModel(
            kind,
            width_factor=args.width_factor if args.width_factor is not None else 1.0,
            offset=args.offset if args.offset is not None else 0.0,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = synthetic.generate_scenario(spec, model)
    out = Path(args.out)
    if (args.format or dataset.detect_format(out)) == "jsonl":
        dataset.write_jsonl(table, out)
    else:
        dataset.write_csv(table, out)
    if spec.family == "gaussian_shift":
        print(f"expected_info_gain={synthetic.expected_ig_closed_form(spec, model):.4f}")
    else:
        print("expected_info_gain=n/a")
    return 0


def cmd_report(args) -> int:
    reports, grids = reporting.load_reports(args.summaries)
    summary = reporting.summary_table(reports)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset.atomic_write_text(out, reporting.render_markdown(summary))
    data_dir = out.with_name(out.stem + "_data")
    reporting.write_plot_data(reports, grids, data_dir)
    print(f"wrote {out} and {data_dir}/")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posterior-score", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a sample table")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--features", help="'all' or a comma-separated list such as F1,F7")
    p.add_argument("--density", choices=("gmm", "kde"))
    p.add_argument("--k-max", type=int, help="max mixture components per cell posterior")
    p.add_argument("--marginal-k-max", type=int)
    p.add_argument("--marginal-cap", type=int, help="max pooled samples for the model marginal")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TOML file with defaults")
    p.add_argument("--threads", type=int, help=f"overrides ${scoring.THREADS_ENV}; 0 = auto")
    p.add_argument("--dump-cells", action="store_true", help="also write per-cell scores")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", help="generate a synthetic benchmark table")
    p.add_argument("--model", required=True, choices=sorted(SYNTH_MODELS))
    p.add_argument("--cells", type=int, default=2000)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--width-factor", type=float)
    p.add_argument("--offset", type=float)
    p.add_argument("--conditioning-sd", type=float, default=1.0)
    p.add_argument("--posterior-sd", type=float, default=0.5)
    p.add_argument("--family", choices=synthetic.FAMILIES, default="gaussian_shift")
    p.add_argument("--feature", default="F1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="render score outputs as markdown and plot data")
    p.add_argument("--summaries", required=True, help="directory written by 'score'")
    p.add_argument("--out", required=True, help="markdown output path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except (dataset.TableError, DensityError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
