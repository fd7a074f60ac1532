"""Command-line client: configure and run experiments, compare samplers, and
export projection data.

The CLI talks to the experiment service. By default the service runs
in-process, so commands work standalone; pass ``--server`` to target a
running ``spl-advise serve`` instance instead. Exit codes: 0 success,
1 runtime failure, 2 configuration problems.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .client import ServiceClient, ServiceError
from .configio import ConfigError, load_config_doc
from .selection import SAMPLERS

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config (TOML)")
    parser.add_argument("--out-dir", default="spl-advise-out", help="artifact directory")
    parser.add_argument("--seed", type=int, default=None, help="base training seed")
    parser.add_argument("--sampler", choices=SAMPLERS, default=None)
    parser.add_argument("--parallel", choices=("on", "off"), default=None)
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override, repeatable (e.g. pace.beta1=0.2)",
    )
    parser.add_argument("--server", default=None, help="service URL (default: in-process)")


def _defaults_epilog() -> str:
    from .configio import config_to_doc
    from .training import TrainConfig

    doc = config_to_doc(TrainConfig())
    lines = ["config defaults (see also configs/blobs.toml):"]
    for key in ("name", "seed", "parallel"):
        lines.append(f"  {key} = {doc[key]}")
    for section, values in doc.items():
        if not isinstance(values, dict):
            continue
        pairs = ", ".join(f"{k}={v}" for k, v in values.items())
        lines.append(f"  [{section}] {pairs}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spl-advise",
        description="Self-paced mini-batch selection experiments",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the configured sampler(s)")
    _add_run_flags(train)

    compare = sub.add_parser("compare", help="run all four samplers and tabulate")
    _add_run_flags(compare)

    viz = sub.add_parser("export-viz", help="project a checkpointed embedding to 2-D")
    viz.add_argument("--checkpoint", required=True, help="embedding checkpoint JSON")
    viz.add_argument("--config", required=True, help="config supplying [dataset]")
    viz.add_argument("--out", default="viz.csv", help="output CSV path")
    viz.add_argument("--server", default=None)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--workspace", default=None, help="artifact workspace dir")

    return parser


def _collect_overrides(args, force_samplers: bool) -> list[str]:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.sampler is not None:
        overrides.append(f'sampler.kind="{args.sampler}"')
    if args.parallel is not None:
        overrides.append(f'parallel="{args.parallel}"')
    if force_samplers:
        quoted = ", ".join(f'"{s}"' for s in SAMPLERS)
        overrides.append(f"run.samplers=[{quoted}]")
    return overrides


def _download_all(client: ServiceClient, job_id: str, out_dir: Path) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = client.artifacts(job_id)
    for name in files:
        target = out_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(client.download(job_id, name))
    return files


def _print_summary(summary: dict) -> None:
    print(f"experiment: {summary['name']}  (seeds: {summary['seeds']})")
    print(f"{'sampler':<12} {'test_acc':>9} {'std':>8} {'updates':>9}")
    for sampler, stats in summary["samplers"].items():
        print(
            f"{sampler:<12} {stats['final_test_acc_mean']:>9.4f} "
            f"{stats['final_test_acc_std']:>8.4f} "
            f"{stats['total_minibatch_updates_mean']:>9.0f}"
        )


def _run_experiment_command(args, force_samplers: bool) -> int:
    doc = load_config_doc(args.config)
    overrides = _collect_overrides(args, force_samplers)
    with ServiceClient(args.server) as client:
        job_id = client.submit_experiment(doc, overrides)
        status = client.wait(job_id)
        out_dir = Path(args.out_dir)
        _download_all(client, job_id, out_dir)
        if status["status"] == "failed":
            print(f"error: {status['error']}", file=sys.stderr)
            print(f"partial artifacts in {out_dir}", file=sys.stderr)
            return EXIT_RUNTIME
        _print_summary(status["summary"])
        print(f"artifacts written to {out_dir}")
    return EXIT_OK


def _export_viz_command(args) -> int:
    doc = load_config_doc(args.config)
    checkpoint_path = Path(args.checkpoint)
    if not checkpoint_path.exists():
        print(f"error: checkpoint not found: {checkpoint_path}", file=sys.stderr)
        return EXIT_CONFIG
    checkpoint = json.loads(checkpoint_path.read_text())
    with ServiceClient(args.server) as client:
        result = client.viz(checkpoint, doc.get("dataset", {}))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result["csv"])
    print(f"wrote {result['n_rows']} rows to {out}")
    print(f"silhouette: {result['silhouette']:.4f}")
    return EXIT_OK


def _serve_command(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.workspace), host=args.host, port=args.port)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _run_experiment_command(args, force_samplers=False)
        if args.command == "compare":
            return _run_experiment_command(args, force_samplers=True)
        if args.command == "export-viz":
            return _export_viz_command(args)
        if args.command == "serve":
            return _serve_command(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if exc.config_error else EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
