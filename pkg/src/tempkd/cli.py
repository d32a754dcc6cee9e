"""Thin command-line client for the tempkd service.

Every verb builds a request, sends it through HTTP, and formats the
response. Without ``--server`` the requests run against an in-process
instance of the service app, so no daemon is needed for local work;
pointing ``--server`` at a running ``tempkd serve`` instance sends the
same requests over the network.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx


def _make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from starlette.testclient import TestClient

    from .service import app
    return TestClient(app, base_url="http://tempkd.local")


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {args.config}")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config file is not valid JSON: {exc}") from exc
    else:
        config = {}
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        config["epochs"] = args.epochs
    if getattr(args, "controller", None) is not None:
        config["controller"] = args.controller
    if getattr(args, "out", None) is not None:
        config["out_dir"] = args.out
    return config


class CliError(Exception):
    pass


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise CliError(f"request to {path} failed: {exc}") from exc
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise CliError(f"{path} returned {response.status_code}: {detail}")
    return response.json()


def _cmd_distill(args) -> int:
    config = _load_config(args)
    with _make_client(args.server) as client:
        if args.dump_config:
            resolved = _post(client, "/config/resolve", config)
            print(json.dumps(resolved, indent=2))
            return 0
        body = _post(client, "/runs/distill", {"config": config})
    summary = body["summary"]
    print(f"controller={summary['controller']} seed={summary['seed']} epochs={summary['epochs']}")
    print(f"teacher train accuracy: {summary['teacher_train_accuracy']:.4f}")
    print(f"final val accuracy:     {summary['final_val_accuracy']:.4f}")
    print(f"final val loss:         {summary['final_val_loss']:.4f}")
    print(f"wall seconds:           {summary['wall_seconds']:.1f}")
    for warning in summary["warnings"]:
        print(f"warning: {warning}")
    if summary["out_dir"]:
        print(f"artifacts written to {summary['out_dir']}")
    return 0


def _cmd_train_teacher(args) -> int:
    config = _load_config(args)
    with _make_client(args.server) as client:
        body = _post(client, "/runs/train-teacher", {"config": config})
    print(f"teacher train accuracy: {body['train_accuracy']:.4f}")
    print(f"parameter count:        {body['parameter_count']}")
    if body["path"]:
        print(f"saved to {body['path']}")
    return 0


def _parse_seeds(raw: str) -> list[int]:
    try:
        return [int(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise CliError(f"--seeds must be a comma-separated list of integers: {exc}") from exc


def _cmd_compare(args) -> int:
    config = _load_config(args)
    seeds = _parse_seeds(args.seeds)
    with _make_client(args.server) as client:
        body = _post(client, "/runs/compare", {"config": config, "seeds": seeds})
    print(f"{'seed':>6} {'fixed':>10} {'rlkd':>10} {'delta':>10}")
    for row in body["rows"]:
        print(f"{row['seed']:>6} {row['fixed_val_accuracy']:>10.4f} "
              f"{row['rlkd_val_accuracy']:>10.4f} {row['delta']:>+10.4f}")
    print(f"{'mean':>6} {body['fixed_mean']:>10.4f} {body['rlkd_mean']:>10.4f} {body['delta']:>+10.4f}")
    print(f"{'std':>6} {body['fixed_std']:>10.4f} {body['rlkd_std']:>10.4f}")
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config(args)
    seeds = _parse_seeds(args.seeds)
    with _make_client(args.server) as client:
        body = _post(client, "/runs/ablate", {"config": config, "seeds": seeds})
    print(f"{'variant':<18} {'mean val acc':>14} {'std':>10}")
    for row in body["rows"]:
        print(f"{row['variant']:<18} {row['mean_val_accuracy']:>14.4f} {row['std_val_accuracy']:>10.4f}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_common(parser: argparse.ArgumentParser, *, seeds_default: str | None = None) -> None:
    parser.add_argument("--config", help="path to a JSON experiment config")
    parser.add_argument("--out", help="output directory for run artifacts")
    parser.add_argument("--server", help="base URL of a running tempkd service (default: in-process)")
    if seeds_default is None:
        parser.add_argument("--seed", type=int, help="root seed override")
        parser.add_argument("--epochs", type=int, help="epoch count override")
    else:
        parser.add_argument("--seeds", default=seeds_default,
                            help="comma-separated seeds (default: %(default)s)")
        parser.add_argument("--epochs", type=int, help="epoch count override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempkd", description="instance-temperature distillation runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distill", help="run one distillation experiment")
    _add_common(p)
    p.add_argument("--controller", choices=["fixed", "rlkd"], help="temperature controller override")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("train-teacher", help="train and save just the teacher")
    _add_common(p)
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("compare", help="run fixed vs rlkd on the same seeds")
    _add_common(p, seeds_default="0,1,2,3,4")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("ablate", help="run the ablation toggles end to end")
    _add_common(p, seeds_default="0")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
