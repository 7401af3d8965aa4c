"""Thin-client command line interface.

The CLI never computes anything itself: it reads a config file, builds the
experiment request, sends it to the service over HTTP (an in-process ASGI
transport by default, a remote base URL with --server), and writes the
returned artifacts.  Exit codes: 0 success, 2 the experiment ran but a
contract (band/bound/pass flag) failed, 1 operational or configuration
error.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import httpx

from .config import ConfigParse, ExperimentConfig, load_config_file

SUBCOMMANDS = ("classify", "melnikov", "leaves", "barriers", "loop", "scaling", "stability")


def _request_payload(cfg: ExperimentConfig, threads: int) -> dict:
    if cfg.inline_system is not None:
        raise ConfigParse(
            "inline system definitions run through the library API; the service "
            "accepts built-in system names"
        )
    return {
        "system": {
            "name": cfg.system_name,
            "perturbation": cfg.perturbation,
            "epsilon": cfg.epsilon,
        },
        "params": {
            "mu": cfg.mu,
            "beta": cfg.beta,
            "varpi": cfg.varpi,
            "d_grid": cfg.d_grid,
            "tau_grid": cfg.tau_grid,
            "eps_grid": cfg.eps_grid,
            "directions": cfg.directions,
            "alpha_grid_n": cfg.alpha_grid_n,
            "alpha_span": cfg.alpha_span,
            "n_loops": cfg.n_loops,
            "seed": cfg.seed,
        },
        "tolerances": {
            "rtol": cfg.rtol,
            "atol": cfg.atol,
            "crossing": cfg.crossing_tol,
            "transversality_floor": cfg.transversality_floor,
        },
        "threads": threads,
    }


def make_client(server: str | None) -> httpx.AsyncClient:
    if server:
        return httpx.AsyncClient(base_url=server, timeout=600.0)
    from .service.app import app

    return httpx.AsyncClient(
        transport=httpx.ASGITransport(app=app), base_url="http://homloop.local",
        timeout=600.0,
    )


async def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    async with make_client(server) as client:
        return await client.post(path, json=payload)


def _write_artifacts(report: dict, out_dir: Path, kind: str, verbose: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(report)
    csv_keys = [k for k in payload if k.endswith("_csv")]
    for key in csv_keys:
        val = payload.pop(key)
        if isinstance(val, dict):
            for name, text in sorted(val.items()):
                path = out_dir / f"{kind}_{key[:-4]}_{name}.csv"
                path.write_text(text, encoding="utf-8", newline="")
                if verbose:
                    print(f"wrote {path}", file=sys.stderr)
        else:
            path = out_dir / f"{kind}_{key[:-4]}.csv"
            path.write_text(val, encoding="utf-8", newline="")
            if verbose:
                print(f"wrote {path}", file=sys.stderr)
    path = out_dir / f"{kind}_report.json"
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n",
        encoding="utf-8", newline="",
    )
    if verbose:
        print(f"wrote {path}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if argv and argv[0] == "serve":
        return _serve(argv[1:])
    parser = argparse.ArgumentParser(
        prog="homloop",
        description="Loop maps, splitting integrals and scaling laws for planar "
        "piecewise-smooth systems (thin client over the homloop service).",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("HOMLOOP_THREADS", "1")),
        help="grid-cell parallelism (default HOMLOOP_THREADS or 1)",
    )
    parser.add_argument("--server", default=None, help="remote service base URL")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config_file(args.config)
        payload = _request_payload(cfg, args.threads)
    except (ConfigParse, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        resp = asyncio.run(_post(args.server, f"/{args.subcommand}", payload))
    except httpx.HTTPError as exc:
        print(f"error: service unreachable: {exc}", file=sys.stderr)
        return 1

    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        print(f"error ({resp.status_code}): {detail}", file=sys.stderr)
        return 1

    report = resp.json()
    _write_artifacts(report, Path(args.out), args.subcommand, args.verbose)
    if not report.get("contract_ok", True):
        print("contract violation: see report", file=sys.stderr)
        return 2
    return 0


def _serve(argv: list[str]) -> int:
    parser = argparse.ArgumentParser(prog="homloop serve")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args(argv)
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
