"""Command-line client for the registration service.

Every subcommand issues one HTTP request. By default the service runs
in-process (no daemon needed); pass --server to target a running instance
started with `sherdbatch serve`. Either way the client and service must
share a filesystem, since requests reference files by path.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sherdbatch",
        description="Match and register front/back fragment scan batches")
    parser.add_argument("--server", default=None,
                        help="service URL; omit to run the service in-process")
    parser.add_argument("--config", default=None,
                        help="JSON file of pipeline settings (flags take precedence)")
    parser.add_argument("--seed", type=int, default=None, help="pipeline RNG seed")
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel workers for per-fragment stages")
    parser.add_argument("--out-dir", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic batch with ground truth")
    p.add_argument("-n", type=int, default=8, help="fragments per batch (1-20)")
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--sample-spacing", type=float, default=None)
    p.add_argument("--adversarial", action="store_true",
                   help="make fragment 1 a near-duplicate of fragment 0")

    p = sub.add_parser("extract-contour", help="contour + descriptor of one scan")
    p.add_argument("ply")
    p.add_argument("--out", default=None, help="write the contour JSON here")
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None, help="alpha radius in mm")

    p = sub.add_parser("match", help="pair two directories of scans")
    p.add_argument("front_dir")
    p.add_argument("back_dir")
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)

    p = sub.add_parser("extract-boundary", help="boundary points of one scan")
    p.add_argument("ply")
    p.add_argument("--cameras", default=None, help="camera/mask metadata JSON")
    p.add_argument("--out-ply", default=None)
    p.add_argument("--out-json", default=None)
    p.add_argument("--k", type=int, default=None, help="neighborhood size")
    p.add_argument("--gap-threshold", type=float, default=None, help="radians")
    p.add_argument("--pixel-threshold", type=float, default=None)

    p = sub.add_parser("register", help="bilateral boundary ICP of one scan pair")
    p.add_argument("front_ply")
    p.add_argument("back_ply")
    p.add_argument("--init", default=None, help="initial transform JSON file")
    p.add_argument("--front-boundary", default=None, help="boundary indices JSON")
    p.add_argument("--back-boundary", default=None)
    p.add_argument("--out-prefix", default=None,
                   help="write <prefix>.merged.ply/.transform.json/.trace.csv")
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--convergence-tol", type=float, default=None)
    p.add_argument("--reject-distance", type=float, default=None)

    p = sub.add_parser("evaluate", help="accuracy/completeness/MAE/SD vs ground truth")
    p.add_argument("recon_ply")
    p.add_argument("gt_ply")
    p.add_argument("--align", action="store_true",
                   help="trimmed-ICP align the reconstruction first")
    p.add_argument("--align-init", default=None,
                   help="initial transform JSON for the alignment step")
    p.add_argument("--completeness-threshold", type=float, default=None)
    p.add_argument("--out-csv", default=None)

    p = sub.add_parser("pipeline", help="full batch run: match, register, merge, score")
    p.add_argument("front_dir")
    p.add_argument("back_dir")
    p.add_argument("--truth", default=None, help="truth JSON from gen-synth")

    p = sub.add_parser("serve", help="run the service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8421)

    return parser


def _config_payload(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        cfg.update(json.loads(Path(args.config).read_text()))
    mapping = {
        "seed": "seed",
        "jobs": "jobs",
        "n_samples": "n_samples",
        "alpha": "alpha_mm",
        "k": "boundary_k",
        "gap_threshold": "boundary_gap_threshold",
        "pixel_threshold": "pixel_threshold",
        "max_iterations": "max_iterations",
        "convergence_tol": "convergence_tol",
        "reject_distance": "correspondence_reject_distance",
        "completeness_threshold": "completeness_threshold",
    }
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def _run():
        from .service import create_app
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://sherdbatch.local") as client:
            return await client.post(path, json=payload)

    return asyncio.run(_run())


def _build_request(args: argparse.Namespace) -> tuple[str, dict]:
    cfg = _config_payload(args)
    out_dir = args.out_dir or "out"
    if args.command == "gen-synth":
        payload = {"out_dir": out_dir, "n": args.n,
                   "seed": args.seed if args.seed is not None else 0,
                   "adversarial": args.adversarial}
        if args.noise_sigma is not None:
            payload["noise_sigma"] = args.noise_sigma
        if args.sample_spacing is not None:
            payload["sample_spacing"] = args.sample_spacing
        return "/gen-synth", payload
    if args.command == "extract-contour":
        return "/extract-contour", {"ply_path": args.ply, "out_path": args.out,
                                    "config": cfg}
    if args.command == "match":
        return "/match", {"front_dir": args.front_dir, "back_dir": args.back_dir,
                          "config": cfg}
    if args.command == "extract-boundary":
        return "/extract-boundary", {"ply_path": args.ply, "camera_json": args.cameras,
                                     "out_ply": args.out_ply, "out_json": args.out_json,
                                     "config": cfg}
    if args.command == "register":
        return "/register", {"front_ply": args.front_ply, "back_ply": args.back_ply,
                             "init_transform_json": args.init,
                             "front_boundary_json": args.front_boundary,
                             "back_boundary_json": args.back_boundary,
                             "out_prefix": args.out_prefix, "config": cfg}
    if args.command == "evaluate":
        return "/evaluate", {"recon_ply": args.recon_ply, "gt_ply": args.gt_ply,
                             "align": args.align, "align_init_json": args.align_init,
                             "out_csv": args.out_csv, "config": cfg}
    if args.command == "pipeline":
        return "/pipeline", {"front_dir": args.front_dir, "back_dir": args.back_dir,
                             "out_dir": out_dir, "truth_json": args.truth,
                             "config": cfg}
    raise AssertionError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app
        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    path, payload = _build_request(args)
    response = _post(args.server, path, payload)
    try:
        body = response.json()
    except json.JSONDecodeError:
        print(response.text, file=sys.stderr)
        return 1
    print(json.dumps(body, indent=2))
    if response.status_code != 200:
        return 1
    if args.command == "pipeline":
        result = body.get("result", {})
        return 1 if result.get("n_failed", 0) else 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
