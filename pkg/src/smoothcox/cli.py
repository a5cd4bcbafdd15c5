"""Command-line client for the smoothcox service.

The CLI reads input files, sends them to the service (an in-process ASGI
instance unless --server points at a running one), and writes the returned
payloads as artifacts into the output directory together with a manifest.
Every artifact embeds the manifest hash, which is computed over the
command, its configuration and the input file hashes only, so repeated runs
with identical inputs produce byte-identical artifacts.

Exit codes: 0 success, 1 validation error, 2 numerical failure.

BLAS thread count is controlled by the usual OMP_NUM_THREADS /
OPENBLAS_NUM_THREADS environment variables; it affects timing only, never
which model is fitted.
"""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import json
import sys
import time
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


async def _post_async(server: str | None, path: str, payload: dict) -> dict:
    if server:
        client = httpx.AsyncClient(base_url=server.rstrip("/"), timeout=None)
    else:
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        client = httpx.AsyncClient(transport=transport, base_url="http://smoothcox.local", timeout=None)
    async with client:
        response = await client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json()["detail"]
        except Exception:
            detail = {"kind": "numerical", "message": response.text}
        if isinstance(detail, list):  # FastAPI request-validation errors
            detail = {"kind": "validation", "message": json.dumps(detail)}
        raise ServiceError(detail.get("kind", "numerical"), detail.get("message", "service error"))
    return response.json()


def _post(server: str | None, path: str, payload: dict) -> dict:
    return asyncio.run(_post_async(server, path, payload))


class ServiceError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class ArtifactWriter:
    """Collects artifacts for one run and writes them plus the manifest."""

    def __init__(self, out_dir: Path, command: str, config: dict, inputs: dict[str, Path]):
        self.out_dir = out_dir
        self.command = command
        self.config = config
        self.input_hashes = {
            str(name): _sha256(path.read_bytes()) for name, path in inputs.items()
        }
        from . import __version__

        self.version = __version__
        self.manifest_hash = _sha256(
            _canonical(
                {
                    "command": command,
                    "config": config,
                    "inputs": self.input_hashes,
                    "version": self.version,
                }
            ).encode()
        )
        self.artifacts: dict[str, str] = {}
        self.t0 = time.monotonic()
        out_dir.mkdir(parents=True, exist_ok=True)

    def write_json(self, name: str, payload: dict) -> None:
        doc = dict(payload)
        doc["manifest_hash"] = self.manifest_hash
        data = (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()
        (self.out_dir / name).write_bytes(data)
        self.artifacts[name] = _sha256(data)

    def write_csv(self, name: str, text: str) -> None:
        data = (f"# manifest_hash: {self.manifest_hash}\n" + text).encode()
        (self.out_dir / name).write_bytes(data)
        self.artifacts[name] = _sha256(data)

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "inputs": self.input_hashes,
            "version": self.version,
            "python": sys.version.split()[0],
            "manifest_hash": self.manifest_hash,
            "artifacts": self.artifacts,
            "wall_time_s": round(time.monotonic() - self.t0, 3),
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _read(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise ServiceError("validation", f"input file not found: {path}")
    return p.read_text(encoding="utf-8")


def _spec_doc(path: str) -> dict:
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise ServiceError("validation", f"{path}: not valid JSON ({exc})") from None


def _add_common(parser: argparse.ArgumentParser, *, seed_required: bool = False) -> None:
    parser.add_argument("--out", required=True, help="output directory for artifacts")
    parser.add_argument("--server", default=None, help="URL of a running service (default: in-process)")
    if seed_required:
        parser.add_argument("--seed", type=int, required=True, help="RNG seed (required)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothcox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a cohort CSV and summarize it")
    p.add_argument("--input", required=True)
    _add_common(p)

    p = sub.add_parser("km", help="Kaplan-Meier curves adjusted for left truncation")
    p.add_argument("--input", required=True)
    p.add_argument("--group", default=None, help="covariate (or location_id) to stratify by")
    _add_common(p)

    p = sub.add_parser("fit", help="fit a model spec; --compare fits several")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", action="append", required=True, help="model spec JSON (repeatable with --compare)")
    p.add_argument("--compare", action="store_true", help="fit every --spec and emit a comparison table")
    p.add_argument("--k", type=int, default=10, help="default spline basis dimension")
    _add_common(p)

    p = sub.add_parser("select", help="boost forward / penalise backward model selection")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--m-forward", type=int, default=None, help="boosting steps per outer iteration")
    _add_common(p, seed_required=True)

    p = sub.add_parser("threshold", help="fit a spec and estimate the breakpoint of one smooth")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--term", required=True, help="name of the spline term to scan")
    p.add_argument("--b-samples", type=int, default=1000)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--unrestricted-argmax", action="store_true", help="do not restrict to rising regions")
    _add_common(p, seed_required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort with known truth")
    p.add_argument("--spec", required=True, help="simulation spec JSON")
    _add_common(p, seed_required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _cmd_ingest(args) -> None:
    writer = ArtifactWriter(Path(args.out), "ingest", {}, {"input": Path(args.input)})
    report = _post(args.server, "/v1/ingest", {"csv_text": _read(args.input)})
    writer.write_json("report.json", report)
    writer.finish()


def _cmd_km(args) -> None:
    config = {"group": args.group}
    writer = ArtifactWriter(Path(args.out), "km", config, {"input": Path(args.input)})
    result = _post(args.server, "/v1/km", {"csv_text": _read(args.input), "group": args.group})
    writer.write_csv("km_curves.csv", result["csv"])
    writer.write_json("km.json", {"curves": result["curves"]})
    writer.finish()


def _cmd_fit(args) -> None:
    specs = list(args.spec)
    if len(specs) > 1 and not args.compare:
        raise ServiceError("validation", "multiple --spec files require --compare")
    csv_text = _read(args.input)
    inputs = {"input": Path(args.input)}
    for s in specs:
        inputs[Path(s).name] = Path(s)
    config = {"k": args.k, "compare": bool(args.compare), "specs": [Path(s).name for s in specs]}
    writer = ArtifactWriter(Path(args.out), "fit", config, inputs)
    if args.compare:
        labels = [Path(s).stem for s in specs]
        result = _post(
            args.server,
            "/v1/fit/compare",
            {
                "csv_text": csv_text,
                "model_specs": [_spec_doc(s) for s in specs],
                "labels": labels,
                "k_default": args.k,
            },
        )
        writer.write_json("comparison.json", result)
        header = "model,n,edf,dev_expl,aic,laml,best_aic"
        rows = [
            f'{r["model"]},{r["n"]},{r["edf"]!r},{r["dev_expl"]!r},{r["aic"]!r},{r["laml"]!r},{int(r["best_aic"])}'
            for r in result["table"]
        ]
        writer.write_csv("comparison.csv", header + "\n" + "\n".join(rows) + "\n")
    else:
        result = _post(
            args.server,
            "/v1/fit",
            {"csv_text": csv_text, "model_spec": _spec_doc(specs[0]), "k_default": args.k},
        )
        writer.write_json("fit.json", result["fit"])
        writer.write_csv("smooth_curves.csv", result["curves_csv"])
    writer.finish()


def _cmd_select(args) -> None:
    config = {"k": args.k, "seed": args.seed, "m_forward": args.m_forward, "spec": Path(args.spec).name}
    writer = ArtifactWriter(
        Path(args.out), "select", config, {"input": Path(args.input), "spec": Path(args.spec)}
    )
    result = _post(
        args.server,
        "/v1/select",
        {
            "csv_text": _read(args.input),
            "model_spec": _spec_doc(args.spec),
            "seed": args.seed,
            "k_default": args.k,
            "m_forward": args.m_forward,
        },
    )
    writer.write_json("fit.json", result["fit"])
    writer.write_json("selection_trace.json", result["trace"])
    writer.write_csv("smooth_curves.csv", result["curves_csv"])
    writer.finish()


def _cmd_threshold(args) -> None:
    config = {
        "k": args.k,
        "seed": args.seed,
        "b_samples": args.b_samples,
        "term": args.term,
        "spec": Path(args.spec).name,
        "restrict_positive_slope": not args.unrestricted_argmax,
    }
    writer = ArtifactWriter(
        Path(args.out), "threshold", config, {"input": Path(args.input), "spec": Path(args.spec)}
    )
    result = _post(
        args.server,
        "/v1/threshold",
        {
            "csv_text": _read(args.input),
            "model_spec": _spec_doc(args.spec),
            "term": args.term,
            "seed": args.seed,
            "b_samples": args.b_samples,
            "k_default": args.k,
            "restrict_positive_slope": not args.unrestricted_argmax,
        },
    )
    writer.write_json("fit.json", result["fit"])
    writer.write_json("breakpoint.json", result["breakpoint"])
    writer.write_csv("breakpoint_curve.csv", result["curve_csv"])
    writer.finish()


def _cmd_simulate(args) -> None:
    sim_doc = _spec_doc(args.spec)
    sim_doc["seed"] = args.seed
    config = {"seed": args.seed, "spec": Path(args.spec).name}
    writer = ArtifactWriter(Path(args.out), "simulate", config, {"spec": Path(args.spec)})
    result = _post(args.server, "/v1/simulate", {"sim_spec": sim_doc})
    writer.write_csv("cohort.csv", result["cohort_csv"])
    writer.write_json("truth.json", result["truth"])
    writer.finish()


def _cmd_serve(args) -> None:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)


_HANDLERS = {
    "ingest": _cmd_ingest,
    "km": _cmd_km,
    "fit": _cmd_fit,
    "select": _cmd_select,
    "threshold": _cmd_threshold,
    "simulate": _cmd_simulate,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _HANDLERS[args.command](args)
    except ServiceError as exc:
        print(f"smoothcox {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if exc.kind == "validation" else EXIT_NUMERICAL
    except httpx.HTTPError as exc:
        print(f"smoothcox {args.command}: service unreachable ({exc})", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
