"""Command line interface, a thin client over the service layer.

Without --server, commands run the service in process through an ASGI
transport; with --server URL they call a running instance. `serve` starts
the service itself.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from .config import AppConfig, load_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talklearn")
    parser.add_argument("--config", help="path to a JSON config file (TALKLEARN_CONFIG also works)")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the session service")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)

    simulate = sub.add_parser("simulate", help="run a trace under the virtual clock")
    simulate.add_argument("--trace", required=True, help="trace JSON file")
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--out", required=True, help="output JSONL path")
    simulate.add_argument("--server", default=None, help="URL of a running service")

    report = sub.add_parser("report", help="metrics report for a session log")
    report.add_argument("--log", required=True, help="JSONL log file")
    report.add_argument("--json", action="store_true", help="print metrics as JSON")
    report.add_argument("--server", default=None)

    quiz = sub.add_parser("quiz", help="build or score a language test")
    quiz_sub = quiz.add_subparsers(dest="quiz_command", required=True)
    build = quiz_sub.add_parser("build")
    build.add_argument("--log", required=True)
    build.add_argument("--n", type=int, default=4)
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--participant", default=None)
    build.add_argument("--out", default=None, help="write the test JSON here instead of stdout")
    build.add_argument("--server", default=None)
    score = quiz_sub.add_parser("score")
    score.add_argument("--test", required=True, help="test JSON file from quiz build")
    score.add_argument("--answers", required=True, help="JSON file: list of answers or {answers: [...]}")
    score.add_argument("--participant", default="")
    score.add_argument("--server", default=None)

    return parser


def _post(cfg: AppConfig, server: str | None, path: str, payload: dict) -> dict:
    if server:
        response = httpx.post(server.rstrip("/") + path, json=payload, timeout=120)
    else:
        from .service import create_app

        async def call() -> httpx.Response:
            transport = httpx.ASGITransport(app=create_app(cfg))
            async with httpx.AsyncClient(
                transport=transport, base_url="http://talklearn", timeout=120
            ) as client:
                return await client.post(path, json=payload)

        response = asyncio.run(call())
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise SystemExit(f"error: {detail}")
    return response.json()


def _cmd_serve(args: argparse.Namespace, cfg: AppConfig) -> int:
    import uvicorn

    from .service import create_app

    host = args.host or cfg.host
    port = args.port if args.port is not None else cfg.port
    uvicorn.run(create_app(cfg), host=host, port=port, log_level="info")
    return 0


def _cmd_simulate(args: argparse.Namespace, cfg: AppConfig) -> int:
    with open(args.trace, encoding="utf-8") as fh:
        trace = json.load(fh)
    payload: dict = {"trace": trace}
    if args.seed is not None:
        payload["seed"] = args.seed
    result = _post(cfg, args.server, "/simulate", payload)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(result["jsonl"])
    print(
        f"{result['session_id']}: {result['events']} events, "
        f"session end {result['session_end_ms']} ms -> {args.out}"
    )
    return 0


def _cmd_report(args: argparse.Namespace, cfg: AppConfig) -> int:
    with open(args.log, encoding="utf-8") as fh:
        jsonl = fh.read()
    result = _post(cfg, args.server, "/report", {"jsonl": jsonl})
    if args.json:
        print(json.dumps({"metrics": result["metrics"], "violations": result["violations"]}, indent=2))
    else:
        print(result["text"])
        if result["violations"]:
            print("\nviolations:")
            for violation in result["violations"]:
                print(f"  - {violation}")
    return 0


def _cmd_quiz(args: argparse.Namespace, cfg: AppConfig) -> int:
    if args.quiz_command == "build":
        with open(args.log, encoding="utf-8") as fh:
            jsonl = fh.read()
        payload = {"jsonl": jsonl, "n_items": args.n, "seed": args.seed}
        if args.participant:
            payload["participant"] = args.participant
        result = _post(cfg, args.server, "/quiz/build", payload)
        text = json.dumps(result, ensure_ascii=False, indent=2)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
            print(f"wrote test {result['id']} with {len(result['items'])} items to {args.out}")
        else:
            print(text)
        return 0
    with open(args.test, encoding="utf-8") as fh:
        test = json.load(fh)
    with open(args.answers, encoding="utf-8") as fh:
        answers = json.load(fh)
    if isinstance(answers, dict):
        answers = answers.get("answers", [])
    result = _post(
        cfg, args.server, "/quiz/score",
        {"test": test, "answers": answers, "participant": args.participant},
    )
    print(json.dumps(result, ensure_ascii=False, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    cfg = load_config(args.config)
    if args.command == "serve":
        return _cmd_serve(args, cfg)
    if args.command == "simulate":
        return _cmd_simulate(args, cfg)
    if args.command == "report":
        return _cmd_report(args, cfg)
    if args.command == "quiz":
        return _cmd_quiz(args, cfg)
    raise SystemExit(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
