"""Command-line entry point: a thin client over the HTTP service.

Subcommands: world, train, score, bench, plot, serve. By default requests
run against an in-process service instance; --server targets a running one
(files written by `train` then live on the server's filesystem).

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from .config import ConfigError, TrainConfig, load_config, parse_config_text
from .plots import plot_metrics


class CliError(RuntimeError):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def post(client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise CliError(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _write_jsonl(path: Path, records: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def cmd_world(args) -> int:
    client = make_client(args.server)
    data = post(
        client,
        "/world",
        {
            "seed": args.seed,
            "n_entities": args.entities,
            "n_relations": args.relations,
            "n_questions": args.questions,
            "hops": args.hops,
            "question_seed": args.question_seed,
        },
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "world.json").write_text(json.dumps(data["world"], indent=2), encoding="utf-8")
    _write_jsonl(out / "questions.jsonl", data["questions"])
    print(f"world: {len(data['world']['facts'])} facts, {len(data['questions'])} questions -> {out}")
    return 0


def _train_overrides(args) -> dict:
    return {
        "seed": args.seed,
        "norm": args.norm,
        "steps": args.steps,
        "judge": args.judge,
        "judge_endpoint": args.endpoint,
        "out_dir": args.out,
    }


def cmd_train(args) -> int:
    overrides = _train_overrides(args)
    if args.config:
        config = load_config(args.config, overrides)
    else:
        config = parse_config_text("", overrides)
    client = make_client(args.server)
    data = post(client, "/train", {"config": config.to_dict()})
    last = data["metrics"][-1]
    print(
        f"trained {len(data['metrics'])} steps (norm={data['config']['norm']}): "
        f"final reward {last['mean_training_reward']:.3f}, "
        f"valid judge rate {last['valid_judge_rate']:.3f}"
    )
    print(f"metrics + checkpoints in {data['out_dir']}")
    return 0


def cmd_score(args) -> int:
    world = json.loads(Path(args.world).read_text(encoding="utf-8"))
    lines = [
        line
        for line in Path(args.input).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    client = make_client(args.server)
    data = post(
        client,
        "/score",
        {
            "world": world,
            "lines": lines,
            "norm": args.norm,
            "judge": {"backend": args.judge, "endpoint": args.endpoint},
        },
    )
    _write_jsonl(Path(args.out), data["results"])
    print(f"scored {len(data['results'])} lines ({data['errors']} errors) -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    client = make_client(args.server)
    if args.build:
        world = json.loads(Path(args.world).read_text(encoding="utf-8"))
        data = post(
            client,
            "/bench/dataset",
            {
                "world": world,
                "n_questions": args.questions,
                "hops": args.hops,
                "question_seed": args.question_seed,
                "per_kind": args.per_kind,
                "total": args.total,
                "seed": args.seed,
            },
        )
        out = Path(args.dataset)
        _write_jsonl(out, data["steps"])
        meta = {"threshold": data["threshold"], "cells": data["cells"], "n": len(data["steps"])}
        out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        print(f"dataset: {len(data['steps'])} steps, threshold {data['threshold']:.4f} -> {out}")
        return 0

    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise CliError(f"dataset not found: {dataset_path}")
    steps = [
        json.loads(line)
        for line in dataset_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not steps:
        raise CliError(f"dataset is empty: {dataset_path}")
    threshold = args.threshold
    if threshold is None:
        meta_path = dataset_path.with_suffix(".meta.json")
        if not meta_path.exists():
            raise CliError("no --threshold given and no .meta.json beside the dataset", 2)
        threshold = json.loads(meta_path.read_text(encoding="utf-8"))["threshold"]
    world = json.loads(Path(args.world).read_text(encoding="utf-8")) if args.world else None
    data = post(
        client,
        "/bench/evaluate",
        {
            "world": world,
            "steps": steps,
            "threshold": threshold,
            "judge": {
                "backend": args.judge,
                "endpoint": args.endpoint,
                "concurrency": args.concurrency,
            },
        },
    )
    report = data["report"]
    print(f"accuracy          {report['accuracy']:.3f}")
    print(f"valid judge rate  {report['valid_judge_rate']:.3f}")
    print(f"n                 {report['n']}")
    for cell, stats in report["cells"].items():
        print(f"  cell ({cell}): n={stats['n']} correct={stats['correct']}")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2), encoding="utf-8")
        print(f"report -> {args.report}")
    return 0


def cmd_plot(args) -> int:
    written = plot_metrics(args.metrics, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app
    from .world import World, load_questions

    world = World.load(args.world) if args.world else None
    questions = (
        load_questions(world, args.questions) if args.questions and world else None
    )
    uvicorn.run(create_app(world, questions), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steprl", description=__doc__)
    parser.add_argument("--server", default=None, help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("world", help="generate a synthetic world and question set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=int, default=16)
    p.add_argument("--relations", type=int, default=3)
    p.add_argument("--questions", type=int, default=24)
    p.add_argument("--hops", type=int, default=1, choices=(1, 2))
    p.add_argument("--question-seed", type=int, default=0)
    p.add_argument("--out", default="world_out")
    p.set_defaults(func=cmd_world)

    p = sub.add_parser("train", help="run a training job")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--norm", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--judge", default=None)
    p.add_argument("--endpoint", dest="endpoint", default=None, help="remote judge endpoint")
    p.add_argument("--out", default=None, help="output directory (out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a trajectory JSONL file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--norm", default="renorm")
    p.add_argument("--judge", default="oracle")
    p.add_argument("--endpoint", default="")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench", help="build or evaluate a judge benchmark dataset")
    p.add_argument("--build", action="store_true", help="build a dataset instead of evaluating")
    p.add_argument("--dataset", required=True, help="dataset JSONL (output of --build, input otherwise)")
    p.add_argument("--world", default=None)
    p.add_argument("--judge", default="oracle")
    p.add_argument("--endpoint", default="")
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--questions", type=int, default=8)
    p.add_argument("--hops", type=int, default=1, choices=(1, 2))
    p.add_argument("--question-seed", type=int, default=0)
    p.add_argument("--per-kind", type=int, default=8)
    p.add_argument("--total", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="render metric curves from a metrics file")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", default="plots")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--world", default=None)
    p.add_argument("--questions", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
