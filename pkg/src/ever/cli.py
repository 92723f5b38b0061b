"""Operator CLI.

A thin client over the HTTP service: every command builds requests and sends
them to the FastAPI app, in-process by default (no sockets, fully offline)
or to a remote server via --server. Files stay on the client side: the CLI
reads datasets, streams examples through the service, and writes the trace,
manifest, and reports locally.

Exit codes: 0 success, 1 at least one example errored, 2 configuration or
usage error.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .errors import EverError
from .evaluation import load_dataset
from .pipeline import MODES, parse_mode
from .prompting import default_registry
from .trace import RunManifest, read_trace, sha256_file, write_trace

TASKS = ("shortqa", "listqa", "bio", "reasoning")

REQUEST_TIMEOUT = 600.0


def _client(server: str | None) -> httpx.AsyncClient:
    if server:
        return httpx.AsyncClient(base_url=server, timeout=REQUEST_TIMEOUT)
    from .service.app import create_app

    transport = httpx.ASGITransport(app=create_app())
    return httpx.AsyncClient(transport=transport, base_url="http://ever.local",
                             timeout=REQUEST_TIMEOUT)


def _check(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        message = f"service error ({response.status_code}): {detail}"
        if response.status_code < 500:
            raise click.UsageError(message)  # rejected request: config problem
        raise click.ClickException(message)
    return response.json()


def load_config_file(path: str | None) -> dict:
    """Flat key = value lines; '#' comments. Flags override these values."""
    if not path:
        return {}
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise click.UsageError(f"{path}:{line_no}: expected key = value")
        key, _, value = stripped.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _layered(flag_value, file_values: dict, key: str, default, cast):
    if flag_value is not None:
        return flag_value
    if key in file_values:
        return cast(file_values[key])
    return default


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Sentence-level verification and rectification for LLM output."""


@main.command()
@click.option("--task", type=click.Choice(TASKS), required=True)
@click.option("--mode", type=click.Choice(sorted(MODES)), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--max-rounds", type=int, default=None)
@click.option("--k-docs", type=int, default=None)
@click.option("--max-sentences", type=int, default=None)
@click.option("--parallel", type=int, default=None, help="Examples in flight at once.")
@click.option("--parallel-checks", type=int, default=None, help="Concept checks per sentence.")
@click.option("--seed", type=int, default=None)
@click.option("--backend", "backend_kind", type=click.Choice(["sim", "wire"]), default=None)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Local evidence corpus (JSON-lines).")
@click.option("--web-replay", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Recorded web-search responses for offline runs.")
@click.option("--facts-per-topic", type=int, default=None, help="Simulator world size.")
@click.option("--p-intrinsic", type=float, default=None)
@click.option("--p-extrinsic", type=float, default=None)
@click.option("--snowball-gain", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Flat key = value config file; flags override it.")
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
def run(task, mode, dataset_path, out_path, max_rounds, k_docs, max_sentences, parallel,
        parallel_checks, seed, backend_kind, corpus_path, web_replay, facts_per_topic,
        p_intrinsic, p_extrinsic, snowball_gain, config_path, server) -> None:
    """Run the pipeline (or a baseline mode) over a dataset, writing a trace."""
    file_values = load_config_file(config_path)
    seed = _layered(seed, file_values, "seed", 0, int)
    parallel = _layered(parallel, file_values, "parallel", 1, int)
    for p, name in ((p_intrinsic, "--p-intrinsic"), (p_extrinsic, "--p-extrinsic")):
        if p is not None and not 0.0 <= p <= 1.0:
            raise click.UsageError(f"{name} must be in [0, 1]")

    config = {
        "task": task,
        "mode": mode,
        "max_rounds": _layered(max_rounds, file_values, "max_rounds", 1, int),
        "k_docs": _layered(k_docs, file_values, "k_docs", None, int),
        "max_sentences": _layered(max_sentences, file_values, "max_sentences", 15, int),
        "parallel_checks": _layered(parallel_checks, file_values, "parallel_checks", 4, int),
        "seed": seed,
        "backend": {
            "kind": _layered(backend_kind, file_values, "backend", "sim", str),
            "sim": {
                "p_intrinsic": _layered(p_intrinsic, file_values, "p_intrinsic", 0.0, float),
                "p_extrinsic": _layered(p_extrinsic, file_values, "p_extrinsic", 0.0, float),
                "snowball_gain": _layered(snowball_gain, file_values, "snowball_gain", 1.0, float),
                "facts_per_topic": _layered(facts_per_topic, file_values, "facts_per_topic",
                                            1, int),
            },
        },
        "retrieval": {
            "source": "auto",
            "corpus_path": _layered(corpus_path, file_values, "corpus", None, str),
            "web_replay_path": _layered(web_replay, file_values, "web_replay", None, str),
        },
    }

    try:
        parse_mode(mode)
        records = load_dataset(dataset_path)
    except EverError as exc:
        raise click.UsageError(str(exc))
    if not records:
        raise click.UsageError(f"dataset {dataset_path} is empty")

    manifest = RunManifest(
        config=config,
        dataset_path=str(dataset_path),
        dataset_sha256=sha256_file(dataset_path),
        prompts_revision=default_registry().revision(),
        seed=seed,
        started_utc=RunManifest.now(),
    )

    async def run_all():
        semaphore = asyncio.Semaphore(parallel)
        async with _client(server) as client:
            async def one(index, record):
                payload_config = json.loads(json.dumps(config))
                payload_config["backend"]["sim"]["world_seed"] = seed + index
                body = {
                    "id": record.id,
                    "query": record.question,
                    "topic": record.topic or record.question,
                    "docs": [dict(d) for d in record.docs],
                    "config": payload_config,
                }
                async with semaphore:
                    response = await client.post("/examples/run", json=body)
                return _check(response)

            return await asyncio.gather(*(one(i, r) for i, r in enumerate(records)))

    results = asyncio.run(run_all())
    manifest.finished_utc = RunManifest.now()
    write_trace(out_path, list(results), manifest)

    errored = [r["id"] for r in results if r.get("error")]
    abstained = sum(1 for r in results if r["status"] == "abstained")
    click.echo(
        f"wrote {len(results)} examples to {out_path} "
        f"({abstained} abstained, {len(errored)} errored)"
    )
    if errored:
        click.echo(f"errored examples: {', '.join(errored[:5])}", err=True)
        sys.exit(1)


@main.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--task", type=click.Choice(TASKS), default=None,
              help="Defaults to the task recorded in the manifest.")
@click.option("--server", default=None)
def score(trace_path, dataset_path, task, server) -> None:
    """Score a trace against its dataset; prints and writes a report."""
    try:
        records, manifest = read_trace(trace_path, require_manifest=True)
        dataset = load_dataset(dataset_path)
    except EverError as exc:
        raise click.UsageError(str(exc))
    if task is None:
        task = (manifest or {}).get("config", {}).get("task")
        if task not in TASKS:
            raise click.UsageError("trace manifest names no task; pass --task")

    payload = {
        "task": task,
        "records": records,
        "dataset": [
            {"id": r.id, "question": r.question, "gold": [list(g) for g in r.gold],
             "topic": r.topic}
            for r in dataset
        ],
    }

    async def go():
        async with _client(server) as client:
            return _check(await client.post("/score", json=payload))

    report_dict = asyncio.run(go())
    report_path = Path(str(trace_path) + ".report.json")
    report_path.write_text(json.dumps(report_dict, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    rows = [(k, v) for k, v in report_dict.items() if k != "runtime"]
    rows += [(f"runtime.{k}", f"{v:.3f}s")
             for k, v in report_dict.get("runtime", {}).items()]
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        shown = f"{value:.4f}" if isinstance(value, float) else value
        click.echo(f"{key.ljust(width)}  {shown}")
    click.echo(f"report written to {report_path}")


@main.command()
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--sentences", type=int, default=10, show_default=True)
@click.option("--p-intrinsic", type=float, default=0.15, show_default=True)
@click.option("--p-extrinsic", type=float, default=0.15, show_default=True)
@click.option("--snowball-gain", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-rounds", type=int, default=1, show_default=True)
@click.option("--policy", type=click.Choice(["none", "ever", "both"]), default="both",
              show_default=True, help="Which per-index table to print.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--server", default=None)
def simulate(trials, sentences, p_intrinsic, p_extrinsic, snowball_gain, seed, max_rounds,
             policy, out_path, server) -> None:
    """Snowball study: paired error rates with and without the pipeline."""
    for value, name in ((p_intrinsic, "--p-intrinsic"), (p_extrinsic, "--p-extrinsic")):
        if not 0.0 <= value <= 1.0:
            raise click.UsageError(f"{name} must be in [0, 1]")
    if snowball_gain < 1.0:
        raise click.UsageError("--snowball-gain must be >= 1")

    payload = {
        "trials": trials, "sentences": sentences, "p_intrinsic": p_intrinsic,
        "p_extrinsic": p_extrinsic, "snowball_gain": snowball_gain, "seed": seed,
        "max_rounds": max_rounds,
    }

    async def go():
        async with _client(server) as client:
            return _check(await client.post("/simulate", json=payload))

    report = asyncio.run(go())
    if policy == "both":
        click.echo(report["table"])
    else:
        rates = report["per_index_rates"][policy]
        click.echo("index  rate")
        for i, rate in enumerate(rates):
            click.echo(f"{i:>5}  {rate:.4f}")
        click.echo(f"mean   {report['mean_error'][policy]:.4f}")
        click.echo(
            f"paired one-sided t-test (none > ever): t={report['paired_t']:.3f} "
            f"p={report['paired_p']:.3g}"
        )
    if out_path:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
        click.echo(f"report written to {out_path}")


@main.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--example", "example_id", default=None, help="Show one example in full.")
def inspect(trace_path, example_id) -> None:
    """Summarize a trace: statuses, rounds, flags per example."""
    try:
        records, manifest = read_trace(trace_path, require_manifest=False)
    except EverError as exc:
        raise click.UsageError(str(exc))
    if manifest:
        click.echo(f"manifest: seed={manifest.get('seed')} "
                   f"task={manifest.get('config', {}).get('task')} "
                   f"prompts={manifest.get('prompts_revision', '')[:12]}")
    if example_id is not None:
        matches = [r for r in records if r["id"] == example_id]
        if not matches:
            raise click.UsageError(f"no example {example_id!r} in {trace_path}")
        click.echo(json.dumps(matches[0], indent=2, ensure_ascii=False))
        return
    for record in records:
        sentences = record.get("sentences", [])
        rounds = sum(max(len(s.get("history", [])) - 1, 0) for s in sentences)
        flags = [
            c["flag"]
            for s in sentences
            for r in s.get("history", [])[-1:]
            for c in r.get("checks", [])
        ]
        click.echo(
            f"{record['id']}: {record['status']}, {len(sentences)} sentences, "
            f"{rounds} rectification rounds, final flags {flags or '[]'}"
            + (f", ERROR: {record['error']}" if record.get("error") else "")
        )


@main.command()
@click.option("--task", type=click.Choice(TASKS), required=True)
@click.option("--n", type=int, default=20, show_default=True)
@click.option("--facts-per-topic", type=int, default=None,
              help="Defaults to 1 for shortqa, 8 for listqa, 10 for bio, 3 for reasoning.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def simdata(task, n, facts_per_topic, seed, out_path) -> None:
    """Write a synthetic dataset aligned with the simulator's fact world."""
    from .backends import make_world, world_dataset

    if facts_per_topic is None:
        facts_per_topic = {"shortqa": 1, "listqa": 8, "bio": 10, "reasoning": 3}[task]
    world = make_world(
        [f"Subject {i}" for i in range(n)],
        facts_per_topic=facts_per_topic,
        seed=seed,
        final_answer_fact=task == "reasoning",
    )
    records = world_dataset(world, task)
    lines = [
        json.dumps({
            "id": r.id, "question": r.question, "gold": [list(g) for g in r.gold],
            "topic": r.topic, "answer_kind": r.answer_kind,
        }, ensure_ascii=False)
        for r in records
    ]
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"wrote {len(records)} {task} examples to {out_path}")
    click.echo(f"run them with: ever run --task {task} --mode nrg+sq --backend sim "
               f"--facts-per-topic {facts_per_topic} --seed {seed} "
               f"--dataset {out_path} --out trace.jsonl")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("ever.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
