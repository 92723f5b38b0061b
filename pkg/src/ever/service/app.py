"""FastAPI service wrapping the pipeline.

The service is stateless across requests: each run request carries its full
config and gets a freshly wired pipeline, so many clients can drive runs
concurrently. Heavy shared state (the prompt registry, corpora loaded from
disk) is cached process-wide.
"""

from __future__ import annotations

from functools import lru_cache

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..backends import ChatCompletionClient, SimBackend, WireSettings, make_world, world_corpus
from ..core import TaskKind
from ..errors import ContractViolation, EverError, TraceError
from ..evaluation import QARecord, aggregate
from ..pipeline import Pipeline, PipelineConfig, parse_mode
from ..prompting import default_registry
from ..retrieval import Corpus, Document, EvidenceSource, WebSearchClient, WebSearchConfig
from ..snowball import run_snowball_study
from .schemas import (
    HealthResponse,
    PromptInfo,
    PromptList,
    RunConfig,
    RunExampleRequest,
    ScoreRequest,
    SimulateRequest,
)


@lru_cache(maxsize=8)
def _corpus_from_path(path: str) -> Corpus:
    return Corpus.from_jsonl(path)


def _build_pipeline(request: RunExampleRequest) -> Pipeline:
    config = request.config
    spec = parse_mode(config.mode)
    task = TaskKind(config.task)

    needs_retrieval = spec.generation_mode.value == "rag" or spec.validation_mode.value == "er"

    backend = None
    world = None
    if config.backend.kind == "sim":
        world = make_world(
            [request.topic],
            facts_per_topic=config.backend.sim.facts_per_topic,
            p_intrinsic=config.backend.sim.p_intrinsic,
            p_extrinsic=config.backend.sim.p_extrinsic,
            snowball_gain=config.backend.sim.snowball_gain,
            seed=config.backend.sim.world_seed,
            final_answer_fact=task is TaskKind.MULTI_HOP_REASONING,
        )
        backend = SimBackend(world)
    elif config.backend.kind == "wire":
        backend = ChatCompletionClient(
            WireSettings(
                base_url=config.backend.wire.base_url,
                model=config.backend.wire.model,
                timeout_s=config.backend.wire.timeout_s,
                retries=config.backend.wire.retries,
            )
        )
    else:
        raise ContractViolation(f"unknown backend kind {config.backend.kind!r}")

    evidence = None
    source = config.retrieval.source
    if needs_retrieval:
        if request.docs:
            evidence = EvidenceSource(corpus=Corpus([
                Document(id=d.id, title=d.title, text=d.text) for d in request.docs
            ]))
        elif source in ("local",) or (source == "auto" and config.retrieval.corpus_path):
            if not config.retrieval.corpus_path:
                raise ContractViolation("retrieval.source=local needs corpus_path")
            evidence = EvidenceSource(corpus=_corpus_from_path(config.retrieval.corpus_path))
        elif source == "web" or (source == "auto" and config.retrieval.web_replay_path):
            evidence = EvidenceSource(web=WebSearchClient(
                WebSearchConfig(replay_path=config.retrieval.web_replay_path)
            ))
        elif world is not None:
            evidence = EvidenceSource(corpus=world_corpus(world))
        else:
            raise ContractViolation(
                f"mode {config.mode!r} needs retrieval: provide per-example docs, "
                "a corpus path, or a web source"
            )

    k_docs = config.k_docs
    if k_docs is None:
        k_docs = 10 if (evidence is not None and evidence.web is not None) else 5

    pipeline_config = PipelineConfig(
        task=task,
        generation_mode=spec.generation_mode,
        validation_mode=spec.validation_mode,
        max_rounds=config.max_rounds,
        k_docs=k_docs,
        max_sentences=config.max_sentences,
        validation_parallelism=config.parallel_checks,
        seed=config.seed,
        abstain_prompting=spec.abstain_prompting,
        zero_shot_validation_question=config.zero_shot_validation_question,
    )
    return Pipeline(pipeline_config, backend, evidence=evidence)


def create_app() -> FastAPI:
    app = FastAPI(title="ever", version=__version__)
    registry = default_registry()

    @app.exception_handler(EverError)
    async def _ever_error(request, exc: EverError):  # noqa: ARG001
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/prompts", response_model=PromptList)
    def prompts() -> PromptList:
        return PromptList(ids=list(registry.ids()), revision=registry.revision())

    @app.get("/prompts/{template_id}", response_model=PromptInfo)
    def prompt(template_id: str) -> PromptInfo:
        if template_id not in registry:
            raise HTTPException(status_code=404, detail=f"unknown template {template_id!r}")
        template = registry.get(template_id)
        return PromptInfo(id=template.id, body=template.body,
                          required_vars=sorted(template.required_vars))

    @app.post("/examples/run")
    def run_example(request: RunExampleRequest) -> dict:
        pipeline = _build_pipeline(request)
        spec = parse_mode(request.config.mode)
        if spec.ever:
            result = pipeline.run_example(request.query, request.topic, request.id)
        else:
            result = pipeline.run_baseline(request.query, request.topic, request.id)
        return result.to_dict()

    @app.post("/score")
    def score(request: ScoreRequest) -> dict:
        records = [
            QARecord(
                id=str(r["id"]),
                question=r.get("question", ""),
                gold=tuple(tuple(str(a) for a in alias_set) for alias_set in r["gold"]),
                topic=r.get("topic", ""),
            )
            for r in request.dataset
        ]
        try:
            task = TaskKind(request.task)
        except ValueError:
            raise TraceError(f"unknown task {request.task!r}") from None
        report = aggregate(request.records, records, task)
        return report.to_dict()

    @app.post("/simulate")
    def simulate(request: SimulateRequest) -> dict:
        report = run_snowball_study(
            trials=request.trials,
            sentences=request.sentences,
            p_intrinsic=request.p_intrinsic,
            p_extrinsic=request.p_extrinsic,
            snowball_gain=request.snowball_gain,
            seed=request.seed,
            max_rounds=request.max_rounds,
        )
        payload = report.to_dict()
        payload["table"] = report.format_table()
        return payload

    return app


app = create_app()
