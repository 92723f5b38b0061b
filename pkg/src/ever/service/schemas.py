"""Pydantic request/response models for the service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SimWorldConfig(BaseModel):
    """Fact-world parameters for one example's deterministic backend."""

    p_intrinsic: float = Field(0.0, ge=0.0, le=1.0)
    p_extrinsic: float = Field(0.0, ge=0.0, le=1.0)
    snowball_gain: float = Field(1.0, ge=1.0)
    facts_per_topic: int = Field(1, ge=1)
    world_seed: int = 0


class WireConfig(BaseModel):
    """Endpoint overrides; credentials stay in the environment."""

    base_url: str = ""
    model: str = ""
    timeout_s: float = 60.0
    retries: int = 3


class BackendConfig(BaseModel):
    kind: str = "sim"  # sim | wire
    sim: SimWorldConfig = SimWorldConfig()
    wire: WireConfig = WireConfig()


class RetrievalConfig(BaseModel):
    source: str = "auto"  # auto | local | web | none
    corpus_path: str | None = None
    web_replay_path: str | None = None


class RunConfig(BaseModel):
    """Everything one example run needs; mirrors the CLI flags."""

    task: str
    mode: str
    max_rounds: int = Field(1, ge=1)
    k_docs: int | None = Field(None, ge=1)
    max_sentences: int = Field(15, ge=1)
    parallel_checks: int = Field(4, ge=1)
    seed: int = 0
    zero_shot_validation_question: bool = False
    backend: BackendConfig = BackendConfig()
    retrieval: RetrievalConfig = RetrievalConfig()


class DocumentIn(BaseModel):
    id: str
    title: str = ""
    text: str


class RunExampleRequest(BaseModel):
    id: str = ""
    query: str
    topic: str = ""
    docs: list[DocumentIn] = []
    config: RunConfig


class ScoreRequest(BaseModel):
    task: str
    records: list[dict]
    dataset: list[dict]


class SimulateRequest(BaseModel):
    trials: int = Field(1000, ge=2)
    sentences: int = Field(10, ge=1)
    p_intrinsic: float = Field(0.15, ge=0.0, le=1.0)
    p_extrinsic: float = Field(0.15, ge=0.0, le=1.0)
    snowball_gain: float = Field(2.0, ge=1.0)
    seed: int = 0
    max_rounds: int = Field(1, ge=1)


class HealthResponse(BaseModel):
    status: str
    version: str


class PromptInfo(BaseModel):
    id: str
    body: str
    required_vars: list[str]


class PromptList(BaseModel):
    ids: list[str]
    revision: str
