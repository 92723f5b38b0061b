"""Evidence acquisition: a local BM25 index and a web-search client.

The local index is a plain inverted index with BM25 scoring (k1=1.2,
b=0.75, non-negative idf). Tokens are lowercase alphanumeric words and ties
break by ascending document id, so rankings are deterministic. The web
client speaks a Serper-style search API and has a recorded-replay mode for
offline use.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import ContractViolation, QuotaError, RetrievalError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str
    score: float = 0.0
    source: str = "local"


class Corpus:
    """Immutable document collection with an inverted index over the text."""

    K1 = 1.2
    B = 0.75

    def __init__(self, documents: list[Document]):
        ids = [d.id for d in documents]
        if len(set(ids)) != len(ids):
            raise ContractViolation("corpus document ids must be unique")
        self.documents = list(documents)
        self._term_freqs: list[Counter[str]] = []
        self._doc_lens: list[int] = []
        self._postings: dict[str, list[int]] = {}
        for position, doc in enumerate(self.documents):
            tokens = tokenize(doc.text)
            freqs = Counter(tokens)
            self._term_freqs.append(freqs)
            self._doc_lens.append(len(tokens))
            for term in freqs:
                self._postings.setdefault(term, []).append(position)
        total = sum(self._doc_lens)
        self._avgdl = total / len(self.documents) if self.documents else 0.0

    def __len__(self) -> int:
        return len(self.documents)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "Corpus":
        """Load {id, title, text} objects, one per line."""
        documents = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            documents.append(Document(id=str(raw["id"]), title=raw.get("title", ""),
                                      text=raw["text"]))
        return cls(documents)

    def _idf(self, term: str) -> float:
        n = len(self._postings.get(term, ()))
        if n == 0:
            return 0.0
        # +1 inside the log keeps idf non-negative even for very common terms
        return math.log(1.0 + (len(self.documents) - n + 0.5) / (n + 0.5))

    def score(self, query: str) -> list[float]:
        """BM25 score of every document for the query, in corpus order."""
        scores = [0.0] * len(self.documents)
        for term, query_tf in Counter(tokenize(query)).items():
            del query_tf  # repeated query terms add nothing under this form
            idf = self._idf(term)
            if idf == 0.0:
                continue
            for position in self._postings[term]:
                tf = self._term_freqs[position][term]
                dl = self._doc_lens[position]
                norm = self.K1 * (1 - self.B + self.B * dl / self._avgdl)
                scores[position] += idf * tf * (self.K1 + 1) / (tf + norm)
        return scores


def search_local(corpus: Corpus, query: str, k: int) -> list[Document]:
    """Top-k documents by BM25; zero-scoring documents are dropped and ties
    break by ascending document id."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    scores = corpus.score(query)
    scored = [(doc, score) for doc, score in zip(corpus.documents, scores) if score > 0.0]
    ranked = sorted(scored, key=lambda pair: (-pair[1], pair[0].id))
    return [
        Document(id=d.id, title=d.title, text=d.text, score=s, source="local")
        for d, s in ranked[:k]
    ]


@dataclass
class WebSearchConfig:
    """Wire settings for the search API; the key comes from the environment."""

    endpoint: str = "https://google.serper.dev/search"
    api_key_env: str = "EVER_SEARCH_API_KEY"
    timeout_s: float = 10.0
    retries: int = 3
    backoff_s: float = 1.0
    max_in_flight: int = 4
    replay_path: str | None = None  # recorded-fixture mode when set


class WebSearchClient:
    """Search client returning rank-scored snippet documents.

    In replay mode, responses come from a committed JSON file mapping the
    query string to a recorded API response; unknown queries are an error so
    tests never silently hit the network.
    """

    def __init__(self, config: WebSearchConfig | None = None, transport=None):
        self.config = config or WebSearchConfig()
        self._semaphore = threading.Semaphore(self.config.max_in_flight)
        self._replay: dict | None = None
        if self.config.replay_path:
            self._replay = json.loads(Path(self.config.replay_path).read_text(encoding="utf-8"))
        self._client = httpx.Client(timeout=self.config.timeout_s, transport=transport)

    def close(self) -> None:
        self._client.close()

    def search(self, query: str, k: int) -> list[Document]:
        if k < 1:
            raise ContractViolation("k must be >= 1")
        if self._replay is not None:
            if query not in self._replay:
                raise RetrievalError(f"no recorded response for query {query!r}")
            payload = self._replay[query]
        else:
            payload = self._fetch(query)
        documents = []
        for rank, item in enumerate(payload.get("organic", [])[:k]):
            documents.append(
                Document(
                    id=item.get("link") or f"web-{rank}",
                    title=item.get("title", ""),
                    text=item.get("snippet", ""),
                    score=1.0 / (rank + 1),
                    source="web",
                )
            )
        return documents

    def _fetch(self, query: str) -> dict:
        api_key = os.environ.get(self.config.api_key_env, "")
        if not api_key:
            raise RetrievalError(
                f"search API key not set; export {self.config.api_key_env}"
            )
        last_error: Exception | None = None
        with self._semaphore:
            for attempt in range(self.config.retries):
                try:
                    response = self._client.post(
                        self.config.endpoint,
                        json={"q": query},
                        headers={"X-API-KEY": api_key},
                    )
                    if response.status_code in (401, 403, 429):
                        raise QuotaError(
                            f"search API refused the request ({response.status_code}); "
                            "check the API key and plan quota"
                        )
                    response.raise_for_status()
                    return response.json()
                except QuotaError:
                    raise
                except (httpx.HTTPError, ValueError) as exc:
                    last_error = exc
                    if attempt + 1 < self.config.retries:
                        time.sleep(self.config.backoff_s * 2**attempt)
        raise RetrievalError(f"web search failed after {self.config.retries} attempts: {last_error}")


class EvidenceSource:
    """Either a local corpus or a web client, behind one gather interface."""

    def __init__(self, corpus: Corpus | None = None, web: WebSearchClient | None = None):
        if corpus is None and web is None:
            raise ContractViolation("evidence source needs a corpus or a web client")
        self.corpus = corpus
        self.web = web

    def gather(self, question: str, sentence: str, k: int) -> list[Document]:
        return gather_evidence(self, question, sentence, k)


def gather_evidence(source: EvidenceSource, question: str, sentence: str, k: int) -> list[Document]:
    """Evidence for one validation question.

    Web: union of results for the question alone and for question+sentence,
    de-duplicated by id (keeping the best score), re-sorted, truncated to k.
    Local: top-k for the question. An empty result is not an error; the
    caller must flag the concept NEI.
    """
    if source.web is not None:
        merged: dict[str, Document] = {}
        for sub_query in (question, f"{question} {sentence}".strip()):
            for doc in source.web.search(sub_query, k):
                kept = merged.get(doc.id)
                if kept is None or doc.score > kept.score:
                    merged[doc.id] = doc
        ranked = sorted(merged.values(), key=lambda d: (-d.score, d.id))
        return ranked[:k]
    assert source.corpus is not None
    return search_local(source.corpus, question, k)


def format_evidence(documents: list[Document]) -> str:
    """Evidence block for the support-check prompt; sources joined by '; '."""
    return "; ".join(
        f"{doc.title}: {doc.text}" if doc.title else doc.text for doc in documents
    )
