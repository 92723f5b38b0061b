"""Pipeline behavior: validation, rectification, finalization, determinism."""

import time

import pytest

from ever.backends import ScriptedBackend, SimBackend, make_world, world_corpus
from ever.core import (
    ABSTENTION_TEXT,
    Flag,
    GenerationMode,
    NOT_SURE_MARKER,
    SentenceStatus,
    TaskKind,
    ValidationMode,
)
from ever.errors import ConfigError
from ever.pipeline import ExampleResult, Pipeline, PipelineConfig
from ever.retrieval import Corpus, EvidenceSource


def sim_pipeline(world, task, **config_kwargs):
    config = PipelineConfig(task=task, **config_kwargs)
    return Pipeline(config, SimBackend(world))


def topics(n, prefix="Subject"):
    return [f"{prefix} {i}" for i in range(n)]


class TestOracleWorldRuns:
    def test_zero_corruption_all_accepted(self):
        world = make_world(topics(5), facts_per_topic=4, seed=3)
        pipeline = sim_pipeline(world, TaskKind.BIOGRAPHY)
        for topic in world.facts:
            result = pipeline.run_example(f"Tell me a bio of {topic}.", topic)
            assert result.error is None
            assert len(result.sentences) == 4
            assert all(s.status is SentenceStatus.ACCEPTED for s in result.sentences)
            assert all(len(s.history) == 1 for s in result.sentences)
        assert all(not e.erroneous for e in world.transcript)

    def test_certain_intrinsic_corruption_fully_revised(self):
        world = make_world(topics(10), facts_per_topic=3, p_intrinsic=1.0, seed=11)
        pipeline = sim_pipeline(world, TaskKind.BIOGRAPHY, max_rounds=1)
        for topic in world.facts:
            result = pipeline.run_example(f"Tell me a bio of {topic}.", topic)
            for state in result.sentences:
                assert state.status is SentenceStatus.ACCEPTED
                assert not world.sentence_is_erroneous(topic, state.text)
                assert len(state.history) == 2  # initial checks + one revision round

    def test_certain_extrinsic_corruption_flags_biography(self):
        world = make_world(topics(6), facts_per_topic=3, p_extrinsic=1.0, seed=5)
        pipeline = sim_pipeline(world, TaskKind.BIOGRAPHY, max_rounds=1)
        for topic in world.facts:
            result = pipeline.run_example(f"Tell me a bio of {topic}.", topic)
            assert result.sentences, topic
            for state in result.sentences:
                # the rewrite fabricates again at p_extrinsic=1, so the
                # residual is flagged for the user
                assert state.status is SentenceStatus.FLAGGED_NOT_SURE
                assert state.text.endswith(NOT_SURE_MARKER)

    def test_certain_extrinsic_corruption_abstains_shortqa(self):
        world = make_world(topics(6), facts_per_topic=1, p_extrinsic=1.0, seed=6)
        pipeline = sim_pipeline(world, TaskKind.SHORT_FORM_QA)
        for topic, specs in world.facts.items():
            result = pipeline.run_example(f"What is the {specs[0].kind} of {topic}?", topic)
            assert result.status == "abstained"
            assert result.final_text == ABSTENTION_TEXT
            assert result.final_text == "Sorry, I don't know"

    def test_clean_shortqa_answers_with_true_value(self):
        world = make_world(topics(4), facts_per_topic=1, seed=9)
        pipeline = sim_pipeline(world, TaskKind.SHORT_FORM_QA)
        for topic, specs in world.facts.items():
            result = pipeline.run_example(f"What is the {specs[0].kind} of {topic}?", topic)
            assert result.status == "answered"
            assert specs[0].value in result.final_text


class TestEvidenceRetrievalMode:
    def test_er_records_evidence_ids(self):
        world = make_world(topics(2), facts_per_topic=2, seed=4)
        config = PipelineConfig(task=TaskKind.BIOGRAPHY,
                                validation_mode=ValidationMode.EVIDENCE_RETRIEVAL,
                                k_docs=3)
        pipeline = Pipeline(config, SimBackend(world),
                            evidence=EvidenceSource(corpus=world_corpus(world)))
        result = pipeline.run_example("Tell me a bio of Subject 0.", "Subject 0")
        checks = [c for s in result.sentences for r in s.history for c in r.checks]
        assert checks
        assert all(c.evidence for c in checks)
        assert all(c.flag is Flag.TRUE for c in checks)

    def test_er_with_empty_corpus_flags_nei(self):
        world = make_world(topics(1), facts_per_topic=1, seed=4)
        config = PipelineConfig(task=TaskKind.BIOGRAPHY,
                                validation_mode=ValidationMode.EVIDENCE_RETRIEVAL)
        pipeline = Pipeline(config, SimBackend(world),
                            evidence=EvidenceSource(corpus=Corpus([])))
        result = pipeline.run_example("Tell me a bio of Subject 0.", "Subject 0")
        state = result.sentences[0]
        assert state.status is SentenceStatus.FLAGGED_NOT_SURE
        check = state.history[-1].checks[0]
        assert check.flag is Flag.NEI
        assert check.evidence == ()
        assert check.decision.reasoning == "no evidence retrieved"

    def test_er_without_source_is_a_config_error(self):
        config = PipelineConfig(task=TaskKind.BIOGRAPHY,
                                validation_mode=ValidationMode.EVIDENCE_RETRIEVAL)
        with pytest.raises(ConfigError):
            Pipeline(config, ScriptedBackend())


class TestReasoning:
    def test_clean_chain_stops_at_answer(self):
        world = make_world(topics(3), facts_per_topic=3, final_answer_fact=True, seed=2)
        pipeline = sim_pipeline(world, TaskKind.MULTI_HOP_REASONING)
        for topic, specs in world.facts.items():
            result = pipeline.run_example(f"What is the {specs[-1].kind} of {topic}?", topic)
            assert result.status == "answered"
            assert len(result.sentences) == 3
            assert "the answer is" in result.sentences[-1].text.lower()
            assert result.answer.rstrip(".") == specs[-1].value

    def test_unverifiable_final_answer_abstains(self):
        world = make_world(topics(3), facts_per_topic=2, final_answer_fact=True,
                           p_extrinsic=1.0, seed=8)
        pipeline = sim_pipeline(world, TaskKind.MULTI_HOP_REASONING)
        result = pipeline.run_example("What is the answer of Subject 0?", "Subject 0")
        assert result.status == "abstained"
        assert result.final_text == ABSTENTION_TEXT
        # the intermediate step was flagged, the answer sentence abstained
        assert result.sentences[0].status is SentenceStatus.FLAGGED_NOT_SURE
        assert result.sentences[-1].status is SentenceStatus.ABSTAINED


class TestListQA:
    def test_clean_list_keeps_every_item(self):
        world = make_world(topics(2), facts_per_topic=4, seed=21)
        pipeline = sim_pipeline(world, TaskKind.LIST_QA)
        topic, specs = next(iter(world.facts.items()))
        result = pipeline.run_example(f"List the recorded facts of {topic}.", topic)
        assert result.status == "answered"
        for spec in specs:
            assert spec.value in result.final_text

    def test_all_items_unverifiable_abstains(self):
        world = make_world(topics(1), facts_per_topic=3, p_extrinsic=1.0, seed=22)
        pipeline = sim_pipeline(world, TaskKind.LIST_QA)
        result = pipeline.run_example("List the recorded facts of Subject 0.", "Subject 0")
        assert result.status == "abstained"
        assert result.final_text == ABSTENTION_TEXT

    def test_mixed_corruption_drops_only_unverified_items(self):
        # seed chosen so the first emission carries both a decoy (False) and a
        # fabrication (NEI): the revise round fixes the decoy, the leftover
        # NEI item is dropped at finalize
        found = None
        for seed in range(60):
            world = make_world(topics(1), facts_per_topic=4,
                               p_intrinsic=0.5, p_extrinsic=0.5, seed=seed)
            pipeline = sim_pipeline(world, TaskKind.LIST_QA, max_rounds=1)
            topic = "Subject 0"
            result = pipeline.run_example(f"List the recorded facts of {topic}.", topic)
            first = world.transcript[0]
            if first.intrinsic and first.extrinsic and result.status == "answered":
                found = (world, result)
                break
        assert found is not None, "no seed produced a mixed-corruption emission"
        world, result = found
        truths = {s.value for s in world.facts["Subject 0"]}
        kept = set(result.final_text.split("; "))
        assert kept <= truths
        assert "apocrypha" not in result.final_text


FIG2_SENTENCE = (
    "Shin Jea-hwan is an artistic gymnast, born on November 2, 1998, and has "
    "raised by a family of traveling circus performers."
)
FIG2_CLEAN = "Shin Jea-hwan is an artistic gymnast, born on November 2, 1998."


def scripted_gymnast_backend(rewrite_fixes: bool) -> ScriptedBackend:
    backend = ScriptedBackend()
    backend.add("bio_generate", {"so_far": ""}, FIG2_SENTENCE)
    backend.add("bio_generate", {}, "")
    backend.add("concept_extract", {"sentence": FIG2_SENTENCE},
                "artistic gymnast; November 2, 1998; traveling circus performers")
    backend.add("concept_extract", {"sentence": FIG2_CLEAN},
                "artistic gymnast; November 2, 1998")
    backend.add("validation_question", {"concept": "artistic gymnast"},
                "Is Shin Jea-hwan an artistic gymnast?")
    backend.add("validation_question", {"concept": "November 2, 1998"},
                "Was Shin Jea-hwan born on November 2, 1998?")
    backend.add("validation_question", {"concept": "traveling circus performers"},
                "Was Shin Jea-hwan raised by a family of traveling circus performers?")
    backend.add("support_check_sq", {"concept": "artistic gymnast"},
                "Records list him as an artistic gymnast. Therefore, the decision is True.")
    backend.add("support_check_sq", {"concept": "November 2, 1998"},
                "The birth date matches. Therefore, the decision is True.")
    backend.add("support_check_sq", {"concept": "traveling circus performers"},
                "Nothing about circus performers appears anywhere. "
                "Therefore, the decision is Not Enough Information.")
    backend.add("rewrite_extrinsic", {"sentence": FIG2_SENTENCE},
                FIG2_CLEAN if rewrite_fixes else FIG2_SENTENCE)
    return backend


class TestScriptedBiography:
    def test_three_concepts_and_gymnast_question(self):
        backend = scripted_gymnast_backend(rewrite_fixes=True)
        pipeline = Pipeline(PipelineConfig(task=TaskKind.BIOGRAPHY), backend)
        result = ExampleResult(id="x", query="q", topic="Shin Jea-hwan",
                               task=TaskKind.BIOGRAPHY)
        checks = pipeline.validate_sentence(result, FIG2_SENTENCE, "Shin Jea-hwan")
        assert len(checks) == 3
        assert checks[0].question == "Is Shin Jea-hwan an artistic gymnast?"
        assert [c.flag for c in checks] == [Flag.TRUE, Flag.TRUE, Flag.NEI]

    def test_successful_rewrite_is_revalidated_and_accepted(self):
        backend = scripted_gymnast_backend(rewrite_fixes=True)
        pipeline = Pipeline(PipelineConfig(task=TaskKind.BIOGRAPHY), backend)
        result = pipeline.run_example("Tell me a bio of Shin Jea-hwan.", "Shin Jea-hwan")
        state = result.sentences[0]
        assert state.text == FIG2_CLEAN
        assert state.status is SentenceStatus.ACCEPTED
        assert len(state.history) == 2

    def test_failed_rewrite_gets_warning_flag(self):
        backend = scripted_gymnast_backend(rewrite_fixes=False)
        pipeline = Pipeline(PipelineConfig(task=TaskKind.BIOGRAPHY), backend)
        result = pipeline.run_example("Tell me a bio of Shin Jea-hwan.", "Shin Jea-hwan")
        state = result.sentences[0]
        assert state.status is SentenceStatus.FLAGGED_NOT_SURE
        assert state.text == FIG2_SENTENCE + NOT_SURE_MARKER

    def test_stagnation_stops_before_round_budget(self):
        backend = scripted_gymnast_backend(rewrite_fixes=False)
        pipeline = Pipeline(PipelineConfig(task=TaskKind.BIOGRAPHY, max_rounds=5), backend)
        result = pipeline.run_example("Tell me a bio of Shin Jea-hwan.", "Shin Jea-hwan")
        state = result.sentences[0]
        # identical text and flags two rounds in a row stops the loop early
        assert len(state.history) == 3
        assert state.status is SentenceStatus.FLAGGED_NOT_SURE


class TestValidationSkipped:
    def test_zero_concepts_accepts_unchecked(self):
        backend = ScriptedBackend()
        backend.add("bio_generate", {"so_far": ""}, "Purely connective phrasing follows.")
        backend.add("bio_generate", {}, "")
        backend.add("concept_extract", {}, " ; ; ")
        pipeline = Pipeline(PipelineConfig(task=TaskKind.BIOGRAPHY), backend)
        result = pipeline.run_example("Tell me a bio of Nobody.", "Nobody")
        state = result.sentences[0]
        assert state.validation_skipped
        assert state.status is SentenceStatus.ACCEPTED
        assert state.history == []


class TestConcurrencyContract:
    def build(self, parallelism: int) -> Pipeline:
        sentence = "Alpha beta gamma delta."
        backend = ScriptedBackend(latency_by_template={"support_check_sq": 1.0})
        backend.add("concept_extract", {"sentence": sentence}, "a1; b2; c3; d4")
        for concept in ("a1", "b2", "c3", "d4"):
            backend.add("validation_question", {"concept": concept}, f"Is {concept} right?")
            backend.add("support_check_sq", {"concept": concept},
                        f"{concept} checks out. Therefore, the decision is True.")
        config = PipelineConfig(task=TaskKind.BIOGRAPHY, validation_parallelism=parallelism)
        return Pipeline(config, backend)

    def test_four_checks_run_in_parallel_under_two_seconds(self):
        pipeline = self.build(parallelism=4)
        result = ExampleResult(id="x", query="q", topic="T", task=TaskKind.BIOGRAPHY)
        started = time.monotonic()
        checks = pipeline.validate_sentence(result, "Alpha beta gamma delta.", "T")
        wall = time.monotonic() - started
        assert wall < 2.0
        assert [c.concept.index for c in checks] == [0, 1, 2, 3]
        assert [c.concept.surface for c in checks] == ["a1", "b2", "c3", "d4"]

    def test_results_in_ordinal_order_even_serially(self):
        pipeline = self.build(parallelism=1)
        result = ExampleResult(id="x", query="q", topic="T", task=TaskKind.BIOGRAPHY)
        checks = pipeline.validate_sentence(result, "Alpha beta gamma delta.", "T")
        assert [c.concept.index for c in checks] == [0, 1, 2, 3]


class TestDeterminism:
    def run_once(self, parallelism: int = 4):
        world = make_world(topics(4), facts_per_topic=3,
                           p_intrinsic=0.4, p_extrinsic=0.4, snowball_gain=2.0, seed=123)
        pipeline = sim_pipeline(world, TaskKind.BIOGRAPHY,
                                validation_parallelism=parallelism)
        return [
            pipeline.run_example(f"Tell me a bio of {t}.", t, record_id=t).to_dict()
            for t in world.facts
        ]

    def test_repeated_runs_identical(self):
        assert self.run_once() == self.run_once()

    def test_parallelism_does_not_change_results(self):
        assert self.run_once(parallelism=1) == self.run_once(parallelism=8)


class TestCallAccounting:
    def test_backend_calls_within_bound(self):
        world = make_world(topics(5), facts_per_topic=3,
                           p_intrinsic=0.5, p_extrinsic=0.3, seed=77)
        pipeline = sim_pipeline(world, TaskKind.BIOGRAPHY, max_rounds=2)
        for topic in world.facts:
            result = pipeline.run_example(f"Tell me a bio of {topic}.", topic)
            bound = 1  # trailing end-of-generation probe
            for state in result.sentences:
                concepts = max((len(r.checks) for r in state.history), default=0)
                bound += 1 + max(len(state.history), 1) * (2 + 2 * concepts)
            assert result.backend_calls <= bound


class TestBaselines:
    def test_plain_pass_accepts_everything(self):
        world = make_world(topics(2), facts_per_topic=3, p_intrinsic=1.0, seed=1)
        pipeline = sim_pipeline(world, TaskKind.BIOGRAPHY)
        result = pipeline.run_baseline("Tell me a bio of Subject 0.", "Subject 0")
        assert result.status == "answered"
        assert len(result.sentences) == 3
        assert all(s.validation_skipped for s in result.sentences)
        # intrinsic corruption flows straight through without validation
        assert any(world.sentence_is_erroneous("Subject 0", s.text)
                   for s in result.sentences)

    def test_refusal_detected_as_abstention(self):
        backend = ScriptedBackend()
        backend.add("qa_zero_shot_abstain_trivia", {"so_far": ""}, "sorry I don't know.")
        backend.add("qa_zero_shot_abstain_trivia", {}, "")
        config = PipelineConfig(task=TaskKind.SHORT_FORM_QA, abstain_prompting=True)
        pipeline = Pipeline(config, backend)
        result = pipeline.run_baseline("Who?", "T")
        assert result.status == "abstained"
        assert result.final_text == ABSTENTION_TEXT
