"""Error-propagation study in the simulated fact world.

Runs many biography trials under two policies — plain sequential generation
("none") and the full verification pipeline ("ever") — over identically
seeded worlds, then compares per-sentence-index error rates and the paired
per-trial means. Under "none", an uncorrected error raises the corruption
odds of the following sentence (the snowball), so the per-index error rate
climbs; the pipeline corrects in place, which keeps it flat and low.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import mean

from scipy import stats

from .backends import SimBackend, make_world
from .core import GenerationMode, TaskKind, ValidationMode, strip_not_sure
from .errors import ConfigError
from .pipeline import Pipeline, PipelineConfig

POLICIES = ("none", "ever")


@dataclass
class SnowballReport:
    trials: int
    sentences: int
    p_intrinsic: float
    p_extrinsic: float
    snowball_gain: float
    seed: int
    per_index_rates: dict[str, list[float]] = field(default_factory=dict)
    mean_error: dict[str, float] = field(default_factory=dict)
    paired_t: float | None = None
    paired_p: float | None = None
    slope: dict[str, float] = field(default_factory=dict)
    slope_p_one_sided: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": "ever-snowball/1",
            "trials": self.trials,
            "sentences": self.sentences,
            "p_intrinsic": self.p_intrinsic,
            "p_extrinsic": self.p_extrinsic,
            "snowball_gain": self.snowball_gain,
            "seed": self.seed,
            "per_index_rates": {k: [round(x, 6) for x in v]
                                for k, v in self.per_index_rates.items()},
            "mean_error": {k: round(v, 6) for k, v in self.mean_error.items()},
            "paired_t": self.paired_t,
            "paired_p": self.paired_p,
            "slope": {k: round(v, 8) for k, v in self.slope.items()},
            "slope_p_one_sided": {k: round(v, 8) for k, v in self.slope_p_one_sided.items()},
        }

    def format_table(self, policies=POLICIES) -> str:
        lines = ["index  " + "  ".join(f"{p:>8}" for p in policies)]
        for i in range(self.sentences):
            row = f"{i:>5}  "
            row += "  ".join(f"{self.per_index_rates[p][i]:>8.4f}" for p in policies)
            lines.append(row)
        lines.append("mean   " + "  ".join(f"{self.mean_error[p]:>8.4f}" for p in policies))
        if self.paired_p is not None:
            lines.append(
                f"paired one-sided t-test (none > ever): t={self.paired_t:.3f} "
                f"p={self.paired_p:.3g}"
            )
        for policy in policies:
            lines.append(
                f"slope[{policy}]={self.slope[policy]:+.5f} "
                f"(one-sided p={self.slope_p_one_sided[policy]:.3g})"
            )
        return "\n".join(lines)


def _trial_errors(world, topic: str, texts: list[str], sentences: int) -> list[int]:
    errors = [0] * sentences
    for i, text in enumerate(texts[:sentences]):
        errors[i] = int(world.sentence_is_erroneous(topic, strip_not_sure(text)))
    return errors


def run_snowball_study(
    trials: int = 1000,
    sentences: int = 10,
    p_intrinsic: float = 0.15,
    p_extrinsic: float = 0.15,
    snowball_gain: float = 2.0,
    seed: int = 0,
    max_rounds: int = 1,
) -> SnowballReport:
    """Paired comparison of final error rates with and without the pipeline."""
    if trials < 2:
        raise ConfigError("the paired comparison needs at least 2 trials")
    topics = [f"Trial subject {i}" for i in range(trials)]
    per_trial: dict[str, list[list[int]]] = {}
    for policy in POLICIES:
        world = make_world(
            topics,
            facts_per_topic=sentences,
            p_intrinsic=p_intrinsic,
            p_extrinsic=p_extrinsic,
            snowball_gain=snowball_gain,
            seed=seed,
        )
        config = PipelineConfig(
            task=TaskKind.BIOGRAPHY,
            generation_mode=GenerationMode.NON_RETRIEVAL,
            validation_mode=ValidationMode.SELF_QUERY,
            max_rounds=max_rounds,
            max_sentences=sentences,
            validation_parallelism=1,
            seed=seed,
        )
        pipeline = Pipeline(config, SimBackend(world))
        outcomes = []
        for topic in topics:
            query = f"Tell me a bio of {topic}."
            if policy == "none":
                result = pipeline.run_baseline(query, topic)
            else:
                result = pipeline.run_example(query, topic)
            outcomes.append(
                _trial_errors(world, topic, [s.text for s in result.sentences], sentences)
            )
        per_trial[policy] = outcomes

    report = SnowballReport(
        trials=trials, sentences=sentences, p_intrinsic=p_intrinsic,
        p_extrinsic=p_extrinsic, snowball_gain=snowball_gain, seed=seed,
    )
    for policy, outcomes in per_trial.items():
        report.per_index_rates[policy] = [
            mean(trial[i] for trial in outcomes) for i in range(sentences)
        ]
        report.mean_error[policy] = mean(mean(trial) for trial in outcomes)
        indices = list(range(sentences))
        regression = stats.linregress(indices, report.per_index_rates[policy])
        report.slope[policy] = float(regression.slope)
        two_sided = float(regression.pvalue)
        one_sided = two_sided / 2 if regression.slope > 0 else 1 - two_sided / 2
        report.slope_p_one_sided[policy] = one_sided

    none_means = [mean(t) for t in per_trial["none"]]
    ever_means = [mean(t) for t in per_trial["ever"]]
    test = stats.ttest_rel(none_means, ever_means, alternative="greater")
    report.paired_t = float(test.statistic)
    report.paired_p = float(test.pvalue)
    return report
