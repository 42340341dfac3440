"""Synthetic logic-chain benchmark: streams of facts with planted evidence.

Facts and queries are partitioned into groups; each (query, answer) pair owns
a unique ordered evidence sequence of facts from the query's group. A sample
is a fact stream with exactly one contiguous occurrence of its chain's
evidence, placed wholly inside the first half (bucket "early") or the second
half ("later"). Buckets are the probe for early-content forgetting.

Streams are repaired after placement so that no *other* answer's evidence for
the same query occurs contiguously anywhere (each stream-query pair keeps a
unique answer), and the planted evidence occurs only at its recorded start
(keeps the bucket label meaningful). ``verify_sample`` re-checks the
guarantee with an exhaustive scan that shares no code with the repair.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff.rng import Rng
from .errors import ConfigError, DataError

SPLIT_NAMES = ("train", "val", "test")
# Deterministic 80/10/10 deal; applied per chain with the offset carried
# across chains so any sample count splits exactly.
_SPLIT_PATTERN = ("train",) * 4 + ("val",) + ("train",) * 4 + ("test",)

_MAX_REPAIR_ROUNDS = 100
_MAX_CHAIN_DRAWS = 1000


@dataclass
class SyntheticConfig:
    r_f: int = 400  # fact vocabulary size
    r_l: int = 200  # stream length
    r_q: int = 40  # query count
    r_a: int = 30  # answers per query
    r_c: int = 5  # evidence length
    groups: int = 20
    samples_per_chain: int = 400
    seed: int = 0

    def validate(self) -> None:
        for name in ("r_f", "r_l", "r_q", "r_a", "r_c", "groups", "samples_per_chain"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synthetic.{name} must be positive")
        if self.r_c > self.r_l // 2:
            raise ConfigError(
                f"synthetic.r_c={self.r_c} does not fit in half a stream of r_l={self.r_l}"
            )
        if self.r_f % self.groups != 0:
            raise ConfigError(
                f"synthetic.r_f={self.r_f} not divisible into {self.groups} groups"
            )
        if self.r_q % self.groups != 0:
            raise ConfigError(
                f"synthetic.r_q={self.r_q} not divisible into {self.groups} groups"
            )
        per_group = self.r_f // self.groups
        if per_group < self.r_c:
            raise ConfigError(
                f"synthetic.groups={self.groups} leaves {per_group} facts per group, "
                f"fewer than evidence length r_c={self.r_c}"
            )
        # ordered draws without replacement available per group
        perms = 1
        for i in range(self.r_c):
            perms *= per_group - i
            if perms >= self.r_a:
                break
        if perms < self.r_a:
            raise ConfigError(
                f"group of {per_group} facts cannot host {self.r_a} distinct "
                f"evidence sequences of length {self.r_c}"
            )

    @property
    def n_chains(self) -> int:
        return self.r_q * self.r_a


@dataclass
class LogicChain:
    query: int
    answer: int
    evidence: tuple[int, ...]


@dataclass
class Sample:
    stream: list[int]
    query: int
    answer: int
    evidence_start: int
    bucket: str  # "early" | "later"


def build_logic_chains(config: SyntheticConfig, rng: Rng) -> list[LogicChain]:
    """One chain per (query, answer) pair; evidence drawn from the query's group.

    Facts and queries are shuffled then split evenly into ``config.groups``
    groups; within each query the answer -> evidence assignment is a bijection
    (no two answers share an evidence sequence).
    """
    config.validate()
    fact_order = rng.permutation(config.r_f)
    query_order = rng.permutation(config.r_q)
    facts_per_group = config.r_f // config.groups
    queries_per_group = config.r_q // config.groups
    fact_groups = [
        fact_order[g * facts_per_group : (g + 1) * facts_per_group].tolist()
        for g in range(config.groups)
    ]
    query_group = {}
    for g in range(config.groups):
        for q in query_order[g * queries_per_group : (g + 1) * queries_per_group]:
            query_group[int(q)] = g

    chains = []
    for query in range(config.r_q):
        pool = fact_groups[query_group[query]]
        used: set[tuple[int, ...]] = set()
        for answer in range(config.r_a):
            for _ in range(_MAX_CHAIN_DRAWS):
                picks = rng.choice(len(pool), size=config.r_c, replace=False)
                evidence = tuple(pool[i] for i in picks)
                if evidence not in used:
                    used.add(evidence)
                    break
            else:
                raise DataError(
                    f"could not draw a fresh evidence sequence for query {query}, "
                    f"answer {answer} after {_MAX_CHAIN_DRAWS} attempts"
                )
            chains.append(LogicChain(query=query, answer=answer, evidence=evidence))
    return chains


def chains_by_query(chains: list[LogicChain]) -> dict[int, list[LogicChain]]:
    out: dict[int, list[LogicChain]] = {}
    for chain in chains:
        out.setdefault(chain.query, []).append(chain)
    return out


def _placement_starts(config: SyntheticConfig) -> tuple[list[int], list[int]]:
    half = config.r_l // 2
    early = list(range(0, half - config.r_c + 1))
    later = list(range(half, config.r_l - config.r_c + 1))
    return early, later


def _find_offending_windows(
    stream: list[int], forbidden: set[tuple[int, ...]], r_c: int, skip_start: int
) -> list[int]:
    hits = []
    for pos in range(len(stream) - r_c + 1):
        if pos == skip_start:
            continue
        if tuple(stream[pos : pos + r_c]) in forbidden:
            hits.append(pos)
    return hits


def generate_sample(
    chain: LogicChain,
    config: SyntheticConfig,
    rng: Rng,
    sibling_evidence: list[tuple[int, ...]] | None = None,
) -> Sample:
    """Fill a stream uniformly, place the chain's evidence in one half, then
    repair accidental forbidden windows by resampling their filler cells.

    ``sibling_evidence`` lists the other answers' evidence for the same query;
    when omitted the sample only guards against duplicate own evidence.
    """
    half = config.r_l // 2
    early_starts, later_starts = _placement_starts(config)
    all_starts = early_starts + later_starts
    start = int(all_starts[int(rng.integers(0, len(all_starts)))])
    stream = rng.integers(0, config.r_f, shape=config.r_l).tolist()
    stream[start : start + config.r_c] = list(chain.evidence)

    forbidden = {tuple(ev) for ev in (sibling_evidence or [])}
    forbidden.add(tuple(chain.evidence))  # own evidence only at `start`
    evidence_cells = set(range(start, start + config.r_c))

    for _ in range(_MAX_REPAIR_ROUNDS):
        bad = _find_offending_windows(stream, forbidden, config.r_c, start)
        if not bad:
            break
        for pos in bad:
            filler_cells = [
                c for c in range(pos, pos + config.r_c) if c not in evidence_cells
            ]
            for c in filler_cells:
                stream[c] = int(rng.integers(0, config.r_f))
    else:
        raise DataError(
            f"stream repair failed after {_MAX_REPAIR_ROUNDS} rounds for chain "
            f"(query={chain.query}, answer={chain.answer})"
        )

    bucket = "early" if start < half else "later"
    return Sample(
        stream=stream,
        query=chain.query,
        answer=chain.answer,
        evidence_start=start,
        bucket=bucket,
    )


def verify_sample(sample: Sample, chains: list[LogicChain]) -> bool:
    """Independent exhaustive check of the unique-answer guarantee.

    True iff (a) the sample's own evidence sits at evidence_start and (b) no
    other answer's evidence for the same query occurs contiguously anywhere in
    the stream. Deliberately plain loops; shares nothing with the generator's
    repair scan.
    """
    own = None
    for chain in chains:
        if chain.query == sample.query and chain.answer == sample.answer:
            own = chain
            break
    if own is None:
        return False

    n = len(sample.stream)
    r_c = len(own.evidence)
    window = sample.stream[sample.evidence_start : sample.evidence_start + r_c]
    for got, want in zip(window, own.evidence):
        if got != want:
            return False
    if len(window) != r_c:
        return False

    for chain in chains:
        if chain.query != sample.query or chain.answer == sample.answer:
            continue
        for pos in range(n - len(chain.evidence) + 1):
            match = True
            for k, fact in enumerate(chain.evidence):
                if sample.stream[pos + k] != fact:
                    match = False
                    break
            if match:
                return False
    return True


# dataset files ----------------------------------------------------------


def _sample_rng(config: SyntheticConfig, chain_index: int, sample_index: int) -> Rng:
    return Rng(config.seed).child("sample", chain_index, sample_index)


def generate_dataset(config: SyntheticConfig, out_dir: str | Path) -> dict:
    """Write train/val/test JSONL splits plus a manifest; returns counts.

    Per-sample RNG is keyed by (seed, chain, index), so generation is
    deterministic and order-independent. The 80/10/10 split deals samples
    through a fixed 10-slot pattern, stratified by chain and bucket: within a
    chain, early samples are dealt first, later samples after, and the
    pattern offset carries across chains.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chains = build_logic_chains(config, Rng(config.seed).child("chains"))
    siblings = chains_by_query(chains)

    handles = {name: open(out / f"{name}.jsonl", "w") for name in SPLIT_NAMES}
    counts = {name: 0 for name in SPLIT_NAMES}
    offset = 0
    try:
        for chain_index, chain in enumerate(chains):
            sibling_evidence = [
                c.evidence for c in siblings[chain.query] if c.answer != chain.answer
            ]
            early: list[Sample] = []
            later: list[Sample] = []
            for i in range(config.samples_per_chain):
                sample = generate_sample(
                    chain, config, _sample_rng(config, chain_index, i), sibling_evidence
                )
                (early if sample.bucket == "early" else later).append(sample)
            for sample in early + later:
                split = _SPLIT_PATTERN[offset % len(_SPLIT_PATTERN)]
                offset += 1
                handles[split].write(json.dumps(asdict(sample), sort_keys=True) + "\n")
                counts[split] += 1
    except OSError as exc:
        raise DataError(f"failed writing dataset under {out}: {exc}") from exc
    finally:
        for fh in handles.values():
            fh.close()

    manifest = {
        "config": asdict(config),
        "chains": [asdict(c) for c in chains],
        "counts": counts,
        "n_chains": len(chains),
    }
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    except OSError as exc:
        raise DataError(f"failed writing manifest under {out}: {exc}") from exc
    return counts


@dataclass
class SplitArrays:
    """One split as flat numpy arrays (streams int32, rest int64/bool)."""

    streams: np.ndarray  # (n, r_l) int32
    queries: np.ndarray  # (n,) int64
    answers: np.ndarray  # (n,) int64
    evidence_starts: np.ndarray  # (n,) int64
    early: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.queries)


def load_split(data_dir: str | Path, split: str) -> SplitArrays:
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise DataError(f"missing dataset split: {path}")
    streams, queries, answers, starts, early = [], [], [], [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                streams.append(rec["stream"])
                queries.append(rec["query"])
                answers.append(rec["answer"])
                starts.append(rec["evidence_start"])
                early.append(rec["bucket"] == "early")
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{line_no}: malformed sample: {exc}") from exc
    if not streams:
        raise DataError(f"{path}: empty split")
    return SplitArrays(
        streams=np.asarray(streams, dtype=np.int32),
        queries=np.asarray(queries, dtype=np.int64),
        answers=np.asarray(answers, dtype=np.int64),
        evidence_starts=np.asarray(starts, dtype=np.int64),
        early=np.asarray(early, dtype=bool),
    )


def load_manifest(data_dir: str | Path) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"missing dataset manifest: {path}")
    return json.loads(path.read_text())


def chains_from_manifest(manifest: dict) -> list[LogicChain]:
    return [
        LogicChain(query=c["query"], answer=c["answer"], evidence=tuple(c["evidence"]))
        for c in manifest["chains"]
    ]


def config_from_manifest(manifest: dict) -> SyntheticConfig:
    return SyntheticConfig(**manifest["config"])
