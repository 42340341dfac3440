"""Parser for bAbI-format task files.

Format: each line starts with a 1-based sentence number that resets to 1 at
the beginning of a new story. Question lines carry tab-separated fields:
question text, answer (possibly comma-separated), and supporting sentence
numbers. Statement sentences become segments, one sentence per segment,
truncated to the configured maximum length for modeling; the parsed story
keeps the full token lists.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

MAX_SEGMENT_TOKENS = 15

_LINE_RE = re.compile(r"^(\d+)\s(.*)$")
_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Lowercase and strip punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class BabiQuestion:
    tokens: list[str]
    answers: list[str]  # comma-separated answers split apart
    supporting: list[int]  # 1-based sentence numbers within the story
    context_len: int  # sentences visible when the question was asked


@dataclass
class BabiStory:
    sentences: list[list[str]] = field(default_factory=list)
    questions: list[BabiQuestion] = field(default_factory=list)

    def segments(self, max_len: int = MAX_SEGMENT_TOKENS) -> list[list[str]]:
        return [s[:max_len] for s in self.sentences]


@dataclass
class BabiData:
    stories: list[BabiStory]
    vocab: dict[str, int]

    @property
    def n_questions(self) -> int:
        return sum(len(s.questions) for s in self.stories)


def parse_babi(path: str | Path) -> BabiData:
    """Parse one bAbI task file into stories; raises DataError with the line
    number on malformed input."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"bAbI task file not found: {path}")
    stories: list[BabiStory] = []
    current: BabiStory | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            m = _LINE_RE.match(line)
            if not m:
                raise DataError(f"{path}:{line_no}: line does not start with an id")
            sent_id, rest = int(m.group(1)), m.group(2)
            if sent_id == 1:
                current = BabiStory()
                stories.append(current)
            if current is None:
                raise DataError(f"{path}:{line_no}: story does not start at id 1")
            if "\t" in rest:
                parts = rest.split("\t")
                if len(parts) < 2:
                    raise DataError(f"{path}:{line_no}: malformed question line")
                question_text, answer = parts[0], parts[1]
                supporting = []
                if len(parts) > 2 and parts[2].strip():
                    try:
                        supporting = [int(tok) for tok in parts[2].split()]
                    except ValueError as exc:
                        raise DataError(
                            f"{path}:{line_no}: bad supporting-fact ids: {parts[2]!r}"
                        ) from exc
                q_tokens = tokenize(question_text)
                if not q_tokens:
                    raise DataError(f"{path}:{line_no}: empty question")
                answers = [a for a in (tok.strip().lower() for tok in answer.split(",")) if a]
                if not answers:
                    raise DataError(f"{path}:{line_no}: empty answer")
                current.questions.append(
                    BabiQuestion(
                        tokens=q_tokens,
                        answers=answers,
                        supporting=supporting,
                        context_len=len(current.sentences),
                    )
                )
            else:
                tokens = tokenize(rest)
                if not tokens:
                    raise DataError(f"{path}:{line_no}: empty sentence")
                current.sentences.append(tokens)

    vocab_tokens = set()
    for story in stories:
        for sentence in story.sentences:
            vocab_tokens.update(sentence)
        for q in story.questions:
            vocab_tokens.update(q.tokens)
            vocab_tokens.update(q.answers)
    vocab = {tok: i for i, tok in enumerate(sorted(vocab_tokens))}
    return BabiData(stories=stories, vocab=vocab)


def serialize_story(story: BabiStory) -> str:
    """Re-render a story as text; used by the round-trip check."""
    lines = []
    next_id = 1
    pending = list(story.questions)
    sentence_no = 0
    q_index = 0
    for sentence in story.sentences:
        while q_index < len(pending) and pending[q_index].context_len == sentence_no:
            q = pending[q_index]
            lines.append(
                f"{next_id} {' '.join(q.tokens)}?\t{','.join(q.answers)}\t"
                + " ".join(str(s) for s in q.supporting)
            )
            next_id += 1
            q_index += 1
        lines.append(f"{next_id} {' '.join(sentence)}.")
        next_id += 1
        sentence_no += 1
    while q_index < len(pending):
        q = pending[q_index]
        lines.append(
            f"{next_id} {' '.join(q.tokens)}?\t{','.join(q.answers)}\t"
            + " ".join(str(s) for s in q.supporting)
        )
        next_id += 1
        q_index += 1
    return "\n".join(lines)


def story_token_multiset(story: BabiStory) -> dict[str, int]:
    """Multiset of all sentence + question + answer tokens in one story."""
    counts: dict[str, int] = {}
    def bump(tokens):
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1

    for sentence in story.sentences:
        bump(sentence)
    for q in story.questions:
        bump(q.tokens)
        bump(q.answers)
    return counts


def file_token_multiset(path: str | Path) -> list[dict[str, int]]:
    """Per-story token multisets computed straight from the raw file text,
    independent of the parser's story structures."""
    multisets: list[dict[str, int]] = []
    current: dict[str, int] | None = None
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            sent_id, rest = line.split(" ", 1)
            if int(sent_id) == 1:
                current = {}
                multisets.append(current)
            for part in rest.split("\t")[:2]:
                for tok in tokenize(part.replace(",", " ")):
                    current[tok] = current.get(tok, 0) + 1
    return multisets
