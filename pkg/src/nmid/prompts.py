"""Prompt corpus and builders for the three prompt kinds.

The ten structured question prompts plus the synthesis and few-shot
instructions live as golden text files under ``assets/prompts/``; those
files are normative and loaded verbatim. Builders are pure functions of
their inputs so assembled requests are byte-stable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .messages import ChatPart, ChatRequest

PROMPT_TITLES = (
    "Basics",
    "Morphology and Structure",
    "Size and Distribution",
    "Surface Characteristics",
    "Composition and Elements",
    "Interactions and Boundaries",
    "External Environment",
    "Image Technique and Modifications",
    "Functional Features",
    "Context and Application",
)


class PromptError(Exception):
    pass


class UnparseableResponse(PromptError):
    def __init__(self, raw_text: str):
        super().__init__("no known label found in response")
        self.raw_text = raw_text


def _asset(name: str) -> str:
    return (
        resources.files("nmid").joinpath("assets/prompts").joinpath(name)
        .read_bytes().decode("utf-8")
    )


def cot_prompts() -> list[str]:
    """The ten structured VQA prompts, verbatim from the golden files."""
    return [_asset(f"cot_{i:02d}.txt") for i in range(1, 11)]


def cot_prompt(prompt_id: int) -> str:
    if not 1 <= prompt_id <= 10:
        raise PromptError(f"prompt_id must be 1..10, got {prompt_id}")
    return _asset(f"cot_{prompt_id:02d}.txt")


def synthesis_instruction() -> str:
    return _asset("synthesis_instruction.txt")


def fewshot_instruction() -> str:
    return _asset("fewshot_instruction.txt")


@dataclass
class QaPair:
    prompt_id: int
    question: str
    answer: str

    def __post_init__(self):
        if not 1 <= self.prompt_id <= 10:
            raise PromptError(f"prompt_id out of range: {self.prompt_id}")
        if not self.answer:
            raise PromptError("answer must be nonempty")


@dataclass
class VqaTranscript:
    image_id: str
    pairs: list[QaPair]
    backend: str
    ts: float = 0.0

    def __post_init__(self):
        ids = [p.prompt_id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise PromptError("duplicate prompt_ids in transcript")


@dataclass
class RankedPrediction:
    labels: list[str]
    raw_text: str = ""


def vqa_preamble(category_hint: str | None = None) -> str:
    if category_hint:
        return ("Please answer the following questions based on the provided "
                f"input image belonging to the {category_hint} nanomaterial category.")
    return "Please answer the following questions based on the provided input image."


def build_vqa_request(image_bytes: bytes, prompt: str, *, mime: str = "image/png",
                      category_hint: str | None = None,
                      backend: str = "mock-vqa", params: dict | None = None) -> ChatRequest:
    """Preamble (optionally naming the category), image, then the question."""
    return ChatRequest(
        backend=backend,
        parts=[
            ChatPart.from_text(vqa_preamble(category_hint)),
            ChatPart.from_image(image_bytes, mime),
            ChatPart.from_text(prompt),
        ],
        params=dict(params or {}),
    )


def build_synthesis_prompt(transcript: VqaTranscript) -> str:
    """Synthesis instruction followed by Q/A blocks in prompt order."""
    if not transcript.pairs:
        raise PromptError("transcript has no question-answer pairs")
    blocks = [synthesis_instruction()]
    for pair in sorted(transcript.pairs, key=lambda p: p.prompt_id):
        blocks.append(f"Q: {pair.question}\nA: {pair.answer}")
    return "\n\n".join(blocks)


def fewshot_closing(label_set: list[str]) -> str:
    # Bridge convention: a generative model is asked for a ranked list so
    # Top-N accuracy is well defined downstream.
    return ("Respond with a ranked list of up to 5 candidate categories, "
            f"most likely first, chosen from: {', '.join(label_set)}.")


def build_fewshot_prompt(demos: list[tuple[bytes, str]], query_image: bytes,
                         label_set: list[str], *, mime: str = "image/png",
                         backend: str = "mock-classifier",
                         params: dict | None = None) -> ChatRequest:
    """Instruction, (image, "Label: x") per demo, query image, closing ask.

    Zero demos degrade to the zero-shot variant (instruction + query only).
    """
    known = set(label_set)
    parts = [ChatPart.from_text(fewshot_instruction())]
    for image_bytes, label in demos:
        if label not in known:
            raise PromptError(f"demonstration label {label!r} not in label set")
        parts.append(ChatPart.from_image(image_bytes, mime))
        parts.append(ChatPart.from_text(f"Label: {label}"))
    parts.append(ChatPart.from_image(query_image, mime))
    parts.append(ChatPart.from_text(fewshot_closing(label_set)))
    return ChatRequest(backend=backend, parts=parts, params=dict(params or {}))


def parse_ranked_labels(text: str, label_set: list[str]) -> RankedPrediction:
    """Extract labels by case-insensitive whole-phrase match.

    Longer labels claim their text first (so "films" cannot shadow
    "films and coated surfaces"), results keep first-occurrence order,
    duplicates are dropped, and an empty result raises rather than
    silently scoring a miss upstream.
    """
    lower = text.lower()
    claimed: list[tuple[int, int]] = []
    found: list[tuple[int, str]] = []
    for label in sorted(label_set, key=lambda s: (-len(s), s)):
        pattern = re.compile(
            r"(?<![a-z0-9])" + re.escape(label.lower()) + r"(?![a-z0-9])")
        for m in pattern.finditer(lower):
            if any(s < m.end() and m.start() < e for s, e in claimed):
                continue
            claimed.append((m.start(), m.end()))
            found.append((m.start(), label))
    found.sort()
    seen: set[str] = set()
    ordered = []
    for _, label in found:
        if label not in seen:
            seen.add(label)
            ordered.append(label)
    if not ordered:
        raise UnparseableResponse(text)
    return RankedPrediction(labels=ordered, raw_text=text)


# ---------------------------------------------------------------------------
# Transcript persistence: one JSONL row per question-answer pair.
# ---------------------------------------------------------------------------


def save_transcripts(transcripts: list[VqaTranscript], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            for pair in t.pairs:
                fh.write(json.dumps({
                    "image_id": t.image_id,
                    "prompt_id": pair.prompt_id,
                    "question": pair.question,
                    "answer": pair.answer,
                    "backend": t.backend,
                    "ts": t.ts,
                }) + "\n")
    return path


def load_transcripts(path: str | Path) -> list[VqaTranscript]:
    grouped: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            entry = grouped.setdefault(
                row["image_id"],
                {"backend": row["backend"], "ts": row["ts"], "pairs": []})
            entry["pairs"].append(QaPair(
                prompt_id=row["prompt_id"], question=row["question"],
                answer=row["answer"]))
    return [
        VqaTranscript(image_id=image_id, pairs=entry["pairs"],
                      backend=entry["backend"], ts=entry["ts"])
        for image_id, entry in grouped.items()
    ]
