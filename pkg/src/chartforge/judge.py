"""Multimodal judging of generated charts.

Two protocols: a perceptual quality score for the generated chart against
its reference (the reference image always occupies the first slot, since
the prompt anchors the first image at 50), and a colorblind-accessibility
audit of the generated chart alone.  Verdicts parse from a JSON object
embedded anywhere in the completion; one format-reminder retry is issued
when no object can be found at all.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass

from PIL import Image, UnidentifiedImageError

from . import gateway
from .gateway import ChatRequest, complete

log = logging.getLogger("chartforge.judge")

PERCEPTUAL_SYSTEM_PROMPT = (
    "For two shown images, the human perceptual quality score of the first image is 50.\n"
    "Based on this example, assign a perceptual quality score to the second image "
    "in terms of perceptual similarity.\n"
    "The score must range from 0 to 100, with a higher score denoting better image quality.\n"
    'Return the result as a JSON object in this format: {"score": <integer>}.'
)

COLORBLIND_SYSTEM_PROMPT = (
    "You will be given a data-visualization (image). Decide whether the "
    "visualization is appropriate for viewers with color-vision deficiencies.\n"
    "How to judge:\n"
    "1. Do not rely on hue alone. Look for additional cues such as shapes, icons, "
    "text labels, patterns, or distinct light-dark contrasts.\n"
    "2. Avoid problem pairs. Red + green, red + brown, green + brown, purple + blue, "
    "and pink + turquoise of similar lightness are hard to tell apart.\n"
    "3. Prefer safe palettes. Blue vs. orange/red, or any two colors that differ "
    "clearly in lightness, usually work well.\n"
    "Check gradients. Gradients should vary in lightness, not just hue.\n"
    "Overall clarity. Annotations, legends, and labels must still be readable when "
    "colors are altered by common forms of color-blindness.\n"
    'Output format: Just return "Appropriate" or "Not appropriate", do NOT return '
    "anything else.\n"
    'Return the result as a JSON object in this format: {"Judgment": <string>}.'
)

_SCORE_REMINDER = (
    'Return only a JSON object exactly in this format: {"score": <integer>}.'
)
_JUDGMENT_REMINDER = (
    'Return only a JSON object exactly in this format: {"Judgment": <string>}, '
    'where the string is "Appropriate" or "Not appropriate".'
)

APPROPRIATE = "appropriate"
NOT_APPROPRIATE = "not_appropriate"
UNSCORED = "unscored"


class JudgeFormatError(Exception):
    """The judge completion did not yield a usable verdict."""


@dataclass(frozen=True)
class PerceptualVerdict:
    score: int
    raw_completion: str

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 100:
            raise ValueError("score must be within [0, 100]")


@dataclass(frozen=True)
class AccessibilityVerdict:
    judgment: str
    raw_completion: str

    def __post_init__(self) -> None:
        if self.judgment not in (APPROPRIATE, NOT_APPROPRIATE):
            raise ValueError(f"unknown judgment {self.judgment!r}")


def _require_png(data: bytes, label: str) -> None:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"{label} image is not decodable: {exc}") from exc


def _json_values(text: str, key: str) -> list:
    """Every value bound to ``key`` in JSON objects embedded in the text."""
    decoder = json.JSONDecoder()
    values = []
    idx = text.find("{")
    while idx != -1:
        try:
            obj, end = decoder.raw_decode(text[idx:])
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict) and key in obj:
            values.append(obj[key])
        idx = text.find("{", idx + end)
    return values


def _extract_value(text: str, key: str):
    """Return (value, found): distinct conflicting values raise."""
    values = _json_values(text, key)
    if not values:
        return None, False
    distinct = {json.dumps(v, sort_keys=True) for v in values}
    if len(distinct) > 1:
        raise JudgeFormatError(f"completion carries conflicting {key!r} objects: {values}")
    return values[0], True


def _ask_with_retry(request: ChatRequest, provider, key: str, reminder: str):
    """One completion, and one retry with a format reminder when no JSON
    object could be found at all.  Returns (value, raw_completion)."""
    completion = complete(request, provider)
    value, found = _extract_value(completion.text, key)
    if found:
        return value, completion.text
    log.debug("judge completion unparsable; retrying with format reminder")
    retry_request = ChatRequest(
        model_name=request.model_name,
        messages=request.messages
        + (gateway.assistant(completion.text or "(empty)"), gateway.user(reminder)),
        temperature=request.temperature,
        max_output_tokens=request.max_output_tokens,
    )
    retry = complete(retry_request, provider)
    value, found = _extract_value(retry.text, key)
    if not found:
        raise JudgeFormatError(f"no {key!r} object found after a format-reminder retry")
    return value, retry.text


def perceptual_score(
    reference_image: bytes,
    generated_image: bytes,
    provider,
    model_name: str = "gpt-4o-mini",
) -> PerceptualVerdict:
    """Score the generated chart against its reference on a 0-100 scale."""
    _require_png(reference_image, "reference")
    _require_png(generated_image, "generated")
    request = ChatRequest(
        model_name=model_name,
        messages=(
            gateway.system(PERCEPTUAL_SYSTEM_PROMPT),
            gateway.user_with_images([reference_image, generated_image]),
        ),
    )
    value, raw = _ask_with_retry(request, provider, "score", _SCORE_REMINDER)
    if isinstance(value, bool) or not isinstance(value, int):
        raise JudgeFormatError(f"score is not an integer: {value!r}")
    if not 0 <= value <= 100:
        raise JudgeFormatError(f"score {value} outside [0, 100]")
    return PerceptualVerdict(score=value, raw_completion=raw)


def colorblind_audit(
    image: bytes, provider, model_name: str = "gpt-4o-mini"
) -> AccessibilityVerdict:
    """Judge whether one chart stays legible under color-vision deficiency."""
    _require_png(image, "chart")
    request = ChatRequest(
        model_name=model_name,
        messages=(
            gateway.system(COLORBLIND_SYSTEM_PROMPT),
            gateway.user_with_images([image]),
        ),
    )
    value, raw = _ask_with_retry(request, provider, "Judgment", _JUDGMENT_REMINDER)
    text = value.strip() if isinstance(value, str) else value
    if text == "Appropriate":
        return AccessibilityVerdict(judgment=APPROPRIATE, raw_completion=raw)
    if text == "Not appropriate":
        return AccessibilityVerdict(judgment=NOT_APPROPRIATE, raw_completion=raw)
    raise JudgeFormatError(f"judgment {value!r} is not one of the two allowed strings")


@dataclass(frozen=True)
class AuditSummary:
    verdicts: dict[str, str]
    appropriate: int
    participating: int

    @property
    def pass_rate_percent(self) -> float | None:
        if not self.participating:
            return None
        return 100.0 * self.appropriate / self.participating


def audit_suite(records, tasks, provider, model_name: str = "gpt-4o-mini") -> AuditSummary:
    """Colorblind-audit every record that produced an image.

    Per-task judge failures are recorded as unscored rather than aborting
    the suite; with zero participants the pass rate is absent.
    """
    verdicts: dict[str, str] = {}
    appropriate = 0
    participating = 0
    for record in records:
        image = record.final_image
        if image is None:
            continue
        try:
            verdict = colorblind_audit(image, provider, model_name)
        except (JudgeFormatError, gateway.GatewayError) as exc:
            log.warning("task %s: audit unscored: %s", record.task_id, exc)
            verdicts[record.task_id] = UNSCORED
            continue
        participating += 1
        if verdict.judgment == APPROPRIATE:
            appropriate += 1
        verdicts[record.task_id] = verdict.judgment
    return AuditSummary(
        verdicts=verdicts, appropriate=appropriate, participating=participating
    )


@dataclass(frozen=True)
class PerceptualSummary:
    scores: dict[str, int]
    mean: float | None
    participating: int


def perceptual_suite(
    records, tasks, provider, model_name: str = "gpt-4o-mini"
) -> PerceptualSummary:
    """Perceptual-score every record with an image whose task has a
    reference image; judge failures are skipped, not fatal."""
    by_id = tasks.by_id()
    scores: dict[str, int] = {}
    for record in records:
        image = record.final_image
        task = by_id.get(record.task_id)
        if image is None or task is None or task.reference_image is None:
            continue
        try:
            verdict = perceptual_score(task.reference_image, image, provider, model_name)
        except (JudgeFormatError, gateway.GatewayError) as exc:
            log.warning("task %s: perceptual score skipped: %s", record.task_id, exc)
            continue
        scores[record.task_id] = verdict.score
    mean = sum(scores.values()) / len(scores) if scores else None
    return PerceptualSummary(scores=scores, mean=mean, participating=len(scores))
