"""Expected-response generators for the alignment pre-processing step.

A generator receives the rendered emotion-conditioned prompt together with
the source record and returns the continuation text. Two implementations:
a deterministic per-emotion template (the only generator on the acceptance
path) and an HTTP client for an external model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import requests

from .manifest import UtteranceRecord

DEFAULT_EMOTION_RESPONSES = {
    "sad": "I'm sorry to hear that. Can you tell me more about what's been weighing on you?",
    "happy": "That sounds wonderful! What part of it made you happiest?",
    "angry": "I understand why that would be frustrating. What happened next?",
    "neutral": "Thanks for sharing. Could you tell me a bit more about it?",
}


class ResponseGenerator(Protocol):
    def generate(self, prompt: str, record: UtteranceRecord) -> str: ...


@dataclass
class TemplateResponseGenerator:
    """Deterministic fixture: one fixed continuation per emotion label."""

    responses: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_EMOTION_RESPONSES))

    def generate(self, prompt: str, record: UtteranceRecord) -> str:
        if record.emotion_cat is None:
            raise ValueError(f"record {record.utt_id} has no emotion label")
        if record.emotion_cat not in self.responses:
            raise ValueError(f"no template for emotion {record.emotion_cat!r}")
        return self.responses[record.emotion_cat]


@dataclass
class HttpResponseGenerator:
    """POSTs {prompt, utt_id} to an external model endpoint, expects {text}."""

    url: str
    timeout: float = 30.0

    def generate(self, prompt: str, record: UtteranceRecord) -> str:
        reply = requests.post(
            self.url, json={"prompt": prompt, "utt_id": record.utt_id}, timeout=self.timeout
        )
        reply.raise_for_status()
        return str(reply.json()["text"])


@dataclass
class CallableGenerator:
    """Wrap a plain function (prompt, record) -> str as a generator."""

    fn: Callable[[str, UtteranceRecord], str]

    def generate(self, prompt: str, record: UtteranceRecord) -> str:
        return self.fn(prompt, record)
