"""Prompt templates and slot rendering.

Three templates drive the pipeline: emotion-conditioned continuation (used to
collect alignment targets), speech-conditioned continuation (the training and
inference prompt), and the five-option emotion identification prompt used for
recognition scoring. `<speech>` is never substituted with text; it survives
rendering as a positional marker for the embedding splice.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

SLOT_PATTERN = re.compile(r"<(emo|transcript|speech)>")

SER_OPTION_WORDS = ("neutral", "sad", "angry", "happy", "surprise")

STEP1_TEXT = (
    "Continue the following sentence that reflects a <emo> emotion tone "
    "in a coherent style:<transcript>"
)
STEP2_TEXT = "Continue the following sentence that reflects a tone in a coherent style: <speech>"
SER_EVAL_TEXT = (
    "Please identify the emotion tone of the sentence provided below. "
    "Select from the following options: neutral, sad, angry, happy, or surprise.\n\n"
    "Sentence: <speech>"
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    def __post_init__(self):
        slots = set(SLOT_PATTERN.findall(self.text))
        if self.name == "continuation_step1":
            if not {"emo", "transcript"} <= slots or "speech" in slots:
                raise ValueError("continuation_step1 needs <emo> and <transcript>, no <speech>")
        elif self.name == "continuation_step2":
            if "speech" not in slots or "emo" in slots:
                raise ValueError("continuation_step2 needs <speech> and no <emo>")
        elif self.name == "ser_eval":
            if "speech" not in slots:
                raise ValueError("ser_eval needs <speech>")
            lowered = self.text.lower()
            for word in SER_OPTION_WORDS:
                if word not in lowered:
                    raise ValueError(f"ser_eval must list option word {word!r}")

    def slots(self) -> set[str]:
        return set(SLOT_PATTERN.findall(self.text))


TEMPLATES = {
    "continuation_step1": PromptTemplate("continuation_step1", STEP1_TEXT),
    "continuation_step2": PromptTemplate("continuation_step2", STEP2_TEXT),
    "ser_eval": PromptTemplate("ser_eval", SER_EVAL_TEXT),
}


def get_template(name: str) -> PromptTemplate:
    if name not in TEMPLATES:
        raise ValueError(f"unknown prompt template {name!r}")
    return TEMPLATES[name]


def render_prompt(template: PromptTemplate, slots: dict[str, str] | None = None) -> str:
    """Substitute every slot except <speech>, which stays as a marker."""
    slots = slots or {}
    out = template.text
    for slot in sorted(template.slots()):
        if slot == "speech":
            continue
        if slot not in slots:
            raise ValueError(f"<{slot}> unbound")
        out = out.replace(f"<{slot}>", slots[slot])
    return out
