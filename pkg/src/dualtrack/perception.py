"""Perception gateway: converts raw per-turn modality payloads into one
normalized textual request.

Real ASR/VLM sit behind the Perceptor interface; the deterministic stub
composes captions from frame tag maps and charges the configured paradigm's
latency constant to the virtual clock (caption-then-reason vs monolithic
video-in/text-out).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Generator, Iterable, Mapping, Protocol

from .config import EngineConfig
from .errors import ValidityError

_TAG_KEYS = ("action", "actions", "object", "objects", "environment")


@dataclass
class ModalityPayload:
    modality: str  # text | audio | video
    data: str | list[dict]

    @classmethod
    def from_obj(cls, obj: Mapping) -> "ModalityPayload":
        modality = obj.get("modality")
        if modality not in ("text", "audio", "video"):
            raise ValidityError(f"unknown modality: {modality!r}")
        data = obj.get("data", "" if modality != "video" else [])
        if modality == "text" and not str(data).strip():
            raise ValidityError("text payload must be non-empty")
        return cls(modality=modality, data=data)


@dataclass
class RequestObject:
    session_id: str
    utterance: str
    visual_tags: list[str] = field(default_factory=list)
    origin_timestamps: dict[str, float] = field(default_factory=dict)


def caption_stub(frame_descriptor: Mapping[str, str]) -> str:
    """Deterministic one-line caption from a subject/action/environment tag map."""
    if not frame_descriptor:
        return ""
    parts = []
    if frame_descriptor.get("subject"):
        parts.append(str(frame_descriptor["subject"]))
    if frame_descriptor.get("action"):
        parts.append(str(frame_descriptor["action"]))
    caption = " ".join(parts)
    if frame_descriptor.get("environment"):
        env = frame_descriptor["environment"]
        caption = f"{caption} in {env}" if caption else f"in {env}"
    return caption


def frame_tags(frame_descriptor: Mapping[str, str]) -> list[str]:
    tags = []
    for key in _TAG_KEYS:
        value = frame_descriptor.get(key)
        if isinstance(value, str) and value:
            tags.append(value)
        elif isinstance(value, (list, tuple)):
            tags.extend(str(v) for v in value if v)
    return tags


class Perceptor(Protocol):
    def caption(self, frame_descriptor: Mapping[str, str]) -> str: ...


class StubPerceptor:
    """Test/reference perceptor: pure caption template."""

    def caption(self, frame_descriptor: Mapping[str, str]) -> str:
        return caption_stub(frame_descriptor)


class HttpPerceptor:
    """Optional external perceptor: POSTs the payload, expects {"caption": ...}."""

    def __init__(self, url: str, client=None):
        import httpx

        self._url = url
        self._client = client or httpx.Client(timeout=10.0)

    def caption(self, frame_descriptor: Mapping[str, str]) -> str:
        resp = self._client.post(self._url, json=dict(frame_descriptor))
        resp.raise_for_status()
        return str(resp.json()["caption"])


class PerceptionGateway:
    """Stateless; safe for unlimited concurrent calls."""

    def __init__(self, config: EngineConfig, perceptor: Perceptor | None = None):
        self._config = config
        self._perceptor = perceptor or StubPerceptor()

    def turn_latency_ms(self, payloads: Iterable[ModalityPayload]) -> float:
        """Perception latency charged for this turn: the configured paradigm
        constant when any non-empty video frame is present, else zero."""
        for payload in payloads:
            if payload.modality == "video":
                frames = payload.data if isinstance(payload.data, list) else []
                if any(frames):
                    return self._config.perception_latency_ms()
        return 0.0

    def normalize(self, payloads: list[ModalityPayload], session_id: str,
                  now_ms: float = 0.0) -> RequestObject:
        """Fuse payloads into a RequestObject. Pure function of its inputs."""
        if not payloads:
            raise ValidityError("turn carries no payloads")
        texts: list[str] = []
        tags: list[str] = []
        stamps: dict[str, float] = {}
        for payload in payloads:
            stamps[payload.modality] = now_ms
            if payload.modality in ("text", "audio"):
                if isinstance(payload.data, str) and payload.data.strip():
                    texts.append(payload.data.strip())
            elif payload.modality == "video":
                frames = payload.data if isinstance(payload.data, list) else []
                for frame in frames:
                    self._perceptor.caption(frame)
                    for tag in frame_tags(frame):
                        if tag not in tags:
                            tags.append(tag)
        utterance = " ".join(texts)
        if not utterance:
            raise ValidityError("invalid turn: no usable text in any payload")
        return RequestObject(
            session_id=session_id,
            utterance=utterance,
            visual_tags=tags,
            origin_timestamps=stamps,
        )

    def normalize_proc(self, payloads: list[ModalityPayload], session_id: str) -> Generator:
        """Process form: charges the per-turn perception latency, then fuses."""
        latency = self.turn_latency_ms(payloads)
        if latency > 0:
            yield latency
        return self.normalize(payloads, session_id)
