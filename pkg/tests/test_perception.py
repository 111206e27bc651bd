"""Perception gateway: captions, paradigm latency constants, normalization."""

from __future__ import annotations

import pytest

from dualtrack.config import EngineConfig
from dualtrack.errors import ValidityError
from dualtrack.perception import (
    ModalityPayload,
    PerceptionGateway,
    caption_stub,
)
from dualtrack.sim import Scheduler


def gateway(mode="decoupled") -> PerceptionGateway:
    return PerceptionGateway(EngineConfig(perception_mode=mode))


def test_caption_stub_template_identity():
    assert caption_stub({"subject": "user", "action": "waving"}) == "user waving"
    assert caption_stub({"subject": "user", "action": "reading",
                         "environment": "kitchen"}) == "user reading in kitchen"


def test_empty_descriptor_empty_caption_zero_latency():
    assert caption_stub({}) == ""
    payloads = [ModalityPayload("video", [{}])]
    assert gateway().turn_latency_ms(payloads) == 0.0


def test_decoupled_paradigm_charges_480ms_per_turn():
    payloads = [
        ModalityPayload("text", "hello"),
        ModalityPayload("video", [{"subject": "user", "action": "waving"},
                                  {"subject": "user", "action": "smiling"}]),
    ]
    assert gateway("decoupled").turn_latency_ms(payloads) == 480.0


def test_monolithic_paradigm_charges_2100ms_for_same_input():
    payloads = [ModalityPayload("video", [{"subject": "user", "action": "waving"}])]
    assert gateway("monolithic").turn_latency_ms(payloads) == 2100.0


def test_text_only_turn_charges_nothing():
    assert gateway().turn_latency_ms([ModalityPayload("text", "hi")]) == 0.0


def test_normalize_text_only():
    req = gateway().normalize([ModalityPayload("text", "hi")], "s1")
    assert req.utterance == "hi"
    assert req.visual_tags == []


def test_normalize_fuses_audio_and_video_tags():
    payloads = [
        ModalityPayload("audio", "Exhausted... Plan a trip"),
        ModalityPayload("video", [{"subject": "user", "action": "slumped posture"}]),
    ]
    req = gateway().normalize(payloads, "s1", now_ms=42.0)
    assert req.utterance == "Exhausted... Plan a trip"  # preserved verbatim
    assert req.visual_tags == ["slumped posture"]
    assert req.origin_timestamps == {"audio": 42.0, "video": 42.0}


def test_duplicate_tags_across_frames_are_unique():
    frames = [{"action": "waving"}, {"action": "waving"}, {"action": "nodding"}]
    req = gateway().normalize([ModalityPayload("text", "hi"),
                               ModalityPayload("video", frames)], "s1")
    assert req.visual_tags == ["waving", "nodding"]


def test_all_empty_payloads_invalid_turn():
    with pytest.raises(ValidityError):
        gateway().normalize([ModalityPayload("video", [{"action": "waving"}])], "s1")
    with pytest.raises(ValidityError):
        gateway().normalize([], "s1")


def test_normalize_is_pure_and_replay_stable():
    payloads = [
        ModalityPayload("audio", "look at this"),
        ModalityPayload("video", [{"action": "pointing", "object": "whiteboard"}]),
    ]
    gw = gateway()
    first = gw.normalize(payloads, "s1", now_ms=1.0)
    second = gw.normalize(payloads, "s1", now_ms=1.0)
    assert first == second


def test_normalize_proc_charges_latency_to_virtual_clock():
    sched = Scheduler()
    gw = gateway()
    payloads = [ModalityPayload("text", "hi"),
                ModalityPayload("video", [{"action": "waving"}])]
    task = sched.spawn(gw.normalize_proc(payloads, "s1"))
    sched.run_until_idle()
    assert sched.now == 480.0
    assert task.value.utterance == "hi"


def test_payload_wire_parsing():
    payload = ModalityPayload.from_obj({"modality": "text", "data": "hello"})
    assert payload.modality == "text"
    with pytest.raises(ValidityError):
        ModalityPayload.from_obj({"modality": "smell", "data": "?"})
    with pytest.raises(ValidityError):
        ModalityPayload.from_obj({"modality": "text", "data": "   "})
