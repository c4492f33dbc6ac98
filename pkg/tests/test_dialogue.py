"""Turn routing, confirmation flow, phase scripts, state serialization."""

from __future__ import annotations

import json
import random
from typing import Sequence

import pytest

from intentgate.base import ChatMessage, Intent, IntentGateError, IntentPrediction
from intentgate.dialogue import (
    CONFIRMATION_QUESTION,
    ConversationCompleted,
    DialogueState,
    MalformedScript,
    Navigation,
    NavigationKind,
    PhaseScriptReplies,
    Reply,
    ThresholdPolicy,
    WrongPhaseCount,
    handle_turn,
    load_default_phase_scripts,
    load_phase_scripts,
    parse_confirmation,
    reuse_backend_reply,
    state_from_dict,
    state_to_dict,
)

C = Intent.CONTINUE
K = Intent.CHANGE_TOPIC


class FixedClassifier:
    """Returns a fixed (intent, confidence) forever."""

    label = "fixed"

    def __init__(self, intent: Intent, confidence: float | None = None, raw: str = ""):
        self.intent = intent
        self.confidence = confidence
        self.raw = raw

    def classify(self, context: Sequence[ChatMessage], text: str) -> IntentPrediction:
        return IntentPrediction(
            intent=self.intent,
            confidence=self.confidence,
            latency_seconds=0.001,
            raw=self.raw,
        )


class FailingClassifier:
    label = "failing"

    def classify(self, context, text):
        raise IntentGateError("backend on fire")


def echo_generator(state, message, target_phase, prediction):
    return f"phase {target_phase} content"


POLICY = ThresholdPolicy(act_threshold=0.75, confirm_threshold=0.5)


def fresh_state() -> DialogueState:
    return DialogueState(conversation_id="conv-1")


class TestParseConfirmation:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("Okay", "yes"),
            ("yh", "yes"),
            ("  YES  ", "yes"),
            ("keep going", "no"),
            ("Nope", "no"),
            ("what?", "unclear"),
            ("maybe", "unclear"),
            ("", "unclear"),
        ],
    )
    def test_lexicon(self, text, expected):
        assert parse_confirmation(text) == expected


class TestHandleTurn:
    def test_high_confidence_navigates(self):
        state, outcome = handle_turn(
            fresh_state(), "stop", FixedClassifier(K, 0.95), echo_generator, POLICY
        )
        assert outcome == Navigation(NavigationKind.CHANGE_TOPIC_REQUESTED)
        assert state.phase_index == 1  # navigation never advances

    def test_absent_confidence_navigates(self):
        _, outcome = handle_turn(
            fresh_state(), "stop", FixedClassifier(K, None), echo_generator, POLICY
        )
        assert outcome == Navigation(NavigationKind.CHANGE_TOPIC_REQUESTED)

    def test_mid_confidence_asks_confirmation(self):
        state, outcome = handle_turn(
            fresh_state(), "hmm stop?", FixedClassifier(K, 0.6), echo_generator, POLICY
        )
        assert outcome == Reply(CONFIRMATION_QUESTION)
        assert state.pending_confirmation
        assert state.phase_index == 1
        assert state.history[-1].content == CONFIRMATION_QUESTION

    def test_low_confidence_continues(self):
        state, outcome = handle_turn(
            fresh_state(), "er", FixedClassifier(K, 0.3), echo_generator, POLICY
        )
        assert outcome == Reply("phase 2 content")
        assert state.phase_index == 2
        assert not state.pending_confirmation

    def test_continue_advances_phase(self):
        state, outcome = handle_turn(
            fresh_state(), "yes", FixedClassifier(C, 0.1), echo_generator, POLICY
        )
        assert outcome == Reply("phase 2 content")
        assert state.phase_index == 2

    def test_confirmation_yes_slang_navigates(self):
        state, _ = handle_turn(
            fresh_state(), "stop?", FixedClassifier(K, 0.6), echo_generator, POLICY
        )
        state, outcome = handle_turn(
            state, "yh", FixedClassifier(C, 0.0), echo_generator, POLICY
        )
        assert outcome == Navigation(NavigationKind.CHANGE_TOPIC_REQUESTED)
        assert not state.pending_confirmation
        assert state.phase_index == 1

    def test_confirmation_no_resumes_same_phase(self):
        state, _ = handle_turn(
            fresh_state(), "stop?", FixedClassifier(K, 0.6), echo_generator, POLICY
        )
        state, outcome = handle_turn(
            state, "keep going", FixedClassifier(K, 0.99), echo_generator, POLICY
        )
        # the confirmation answer is parsed, not classified
        assert outcome == Reply("phase 1 content")
        assert state.phase_index == 1
        assert not state.pending_confirmation

    def test_confirmation_unclear_retries_once_then_resumes(self):
        state, _ = handle_turn(
            fresh_state(), "stop?", FixedClassifier(K, 0.6), echo_generator, POLICY
        )
        state, outcome = handle_turn(
            state, "what?", FixedClassifier(C, 0.0), echo_generator, POLICY
        )
        assert outcome == Reply(CONFIRMATION_QUESTION)
        assert state.pending_confirmation
        assert state.confirmation_retries_used == 1
        state, outcome = handle_turn(
            state, "banana", FixedClassifier(C, 0.0), echo_generator, POLICY
        )
        assert outcome == Reply("phase 1 content")
        assert not state.pending_confirmation
        assert state.confirmation_retries_used == 0

    def test_six_continues_complete_conversation(self):
        state = fresh_state()
        classifier = FixedClassifier(C, 0.0)
        outcomes = []
        for turn in range(6):
            state, outcome = handle_turn(state, "yes", classifier, echo_generator, POLICY)
            outcomes.append(outcome)
        assert outcomes[:5] == [Reply(f"phase {i} content") for i in range(2, 7)]
        assert outcomes[5] == Navigation(NavigationKind.CONVERSATION_COMPLETE)
        assert state.completed
        assert state.phase_index == 6

    def test_completed_state_rejects_turns(self):
        state = fresh_state()
        state.completed = True
        with pytest.raises(ConversationCompleted):
            handle_turn(state, "hi", FixedClassifier(C), echo_generator, POLICY)

    def test_history_grows_by_two_and_input_not_mutated(self):
        state = fresh_state()
        classifier = FixedClassifier(K, 0.6)
        new_state, _ = handle_turn(state, "stop?", classifier, echo_generator, POLICY)
        assert len(state.history) == 0
        assert len(new_state.history) == 2
        newer, _ = handle_turn(new_state, "what?", classifier, echo_generator, POLICY)
        assert len(newer.history) == 4

    def test_classifier_failure_fails_open(self, caplog):
        with caplog.at_level("WARNING"):
            state, outcome = handle_turn(
                fresh_state(), "hello", FailingClassifier(), echo_generator, POLICY
            )
        assert outcome == Reply("phase 2 content")
        assert state.phase_index == 2
        assert "backend on fire" in caplog.text

    def test_reply_generator_errors_surface(self):
        def broken(state, message, target_phase, prediction):
            raise RuntimeError("generator broke")

        with pytest.raises(RuntimeError):
            handle_turn(fresh_state(), "yes", FixedClassifier(C, 0.0), broken, POLICY)

    def test_phase_never_decreases_and_nav_never_advances(self):
        rng = random.Random(5)
        state = fresh_state()
        while not state.completed:
            confidence = rng.random()
            before = state.phase_index
            state, outcome = handle_turn(
                state,
                "msg",
                FixedClassifier(K if rng.random() < 0.3 else C, confidence),
                echo_generator,
                POLICY,
            )
            if isinstance(outcome, Navigation):
                assert state.phase_index == before
                if outcome.kind is NavigationKind.CHANGE_TOPIC_REQUESTED:
                    break
            else:
                assert state.phase_index >= before

    def test_equal_thresholds_make_confirmation_unreachable(self):
        policy = ThresholdPolicy(act_threshold=0.6, confirm_threshold=0.6)
        rng = random.Random(9)
        for _ in range(200):
            state, outcome = handle_turn(
                fresh_state(),
                "msg",
                FixedClassifier(K, rng.random()),
                echo_generator,
                policy,
            )
            assert not state.pending_confirmation
            assert outcome != Reply(CONFIRMATION_QUESTION)

    def test_lowering_act_threshold_monotone(self):
        rng = random.Random(31)
        for _ in range(1000):
            confidence = rng.random()
            tau_high = rng.uniform(0.3, 1.0)
            tau_lower = rng.uniform(0.3, tau_high)
            classifier = FixedClassifier(K, confidence)
            _, outcome_high = handle_turn(
                fresh_state(), "m", classifier, echo_generator,
                ThresholdPolicy(tau_high, min(0.3, tau_high)),
            )
            _, outcome_low = handle_turn(
                fresh_state(), "m", classifier, echo_generator,
                ThresholdPolicy(tau_lower, min(0.3, tau_lower)),
            )
            if isinstance(outcome_high, Navigation):
                assert isinstance(outcome_low, Navigation)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ThresholdPolicy(act_threshold=0.4, confirm_threshold=0.6)


class TestPhaseScripts:
    def test_bundled_default(self):
        phases = load_default_phase_scripts()
        assert len(phases) == 6
        assert [p.index for p in phases] == [1, 2, 3, 4, 5, 6]
        assert "How old do you think maths is?" in phases[1].description
        assert "yh" in phases[0].example_responses

    def test_five_phases_wrong_count(self, tmp_path):
        phases = [
            {"index": i, "description": f"d{i}", "example_responses": []} for i in range(1, 6)
        ]
        path = tmp_path / "phases.json"
        path.write_text(json.dumps(phases))
        with pytest.raises(WrongPhaseCount):
            load_phase_scripts(path)

    def test_duplicate_index_malformed(self, tmp_path):
        phases = [
            {"index": i, "description": f"d{i}", "example_responses": []}
            for i in (1, 2, 3, 3, 5, 6)
        ]
        path = tmp_path / "phases.json"
        path.write_text(json.dumps(phases))
        with pytest.raises(MalformedScript):
            load_phase_scripts(path)

    def test_missing_field_malformed(self, tmp_path):
        phases = [{"index": i, "description": f"d{i}"} for i in range(1, 7)]
        path = tmp_path / "phases.json"
        path.write_text(json.dumps(phases))
        with pytest.raises(MalformedScript):
            load_phase_scripts(path)

    def test_phase_script_replies(self):
        phases = load_default_phase_scripts()
        generator = PhaseScriptReplies(phases)
        text = generator(fresh_state(), "yes", 2, None)
        assert "How old do you think maths is?" in text

    def test_reuse_backend_reply(self):
        phases = load_default_phase_scripts()
        generator = reuse_backend_reply(PhaseScriptReplies(phases))
        prediction = IntentPrediction(
            intent=C, confidence=None, latency_seconds=0.1, raw="model says hi"
        )
        assert generator(fresh_state(), "x", 2, prediction) == "model says hi"
        assert "How old" in generator(fresh_state(), "x", 2, None)


class TestStateSerialization:
    def test_round_trip(self):
        state = fresh_state()
        state, _ = handle_turn(state, "yes", FixedClassifier(C, 0.0), echo_generator, POLICY)
        state, _ = handle_turn(state, "stop?", FixedClassifier(K, 0.6), echo_generator, POLICY)
        clone = state_from_dict(json.loads(json.dumps(state_to_dict(state))))
        assert clone == state
