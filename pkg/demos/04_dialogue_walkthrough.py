"""Walk a student through the six-phase lesson with threshold-based routing.

High-confidence change-topic signals navigate immediately; mid-confidence
ones get a confirmation question first. This demo scripts the classifier so
both paths are visible without a trained model.
"""

from intentgate import (
    DialogueState,
    Intent,
    IntentPrediction,
    Reply,
    ThresholdPolicy,
    handle_turn,
    load_default_phase_scripts,
)
from intentgate.dialogue import PhaseScriptReplies


class ScriptedConfidence:
    """Classifier returning a scripted (intent, confidence) per turn."""

    label = "walkthrough"

    def __init__(self, outputs):
        self.outputs = list(outputs)

    def classify(self, context, text):
        intent, confidence = self.outputs.pop(0)
        return IntentPrediction(intent=intent, confidence=confidence, latency_seconds=0.001)


phases = load_default_phase_scripts()
replies = PhaseScriptReplies(phases)
policy = ThresholdPolicy(act_threshold=0.75, confirm_threshold=0.5)

C, K = Intent.CONTINUE, Intent.CHANGE_TOPIC
classifier = ScriptedConfidence(
    [
        (C, 0.05),  # "yes" -> keep teaching
        (C, 0.10),  # "100yrs" -> keep teaching
        (K, 0.60),  # "can we do sums instead" -> mid confidence, confirm first
        # (confirmation answer is parsed, not classified)
        (K, 0.95),  # "I want to stop" -> act immediately
    ]
)

state = DialogueState(conversation_id="demo")
print(f"tutor> {phases[0].description}\n")

for student_says in ["yes", "100yrs", "can we do sums instead", "no", "I want to stop"]:
    state, outcome = handle_turn(state, student_says, classifier, replies, policy)
    print(f"student> {student_says}")
    if isinstance(outcome, Reply):
        print(f"tutor>   {outcome.text}")
    else:
        print(f"*** navigation event: {outcome.kind.value} ***")
    print(f"         (phase {state.phase_index}, pending_confirmation={state.pending_confirmation})\n")

print(f"history recorded {len(state.history)} chat messages")
