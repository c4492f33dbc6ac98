"""Acceptance suite: one test per exit criterion, at its stated tolerance.

Each criterion prints a `[acceptance] <name>: PASS/FAIL` line (visible with
pytest -s) and enforces its runtime budget. Everything runs hermetically:
no network beyond the loopback interface.
"""

from __future__ import annotations

import random
import statistics
import threading
import time
from contextlib import contextmanager

import pytest
import requests

from intentgate.backends import ScriptedMockBackend, RuleBasedMockBackend, reply_signals_exit
from intentgate.base import IntentPrediction
from intentgate.bench import (
    ConfusionMatrix,
    clustered_bootstrap,
    evaluate,
    metrics_from_confusion,
    render_report,
    roc_auc,
)
from intentgate.corpus import (
    Dataset,
    LabeledMessage,
    compute_agreement,
    generate_synthetic_corpus,
    split_dataset,
)
from intentgate.dialogue import (
    CONFIRMATION_QUESTION,
    DialogueState,
    Navigation,
    NavigationKind,
    Reply,
    ThresholdPolicy,
    handle_turn,
)
from intentgate.features import fit_tfidf, transform_many
from intentgate.forest import (
    ForestClassifier,
    ForestParams,
    ModelBundle,
    classify,
    fit_forest,
    tune,
)
from intentgate.service import IntentGateService, make_server
from intentgate.dialogue import PhaseScriptReplies, load_default_phase_scripts
from .conftest import C, K
from .oracles import (
    allpairs_auc,
    enumerate_cluster_bootstrap,
    kappa_oracle,
    metrics_oracle,
    tfidf_dense_oracle,
)
from .test_bench import record


@contextmanager
def criterion(name: str, budget_seconds: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[acceptance] {name}: FAIL")
        raise
    elapsed = time.perf_counter() - start
    status = "PASS" if elapsed < budget_seconds else "FAIL (over budget)"
    print(f"[acceptance] {name}: {status} ({elapsed:.2f}s, budget {budget_seconds:.0f}s)")
    assert elapsed < budget_seconds, f"{name} exceeded {budget_seconds}s budget"


def test_metrics_oracle_equivalence():
    with criterion("metrics oracle equivalence (10,000 matrices, 1e-12)", 5.0):
        result = metrics_from_confusion(ConfusionMatrix(tp=5, fp=4, fn=7, tn=146))
        assert round(result.change_precision, 4) == 0.5556
        assert round(result.change_recall, 4) == 0.4167
        assert f"{result.change_precision:.2f}" == "0.56"
        assert f"{result.change_recall:.2f}" == "0.42"
        rng = random.Random(20240806)
        checked = 0
        while checked < 10_000:
            tp, fp, fn, tn = (rng.randint(0, 60) for _ in range(4))
            if tp + fp + fn + tn == 0:
                continue
            checked += 1
            got = metrics_from_confusion(ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn))
            expected = metrics_oracle(tp, fp, fn, tn)
            for key, value in expected.items():
                assert abs(getattr(got, key) - value) <= 1e-12


def test_kappa_oracle_equivalence():
    with criterion("kappa oracle equivalence (1,000 pair sets, 1e-12)", 1.0):
        hand = compute_agreement([(C, C), (C, K), (K, K), (K, K)])
        assert abs(hand.kappa - 0.5) <= 1e-12
        rng = random.Random(17)
        checked = 0
        while checked < 1000:
            n = rng.randint(2, 50)
            pairs = [
                (C if rng.random() < 0.6 else K, C if rng.random() < 0.6 else K)
                for _ in range(n)
            ]
            marginals_a = {a for a, _ in pairs}
            marginals_b = {b for _, b in pairs}
            if len(marginals_a) == 1 and marginals_a == marginals_b:
                continue
            checked += 1
            expected_po, expected_kappa = kappa_oracle(pairs)
            report = compute_agreement(pairs)
            assert abs(report.percent_agreement - expected_po) <= 1e-12
            assert abs(report.kappa - expected_kappa) <= 1e-12


def test_tfidf_brute_force_equivalence():
    with criterion("TF-IDF brute-force equivalence (1e-9 elementwise)", 1.0):
        rng = random.Random(7)
        words = [f"t{i}" for i in range(10)]
        for _ in range(25):
            corpus = [
                " ".join(rng.choice(words) for _ in range(rng.randint(1, 7)))
                for _ in range(rng.randint(1, 10))
            ]
            ngram_max = rng.choice([1, 2])
            model = fit_tfidf(corpus, ngram_range=(1, ngram_max))
            from intentgate.features import transform

            _, rows = tfidf_dense_oracle(corpus, corpus, ngram_max, l2=True)
            for text, expected in zip(corpus, rows):
                got = transform(model, text).to_dense()
                assert len(got) == len(expected)
                assert all(abs(a - b) <= 1e-9 for a, b in zip(got, expected))


@pytest.fixture(scope="module")
def paper_scale_corpus() -> Dataset:
    return generate_synthetic_corpus(806, 0.0856, seed=1)


@pytest.fixture(scope="module")
def trained_bundle(paper_scale_corpus) -> ModelBundle:
    split = split_dataset(paper_scale_corpus, (0.6, 0.2, 0.2), seed=7, grouped=True)
    train = paper_scale_corpus.subset(split.train)
    texts = [m.text for m in train]
    tfidf = fit_tfidf(texts)
    forest = fit_forest(
        transform_many(tfidf, texts),
        [m.label for m in train],
        ForestParams(n_trees=200, seed=3),
    )
    return ModelBundle(tfidf=tfidf, forest=forest, threshold=0.5)


def test_local_classify_latency(trained_bundle):
    with criterion("forest classify median latency < 0.01 s (1,000 warm calls)", 30.0):
        probe_messages = ["i want to stop", "yes", "tell me more", "can u solve math question 4 me"]
        for text in probe_messages:  # warm-up, untimed
            classify(trained_bundle.forest, trained_bundle.tfidf, text)
        latencies = []
        for i in range(1000):
            prediction = classify(
                trained_bundle.forest, trained_bundle.tfidf, probe_messages[i % 4]
            )
            latencies.append(prediction.latency_seconds)
        median = statistics.median(latencies)
        print(f"  median classify latency: {median * 1000:.3f} ms")
        assert median < 0.01


def test_synthetic_corpus_learnability(paper_scale_corpus):
    with criterion("tuned forest reaches test macro-F1 >= 0.85 (budget 25)", 60.0):
        positives = sum(1 for m in paper_scale_corpus if m.label is K)
        assert positives == 69
        split = split_dataset(paper_scale_corpus, (0.6, 0.2, 0.2), seed=7, grouped=True)
        train = paper_scale_corpus.subset(split.train)
        val = paper_scale_corpus.subset(split.validation)
        test = paper_scale_corpus.subset(split.test)
        tfidf = fit_tfidf([m.text for m in train])
        X_train = transform_many(tfidf, [m.text for m in train])
        X_val = transform_many(tfidf, [m.text for m in val])
        result = tune(
            (X_train, [m.label for m in train]),
            (X_val, [m.label for m in val]),
            budget=25,
            seed=11,
        )
        forest = fit_forest(X_train, [m.label for m in train], result.params)
        bundle = ModelBundle(tfidf=tfidf, forest=forest, threshold=0.5)
        run = evaluate(ForestClassifier(bundle), test, warmup=False)
        print(f"  tuned test macro-F1: {run.result.macro_f1:.4f}")
        assert run.result.macro_f1 >= 0.85


SENTINEL_TABLE = [
    ("<exit>", True),
    (" <exit> ", True),
    ("<EXIT>", True),
    ("<Exit>", True),
    ("Okay. <EXIT>", True),
    ("sure, <exit>", True),
    ("<exit>.", True),
    ("prefix <exit> suffix", True),
    ("\n\t<exit>\n", True),
    ("exit", False),
    ("< exit >", False),
    ("<exlt>", False),
    ("ex it", False),
    ("no thanks", False),
    ("", False),
    ("   ", False),
]


def test_sentinel_and_tool_call_parsing_tables():
    with criterion("sentinel/tool-call parsing tables (100%)", 1.0):
        for reply, expected in SENTINEL_TABLE:
            assert reply_signals_exit(reply) is expected, repr(reply)
            backend = ScriptedMockBackend([reply if reply.strip() else "..."])
            # empty strings are placeholders; classify only non-empty variants
            if reply.strip():
                got = backend.classify((), "anything")
                assert (got.intent is K) is expected, repr(reply)
        tool_backend = ScriptedMockBackend([("tool", "change_topic"), "plain text"])
        assert tool_backend.classify((), "x").intent is K
        assert tool_backend.classify((), "x").intent is C
        from intentgate.backends import UnknownToolInvoked

        with pytest.raises(UnknownToolInvoked):
            ScriptedMockBackend([("tool", "delete_account")]).classify((), "x")


class _SequenceClassifier:
    def __init__(self, predictions):
        self.predictions = list(predictions)
        self.cursor = 0

    label = "sequence"

    def classify(self, context, text):
        intent, confidence = self.predictions[self.cursor % len(self.predictions)]
        self.cursor += 1
        return IntentPrediction(
            intent=intent, confidence=confidence, latency_seconds=0.0001, raw=""
        )


def _echo(state, message, target, prediction):
    return f"phase {target}"


def test_dialogue_properties():
    with criterion("dialogue routing properties", 5.0):
        policy = ThresholdPolicy(0.75, 0.5)

        # (a) all-Continue classifier: exactly 6 turns to completion
        state = DialogueState(conversation_id="a")
        clf = _SequenceClassifier([(C, 0.0)])
        outcomes = []
        for _ in range(6):
            state, outcome = handle_turn(state, "yes", clf, _echo, policy)
            outcomes.append(outcome)
        assert outcomes[-1] == Navigation(NavigationKind.CONVERSATION_COMPLETE)
        assert all(isinstance(o, Reply) for o in outcomes[:5])
        assert state.completed

        # (b) Navigation never advances the phase
        state = DialogueState(conversation_id="b", phase_index=3)
        state, outcome = handle_turn(
            state, "stop", _SequenceClassifier([(K, 0.99)]), _echo, policy
        )
        assert isinstance(outcome, Navigation)
        assert state.phase_index == 3

        # (c) confirmation flow honors the one-retry budget
        state = DialogueState(conversation_id="c")
        state, outcome = handle_turn(
            state, "stop?", _SequenceClassifier([(K, 0.6)]), _echo, policy
        )
        assert outcome == Reply(CONFIRMATION_QUESTION) and state.pending_confirmation
        state, outcome = handle_turn(state, "???", _SequenceClassifier([(C, 0)]), _echo, policy)
        assert outcome == Reply(CONFIRMATION_QUESTION) and state.confirmation_retries_used == 1
        state, outcome = handle_turn(state, "???", _SequenceClassifier([(C, 0)]), _echo, policy)
        assert outcome == Reply("phase 1") and not state.pending_confirmation

        # (d) tau monotonicity over 1,000 random confidence sequences
        rng = random.Random(1234)
        for _ in range(1000):
            tau_high = rng.uniform(0.4, 1.0)
            tau_low_act = rng.uniform(0.2, tau_high)
            confirm = rng.uniform(0.0, min(tau_low_act, 0.2))
            sequence = [
                (K if rng.random() < 0.5 else C, rng.random()) for _ in range(6)
            ]
            state_hi = DialogueState(conversation_id="hi")
            state_lo = DialogueState(conversation_id="lo")
            clf_hi = _SequenceClassifier(sequence)
            clf_lo = _SequenceClassifier(sequence)
            for _ in range(6):
                if state_hi.completed or state_lo.completed:
                    break
                state_hi, outcome_hi = handle_turn(
                    state_hi, "m", clf_hi, _echo, ThresholdPolicy(tau_high, confirm)
                )
                state_lo, outcome_lo = handle_turn(
                    state_lo, "m", clf_lo, _echo, ThresholdPolicy(tau_low_act, confirm)
                )
                if outcome_hi != outcome_lo:
                    # states diverged; the only legal first divergence keeps
                    # the lower threshold at least as eager to navigate
                    assert not (
                        isinstance(outcome_hi, Navigation) and isinstance(outcome_lo, Reply)
                    )
                    break


def test_clustered_bootstrap_enumeration():
    with criterion("clustered bootstrap matches exhaustive enumeration", 1.0):
        records = [
            record("m1", "a", K, K),
            record("m2", "a", C, K),
            record("m3", "b", K, C),
            record("m4", "b", C, C),
            record("m5", "b", C, C),
        ]
        convs = [r.conversation_id for r in records]
        report = clustered_bootstrap(records, convs, exhaustive=True)
        expected_mean, expected_se = enumerate_cluster_bootstrap(
            [[(K, K), (C, K)], [(K, C), (C, C), (C, C)]]
        )
        assert report.macro_f1_mean == expected_mean
        assert report.macro_f1_se == expected_se
        sampled_a = clustered_bootstrap(records, convs, n_resamples=400, seed=5)
        sampled_b = clustered_bootstrap(records, convs, n_resamples=400, seed=5)
        assert sampled_a == sampled_b


def test_roc_auc_oracle():
    with criterion("ROC AUC matches all-pairs oracle (1,000 sets, 1e-12)", 2.0):
        rng = random.Random(55)
        for _ in range(1000):
            n = rng.randint(2, 40)
            gold = [K if rng.random() < 0.35 else C for _ in range(n)]
            if len(set(gold)) < 2:
                gold[0] = K if gold[0] is C else C
            scores = [rng.choice([0.2, 0.5, 0.8, rng.random()]) for _ in range(n)]
            assert abs(roc_auc(scores, gold) - allpairs_auc(scores, gold)) <= 1e-12


def test_hermetic_bench_end_to_end():
    with criterion("hermetic bench reproduces oracle metrics and report", 5.0):
        # construct a 162-message test set realizing tp=5, fn=7, fp=4, tn=146
        cells = [(K, K)] * 5 + [(K, C)] * 7 + [(C, K)] * 4 + [(C, C)] * 146
        rng = random.Random(2)
        rng.shuffle(cells)
        messages = []
        script = []
        for i, (gold, predicted) in enumerate(cells):
            messages.append(
                LabeledMessage(
                    conversation_id=f"conv-{i // 4}",
                    message_id=f"m{i}",
                    text="student message",
                    label=gold,
                )
            )
            script.append("<exit>" if predicted is K else "carrying on")
        dataset = Dataset(messages=tuple(messages))
        backend = ScriptedMockBackend(script, label="scripted_mock")
        run = evaluate(backend, dataset, warmup=False)
        assert run.confusion == ConfusionMatrix(tp=5, fp=4, fn=7, tn=146)
        expected = metrics_oracle(5, 4, 7, 146)
        for key, value in expected.items():
            assert getattr(run.result, key) == value, key
        report = render_report([run.result], format="markdown")
        lines = report.strip().splitlines()
        header = [c.strip() for c in lines[0].strip("|").split("|")]
        assert header == [
            "Model",
            "F1",
            "Precision",
            "Recall",
            "Inference Time (s)",
            "Precision (Change)",
            "Recall (Change)",
        ]
        assert "| scripted_mock | 0.72 | 0.75 | 0.70 |" in lines[2]
        assert "| 0.56 | 0.42 |" in lines[2]


def test_service_contract():
    with criterion("service concurrency + 6-turn completion", 10.0):
        phases = load_default_phase_scripts()

        def start(delay: float):
            service = IntentGateService(
                classifier=RuleBasedMockBackend(artificial_latency_seconds=delay),
                reply_generator=PhaseScriptReplies(phases),
                phases=phases,
            )
            server = make_server(service, port=0)
            threading.Thread(target=server.serve_forever, daemon=True).start()
            return server, f"http://127.0.0.1:{server.server_address[1]}"

        # interleaving: same conversation serialized, different ones parallel
        server, base = start(delay=0.3)
        try:
            results: list[dict] = []

            def turn(conv):
                response = requests.post(
                    f"{base}/turn", json={"conversation_id": conv, "text": "ok"}, timeout=10
                )
                results.append(response.json())

            threads = [threading.Thread(target=turn, args=("same",)) for _ in range(2)]
            t0 = time.perf_counter()
            [t.start() for t in threads]
            [t.join() for t in threads]
            same_elapsed = time.perf_counter() - t0
            assert same_elapsed >= 0.6, "same-conversation turns were not serialized"
            assert sorted(r["phase_index"] for r in results) == [2, 3]

            results.clear()
            threads = [
                threading.Thread(target=turn, args=(f"par-{i}",)) for i in range(2)
            ]
            t0 = time.perf_counter()
            [t.start() for t in threads]
            [t.join() for t in threads]
            cross_elapsed = time.perf_counter() - t0
            assert cross_elapsed < 0.6, "cross-conversation turns did not overlap"
            assert [r["phase_index"] for r in results] == [2, 2]
        finally:
            server.shutdown()
            server.server_close()

        # six Continue turns on a fresh instance complete the conversation
        server, base = start(delay=0.0)
        try:
            payload = None
            for _ in range(6):
                payload = requests.post(
                    f"{base}/turn", json={"conversation_id": "full", "text": "yes"}, timeout=5
                ).json()
            assert payload["type"] == "navigation"
            assert payload["navigation_kind"] == "conversation_complete"
        finally:
            server.shutdown()
            server.server_close()
