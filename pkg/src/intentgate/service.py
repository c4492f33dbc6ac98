"""HTTP service: POST /classify, POST /turn, GET /health.

Turns within one conversation are serialized behind a per-conversation lock
while different conversations proceed in parallel (one thread per request).
Session state lives in memory, with an optional JSON snapshot on shutdown.
"""

from __future__ import annotations

import json
import logging
import signal
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence

from .backends import SENTINEL_INSTRUCTION
from .base import ChatMessage, Classifier, IntentGateError
from .config import AppConfig, build_classifier
from .dialogue import (
    ConversationCompleted,
    DialogueState,
    PhaseScript,
    PhaseScriptReplies,
    Reply,
    ReplyGenerator,
    ThresholdPolicy,
    handle_turn,
    load_default_phase_scripts,
    load_phase_scripts,
    reuse_backend_reply,
    state_from_dict,
    state_to_dict,
)

logger = logging.getLogger(__name__)


class BadRequest(IntentGateError):
    pass


def lesson_system_prompt(phases: Sequence[PhaseScript]) -> str:
    """System message for sentinel-style backends: lesson framing plus the exit rule."""
    opening = phases[0].description
    return (
        "You are a friendly tutor guiding a student through a short lesson on "
        f"the history of mathematics. Begin with: {opening} "
        "Keep replies short and encouraging.\n\n" + SENTINEL_INSTRUCTION
    )


class IntentGateService:
    """Request-level logic shared by the HTTP handler and in-process tests."""

    def __init__(
        self,
        classifier: Classifier,
        reply_generator: ReplyGenerator,
        phases: Sequence[PhaseScript],
        policy: ThresholdPolicy = ThresholdPolicy(),
        model_format: str | None = None,
        snapshot_path: str | None = None,
        initial_history: Sequence[ChatMessage] = (),
    ):
        self.classifier = classifier
        self.reply_generator = reply_generator
        self.phases = list(phases)
        self.policy = policy
        self.model_format = model_format
        self.snapshot_path = snapshot_path
        self.initial_history = list(initial_history)
        self.shutting_down = False
        self._sessions: dict[str, DialogueState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _lock_for(self, conversation_id: str) -> threading.Lock:
        with self._registry_lock:
            lock = self._locks.get(conversation_id)
            if lock is None:
                lock = threading.Lock()
                self._locks[conversation_id] = lock
            return lock

    def _state_for(self, conversation_id: str) -> DialogueState:
        state = self._sessions.get(conversation_id)
        if state is None:
            state = DialogueState(
                conversation_id=conversation_id,
                history=list(self.initial_history),
            )
            self._sessions[conversation_id] = state
        return state

    def health(self) -> dict:
        return {
            "status": "ok",
            "backend": getattr(self.classifier, "label", type(self.classifier).__name__),
            "model_format": self.model_format,
        }

    def classify(self, conversation_id: str, text: str) -> dict:
        with self._registry_lock:
            state = self._sessions.get(conversation_id)
        context = tuple(state.history) if state is not None else ()
        prediction = self.classifier.classify(context, text)
        return {
            "intent": prediction.intent.value,
            "confidence": prediction.confidence,
            "latency_seconds": prediction.latency_seconds,
        }

    def turn(self, conversation_id: str, text: str) -> dict:
        lock = self._lock_for(conversation_id)
        with lock:
            state = self._state_for(conversation_id)
            new_state, outcome = handle_turn(
                state, text, self.classifier, self.reply_generator, self.policy
            )
            self._sessions[conversation_id] = new_state
            if isinstance(outcome, Reply):
                return {
                    "type": "reply",
                    "text": outcome.text,
                    "navigation_kind": None,
                    "phase_index": new_state.phase_index,
                }
            return {
                "type": "navigation",
                "text": None,
                "navigation_kind": outcome.kind.value,
                "phase_index": new_state.phase_index,
            }

    def begin_shutdown(self) -> None:
        self.shutting_down = True

    def write_snapshot(self) -> None:
        if not self.snapshot_path:
            return
        with self._registry_lock:
            payload = {
                conv: state_to_dict(state) for conv, state in self._sessions.items()
            }
        with open(self.snapshot_path, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")

    def load_snapshot(self, path: str | Path) -> None:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
        with self._registry_lock:
            for conv, raw in payload.items():
                self._sessions[conv] = state_from_dict(raw)


class _Handler(BaseHTTPRequestHandler):
    service: IntentGateService  # set by make_server

    def log_message(self, format: str, *args) -> None:
        # request bodies and keys stay out of logs; method+path+status only
        logger.debug("%s %s", self.address_string(), format % args)

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_request(self) -> tuple[str, str]:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b""
        try:
            payload = json.loads(raw)
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise BadRequest("body is not valid JSON") from None
        if not isinstance(payload, dict):
            raise BadRequest("body must be a JSON object")
        conversation_id = payload.get("conversation_id")
        text = payload.get("text")
        if not isinstance(conversation_id, str) or not conversation_id:
            raise BadRequest("conversation_id must be a non-empty string")
        if not isinstance(text, str) or not text.strip():
            raise BadRequest("text must be a non-empty string")
        return conversation_id, text

    def do_GET(self) -> None:
        if self.service.shutting_down:
            self._send_json(503, {"error": "shutting down"})
            return
        if self.path == "/health":
            self._send_json(200, self.service.health())
            return
        self._send_json(404, {"error": f"unknown path {self.path}"})

    def do_POST(self) -> None:
        if self.service.shutting_down:
            self._send_json(503, {"error": "shutting down"})
            return
        if self.path not in ("/classify", "/turn"):
            self._send_json(404, {"error": f"unknown path {self.path}"})
            return
        try:
            conversation_id, text = self._read_request()
        except BadRequest as exc:
            self._send_json(400, {"error": str(exc)})
            return
        try:
            if self.path == "/classify":
                self._send_json(200, self.service.classify(conversation_id, text))
            else:
                self._send_json(200, self.service.turn(conversation_id, text))
        except ConversationCompleted:
            self._send_json(422, {"error": "conversation already completed"})
        except IntentGateError as exc:
            self._send_json(502, {"error": f"{type(exc).__name__}: {exc}"})


class IntentGateServer(ThreadingHTTPServer):
    # non-daemon threads so shutdown waits for in-flight turns to finish
    daemon_threads = False
    block_on_close = True


def make_server(
    service: IntentGateService, host: str = "127.0.0.1", port: int = 0
) -> IntentGateServer:
    """Bind an HTTP server for the service; port 0 picks a free port."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return IntentGateServer((host, port), handler)


def build_service(config: AppConfig) -> IntentGateService:
    """Assemble classifier, reply generator, and phases from configuration."""
    classifier, model_format = build_classifier(config)
    if config.phase_script_path:
        phases = load_phase_scripts(config.phase_script_path)
    else:
        phases = load_default_phase_scripts()
    scripted = PhaseScriptReplies(phases)
    initial_history: list[ChatMessage] = []
    if config.backend in ("sentinel", "function_call"):
        reply_generator = reuse_backend_reply(scripted)
        if config.backend == "sentinel":
            initial_history.append(
                ChatMessage(role="system", content=lesson_system_prompt(phases))
            )
    else:
        reply_generator = scripted
    return IntentGateService(
        classifier=classifier,
        reply_generator=reply_generator,
        phases=phases,
        policy=config.policy,
        model_format=model_format,
        snapshot_path=config.snapshot_path,
        initial_history=initial_history,
    )


def run(config: AppConfig) -> None:
    """Serve until SIGINT/SIGTERM; completes in-flight turns, snapshots sessions."""
    service = build_service(config)
    server = make_server(service, config.host, config.port)
    host, port = server.server_address[:2]
    logger.info("serving on %s:%s with backend %s", host, port, config.backend)
    print(f"intentgate service listening on http://{host}:{port}", flush=True)
    def _terminate(signum, frame):
        raise KeyboardInterrupt

    try:
        signal.signal(signal.SIGTERM, _terminate)
    except ValueError:
        pass  # not the main thread (embedded use); rely on server.shutdown()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.begin_shutdown()
        server.shutdown()
        server.server_close()
        service.write_snapshot()
