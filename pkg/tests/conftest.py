"""Shared fixtures: tiny datasets, a scripted chat-completion HTTP mock."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from intentgate.base import Intent
from intentgate.corpus import Dataset, LabeledMessage

C = Intent.CONTINUE
K = Intent.CHANGE_TOPIC


def make_message(
    i: int,
    label: Intent = C,
    text: str | None = None,
    conversation: str | None = None,
) -> LabeledMessage:
    return LabeledMessage(
        conversation_id=conversation or f"conv-{i // 3}",
        message_id=f"m{i}",
        text=text or ("i want to stop" if label is K else "yes okay"),
        label=label,
    )


def make_dataset(labels: list[Intent], conversation_size: int = 3) -> Dataset:
    messages = [
        make_message(i, label, conversation=f"conv-{i // conversation_size}")
        for i, label in enumerate(labels)
    ]
    return Dataset(messages=tuple(messages))


class ChatMockServer(ThreadingHTTPServer):
    """Scripted OpenAI-style /chat/completions endpoint for transport tests."""

    daemon_threads = True

    def __init__(self, entries: list[dict], loop_last: bool = False):
        self.entries = entries
        self.loop_last = loop_last
        self.cursor = 0
        self.lock = threading.Lock()
        self.requests: list[dict] = []
        super().__init__(("127.0.0.1", 0), _ChatMockHandler)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server_address[1]}/v1/chat/completions"

    def next_entry(self) -> dict:
        with self.lock:
            if self.cursor >= len(self.entries):
                if self.loop_last and self.entries:
                    return self.entries[-1]
                return {"status": 500, "mode": "text", "content": "script exhausted"}
            entry = self.entries[self.cursor]
            self.cursor += 1
            return entry


class _ChatMockHandler(BaseHTTPRequestHandler):
    server: ChatMockServer

    def log_message(self, *args) -> None:
        pass

    def do_POST(self) -> None:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw)
        except json.JSONDecodeError:
            body = None
        self.server.requests.append(
            {"body": body, "authorization": self.headers.get("Authorization")}
        )
        entry = self.server.next_entry()
        delay = entry.get("delay", 0.0)
        if delay:
            time.sleep(delay)
        status = entry.get("status", 200)
        mode = entry.get("mode", "text")
        if mode == "raw_bytes":
            payload = entry["content"].encode("utf-8")
        elif mode == "tool":
            payload = json.dumps(
                {
                    "choices": [
                        {
                            "message": {
                                "role": "assistant",
                                "content": None,
                                "tool_calls": [
                                    {
                                        "id": "call-1",
                                        "type": "function",
                                        "function": {
                                            "name": entry.get("tool_name", "change_topic"),
                                            "arguments": "{}",
                                        },
                                    }
                                ],
                            }
                        }
                    ]
                }
            ).encode("utf-8")
        elif mode == "no_choices":
            payload = json.dumps({"object": "chat.completion"}).encode("utf-8")
        else:
            payload = json.dumps(
                {
                    "choices": [
                        {
                            "message": {
                                "role": "assistant",
                                "content": entry.get("content", "ok"),
                            }
                        }
                    ]
                }
            ).encode("utf-8")
        try:
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        except (BrokenPipeError, ConnectionResetError):
            pass  # client gave up (timeout tests)


@pytest.fixture
def chat_server():
    """Factory: chat_server(entries, loop_last=False) -> running mock server."""
    servers: list[ChatMockServer] = []

    def start(entries: list[dict], loop_last: bool = False) -> ChatMockServer:
        server = ChatMockServer(entries, loop_last=loop_last)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


@pytest.fixture
def no_backoff(monkeypatch):
    """Disable retry backoff sleeps so retry tests run instantly."""
    from intentgate import backends

    sleeps: list[float] = []
    monkeypatch.setattr(backends, "_sleep", sleeps.append)
    return sleeps
