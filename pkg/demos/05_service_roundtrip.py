"""Stand up the HTTP service in-process and drive a lesson over the wire.

POST /turn routes student messages through the dialogue engine, POST
/classify exposes the raw classifier, GET /health reports the active
backend. The same endpoints serve any backend; here the deterministic mock
stands in so the demo needs no model file or remote API.
"""

import threading

import requests

from intentgate.backends import RuleBasedMockBackend
from intentgate.dialogue import PhaseScriptReplies, load_default_phase_scripts
from intentgate.service import IntentGateService, make_server

phases = load_default_phase_scripts()
service = IntentGateService(
    classifier=RuleBasedMockBackend(),
    reply_generator=PhaseScriptReplies(phases),
    phases=phases,
)
server = make_server(service, port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"
print(f"service listening at {base}")

print("health:", requests.get(f"{base}/health", timeout=5).json())

probe = requests.post(
    f"{base}/classify", json={"conversation_id": "s1", "text": "<exit>"}, timeout=5
).json()
print("classify '<exit>':", probe)

print("\nsix on-topic turns:")
for i in range(6):
    payload = requests.post(
        f"{base}/turn", json={"conversation_id": "s1", "text": "yes"}, timeout=5
    ).json()
    if payload["type"] == "reply":
        print(f"  turn {i + 1}: phase {payload['phase_index']}: {payload['text'][:60]}...")
    else:
        print(f"  turn {i + 1}: navigation -> {payload['navigation_kind']}")

service.begin_shutdown()
server.shutdown()
server.server_close()
print("\nserver drained and closed")
