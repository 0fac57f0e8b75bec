"""
Mock Chat Completions Server
Flask app speaking the chat-completions wire format, for exercising the MLLM
client offline: scripted failures, echo replies, key checks and in-flight
request counters.
"""

import hashlib
import base64
import threading
import time
from collections import deque
from typing import Deque, Dict, List, Optional, Tuple, Union

from flask import Flask, jsonify, request
from werkzeug.serving import make_server

Scripted = Tuple[int, Union[str, Dict]]


class MockState:
    """Shared state behind the mock endpoint"""

    def __init__(self, reply: str = "ANSWER: A", api_key: Optional[str] = None, delay: float = 0.0):
        self.reply = reply
        self.api_key = api_key
        self.delay = delay
        self.echo = False
        self.script: Deque[Scripted] = deque()
        self.requests: List[Dict] = []
        self.hits = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self.lock = threading.Lock()

    def push(self, status: int, body: Union[str, Dict] = ""):
        """Queue one scripted response; scripted entries are consumed before the default reply"""
        self.script.append((status, body))

    @property
    def request_count(self) -> int:
        return len(self.requests)


def _completion(model: str, text: str) -> Dict:
    return {
        "id": "chatcmpl-mock",
        "object": "chat.completion",
        "created": 0,
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 10, "completion_tokens": len(text.split()), "total_tokens": 10 + len(text.split())},
    }


def _echo(body: Dict) -> str:
    """Prompt text plus the sha256 of every image payload, as received"""
    lines = []
    for message in body.get("messages", []):
        content = message.get("content")
        parts = content if isinstance(content, list) else [{"type": "text", "text": content}]
        for part in parts:
            if part.get("type") == "text":
                lines.append(part["text"])
            elif part.get("type") == "image_url":
                url = part["image_url"]["url"]
                payload = base64.b64decode(url.split(",", 1)[1])
                lines.append("IMAGE " + hashlib.sha256(payload).hexdigest())
    return "\n".join(lines)


def create_app(state: MockState) -> Flask:
    app = Flask(__name__)

    @app.route('/v1/chat/completions', methods=['POST'])
    def chat_completions():
        with state.lock:
            state.hits += 1
            state.in_flight += 1
            state.max_in_flight = max(state.max_in_flight, state.in_flight)
        try:
            if state.api_key is not None and request.headers.get('Authorization') != f"Bearer {state.api_key}":
                return jsonify({'error': {'message': 'Invalid API key', 'type': 'invalid_request_error'}}), 401

            body = request.get_json(silent=True) or {}
            with state.lock:
                state.requests.append(body)
                scripted = state.script.popleft() if state.script else None
            if state.delay:
                time.sleep(state.delay)

            model = body.get('model', 'mock')
            if scripted is not None:
                status, payload = scripted
                if status != 200:
                    return jsonify({'error': {'message': f'mock status {status}', 'type': 'server_error'}}), status
                if isinstance(payload, dict):
                    return jsonify(payload), 200
                return jsonify(_completion(model, payload)), 200

            text = _echo(body) if state.echo else state.reply
            return jsonify(_completion(model, text))
        finally:
            with state.lock:
                state.in_flight -= 1

    @app.route('/health', methods=['GET'])
    def health():
        return jsonify({'status': 'ok', 'requests': state.request_count})

    return app


class MockServer:
    """Runs the mock app on a loopback port in a background thread"""

    def __init__(self, state: Optional[MockState] = None):
        self.state = state or MockState()
        self._server = make_server('127.0.0.1', 0, create_app(self.state), threaded=True)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_port}/v1"

    def start(self) -> "MockServer":
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


if __name__ == '__main__':
    with MockServer() as server:
        print(f"✅ Mock chat endpoint at {server.base_url}")
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            pass
