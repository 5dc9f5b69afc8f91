import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from urllib.parse import parse_qs, urlsplit

import pytest

from bb84sim.bits import BitString
from bb84sim.randomness import RngSource


class ScriptedSource(RngSource):
    """Replays fixed bits, cycling; lets tests force specific random outcomes."""

    def __init__(self, bits):
        self.bits = [int(b) for b in bits]
        self.pos = 0

    def next_bits(self, n):
        out = [self.bits[(self.pos + i) % len(self.bits)] for i in range(n)]
        self.pos += n
        return BitString(out)


@pytest.fixture
def scripted():
    return ScriptedSource


class _QrngHandler(BaseHTTPRequestHandler):
    def do_GET(self):
        server = self.server
        query = parse_qs(urlsplit(self.path).query)
        server.requests.append(query)
        status, body = server.responder(query)
        payload = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def qrng_server():
    """Local HTTP stand-in for a hex-token QRNG; set .responder(query) -> (status, body)."""
    server = HTTPServer(("127.0.0.1", 0), _QrngHandler)
    server.requests = []
    server.responder = lambda q: (200, {"success": True, "data": ["ff"] * int(q["length"][0])})
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}/API/jsonI.php?type=hex16&size=1"
    yield server
    server.shutdown()
    server.server_close()
