"""Newline-delimited JSON over TCP in front of an :class:`~seqextract.oracle.Oracle`.

Requests (one JSON object per line)::

    {"op": "topk", "seq": [ids], "k": int, "token": str?, "ledger": str?}
    {"op": "open"}
    {"op": "close", "token": str}

Responses: ``{"ok": true, "items": [...]}`` / ``{"ok": true, "token": ...}`` /
``{"ok": true}`` or ``{"ok": false, "error": code, "detail": str}``.
"""

import json
import logging
import os
import socket
import socketserver
import threading

from .oracle import BudgetExhausted, EmptyPrefix, InvalidToken

log = logging.getLogger(__name__)

MAX_LINE = 64 * 1024
BIND_ENV = "SEQEXTRACT_ORACLE_ADDR"


class WireError(RuntimeError):
    def __init__(self, code, detail):
        self.code, self.detail = code, detail
        super().__init__(f"{code}: {detail}")


def parse_address(addr, default_port=7878):
    addr = addr or os.environ.get(BIND_ENV, "")
    if not addr:
        return "127.0.0.1", default_port
    host, _, port = addr.rpartition(":")
    return (host or "127.0.0.1"), int(port)


def handle_request(oracle, req):
    """Dispatch one decoded request; returns the response dict."""
    if not isinstance(req, dict) or "op" not in req:
        return {"ok": False, "error": "bad_request", "detail": "expected an object with an 'op' field"}
    op = req["op"]
    try:
        if op == "topk":
            seq, k = req.get("seq"), req.get("k")
            if not isinstance(seq, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in seq):
                return {"ok": False, "error": "bad_request", "detail": "'seq' must be a list of integers"}
            if not isinstance(k, int) or isinstance(k, bool):
                return {"ok": False, "error": "bad_request", "detail": "'k' must be an integer"}
            if seq and (min(seq) < 0 or max(seq) >= oracle.n_items):
                return {"ok": False, "error": "bad_request", "detail": "item id out of range"}
            lst = oracle.query_topk(seq, k, ledger=req.get("ledger", "attack"), token=req.get("token"))
            return {"ok": True, "items": list(lst.items)}
        if op == "open":
            return {"ok": True, "token": oracle.open_sequence()}
        if op == "close":
            oracle.close_sequence(req.get("token"))
            return {"ok": True}
        return {"ok": False, "error": "bad_request", "detail": f"unknown op {op!r}"}
    except BudgetExhausted as e:
        return {"ok": False, "error": "budget_exhausted", "detail": str(e)}
    except EmptyPrefix as e:
        return {"ok": False, "error": "empty_prefix", "detail": str(e)}
    except InvalidToken as e:
        return {"ok": False, "error": "invalid_token", "detail": str(e)}
    except ValueError as e:
        return {"ok": False, "error": "bad_request", "detail": str(e)}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        oracle = self.server.oracle
        while True:
            line = self.rfile.readline(MAX_LINE + 1)
            if not line:
                return
            if len(line) > MAX_LINE and not line.endswith(b"\n"):
                # drain the rest of the oversized line
                while line and not line.endswith(b"\n"):
                    line = self.rfile.readline(MAX_LINE + 1)
                self._send({"ok": False, "error": "line_too_long", "detail": f"request exceeds {MAX_LINE} bytes"})
                continue
            if not line.strip():
                continue
            try:
                req = json.loads(line)
            except (json.JSONDecodeError, UnicodeDecodeError) as e:
                self._send({"ok": False, "error": "bad_request", "detail": f"malformed JSON: {e}"})
                continue
            self._send(handle_request(oracle, req))

    def _send(self, obj):
        self.wfile.write((json.dumps(obj, separators=(",", ":")) + "\n").encode())
        self.wfile.flush()


class OracleServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, oracle, address):
        self.oracle = oracle
        super().__init__(address, _Handler)


def serve_wire(oracle, address=("127.0.0.1", 0), background=True):
    """Start the service; returns the server (``server.server_address`` has the port)."""
    server = OracleServer(oracle, address)
    if background:
        t = threading.Thread(target=server.serve_forever, daemon=True)
        t.start()
        server.thread = t
    else:
        try:
            server.serve_forever()
        finally:
            server.server_close()
    return server


class WireClient:
    def __init__(self, host, port, timeout=30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")

    def request(self, obj):
        self.sock.sendall((json.dumps(obj) + "\n").encode())
        return self._read()

    def send_raw(self, data):
        self.sock.sendall(data)
        return self._read()

    def _read(self):
        line = self.rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def _checked(self, obj):
        resp = self.request(obj)
        if not resp.get("ok"):
            raise WireError(resp.get("error"), resp.get("detail"))
        return resp

    def topk(self, seq, k, token=None, ledger="attack"):
        req = {"op": "topk", "seq": [int(x) for x in seq], "k": int(k), "ledger": ledger}
        if token is not None:
            req["token"] = token
        return self._checked(req)["items"]

    def open(self):
        return self._checked({"op": "open"})["token"]

    def close_sequence(self, token):
        self._checked({"op": "close", "token": token})

    def close(self):
        try:
            self.rfile.close()
        finally:
            self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
