import json
import threading

import numpy as np
import pytest

from seqextract import wire
from seqextract.oracle import Oracle, QueryBudget

from stubs import transition_model


@pytest.fixture
def served():
    servers = []

    def start(oracle):
        srv = wire.serve_wire(oracle)
        servers.append(srv)
        return srv.server_address

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


def test_wire_matches_in_process(served):
    model = transition_model(40, 2)
    host, port = served(Oracle(model))
    local = Oracle(model)
    rng = np.random.default_rng(0)
    c = wire.WireClient(host, port)
    for _ in range(100):
        p = rng.integers(0, 40, size=int(rng.integers(1, 10))).tolist()
        assert c.topk(p, 10) == list(local.query_topk(p, 10).items)
    c.close()


def test_malformed_line_keeps_connection(served):
    host, port = served(Oracle(transition_model(5)))
    c = wire.WireClient(host, port)
    r = c.send_raw(b"{not json\n")
    assert r["ok"] is False and r["error"] == "bad_request"
    assert c.topk([1], 2)
    r = c.request({"op": "topk", "seq": "abc", "k": 2})
    assert r["error"] == "bad_request"
    r = c.request({"op": "nope"})
    assert r["error"] == "bad_request"
    r = c.request({"op": "topk", "seq": [], "k": 2})
    assert r["error"] == "empty_prefix"
    c.close()


def test_oversized_line(served):
    host, port = served(Oracle(transition_model(5)))
    c = wire.WireClient(host, port)
    r = c.send_raw(b"[" + b"1," * (wire.MAX_LINE // 2) + b"1]\n")
    assert r["error"] == "line_too_long"
    assert c.topk([0], 1)
    c.close()


def test_token_flow_over_wire(served):
    host, port = served(Oracle(transition_model(6), QueryBudget(1, None, "per-sequence")))
    c = wire.WireClient(host, port)
    t = c.open()
    assert len(c.topk([1, 2], 3, token=t)) == 3
    c.close_sequence(t)
    with pytest.raises(wire.WireError) as e:
        c.topk([1, 2, 3], 3, token=t)
    assert e.value.code == "invalid_token"
    with pytest.raises(wire.WireError) as e:
        c.open()
    assert e.value.code == "budget_exhausted"
    c.close()


def test_two_clients_share_budget_of_ten(served):
    host, port = served(Oracle(transition_model(30), QueryBudget(10, None, "per-call"), cache=False))
    results = []
    lock = threading.Lock()

    def client(offset):
        c = wire.WireClient(host, port)
        for i in range(10):
            r = c.request({"op": "topk", "seq": [offset + i], "k": 3})
            with lock:
                results.append(r)
        c.close()

    threads = [threading.Thread(target=client, args=(o,)) for o in (0, 10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(r["ok"] for r in results) == 10
    assert all(r["error"] == "budget_exhausted" for r in results if not r["ok"])


def test_parse_address(monkeypatch):
    monkeypatch.delenv(wire.BIND_ENV, raising=False)
    assert wire.parse_address(None) == ("127.0.0.1", 7878)
    assert wire.parse_address("0.0.0.0:9000") == ("0.0.0.0", 9000)
    monkeypatch.setenv(wire.BIND_ENV, "localhost:1234")
    assert wire.parse_address(None) == ("localhost", 1234)


def test_responses_are_single_json_lines(served):
    host, port = served(Oracle(transition_model(5)))
    c = wire.WireClient(host, port)
    c.sock.sendall(b'{"op":"topk","seq":[1],"k":2}\n{"op":"topk","seq":[2],"k":2}\n')
    a, b = json.loads(c.rfile.readline()), json.loads(c.rfile.readline())
    assert a["ok"] and b["ok"]
    c.close()
