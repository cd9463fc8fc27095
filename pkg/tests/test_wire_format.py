"""Conformance tests for the OpenAI-compatible chat-completions client.

A stub HTTP server records every request the agent makes so the exact wire
shape (path, auth header, body fields, tool_call_id echo) can be asserted.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from netdeploy.agent import (AgentConfig, BackendTransportError, HttpBackend,
                             MalformedReplyError, PlanningSession,
                             ToolRegistry, register_tools, run_react_loop)
from netdeploy.scenario import load_scenario


def assistant_reply(content=None, tool_calls=None):
    message = {"role": "assistant", "content": content}
    if tool_calls:
        message["tool_calls"] = tool_calls
    return {"choices": [{"message": message}]}


class StubServer:
    """Threaded chat-completions endpoint replaying canned responses."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []            # (path, headers-dict, body-dict)
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                outer.requests.append(
                    (self.path, dict(self.headers), body))
                if not outer.responses:
                    status, doc = 500, {"error": "no scripted response"}
                else:
                    status, doc = outer.responses.pop(0)
                payload = json.dumps(doc).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever,
                                       daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"


class TestRequestShape:
    def test_body_headers_and_path(self):
        with StubServer([(200, assistant_reply(content="done"))]) as srv:
            backend = HttpBackend(srv.url, "test-model", "secret-key",
                                  temperature=0.0)
            tools = [{"type": "function",
                      "function": {"name": "t", "description": "d",
                                   "parameters": {"type": "object",
                                                  "properties": {}}}}]
            messages = [{"role": "system", "content": "s"},
                        {"role": "user", "content": "u"}]
            reply = backend.complete(messages, tools)
        assert reply.content == "done" and reply.tool_calls == []
        path, headers, body = srv.requests[0]
        assert path == "/v1/chat/completions"
        assert headers["Authorization"] == "Bearer secret-key"
        assert headers["Content-Type"] == "application/json"
        assert body["model"] == "test-model"
        assert body["temperature"] == 0.0
        assert body["messages"] == messages
        assert body["tools"] == tools

    def test_endpoint_url_already_has_path(self):
        with StubServer([(200, assistant_reply(content="ok"))]) as srv:
            backend = HttpBackend(srv.url + "/v1/chat/completions", "m", "k")
            backend.complete([], [])
        assert srv.requests[0][0] == "/v1/chat/completions"

    def test_tool_calls_parsed(self):
        calls = [{"id": "call_9", "type": "function",
                  "function": {"name": "network_analysis",
                               "arguments": json.dumps(
                                   {"frequency_hz": 5e9,
                                    "bandwidth_hz": 1e7})}}]
        with StubServer([(200, assistant_reply(tool_calls=calls))]) as srv:
            reply = HttpBackend(srv.url, "m", "k").complete([], [])
        call = reply.tool_calls[0]
        assert call.call_id == "call_9"
        assert call.tool_name == "network_analysis"
        assert call.arguments == {"frequency_hz": 5e9, "bandwidth_hz": 1e7}

    def test_http_error_raises_transport(self):
        with StubServer([(503, {"error": "overloaded"})]) as srv:
            with pytest.raises(BackendTransportError, match="503"):
                HttpBackend(srv.url, "m", "k").complete([], [])

    def test_missing_choices_is_malformed(self):
        with StubServer([(200, {"id": "x"})]) as srv:
            with pytest.raises(MalformedReplyError):
                HttpBackend(srv.url, "m", "k").complete([], [])


class TestLoopOverHttp:
    def test_tool_call_id_echoed_in_tool_message(self, synthetic_scenario,
                                                 tmp_path, monkeypatch):
        monkeypatch.setenv("NETDEPLOY_API_KEY", "k")
        responses = [
            (200, assistant_reply(
                content="collect data first",
                tool_calls=[{"id": "call_abc", "type": "function",
                             "function": {"name": "geographic_data_collection",
                                          "arguments": "{}"}}])),
            (200, assistant_reply(content="that is everything")),
        ]
        scenario = load_scenario(synthetic_scenario)
        ws = str(tmp_path / "ws")
        session = PlanningSession(scenario, ws)
        registry = register_tools(ToolRegistry(), session)
        with StubServer(responses) as srv:
            cfg = AgentConfig(backend="http_endpoint", endpoint_url=srv.url,
                              model_name="test-model", max_steps=5)
            answer, plan, transcript, status = run_react_loop(
                "survey the region", cfg, registry, ws)
        assert status == "final" and answer == "that is everything"
        assert len(srv.requests) == 2
        # second request replays the assistant tool_calls message followed by
        # a tool-role message echoing the same call id
        msgs = srv.requests[1][2]["messages"]
        assert msgs[0]["role"] == "system"
        assistant = next(m for m in msgs if m["role"] == "assistant")
        assert assistant["tool_calls"][0]["id"] == "call_abc"
        tool_msg = next(m for m in msgs if m["role"] == "tool")
        assert tool_msg["tool_call_id"] == "call_abc"
        obs = json.loads(tool_msg["content"])
        assert obs["num_demand_nodes"] > 0

    def test_tools_advertised_on_every_request(self, synthetic_scenario,
                                               tmp_path, monkeypatch):
        monkeypatch.setenv("NETDEPLOY_API_KEY", "k")
        responses = [(200, assistant_reply(content="nothing to do"))]
        scenario = load_scenario(synthetic_scenario)
        ws = str(tmp_path / "ws")
        session = PlanningSession(scenario, ws)
        registry = register_tools(ToolRegistry(), session)
        with StubServer(responses) as srv:
            cfg = AgentConfig(backend="http_endpoint", endpoint_url=srv.url,
                              model_name="test-model", max_steps=3)
            run_react_loop("noop", cfg, registry, ws)
        body = srv.requests[0][2]
        names = {t["function"]["name"] for t in body["tools"]}
        assert names == {"geographic_data_collection", "network_analysis",
                         "network_optimization", "verify_plan"}
