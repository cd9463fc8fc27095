"""ReAct loop and function-calling protocol over the planning tools."""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import jsonschema
import requests

from . import pipeline
from .scenario import ScenarioConfig

CHAT_COMPLETIONS_PATH = "/v1/chat/completions"
TRANSPORT_RETRIES = 2


class AgentError(Exception):
    pass


class BackendTransportError(AgentError):
    """Connection failure or non-2xx response from the chat endpoint."""


class MalformedReplyError(AgentError):
    """Endpoint returned JSON that does not match the chat-completions shape."""


class ScriptExhaustedError(AgentError):
    """The scripted backend ran out of replies."""


class DuplicateToolError(AgentError):
    pass


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict

    def as_openai(self):
        return {"type": "function",
                "function": {"name": self.name,
                             "description": self.description,
                             "parameters": self.parameters}}


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    tool_name: str
    arguments: object   # dict, or the raw string when it failed to parse


@dataclass
class TranscriptStep:
    index: int
    thought: str
    action: ToolCall | None
    observation: object
    timestamp: float

    def to_dict(self):
        action = None
        if self.action is not None:
            action = {"call_id": self.action.call_id,
                      "tool_name": self.action.tool_name,
                      "arguments": self.action.arguments}
        return {"index": self.index, "thought": self.thought,
                "action": action, "observation": self.observation,
                "timestamp": self.timestamp}


@dataclass
class AgentConfig:
    max_steps: int = 20
    backend: str = "scripted"            # "http_endpoint" | "scripted"
    endpoint_url: str | None = None
    model_name: str | None = None
    api_key_env_var: str = "NETDEPLOY_API_KEY"
    temperature: float = 0.0
    timeout_s: float = 120.0
    script_path: str | None = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class AssistantReply:
    content: str | None
    tool_calls: list            # of ToolCall
    raw_message: dict           # appended verbatim to the history


# ---------------------------------------------------------------------------
# tool registry

class ToolRegistry:
    def __init__(self):
        self._tools = {}        # name -> (ToolSpec, callable)

    def register(self, spec: ToolSpec, fn):
        if spec.name in self._tools:
            raise DuplicateToolError(f"tool {spec.name!r} already registered")
        jsonschema.Draft7Validator.check_schema(spec.parameters)
        self._tools[spec.name] = (spec, fn)

    @property
    def specs(self):
        return [spec for spec, _ in self._tools.values()]

    def openai_tools(self):
        return [spec.as_openai() for spec in self.specs]

    def execute(self, call: ToolCall):
        """Run one tool call; every failure becomes an error observation."""
        if not isinstance(call.arguments, dict):
            return {"error": "malformed-arguments",
                    "detail": f"tool arguments are not a JSON object: "
                              f"{call.arguments!r}"}
        entry = self._tools.get(call.tool_name)
        if entry is None:
            return {"error": "unknown-tool",
                    "detail": f"no tool named {call.tool_name!r}; available: "
                              f"{sorted(self._tools)}"}
        spec, fn = entry
        validator = jsonschema.Draft7Validator(spec.parameters)
        errors = sorted(validator.iter_errors(call.arguments), key=str)
        if errors:
            e = errors[0]
            field_name = "/".join(str(p) for p in e.absolute_path)
            if not field_name and e.validator == "required":
                missing = [f for f in e.validator_value
                           if f not in call.arguments]
                field_name = missing[0] if missing else "?"
            return {"error": "schema-validation",
                    "detail": f"argument {field_name!r}: {e.message}"}
        try:
            return fn(**call.arguments)
        except pipeline.MissingArtifactError as exc:
            return {"error": "missing-artifact", "detail": str(exc)}
        except Exception as exc:
            return {"error": type(exc).__name__, "detail": str(exc)}


# ---------------------------------------------------------------------------
# planning tools

class PlanningSession:
    """Mutable scenario + workspace context shared by the planning tools."""

    def __init__(self, scenario: ScenarioConfig, workspace: str):
        self.scenario = scenario
        self.workspace = workspace
        os.makedirs(workspace, exist_ok=True)

    def _update(self, **changes):
        self.scenario = dataclasses.replace(self.scenario, **changes)


def register_tools(registry: ToolRegistry, session: PlanningSession) -> ToolRegistry:
    """Register the four planning tools against a session.

    Tool outputs are compact JSON summaries plus paths to the full artifacts
    so observations stay small.
    """

    def geographic_data_collection(lat_min=None, lat_max=None,
                                   lon_min=None, lon_max=None,
                                   aggregation_factor=None, min_users=None):
        region = session.scenario.region
        if None not in (lat_min, lat_max, lon_min, lon_max):
            from .geodata import Region
            region = Region(lat_min=lat_min, lat_max=lat_max,
                            lon_min=lon_min, lon_max=lon_max)
            session._update(region=region)
        if aggregation_factor is not None or min_users is not None:
            d = session.scenario.demand
            d = dataclasses.replace(
                d,
                aggregation_factor=aggregation_factor or d.aggregation_factor,
                min_users=d.min_users if min_users is None else min_users)
            session._update(demand=d)
        nodes, sites = pipeline.run_demand(session.scenario, session.workspace,
                                           region=region)
        return {"num_demand_nodes": len(nodes),
                "num_candidate_sites": len(sites),
                "total_users": sum(n.users for n in nodes),
                "demand_file": os.path.join(session.workspace, pipeline.DEMAND_FILE),
                "candidates_file": os.path.join(session.workspace,
                                                pipeline.CANDIDATES_FILE)}

    def network_analysis(frequency_hz, bandwidth_hz, tx_power_w=None):
        changes = {"frequency_hz": float(frequency_hz),
                   "bandwidth_hz": float(bandwidth_hz)}
        if tx_power_w is not None:
            changes["tx_power_w"] = float(tx_power_w)
        session._update(**changes)
        links = pipeline.run_links(session.scenario, session.workspace)
        feasible = sum(1 for l in links if l.feasible)
        return {"num_links": len(links), "num_feasible_links": feasible,
                "links_file": os.path.join(session.workspace, pipeline.LINKS_FILE)}

    def network_optimization(min_rate_bps, cost_hap=None, cost_tbs=None,
                             budget_units=None):
        changes = {"min_rate_bps": float(min_rate_bps)}
        sg = session.scenario.site_generation
        if cost_hap is not None or cost_tbs is not None:
            sg = dataclasses.replace(
                sg,
                cost_hap=sg.cost_hap if cost_hap is None else float(cost_hap),
                cost_tbs=sg.cost_tbs if cost_tbs is None else float(cost_tbs))
            changes["site_generation"] = sg
            changes["cost_hap"] = sg.cost_hap
            changes["cost_tbs"] = sg.cost_tbs
        if budget_units is not None:
            changes["budget_units"] = float(budget_units)
        session._update(**changes)
        _reprice_artifacts(session)
        pipeline._require(session.workspace, pipeline.LINKS_FILE,
                          "missing link matrix; run network_analysis first")
        plan = pipeline.run_optimize(session.scenario, session.workspace)
        return {"status": plan.status.value,
                "num_opened_sites": len(plan.opened_sites),
                "total_cost_units": plan.total_cost_units,
                "average_claimed_rate_bps": plan.average_claimed_rate_bps,
                "plan_file": os.path.join(session.workspace, pipeline.PLAN_FILE)}

    def verify_plan(plan_path=None):
        report = pipeline.run_verify(session.scenario, session.workspace,
                                     plan_path=plan_path)
        return {"average_verified_rate_bps": report.average_verified_rate_bps,
                "coverage_fraction": report.coverage_fraction,
                "total_cost_units": report.total_cost_units,
                "efficiency_bps_per_unit": report.efficiency_bps_per_unit,
                "num_violations": len(report.violations),
                "report_file": os.path.join(session.workspace,
                                            pipeline.VERIFY_FILE)}

    num = {"type": "number"}
    registry.register(ToolSpec(
        name="geographic_data_collection",
        description="Load population, terrain, and tower data for the target "
                    "region; extract demand nodes and generate candidate HAP "
                    "and TBS sites.",
        parameters={"type": "object",
                    "properties": {"lat_min": num, "lat_max": num,
                                   "lon_min": num, "lon_max": num,
                                   "aggregation_factor": {"type": "integer",
                                                          "minimum": 1},
                                   "min_users": num},
                    "required": []}), geographic_data_collection)
    registry.register(ToolSpec(
        name="network_analysis",
        description="Compute terrain-aware path loss, SNR, and spectral "
                    "efficiency for every demand-node/candidate-site link at "
                    "the given carrier frequency and channel bandwidth.",
        parameters={"type": "object",
                    "properties": {"frequency_hz": num, "bandwidth_hz": num,
                                   "tx_power_w": num},
                    "required": ["frequency_hz", "bandwidth_hz"]}),
        network_analysis)
    registry.register(ToolSpec(
        name="network_optimization",
        description="Solve for the cost-minimal set of sites to open and the "
                    "bandwidth allocation meeting every node's minimum rate.",
        parameters={"type": "object",
                    "properties": {"min_rate_bps": num, "cost_hap": num,
                                   "cost_tbs": num, "budget_units": num},
                    "required": ["min_rate_bps"]}), network_optimization)
    registry.register(ToolSpec(
        name="verify_plan",
        description="Independently recompute achieved per-node data rates for "
                    "a deployment plan from physics, never trusting claimed "
                    "numbers.",
        parameters={"type": "object",
                    "properties": {"plan_path": {"type": "string"}},
                    "required": []}), verify_plan)
    return registry


def _reprice_artifacts(session):
    """Propagate cost / rate overrides into already-extracted artifacts."""
    ws = session.workspace
    sc = session.scenario
    demand_path = os.path.join(ws, pipeline.DEMAND_FILE)
    if os.path.exists(demand_path):
        nodes = pipeline.nodes_from_json(pipeline._read_json(demand_path))
        updated = []
        for n in nodes:
            rate = sc.min_rate_bps * n.users ** sc.demand.rate_exponent
            updated.append(dataclasses.replace(n, required_rate_bps=rate))
        pipeline._write_json(demand_path, pipeline.nodes_to_json(updated))
    cand_path = os.path.join(ws, pipeline.CANDIDATES_FILE)
    if os.path.exists(cand_path):
        sites = pipeline.sites_from_json(pipeline._read_json(cand_path))
        sg = sc.site_generation
        updated = []
        for s in sites:
            if s.kind.value == "HAP":
                cost = sg.cost_hap
            elif s.from_existing_tower:
                cost = sg.cost_tbs * sg.tower_cost_multiplier
            else:
                cost = sg.cost_tbs
            updated.append(dataclasses.replace(s, cost_units=cost))
        pipeline._write_json(cand_path, pipeline.sites_to_json(updated))


# ---------------------------------------------------------------------------
# backends

class ScriptedBackend:
    """Replays a fixed JSON array of assistant replies; fails when exhausted."""

    def __init__(self, replies):
        self.replies = list(replies)
        self._cursor = 0
        self._call_counter = 0

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, messages, tools):
        if self._cursor >= len(self.replies):
            raise ScriptExhaustedError(
                f"script exhausted after {len(self.replies)} replies")
        reply = self.replies[self._cursor]
        self._cursor += 1
        calls = []
        raw_calls = []
        for tc in reply.get("tool_calls") or []:
            call_id = f"call_{self._call_counter}"
            self._call_counter += 1
            args = tc.get("arguments")
            if isinstance(args, str):
                raw_args = args
                try:
                    args = json.loads(args)
                except json.JSONDecodeError:
                    args = raw_args
            calls.append(ToolCall(call_id=call_id, tool_name=tc["name"],
                                  arguments=args))
            raw_calls.append({"id": call_id, "type": "function",
                              "function": {"name": tc["name"],
                                           "arguments": json.dumps(args)
                                           if isinstance(args, dict) else args}})
        raw = {"role": "assistant", "content": reply.get("content")}
        if raw_calls:
            raw["tool_calls"] = raw_calls
        return AssistantReply(content=reply.get("content"),
                              tool_calls=calls, raw_message=raw)


class HttpBackend:
    """OpenAI-compatible chat-completions client."""

    def __init__(self, endpoint_url, model_name, api_key, temperature=0.0,
                 timeout_s=120.0):
        url = endpoint_url.rstrip("/")
        if not url.endswith(CHAT_COMPLETIONS_PATH):
            url += CHAT_COMPLETIONS_PATH
        self.url = url
        self.model_name = model_name
        self.api_key = api_key
        self.temperature = temperature
        self.timeout_s = timeout_s

    def complete(self, messages, tools):
        body = {"model": self.model_name, "messages": messages,
                "temperature": self.temperature}
        if tools:
            body["tools"] = tools
        try:
            resp = requests.post(
                self.url, json=body, timeout=self.timeout_s,
                headers={"Authorization": f"Bearer {self.api_key}",
                         "Content-Type": "application/json"})
        except requests.RequestException as exc:
            raise BackendTransportError(f"request to {self.url} failed: {exc}")
        if not 200 <= resp.status_code < 300:
            raise BackendTransportError(
                f"{self.url} returned HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            doc = resp.json()
            message = doc["choices"][0]["message"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedReplyError(f"malformed chat-completions reply: {exc}")
        calls = []
        for tc in message.get("tool_calls") or []:
            try:
                call_id = tc["id"]
                name = tc["function"]["name"]
                raw_args = tc["function"]["arguments"]
            except (KeyError, TypeError) as exc:
                raise MalformedReplyError(f"malformed tool_calls entry: {exc}")
            try:
                args = json.loads(raw_args) if isinstance(raw_args, str) else raw_args
            except json.JSONDecodeError:
                args = raw_args   # surfaced as malformed-arguments observation
            calls.append(ToolCall(call_id=call_id, tool_name=name,
                                  arguments=args))
        return AssistantReply(content=message.get("content"),
                              tool_calls=calls, raw_message=message)


def make_backend(cfg: AgentConfig):
    if cfg.backend == "scripted":
        if not cfg.script_path:
            raise AgentError("scripted backend requires script_path")
        return ScriptedBackend.from_file(cfg.script_path)
    if cfg.backend == "http_endpoint":
        if not cfg.endpoint_url:
            raise AgentError("http_endpoint backend requires endpoint_url")
        api_key = os.environ.get(cfg.api_key_env_var)
        if api_key is None:
            raise BackendTransportError(
                f"API key environment variable {cfg.api_key_env_var!r} not set")
        return HttpBackend(cfg.endpoint_url, cfg.model_name, api_key,
                           temperature=cfg.temperature, timeout_s=cfg.timeout_s)
    raise AgentError(f"unknown backend {cfg.backend!r}")


def llm_complete(messages, tools, backend) -> AssistantReply:
    """One chat-completion exchange; transient transport failures are retried."""
    last = None
    for attempt in range(TRANSPORT_RETRIES + 1):
        try:
            return backend.complete(messages, tools)
        except BackendTransportError as exc:
            last = exc
    raise last


# ---------------------------------------------------------------------------
# ReAct loop

def system_prompt() -> str:
    path = os.path.join(os.path.dirname(__file__), "prompts", "system_prompt.txt")
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def run_react_loop(task: str, cfg: AgentConfig, registry: ToolRegistry,
                   workspace: str):
    """Drive Thought -> Action -> Observation cycles until a final answer.

    Returns (final_answer or None, plan document or None, transcript, status)
    with status "final" or "step-limit".  Every step is flushed to the
    transcript file before the next backend call.
    """
    backend = make_backend(cfg)
    os.makedirs(workspace, exist_ok=True)
    transcript_path = os.path.join(workspace, pipeline.TRANSCRIPT_FILE)
    transcript = []
    messages = [{"role": "system", "content": system_prompt()},
                {"role": "user", "content": task}]
    tools = registry.openai_tools()

    with open(transcript_path, "w", encoding="utf-8") as tf:
        for index in range(cfg.max_steps):
            reply = llm_complete(messages, tools, backend)
            messages.append(reply.raw_message)
            if reply.tool_calls:
                observations = []
                for call in reply.tool_calls:
                    obs = registry.execute(call)
                    observations.append(obs)
                    messages.append({"role": "tool",
                                     "tool_call_id": call.call_id,
                                     "content": json.dumps(obs)})
                step = TranscriptStep(
                    index=index, thought=reply.content or "",
                    action=reply.tool_calls[0],
                    observation=(observations[0] if len(observations) == 1
                                 else observations),
                    timestamp=time.time())
            else:
                step = TranscriptStep(index=index, thought=reply.content or "",
                                      action=None, observation=None,
                                      timestamp=time.time())
            transcript.append(step)
            tf.write(json.dumps(step.to_dict()) + "\n")
            tf.flush()
            if step.action is None:
                return step.thought, _load_plan(workspace), transcript, "final"
    return None, _load_plan(workspace), transcript, "step-limit"


def _load_plan(workspace):
    path = os.path.join(workspace, pipeline.PLAN_FILE)
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return None
