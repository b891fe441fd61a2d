"""Prompt rendering, response parsing, endpoint client against a stub server."""

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from safefleet.actions import Action, SECTORS, Sector
from safefleet.energy import BatteryModel
from safefleet.llm import (
    EndpointConfig,
    EndpointUnavailable,
    LlmPlanner,
    ParseFailure,
    PromptTemplate,
    chat_complete,
    parse_decision,
    render_prompt,
)
from safefleet.planner import FaultConfig, MockPlanner
from safefleet.replay import PlannerRecord
from safefleet.world import GridConfig, World

GLOBAL_TPL = PromptTemplate.default("global")
LOCAL_TPL = PromptTemplate.default("local")


class TestRenderPrompt:
    def test_global_ends_with_bare_decision_marker(self):
        rendered = render_prompt(GLOBAL_TPL, state_info="drone=0", task="pick")
        assert rendered.text.endswith("Decision:")
        bare_lines = [l for l in rendered.text.splitlines() if l.strip() == "Decision:"]
        assert len(bare_lines) == 1

    def test_local_lists_customers_and_ends_with_plan_marker(self):
        rendered = render_prompt(
            LOCAL_TPL,
            state_info="drone=0",
            warehouse_location="(0, 0)",
            customers_list="customer_3 at (10.0, 2.0), customer_7 at (-4.0, 9.0)",
            task="go",
        )
        assert rendered.text.endswith("Action Plan:")
        assert "customer_3 at (10.0, 2.0)" in rendered.text
        assert "customer_7 at (-4.0, 9.0)" in rendered.text

    def test_action_vocabulary_appears_verbatim(self):
        rendered = render_prompt(GLOBAL_TPL, state_info="s", task="t")
        for name in (
            "go_to_sector_east",
            "go_to_sector_west",
            "go_to_sector_north",
            "go_to_sector_south",
            "idle",
        ):
            assert f'"{name}"' in rendered.text
        rendered = render_prompt(LOCAL_TPL, state_info="s", task="t")
        for name in ("move_to_customer", "return_to_base", "idle"):
            assert f'"{name}"' in rendered.text

    def test_identical_inputs_identical_strings(self):
        a = render_prompt(GLOBAL_TPL, state_info="x", task="y")
        b = render_prompt(GLOBAL_TPL, state_info="x", task="y")
        assert a.text == b.text

    def test_memory_renders_as_example_pairs(self):
        records = [
            PlannerRecord(0, 1, "soc high", Action.global_idle(), Action.global_idle(), False),
            PlannerRecord(
                0, 2, "soc low", Action.move_to_customer(3),
                Action.return_to_base(), True, "battery",
            ),
        ]
        rendered = render_prompt(GLOBAL_TPL, state_info="s", memory=records, task="t")
        assert "Description: soc high" in rendered.text
        assert "Decision: idle" in rendered.text
        assert "Decision: return_to_base" in rendered.text  # the safe executed action

    def test_oversized_memory_truncates_oldest_first(self):
        records = [
            PlannerRecord(0, t, f"summary-{t}", Action.global_idle(), Action.global_idle(), False)
            for t in range(50)
        ]
        full = render_prompt(GLOBAL_TPL, state_info="s", memory=records, task="t")
        budget = len(full.text) - 200
        trimmed = render_prompt(
            GLOBAL_TPL, state_info="s", memory=records, task="t", max_chars=budget
        )
        assert trimmed.truncated
        assert len(trimmed.text) <= budget
        assert "summary-49" in trimmed.text       # newest survives
        assert "summary-0" not in trimmed.text    # oldest dropped


class TestParseDecision:
    def test_sector_command(self):
        assert parse_decision("global", "Decision: go_to_sector_east") == Action.go_to_sector(
            Sector.EAST
        )

    def test_pass_token(self):
        action = parse_decision("global", "Decision: <pass>")
        assert action.is_pass

    def test_out_of_vocabulary_raises(self):
        with pytest.raises(ParseFailure) as info:
            parse_decision("global", "Decision: fly_to_moon")
        assert "fly_to_moon" in info.value.raw_text

    def test_case_insensitive(self):
        assert parse_decision("global", "Decision: GO_TO_SECTOR_WEST") == Action.go_to_sector(
            Sector.WEST
        )

    def test_move_with_id(self):
        assert parse_decision("local", "Action Plan: move_to_customer(12)") == (
            Action.move_to_customer(12)
        )
        assert parse_decision("local", "Action Plan: move_to_customer 7") == (
            Action.move_to_customer(7)
        )

    def test_takes_last_marker_when_model_echoes(self):
        text = "Decision: idle\nreasoning...\nDecision: go_to_sector_south"
        assert parse_decision("global", text) == Action.go_to_sector(Sector.SOUTH)

    def test_round_trip_over_whole_vocabulary(self):
        actions = [Action.go_to_sector(s) for s in SECTORS]
        actions += [Action.global_idle()]
        for a in actions:
            assert parse_decision("global", f"Decision: {a.describe()}") == a
        locals_ = [Action.move_to_customer(4), Action.return_to_base(), Action.local_idle()]
        for a in locals_:
            assert parse_decision("local", f"Action Plan: {a.describe()}") == a


class StubHandler(BaseHTTPRequestHandler):
    """Programmable chat-completion stub."""

    script: list = []   # each entry: ("ok", text) | ("error", code) | ("sleep", seconds)
    calls: list = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        type(self).calls.append(body)
        kind, value = (
            type(self).script.pop(0) if type(self).script else ("ok", "Decision: idle")
        )
        if kind == "sleep":
            time.sleep(value)
            kind, value = "ok", "Decision: idle"
        if kind == "error":
            self.send_response(value)
            self.end_headers()
            return
        payload = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": value}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    StubHandler.script = []
    StubHandler.calls = []
    yield f"http://127.0.0.1:{server.server_port}/v1"
    server.shutdown()
    thread.join(timeout=2)


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("STUB_API_KEY", "test-key")


def endpoint(base_url, **kwargs) -> EndpointConfig:
    defaults = dict(
        base_url=base_url,
        api_key_env_var_name="STUB_API_KEY",
        timeout_s=2.0,
        max_retries=2,
        backoff_base_s=0.01,
    )
    defaults.update(kwargs)
    return EndpointConfig(**defaults)


class TestChatComplete:
    def test_echo_end_to_end(self, stub_server, api_key):
        StubHandler.script = [("ok", "Decision: idle")]
        text = chat_complete(endpoint(stub_server), "hello", "gpt-4o")
        assert text == "Decision: idle"
        assert parse_decision("global", text) == Action.global_idle()
        assert StubHandler.calls[0]["model"] == "gpt-4o"
        assert StubHandler.calls[0]["messages"][0]["content"] == "hello"
        assert StubHandler.calls[0]["temperature"] == 0.0

    def test_retries_through_transient_errors(self, stub_server, api_key):
        StubHandler.script = [("error", 500), ("error", 500), ("ok", "Decision: idle")]
        text = chat_complete(endpoint(stub_server), "p", "m")
        assert text == "Decision: idle"
        assert len(StubHandler.calls) == 3

    def test_timeout_raises_endpoint_unavailable(self, stub_server, api_key):
        StubHandler.script = [("sleep", 5), ("sleep", 5)]
        config = endpoint(stub_server, timeout_s=0.3, max_retries=1)
        start = time.monotonic()
        with pytest.raises(EndpointUnavailable):
            chat_complete(config, "p", "m")
        elapsed = time.monotonic() - start
        assert elapsed < config.timeout_s * (config.max_retries + 1) + 0.5

    def test_client_errors_fail_fast(self, stub_server, api_key):
        StubHandler.script = [("error", 401)]
        with pytest.raises(EndpointUnavailable):
            chat_complete(endpoint(stub_server), "p", "m")
        assert len(StubHandler.calls) == 1

    def test_missing_api_key(self, stub_server, monkeypatch):
        monkeypatch.delenv("STUB_API_KEY", raising=False)
        with pytest.raises(EndpointUnavailable):
            chat_complete(endpoint(stub_server), "p", "m")


def make_live_planner(base_url) -> tuple[World, LlmPlanner]:
    world = World(
        grid=GridConfig(customers_per_sector=(5, 5)),
        battery=BatteryModel(2.0, 0.4, 4.8, 0.10),
    )
    mock = MockPlanner(world, faults=FaultConfig.none(), seed=0)
    planner = LlmPlanner(world, endpoint(base_url), mock)
    return world, planner


class TestLlmPlanner:
    def test_proposals_carry_raw_text(self, stub_server, api_key):
        StubHandler.script = [("ok", "Decision: go_to_sector_north")]
        world, planner = make_live_planner(stub_server)
        state = world.init_episode(4)
        proposal = planner.propose(state, 0)
        assert proposal.source == "llm"
        assert proposal.raw_text == "Decision: go_to_sector_north"
        assert proposal.proposed == Action.go_to_sector(Sector.NORTH)

    def test_unparseable_reply_becomes_flagged_refusal(self, stub_server, api_key):
        StubHandler.script = [("ok", "Decision: deliver_by_catapult")]
        world, planner = make_live_planner(stub_server)
        state = world.init_episode(4)
        proposal = planner.propose(state, 0)
        assert proposal.proposed.is_pass
        assert proposal.parse_failure
        assert "catapult" in proposal.raw_text
        assert planner.parse_failures == 1

    def test_endpoint_failure_falls_back_to_mock(self, stub_server, api_key):
        StubHandler.script = [("error", 500), ("error", 500), ("error", 500)]
        world, planner = make_live_planner(stub_server)
        state = world.init_episode(4)
        proposal = planner.propose(state, 0)
        assert proposal.source == "mock"
        assert planner.fallbacks == 1

    def test_propose_many_joins_all_drones(self, stub_server, api_key):
        StubHandler.script = [("ok", "Decision: idle")] * 10
        world, planner = make_live_planner(stub_server)
        state = world.init_episode(4)
        items = [(d.id, "global") for d in state.drones[:4]]
        proposals = planner.propose_many(state, items)
        assert set(proposals) == {0, 1, 2, 3}
