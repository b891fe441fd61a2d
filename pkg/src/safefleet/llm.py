"""Live-endpoint planner: prompt rendering, chat completion, response parsing.

The wire format is the de-facto chat-completion JSON schema (model, messages,
temperature; reply text in choices[0].message.content), so any compatible
endpoint can serve. Prompt templates live in text files and can be overridden
per deployment; the state description placeholders they must carry are
documented in the default templates.

Every failure mode degrades rather than stalls: endpoint trouble falls back
to the mock planner for that step, unparseable replies become a refusal with
the raw text preserved for the audit trail.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .actions import Action, SECTORS
from .planner import MockPlanner, PlannerProposal
from .replay import PlannerRecord
from .world import World, WorldState

logger = logging.getLogger(__name__)

GLOBAL_PLACEHOLDERS = ("{state_info}", "{incontext_examples_global}", "{input}")
LOCAL_PLACEHOLDERS = (
    "{incontext_examples_execution}",
    "{warehouse_location}",
    "{customers_list}",
    "{input}",
)


class ParseFailure(Exception):
    """Response text did not map to the action vocabulary."""

    def __init__(self, raw_text: str):
        super().__init__(f"unparseable planner response: {raw_text!r}")
        self.raw_text = raw_text


class EndpointUnavailable(Exception):
    """The endpoint could not produce a response within the retry budget."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model_name_global: str = "gpt-4o"
    model_name_local: str = "gpt-4o-mini"
    api_key_env_var_name: str = "OPENAI_API_KEY"
    timeout_s: float = 10.0
    max_retries: int = 2
    temperature: float = 0.0
    backoff_base_s: float = 0.5
    max_concurrency: int = 4
    max_prompt_chars: int = 24_000

    def __post_init__(self) -> None:
        if not self.timeout_s > 0:
            raise ValueError("timeout_s must be strictly positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class PromptTemplate:
    tier: str
    template_text: str

    @staticmethod
    def default(tier: str) -> "PromptTemplate":
        name = "global_planner.txt" if tier == "global" else "local_planner.txt"
        text = resources.files("safefleet.prompts").joinpath(name).read_text()
        return PromptTemplate(tier, text)

    @staticmethod
    def from_file(tier: str, path: str | Path) -> "PromptTemplate":
        return PromptTemplate(tier, Path(path).read_text())


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    truncated: bool


def _memory_examples(records: Sequence[PlannerRecord], tier: str) -> list[str]:
    marker = "Decision" if tier == "global" else "Action Plan"
    out = []
    for rec in records:
        summary = rec.state_summary or "(no description)"
        out.append(f"Description: {summary}\n{marker}: {rec.executed.describe()}")
    return out


def render_prompt(
    template: PromptTemplate,
    state_info: str,
    memory: Sequence[PlannerRecord] = (),
    warehouse_location: str = "(0, 0)",
    customers_list: str = "none",
    task: str = "",
    max_chars: int | None = None,
) -> RenderedPrompt:
    """Fill the template's placeholders deterministically.

    Memory records render as description/decision example pairs; when the
    result exceeds ``max_chars`` the oldest examples are dropped first and
    the prompt is flagged as truncated.
    """
    examples = _memory_examples(memory, template.tier)
    truncated = False
    while True:
        block = "\n".join(examples) if examples else "(none)"
        text = template.template_text
        text = text.replace("{state_info}", state_info)
        text = text.replace("{incontext_examples_global}", block)
        text = text.replace("{incontext_examples_execution}", block)
        text = text.replace("{warehouse_location}", warehouse_location)
        text = text.replace("{customers_list}", customers_list)
        text = text.replace("{input}", task)
        if max_chars is None or len(text) <= max_chars or not examples:
            break
        examples = examples[1:]  # drop oldest first
        truncated = True
    placeholders = GLOBAL_PLACEHOLDERS if template.tier == "global" else LOCAL_PLACEHOLDERS
    for ph in placeholders:
        if ph in text:
            raise ValueError(f"unresolved placeholder {ph} in rendered prompt")
    return RenderedPrompt(text, truncated)


_MOVE_RE = re.compile(r"move_to_customer\s*\(?\s*(?:customer[_ ])?(\d+)\s*\)?", re.IGNORECASE)


def parse_decision(tier: str, response_text: str) -> Action:
    """Map a reply to the vocabulary: token after the tier's format marker.

    Case-insensitive; ``<pass>`` maps to the refusal. Anything out of
    vocabulary raises ParseFailure carrying the raw text.
    """
    marker = "Decision:" if tier == "global" else "Action Plan:"
    idx = response_text.rfind(marker)
    tail = response_text[idx + len(marker):] if idx >= 0 else response_text
    token = tail.strip().splitlines()[0].strip() if tail.strip() else ""
    token = token.strip().strip(".").strip("\"'` ")
    lowered = token.lower()
    if lowered == "<pass>":
        return Action.refusal(tier)
    if tier == "global":
        for sector in SECTORS:
            if lowered == f"go_to_sector_{sector.value}":
                return Action.go_to_sector(sector)
        if lowered == "idle":
            return Action.global_idle()
        raise ParseFailure(response_text)
    move = _MOVE_RE.fullmatch(token)
    if move:
        return Action.move_to_customer(int(move.group(1)))
    if lowered == "return_to_base":
        return Action.return_to_base()
    if lowered == "idle":
        return Action.local_idle()
    raise ParseFailure(response_text)


def chat_complete(config: EndpointConfig, prompt: str, model: str) -> str:
    """Single-turn chat completion with bounded retries.

    Total wall time is capped at timeout_s * (max_retries + 1); transient
    failures back off exponentially inside that budget. Anything that
    exhausts it raises EndpointUnavailable.
    """
    api_key = os.environ.get(config.api_key_env_var_name, "")
    if not api_key:
        raise EndpointUnavailable(
            f"no API key in environment variable {config.api_key_env_var_name}"
        )
    deadline = time.monotonic() + config.timeout_s * (config.max_retries + 1)
    body = json.dumps(
        {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
        }
    ).encode()
    url = config.base_url.rstrip("/") + "/chat/completions"
    last_error: Exception | None = None
    for attempt in range(config.max_retries + 1):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            break
        request = urllib.request.Request(
            url,
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {api_key}",
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(
                request, timeout=min(config.timeout_s, remaining)
            ) as response:
                payload = json.loads(response.read().decode())
            return payload["choices"][0]["message"]["content"]
        except urllib.error.HTTPError as exc:
            last_error = exc
            if exc.code < 500:  # client errors will not heal on retry
                raise EndpointUnavailable(f"endpoint rejected request: {exc}") from exc
        except (urllib.error.URLError, TimeoutError, OSError, KeyError, ValueError) as exc:
            last_error = exc
        sleep_for = min(config.backoff_base_s * 2**attempt, max(0.0, deadline - time.monotonic()))
        if sleep_for > 0 and attempt < config.max_retries:
            time.sleep(sleep_for)
    raise EndpointUnavailable(f"endpoint unavailable after retries: {last_error}")


class LlmPlanner:
    """Planner backed by a chat endpoint, with the mock as its safety net."""

    def __init__(
        self,
        world: World,
        endpoint: EndpointConfig,
        mock: MockPlanner,
        global_template: PromptTemplate | None = None,
        local_template: PromptTemplate | None = None,
    ) -> None:
        self.world = world
        self.endpoint = endpoint
        self.mock = mock
        self.global_template = global_template or PromptTemplate.default("global")
        self.local_template = local_template or PromptTemplate.default("local")
        self.fallbacks = 0
        self.parse_failures = 0

    def tier_for(self, state: WorldState, drone_id: int) -> str:
        return self.mock.tier_for(state, drone_id)

    def state_info(self, state: WorldState, drone_id: int) -> str:
        obs = self.world.observe(state, drone_id)
        pending = state.pending_by_sector()
        parts = [
            f"drone={drone_id}",
            f"position=({obs.normalized_position[0]:.3f}, {obs.normalized_position[1]:.3f})",
            f"battery={obs.battery:.3f}",
            "pending=" + "/".join(f"{s.value}:{pending[s]}" for s in SECTORS),
            f"travel={obs.normalized_cumulative_distance:.3f}",
        ]
        return " ".join(parts)

    def _customers_list(self, state: WorldState, drone_id: int) -> str:
        assigned = state.assigned_unserved(drone_id)
        if not assigned:
            return "none"
        return ", ".join(
            f"customer_{c.id} at ({c.position[0]:.1f}, {c.position[1]:.1f})"
            for c in assigned
        )

    def propose(self, state: WorldState, drone_id: int, memory=None) -> PlannerProposal:
        tier = self.tier_for(state, drone_id)
        memory = list(memory or [])
        info = self.state_info(state, drone_id)
        if tier == "global":
            rendered = render_prompt(
                self.global_template,
                state_info=info,
                memory=memory,
                task=f"Select the next high-level action for drone {drone_id}.",
                max_chars=self.endpoint.max_prompt_chars,
            )
            model = self.endpoint.model_name_global
        else:
            rendered = render_prompt(
                self.local_template,
                state_info=info,
                memory=memory,
                warehouse_location=str(self.world.grid.warehouse),
                customers_list=self._customers_list(state, drone_id),
                task=f"Select the next route command for drone {drone_id}. State: {info}",
                max_chars=self.endpoint.max_prompt_chars,
            )
            model = self.endpoint.model_name_local
        try:
            reply = chat_complete(self.endpoint, rendered.text, model)
        except EndpointUnavailable as exc:
            self.fallbacks += 1
            logger.warning("endpoint fallback for drone %d: %s", drone_id, exc)
            return self.mock.propose(state, drone_id, memory=memory)
        try:
            action = parse_decision(tier, reply)
        except ParseFailure:
            self.parse_failures += 1
            return PlannerProposal(
                drone_id, Action.refusal(tier), tier, source="llm",
                raw_text=reply, parse_failure=True,
            )
        return PlannerProposal(drone_id, action, tier, source="llm", raw_text=reply)

    def propose_many(self, state: WorldState, items, memory=None) -> dict[int, PlannerProposal]:
        """Concurrent per-drone queries, joined before the step commits."""
        ids = [drone_id for drone_id, _tier in items]
        if len(ids) <= 1 or self.endpoint.max_concurrency <= 1:
            return {i: self.propose(state, i, memory=memory) for i in ids}
        with ThreadPoolExecutor(max_workers=self.endpoint.max_concurrency) as pool:
            futures = {i: pool.submit(self.propose, state, i, memory) for i in ids}
            return {i: f.result() for i, f in futures.items()}
