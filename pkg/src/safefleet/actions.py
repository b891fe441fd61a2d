"""Action vocabulary shared by planners, the safety filter and the policy.

Two tiers of discrete commands: fleet-level sector assignments and per-drone
route commands, plus the ``<pass>`` refusal token a planner may emit instead
of an unsafe decision. The canonical command names are exactly the strings
the prompt templates advertise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class Sector(Enum):
    EAST = "east"
    NORTH = "north"
    WEST = "west"
    SOUTH = "south"


SECTORS = (Sector.EAST, Sector.NORTH, Sector.WEST, Sector.SOUTH)


def sector_of(x: float, y: float) -> Sector | None:
    """The 90-degree wedge containing (x, y); None at the exact origin.

    Wedges are centered on the +x (EAST), +y (NORTH), -x (WEST) and -y
    (SOUTH) axes; boundaries are assigned counterclockwise-inclusive.
    """
    if x == 0.0 and y == 0.0:
        return None
    theta = math.atan2(y, x)
    quarter = math.pi / 4.0
    if -quarter <= theta < quarter:
        return Sector.EAST
    if quarter <= theta < 3.0 * quarter:
        return Sector.NORTH
    if -3.0 * quarter <= theta < -quarter:
        return Sector.SOUTH
    return Sector.WEST


GLOBAL_TIER = "global"
LOCAL_TIER = "local"

_SECTOR_COMMANDS = {s: f"go_to_sector_{s.value}" for s in SECTORS}
GLOBAL_COMMANDS = tuple(_SECTOR_COMMANDS.values()) + ("idle",)
LOCAL_COMMANDS = ("move_to_customer", "return_to_base", "idle")
PASS_TOKEN = "<pass>"


@dataclass(frozen=True)
class Action:
    """One discrete command. ``customer_id`` is set only for customer moves."""

    tier: str
    name: str
    customer_id: int | None = None
    sector: Sector | None = None

    @staticmethod
    def go_to_sector(sector: Sector) -> "Action":
        return Action(GLOBAL_TIER, _SECTOR_COMMANDS[sector], sector=sector)

    @staticmethod
    def global_idle() -> "Action":
        return Action(GLOBAL_TIER, "idle")

    @staticmethod
    def move_to_customer(customer_id: int) -> "Action":
        return Action(LOCAL_TIER, "move_to_customer", customer_id=customer_id)

    @staticmethod
    def return_to_base() -> "Action":
        return Action(LOCAL_TIER, "return_to_base")

    @staticmethod
    def local_idle() -> "Action":
        return Action(LOCAL_TIER, "idle")

    @staticmethod
    def refusal(tier: str) -> "Action":
        return Action(tier, PASS_TOKEN)

    @property
    def is_pass(self) -> bool:
        return self.name == PASS_TOKEN

    @property
    def is_move(self) -> bool:
        return self.name == "move_to_customer"

    @property
    def is_idle(self) -> bool:
        return self.name == "idle"

    def describe(self) -> str:
        if self.is_move:
            return f"move_to_customer({self.customer_id})"
        return self.name


# Canonical order of executable action categories; index is the policy /
# critic featurization. Pass is excluded: it is never executed.
CATEGORIES: tuple[tuple[str, str], ...] = (
    (GLOBAL_TIER, "go_to_sector_east"),
    (GLOBAL_TIER, "go_to_sector_west"),
    (GLOBAL_TIER, "go_to_sector_north"),
    (GLOBAL_TIER, "go_to_sector_south"),
    (GLOBAL_TIER, "idle"),
    (LOCAL_TIER, "move_to_customer"),
    (LOCAL_TIER, "return_to_base"),
    (LOCAL_TIER, "idle"),
)
N_CATEGORIES = len(CATEGORIES)
_CATEGORY_INDEX = {cat: i for i, cat in enumerate(CATEGORIES)}
GLOBAL_CATEGORY_INDICES = tuple(
    i for i, (tier, _) in enumerate(CATEGORIES) if tier == GLOBAL_TIER
)
LOCAL_CATEGORY_INDICES = tuple(
    i for i, (tier, _) in enumerate(CATEGORIES) if tier == LOCAL_TIER
)


def category_index(action: Action) -> int:
    """Featurization index of an executable action. Pass has none."""
    if action.is_pass:
        raise ValueError("pass is not an executable category")
    return _CATEGORY_INDEX[(action.tier, action.name)]
