"""Multimodal gridworld benchmark environments."""

from .base import AUDIO_SIZE, AudioRenderer, GridEnv, MultimodalObservation
from .mining import VOCAB, MiningEnv, encode_text
from .navigation import AvNavEnv, HeteroNavEnv, TargetSelectEnv

ENV_NAMES = ("hetero_nav", "target_select", "av_nav", "mining", "mining_plus")


def make_env(name: str, seed: int) -> GridEnv:
    """Build a benchmark environment by name."""
    if name == "hetero_nav":
        return HeteroNavEnv(seed)
    if name == "target_select":
        return TargetSelectEnv(seed)
    if name == "av_nav":
        return AvNavEnv(seed)
    if name == "mining":
        return MiningEnv(seed, plus=False)
    if name == "mining_plus":
        return MiningEnv(seed, plus=True)
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


def hetero_nav(seed: int) -> HeteroNavEnv:
    return HeteroNavEnv(seed)


def target_select(seed: int) -> TargetSelectEnv:
    return TargetSelectEnv(seed)


def av_navigation(seed: int) -> AvNavEnv:
    return AvNavEnv(seed)


def mining(seed: int, plus: bool = False) -> MiningEnv:
    return MiningEnv(seed, plus=plus)


__all__ = [
    "AUDIO_SIZE",
    "AudioRenderer",
    "GridEnv",
    "MultimodalObservation",
    "MiningEnv",
    "HeteroNavEnv",
    "TargetSelectEnv",
    "AvNavEnv",
    "VOCAB",
    "encode_text",
    "make_env",
    "hetero_nav",
    "target_select",
    "av_navigation",
    "mining",
    "ENV_NAMES",
]
