"""Fragmented coverable storage: large objects as linked lists of
majority-replicated coverable blocks, plus a history checker and an
experiment harness."""

from .checker import (
    Verdict,
    check_block_linearizable,
    check_coverability,
    check_fragmented,
    check_history,
    check_update_atomicity,
    check_whole_object,
)
from .chunking import ChunkParams, chunk
from .cluster import Cluster
from .core import INITIAL_TAG, BlockId, BlockValue, FileId, Tag
from .fm import FragmentManager
from .harness import ScenarioConfig, emit_plot_data, run_baseline_wholefile, run_scenario
from .history import History
from .register import CORRECT, Variant

__version__ = "0.1.0"

__all__ = [
    "BlockId", "BlockValue", "CORRECT", "ChunkParams", "Cluster", "FileId", "FragmentManager", "History",
    "INITIAL_TAG", "ScenarioConfig", "Tag", "Variant", "Verdict", "check_block_linearizable",
    "check_coverability", "check_fragmented", "check_history", "check_update_atomicity", "check_whole_object",
    "chunk", "emit_plot_data", "run_baseline_wholefile", "run_scenario",
]
