"""Deterministic synthetic observers, stimuli and datasets."""

from gazerefine.simulator.dataset import (
    Dataset,
    Sequence,
    SimConfig,
    SplitData,
    build_dataset,
    generate_sequence,
    in_memory_split,
    load_dataset,
)
from gazerefine.simulator.observer import (
    ObserverProfile,
    observer_gaze,
    render_eye,
    sample_observer,
)
from gazerefine.simulator.stimulus import KINDS, StimulusScript, gen_script, render_screen

__all__ = [
    "Dataset", "KINDS", "ObserverProfile", "Sequence", "SimConfig", "SplitData", "StimulusScript",
    "build_dataset", "gen_script", "generate_sequence", "in_memory_split", "load_dataset",
    "observer_gaze", "render_eye", "render_screen", "sample_observer",
]
