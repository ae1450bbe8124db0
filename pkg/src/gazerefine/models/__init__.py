"""EyeNet-lite and RefineNet-lite with their losses and training loops."""

from gazerefine.models.config import EyeNetConfig, RefineNetConfig
from gazerefine.models.eyenet import EyeNet, EyeNetOutput, eyenet_loss, eyes_to_initial_pog
from gazerefine.models.refinenet import RefineNet, RefineNetOutput, confidence_maps, target_maps

__all__ = [
    "EyeNet", "EyeNetConfig", "EyeNetOutput", "RefineNet", "RefineNetConfig", "RefineNetOutput",
    "confidence_maps", "eyenet_loss", "eyes_to_initial_pog", "target_maps",
]
