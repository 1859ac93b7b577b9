"""Three-stage neural occupancy detector written directly in numpy."""
from .gradcheck import gradient_check
from .layers import focal_loss
from .model import DetectorConfig, DetectorModel
from .train import (TrainingError, build_input, build_target, make_samples, predict_occupancy,
                    predict_probabilities, train_detector)

__all__ = ["DetectorConfig", "DetectorModel", "TrainingError", "build_input", "build_target",
           "focal_loss", "gradient_check", "make_samples", "predict_occupancy",
           "predict_probabilities", "train_detector"]
