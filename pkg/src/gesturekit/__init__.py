"""FMCW radar hand-gesture recognition: simulation, RSA processing and CNN classifiers."""
from .dsp import process_recording
from .estimators import CNNGestureClassifier, RSATransformer, TemplateGestureClassifier
from .models import build_resnet20, build_vgg10
from .radar_sim import CLASS_NAMES, ChirpConfig, GestureClass, GestureParams, synthesize_recording

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES", "CNNGestureClassifier", "ChirpConfig", "GestureClass", "GestureParams", "RSATransformer",
    "TemplateGestureClassifier", "build_resnet20", "build_vgg10", "process_recording", "synthesize_recording",
]
