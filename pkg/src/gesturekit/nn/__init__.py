"""Minimal NHWC layer stack with hand-written backward passes."""
from .checkpoint import load_model, save_model
from .functional import conv2d_backward, conv2d_forward, softmax, softmax_crossentropy
from .layers import (BatchNorm, Conv2D, Dense, Flatten, GlobalAvgPool, Layer, MaxPool2D, ReLU,
                     ResidualBlock, Softmax)
from .model import Model
from .optim import Adam, AdamState, adam_step
from .train import History, TrainSchedule, train

__all__ = [
    "Adam", "AdamState", "BatchNorm", "Conv2D", "Dense", "Flatten", "GlobalAvgPool", "History", "Layer",
    "MaxPool2D", "Model", "ReLU", "ResidualBlock", "Softmax", "TrainSchedule", "adam_step",
    "conv2d_backward", "conv2d_forward", "load_model", "save_model", "softmax", "softmax_crossentropy",
    "train",
]
