"""Physical-layer fingerprinting of CAN-bus transmitters."""

__version__ = "0.1.0"

from .canframe import CanFrame, SignalingConfig, crc15, encode_frame, render_waveform
from .channelsim import (
    ChannelProfile,
    EcuProfile,
    SimConfig,
    apply_channel,
    convolve,
    generate_dataset,
    shape_transmit,
)
from .evalkit import ConfusionMatrix, LabeledDataset, evaluate, identify, report, split
from .featsel import JMISelector, discretize, jmi_rank, mutual_information
from .features import FEATURE_NAMES, FeatureExtractor, FeatureVector, extract, extract_many
from .mlp import MlpModel, SCGClassifier, TrainConfig, forward, init_model, predict, train_scg
from .waveform import Waveform

__all__ = [
    "CanFrame", "SignalingConfig", "crc15", "encode_frame", "render_waveform",
    "ChannelProfile", "EcuProfile", "SimConfig", "apply_channel", "convolve",
    "generate_dataset", "shape_transmit",
    "ConfusionMatrix", "LabeledDataset", "evaluate", "identify", "report", "split",
    "JMISelector", "discretize", "jmi_rank", "mutual_information",
    "FEATURE_NAMES", "FeatureExtractor", "FeatureVector", "extract", "extract_many",
    "MlpModel", "SCGClassifier", "TrainConfig", "forward", "init_model", "predict", "train_scg",
    "Waveform",
]
