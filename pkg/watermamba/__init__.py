from ._version import __version__
from .config import ModelConfig, RuntimeConfig
from .network import WaterMamba, build
from .weights import WeightStore, init_weights, load_weights, save_weights
