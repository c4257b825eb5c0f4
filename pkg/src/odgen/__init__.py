"""odgen: gravity-guided adversarial generation of origin-destination networks."""

from .core import City, ODNetwork, Region, TransportGraphSet, flow_distribution, out_flow
from .data import SynthConfig, load_city, save_city, synth_city
from .gravity import GravityParams, fit_decoder_logspace, predict_flows, split_embedding
from .metrics import cpc, f_jsd, mass_correlation, rmse
from .trainer import OdgnTrainer, TrainConfig, train

__all__ = [
    "City",
    "ODNetwork",
    "Region",
    "TransportGraphSet",
    "flow_distribution",
    "out_flow",
    "SynthConfig",
    "load_city",
    "save_city",
    "synth_city",
    "GravityParams",
    "fit_decoder_logspace",
    "predict_flows",
    "split_embedding",
    "cpc",
    "f_jsd",
    "mass_correlation",
    "rmse",
    "OdgnTrainer",
    "TrainConfig",
    "train",
]
