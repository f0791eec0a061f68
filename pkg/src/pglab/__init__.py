"""Posterior geometry lab: sampling and diagnosing small Bayesian neural networks."""

from .network import NetworkSpec, forward
from .model import LikelihoodSpec, PosteriorModel, PriorSpec
from .store import SampleStore

__version__ = "0.1.0"
