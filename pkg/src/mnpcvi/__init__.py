"""Conditional variational inference for multinomial probit models."""
from ._accel import backend
from .evaluation import MetricReport, bootstrap, choice_probabilities, metrics, split
from .gibbs import GibbsConfig, PosteriorDraws, gibbs_fit, truncated_normal
from .model import (ChoiceDataset, DifferenceOperator, ModelParams, choose, difference_design,
                    difference_gaussian, rmse, trace_normalize)
from .numerics import RngStream, ldl_decompose, mvn_sample
from .simulate import SimConfig, build_design, simulate
from .surrogates import SurrogateScheme, decode, gumbel_softmax
from .trainer import FitResult, LossTrace, TrainConfig, anneal, fit, sample_batch

__version__ = "0.1.0"
