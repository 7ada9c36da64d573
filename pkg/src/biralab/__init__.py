"""Token-level watermarking lab with the bias-inversion rewriting attack."""
from .kernels import BACKEND
from .lm import (CopyParaphraser, InvalidInputError, MarkovModel, MarkovModelSpec, SamplingConfig,
                 TableModel, UniformModel, Vocabulary, perplexity, sample_next, self_information, softmax)
from .watermark import DetectionReport, WatermarkScheme, detect, generate_watermarked, p_tau, z_score
from .attack import AttackConfig, AttackOutcome, ProxyGreenSet, attack, build_proxy_set

__version__ = "0.1.0"
