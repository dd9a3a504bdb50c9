"""Out-of-distribution traffic forecasting with self-supervised deconfounding."""

from .data import Dataset, SynthConfig, WindowSpec, chrono_split, generate_synthetic, make_windows, ood_filter
from .dca import ContextPartition, DiscreteSCM, backdoor_adjust, dca_adjust, random_scm, verify_dca
from .model import STEVE, ModelConfig
from .training import VARIANTS, TrainConfig, ablation_suite, evaluate, train

__version__ = "0.1.0"
