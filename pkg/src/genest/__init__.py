"""Generative-prior channel estimation for wideband hybrid MIMO-OFDM.

Modules: :mod:`linalg` (numeric core), :mod:`channel` (cluster-ray model),
:mod:`measurement` (pilots and the measurement operator), :mod:`nn` and
:mod:`wgan` (networks and training), :mod:`estimators` (GAN, LS, LMMSE, OMP)
and :mod:`bench` / :mod:`cli` (experiment harness).
"""

from .channel import ChannelDataset, ChannelRealization, ClusterRayConfig, generate_dataset
from .errors import (CapacityError, ConfigError, FormatError, GenestError, IllPosedError, InvalidDimensionError,
                     ShapeError, SingularMatrixError, UndefinedMetricError)
from .estimators import InversionConfig, estimate_gan, estimate_lmmse, estimate_ls, estimate_omp, nmse
from .measurement import MeasurementOperator, TransceiverConfig, build_operator
from .wgan import ChannelGenerator, WganConfig

__version__ = "0.1.0"
