"""Equivariant embeddings from unknown group actions.

The library learns an encoder whose latent space carries a simple group
action by penalizing changes of a group-characteristic quantity
(distances, inner products, angles, or block-matching costs) across
transformed copies of a batch, combined with an injectivity barrier.
"""

from .autodiff import (Adam, EncoderModel, Tensor, backward,
                       finite_difference_check)
from .decomposition import (DecompositionSpec, SubgroupBatch, active_loss,
                            invariance_score, passive_loss)
from .environments import (BlockShuffleWorld, DoubleBumpWorld, MountainCarSim,
                           PendulumSim, PlanarRotationWorld, collect_rl_quads,
                           make_environment, sample_batch)
from .errors import (CheckpointError, ConfigurationError, DimensionError,
                     EquicodeError, NumericalError, SamplingError)
from .evaluation import (PreservationReport, RankingReport, TransitionModel,
                         export_embeddings, fit_transition, preservation_eval,
                         rank_eval)
from .objectives import (BarrierSpec, Conformal, Euclidean, Finite,
                         FiniteGroupTable, Informed, InformedTriple,
                         Orthogonal, TransformBatch, Unitary, conformal_loss,
                         euclidean_loss, finite_group_loss, informed_loss,
                         injectivity_loss, invariant_feature_loss,
                         orthogonal_loss, verify_induced_action)
from .training import RunRecord, TrainConfig, resume, train

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
