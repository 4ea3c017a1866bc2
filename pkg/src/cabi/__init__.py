"""Bidirectional model-based data augmentation for offline RL.

Train forward/backward dynamics ensembles and CVAE rollout policies on a
logged dataset, generate synthetic transitions kept only when both models
agree, and feed the mixed data to a compact offline actor-critic learner.
"""

from . import (augment, checkpoint, cvae, data, dynamics, learner, metrics,
               nn, riskworld)
from .augment import (BidirectionalModels, CandidateBatch, CvaePolicy,
                      ModelBuffer, RandomPolicy, RolloutConfig,
                      RolloutPolicies, backward_step, forward_step, generate,
                      select_top_k)
from .cvae import CvaeModel, sample_action, train_cvae
from .data import (Batch, Dataset, DatasetFormatError, MixedSampler,
                   NormStats, load, mixed_batch, norm_stats, save,
                   split_holdout)
from .dynamics import (Ensemble, GaussianDynamicsModel,
                       ensemble_member_variance, predict, train_ensemble)
from .learner import (EvalResult, LearnerConfig, PolicyArtifact, evaluate,
                      normalized_score, train_policy)
from .metrics import (DisagreementReport, SampleQualityReport,
                      model_disagreement, prediction_error, region_fractions)
from .nn import (AdamState, DenseNet, adam_step, diag_gauss_kl, gaussian_nll,
                 net_gradients, sample_diag_gaussian, seeded_rng)
from .riskworld import RiskWorld, collect_random

__version__ = "0.1.0"
