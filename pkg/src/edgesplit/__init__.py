"""Split large transformers across heterogeneous edge fleets.

The package plans how to decompose a transformer into per-device sub-models
(GP-guided search over a constrained architecture space), predicts and
simulates collaborative-inference latency and energy, and calibrates the
sub-models against a teacher with boosting-weighted distillation.
"""

from .aggregate import (AggregationModule, aggregate, aggregate_logits,
                        aggregator_accuracy, ensemble_average,
                        ensemble_majority, train_aggregator)
from .bayesopt import (GPState, SearchResult, bayes_search, decode_policy,
                       encode_policy, expected_improvement, gp_fit,
                       gp_predict, gp_update, matern_kernel, propose_next,
                       random_search)
from .distill import (CalibrationResult, ToyClassifier, ToyDataset,
                      calibrate_sequence, distill_loss, init_weights,
                      make_cluster_dataset, planar_view, train_teacher,
                      update_weights)
from .errors import (ConfigError, DegenerateData, EdgesplitError,
                     EmptyEnsemble, EmptyState, InfeasibleFleet,
                     InfeasiblePolicy, InvalidWorkload, MismatchedFleet,
                     MissingArtifact, NumericalFailure, ShapeMismatch)
from .fileio import (load_config, load_policy, load_transformer, read_csv,
                     save_policy, write_csv)
from .latency import (ArchFeatures, LatencySample, PredictorModel,
                      collect_dataset, load_predictor, predict_latency,
                      save_predictor, synth_profile, train_predictor)
from .model import (ConstraintReport, ConstraintViolation,
                    DecompositionPolicy, DeviceFleet, DeviceSpec,
                    SubModelConfig, TransformerConfig, decompose, flops,
                    full_submodel, memory, repair_policy, sample_policy,
                    validate_policy)
from .objective import (CapacityOracle, DistillationOracle, ObjectiveValue,
                        degradation, end_to_end_latency, objective,
                        phase1_latency, phase2_latency, phase3_latency)
from .sim import (MODES, SimReport, TimelineEvent, Workload, compare_modes,
                  energy, simulate, workload_from_policy)

__version__ = "0.1.0"
