"""Model ownership fingerprinting by pooled membership inference."""

from .dataset import (Dataset, LabeledSample, MiniDataset, SplitPools, generate_synthetic,
                      load_csv, load_idx, sample_trial, save_csv, split_pools)
from .errors import CapacityError, ConfigError, DivergenceError, FormatError, PmiError
from .nn import (MlpModel, TrainConfig, fine_tune, load_model, logits, predict, prune,
                 save_model, train)
from .pmi import (ClusterTree, FeatureMatrix, agglomerative_cluster, distance_matrix,
                  extract_features, infer_from_features, infer_member, mmd_unbiased,
                  normalize_features, select_outlier)
from .protocol import (FineTuneAttack, FingerprintReport, ProtocolConfig, PruneAttack,
                       run_all, run_attacked, run_class)

__version__ = "0.1.0"
