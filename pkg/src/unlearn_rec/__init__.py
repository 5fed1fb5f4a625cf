"""Attribute unlearning for embedding-based recommenders.

Train BPR-MF or LightGCN recommenders, make a protected user attribute
indistinguishable in the released embeddings (post-training U2U / D2D
rewrites or in-training baselines), then measure what an attribute-inference
attacker can still recover and what ranking quality remains.
"""

from .attack import (AttackReport, GBTAttacker, MLPAttacker, attack_embeddings,
                     evaluate_attack, split_users, train_gbt_attacker,
                     train_mlp_attacker)
from .dataio import (AttributeLabels, EvalSplit, InteractionDataset,
                     RawInteraction, filter_min_interactions,
                     leave_one_out_split, load_attributes, load_split,
                     parse_raw, save_split)
from .errors import ConfigError, DataError, NumericError, UnlearnRecError
from .harness import (AttackConfig, ExperimentRecord, UnlearnConfig,
                      export_embedding_histograms, parse_attack_config,
                      parse_unlearn_config, run_attack, run_experiment)
from .recmetrics import RecReport, evaluate_model, ndcg_hr_at_k, rank_of_positive
from .recmodels import (EmbeddingModel, TrainHyperparams, build_norm_adjacency,
                        init_model, lightgcn_propagate, load_model, save_model,
                        score, train)
from .unlearning import (UnlearnHyperparams, UnlearnResult, adv_in_training,
                         mmd_rbf_sq, regularization_loss, retrain_with_penalty,
                         run_unlearn, u2u_distinguishability)

__version__ = "0.1.0"
