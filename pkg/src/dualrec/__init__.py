"""Dual-sequence sequential recommender with hand-verified gradients."""

from .autodiff import ShapeError, Tape, Tensor, backward
from .data import (DualSample, Interaction, InteractionLog, PreparedData, SplitSpec,
                   batch_iter, build_history_index, chronological_split, ingest,
                   make_dual_sample, n_core_filter, sample_negatives, samples_from_log)
from .metrics import MetricReport, ScoredGroup, auc, evaluate, gauc, mrr, ndcg_at_k
from .model import (Batch, ForwardOutputs, ModelConfig, ModelParams, collate, forward,
                    gru_encode, attention_encode)
from .optim import AdamState, NumericError, adam_step, zero_grads
from .rng import SeededRng, xavier_init
from .synth import PlantedConfig, generate_planted
from .training import (TrainConfig, TrainHistory, TrainResult, ablate, ablation_grid,
                       evaluate_test, sweep_lambda, train)

__version__ = "0.1.0"
