"""Field-wise embedding size search by structural hard-auxiliary-mask pruning."""
from .data import Dataset, FeatureSchema, FieldSpec, synthesize, split
from .embeddings import EmbeddingLayer, ColumnMaskLayout
from .masks import MaskState, select_top_s
from .metrics import auc, logloss, evaluate, EvalResult
from .models import build_model, CTRModel, FM, DeepFM, DCNV2
from .optim import Adam, SGD, adam_step, alpha_step
from .search import (SearchConfig, RunReport, pretrain, search_stage, retrain, run_pipeline,
                     run_baseline, taylor_diagnostic, uniform_mask)

__version__ = "0.1.0"
