"""Multi-manifold embeddings for ad click prediction.

Users and ads are embedded simultaneously in several manifolds (Euclidean
and curvature-parameterized Poincare balls); per-manifold distance scores
are fused by attention into one click logit, trained with Riemannian SGD.
"""

from .data import InteractionRecord, SyntheticTreeSpec, Vocab, build_vocab
from .errors import (
    ConfigError,
    DegenerateLabelsError,
    DomainError,
    FormatError,
    LengthMismatchError,
    MmctrError,
    NonFiniteLossError,
    ParseError,
    SpecMismatchError,
    UnknownEntityError,
    VersionError,
)
from .geometry import (
    ManifoldKind,
    ManifoldPoint,
    ManifoldSpec,
    TangentVector,
    conformal_factor,
    distance,
    euclidean,
    exp_map,
    log_map,
    mobius_add,
    poincare_ball,
    project_to_ball,
)
from .model import (
    EmbeddingTable,
    FusionParams,
    ModelConfig,
    ModelState,
    backward,
    bce_loss,
    fuse,
    init_embeddings,
    predict_ctr,
    score_per_manifold,
)
from .optim import OptimizerConfig, UpdateMode, gradient_check, riemannian_grad, rsgd_step
from .serving import RankedAds, batch_topk, topk
from .trainer import (
    Checkpoint,
    Metrics,
    TrainConfig,
    auc,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
