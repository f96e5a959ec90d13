"""Multi-modal prototype out-of-distribution detection over embeddings.

Library surface: an embedding store with a bit-exact binary format,
class prototypes for both modalities, max-softmax detection scores
(mcm / mmp / gmp), a few-shot prompt tuner with hand-written exact
gradients, evaluation metrics, and a Monte-Carlo verifier for the
score-separation property of multi-modal prototypes.
"""

from .encoder import ClassTokenTable, FrozenTextEncoder, PrecomputedTableEncoder
from .errors import (
    BadClassError,
    BadConfigError,
    BadLabelError,
    BadMagicError,
    ClassCountMismatchError,
    DimMismatchError,
    EmptyClassError,
    EmptyInputError,
    EngineError,
    LengthMismatchError,
    MissingInputError,
    NoLabelsError,
    NonFiniteError,
    ZeroVectorError,
)
from .metrics import (
    EvalReport,
    auroc,
    ecdf,
    ecdf_export,
    evaluate,
    fpr_at_tpr,
    ks_statistic,
    modality_gap_norm,
    top1_accuracy,
)
from .prototypes import PrototypeSet, compute_image_prototypes, text_prototypes_zero_shot
from .scoring import (
    ScoreConfig,
    ScoreReport,
    decide,
    gmp_batch,
    gmp_score,
    mcm_batch,
    mcm_score,
    mmp_batch,
    mmp_score,
    predict_batch,
    predict_class,
)
from .store import (
    EmbeddingRecord,
    EmbeddingSet,
    load_embedding_set,
    normalize_set,
    save_embedding_set,
)
from .synth import (
    AssumptionReport,
    SynthConfig,
    TheoremReport,
    World,
    check_assumptions,
    generate_world,
    verify_theorem,
)
from .tuner import (
    LossBreakdown,
    TrainConfig,
    TrainedModel,
    TunerParams,
    build_idbp,
    evaluate_loss,
    forward_backward,
    load_model,
    loss_bias,
    loss_id,
    loss_inter,
    loss_intra,
    meta_net,
    sample_bias,
    save_model,
    score_with_model,
    sgd_step,
    train,
)

__version__ = "0.1.0"
