"""Corpus engineering and masked-LM evaluation toolkit."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    Corpus,
    CorpusManifest,
    ManifestEntry,
    chunk_text,
    compute_stats,
    hash_split,
    ingest,
    load_manifest,
)
from .evaluator import (  # noqa: F401
    CandidateSet,
    InstanceResult,
    build_candidate_set,
    eval_instance,
    eval_task,
)
from .mlm_eval import MlmEvalConfig, MlmReport, eval_mlm  # noqa: F401
from .probes import (  # noqa: F401
    ProbeInstance,
    TermVocabulary,
    build_probes,
    load_vocabulary,
    validate_probes,
)
from .reporting import aggregate, complexity_curve, rank_models, render  # noqa: F401
from .sampling import SamplingPlan, fit_alpha, sample_stream, smoothed_rates  # noqa: F401
from .scorer import (  # noqa: F401
    HashScorer,
    HttpScorer,
    ScoreRequest,
    Scorer,
    TableScorer,
    resolve_scorer,
)
from .transfer import TransferPlan, plan_embedding_transfer  # noqa: F401
from .util import LexkitError, TransportError, ValidationError  # noqa: F401
