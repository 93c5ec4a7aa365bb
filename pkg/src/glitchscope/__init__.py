"""glitchscope: an auditing harness for image-embedding models.

Mines systematic failures two ways — neighbor-ranking discrepancies between
two embedding models, and caption-ranking churn under controlled image
transformations — then routes flagged cases through a human triage workflow
keyed to a 14-fault taxonomy.
"""

__version__ = "0.1.0"

from .datastore import (  # noqa: F401
    DatasetManifest,
    EmbeddingStore,
    ImageRecord,
    ScoreMatrix,
    load_manifest,
    read_embeddings,
    select_primary_caption,
    write_embeddings,
)
from .errors import (  # noqa: F401
    GlitchscopeError,
    RemoteScorerError,
    StorageError,
    ValidationError,
)
from .simindex import ExactNearestNeighbors, NeighborList, cosine, l2, query_topk  # noqa: F401
from .daf import DiscrepancyCase, DivergenceScore, compare_rankings, run_daf  # noqa: F401
from .transforms import TransformSpec, apply, make_suite  # noqa: F401
from .tcac import (  # noqa: F401
    CaptionPool,
    CaptionRanking,
    TcacCase,
    build_caption_pool,
    diff_rankings,
    score_captions,
    select_cases,
)
from .taxonomy import FAULTS, Fault  # noqa: F401
