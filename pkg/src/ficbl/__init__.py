"""Transparent concept-based learning from patch-cluster frequencies.

Images are split into patches, embedded, and clustered; concept
probabilities for new images follow from frequency counts by Bayes'
rule with a multinomial likelihood.  Expert logic rules over concepts
reweight the prior and conditional tables before inference.
"""

from .concepts import (
    MISSING,
    ConceptSchema,
    empirical_joint,
    enumerate_combinations,
    restrict_combinations,
    schema_from_cardinalities,
)
from .counts import (
    CountTables,
    ProbabilityModel,
    apply_rule,
    fit_counts,
    probability_model,
    rule_update_conditionals,
    rule_update_priors,
)
from .dataset import (
    Dataset,
    ImageRecord,
    Patch,
    PatchConfig,
    binarize_target,
    compose_annotated_dataset,
    compose_grid_dataset,
    extract_patches,
    invert_labels,
    load_dataset,
    load_idx,
    save_dataset,
)
from .embedding import Embedder, embed, fit_pca, load_external_embeddings
from .clustering import ClusterModel, assign, fit_em_gmm, fit_kmeans
from .inference import Prediction, decide, occupancy, predict
from .model import PipelineConfig, TrainedModel, load_model, save_model, train_model
from .rules import Rule, conjoin, eval_rule, format_rule, parse_rule, truth_prob

__version__ = "0.1.0"
