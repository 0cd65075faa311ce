"""Lightweight federated botnet detection for IoT nodes.

Nodes train small classifiers (CART tree, k-NN, softmax regression) on their
own traffic, ship only serialized models to an edge node, and the edge
combines them by majority vote.
"""
from .dataset import (
    DataError,
    Dataset,
    LabelMode,
    SplitSpec,
    SyntheticFederationSpec,
    generate_synthetic_federation,
    load_device,
    load_federation,
    split,
)
from .evaluation import (
    AccuracyMatrix,
    NodeMetrics,
    ScoreCard,
    ScoreWeights,
    accuracy,
    accuracy_matrix,
    cross_node_matrix,
    min_max_normalize,
    row_average,
    score,
    score_models,
    timed_train,
    weighted_average,
)
from .federation import (
    CommunicationSummary,
    FederationReport,
    MajorityVoteEnsemble,
    ModelUpdate,
    aggregate,
    communication_cost,
    ensemble_predict,
    evaluate_federation,
    local_train_round,
    run_federation,
)
from .models import (
    DecisionTreeClassifier,
    KNNClassifier,
    LogisticRegressionClassifier,
    TrainerSpec,
    deserialize_model,
    serialize_model,
)
from .preprocess import Scaler, apply_scaler, fit_scaler

__version__ = "0.1.0"
