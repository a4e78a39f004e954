"""accmon: post-hoc accuracy monitoring for deployed classifiers.

Estimates the true accuracy of a black-box classifier on an unlabeled
dataset from nothing but its softmax outputs: an ensemble of small monitor
nets is pre-trained on a labeled reference set, a small entropy-selected
budget of user records is labeled, the ensemble is transferred, and a
mean/std accuracy estimate is reported alongside five baseline estimators.
"""

__version__ = "0.1.0"

from .records import (  # noqa: F401
    NULL_LABEL,
    DataError,
    Dataset,
    SoftmaxRecord,
    correctness,
    load_dataset,
    save_dataset,
    true_accuracy,
)
from .mlp import (  # noqa: F401
    MonitorNet,
    NetArchitecture,
    TrainConfig,
    bce_loss,
    default_hidden_dims,
    forward,
    freeze_prefix,
    gradient,
    load_net,
    save_net,
    train,
)
