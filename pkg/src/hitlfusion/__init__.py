"""Fusion of a visual classifier with human-in-the-loop attribute answers.

Two sources describe each sample: a numeric visual feature vector and a set of
yes/no answers with a certainty level. Each source gets its own classifier
(a random forest for features, a random naive Bayes ensemble for answers) and
the two class posteriors are combined by equal-weight naive Bayes fusion, by a
thresholded variant, or by a small neural network.
"""

from .bayes import MultinomialNb, RnbEnsemble, nb_fit, nb_posterior, rnb_fit, rnb_posterior
from .dataset import CERTAINTY_VALUES, Dataset, load_dataset, synth_generate, write_dataset
from .evaluate import ExperimentConfig, run_experiment
from .forest import Forest, forest_fit, forest_posterior
from .fusion import ThresholdTable, fuse_batch, learn_thresholds, modified_nb_fuse, nb_fuse
from .neural import FusionNet, TrainConfig, init_net, nn_fuse, train_scg

__version__ = "0.1.0"

__all__ = [
    "CERTAINTY_VALUES", "Dataset", "ExperimentConfig", "Forest", "FusionNet", "MultinomialNb", "RnbEnsemble",
    "ThresholdTable", "TrainConfig", "forest_fit", "forest_posterior", "fuse_batch", "init_net", "learn_thresholds",
    "load_dataset", "modified_nb_fuse", "nb_fit", "nb_fuse", "nb_posterior", "nn_fuse", "rnb_fit", "rnb_posterior",
    "run_experiment", "synth_generate", "train_scg", "write_dataset",
]
