"""CORE offline RL pipeline: expert selection, contrastive CVAE, reward relabeling and CQL."""

__version__ = "0.1.0"
