"""Speech-based Parkinson's detection pipeline, desk scale.

Subpackages cover audio preprocessing, MFCC features, cluster pseudo-labels,
a small self-supervised transformer encoder with domain-adversarial
fine-tuning, sparse-representation and SVM baselines, and a speaker-disjoint
cross-validation harness. Everything runs on CPU with numpy and is
deterministic given the configured seeds.
"""

__version__ = "0.1.0"
