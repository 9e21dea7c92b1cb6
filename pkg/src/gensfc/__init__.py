"""Toolkit for intent-aware generative service chain composition.

Modules:
    qoe      -- agentic-network model and closed-form QoE math
    intent   -- synthetic intents, hash embeddings, preference datasets
    nn       -- dense/GCN numeric kernels with analytic gradients
    distill  -- preference-distilled student translators and metrics
    srl      -- chain-composition environment, policy training, baselines
    harness  -- scenario/intent generation, experiments, CLI plumbing
"""

__version__ = "0.1.0"
