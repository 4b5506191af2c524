"""Geometry chain-of-thought distillation pipeline.

Synthesizes, filters, profiles, and exports CoT training data by driving a
teacher chat endpoint: tagged CoT generation with rejection sampling against
ground truth, prompt-based question augmentation, N-way self-consistency
filtering, dataset statistics, SFT export, and a Top-1 accuracy evaluator.
"""

__version__ = "0.1.0"
