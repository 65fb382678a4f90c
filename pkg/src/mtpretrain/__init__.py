"""Desk-scale multi-task language-model pre-training engine.

Subpackages cover the full pipeline: corpus preparation (sentence
splitting, filtering, segmentation, per-document token statistics),
WordPiece tokenization, batch construction for fifteen training tasks,
a numpy-backed reverse-mode autodiff core, a transformer encoder with
per-task heads, task-combination scheduling (including the staged
continual multi-task allocation), a training loop with checkpointing,
and a small statistics toolkit for run-table significance testing.
"""

__version__ = "0.1.0"
