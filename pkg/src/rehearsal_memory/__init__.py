"""Rehearsal memory: fixed-capacity slot memory for one-pass stream
compression, trained with self-supervised recollection/familiarity rehearsal
guided by a teacher history sampler."""

__version__ = "0.1.0"
