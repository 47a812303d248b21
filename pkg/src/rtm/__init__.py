"""Recurrent tensor matching for community question answering.

A small numpy library that encodes question/answer pairs with an attentive
biLSTM, extracts 51 handcrafted features, relates question, answer and
feature vectors through regularized bilinear tensor slices, and trains and
evaluates the resulting ranker (MAP / MRR / P@1 and answer triggering).
"""

__version__ = "0.1.0"
