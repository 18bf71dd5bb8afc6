"""Micrograph embedding, hard-example mining, few-shot prompt construction
and multi-metric evaluation, end to end at desk scale.

Subpackages / modules:

* ``dataio``       — datasets, manifests, preprocessing, synthetic corpus
* ``autodiff``     — minimal reverse-mode tensor over numpy float64
* ``encoder``      — patch/cls-token encoder with local+global attention
* ``training``     — two-view augmentation, NT-Xent, Adam, train loop
* ``mining``       — PCA, k-means, silhouette, hardness, hard test split
* ``embed_index``  — exact top-K embedding retrieval + random baseline
* ``prompts``      — the prompt corpus and request builders/parsers
* ``gateway``      — backends, retries, rate limiting, response cache
* ``curation``     — human accept/reject queue with HTTP API
* ``evaluation``   — Top-N accuracy, confusion matrix, P/R/F1 reports
* ``pipeline``     — staged orchestration used by the ``nmid`` CLI
"""

__version__ = "0.1.0"
