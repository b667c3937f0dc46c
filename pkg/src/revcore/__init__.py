"""Review-augmented conversational recommender.

Subsystems: corpus ingestion, sentiment scoring, review retrieval,
entity-based recommendation, response generation, the training/eval
pipeline, and an HTTP inference service.
"""

__version__ = "0.1.0"
