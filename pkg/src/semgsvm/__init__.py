"""sEMG movement classification: ingest, VAR whitening, MAV/WL features, RBF SVM and the repeatability protocol."""

__version__ = "0.1.0"
