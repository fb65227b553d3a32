"""Distribution-aware adversarial attacks on a small CTC speech recognizer."""

__version__ = "0.1.0"
