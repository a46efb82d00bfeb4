"""Group-fair AUC training: minimax over group-pair risks, with AUC-maximization
and equal-AUC baselines, plus the metrics and samplers they share."""

__version__ = "0.1.0"
