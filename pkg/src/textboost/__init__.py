"""Boosted ensembles of small neural text classifiers.

Multi-class boosting over tiny transformer encoders (or softmax-regression
learners), a trained fusion network over the alpha-scaled base outputs, a
bagging baseline, and knowledge distillation of the ensemble into a single
student model with a linearly annealed teacher schedule.
"""

__version__ = "0.1.0"
