from .experiment import ExperimentConfig
