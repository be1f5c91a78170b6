"""Desk-scale domain-generalization harness: synthetic domains, protocols, training, metrics."""

from loasp.harness.metrics import accuracy, macro_auc, macro_f1
from loasp.harness.protocol import build_protocol, protocol_instances
from loasp.harness.synthetic import assign_grade, build_dataset, domain_spec, generate_image
from loasp.harness.trainer import train
from loasp.harness.experiments import ablate, evaluate, run_grid

__all__ = [
    "accuracy",
    "macro_f1",
    "macro_auc",
    "build_protocol",
    "protocol_instances",
    "assign_grade",
    "generate_image",
    "build_dataset",
    "domain_spec",
    "train",
    "evaluate",
    "ablate",
    "run_grid",
]
