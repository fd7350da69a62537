"""Channel-gate dissection and dynamic sub-task inference for small
sequential ConvNets.

Pipeline: pre-train a base network, optimize per-image control gates
against the frozen network (dissection), average them into per-class
channel importance vectors, combine those into a binary run/skip mask for
a sub-task (reconstruction), then run only the unmasked channels with
exact cost accounting.
"""

from .analysis import (SimilarityMatrix, SubTaskResult, evaluate_subtask,
                       important_channel_set, layer_distribution, similarity_matrix)
from .data import Dataset, build_synthetic_digits, load_mnist
from .dissect import (CDRP, ChannelImportanceVector, DissectionResult, GateOptConfig,
                      aggregate_civ, dissect_dataset, gate_gradient, load_civs,
                      optimize_gates, save_civs, soft_target_loss)
from .errors import IntegrityError, ParseError
from .inference import (CostReport, cost_report, full_forward_macs, masked_forward,
                        masked_softmax)
from .layers import ShapeError, softmax
from .model import (GatedNetwork, LayerSpec, forward, forward_gated, load_model,
                    mnist5, save_model)
from .reconstruct import (CombinedCIV, combine, load_cciv, save_cciv,
                          sweep_threshold, union_combine, xor_combine)
from .train import TrainConfig, cross_entropy, train

__version__ = "0.1.0"
