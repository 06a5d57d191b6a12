"""Robust evolutionary filter pruning for small spiking CNNs."""
from .attack import AdvDataset, AttackConfig, generate_adv_dataset, pgd_attack, robust_accuracy
from .data import Dataset, load_idx, sample_subset, synth_blobs
from .evolution import (Archive, CcsrpConfig, EaConfig, Individual, bounded_bitwise_mutation,
                        ccsrp_run, ea_optimize_layer, evaluate_individual, init_subpopulation, rank)
from .pruning import FilterMask, FlopsReport, MaskedView, all_ones_mask, apply_mask, count_flops, materialize
from .snn import LayerSpec, LifConfig, Network, backward, forward, init_network, lif_step
from .training import TrainConfig, adv_finetune, cosine_lr, pretrain, sgd_step, trades_loss

__version__ = "0.1.0"

__all__ = [
    "AdvDataset", "AttackConfig", "generate_adv_dataset", "pgd_attack", "robust_accuracy",
    "Dataset", "load_idx", "sample_subset", "synth_blobs",
    "Archive", "CcsrpConfig", "EaConfig", "Individual", "bounded_bitwise_mutation", "ccsrp_run",
    "ea_optimize_layer", "evaluate_individual", "init_subpopulation", "rank",
    "FilterMask", "FlopsReport", "MaskedView", "all_ones_mask", "apply_mask", "count_flops",
    "materialize",
    "LayerSpec", "LifConfig", "Network", "backward", "forward", "init_network", "lif_step",
    "TrainConfig", "adv_finetune", "cosine_lr", "pretrain", "sgd_step", "trades_loss",
]
