from droidauto.explain.importance import ImportanceReport, permutation_importance
from droidauto.explain.shapley import Attribution, shapley_exact, shapley_sampled
from droidauto.explain.surrogate import LocalExplanation, local_surrogate
from droidauto.explain.tree_export import evaluate_tree_export, export_tree, parse_tree_export

__all__ = [
    "Attribution",
    "ImportanceReport",
    "LocalExplanation",
    "evaluate_tree_export",
    "export_tree",
    "local_surrogate",
    "parse_tree_export",
    "permutation_importance",
    "shapley_exact",
    "shapley_sampled",
]
